#pragma once

namespace semfield {

/// Keeps freed tensor buffers inside the process heap instead of returning
/// them to the OS, which avoids re-faulting large activations every step.
/// Call once from main().
void tune_allocator();

}  // namespace semfield
