#include "semfield/archive.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>

namespace semfield {
namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'N', 'R', 'F'};

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void raw(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  Bytes out;
};

class Reader {
 public:
  Reader(const uint8_t* data, size_t n) : p_(data), end_(data + n) {}
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void raw(void* dst, size_t n) {
    if (static_cast<size_t>(end_ - p_) < n) throw ArchiveError(ArchiveError::Kind::truncated, "archive truncated");
    std::memcpy(dst, p_, n);
    p_ += n;
  }
  std::string str(size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  bool done() const { return p_ == end_; }

 private:
  const uint8_t* p_;
  const uint8_t* end_;
};

template <typename S>
void write_tensor(Writer& w, const Tensor<S>& t, uint8_t dtype) {
  w.pod<uint8_t>(dtype);
  w.pod<uint8_t>(static_cast<uint8_t>(t.rank()));
  for (int64_t d : t.shape()) w.pod<uint64_t>(static_cast<uint64_t>(d));
  w.raw(t.data(), sizeof(S) * static_cast<size_t>(t.size()));
}

template <typename S>
Tensor<S> read_payload(Reader& r, const Shape& shape) {
  std::vector<S> values(static_cast<size_t>(numel(shape)));
  r.raw(values.data(), sizeof(S) * values.size());
  return Tensor<S>(shape, std::move(values));
}

}  // namespace

void TensorArchive::set_meta(const std::string& key, std::string value) {
  auto it = meta_index_.find(key);
  if (it != meta_index_.end()) {
    meta_[it->second].second = std::move(value);
    return;
  }
  meta_index_.emplace(key, meta_.size());
  meta_.emplace_back(key, std::move(value));
}

bool TensorArchive::has_meta(const std::string& key) const { return meta_index_.count(key) != 0; }

const std::string& TensorArchive::meta(const std::string& key) const {
  auto it = meta_index_.find(key);
  if (it == meta_index_.end()) throw ArchiveError(ArchiveError::Kind::missing_entry, "archive has no metadata '" + key + "'");
  return meta_[it->second].second;
}

void TensorArchive::put_any(const std::string& name, ArchiveTensor t) {
  if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
  auto it = index_.find(name);
  if (it != index_.end()) {
    tensors_[it->second].second = std::move(t);
    return;
  }
  index_.emplace(name, tensors_.size());
  tensors_.emplace_back(name, std::move(t));
}

void TensorArchive::put(const std::string& name, Tensor<float> t) { put_any(name, std::move(t)); }
void TensorArchive::put(const std::string& name, Tensor<double> t) { put_any(name, std::move(t)); }

const ArchiveTensor& TensorArchive::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArchiveError(ArchiveError::Kind::missing_entry, "archive has no tensor '" + name + "'");
  return tensors_[it->second].second;
}

const Tensor<float>& TensorArchive::f32(const std::string& name) const {
  const auto* t = std::get_if<Tensor<float>>(&find(name));
  if (!t) throw ArchiveError(ArchiveError::Kind::malformed, "tensor '" + name + "' is not f32");
  return *t;
}

const Tensor<double>& TensorArchive::f64(const std::string& name) const {
  const auto* t = std::get_if<Tensor<double>>(&find(name));
  if (!t) throw ArchiveError(ArchiveError::Kind::malformed, "tensor '" + name + "' is not f64");
  return *t;
}

Bytes TensorArchive::serialize() const {
  Writer w;
  w.raw(kMagic, 4);
  w.pod<uint32_t>(kArchiveVersion);
  w.pod<uint32_t>(static_cast<uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    w.pod<uint16_t>(static_cast<uint16_t>(k.size()));
    w.raw(k.data(), k.size());
    w.pod<uint32_t>(static_cast<uint32_t>(v.size()));
    w.raw(v.data(), v.size());
  }
  w.pod<uint32_t>(static_cast<uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    w.pod<uint16_t>(static_cast<uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    if (const auto* f = std::get_if<Tensor<float>>(&t)) write_tensor(w, *f, 1);
    else write_tensor(w, std::get<Tensor<double>>(t), 2);
  }
  const uint32_t crc = static_cast<uint32_t>(crc32(0L, w.out.data(), static_cast<uInt>(w.out.size())));
  w.pod<uint32_t>(crc);
  return std::move(w.out);
}

TensorArchive TensorArchive::deserialize(const Bytes& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ArchiveError(ArchiveError::Kind::bad_magic, "not an FNRF archive");
  }
  if (bytes.size() < 12) throw ArchiveError(ArchiveError::Kind::truncated, "archive truncated");
  Reader head(bytes.data() + 4, 4);
  const auto version = head.pod<uint32_t>();
  if (version != kArchiveVersion) {
    throw ArchiveError(ArchiveError::Kind::bad_version, "unsupported archive version " + std::to_string(version));
  }
  const size_t body = bytes.size() - 4;
  uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 4);
  const auto actual = static_cast<uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body)));
  const bool intact = stored == actual;
  // Structure is read before the checksum verdict so a short file reports
  // truncation rather than a bad checksum over whatever bytes remain.
  try {
    TensorArchive a = parse_body(bytes.data() + 8, body - 8);
    if (!intact) throw ArchiveError(ArchiveError::Kind::checksum, "archive checksum mismatch");
    return a;
  } catch (const ArchiveError& e) {
    if (intact || e.kind() == ArchiveError::Kind::truncated || e.kind() == ArchiveError::Kind::checksum) throw;
    throw ArchiveError(ArchiveError::Kind::checksum, "archive checksum mismatch");
  }
}

TensorArchive TensorArchive::parse_body(const uint8_t* data, size_t size) {
  Reader r(data, size);
  TensorArchive a;
  const auto n_meta = r.pod<uint32_t>();
  for (uint32_t i = 0; i < n_meta; ++i) {
    const auto klen = r.pod<uint16_t>();
    std::string k = r.str(klen);
    const auto vlen = r.pod<uint32_t>();
    a.set_meta(k, r.str(vlen));
  }
  const auto n_tensors = r.pod<uint32_t>();
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const auto nlen = r.pod<uint16_t>();
    std::string name = r.str(nlen);
    const auto dtype = r.pod<uint8_t>();
    const auto rank = r.pod<uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) {
      const auto v = r.pod<uint64_t>();
      if (v > (uint64_t(1) << 40)) throw ArchiveError(ArchiveError::Kind::malformed, "implausible dimension in '" + name + "'");
      d = static_cast<int64_t>(v);
    }
    if (dtype == 1) a.put(name, read_payload<float>(r, shape));
    else if (dtype == 2) a.put(name, read_payload<double>(r, shape));
    else throw ArchiveError(ArchiveError::Kind::malformed, "unknown dtype " + std::to_string(dtype) + " for '" + name + "'");
  }
  if (!r.done()) throw ArchiveError(ArchiveError::Kind::malformed, "trailing bytes before checksum");
  return a;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  try {
    write_file_atomic(path, serialize());
  } catch (const IoError& e) {
    throw ArchiveError(ArchiveError::Kind::io, e.what());
  }
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  Bytes bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw ArchiveError(ArchiveError::Kind::io, e.what());
  }
  return deserialize(bytes);
}

}  // namespace semfield
