#pragma once

#include "semfield/config.hpp"
#include "semfield/generator.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace semfield::testing {

/// Small enough that a render and backward pass take milliseconds.
inline GeneratorConfig tiny_generator() {
  GeneratorConfig g;
  g.k = 4;
  g.shape_dim = 8;
  g.texture_dim = 8;
  g.mapping_hidden = 16;
  g.trunk_layers = 2;
  g.trunk_width = 16;
  g.color_width = 16;
  g.grid_size = 4;
  g.grid_features = 4;
  return g;
}

inline Config tiny_config() {
  Config c;
  c.generator = tiny_generator();
  c.sampling.samples = 6;
  c.train.resolution = 8;
  c.train.batch = 2;
  c.train.iterations = 10;
  c.train.seed = 5;
  c.dataset.k = c.generator.k;
  c.dataset.n_scenes = 6;
  c.dataset.resolution = 32;
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("semfield_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace semfield::testing
