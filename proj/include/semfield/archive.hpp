#pragma once

#include "semfield/diffmath/tensor.hpp"
#include "semfield/image_io.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace semfield {

/// Little-endian named-tensor file:
///
///   "FNRF" u32:version
///   u32:n_meta   { u16:len key  u32:len value }*
///   u32:n_tensor { u16:len name  u8:dtype  u8:rank  u64:dim* payload }*
///   u32:crc32 of everything before it
///
/// dtype 1 = f32, 2 = f64. Entries keep insertion order, so writing the same
/// archive twice gives the same bytes.
inline constexpr uint32_t kArchiveVersion = 1;

class ArchiveError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, checksum, malformed, missing_entry, io };
  ArchiveError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

using ArchiveTensor = std::variant<Tensor<float>, Tensor<double>>;

class TensorArchive {
 public:
  void set_meta(const std::string& key, std::string value);
  bool has_meta(const std::string& key) const;
  const std::string& meta(const std::string& key) const;

  void put(const std::string& name, Tensor<float> t);
  void put(const std::string& name, Tensor<double> t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<float>& f32(const std::string& name) const;
  const Tensor<double>& f64(const std::string& name) const;

  const std::vector<std::pair<std::string, std::string>>& metadata() const { return meta_; }
  const std::vector<std::pair<std::string, ArchiveTensor>>& tensors() const { return tensors_; }

  Bytes serialize() const;
  static TensorArchive deserialize(const Bytes& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  static TensorArchive parse_body(const uint8_t* data, size_t size);
  const ArchiveTensor& find(const std::string& name) const;
  void put_any(const std::string& name, ArchiveTensor t);

  std::vector<std::pair<std::string, std::string>> meta_;
  std::map<std::string, size_t> meta_index_;
  std::vector<std::pair<std::string, ArchiveTensor>> tensors_;
  std::map<std::string, size_t> index_;
};

}  // namespace semfield
