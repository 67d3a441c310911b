#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace neuroaudit {

// Named float32 tensors in the archive layout:
//   [u64 LE header length N][N bytes JSON header][payload]
// The header maps name -> {"dtype":"F32","shape":[...],"data_offsets":[b,e]}
// with offsets relative to the start of the payload. A "__metadata__" entry
// is accepted and ignored.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

class TensorArchive {
 public:
  static TensorArchive read(const std::filesystem::path& path);
  static TensorArchive parse(std::span<const std::byte> bytes);

  void add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }

  // Tensors are laid out in name order so identical archives serialize to
  // identical bytes.
  std::vector<std::byte> serialize() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace neuroaudit
