#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "json.hpp"
#include "neuroaudit/model.hpp"
#include "neuroaudit/toy_bundle.hpp"

namespace testing_support {

inline std::filesystem::path fixtures() { return NEUROAUDIT_FIXTURES; }
inline std::filesystem::path toy_dir() { return fixtures() / "toy"; }
inline std::filesystem::path reference_dir() { return fixtures() / "reference"; }

inline neuroaudit::Model load_dir(const std::filesystem::path& dir) {
  return neuroaudit::load_model(dir / "model.bin", neuroaudit::ModelConfig::load(dir / "config.json"),
                                dir / "vocab.json", dir / "merges.txt");
}

// The committed toy bundle, loaded once per process.
inline const neuroaudit::Model& toy_model() {
  static const neuroaudit::Model model = load_dir(toy_dir());
  return model;
}

// Tiny GPT-2 exported from Hugging Face; shares the toy vocabulary.
inline const neuroaudit::Model& reference_model() {
  static const neuroaudit::Model model = neuroaudit::load_model(
      reference_dir() / "model.bin", neuroaudit::ModelConfig::load(reference_dir() / "config.json"),
      toy_dir() / "vocab.json", toy_dir() / "merges.txt");
  return model;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline nlohmann::json planted() { return read_json(toy_dir() / "mediators.json"); }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Fresh directory under the build tree's temp area, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("neuroaudit-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
