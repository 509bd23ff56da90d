#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <fmt/format.h>
#include <unistd.h>

#ifndef SURGQA_SOURCE_DIR
#error "SURGQA_SOURCE_DIR must be defined by the build"
#endif

namespace test_support {

inline std::filesystem::path source_dir() { return SURGQA_SOURCE_DIR; }
inline std::filesystem::path fixture(const std::string& rel) {
  return source_dir() / "data" / "fixtures" / rel;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           fmt::format("surgqa-test-{}-{:x}", ::getpid(), static_cast<unsigned long>(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace test_support
