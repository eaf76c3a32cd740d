#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "mathforge/core/error.hpp"

namespace mathforge {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {
inline fs::path unique_sibling(const fs::path& target, std::string_view tag) {
  static std::atomic<unsigned> counter{0};
  return target.parent_path() / ("." + target.filename().string() + "." + std::string(tag) + "." +
                                 std::to_string(::getpid()) + "." + std::to_string(counter++));
}
}  // namespace detail

/// Writes via a hidden temp file and rename(2); readers never observe a
/// partially written target.
inline void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = detail::unique_sibling(path, "tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("short write to " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

/// A directory populated off to the side and published in one rename.
/// Destroying an uncommitted StagingDir removes it.
class StagingDir {
 public:
  explicit StagingDir(fs::path target)
      : target_(std::move(target)), staging_(detail::unique_sibling(target_, "staging")) {
    fs::create_directories(staging_);
  }
  StagingDir(const StagingDir&) = delete;
  StagingDir& operator=(const StagingDir&) = delete;
  ~StagingDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& path() const { return staging_; }
  fs::path operator/(const std::string& name) const { return staging_ / name; }

  void commit() {
    std::error_code ec;
    fs::path old;
    if (fs::exists(target_)) {
      old = detail::unique_sibling(target_, "old");
      fs::rename(target_, old);
    }
    fs::rename(staging_, target_);
    committed_ = true;
    if (!old.empty()) fs::remove_all(old, ec);
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

}  // namespace mathforge
