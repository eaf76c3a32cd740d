#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "mathforge/core/fs.hpp"
#include "mathforge/teacher.hpp"

namespace mftest {

namespace fs = std::filesystem;

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    std::string tmpl = (fs::temp_directory_path() / ("mathforge-" + tag + "-XXXXXX")).string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write(const fs::path& p, const std::string& contents) { mathforge::write_file_atomic(p, contents); }

inline mathforge::teacher::SynthPair pair(std::string problem, std::string solution, std::string id = "x",
                                          mathforge::prompts::Setting s =
                                              mathforge::prompts::Setting::natural_language_reasoning) {
  mathforge::teacher::SynthPair p;
  p.problem = std::move(problem);
  p.solution = std::move(solution);
  p.setting = s;
  p.template_id = "t";
  p.record_id = std::move(id);
  return p;
}

}  // namespace mftest
