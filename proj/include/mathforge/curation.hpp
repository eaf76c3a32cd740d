#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mathforge/core/digest.hpp"
#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/core/parallel.hpp"
#include "mathforge/corpus.hpp"
#include "mathforge/influence.hpp"
#include "mathforge/teacher.hpp"
#include "mathforge/tokenizer.hpp"

namespace mathforge::curation {

using teacher::SynthPair;

// Text and identity of the two item kinds the filters accept.
inline std::string item_text(const SynthPair& p) { return p.problem + "\n" + p.solution; }
inline std::string item_text(const corpus::TextRecord& r) { return r.text; }
inline std::string item_id(const SynthPair& p) { return influence::pair_key(p); }
inline std::string item_id(const corpus::TextRecord& r) { return r.id; }

struct Drop {
  std::string id;
  std::string reason;

  friend bool operator==(const Drop&, const Drop&) = default;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t dropped_contaminated = 0;
  std::size_t dropped_duplicate = 0;
  std::size_t dropped_unexecutable = 0;
  std::vector<Drop> drops;

  std::size_t dropped() const { return dropped_contaminated + dropped_duplicate + dropped_unexecutable; }
  bool conserved() const { return input == kept + dropped() && drops.size() == dropped(); }
};

inline void to_json(json& j, const FilterReport& r) {
  json drops = json::array();
  for (const auto& d : r.drops) drops.push_back({{"id", d.id}, {"reason", d.reason}});
  j = json{{"input", r.input},
           {"kept", r.kept},
           {"dropped_contaminated", r.dropped_contaminated},
           {"dropped_duplicate", r.dropped_duplicate},
           {"dropped_unexecutable", r.dropped_unexecutable},
           {"drops", drops}};
}

// ---------------------------------------------------------------------------
// n-gram decontamination

class NGramIndex {
 public:
  explicit NGramIndex(std::size_t n, std::string source = {}) : n_(n), source_(std::move(source)) {
    if (n_ < 1) throw InvalidArgument("NGramIndex: n must be >= 1");
  }

  std::size_t n() const { return n_; }
  std::size_t size() const { return grams_.size(); }
  const std::string& source() const { return source_; }
  const std::string& tokenizer_version() const { return tokenizer_version_; }
  void set_tokenizer_version(std::string v) { tokenizer_version_ = std::move(v); }

  /// Digest of one window; tokens are length-prefixed so joins are unambiguous.
  static Digest128 gram_digest(const std::vector<std::string>& tokens, std::size_t start, std::size_t n) {
    Sha256 h;
    for (std::size_t i = start; i < start + n; ++i) h.update_field(tokens[i]);
    const auto full = h.finish();
    Digest128 d;
    std::memcpy(&d.hi, full.data(), 8);
    std::memcpy(&d.lo, full.data() + 8, 8);
    return d;
  }

  void add_text(std::string_view text) {
    const auto toks = tokenize(text);
    for (std::size_t i = 0; i + n_ <= toks.size(); ++i) grams_.insert(gram_digest(toks, i, n_));
  }

  /// True iff the text shares at least one n-token window with the index.
  bool overlaps(std::string_view text) const {
    if (grams_.empty()) return false;
    const auto toks = tokenize(text);
    for (std::size_t i = 0; i + n_ <= toks.size(); ++i) {
      if (grams_.contains(gram_digest(toks, i, n_))) return true;
    }
    return false;
  }

 private:
  std::size_t n_;
  std::string source_;
  std::string tokenizer_version_{kTokenizerVersion};
  std::unordered_set<Digest128, Digest128Hash> grams_;
};

inline NGramIndex build_ngram_index(const std::vector<std::string>& protected_texts, std::size_t n,
                                    std::string source = {}) {
  NGramIndex idx(n, std::move(source));
  for (const auto& t : protected_texts) idx.add_text(t);
  return idx;
}

/// Protected texts from line-delimited {"input", "output"} records; each
/// field is indexed as its own text.
inline std::vector<std::string> load_protected_texts(const fs::path& path) {
  std::vector<std::string> out;
  for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    bool any = false;
    for (const char* key : {"input", "output"}) {
      if (j.contains(key) && j[key].is_string()) {
        out.push_back(j[key].get<std::string>());
        any = true;
      }
    }
    if (!any) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected \"input\"/\"output\" fields");
  });
  return out;
}

template <class Item>
std::pair<std::vector<Item>, FilterReport> decontaminate(const std::vector<Item>& items, const NGramIndex& index,
                                                         std::size_t workers = default_workers()) {
  if (index.tokenizer_version() != kTokenizerVersion) {
    throw InvalidArgument("decontaminate: index built with tokenizer " + index.tokenizer_version() +
                          ", current is " + std::string(kTokenizerVersion));
  }
  std::vector<char> hit(items.size(), 0);
  parallel_for(items.size(), workers, [&](std::size_t i) { hit[i] = index.overlaps(item_text(items[i])) ? 1 : 0; });
  std::pair<std::vector<Item>, FilterReport> out;
  auto& [kept, report] = out;
  report.input = items.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (hit[i]) {
      ++report.dropped_contaminated;
      report.drops.push_back({item_id(items[i]), "contaminated: shares a " + std::to_string(index.n()) + "-gram with protected set"});
    } else {
      kept.push_back(items[i]);
    }
  }
  report.kept = kept.size();
  return out;
}

// ---------------------------------------------------------------------------
// Exact dedup

inline Digest128 content_digest(const SynthPair& p) {
  Sha256 h;
  h.update_field(corpus::normalize_text(p.problem)).update_field(corpus::normalize_text(p.solution));
  const auto full = h.finish();
  Digest128 d;
  std::memcpy(&d.hi, full.data(), 8);
  std::memcpy(&d.lo, full.data() + 8, 8);
  return d;
}

inline Digest128 content_digest(const corpus::TextRecord& r) { return Digest128::of(corpus::normalize_text(r.text)); }

/// First occurrence of each normalized content wins.
template <class Item>
std::pair<std::vector<Item>, FilterReport> dedup(const std::vector<Item>& items) {
  std::pair<std::vector<Item>, FilterReport> out;
  auto& [kept, report] = out;
  report.input = items.size();
  std::unordered_map<Digest128, std::string, Digest128Hash> seen;
  for (const auto& item : items) {
    auto [it, inserted] = seen.emplace(content_digest(item), item_id(item));
    if (inserted) {
      kept.push_back(item);
    } else {
      ++report.dropped_duplicate;
      report.drops.push_back({item_id(item), "duplicate of " + it->second});
    }
  }
  report.kept = kept.size();
  return out;
}

// ---------------------------------------------------------------------------
// Executability

struct ExecutorConfig {
  std::vector<std::string> command{"python3", "{file}"};  // "{file}" is replaced by the program path
  std::string file_name = "main.py";
  std::chrono::milliseconds timeout{10000};
  std::size_t memory_cap_bytes = std::size_t{1} << 30;
  std::size_t output_cap_bytes = 64 * 1024;
  bool strict = false;
  std::size_t workers = 4;
};

enum class ExecStatus { ok, nonzero_exit, timeout, killed };

inline std::string_view to_string(ExecStatus s) {
  switch (s) {
    case ExecStatus::ok: return "ok";
    case ExecStatus::nonzero_exit: return "nonzero exit";
    case ExecStatus::timeout: return "timeout";
    case ExecStatus::killed: return "killed by signal";
  }
  return "?";
}

struct ExecResult {
  ExecStatus status = ExecStatus::ok;
  int exit_code = 0;
  std::string stdout_text;
  bool truncated = false;
};

/// Collapses whitespace runs and trims, for output comparison.
inline std::string squeeze_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      pending = !out.empty();
    } else {
      if (pending) out.push_back(' ');
      pending = false;
      out.push_back(c);
    }
  }
  return out;
}

inline std::optional<fs::path> find_executable(const std::string& name) {
  if (name.find('/') != std::string::npos) {
    return ::access(name.c_str(), X_OK) == 0 ? std::optional<fs::path>(name) : std::nullopt;
  }
  const char* path = std::getenv("PATH");
  std::string_view dirs = path ? path : "/usr/bin:/bin";
  while (!dirs.empty()) {
    const auto colon = dirs.find(':');
    const fs::path candidate = fs::path(std::string(dirs.substr(0, colon))) / name;
    if (::access(candidate.c_str(), X_OK) == 0) return candidate;
    if (colon == std::string_view::npos) break;
    dirs.remove_prefix(colon + 1);
  }
  return std::nullopt;
}

/// Runs programs in fresh temporary directories with a wall-clock timeout,
/// an address-space cap, and a cap on captured output. Results are cached
/// by a digest of (command, program).
class Executor {
 public:
  explicit Executor(ExecutorConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.command.empty()) throw InvalidArgument("executor: empty command");
    if (!find_executable(cfg_.command.front())) {
      throw Error("executor: interpreter '" + cfg_.command.front() + "' not found");
    }
  }

  const ExecutorConfig& config() const { return cfg_; }

  ExecResult run(const std::string& code) {
    Sha256 h;
    for (const auto& part : cfg_.command) h.update_field(part);
    h.update_field(std::to_string(cfg_.timeout.count())).update_field(code);
    const std::string key = h.hex();
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    ExecResult r = run_uncached(code);
    std::lock_guard lock(mu_);
    cache_.emplace(key, r);
    return r;
  }

  std::size_t cache_size() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

 private:
  ExecResult run_uncached(const std::string& code) const {
    std::string tmpl = (fs::temp_directory_path() / "mathforge-exec-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw Error("executor: cannot create sandbox directory");
    const fs::path dir = tmpl;
    struct Cleanup {
      fs::path d;
      ~Cleanup() {
        std::error_code ec;
        fs::remove_all(d, ec);
      }
    } cleanup{dir};
    const fs::path program = dir / cfg_.file_name;
    {
      std::ofstream out(program, std::ios::binary);
      out << code;
      if (!out) throw Error("executor: cannot write program file");
    }
    std::vector<std::string> argv_s;
    for (const auto& part : cfg_.command) {
      std::string a = part;
      if (auto pos = a.find("{file}"); pos != std::string::npos) a.replace(pos, 6, program.string());
      argv_s.push_back(std::move(a));
    }
    // Resolve before fork: only async-signal-safe calls happen in the child.
    std::string exe = find_executable(argv_s.front()).value_or(fs::path(argv_s.front())).string();
    std::vector<char*> argv;
    for (auto& a : argv_s) argv.push_back(a.data());
    argv.push_back(nullptr);

    int pipefd[2];
    if (::pipe2(pipefd, O_CLOEXEC) != 0) throw Error("executor: pipe failed");
    const pid_t pid = ::fork();
    if (pid < 0) {
      ::close(pipefd[0]);
      ::close(pipefd[1]);
      throw Error("executor: fork failed");
    }
    if (pid == 0) {
      ::setpgid(0, 0);
      if (::chdir(dir.c_str()) != 0) ::_exit(126);
      const int devnull = ::open("/dev/null", O_RDONLY);
      if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
      ::dup2(pipefd[1], STDOUT_FILENO);
      const int errfd = ::open("/dev/null", O_WRONLY);
      if (errfd >= 0) ::dup2(errfd, STDERR_FILENO);
      struct rlimit lim;
      lim.rlim_cur = lim.rlim_max = cfg_.memory_cap_bytes;
      ::setrlimit(RLIMIT_AS, &lim);
      ::execv(exe.c_str(), argv.data());
      ::_exit(127);
    }
    ::setpgid(pid, pid);
    ::close(pipefd[1]);

    ExecResult r;
    const auto deadline = std::chrono::steady_clock::now() + cfg_.timeout;
    bool timed_out = false;
    char buf[4096];
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        timed_out = true;
        break;
      }
      pollfd pfd{pipefd[0], POLLIN, 0};
      const int pr = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1000)));
      if (pr < 0 && errno == EINTR) continue;
      if (pr == 0) continue;
      const ssize_t n = ::read(pipefd[0], buf, sizeof buf);
      if (n <= 0) break;  // EOF: child closed stdout
      const std::size_t room = cfg_.output_cap_bytes - std::min(cfg_.output_cap_bytes, r.stdout_text.size());
      r.stdout_text.append(buf, std::min<std::size_t>(room, static_cast<std::size_t>(n)));
      if (static_cast<std::size_t>(n) > room) r.truncated = true;
    }
    int status = 0;
    if (!timed_out) {
      // stdout closed; give the process the rest of the budget to exit.
      for (;;) {
        const pid_t w = ::waitpid(pid, &status, WNOHANG);
        if (w == pid) break;
        if (std::chrono::steady_clock::now() >= deadline) {
          timed_out = true;
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
      }
    }
    if (timed_out) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
    }
    ::close(pipefd[0]);
    if (timed_out) {
      r.status = ExecStatus::timeout;
    } else if (WIFEXITED(status)) {
      r.exit_code = WEXITSTATUS(status);
      r.status = r.exit_code == 0 ? ExecStatus::ok : ExecStatus::nonzero_exit;
      if (r.exit_code == 127) throw Error("executor: could not exec '" + argv_s.front() + "'");
    } else {
      r.status = ExecStatus::killed;
    }
    return r;
  }

  ExecutorConfig cfg_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, ExecResult> cache_;
};

/// Keeps TM pairs whose every program block exits 0 within the timeout
/// (strict mode: and prints its declared output).
inline std::pair<std::vector<SynthPair>, FilterReport> filter_executable(const std::vector<SynthPair>& pairs,
                                                                         Executor& executor) {
  std::vector<std::optional<std::string>> reason(pairs.size());
  const bool strict = executor.config().strict;
  parallel_for(pairs.size(), executor.config().workers, [&](std::size_t i) {
    const auto& p = pairs[i];
    if (p.program_blocks.empty()) {
      reason[i] = "no program block";
      return;
    }
    for (std::size_t b = 0; b < p.program_blocks.size(); ++b) {
      const auto& block = p.program_blocks[b];
      const ExecResult r = executor.run(block.code);
      if (r.status != ExecStatus::ok) {
        reason[i] = std::string(to_string(r.status));
        return;
      }
      if (strict) {
        if (!block.declared_output) {
          reason[i] = "missing declared output";
          return;
        }
        if (squeeze_whitespace(r.stdout_text) != squeeze_whitespace(*block.declared_output)) {
          reason[i] = "output mismatch";
          return;
        }
      }
    }
  });
  std::pair<std::vector<SynthPair>, FilterReport> out;
  auto& [kept, report] = out;
  report.input = pairs.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (reason[i]) {
      ++report.dropped_unexecutable;
      report.drops.push_back({item_id(pairs[i]), *reason[i]});
    } else {
      kept.push_back(pairs[i]);
    }
  }
  report.kept = kept.size();
  return out;
}

}  // namespace mathforge::curation
