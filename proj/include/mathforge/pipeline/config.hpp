#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/corpus.hpp"
#include "mathforge/cost.hpp"
#include "mathforge/curation.hpp"
#include "mathforge/dataset.hpp"
#include "mathforge/influence.hpp"
#include "mathforge/teacher.hpp"

namespace mathforge::pipeline {

/// Every validation problem found in a config file, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& ps) {
    std::string out = "invalid config:";
    for (const auto& p : ps) out += "\n  - " + p;
    return out;
  }
  std::vector<std::string> problems_;
};

struct ExecSettings {
  std::vector<std::string> command{"python3", "{file}"};
  std::size_t timeout_ms = 10000;
  std::size_t memory_mb = 1024;
  bool strict = false;
  std::size_t workers = 4;
};

struct PipelineConfig {
  fs::path config_path;
  fs::path output_root;
  std::optional<fs::path> prompts;  // bundled library when unset
  std::map<corpus::Source, fs::path> corpus;
  double quality_min = 0.0;
  double quality_max = 1.0;
  fs::path probes_nlr;
  fs::path probes_tm;
  std::vector<fs::path> tests;

  teacher::EndpointProfile kd_teacher;
  teacher::EndpointProfile synthesizer;

  std::uint64_t seed_sample = 1;
  std::uint64_t seed_assign = 2;
  std::uint64_t seed_train = 3;
  std::uint64_t seed_projection = 4;
  std::uint64_t seed_mix = 5;

  std::size_t kd_size_nlr = 4000;
  std::size_t kd_size_tm = 1300;
  std::size_t candidate_pool = 100000;  // per setting
  std::size_t reference_subset = 5000;  // per setting
  std::size_t k = 2000;                 // per setting
  std::size_t d_out = 4096;
  bool normalize_before_mean = false;
  influence::TrainConfig train;

  std::size_t concurrency = 8;
  double max_failure_rate = 0.05;
  std::size_t boost_rounds = 1;

  std::size_t ngram_n = 10;
  ExecSettings exec;

  dataset::MixRatio ratio{2, 1};
  std::size_t max_len = 2048;

  std::string synth_hours = "0";
  std::string train_hours = "0";
  std::optional<fs::path> price_sheet;

  curation::ExecutorConfig executor_config() const {
    curation::ExecutorConfig c;
    c.command = exec.command;
    c.timeout = std::chrono::milliseconds(exec.timeout_ms);
    c.memory_cap_bytes = exec.memory_mb * 1024 * 1024;
    c.strict = exec.strict;
    c.workers = exec.workers;
    return c;
  }
};

namespace detail {

using boost::property_tree::ptree;

/// Reads typed values out of one section and records every problem.
class Reader {
 public:
  Reader(const ptree& root, fs::path base, std::vector<std::string>& problems)
      : root_(root), base_(std::move(base)), problems_(problems) {}

  const ptree* section(const std::string& name) {
    seen_sections_.insert(name);
    auto it = root_.find(name);
    return it == root_.not_found() ? nullptr : &it->second;
  }

  std::optional<std::string> raw(const std::string& sec, const std::string& key) {
    seen_keys_.insert(sec + "." + key);
    const ptree* s = section(sec);
    if (!s) return std::nullopt;
    auto it = s->find(key);
    if (it == s->not_found()) return std::nullopt;
    return it->second.data();
  }

  template <class T>
  void number(const std::string& sec, const std::string& key, T& out, T lo, T hi) {
    auto v = raw(sec, key);
    if (!v) return;
    T parsed{};
    const char* first = v->data();
    const char* last = first + v->size();
    auto [ptr, ec] = std::from_chars(first, last, parsed);
    if (ec != std::errc() || ptr != last) {
      problems_.push_back(sec + "." + key + ": '" + *v + "' is not a number");
      return;
    }
    if (parsed < lo || parsed > hi) {
      problems_.push_back(sec + "." + key + ": " + *v + " is outside [" + fmt(lo) + ", " + fmt(hi) + "]");
      return;
    }
    out = parsed;
  }

  void boolean(const std::string& sec, const std::string& key, bool& out) {
    auto v = raw(sec, key);
    if (!v) return;
    if (*v == "true" || *v == "1" || *v == "yes") {
      out = true;
    } else if (*v == "false" || *v == "0" || *v == "no") {
      out = false;
    } else {
      problems_.push_back(sec + "." + key + ": '" + *v + "' is not a boolean");
    }
  }

  void text(const std::string& sec, const std::string& key, std::string& out) {
    if (auto v = raw(sec, key)) out = *v;
  }

  /// Resolves relative to the config file's directory; checks existence.
  std::optional<fs::path> path(const std::string& sec, const std::string& key, bool required, bool must_exist = true) {
    auto v = raw(sec, key);
    if (!v || v->empty()) {
      if (required) problems_.push_back(sec + "." + key + ": required path is missing");
      return std::nullopt;
    }
    return resolve(sec + "." + key, *v, must_exist);
  }

  std::optional<fs::path> resolve(const std::string& field, const std::string& v, bool must_exist) {
    fs::path p(v);
    if (p.is_relative()) p = base_ / p;
    p = p.lexically_normal();
    if (must_exist && !fs::exists(p)) {
      problems_.push_back(field + ": path does not exist: " + p.string());
      return std::nullopt;
    }
    return p;
  }

  /// Keys present in the file that nothing read.
  void report_unknown() {
    for (const auto& [sec, body] : root_) {
      if (!seen_sections_.contains(sec)) {
        problems_.push_back("unknown section [" + sec + "]");
        continue;
      }
      for (const auto& [key, v] : body) {
        if (!seen_keys_.contains(sec + "." + key)) problems_.push_back(sec + "." + key + ": unknown key");
      }
    }
  }

 private:
  template <class T>
  static std::string fmt(T v) {
    if constexpr (std::is_floating_point_v<T>) {
      std::ostringstream o;
      o << v;
      return o.str();
    } else {
      return std::to_string(v);
    }
  }

  const ptree& root_;
  fs::path base_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_sections_;
  std::set<std::string> seen_keys_;
};

inline std::vector<std::string> split_words(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, cur.find_last_not_of(" \t") - b + 1));
    cur.clear();
  };
  for (char c : s) {
    if (c == sep) {
      flush();
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

inline void read_profile(Reader& r, const std::string& sec, teacher::EndpointProfile& p,
                         std::vector<std::string>& problems) {
  p.id = sec;
  if (!r.section(sec)) {
    problems.push_back("[" + sec + "]: teacher profile section is missing");
    return;
  }
  std::string kind = "mock";
  r.text(sec, "kind", kind);
  if (kind == "mock") {
    p.kind = teacher::ProfileKind::mock;
  } else if (kind == "live") {
    p.kind = teacher::ProfileKind::live;
  } else {
    problems.push_back(sec + ".kind: expected 'mock' or 'live', got '" + kind + "'");
  }
  r.text(sec, "model", p.model);
  r.text(sec, "base_url", p.base_url);
  r.text(sec, "api_key_env", p.api_key_env);
  r.number(sec, "temperature", p.params.temperature, 0.0, 2.0);
  r.number(sec, "max_tokens", p.params.max_new_tokens, 1, 1 << 20);
  r.number(sec, "max_attempts", p.retry.max_attempts, 1, 100);
  long long timeout_s = p.timeout.count();
  r.number(sec, "timeout_s", timeout_s, 1LL, 3600LL);
  p.timeout = std::chrono::seconds(timeout_s);
  const bool mock = p.kind == teacher::ProfileKind::mock;
  if (auto dir = r.path(sec, "fixture_dir", mock)) p.fixture_dir = *dir;
  if (!mock) {
    if (p.base_url.empty()) problems.push_back(sec + ".base_url: required for a live profile");
    if (p.api_key_env.empty()) problems.push_back(sec + ".api_key_env: required for a live profile");
  }
}

}  // namespace detail

/// A standalone profile file: one INI section whose name is the profile id.
inline teacher::EndpointProfile load_profile(const fs::path& path) {
  boost::property_tree::ptree root;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({std::string("cannot parse ") + path.string() + ": " + e.what()});
  }
  if (root.size() != 1) throw ConfigError({path.string() + ": expected exactly one [profile] section"});
  std::vector<std::string> problems;
  detail::Reader r(root, fs::absolute(path).parent_path(), problems);
  teacher::EndpointProfile p;
  detail::read_profile(r, root.begin()->first, p, problems);
  r.report_unknown();
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return p;
}

/// Parses, resolves paths against the file's directory, applies defaults
/// and collects every violation. Throws ConfigError with the full list.
inline PipelineConfig validate_config(const fs::path& path) {
  boost::property_tree::ptree root;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({std::string("cannot parse ") + path.string() + ": " + e.what()});
  }
  std::vector<std::string> problems;
  PipelineConfig c;
  c.config_path = fs::absolute(path).lexically_normal();
  detail::Reader r(root, c.config_path.parent_path(), problems);

  if (auto out = r.path("run", "output_root", true, false)) c.output_root = *out;
  c.prompts = r.path("run", "prompts", false);
  if (auto p = r.path("run", "probes_nlr", true)) c.probes_nlr = *p;
  if (auto p = r.path("run", "probes_tm", true)) c.probes_tm = *p;
  if (auto tests = r.raw("run", "tests"); tests && !tests->empty()) {
    for (const auto& t : detail::split_words(*tests, ',')) {
      if (auto p = r.resolve("run.tests", t, true)) c.tests.push_back(*p);
    }
  } else {
    problems.push_back("run.tests: required path is missing");
  }

  for (corpus::Source s : corpus::kAllSources) {
    if (auto p = r.path("corpus", std::string(corpus::to_string(s)), false)) c.corpus[s] = *p;
  }
  if (!r.section("corpus")) {
    problems.push_back("[corpus]: section is missing");
  } else {
    bool any_named = false;
    for (corpus::Source s : corpus::kAllSources) any_named |= r.raw("corpus", std::string(corpus::to_string(s))).has_value();
    if (!any_named) problems.push_back("corpus: at least one source path (webpages, books, papers, qa, wikipedia) is required");
  }
  r.number("corpus", "quality_min", c.quality_min, 0.0, 1.0);
  r.number("corpus", "quality_max", c.quality_max, 0.0, 1.0);
  if (c.quality_min > c.quality_max) problems.push_back("corpus.quality_min exceeds corpus.quality_max");

  detail::read_profile(r, "kd_teacher", c.kd_teacher, problems);
  detail::read_profile(r, "synthesizer", c.synthesizer, problems);

  constexpr std::uint64_t kU64Max = std::numeric_limits<std::uint64_t>::max();
  r.number("seeds", "sample", c.seed_sample, std::uint64_t{0}, kU64Max);
  r.number("seeds", "assign", c.seed_assign, std::uint64_t{0}, kU64Max);
  r.number("seeds", "train", c.seed_train, std::uint64_t{0}, kU64Max);
  r.number("seeds", "projection", c.seed_projection, std::uint64_t{0}, kU64Max);
  r.number("seeds", "mix", c.seed_mix, std::uint64_t{0}, kU64Max);
  c.train.seed = c.seed_train;

  constexpr std::size_t kBig = std::size_t{1} << 40;
  r.number("kd", "size_nlr", c.kd_size_nlr, std::size_t{1}, kBig);
  r.number("kd", "size_tm", c.kd_size_tm, std::size_t{1}, kBig);

  r.number("selection", "candidate_pool", c.candidate_pool, std::size_t{1}, kBig);
  r.number("selection", "reference_subset", c.reference_subset, std::size_t{1}, kBig);
  r.number("selection", "k", c.k, std::size_t{1}, kBig);
  r.number("selection", "d_out", c.d_out, std::size_t{1}, std::size_t{1} << 20);
  r.boolean("selection", "normalize_before_mean", c.normalize_before_mean);
  r.number("selection", "rank", c.train.rank, std::size_t{1}, std::size_t{256});
  r.number("selection", "lr", c.train.lr, 1e-9, 1e3);
  r.number("selection", "epochs", c.train.epochs, std::size_t{0}, std::size_t{1000});
  r.number("selection", "batch_size", c.train.batch_size, std::size_t{1}, kBig);
  r.number("selection", "init_scale", c.train.init_scale, 0.0, 10.0);
  if (c.k > c.candidate_pool) problems.push_back("selection.k exceeds selection.candidate_pool");

  r.number("synthesis", "concurrency", c.concurrency, std::size_t{1}, std::size_t{1024});
  r.number("synthesis", "max_failure_rate", c.max_failure_rate, 0.0, 1.0);
  r.number("synthesis", "boost_rounds", c.boost_rounds, std::size_t{1}, std::size_t{1});

  r.number("filter", "ngram_n", c.ngram_n, std::size_t{1}, std::size_t{64});
  if (auto cmd = r.raw("filter", "exec_command")) {
    c.exec.command = detail::split_words(*cmd, ' ');
    if (c.exec.command.empty()) problems.push_back("filter.exec_command: empty command");
  }
  r.number("filter", "exec_timeout_ms", c.exec.timeout_ms, std::size_t{1}, std::size_t{3600000});
  r.number("filter", "exec_memory_mb", c.exec.memory_mb, std::size_t{16}, std::size_t{1} << 20);
  r.boolean("filter", "exec_strict", c.exec.strict);
  r.number("filter", "exec_workers", c.exec.workers, std::size_t{1}, std::size_t{256});

  if (auto ratio = r.raw("mix", "ratio")) {
    const auto parts = detail::split_words(*ratio, ':');
    long long a = 0, b = 0;
    bool ok = parts.size() == 2;
    if (ok) {
      auto [p1, e1] = std::from_chars(parts[0].data(), parts[0].data() + parts[0].size(), a);
      auto [p2, e2] = std::from_chars(parts[1].data(), parts[1].data() + parts[1].size(), b);
      ok = e1 == std::errc() && e2 == std::errc() && p1 == parts[0].data() + parts[0].size() &&
           p2 == parts[1].data() + parts[1].size();
    }
    if (!ok) {
      problems.push_back("mix.ratio: expected '<nlr>:<tm>', got '" + *ratio + "'");
    } else if (a <= 0 || b <= 0) {
      problems.push_back("mix.ratio: nonpositive component in '" + *ratio + "'");
    } else {
      c.ratio = {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
    }
  }
  r.number("pack", "max_len", c.max_len, std::size_t{1}, std::size_t{1} << 24);

  for (auto [key, field] : {std::pair{"synth_hours", &c.synth_hours}, std::pair{"train_hours", &c.train_hours}}) {
    if (auto v = r.raw("cost", key)) {
      try {
        if (cost::Decimal::parse(*v).negative()) throw InvalidArgument("negative");
        *field = *v;
      } catch (const InvalidArgument&) {
        problems.push_back(std::string("cost.") + key + ": '" + *v + "' is not a nonnegative decimal");
      }
    }
  }
  c.price_sheet = r.path("cost", "prices", false);

  r.report_unknown();
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

}  // namespace mathforge::pipeline
