#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "mathforge/core/digest.hpp"
#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/corpus.hpp"
#include "mathforge/prompts.hpp"
#include "mathforge/tokenizer.hpp"

namespace mathforge::teacher {

using prompts::Setting;

// ---------------------------------------------------------------------------
// Parsed output types

struct ProgramBlock {
  std::string code;
  std::optional<std::string> declared_output;

  friend bool operator==(const ProgramBlock&, const ProgramBlock&) = default;
};

/// One synthetic problem-solution pair with its provenance.
struct SynthPair {
  std::string problem;
  std::string solution;
  Setting setting = Setting::natural_language_reasoning;
  std::string template_id;
  std::string record_id;
  std::string teacher_profile;
  std::vector<ProgramBlock> program_blocks;  // TM only

  friend bool operator==(const SynthPair&, const SynthPair&) = default;
};

inline void to_json(json& j, const ProgramBlock& b) {
  j = json{{"code", b.code}};
  if (b.declared_output) j["declared_output"] = *b.declared_output;
}

inline void from_json(const json& j, ProgramBlock& b) {
  b.code = j.at("code").get<std::string>();
  b.declared_output.reset();
  if (j.contains("declared_output")) b.declared_output = j.at("declared_output").get<std::string>();
}

inline void to_json(json& j, const SynthPair& p) {
  j = json{{"problem", p.problem},
           {"solution", p.solution},
           {"setting", prompts::short_name(p.setting)},
           {"template_id", p.template_id},
           {"record_id", p.record_id},
           {"teacher_profile", p.teacher_profile}};
  if (p.setting == Setting::tool_manipulation) j["program_blocks"] = p.program_blocks;
}

inline void from_json(const json& j, SynthPair& p) {
  p.problem = j.at("problem").get<std::string>();
  p.solution = j.at("solution").get<std::string>();
  p.setting = prompts::parse_setting(j.at("setting").get<std::string>());
  p.template_id = j.value("template_id", "");
  p.record_id = j.value("record_id", "");
  p.teacher_profile = j.value("teacher_profile", "");
  p.program_blocks.clear();
  if (j.contains("program_blocks")) p.program_blocks = j.at("program_blocks").get<std::vector<ProgramBlock>>();
}

enum class ParseErrorKind {
  missing_problem,
  missing_solution,
  empty_problem,
  empty_solution,
  no_code_block,
  malformed_block,
};

inline std::string_view to_string(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::missing_problem: return "missing problem section";
    case ParseErrorKind::missing_solution: return "missing solution section";
    case ParseErrorKind::empty_problem: return "empty problem section";
    case ParseErrorKind::empty_solution: return "empty solution section";
    case ParseErrorKind::no_code_block: return "no code block";
    case ParseErrorKind::malformed_block: return "malformed block";
  }
  return "?";
}

struct ParseError {
  ParseErrorKind kind;
  std::string detail;

  std::string message() const {
    return detail.empty() ? std::string(to_string(kind)) : std::string(to_string(kind)) + ": " + detail;
  }
};

/// Either a parsed value or a classified parse error.
template <class T>
class Parsed {
 public:
  Parsed(T value) : v_(std::move(value)) {}
  Parsed(ParseError err) : v_(std::move(err)) {}

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }
  const T& value() const { return std::get<T>(v_); }
  T& value() { return std::get<T>(v_); }
  const ParseError& error() const { return std::get<ParseError>(v_); }

 private:
  std::variant<T, ParseError> v_;
};

// ---------------------------------------------------------------------------
// Marker scanning
//
// Accepted section headers (case-insensitive keywords, first pair wins):
//   [Problem] [Problem Description] [Question]  /  [Solution] [Answer]
//   line-start "Question:" / "Problem:" / "Answer:" / "Solution:"
//   line-start "## Problem", "**Problem:**", "**Problem**:", "\texttt{Question:}"
// Closing tags [/Problem], [/Problem Description], [/Question], [/Solution],
// [/Answer] end a section early.

namespace detail {

enum class MarkerRole { problem, solution, problem_close, solution_close };

struct Marker {
  MarkerRole role;
  std::size_t begin;
  std::size_t end;
};

inline char lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

inline bool match_ci(std::string_view text, std::size_t pos, std::string_view word) {
  if (pos + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (lower(text[pos + i]) != lower(word[i])) return false;
  }
  return true;
}

inline bool is_alnum(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

struct Keyword {
  std::string_view word;
  MarkerRole role;
};

// Longest first so "Problem Description" wins over "Problem".
inline constexpr Keyword kKeywords[] = {
    {"problem description", MarkerRole::problem},
    {"problem", MarkerRole::problem},
    {"question", MarkerRole::problem},
    {"solution", MarkerRole::solution},
    {"answer", MarkerRole::solution},
};

/// Bracketed tag at pos: "[kw]" or "[/kw]".
inline std::optional<Marker> bracket_marker(std::string_view t, std::size_t pos) {
  if (t[pos] != '[') return std::nullopt;
  std::size_t p = pos + 1;
  const bool closing = p < t.size() && t[p] == '/';
  if (closing) ++p;
  for (const auto& kw : kKeywords) {
    if (match_ci(t, p, kw.word) && p + kw.word.size() < t.size() && t[p + kw.word.size()] == ']') {
      MarkerRole role = kw.role;
      if (closing) role = role == MarkerRole::problem ? MarkerRole::problem_close : MarkerRole::solution_close;
      return Marker{role, pos, p + kw.word.size() + 1};
    }
  }
  return std::nullopt;
}

/// Header forms; pos must be the first non-blank character of a line.
inline std::optional<Marker> header_marker(std::string_view t, std::size_t pos) {
  std::size_t p = pos;
  enum class Prefix { none, hashes, bold, texttt } prefix = Prefix::none;
  if (t[p] == '#') {
    std::size_t h = 0;
    while (p < t.size() && t[p] == '#') ++p, ++h;
    if (h < 2 || h > 6) return std::nullopt;
    while (p < t.size() && (t[p] == ' ' || t[p] == '\t')) ++p;
    prefix = Prefix::hashes;
  } else if (match_ci(t, p, "**")) {
    p += 2;
    prefix = Prefix::bold;
  } else if (match_ci(t, p, "\\texttt{")) {
    p += 8;
    prefix = Prefix::texttt;
  }
  for (const auto& kw : kKeywords) {
    if (!match_ci(t, p, kw.word)) continue;
    std::size_t q = p + kw.word.size();
    if (q < t.size() && is_alnum(t[q])) continue;  // "Problems", "Answering"
    bool colon = false;
    if (q < t.size() && t[q] == ':') ++q, colon = true;
    switch (prefix) {
      case Prefix::none:
        if (!colon) return std::nullopt;
        break;
      case Prefix::hashes: {
        // Rest of the heading line must be blank.
        std::size_t r = q;
        while (r < t.size() && (t[r] == ' ' || t[r] == '\t' || t[r] == '\r')) ++r;
        if (r < t.size() && t[r] != '\n') return std::nullopt;
        break;
      }
      case Prefix::bold:
        if (!match_ci(t, q, "**")) return std::nullopt;
        q += 2;
        if (q < t.size() && t[q] == ':') ++q;
        break;
      case Prefix::texttt:
        if (q >= t.size() || t[q] != '}') return std::nullopt;
        ++q;
        break;
    }
    return Marker{kw.role, pos, q};
  }
  return std::nullopt;
}

inline std::vector<Marker> scan_markers(std::string_view t) {
  std::vector<Marker> out;
  bool line_start = true;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const char c = t[i];
    if (c == '\n') {
      line_start = true;
      continue;
    }
    if (line_start && (c == ' ' || c == '\t')) continue;
    if (auto m = bracket_marker(t, i)) {
      out.push_back(*m);
      i = m->end - 1;
      line_start = false;
      continue;
    }
    if (line_start) {
      line_start = false;
      if (auto m = header_marker(t, i)) {
        out.push_back(*m);
        i = m->end - 1;
      }
    }
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(a, b - a + 1));
}

}  // namespace detail

struct ProblemSolution {
  std::string problem;
  std::string solution;
};

/// Extracts the first problem/solution section pair.
inline Parsed<ProblemSolution> parse_sections(std::string_view text) {
  using detail::MarkerRole;
  const auto markers = detail::scan_markers(text);
  auto next = [&](std::size_t from_idx, auto pred) -> std::optional<std::size_t> {
    for (std::size_t i = from_idx; i < markers.size(); ++i) {
      if (pred(markers[i].role)) return i;
    }
    return std::nullopt;
  };
  const auto p = next(0, [](MarkerRole r) { return r == MarkerRole::problem; });
  if (!p) return ParseError{ParseErrorKind::missing_problem, {}};
  const auto s = next(*p + 1, [](MarkerRole r) { return r == MarkerRole::solution; });
  if (!s) return ParseError{ParseErrorKind::missing_solution, {}};

  std::size_t problem_end = markers[*s].begin;
  if (auto close = next(*p + 1, [](MarkerRole r) { return r == MarkerRole::problem_close; });
      close && *close < *s) {
    problem_end = markers[*close].begin;
  }
  std::size_t solution_end = text.size();
  if (auto stop = next(*s + 1, [](MarkerRole r) { return r != MarkerRole::solution; })) {
    solution_end = markers[*stop].begin;
  }
  const std::size_t pb = markers[*p].end;
  const std::size_t sb = markers[*s].end;
  ProblemSolution out{detail::trim(text.substr(pb, problem_end - pb)), detail::trim(text.substr(sb, solution_end - sb))};
  if (out.problem.empty()) return ParseError{ParseErrorKind::empty_problem, {}};
  if (out.solution.empty()) return ParseError{ParseErrorKind::empty_solution, {}};
  return out;
}

inline Parsed<ProblemSolution> parse_nl_output(std::string_view text) { return parse_sections(text); }

namespace detail {

/// Strips LaTeX "\\" line-break residue left at line ends by typeset sources.
inline std::string strip_latex_breaks(std::string_view s) {
  std::string out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto nl = s.find('\n', start);
    std::string_view line = s.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    auto end = line.find_last_not_of(" \t\r");
    line = end == std::string_view::npos ? std::string_view{} : line.substr(0, end + 1);
    if (line.size() >= 2 && line.substr(line.size() - 2) == "\\\\") line.remove_suffix(2);
    out += line;
    if (nl == std::string_view::npos) break;
    out += '\n';
    start = nl + 1;
  }
  return trim(out);
}

inline bool is_fence_close(std::string_view trimmed_line) {
  if (trimmed_line.substr(0, 3) != "```") return false;
  for (char c : trimmed_line.substr(3)) {
    if (is_alnum(c)) return false;
  }
  return true;
}

}  // namespace detail

/// Collects ``` fenced blocks and lstlisting environments; a fence labelled
/// "output" becomes the declared output of the preceding code block.
inline Parsed<std::vector<ProgramBlock>> extract_program_blocks(std::string_view solution) {
  std::vector<ProgramBlock> blocks;
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start <= solution.size();) {
    auto nl = solution.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(solution.substr(start));
      break;
    }
    lines.push_back(solution.substr(start, nl - start));
    start = nl + 1;
  }
  auto ltrim = [](std::string_view l) {
    auto a = l.find_first_not_of(" \t");
    return a == std::string_view::npos ? std::string_view{} : l.substr(a);
  };
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = ltrim(lines[i]);
    const bool fence = line.substr(0, 3) == "```";
    const bool listing = line.substr(0, 18) == "\\begin{lstlisting}";
    if (!fence && !listing) continue;
    std::string label;
    if (fence) label = detail::trim(line.substr(3));
    const bool is_output = fence && label.size() >= 6 && detail::match_ci(label, 0, "output");
    std::string body;
    std::size_t j = i + 1;
    bool closed = false;
    for (; j < lines.size(); ++j) {
      const std::string_view l = ltrim(lines[j]);
      if ((fence && detail::is_fence_close(l)) || (listing && l.substr(0, 16) == "\\end{lstlisting}")) {
        closed = true;
        break;
      }
      body += lines[j];
      body += '\n';
    }
    if (!closed) {
      return ParseError{ParseErrorKind::malformed_block, "unterminated block opened at solution line " + std::to_string(i + 1)};
    }
    if (is_output) {
      if (!blocks.empty() && !blocks.back().declared_output) blocks.back().declared_output = detail::strip_latex_breaks(body);
    } else {
      if (!body.empty() && body.back() == '\n') body.pop_back();
      blocks.push_back(ProgramBlock{std::move(body), std::nullopt});
    }
    i = j;
  }
  return blocks;
}

/// Tool-manipulation output: problem/solution sections plus program blocks.
inline Parsed<SynthPair> parse_tool_output(std::string_view text) {
  auto sections = parse_sections(text);
  if (!sections) return sections.error();
  auto blocks = extract_program_blocks(sections.value().solution);
  if (!blocks) return blocks.error();
  if (blocks.value().empty()) return ParseError{ParseErrorKind::no_code_block, {}};
  SynthPair pair;
  pair.setting = Setting::tool_manipulation;
  pair.problem = std::move(sections.value().problem);
  pair.solution = std::move(sections.value().solution);
  pair.program_blocks = std::move(blocks.value());
  return pair;
}

/// Canonical marker serialization; the parsers invert it exactly for
/// trimmed, marker-free problem and solution text.
inline std::string to_marker_text(const SynthPair& pair) {
  if (pair.setting == Setting::tool_manipulation) {
    return "[Problem Description]\n" + pair.problem + "\n[/Problem Description]\n\n[Solution]\n" + pair.solution +
           "\n[/Solution]\n";
  }
  return "[Problem]\n" + pair.problem + "\n\n[Solution]\n" + pair.solution + "\n";
}

// ---------------------------------------------------------------------------
// Endpoint client

struct GenerationParams {
  double temperature = 0.7;
  int max_new_tokens = 1024;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};

  std::chrono::milliseconds backoff_before(int attempt) const {  // attempt >= 2
    double ms = static_cast<double>(initial_backoff.count());
    for (int i = 2; i < attempt; ++i) ms *= multiplier;
    return std::chrono::milliseconds(static_cast<long long>(std::min(ms, static_cast<double>(max_backoff.count()))));
  }
};

enum class ProfileKind { mock, live };

struct EndpointProfile {
  std::string id;
  ProfileKind kind = ProfileKind::mock;
  std::string model = "mock-teacher";
  std::string base_url;              // live: e.g. https://api.openai.com/v1
  std::string api_key_env;           // live: name of the credential variable
  fs::path fixture_dir;              // mock: directory of <request-hash>.txt
  GenerationParams params;
  RetryPolicy retry;
  std::chrono::seconds timeout{120};
};

struct CompletionRequest {
  std::string body;  // rendered prompt
  GenerationParams params;
  std::string profile_id;
  std::string request_id;
};

/// Wire body in the common chat-completion shape.
inline json wire_body(const CompletionRequest& req, const EndpointProfile& profile) {
  return json{{"model", profile.model},
              {"messages", json::array({json{{"role", "user"}, {"content", req.body}}})},
              {"temperature", req.params.temperature},
              {"max_tokens", req.params.max_new_tokens}};
}

/// Hash identifying a request's content; names mock fixture files.
inline std::string request_hash(const CompletionRequest& req, const EndpointProfile& profile) {
  return sha256_hex(wire_body(req, profile).dump());
}

struct TokenUsage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct Completion {
  std::string text;
  int attempts = 1;
  std::vector<std::string> attempt_log;
  std::optional<TokenUsage> usage;  // only when the endpoint reports it
};

enum class TeacherErrorKind { fixture_missing, retries_exhausted, authentication, schema_mismatch, configuration };

class TeacherError : public Error {
 public:
  TeacherError(TeacherErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  TeacherErrorKind kind() const { return kind_; }

 private:
  TeacherErrorKind kind_;
};

struct HttpRequest {
  std::string base_url;
  std::string path;
  std::map<std::string, std::string> headers;
  std::string body;
};

struct HttpResponse {
  int status = 0;  // 0 means the transport itself failed
  std::string body;
  std::string error;
};

using Transport = std::function<HttpResponse(const HttpRequest&)>;
using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline bool is_transient(const HttpResponse& r) {
  return r.status == 0 || r.status == 408 || r.status == 409 || r.status == 429 || r.status >= 500;
}

/// Talks to one endpoint profile. Safe for concurrent use: all retry state
/// lives on the stack of complete().
class ChatClient {
 public:
  explicit ChatClient(EndpointProfile profile, Transport transport = {}, Sleeper sleeper = {})
      : profile_(std::move(profile)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

  const EndpointProfile& profile() const { return profile_; }

  CompletionRequest make_request(const prompts::RenderedPrompt& prompt) const {
    return CompletionRequest{prompt.body, profile_.params, profile_.id,
                             profile_.id + ":" + prompt.template_id + ":" + prompt.record_id};
  }

  Completion complete(const CompletionRequest& req) const {
    if (profile_.kind == ProfileKind::mock) return replay(req);
    return call_live(req);
  }

 private:
  Completion replay(const CompletionRequest& req) const {
    const std::string hash = request_hash(req, profile_);
    const fs::path path = profile_.fixture_dir / (hash + ".txt");
    if (!fs::exists(path)) {
      throw TeacherError(TeacherErrorKind::fixture_missing, "no mock fixture for request hash " + hash);
    }
    Completion c;
    c.text = read_file(path);
    c.attempt_log.push_back("attempt 1: replayed fixture " + hash);
    return c;
  }

  Completion call_live(const CompletionRequest& req) const {
    if (!transport_) throw TeacherError(TeacherErrorKind::configuration, "live profile '" + profile_.id + "' has no transport");
    const char* key = profile_.api_key_env.empty() ? nullptr : std::getenv(profile_.api_key_env.c_str());
    if (!key || !*key) {
      throw TeacherError(TeacherErrorKind::authentication,
                         "credential variable '" + profile_.api_key_env + "' is not set");
    }
    HttpRequest http{profile_.base_url, "/chat/completions",
                     {{"Authorization", std::string("Bearer ") + key}, {"Content-Type", "application/json"}},
                     wire_body(req, profile_).dump()};
    Completion c;
    const int max_attempts = std::max(1, profile_.retry.max_attempts);
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      if (attempt > 1) sleeper_(profile_.retry.backoff_before(attempt));
      c.attempts = attempt;
      const HttpResponse resp = transport_(http);
      if (resp.status == 200) {
        c.attempt_log.push_back("attempt " + std::to_string(attempt) + ": ok");
        parse_response(resp.body, c);
        return c;
      }
      const std::string what = resp.status == 0 ? "transport error: " + resp.error : "HTTP " + std::to_string(resp.status);
      c.attempt_log.push_back("attempt " + std::to_string(attempt) + ": " + what);
      if (resp.status == 401 || resp.status == 403) {
        throw TeacherError(TeacherErrorKind::authentication, req.request_id + ": " + what);
      }
      if (!is_transient(resp)) {
        throw TeacherError(TeacherErrorKind::schema_mismatch, req.request_id + ": unexpected " + what);
      }
    }
    throw TeacherError(TeacherErrorKind::retries_exhausted,
                       req.request_id + ": gave up after " + std::to_string(max_attempts) + " attempts");
  }

  void parse_response(const std::string& body, Completion& c) const {
    try {
      const json j = json::parse(body);
      c.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      if (j.contains("usage") && j["usage"].is_object()) {
        c.usage = TokenUsage{j["usage"].value("prompt_tokens", std::size_t{0}),
                             j["usage"].value("completion_tokens", std::size_t{0})};
      }
    } catch (const json::exception& e) {
      throw TeacherError(TeacherErrorKind::schema_mismatch, std::string("completion response: ") + e.what());
    }
  }

  EndpointProfile profile_;
  Transport transport_;
  Sleeper sleeper_;
};

// ---------------------------------------------------------------------------
// Batch synthesis

struct Failure {
  std::string request_id;
  std::string template_id;
  std::string record_id;
  std::string reason;

  friend bool operator==(const Failure&, const Failure&) = default;
};

inline void to_json(json& j, const Failure& f) {
  j = json{{"request_id", f.request_id}, {"template_id", f.template_id}, {"record_id", f.record_id}, {"reason", f.reason}};
}

inline void from_json(const json& j, Failure& f) {
  f.request_id = j.at("request_id").get<std::string>();
  f.template_id = j.at("template_id").get<std::string>();
  f.record_id = j.at("record_id").get<std::string>();
  f.reason = j.at("reason").get<std::string>();
}

struct BatchUsage {
  std::size_t calls = 0;
  std::size_t prompt_tokens = 0;      // pipeline tokenizer counts
  std::size_t completion_tokens = 0;
};

struct BatchResult {
  std::vector<SynthPair> pairs;  // input order, failures omitted
  std::vector<Failure> failures;
  BatchUsage usage;
};

class BatchAborted : public Error {
 public:
  BatchAborted(const std::string& what, BatchResult partial) : Error(what), report_(std::move(partial)) {}
  const BatchResult& report() const { return report_; }

 private:
  BatchResult report_;
};

/// Parses one completion according to its setting.
inline Parsed<SynthPair> parse_completion(std::string_view text, Setting setting) {
  if (setting == Setting::tool_manipulation) return parse_tool_output(text);
  auto ps = parse_nl_output(text);
  if (!ps) return ps.error();
  SynthPair p;
  p.setting = setting;
  p.problem = std::move(ps.value().problem);
  p.solution = std::move(ps.value().solution);
  return p;
}

/// Runs every (template, record) input through the client with at most
/// `concurrency` requests in flight. Aborts when the failure fraction
/// exceeds `max_failure_rate`.
inline BatchResult synthesize_batch(const std::vector<std::pair<prompts::PromptTemplate, corpus::TextRecord>>& inputs,
                                    const ChatClient& client, std::size_t concurrency,
                                    double max_failure_rate = 0.05) {
  struct Slot {
    std::optional<SynthPair> pair;
    std::optional<Failure> failure;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
  };
  std::vector<Slot> slots(inputs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < inputs.size(); i = next++) {
      const auto& [tmpl, record] = inputs[i];
      const auto rendered = prompts::render(tmpl, record);
      const auto req = client.make_request(rendered);
      Slot& slot = slots[i];
      slot.prompt_tokens = count_tokens(rendered.body);
      try {
        const Completion c = client.complete(req);
        slot.completion_tokens = count_tokens(c.text);
        auto parsed = parse_completion(c.text, tmpl.setting);
        if (!parsed) {
          slot.failure = Failure{req.request_id, tmpl.id, record.id, parsed.error().message()};
          continue;
        }
        SynthPair p = std::move(parsed.value());
        p.template_id = tmpl.id;
        p.record_id = record.id;
        p.teacher_profile = client.profile().id;
        slot.pair = std::move(p);
      } catch (const TeacherError& e) {
        slot.failure = Failure{req.request_id, tmpl.id, record.id, e.what()};
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(concurrency, inputs.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  BatchResult out;
  for (auto& s : slots) {
    ++out.usage.calls;
    out.usage.prompt_tokens += s.prompt_tokens;
    out.usage.completion_tokens += s.completion_tokens;
    if (s.pair) out.pairs.push_back(std::move(*s.pair));
    if (s.failure) out.failures.push_back(std::move(*s.failure));
  }
  if (!inputs.empty()) {
    const double rate = static_cast<double>(out.failures.size()) / static_cast<double>(inputs.size());
    if (rate > max_failure_rate) {
      throw BatchAborted(std::to_string(out.failures.size()) + " of " + std::to_string(inputs.size()) +
                             " requests failed, above the allowed rate",
                         std::move(out));
    }
  }
  return out;
}

}  // namespace mathforge::teacher
