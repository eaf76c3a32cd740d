#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/core/random.hpp"
#include "mathforge/corpus.hpp"

namespace mathforge::prompts {

enum class Setting { natural_language_reasoning, tool_manipulation };

enum class Stage {
  grade_school,
  middle_school,
  high_school,
  college,
  amc8,
  amc10,
  amc12,
  aime,
  secondary_school_competition,
};

inline constexpr std::array kNlrStages = {Stage::grade_school, Stage::middle_school, Stage::high_school,
                                          Stage::college,      Stage::amc8,          Stage::amc10,
                                          Stage::amc12,        Stage::aime};
inline constexpr std::array kTmStages = {Stage::grade_school, Stage::secondary_school_competition};
inline constexpr std::array kAllSettings = {Setting::natural_language_reasoning, Setting::tool_manipulation};

inline std::string_view to_string(Setting s) {
  return s == Setting::natural_language_reasoning ? "natural_language_reasoning" : "tool_manipulation";
}

/// Short form used in file names and manifests.
inline std::string_view short_name(Setting s) { return s == Setting::natural_language_reasoning ? "nlr" : "tm"; }

inline Setting parse_setting(std::string_view s) {
  if (s == "natural_language_reasoning" || s == "nlr" || s == "NLR") return Setting::natural_language_reasoning;
  if (s == "tool_manipulation" || s == "tm" || s == "TM") return Setting::tool_manipulation;
  throw InvalidArgument("unknown setting '" + std::string(s) + "'");
}

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::grade_school: return "grade_school";
    case Stage::middle_school: return "middle_school";
    case Stage::high_school: return "high_school";
    case Stage::college: return "college";
    case Stage::amc8: return "amc8";
    case Stage::amc10: return "amc10";
    case Stage::amc12: return "amc12";
    case Stage::aime: return "aime";
    case Stage::secondary_school_competition: return "secondary_school_competition";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  for (Stage st : kNlrStages) {
    if (to_string(st) == s) return st;
  }
  if (s == "secondary_school_competition") return Stage::secondary_school_competition;
  throw InvalidArgument("unknown stage '" + std::string(s) + "'");
}

inline bool valid_combination(Setting setting, Stage stage) {
  if (setting == Setting::natural_language_reasoning) {
    return std::find(kNlrStages.begin(), kNlrStages.end(), stage) != kNlrStages.end();
  }
  return std::find(kTmStages.begin(), kTmStages.end(), stage) != kTmStages.end();
}

struct PromptTemplate {
  std::string id;
  Setting setting = Setting::natural_language_reasoning;
  Stage stage = Stage::grade_school;
  std::string instruction;
  std::string guidelines;
  std::optional<std::string> example;
  std::string placeholder_key = "[Math Text Placeholder]";
  std::string provenance = "verbatim";

  bool verbatim() const { return provenance == "verbatim"; }

  /// Full template text with the placeholder where the math text goes.
  std::string body() const {
    std::string b = "Instruction\n\n" + instruction + "\n\nMath Content\n\n" + placeholder_key +
                    "\n\nGuidelines\n\n" + guidelines;
    if (example) b += "\n\nExample\n\n" + *example;
    return b;
  }
};

struct RenderedPrompt {
  std::string template_id;
  std::string record_id;
  std::string body;
  Setting setting = Setting::natural_language_reasoning;
  std::size_t body_length = 0;
};

inline std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

/// Single-pass substitution: the record text is inserted verbatim, even if
/// it itself contains the placeholder string.
inline RenderedPrompt render(const PromptTemplate& tmpl, const corpus::TextRecord& record) {
  if (record.text.empty()) throw InvalidArgument("render: record '" + record.id + "' has empty text");
  const std::string body = tmpl.body();
  const auto pos = body.find(tmpl.placeholder_key);
  if (pos == std::string::npos) throw InvalidArgument("render: template '" + tmpl.id + "' lacks its placeholder");
  RenderedPrompt out;
  out.template_id = tmpl.id;
  out.record_id = record.id;
  out.setting = tmpl.setting;
  out.body.reserve(body.size() + record.text.size());
  out.body.append(body, 0, pos);
  out.body.append(record.text);
  out.body.append(body, pos + tmpl.placeholder_key.size());
  out.body_length = out.body.size();
  return out;
}

/// Parses the human-editable prompt file format (see data/prompts.txt).
inline std::vector<PromptTemplate> parse_prompt_file(std::string_view contents, const std::string& origin = "<prompts>") {
  std::vector<PromptTemplate> out;
  std::optional<PromptTemplate> cur;
  std::string* section = nullptr;
  bool have_setting = false;
  bool have_stage = false;
  std::string example_buf;
  bool in_example = false;
  std::size_t lineno = 0;

  auto fail = [&](const std::string& msg) -> void {
    throw IoError(origin + ":" + std::to_string(lineno) + ": " + msg);
  };
  auto trim_block = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\n");
    if (a == std::string::npos) return std::string{};
    const auto b = s.find_last_not_of(" \t\n");
    return s.substr(a, b - a + 1);
  };
  auto close_section = [&] {
    if (section) *section = trim_block(*section);
    section = nullptr;
  };

  std::istringstream in{std::string(contents)};
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!cur) {
      if (line.empty() || line[0] == '#') continue;
      if (line.rfind("@template ", 0) != 0) fail("expected '@template <id>'");
      cur.emplace();
      cur->id = trim_block(line.substr(10));
      have_setting = have_stage = in_example = false;
      example_buf.clear();
      continue;
    }
    if (line == "@instruction" || line == "@guidelines" || line == "@example") {
      close_section();
      in_example = line == "@example";
      section = line == "@instruction" ? &cur->instruction : line == "@guidelines" ? &cur->guidelines : &example_buf;
      continue;
    }
    if (line == "@end") {
      close_section();
      if (in_example) cur->example = example_buf;
      if (!have_setting || !have_stage) fail("template '" + cur->id + "' needs setting and stage");
      if (cur->instruction.empty() || cur->guidelines.empty()) fail("template '" + cur->id + "' needs instruction and guidelines");
      if (!valid_combination(cur->setting, cur->stage)) fail("template '" + cur->id + "' has invalid setting/stage");
      out.push_back(std::move(*cur));
      cur.reset();
      continue;
    }
    if (section) {
      *section += line;
      *section += '\n';
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) fail("expected 'key: value'");
    const std::string key = trim_block(line.substr(0, colon));
    const std::string value = trim_block(line.substr(colon + 1));
    try {
      if (key == "setting") {
        cur->setting = parse_setting(value);
        have_setting = true;
      } else if (key == "stage") {
        cur->stage = parse_stage(value);
        have_stage = true;
      } else if (key == "placeholder") {
        cur->placeholder_key = value;
      } else if (key == "provenance") {
        cur->provenance = value;
      } else {
        fail("unknown key '" + key + "'");
      }
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
  }
  if (cur) fail("unterminated template '" + cur->id + "'");
  return out;
}

/// Read-only template store. Construction enforces the inventory: exactly
/// one template per NLR stage (8) and per TM stage (2).
class PromptLibrary {
 public:
  explicit PromptLibrary(std::vector<PromptTemplate> templates) : templates_(std::move(templates)) { check(); }

  static PromptLibrary load(const fs::path& path) {
    return PromptLibrary(parse_prompt_file(read_file(path), path.string()));
  }

  static fs::path bundled_path() {
#ifdef MATHFORGE_DATA_DIR
    return fs::path(MATHFORGE_DATA_DIR) / "prompts.txt";
#else
    return fs::path("data") / "prompts.txt";
#endif
  }

  static PromptLibrary bundled() { return load(bundled_path()); }

  const std::vector<PromptTemplate>& all() const { return templates_; }

  const PromptTemplate& get(Setting setting, Stage stage) const {
    if (!valid_combination(setting, stage)) {
      throw InvalidArgument("no " + std::string(to_string(setting)) + " template for stage " +
                            std::string(to_string(stage)));
    }
    for (const auto& t : templates_) {
      if (t.setting == setting && t.stage == stage) return t;
    }
    throw InvalidArgument("template missing");  // unreachable after check()
  }

  const PromptTemplate& by_id(std::string_view id) const {
    for (const auto& t : templates_) {
      if (t.id == id) return t;
    }
    throw InvalidArgument("unknown template id '" + std::string(id) + "'");
  }

  /// Templates for one setting in stage-enum order.
  std::vector<const PromptTemplate*> for_setting(Setting setting) const {
    std::vector<const PromptTemplate*> out;
    auto push = [&](auto stages) {
      for (Stage st : stages) out.push_back(&get(setting, st));
    };
    if (setting == Setting::natural_language_reasoning) {
      push(kNlrStages);
    } else {
      push(kTmStages);
    }
    return out;
  }

 private:
  void check() const {
    std::size_t nlr = 0, tm = 0;
    for (std::size_t i = 0; i < templates_.size(); ++i) {
      const auto& t = templates_[i];
      for (std::size_t j = 0; j < i; ++j) {
        if (templates_[j].id == t.id) throw InvalidArgument("duplicate template id '" + t.id + "'");
        if (templates_[j].setting == t.setting && templates_[j].stage == t.stage) {
          throw InvalidArgument("duplicate template for " + std::string(to_string(t.setting)) + "/" +
                                std::string(to_string(t.stage)));
        }
      }
      if (!valid_combination(t.setting, t.stage)) throw InvalidArgument("template '" + t.id + "': invalid stage");
      if (t.placeholder_key.empty() || count_occurrences(t.body(), t.placeholder_key) != 1) {
        throw InvalidArgument("template '" + t.id + "' must contain its placeholder exactly once");
      }
      if (t.setting == Setting::tool_manipulation) {
        ++tm;
        const std::string b = t.body();
        if (b.find("[Problem Description]") == std::string::npos || b.find("[Solution]") == std::string::npos) {
          throw InvalidArgument("template '" + t.id + "' lacks [Problem Description]/[Solution] markers");
        }
      } else {
        ++nlr;
      }
    }
    if (nlr != kNlrStages.size() || tm != kTmStages.size()) {
      throw InvalidArgument("prompt inventory must be 8 NLR + 2 TM templates, found " + std::to_string(nlr) +
                            " + " + std::to_string(tm));
    }
  }

  std::vector<PromptTemplate> templates_;
};

/// Pairs each record with a stage template drawn uniformly from the
/// setting's templates, seeded per (seed, record id).
inline std::vector<std::pair<PromptTemplate, corpus::TextRecord>> random_assign(
    const PromptLibrary& library, const std::vector<corpus::TextRecord>& records, Setting setting,
    std::uint64_t seed) {
  const auto choices = library.for_setting(setting);
  const std::uint64_t setting_seed = keyed_seed(seed, to_string(setting));
  std::vector<std::pair<PromptTemplate, corpus::TextRecord>> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    const auto idx = bounded(keyed_seed(setting_seed, r.id), choices.size());
    out.emplace_back(*choices[idx], r);
  }
  return out;
}

}  // namespace mathforge::prompts
