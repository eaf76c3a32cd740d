#include <gtest/gtest.h>

#include <map>

#include "mathforge/prompts.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mathforge;
using namespace mathforge::prompts;

namespace {

const PromptLibrary& lib() {
  static const PromptLibrary l = PromptLibrary::bundled();
  return l;
}

corpus::TextRecord text(std::string id, std::string body) {
  corpus::TextRecord r;
  r.id = std::move(id);
  r.text = std::move(body);
  return r;
}

}  // namespace

TEST(PromptLibrary, InventoryIsEightNlrAndTwoTm) {
  EXPECT_EQ(lib().for_setting(Setting::natural_language_reasoning).size(), 8u);
  EXPECT_EQ(lib().for_setting(Setting::tool_manipulation).size(), 2u);
  EXPECT_EQ(lib().all().size(), 10u);
  for (const auto& t : lib().all()) EXPECT_EQ(count_occurrences(t.body(), t.placeholder_key), 1u) << t.id;
}

TEST(PromptLibrary, GradeSchoolNlrInstruction) {
  const auto& t = lib().get(Setting::natural_language_reasoning, Stage::grade_school);
  EXPECT_EQ(t.instruction.rfind("Create an age-appropriate math word problem", 0), 0u) << t.instruction;
}

TEST(PromptLibrary, TmTemplatesNameBothSections) {
  for (Stage s : kTmStages) {
    const auto body = lib().get(Setting::tool_manipulation, s).body();
    EXPECT_NE(body.find("[Problem Description] and [Solution]"), std::string::npos) << to_string(s);
  }
}

TEST(PromptLibrary, InvalidCombinationIsAnError) {
  EXPECT_THROW(lib().get(Setting::tool_manipulation, Stage::aime), InvalidArgument);
}

TEST(PromptLibrary, RejectsWrongInventory) {
  auto ts = lib().all();
  ts.pop_back();
  EXPECT_THROW(PromptLibrary{ts}, InvalidArgument);
  ts = lib().all();
  ts[0].instruction += " [Math Text Placeholder]";
  EXPECT_THROW(PromptLibrary{ts}, InvalidArgument);
}

TEST(PromptFile, ParsesBundledFormatFromText) {
  const auto templates = parse_prompt_file(read_file(PromptLibrary::bundled_path()));
  EXPECT_EQ(templates.size(), 10u);
  EXPECT_NO_THROW(PromptLibrary{templates});
}

TEST(Render, SubstitutesPlaceholder) {
  const auto& t = lib().get(Setting::natural_language_reasoning, Stage::high_school);
  const auto r = render(t, text("r1", "x+1=2"));
  const auto body = t.body();
  const auto pos = body.find(t.placeholder_key);
  EXPECT_EQ(r.body, body.substr(0, pos) + "x+1=2" + body.substr(pos + t.placeholder_key.size()));
  EXPECT_EQ(r.body_length, r.body.size());
  EXPECT_EQ(render(t, text("r1", "x+1=2")).body, r.body);
}

TEST(Render, SinglePassWhenTextContainsPlaceholder) {
  const auto& t = lib().get(Setting::tool_manipulation, Stage::grade_school);
  const std::string nasty = "see [Math Text Placeholder] here";
  const auto r = render(t, text("r2", nasty));
  EXPECT_EQ(count_occurrences(r.body, t.placeholder_key), 1u);
  EXPECT_NE(r.body.find(nasty), std::string::npos);
}

TEST(Render, EmptyTextIsAnError) {
  EXPECT_THROW(render(lib().all().front(), text("r", "")), InvalidArgument);
}

TEST(RandomAssign, EightStagesWithinBinomialBound) {
  // |X - 1000| > 150 for X ~ Bin(8000, 1/8) has probability below 1e-6 per
  // stage, so the tolerance is not a flake risk for any seed.
  ASSERT_LT(oracle::binomial_two_sided_tail(8000, 1.0 / 8.0, 150.0), 1e-6);
  std::vector<corpus::TextRecord> recs;
  for (int i = 0; i < 8000; ++i) recs.push_back(text("doc-" + std::to_string(i), "t"));
  for (std::uint64_t seed : {1ULL, 77ULL, 20240607ULL}) {
    std::map<std::string, int> counts;
    for (const auto& [tmpl, r] : random_assign(lib(), recs, Setting::natural_language_reasoning, seed)) {
      ++counts[tmpl.id];
    }
    ASSERT_EQ(counts.size(), 8u);
    for (const auto& [id, n] : counts) EXPECT_NEAR(n, 1000, 150) << id << " seed " << seed;
  }
}

TEST(RandomAssign, DeterministicAndIndependentOfNeighbours) {
  const auto one = random_assign(lib(), {text("solo", "t")}, Setting::natural_language_reasoning, 9);
  std::vector<corpus::TextRecord> many{text("a", "t"), text("solo", "t"), text("b", "t")};
  const auto three = random_assign(lib(), many, Setting::natural_language_reasoning, 9);
  EXPECT_EQ(one[0].first.id, three[1].first.id);
  EXPECT_EQ(random_assign(lib(), {text("solo", "t")}, Setting::natural_language_reasoning, 9)[0].first.id,
            one[0].first.id);
}

TEST(RandomAssign, TmUsesOnlyTmStages) {
  std::vector<corpus::TextRecord> recs;
  for (int i = 0; i < 200; ++i) recs.push_back(text("d" + std::to_string(i), "t"));
  std::set<Stage> stages;
  for (const auto& [tmpl, r] : random_assign(lib(), recs, Setting::tool_manipulation, 3)) {
    EXPECT_EQ(tmpl.setting, Setting::tool_manipulation);
    stages.insert(tmpl.stage);
  }
  EXPECT_EQ(stages, (std::set<Stage>{Stage::grade_school, Stage::secondary_school_competition}));
}
