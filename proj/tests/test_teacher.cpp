#include <gtest/gtest.h>

#include <cstdlib>

#include "mathforge/teacher.hpp"
#include "parser_fixtures.hpp"
#include "support.hpp"

using namespace mathforge;
using namespace mathforge::teacher;

namespace {

const prompts::PromptLibrary& lib() {
  static const auto l = prompts::PromptLibrary::bundled();
  return l;
}

EndpointProfile mock_profile(const fs::path& dir) {
  EndpointProfile p;
  p.id = "mock";
  p.kind = ProfileKind::mock;
  p.fixture_dir = dir;
  return p;
}

using Inputs = std::vector<std::pair<prompts::PromptTemplate, corpus::TextRecord>>;

/// n NLR inputs with fixtures; indices in `bad` get an unparseable reply.
Inputs write_fixtures(const ChatClient& client, std::size_t n, const std::set<std::size_t>& bad) {
  Inputs in;
  const auto& tmpl = lib().get(prompts::Setting::natural_language_reasoning, prompts::Stage::middle_school);
  for (std::size_t i = 0; i < n; ++i) {
    corpus::TextRecord r;
    r.id = "doc-" + std::to_string(i);
    r.text = "Some math about " + std::to_string(i) + " things.";
    const auto req = client.make_request(prompts::render(tmpl, r));
    const std::string reply = bad.contains(i) ? "I cannot help with that."
                                              : "[Problem]\nHow many is " + std::to_string(i) + "?\n[Solution]\nIt is " +
                                                    std::to_string(i) + ".";
    mftest::write(client.profile().fixture_dir / (request_hash(req, client.profile()) + ".txt"), reply);
    in.emplace_back(tmpl, r);
  }
  return in;
}

std::string ok_body(const std::string& content) {
  return json{{"choices", json::array({json{{"message", {{"role", "assistant"}, {"content", content}}}}})},
              {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 5}}}}
      .dump();
}

}  // namespace

TEST(Parser, MinimalWellFormed) {
  auto r = parse_nl_output("[Problem] P [Solution] S");
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.value().problem, "P");
  EXPECT_EQ(r.value().solution, "S");
}

TEST(Parser, SolutionOnlyIsMissingProblem) {
  auto r = parse_nl_output("[Solution] only this");
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error().kind, ParseErrorKind::missing_problem);
}

TEST(Parser, TwoPairsYieldsTheFirst) {
  auto r = parse_nl_output("[Problem] P1 [Solution] S1\n[Problem] P2 [Solution] S2");
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.value().problem, "P1");
  EXPECT_EQ(r.value().solution, "S1");
}

TEST(Parser, GoodCase4Verbatim) {
  auto r = parse_tool_output(fixtures::kGoodCase4);
  ASSERT_TRUE(r.ok()) << r.error().message();
  const auto& p = r.value();
  EXPECT_NE(p.problem.find("crumb"), std::string::npos);
  EXPECT_NE(p.problem.find("nibble"), std::string::npos);
  ASSERT_EQ(p.program_blocks.size(), 1u);
  EXPECT_NE(p.program_blocks[0].code.find("print(ways_to_send)"), std::string::npos);
  EXPECT_EQ(p.program_blocks[0].declared_output, "5");
}

TEST(Parser, ProseOnlyToolSolutionHasNoCodeBlock) {
  auto r = parse_tool_output("[Problem Description] P [Solution] Therefore the answer is 5.");
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error().kind, ParseErrorKind::no_code_block);
}

TEST(Parser, UnterminatedFenceIsMalformed) {
  auto r = parse_tool_output("[Problem Description] P\n[Solution]\n```python\nprint(1)\n");
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.error().kind, ParseErrorKind::malformed_block);
}

TEST(Parser, GoodFixtureSuite) {
  const auto suite = fixtures::good_fixtures();
  ASSERT_GE(suite.size(), 40u);
  for (const auto& f : suite) {
    auto r = parse_completion(f.text, f.setting);
    ASSERT_TRUE(r.ok()) << f.name << ": " << r.error().message();
    EXPECT_EQ(r.value().problem, f.problem) << f.name;
    if (!f.solution.empty()) EXPECT_EQ(r.value().solution, f.solution) << f.name;
    EXPECT_EQ(r.value().program_blocks.size(), f.blocks) << f.name;
    if (f.blocks > 0) EXPECT_EQ(r.value().program_blocks[0].declared_output, f.first_output) << f.name;
  }
}

TEST(Parser, MalformedFixtureSuite) {
  const auto suite = fixtures::bad_fixtures();
  ASSERT_GE(suite.size(), 20u);
  for (const auto& f : suite) {
    auto r = parse_completion(f.text, f.setting);
    ASSERT_FALSE(r.ok()) << f.name;
    EXPECT_EQ(r.error().kind, f.kind) << f.name << ": got " << r.error().message();
  }
}

TEST(Parser, MarkerTextRoundTrip) {
  SplitMix64 rng(5);
  const std::string alphabet = "abcdefghij klmnop 0123456789 +-=*/().,$\n";
  auto text = [&](std::size_t len) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[bounded(rng(), alphabet.size())]);
    return teacher::detail::trim(s);
  };
  for (int i = 0; i < 2000; ++i) {
    SynthPair p;
    p.problem = "Q" + text(bounded(rng(), 60)) + ".";
    p.solution = "S" + text(bounded(rng(), 60)) + ".";
    const bool tm = i % 2 == 1;
    if (tm) {
      p.setting = prompts::Setting::tool_manipulation;
      p.solution += "\n```python\nprint(" + std::to_string(i) + ")\n```\n```output\n" + std::to_string(i) + "\n```";
    }
    auto r = parse_completion(to_marker_text(p), p.setting);
    ASSERT_TRUE(r.ok()) << to_marker_text(p);
    EXPECT_EQ(r.value().problem, p.problem);
    EXPECT_EQ(r.value().solution, p.solution);
    if (tm) EXPECT_EQ(r.value().program_blocks.at(0).declared_output, std::to_string(i));
  }
}

TEST(Parser, FuzzedBytesNeverCrash) {
  static const char* pieces[] = {"[Problem]", "[Solution]", "[/Problem]", "```", "```output", "\\\\", "\n",
                                 "Answer:",   "## ",        "**",         "\\begin{lstlisting}", "\\end{lstlisting}",
                                 "[", "]",    "\\texttt{Question:}"};
  SplitMix64 rng(99);
  std::size_t ok = 0;
  for (int i = 0; i < 100000; ++i) {
    std::string s;
    const auto len = bounded(rng(), 24);
    for (std::size_t j = 0; j < len; ++j) {
      if (rng() % 3 == 0) {
        s += pieces[bounded(rng(), std::size(pieces))];
      } else {
        s.push_back(static_cast<char>(rng() & 0xFF));
      }
    }
    ok += parse_nl_output(s).ok();
    ok += parse_tool_output(s).ok();
  }
  EXPECT_GT(ok, 0u);
}

TEST(Client, MockReplaysFixture) {
  mftest::TempDir dir;
  ChatClient client(mock_profile(dir.path()));
  CompletionRequest req{"hello", {}, "mock", "r1"};
  mftest::write(dir / (request_hash(req, client.profile()) + ".txt"), "[Problem] a [Solution] b");
  EXPECT_EQ(client.complete(req).text, "[Problem] a [Solution] b");
}

TEST(Client, MockMissingFixtureNamesTheHash) {
  mftest::TempDir dir;
  ChatClient client(mock_profile(dir.path()));
  CompletionRequest req{"hello", {}, "mock", "r1"};
  const auto hash = request_hash(req, client.profile());
  try {
    client.complete(req);
    FAIL();
  } catch (const TeacherError& e) {
    EXPECT_EQ(e.kind(), TeacherErrorKind::fixture_missing);
    EXPECT_NE(std::string(e.what()).find(hash), std::string::npos);
  }
}

TEST(Client, RequestHashCoversModelAndParams) {
  EndpointProfile a, b;
  b.model = "other";
  CompletionRequest req{"hello", {}, "x", "r"};
  EXPECT_NE(request_hash(req, a), request_hash(req, b));
  auto req2 = req;
  req2.params.temperature = 0.0;
  EXPECT_NE(request_hash(req, a), request_hash(req2, a));
}

class LiveClient : public ::testing::Test {
 protected:
  void SetUp() override { ::setenv("MATHFORGE_TEST_KEY", "sk-test", 1); }
  void TearDown() override { ::unsetenv("MATHFORGE_TEST_KEY"); }

  EndpointProfile profile() const {
    EndpointProfile p;
    p.id = "live";
    p.kind = ProfileKind::live;
    p.model = "gpt-4";
    p.base_url = "https://example.invalid/v1";
    p.api_key_env = "MATHFORGE_TEST_KEY";
    p.retry.max_attempts = 5;
    return p;
  }
};

TEST_F(LiveClient, TwoTransientFailuresThenSuccess) {
  int calls = 0;
  std::vector<std::chrono::milliseconds> sleeps;
  HttpRequest seen;
  ChatClient client(
      profile(),
      [&](const HttpRequest& r) {
        seen = r;
        ++calls;
        if (calls == 1) return HttpResponse{429, "", ""};
        if (calls == 2) return HttpResponse{0, "", "connection reset"};
        return HttpResponse{200, ok_body("[Problem] p [Solution] s"), ""};
      },
      [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  const auto c = client.complete({"prompt", {}, "live", "req-1"});
  EXPECT_EQ(c.text, "[Problem] p [Solution] s");
  EXPECT_EQ(c.attempts, 3);
  ASSERT_EQ(c.attempt_log.size(), 3u);
  EXPECT_NE(c.attempt_log[0].find("HTTP 429"), std::string::npos);
  EXPECT_NE(c.attempt_log[1].find("connection reset"), std::string::npos);
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_LT(sleeps[0], sleeps[1]);
  ASSERT_TRUE(c.usage);
  EXPECT_EQ(c.usage->prompt_tokens, 11u);
  EXPECT_EQ(seen.headers.at("Authorization"), "Bearer sk-test");
  EXPECT_EQ(json::parse(seen.body).at("model"), "gpt-4");
}

TEST_F(LiveClient, RetriesExhausted) {
  ChatClient client(profile(), [](const HttpRequest&) { return HttpResponse{503, "", ""}; },
                    [](std::chrono::milliseconds) {});
  try {
    client.complete({"prompt", {}, "live", "req-2"});
    FAIL();
  } catch (const TeacherError& e) {
    EXPECT_EQ(e.kind(), TeacherErrorKind::retries_exhausted);
  }
}

TEST_F(LiveClient, AuthenticationIsNotRetried) {
  int calls = 0;
  ChatClient client(profile(), [&](const HttpRequest&) { return ++calls, HttpResponse{401, "", ""}; },
                    [](std::chrono::milliseconds) {});
  EXPECT_THROW(client.complete({"prompt", {}, "live", "r"}), TeacherError);
  EXPECT_EQ(calls, 1);
}

TEST_F(LiveClient, MissingCredentialIsAnAuthenticationError) {
  ::unsetenv("MATHFORGE_TEST_KEY");
  ChatClient client(profile(), [](const HttpRequest&) { return HttpResponse{200, ok_body("x"), ""}; });
  try {
    client.complete({"prompt", {}, "live", "r"});
    FAIL();
  } catch (const TeacherError& e) {
    EXPECT_EQ(e.kind(), TeacherErrorKind::authentication);
  }
}

TEST_F(LiveClient, UnexpectedResponseShapeIsSchemaMismatch) {
  ChatClient client(profile(), [](const HttpRequest&) { return HttpResponse{200, R"({"choices":[]})", ""}; });
  try {
    client.complete({"prompt", {}, "live", "r"});
    FAIL();
  } catch (const TeacherError& e) {
    EXPECT_EQ(e.kind(), TeacherErrorKind::schema_mismatch);
  }
}

TEST(Batch, AllWellFormed) {
  mftest::TempDir dir;
  ChatClient client(mock_profile(dir.path()));
  const auto in = write_fixtures(client, 100, {});
  const auto r = synthesize_batch(in, client, 8);
  ASSERT_EQ(r.pairs.size(), 100u);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_EQ(r.usage.calls, 100u);
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(r.pairs[i].record_id, "doc-" + std::to_string(i));
    EXPECT_EQ(r.pairs[i].teacher_profile, "mock");
  }
}

TEST(Batch, MalformedRepliesAreReportedNotFatal) {
  mftest::TempDir dir;
  ChatClient client(mock_profile(dir.path()));
  const std::set<std::size_t> bad{3, 17, 29, 41, 58, 77, 96};
  const auto in = write_fixtures(client, 100, bad);
  const auto r = synthesize_batch(in, client, 8, 0.10);
  EXPECT_EQ(r.pairs.size(), 93u);
  ASSERT_EQ(r.failures.size(), 7u);
  std::size_t k = 0;
  for (auto i : bad) {
    EXPECT_EQ(r.failures[k].record_id, "doc-" + std::to_string(i));
    EXPECT_FALSE(r.failures[k].request_id.empty());
    EXPECT_EQ(r.failures[k].reason, "missing problem section");
    ++k;
  }
}

TEST(Batch, FailureRateAboveThresholdAborts) {
  mftest::TempDir dir;
  ChatClient client(mock_profile(dir.path()));
  std::set<std::size_t> bad;
  for (std::size_t i = 0; i < 100; i += 10) bad.insert(i);
  const auto in = write_fixtures(client, 100, bad);
  try {
    synthesize_batch(in, client, 4, 0.05);
    FAIL();
  } catch (const BatchAborted& e) {
    EXPECT_EQ(e.report().failures.size(), 10u);
    EXPECT_EQ(e.report().pairs.size(), 90u);
  }
}

TEST(Batch, ResultIndependentOfConcurrency) {
  mftest::TempDir dir;
  ChatClient client(mock_profile(dir.path()));
  const auto in = write_fixtures(client, 60, {5});
  const auto a = synthesize_batch(in, client, 1);
  const auto b = synthesize_batch(in, client, 16);
  EXPECT_EQ(a.pairs, b.pairs);
  EXPECT_EQ(a.failures, b.failures);
}
