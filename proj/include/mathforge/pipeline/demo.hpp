#pragma once

#include <array>
#include <string>
#include <vector>

#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/core/random.hpp"
#include "mathforge/corpus.hpp"
#include "mathforge/prompts.hpp"
#include "mathforge/teacher.hpp"

// Generates the bundled demo: a 200-document corpus, downstream probes, a
// protected test set, mock teacher fixtures and a pipeline config. Every
// byte is a function of the seed.
namespace mathforge::demo {

struct DemoOptions {
  std::uint64_t seed = 20240607;
  std::size_t documents = 200;
  std::size_t exec_timeout_ms = 2000;
};

namespace detail {

inline constexpr std::array kNames = {"Mia", "Omar", "Lena", "Ravi", "Sofia", "Tom", "Aiko", "Jonas", "Nadia", "Ben"};
inline constexpr std::array kItems = {"pencils", "apples", "stickers", "marbles", "cookies", "stamps"};
inline constexpr std::array kFiller = {
    "Teachers often pair this idea with a drawing so that students can see the quantities.",
    "A quick estimate before calculating helps catch mistakes.",
    "The same reasoning appears later when students meet algebraic expressions.",
    "Writing each intermediate result on its own line keeps the work readable.",
    "Checking the units at the end is a good habit.",
    "Many textbooks introduce the topic with everyday objects.",
};
inline constexpr std::array kOffTopic = {
    "The old harbour town is known for its stone bridges and its spring market.",
    "Bread dough should rest in a warm place until it has doubled in size.",
    "The choir rehearses twice a week in the hall behind the library.",
    "Migrating birds follow coastlines and river valleys on their long journeys.",
};

/// Protected test items; some corpus documents quote them verbatim.
inline constexpr std::array kTests = {
    "A train leaves the station at nine in the morning and travels at a constant speed for exactly three hours",
    "The perimeter of a square garden is forty meters and a path of equal width surrounds the whole garden",
    "Twelve friends share the cost of a boat trip equally and each friend pays the same whole number of dollars",
};

struct Scenario {
  int kind = 0;  // 0 shopping, 1 travel, 2 area, 3 series, 4 off-topic
  std::string name;
  std::string item;
  long a = 0, b = 0, c = 0;
  std::string planted;  // a protected sentence quoted by the document, if any
};

inline long answer(const Scenario& s) {
  switch (s.kind) {
    case 0: return s.a * s.b + s.c;
    case 1: return s.a * s.b;
    case 2: return s.a * s.b - s.c * s.c;
    case 3: return s.a * (s.a + 1) / 2;
    default: return s.a + s.b;
  }
}

inline std::string question(const Scenario& s) {
  const std::string a = std::to_string(s.a), b = std::to_string(s.b), c = std::to_string(s.c);
  switch (s.kind) {
    case 0:
      return s.name + " buys " + a + " boxes with " + b + " " + s.item + " in each box and then finds " + c + " more " +
             s.item + ". How many " + s.item + " does " + s.name + " have now?";
    case 1:
      return s.name + " cycles at " + a + " kilometers per hour for " + b + " hours. How far does " + s.name +
             " travel?";
    case 2:
      return "A rectangular yard is " + a + " meters long and " + b + " meters wide. A square flower bed with side " +
             c + " meters is dug out of it. What area of lawn remains?";
    case 3:
      return s.name + " stacks " + s.item + " in rows: 1 in the first row, 2 in the second, and so on up to " + a +
             " in the last row. How many " + s.item + " are in the stack?";
    default:
      return s.name + " reads " + a + " pages on Monday and " + b + " pages on Tuesday. How many pages is that in total?";
  }
}

inline std::string solution(const Scenario& s) {
  const std::string a = std::to_string(s.a), b = std::to_string(s.b), c = std::to_string(s.c);
  const std::string ans = std::to_string(answer(s));
  switch (s.kind) {
    case 0:
      return "The boxes hold " + a + " x " + b + " = " + std::to_string(s.a * s.b) + " " + s.item + ". Adding the " +
             c + " found ones gives " + std::to_string(s.a * s.b) + " + " + c + " = " + ans + ". The answer is " + ans + ".";
    case 1:
      return "Distance is speed times time, so " + a + " x " + b + " = " + ans + " kilometers. The answer is " + ans + ".";
    case 2:
      return "The yard has area " + a + " x " + b + " = " + std::to_string(s.a * s.b) + " square meters and the bed has " +
             c + " x " + c + " = " + std::to_string(s.c * s.c) + ". The lawn is " + ans + " square meters. The answer is " +
             ans + ".";
    case 3:
      return "Pair the first and last numbers: the sum is " + a + " x " + std::to_string(s.a + 1) + " / 2 = " + ans +
             ". The answer is " + ans + ".";
    default:
      return "Add the two days: " + a + " + " + b + " = " + ans + ". The answer is " + ans + ".";
  }
}

inline std::string program(const Scenario& s) {
  const std::string a = std::to_string(s.a), b = std::to_string(s.b), c = std::to_string(s.c);
  switch (s.kind) {
    case 0: return "boxes = " + a + "\nper_box = " + b + "\nextra = " + c + "\nprint(boxes * per_box + extra)";
    case 1: return "speed = " + a + "\nhours = " + b + "\nprint(speed * hours)";
    case 2: return "length = " + a + "\nwidth = " + b + "\nside = " + c + "\nprint(length * width - side ** 2)";
    case 3: return "n = " + a + "\nprint(sum(range(1, n + 1)))";
    default: return "monday = " + a + "\ntuesday = " + b + "\nprint(monday + tuesday)";
  }
}

inline std::string document(const Scenario& s, std::size_t index, SplitMix64& rng) {
  std::string text;
  if (s.kind == 4) {
    text = std::string(kOffTopic[bounded(rng(), kOffTopic.size())]) + " " +
           kOffTopic[bounded(rng(), kOffTopic.size())] + "\n\nNote " + std::to_string(index) + ": " + question(s);
  } else {
    text = "Lesson note " + std::to_string(index) + ". Worked example:\n\n" + question(s) + "\n\n" + solution(s) +
           "\n\n" + kFiller[bounded(rng(), kFiller.size())];
  }
  if (!s.planted.empty()) text += "\n\nFrom the review sheet: " + s.planted + ".";
  return text;
}

inline std::string problem_text(const Scenario& s) {
  return s.planted.empty() ? question(s) : s.planted + ". " + question(s);
}

enum class Flavor { good, fails, hangs, malformed };

/// Teacher completion for one record under one template.
inline std::string completion(const Scenario& s, prompts::Setting setting, Flavor flavor, std::size_t variant) {
  const std::string problem = problem_text(s);
  if (setting == prompts::Setting::natural_language_reasoning) {
    if (flavor == Flavor::malformed) return "Here is a problem inspired by the text.\n\n" + problem + "\n";
    // Alternate between the marker styles teachers actually produce.
    switch (variant % 3) {
      case 0: return "[Problem]\n" + problem + "\n\n[Solution]\n" + solution(s) + "\n";
      case 1: return "**Problem:**\n" + problem + "\n\n**Solution:**\n" + solution(s) + "\n";
      default: return "## Problem\n" + problem + "\n\n## Solution\n" + solution(s) + "\n";
    }
  }
  if (flavor == Flavor::malformed) return "[Problem Description]\n" + problem + "\n\n[Solution]\nWe compute it directly.\n";
  std::string code = program(s);
  std::string declared = std::to_string(answer(s));
  if (flavor == Flavor::fails) {
    code = "total = " + std::to_string(s.a) + "\nprint(total + missing_value)";
  } else if (flavor == Flavor::hangs) {
    code = "while True:\n    pass";
  }
  return "[Problem Description]\n" + problem + "\n\n[Solution]\nWe let the program do the arithmetic.\n```python\n" +
         code + "\n```\n```output\n" + declared + "\n```\nThe answer is " + declared + ".\n";
}

}  // namespace detail

/// Writes the demo tree under `dir` and returns the config path.
inline fs::path write_demo(const fs::path& dir, const DemoOptions& opt = {}) {
  using namespace detail;
  fs::create_directories(dir);
  SplitMix64 rng(opt.seed);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(bounded(rng(), n)); };

  // Corpus: five sources in fixed proportions.
  const std::array<std::pair<corpus::Source, std::size_t>, 5> split = {
      std::pair{corpus::Source::webpages, opt.documents * 40 / 100}, {corpus::Source::books, opt.documents * 15 / 100},
      {corpus::Source::papers, opt.documents * 15 / 100},           {corpus::Source::qa, opt.documents * 20 / 100},
      {corpus::Source::wikipedia, 0}};
  std::vector<Scenario> scenarios(opt.documents);
  std::vector<std::string> texts(opt.documents);
  for (std::size_t i = 0; i < opt.documents; ++i) {
    Scenario& s = scenarios[i];
    if (i % 50 == 21 && i > 0) {  // exact duplicate of the previous document
      s = scenarios[i - 1];
      texts[i] = texts[i - 1];
      continue;
    }
    s.kind = i % 10 == 9 ? 4 : static_cast<int>(pick(4));
    s.name = kNames[pick(kNames.size())];
    s.item = kItems[pick(kItems.size())];
    s.a = static_cast<long>(3 + pick(20));
    s.b = static_cast<long>(2 + pick(12));
    s.c = static_cast<long>(1 + pick(std::min<long>(s.a, s.b)));
    if (i % 40 == 3) s.planted = kTests[(i / 40) % kTests.size()];
    texts[i] = document(s, i, rng);
  }

  std::vector<corpus::TextRecord> records;  // as the pipeline will see them
  std::vector<std::size_t> scenario_of;
  {
    std::size_t i = 0;
    for (std::size_t part = 0; part < split.size(); ++part) {
      const auto [source, share] = split[part];
      const std::size_t n = part + 1 == split.size() ? opt.documents - i : share;
      std::string lines;
      for (std::size_t k = 0; k < n; ++k, ++i) {
        json row{{"id", std::string(corpus::to_string(source)) + "-" + std::to_string(k)}, {"text", texts[i]}};
        if (i % 9 == 4) {
          row["score"] = 0.1;  // below the demo quality floor
        } else if (i % 3 != 0) {
          row["score"] = 0.5 + 0.05 * static_cast<double>(pick(10));
        }
        lines += row.dump() + "\n";
      }
      const fs::path path = dir / "corpus" / (std::string(corpus::to_string(source)) + ".jsonl");
      write_file_atomic(path, lines);
      auto loaded = corpus::load_records(path, source);
      for (std::size_t k = 0; k < loaded.records.size(); ++k) {
        records.push_back(loaded.records[k]);
        scenario_of.push_back(i - n + k);
      }
    }
  }

  // Downstream probes: in-domain word problems and programs.
  std::string probes_nlr, probes_tm;
  for (std::size_t k = 0; k < 20; ++k) {
    Scenario s;
    s.kind = static_cast<int>(k % 4);
    s.name = kNames[(k + 3) % kNames.size()];
    s.item = kItems[(k + 1) % kItems.size()];
    s.a = static_cast<long>(4 + (k * 7) % 17);
    s.b = static_cast<long>(3 + (k * 5) % 9);
    s.c = static_cast<long>(1 + k % 3);
    probes_nlr += json{{"id", "nlr-probe-" + std::to_string(k)}, {"question", question(s)}, {"answer", solution(s)}}.dump() + "\n";
    probes_tm += json{{"id", "tm-probe-" + std::to_string(k)},
                      {"question", question(s)},
                      {"answer", "```python\n" + program(s) + "\n```\n```output\n" + std::to_string(answer(s)) + "\n```"}}
                     .dump() +
                 "\n";
  }
  write_file_atomic(dir / "probes_nlr.jsonl", probes_nlr);
  write_file_atomic(dir / "probes_tm.jsonl", probes_tm);

  std::string tests;
  for (std::size_t k = 0; k < kTests.size(); ++k) {
    tests += json{{"input", std::string(kTests[k]) + ". What is asked?"}, {"output", "See the worked solution " + std::to_string(k) + "."}}.dump() + "\n";
  }
  write_file_atomic(dir / "tests.jsonl", tests);

  // Mock fixtures for every record x template x profile.
  const auto library = prompts::PromptLibrary::bundled();
  const std::array<std::pair<std::string, std::string>, 2> profiles = {std::pair{"kd_teacher", "mock-teacher"},
                                                                       {"synthesizer", "mock-synthesizer"}};
  for (const auto& [id, model] : profiles) {
    teacher::EndpointProfile p;
    p.id = id;
    p.model = model;
    p.fixture_dir = dir / "fixtures" / id;
    fs::create_directories(p.fixture_dir);
    const teacher::ChatClient client(p);
    for (std::size_t r = 0; r < records.size(); ++r) {
      const std::size_t idx = scenario_of[r];
      const Scenario& s = scenarios[idx];
      for (const auto& tmpl : library.all()) {
        Flavor flavor = Flavor::good;
        if (tmpl.setting == prompts::Setting::tool_manipulation) {
          if (idx % 61 == 5) flavor = Flavor::hangs;
          else if (idx % 23 == 7) flavor = Flavor::fails;
        }
        if (id == "synthesizer" && idx % 53 == 11) flavor = Flavor::malformed;
        const auto req = client.make_request(prompts::render(tmpl, records[r]));
        write_file_atomic(p.fixture_dir / (teacher::request_hash(req, p) + ".txt"),
                          completion(s, tmpl.setting, flavor, idx));
      }
    }
  }

  const std::string config =
      "; Demo pipeline: mock teachers, 200 documents.\n"
      "[run]\n"
      "output_root = out\n"
      "probes_nlr = probes_nlr.jsonl\n"
      "probes_tm = probes_tm.jsonl\n"
      "tests = tests.jsonl\n\n"
      "[corpus]\n"
      "webpages = corpus/webpages.jsonl\n"
      "books = corpus/books.jsonl\n"
      "papers = corpus/papers.jsonl\n"
      "qa = corpus/qa.jsonl\n"
      "wikipedia = corpus/wikipedia.jsonl\n"
      "quality_min = 0.2\n\n"
      "[kd_teacher]\n"
      "kind = mock\n"
      "model = mock-teacher\n"
      "fixture_dir = fixtures/kd_teacher\n\n"
      "[synthesizer]\n"
      "kind = mock\n"
      "model = mock-synthesizer\n"
      "fixture_dir = fixtures/synthesizer\n\n"
      "[seeds]\n"
      "sample = 11\n"
      "assign = 12\n"
      "train = 13\n"
      "projection = 14\n"
      "mix = 15\n\n"
      "[kd]\n"
      "size_nlr = 40\n"
      "size_tm = 13\n\n"
      "[selection]\n"
      "candidate_pool = 200\n"
      "reference_subset = 60\n"
      "k = 20\n"
      "d_out = 1024\n"
      "epochs = 3\n\n"
      "[synthesis]\n"
      "concurrency = 4\n\n"
      "[filter]\n"
      "ngram_n = 10\n"
      "exec_timeout_ms = " + std::to_string(opt.exec_timeout_ms) + "\n"
      "exec_strict = true\n\n"
      "[mix]\n"
      "ratio = 2:1\n\n"
      "[pack]\n"
      "max_len = 512\n\n"
      "[cost]\n"
      "synth_hours = 0.5\n"
      "train_hours = 0.25\n";
  const fs::path cfg = dir / "pipeline.ini";
  write_file_atomic(cfg, config);
  return cfg;
}

}  // namespace mathforge::demo
