#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "mathforge/core/digest.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/core/parallel.hpp"
#include "mathforge/core/random.hpp"
#include "mathforge/tokenizer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mathforge;

TEST(Digest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Digest, FieldFramingSeparatesJoins) {
  EXPECT_NE(Sha256{}.update_field("ab").update_field("c").hex(), Sha256{}.update_field("a").update_field("bc").hex());
}

TEST(Random, KeyedSeedDependsOnlyOnSeedAndKey) {
  EXPECT_EQ(keyed_seed(7, "rec-1"), keyed_seed(7, "rec-1"));
  EXPECT_NE(keyed_seed(7, "rec-1"), keyed_seed(8, "rec-1"));
  EXPECT_NE(keyed_seed(7, "rec-1"), keyed_seed(7, "rec-2"));
}

TEST(Random, BoundedStaysInRangeAndIsRoughlyUniform) {
  std::vector<int> hist(8, 0);
  for (int i = 0; i < 80000; ++i) {
    const auto b = bounded(keyed_seed(1, std::to_string(i)), 8);
    ASSERT_LT(b, 8u);
    ++hist[b];
  }
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}

TEST(Tokenizer, LowercasesWordsAndSplitsPunctuation) {
  EXPECT_EQ(tokenize("Hello, World! x=3.5"),
            (std::vector<std::string>{"hello", ",", "world", "!", "x", "=", "3", ".", "5"}));
  EXPECT_EQ(count_tokens("  a\tb\n c "), 3u);
}

TEST(Tokenizer, AgreesWithOracleRestatement) {
  const std::string text = "Let f(x) = 2x^2 + 3; find f(10). Ünïcode stays AS one Word!";
  EXPECT_EQ(tokenize(text), oracle::tokens(text));
}

TEST(Fs, AtomicWriteReplacesContentsAndLeavesNoTemp) {
  mftest::TempDir dir;
  const auto p = dir / "f.txt";
  write_file_atomic(p, "one");
  write_file_atomic(p, "two");
  EXPECT_EQ(read_file(p), "two");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path())) ++entries;
  EXPECT_EQ(entries, 1u);
}

TEST(Fs, UncommittedStagingDirNeverBecomesVisible) {
  mftest::TempDir dir;
  const auto target = dir / "stage";
  {
    StagingDir s(target);
    write_file_atomic(s / "out.txt", "partial");
  }
  EXPECT_FALSE(fs::exists(target));
  EXPECT_TRUE(fs::is_empty(dir.path()));
}

TEST(Fs, CommitReplacesPreviousDirectoryWholesale) {
  mftest::TempDir dir;
  const auto target = dir / "stage";
  {
    StagingDir s(target);
    write_file_atomic(s / "old.txt", "x");
    s.commit();
  }
  {
    StagingDir s(target);
    write_file_atomic(s / "new.txt", "y");
    s.commit();
  }
  EXPECT_FALSE(fs::exists(target / "old.txt"));
  EXPECT_EQ(read_file(target / "new.txt"), "y");
}

TEST(Jsonl, RoundTripAndLineNumbersInErrors) {
  mftest::TempDir dir;
  const auto p = dir / "a.jsonl";
  write_jsonl(p, std::vector<json>{json{{"a", 1}}, json{{"a", 2}}});
  EXPECT_EQ(read_jsonl<json>(p).size(), 2u);
  mftest::write(p, "{\"a\":1}\n\nnot json\n");
  try {
    read_jsonl<json>(p);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
}

TEST(Parallel, EveryIndexExactlyOnceAndErrorsPropagate) {
  std::vector<std::atomic<int>> seen(1000);
  parallel_for(seen.size(), 8, [&](std::size_t i) { ++seen[i]; });
  for (auto& s : seen) EXPECT_EQ(s.load(), 1);
  EXPECT_THROW(parallel_for(100, 4,
                            [](std::size_t i) {
                              if (i == 42) throw InvalidArgument("boom");
                            }),
               InvalidArgument);
}
