#include <gtest/gtest.h>

#include "mathforge/corpus.hpp"
#include "support.hpp"

using namespace mathforge;
using namespace mathforge::corpus;

namespace {

TextRecord rec(std::string id, std::string text, std::optional<double> score = std::nullopt) {
  TextRecord r;
  r.id = std::move(id);
  r.text = std::move(text);
  r.quality_score = score;
  r.token_count = count_tokens(r.text);
  return r;
}

std::vector<TextRecord> numbered(std::size_t n) {
  std::vector<TextRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rec("r" + std::to_string(1000 + i), "text " + std::to_string(i)));
  return out;
}

}  // namespace

TEST(LoadRecords, MissingIdsBecomeSourceAndLineIndex) {
  mftest::TempDir dir;
  mftest::write(dir / "w.jsonl", R"({"text":"one"}
{"text":"two"}
{"text":"three"}
)");
  const auto r = load_records(dir / "w.jsonl", Source::wikipedia);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[0].id, "wikipedia:0");
  EXPECT_EQ(r.records[1].id, "wikipedia:1");
  EXPECT_EQ(r.records[2].id, "wikipedia:2");
  EXPECT_EQ(make_manifest(r.records).record_count.at("wikipedia"), 3u);
}

TEST(LoadRecords, EmptyFileGivesEmptyStreamAndZeroManifest) {
  mftest::TempDir dir;
  mftest::write(dir / "e.jsonl", "");
  const auto r = load_records(dir / "e.jsonl", Source::books);
  EXPECT_TRUE(r.records.empty());
  const auto m = make_manifest(r.records);
  EXPECT_EQ(m.total_records, 0u);
  for (const auto& [src, n] : m.record_count) EXPECT_EQ(n, 0u) << src;
}

TEST(LoadRecords, EmptyTextInStrictModeNamesTheLine) {
  mftest::TempDir dir;
  mftest::write(dir / "b.jsonl", "{\"text\":\"ok\"}\n{\"text\":\"   \"}\n");
  try {
    load_records(dir / "b.jsonl", Source::qa);
    FAIL() << "expected an error";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("b.jsonl:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("empty text"), std::string::npos);
  }
}

TEST(LoadRecords, LenientModeSkipsAndReportsBadLines) {
  mftest::TempDir dir;
  mftest::write(dir / "m.jsonl", R"({"text":"fine","score":0.7}
{oops
{"text":"bad score","score":1.5}
{"id":"dup","text":"a"}
{"id":"dup","text":"b"}
)");
  const auto r = load_records(dir / "m.jsonl", Source::papers, false);
  EXPECT_EQ(r.records.size(), 2u);
  ASSERT_EQ(r.issues.size(), 3u);
  EXPECT_EQ(r.issues[0].line, 2u);
  EXPECT_EQ(r.issues[1].line, 3u);
  EXPECT_EQ(r.issues[2].line, 5u);
}

TEST(FilterQuality, BoundsAreInclusiveAndUnscoredPass) {
  const std::vector<TextRecord> in{rec("a", "x", 0.75), rec("b", "x", 0.5), rec("c", "x"), rec("d", "x", 0.6),
                                   rec("e", "x", 0.9)};
  const auto out = filter_quality(in, 0.6, 0.9);
  std::vector<std::string> ids;
  for (const auto& r : out) ids.push_back(r.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"a", "c", "d", "e"}));
}

TEST(FilterQuality, InvertedBoundsAreAnError) {
  EXPECT_THROW(filter_quality({}, 0.9, 0.6), InvalidArgument);
  EXPECT_THROW(filter_quality({}, -0.1, 0.6), InvalidArgument);
}

TEST(NormalizeText, LineEndingsAndBlankRuns) {
  EXPECT_EQ(normalize_text("a\r\nb"), "a\nb");
  EXPECT_EQ(normalize_text("a\rb"), "a\nb");
  EXPECT_EQ(normalize_text("a\n\n\n\nb"), "a\n\nb");
  EXPECT_EQ(normalize_text("a\n  \t\n\nb"), "a\n\nb");
  EXPECT_EQ(normalize_text("\n\n  a  \n\n"), "a");
}

TEST(NormalizeText, ComposesToNfc) {
  EXPECT_EQ(normalize_text("e\xCC\x81"), "\xC3\xA9");  // e + combining acute -> é
}

TEST(NormalizeText, Idempotent) {
  for (const std::string s : {"x\r\n\r\n\r\ny", "  lead", "tail \n", "e\xCC\x81\n\n\n\xC3\xA9", "", "plain"}) {
    const auto once = normalize_text(s);
    EXPECT_EQ(normalize_text(once), once);
  }
}

TEST(ContentHash, IndependentOfRecordOrder) {
  auto a = numbered(5);
  auto b = a;
  std::reverse(b.begin(), b.end());
  EXPECT_EQ(content_hash(a), content_hash(b));
  b[0].text += "!";
  EXPECT_NE(content_hash(a), content_hash(b));
}

TEST(SampleSubset, WholeCorpusComesBackIdSorted) {
  auto recs = numbered(50);
  std::reverse(recs.begin(), recs.end());
  const auto out = sample_subset(recs, recs.size(), 3);
  ASSERT_EQ(out.size(), 50u);
  EXPECT_TRUE(std::is_sorted(out.begin(), out.end(), [](auto& x, auto& y) { return x.id < y.id; }));
}

TEST(SampleSubset, SameSeedSameIdsAndDifferentSeedsDiffer) {
  const auto recs = numbered(5336 * 2);
  const auto a = sample_subset(recs, 5336, 11);
  const auto b = sample_subset(recs, 5336, 11);
  const auto c = sample_subset(recs, 5336, 12);
  EXPECT_EQ(a.size(), 5336u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(SampleSubset, SampleDoesNotDependOnInputOrder) {
  auto recs = numbered(300);
  const auto a = sample_subset(recs, 40, 5);
  std::reverse(recs.begin(), recs.end());
  EXPECT_EQ(sample_subset(recs, 40, 5), a);
}

TEST(SampleSubset, TooManyRequestedIsAnError) { EXPECT_THROW(sample_subset(numbered(3), 4, 1), InvalidArgument); }

TEST(Snapshot, RoundTripsRecordsAndManifest) {
  mftest::TempDir dir;
  auto recs = numbered(4);
  recs[1].quality_score = 0.25;
  recs[2].source = Source::qa;
  const auto m = write_snapshot(dir.path(), recs);
  EXPECT_EQ(read_snapshot(dir.path()), recs);
  EXPECT_EQ(json::parse(read_file(dir / "manifest.json")).get<CorpusManifest>(), m);
  EXPECT_EQ(m.record_count.at("qa"), 1u);
  EXPECT_EQ(m.total_records, 4u);
}
