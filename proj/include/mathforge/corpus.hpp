#pragma once

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mathforge/core/digest.hpp"
#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/core/random.hpp"
#include "mathforge/tokenizer.hpp"

namespace mathforge::corpus {

enum class Source { webpages, books, papers, qa, wikipedia };

inline constexpr std::array kAllSources = {Source::webpages, Source::books, Source::papers, Source::qa,
                                           Source::wikipedia};

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::webpages: return "webpages";
    case Source::books: return "books";
    case Source::papers: return "papers";
    case Source::qa: return "qa";
    case Source::wikipedia: return "wikipedia";
  }
  return "?";
}

inline Source parse_source(std::string_view name) {
  for (Source s : kAllSources) {
    if (to_string(s) == name) return s;
  }
  throw InvalidArgument("unknown corpus source '" + std::string(name) + "'");
}

inline constexpr std::string_view kNormalizationVersion = "nfc-lf-blank2-trim-1";

/// One math-related source document.
struct TextRecord {
  std::string id;
  Source source = Source::webpages;
  std::string text;
  std::optional<double> quality_score;
  std::size_t token_count = 0;

  friend bool operator==(const TextRecord&, const TextRecord&) = default;
};

inline void to_json(json& j, const TextRecord& r) {
  j = json{{"id", r.id}, {"source", to_string(r.source)}, {"text", r.text}, {"token_count", r.token_count}};
  if (r.quality_score) j["score"] = *r.quality_score;
}

inline void from_json(const json& j, TextRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.source = parse_source(j.at("source").get<std::string>());
  r.text = j.at("text").get<std::string>();
  r.quality_score.reset();
  if (j.contains("score") && !j.at("score").is_null()) r.quality_score = j.at("score").get<double>();
  r.token_count = j.value("token_count", count_tokens(r.text));
}

struct CorpusManifest {
  std::map<std::string, std::size_t> record_count;  // keyed by source name
  std::size_t total_records = 0;
  std::size_t total_tokens = 0;
  std::string normalization_version{kNormalizationVersion};
  std::string tokenizer_version{kTokenizerVersion};
  std::string content_hash;

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

inline void to_json(json& j, const CorpusManifest& m) {
  j = json{{"record_count", m.record_count},
           {"total_records", m.total_records},
           {"total_tokens", m.total_tokens},
           {"normalization_version", m.normalization_version},
           {"tokenizer_version", m.tokenizer_version},
           {"content_hash", m.content_hash}};
}

inline void from_json(const json& j, CorpusManifest& m) {
  m.record_count = j.at("record_count").get<std::map<std::string, std::size_t>>();
  m.total_records = j.at("total_records").get<std::size_t>();
  m.total_tokens = j.at("total_tokens").get<std::size_t>();
  m.normalization_version = j.at("normalization_version").get<std::string>();
  m.tokenizer_version = j.at("tokenizer_version").get<std::string>();
  m.content_hash = j.at("content_hash").get<std::string>();
}

/// NFC normalization, LF line endings, whitespace-only lines blanked, runs
/// of blank lines collapsed to one, ends trimmed. Ill-formed UTF-8 is
/// replaced with U+FFFD. Idempotent.
inline std::string normalize_text(std::string_view raw) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  const icu::UnicodeString src =
      icu::UnicodeString::fromUTF8(icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size())));
  icu::UnicodeString dst = nfc->normalize(src, status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalization failed");
  std::string utf8;
  dst.toUTF8String(utf8);

  // Split into lines on CRLF / CR / LF.
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  for (std::size_t i = 0; i < utf8.size(); ++i) {
    if (utf8[i] == '\r' || utf8[i] == '\n') {
      lines.emplace_back(utf8.data() + start, i - start);
      if (utf8[i] == '\r' && i + 1 < utf8.size() && utf8[i + 1] == '\n') ++i;
      start = i + 1;
    }
  }
  lines.emplace_back(utf8.data() + start, utf8.size() - start);

  auto blank = [](std::string_view l) { return l.find_first_not_of(" \t\f\v") == std::string_view::npos; };
  std::string out;
  out.reserve(utf8.size());
  bool pending_blank = false;
  bool any = false;
  for (std::string_view line : lines) {
    if (blank(line)) {
      pending_blank = any;
      continue;
    }
    if (any) out += pending_blank ? "\n\n" : "\n";
    out += line;
    any = true;
    pending_blank = false;
  }
  // Trim leading/trailing horizontal whitespace of the whole text.
  const auto first = out.find_first_not_of(" \t\f\v");
  if (first == std::string::npos) return {};
  const auto last = out.find_last_not_of(" \t\f\v");
  return out.substr(first, last - first + 1);
}

struct LoadIssue {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<TextRecord> records;
  std::vector<LoadIssue> issues;  // populated only in lenient mode
};

/// Reads line-delimited objects with required "text" and optional "id",
/// "score". Missing ids become "<source>:<line index>". In strict mode the
/// first malformed line raises; otherwise malformed lines are skipped and
/// reported.
inline LoadResult load_records(const fs::path& path, Source source, bool strict = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus file " + path.string());
  LoadResult result;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t index = 0;
  auto fail = [&](std::size_t lineno, const std::string& msg) {
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": " + msg;
    if (strict) throw IoError(where);
    result.issues.push_back({lineno, msg});
  };
  while (std::getline(in, line)) {
    const std::size_t lineno = ++index;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error&) {
      fail(lineno, "malformed JSON");
      continue;
    }
    if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
      fail(lineno, "missing string field \"text\"");
      continue;
    }
    TextRecord rec;
    rec.source = source;
    rec.text = normalize_text(obj["text"].get<std::string>());
    if (rec.text.empty()) {
      fail(lineno, "empty text");
      continue;
    }
    if (obj.contains("id") && !obj["id"].is_null()) {
      rec.id = obj["id"].is_string() ? obj["id"].get<std::string>() : obj["id"].dump();
    } else {
      rec.id = std::string(to_string(source)) + ":" + std::to_string(lineno - 1);
    }
    if (obj.contains("score") && !obj["score"].is_null()) {
      if (!obj["score"].is_number()) {
        fail(lineno, "non-numeric score");
        continue;
      }
      const double s = obj["score"].get<double>();
      if (!(s >= 0.0 && s <= 1.0)) {
        fail(lineno, "score outside [0,1]");
        continue;
      }
      rec.quality_score = s;
    }
    if (!seen.insert(rec.id).second) {
      fail(lineno, "duplicate id '" + rec.id + "'");
      continue;
    }
    rec.token_count = count_tokens(rec.text);
    result.records.push_back(std::move(rec));
  }
  return result;
}

/// Keeps records whose score lies in [min, max]; unscored records pass.
inline std::vector<TextRecord> filter_quality(const std::vector<TextRecord>& records, double min, double max) {
  if (!(min >= 0.0 && max <= 1.0 && min <= max)) {
    throw InvalidArgument("filter_quality: need 0 <= min <= max <= 1");
  }
  std::vector<TextRecord> out;
  for (const auto& r : records) {
    if (!r.quality_score || (*r.quality_score >= min && *r.quality_score <= max)) out.push_back(r);
  }
  return out;
}

/// Order-independent: hashes records in id order.
inline std::string content_hash(const std::vector<TextRecord>& records) {
  std::vector<const TextRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  Sha256 h;
  h.update_field(kNormalizationVersion);
  for (const auto* r : sorted) {
    h.update_field(r->id).update_field(to_string(r->source)).update_field(r->text);
    h.update_field(r->quality_score ? json(*r->quality_score).dump() : "-");
  }
  return h.hex();
}

inline CorpusManifest make_manifest(const std::vector<TextRecord>& records) {
  CorpusManifest m;
  for (Source s : kAllSources) m.record_count[std::string(to_string(s))] = 0;
  for (const auto& r : records) {
    ++m.record_count[std::string(to_string(r.source))];
    m.total_tokens += r.token_count;
  }
  m.total_records = records.size();
  m.content_hash = content_hash(records);
  return m;
}

/// Uniform sample without replacement. Each record gets a key derived from
/// (seed, snapshot hash, id); the n smallest keys win. Output is id-sorted.
inline std::vector<TextRecord> sample_subset(const std::vector<TextRecord>& records, std::size_t n,
                                             std::uint64_t seed) {
  if (n > records.size()) {
    throw InvalidArgument("sample_subset: requested " + std::to_string(n) + " of " +
                          std::to_string(records.size()) + " records");
  }
  const std::uint64_t snapshot_seed = keyed_seed(seed, content_hash(records));
  std::vector<std::pair<std::uint64_t, const TextRecord*>> keyed;
  keyed.reserve(records.size());
  for (const auto& r : records) keyed.emplace_back(keyed_seed(snapshot_seed, r.id), &r);
  auto by_key = [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second->id < b.second->id;
  };
  std::nth_element(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(n), keyed.end(), by_key);
  std::vector<TextRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(*keyed[i].second);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

/// Snapshot directory layout: records.jsonl + manifest.json.
inline CorpusManifest write_snapshot(const fs::path& dir, const std::vector<TextRecord>& records) {
  const CorpusManifest m = make_manifest(records);
  write_jsonl(dir / "records.jsonl", records);
  write_file_atomic(dir / "manifest.json", json(m).dump(2) + "\n");
  return m;
}

inline std::vector<TextRecord> read_snapshot(const fs::path& dir) {
  return read_jsonl<TextRecord>(dir / "records.jsonl");
}

}  // namespace mathforge::corpus
