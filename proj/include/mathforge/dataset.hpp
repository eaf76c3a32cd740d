#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mathforge/core/digest.hpp"
#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/core/random.hpp"
#include "mathforge/corpus.hpp"
#include "mathforge/influence.hpp"
#include "mathforge/prompts.hpp"
#include "mathforge/teacher.hpp"
#include "mathforge/tokenizer.hpp"

namespace mathforge::dataset {

using prompts::Setting;
using teacher::SynthPair;

enum class Round { initial, boost };

inline std::string_view to_string(Round r) { return r == Round::initial ? "initial" : "boost"; }
inline Round parse_round(std::string_view s) {
  if (s == "initial") return Round::initial;
  if (s == "boost") return Round::boost;
  throw InvalidArgument("unknown round '" + std::string(s) + "'");
}

/// One knowledge-distillation tuple: prompt, source text, teacher output.
struct KDRecord {
  std::string template_id;
  std::string record_id;
  Setting setting = Setting::natural_language_reasoning;
  std::string stage;
  std::string input;  // rendered [prompt; text], the synthesizer's conditioning
  std::string problem;
  std::string solution;
  std::string teacher_profile;
  Round round = Round::initial;

  std::string key() const { return template_id + "@" + record_id; }
  friend bool operator==(const KDRecord&, const KDRecord&) = default;
};

inline void to_json(json& j, const KDRecord& r) {
  j = json{{"template_id", r.template_id}, {"record_id", r.record_id}, {"setting", prompts::short_name(r.setting)},
           {"stage", r.stage},             {"input", r.input},          {"problem", r.problem},
           {"solution", r.solution},       {"teacher_profile", r.teacher_profile}, {"round", to_string(r.round)}};
}

inline void from_json(const json& j, KDRecord& r) {
  r.template_id = j.at("template_id").get<std::string>();
  r.record_id = j.at("record_id").get<std::string>();
  r.setting = prompts::parse_setting(j.at("setting").get<std::string>());
  r.stage = j.at("stage").get<std::string>();
  r.input = j.at("input").get<std::string>();
  r.problem = j.at("problem").get<std::string>();
  r.solution = j.at("solution").get<std::string>();
  r.teacher_profile = j.at("teacher_profile").get<std::string>();
  r.round = parse_round(j.at("round").get<std::string>());
}

struct KDManifest {
  std::map<std::string, std::size_t> setting_counts;  // "nlr" / "tm"
  std::map<std::string, std::size_t> stage_counts;    // "<setting>/<stage>"
  std::map<std::string, std::size_t> round_counts;    // "initial" / "boost"
  std::size_t total = 0;
  std::string content_hash;
  std::string objective =
      "maximize sum_i log P([problem_i; solution_i] | [prompt_i; text_i]) over this file (train externally)";
};

inline void to_json(json& j, const KDManifest& m) {
  j = json{{"setting_counts", m.setting_counts}, {"stage_counts", m.stage_counts}, {"round_counts", m.round_counts},
           {"total", m.total},                   {"content_hash", m.content_hash}, {"objective", m.objective}};
}

struct KDDataset {
  std::vector<KDRecord> records;
  KDManifest manifest;
};

inline std::string kd_content_hash(const std::vector<KDRecord>& records) {
  return sha256_hex(to_jsonl(records));
}

inline KDManifest make_kd_manifest(const std::vector<KDRecord>& records) {
  KDManifest m;
  for (Setting s : prompts::kAllSettings) m.setting_counts[std::string(prompts::short_name(s))] = 0;
  m.round_counts = {{"initial", 0}, {"boost", 0}};
  for (const auto& r : records) {
    const std::string setting(prompts::short_name(r.setting));
    ++m.setting_counts[setting];
    ++m.stage_counts[setting + "/" + r.stage];
    ++m.round_counts[std::string(to_string(r.round))];
  }
  m.total = records.size();
  m.content_hash = kd_content_hash(records);
  return m;
}

/// Builds a KD round from parsed teacher pairs. Template and record ids must
/// resolve; (template, record) keys must be unique within the round.
inline KDDataset assemble_kd(const std::vector<SynthPair>& pairs, Round round, const prompts::PromptLibrary& library,
                             const std::unordered_map<std::string, corpus::TextRecord>& records) {
  if (pairs.empty()) throw InvalidArgument("assemble_kd: empty KD round");
  KDDataset ds;
  std::unordered_set<std::string> keys;
  for (const auto& p : pairs) {
    if (p.problem.empty() || p.solution.empty()) throw InvalidArgument("assemble_kd: empty problem or solution");
    const auto& tmpl = library.by_id(p.template_id);
    auto rec = records.find(p.record_id);
    if (rec == records.end()) throw InvalidArgument("assemble_kd: unknown record id '" + p.record_id + "'");
    KDRecord r;
    r.template_id = p.template_id;
    r.record_id = p.record_id;
    r.setting = tmpl.setting;
    r.stage = std::string(prompts::to_string(tmpl.stage));
    r.input = prompts::render(tmpl, rec->second).body;
    r.problem = p.problem;
    r.solution = p.solution;
    r.teacher_profile = p.teacher_profile;
    r.round = round;
    if (!keys.insert(r.key()).second) throw InvalidArgument("assemble_kd: duplicate key " + r.key() + " within round");
    ds.records.push_back(std::move(r));
  }
  ds.manifest = make_kd_manifest(ds.records);
  return ds;
}

/// Appends boost records; an initial record sharing a boost record's key is
/// replaced.
inline KDDataset merge_boost(const KDDataset& initial, const std::vector<KDRecord>& boosted) {
  std::unordered_set<std::string> boost_keys;
  for (const auto& r : boosted) {
    if (r.round != Round::boost) throw InvalidArgument("merge_boost: record " + r.key() + " is not a boost record");
    if (!boost_keys.insert(r.key()).second) throw InvalidArgument("merge_boost: key collision " + r.key() + " within boost round");
  }
  KDDataset out;
  for (const auto& r : initial.records) {
    if (!boost_keys.contains(r.key())) out.records.push_back(r);
  }
  out.records.insert(out.records.end(), boosted.begin(), boosted.end());
  out.manifest = make_kd_manifest(out.records);
  return out;
}

inline void write_kd(const fs::path& dir, const KDDataset& ds) {
  write_jsonl(dir / "kd.jsonl", ds.records);
  write_file_atomic(dir / "kd_manifest.json", json(ds.manifest).dump(2) + "\n");
}

inline KDDataset read_kd(const fs::path& dir) {
  KDDataset ds;
  ds.records = read_jsonl<KDRecord>(dir / "kd.jsonl");
  ds.manifest = make_kd_manifest(ds.records);
  return ds;
}

// ---------------------------------------------------------------------------
// Mixing

struct MixRatio {
  std::size_t nlr = 2;
  std::size_t tm = 1;
};

struct MixedDataset {
  std::vector<SynthPair> items;
  std::size_t nlr_count = 0;
  std::size_t tm_count = 0;
};

namespace detail {
/// Seeded bottom-k subsample that keeps the input's relative order.
inline std::vector<SynthPair> subsample(const std::vector<SynthPair>& items, std::size_t k, std::uint64_t seed) {
  if (k >= items.size()) return items;
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
  keyed.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) keyed.emplace_back(keyed_seed(seed, influence::pair_key(items[i])), i);
  std::nth_element(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < k; ++i) idx.push_back(keyed[i].second);
  std::sort(idx.begin(), idx.end());
  std::vector<SynthPair> out;
  for (auto i : idx) out.push_back(items[i]);
  return out;
}
}  // namespace detail

/// Downsamples the oversupplied side so |NLR|:|TM| = nlr:tm within one
/// instance, then interleaves by a seeded key. Never upsamples.
inline MixedDataset mix_pretrain(const std::vector<SynthPair>& nlr, const std::vector<SynthPair>& tm, MixRatio ratio,
                                 std::uint64_t seed) {
  if (ratio.nlr < 1 || ratio.tm < 1) throw InvalidArgument("mix_pretrain: ratio components must be >= 1");
  if (nlr.empty() || tm.empty()) throw InvalidArgument("mix_pretrain: both datasets must be non-empty");
  std::size_t n_nlr = nlr.size();
  std::size_t n_tm = tm.size();
  // Compare nlr/tm with a/b exactly in integers.
  const auto lhs = static_cast<unsigned __int128>(n_nlr) * ratio.tm;
  const auto rhs = static_cast<unsigned __int128>(n_tm) * ratio.nlr;
  if (lhs > rhs) {
    n_nlr = static_cast<std::size_t>(rhs / ratio.tm);
  } else if (lhs < rhs) {
    n_tm = static_cast<std::size_t>(lhs / ratio.nlr);
  }
  if (n_nlr == 0 || n_tm == 0) {
    throw InvalidArgument("mix_pretrain: " + std::to_string(nlr.size()) + " NLR / " + std::to_string(tm.size()) +
                          " TM instances cannot reach the ratio without upsampling");
  }
  MixedDataset out;
  auto a = detail::subsample(nlr, n_nlr, keyed_seed(seed, "mix-nlr"));
  auto b = detail::subsample(tm, n_tm, keyed_seed(seed, "mix-tm"));
  out.nlr_count = a.size();
  out.tm_count = b.size();
  std::vector<std::pair<std::uint64_t, SynthPair>> keyed;
  keyed.reserve(a.size() + b.size());
  const std::uint64_t order_seed = keyed_seed(seed, "mix-order");
  for (auto* side : {&a, &b}) {
    for (auto& p : *side) {
      const std::string key = std::string(prompts::short_name(p.setting)) + ":" + influence::pair_key(p);
      keyed.emplace_back(keyed_seed(order_seed, key), std::move(p));
    }
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  for (auto& [k, p] : keyed) out.items.push_back(std::move(p));
  return out;
}

// ---------------------------------------------------------------------------
// Packing

struct PackItem {
  std::string id;
  std::size_t tokens = 0;
};

struct Segment {
  std::string instance_id;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct PackedSequence {
  std::vector<Segment> segments;
  std::size_t length = 0;

  friend bool operator==(const PackedSequence&, const PackedSequence&) = default;
};

struct PackResult {
  std::size_t max_len = 2048;
  std::vector<PackedSequence> packs;
  std::vector<PackItem> dropped;  // longer than max_len
  std::string manifest_hash;
};

inline json pack_manifest_json(const PackResult& r) {
  json packs = json::array();
  for (const auto& p : r.packs) {
    json segs = json::array();
    for (const auto& s : p.segments) segs.push_back(json::array({s.instance_id, s.start, s.end}));
    packs.push_back({{"length", p.length}, {"segments", segs}});
  }
  json dropped = json::array();
  for (const auto& d : r.dropped) dropped.push_back({{"id", d.id}, {"tokens", d.tokens}, {"reason", "longer than max_len"}});
  return json{{"max_len", r.max_len}, {"tokenizer_version", kTokenizerVersion}, {"packs", packs}, {"dropped", dropped}};
}

namespace detail {
/// Max-segment tree over pack remaining capacities for first-fit lookup.
class CapacityTree {
 public:
  explicit CapacityTree(std::size_t n) : size_(1) {
    while (size_ < std::max<std::size_t>(n, 1)) size_ <<= 1;
    tree_.assign(2 * size_, 0);
  }
  void set(std::size_t i, std::size_t cap) {
    std::size_t pos = i + size_;
    tree_[pos] = cap;
    for (pos >>= 1; pos >= 1; pos >>= 1) tree_[pos] = std::max(tree_[2 * pos], tree_[2 * pos + 1]);
  }
  /// Lowest index with capacity >= need, or npos.
  std::size_t first_fit(std::size_t need) const {
    if (tree_[1] < need) return npos;
    std::size_t pos = 1;
    while (pos < size_) pos = tree_[2 * pos] >= need ? 2 * pos : 2 * pos + 1;
    return pos - size_;
  }
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::size_t size_;
  std::vector<std::size_t> tree_;
};
}  // namespace detail

/// First-fit-decreasing without splitting; items longer than max_len are
/// dropped and reported. Ties in length are ordered by id.
inline PackResult pack(std::vector<PackItem> items, std::size_t max_len = 2048) {
  if (max_len == 0) throw InvalidArgument("pack: max_len must be positive");
  PackResult r;
  r.max_len = max_len;
  std::sort(items.begin(), items.end(), [](const PackItem& a, const PackItem& b) {
    return a.tokens != b.tokens ? a.tokens > b.tokens : a.id < b.id;
  });
  detail::CapacityTree tree(items.size());
  for (auto& item : items) {
    if (item.tokens > max_len) {
      r.dropped.push_back(std::move(item));
      continue;
    }
    std::size_t idx = tree.first_fit(item.tokens);
    if (idx == detail::CapacityTree::npos || idx >= r.packs.size()) {
      idx = r.packs.size();
      r.packs.emplace_back();
    }
    auto& p = r.packs[idx];
    p.segments.push_back(Segment{item.id, p.length, p.length + item.tokens});
    p.length += item.tokens;
    tree.set(idx, max_len - p.length);
  }
  std::sort(r.dropped.begin(), r.dropped.end(), [](const PackItem& a, const PackItem& b) { return a.id < b.id; });
  r.manifest_hash = sha256_hex(pack_manifest_json(r).dump());
  return r;
}

/// Token count of an instance as the trainer sees it: problem then solution.
inline std::size_t instance_tokens(const SynthPair& p) { return count_tokens(p.problem) + count_tokens(p.solution); }

inline std::string instance_id(const SynthPair& p) {
  return std::string(prompts::short_name(p.setting)) + ":" + influence::pair_key(p);
}

/// Pack items for a dataset; `external_counts` (by instance id) overrides
/// the pipeline tokenizer when present.
inline std::vector<PackItem> pack_items(const std::vector<SynthPair>& items,
                                        const std::unordered_map<std::string, std::size_t>& external_counts = {}) {
  std::vector<PackItem> out;
  out.reserve(items.size());
  for (const auto& p : items) {
    const std::string id = instance_id(p);
    auto it = external_counts.find(id);
    out.push_back({id, it != external_counts.end() ? it->second : instance_tokens(p)});
  }
  return out;
}

/// Advisory trainer configuration that travels with the packed data.
inline json training_manifest(std::size_t max_len, MixRatio ratio, std::size_t instances, std::size_t packs,
                              std::size_t total_tokens) {
  return json{
      {"objective", "predict the solution given the problem (loss on solution tokens)"},
      {"max_len", max_len},
      {"mixture_ratio", std::to_string(ratio.nlr) + ":" + std::to_string(ratio.tm)},
      {"instances", instances},
      {"packs", packs},
      {"total_tokens", total_tokens},
      {"tokenizer", kTokenizerVersion},
      {"attention", "mask attention across segment boundaries listed in packs.json"},
      {"schedule",
       {{"kind", "warmup-stable-decay"},
        {"warmup_ratio", 0.03},
        {"stable_ratio", 0.85},
        {"max_lr", 1e-5},
        {"min_lr", 1e-6},
        {"batch_size", 512},
        {"epochs", 1}}},
      {"notes", "token counts use the pipeline tokenizer, not a model tokenizer; absolute totals are not comparable to "
                "model-tokenizer figures"}};
}

}  // namespace mathforge::dataset
