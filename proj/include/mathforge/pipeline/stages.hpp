#pragma once

#include <chrono>
#include <ctime>
#include <fcntl.h>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unistd.h>
#include <unordered_map>
#include <vector>

#include "mathforge/core/digest.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/corpus.hpp"
#include "mathforge/cost.hpp"
#include "mathforge/curation.hpp"
#include "mathforge/dataset.hpp"
#include "mathforge/influence.hpp"
#include "mathforge/pipeline/config.hpp"
#include "mathforge/prompts.hpp"
#include "mathforge/teacher.hpp"

namespace mathforge::pipeline {

inline constexpr std::string_view kToolVersion = "mathforge-0.1.0";
inline constexpr std::string_view kRunManifestName = "run_manifest.json";
inline constexpr std::string_view kTimingName = "timing.json";

using prompts::Setting;
using teacher::SynthPair;

struct RunManifest {
  std::string stage;
  std::map<std::string, std::string> inputs;   // upstream manifests and external files -> sha256
  std::map<std::string, std::string> outputs;  // path relative to the stage dir -> sha256
  std::map<std::string, std::uint64_t> seeds;
  json counts = json::object();
  std::string params_hash;
  std::map<std::string, std::string> versions;

  // Not persisted; the file stays byte-identical across cache hits.
  bool cache_hit = false;
  double wall_clock_s = 0.0;
};

inline void to_json(json& j, const RunManifest& m) {
  j = json{{"stage", m.stage},   {"inputs", m.inputs},           {"outputs", m.outputs},
           {"seeds", m.seeds},   {"counts", m.counts},           {"params_hash", m.params_hash},
           {"versions", m.versions}};
}

inline void from_json(const json& j, RunManifest& m) {
  m.stage = j.at("stage").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
  m.counts = j.at("counts");
  m.params_hash = j.at("params_hash").get<std::string>();
  m.versions = j.at("versions").get<std::map<std::string, std::string>>();
}

class StageError : public Error {
 public:
  using Error::Error;
};

/// Content hash of a file, or of a directory as its sorted (name, hash) list.
inline std::string content_hash_of(const fs::path& p) {
  if (!fs::is_directory(p)) return sha256_file(p.string());
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) entries.emplace_back(fs::relative(e.path(), p).generic_string(), sha256_file(e.path().string()));
  }
  std::sort(entries.begin(), entries.end());
  Sha256 h;
  for (const auto& [name, hash] : entries) h.update_field(name).update_field(hash);
  return h.hex();
}

// ---------------------------------------------------------------------------
// Stage context and helpers shared by stage bodies

class StageContext {
 public:
  StageContext(const PipelineConfig& cfg, fs::path out, const std::function<teacher::ChatClient(const teacher::EndpointProfile&)>& clients)
      : cfg_(cfg), out_(std::move(out)), clients_(clients) {}

  const PipelineConfig& cfg() const { return cfg_; }
  fs::path out(const std::string& name) const { return out_ / name; }
  fs::path upstream(std::string_view stage, const std::string& name) const {
    return cfg_.output_root / std::string(stage) / name;
  }
  teacher::ChatClient client(const teacher::EndpointProfile& p) const { return clients_(p); }

  json counts = json::object();

 private:
  const PipelineConfig& cfg_;
  fs::path out_;
  const std::function<teacher::ChatClient(const teacher::EndpointProfile&)>& clients_;
};

namespace stages {

inline prompts::PromptLibrary library(const PipelineConfig& cfg) {
  return cfg.prompts ? prompts::PromptLibrary::load(*cfg.prompts) : prompts::PromptLibrary::bundled();
}

inline std::vector<corpus::TextRecord> snapshot(const StageContext& ctx) {
  return corpus::read_snapshot(ctx.upstream("ingest", "snapshot"));
}

inline std::unordered_map<std::string, corpus::TextRecord> by_id(const std::vector<corpus::TextRecord>& records) {
  std::unordered_map<std::string, corpus::TextRecord> out;
  for (const auto& r : records) out.emplace(r.id, r);
  return out;
}

/// Downstream task instances: {"problem"|"question", "solution"|"answer", "id"?}.
inline std::vector<SynthPair> load_probes(const fs::path& path, Setting setting) {
  std::vector<SynthPair> out;
  for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    auto field = [&](const char* a, const char* b) -> std::string {
      if (j.contains(a) && j[a].is_string()) return j[a].get<std::string>();
      if (j.contains(b) && j[b].is_string()) return j[b].get<std::string>();
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": missing \"" + a + "\"");
    };
    SynthPair p;
    p.problem = field("problem", "question");
    p.solution = field("solution", "answer");
    p.setting = setting;
    p.template_id = "probe";
    p.record_id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : "line" + std::to_string(lineno);
    out.push_back(std::move(p));
  });
  if (out.empty()) throw IoError(path.string() + ": no probe instances");
  return out;
}

struct Assignment {
  Setting setting;
  std::string template_id;
  std::string record_id;
};

inline void to_json(json& j, const Assignment& a) {
  j = json{{"setting", prompts::short_name(a.setting)}, {"template_id", a.template_id}, {"record_id", a.record_id}};
}
inline void from_json(const json& j, Assignment& a) {
  a.setting = prompts::parse_setting(j.at("setting").get<std::string>());
  a.template_id = j.at("template_id").get<std::string>();
  a.record_id = j.at("record_id").get<std::string>();
}

inline std::vector<Assignment> to_assignments(const std::vector<std::pair<prompts::PromptTemplate, corpus::TextRecord>>& v) {
  std::vector<Assignment> out;
  for (const auto& [t, r] : v) out.push_back({t.setting, t.id, r.id});
  return out;
}

inline std::vector<std::pair<prompts::PromptTemplate, corpus::TextRecord>> resolve(
    const std::vector<Assignment>& as, const prompts::PromptLibrary& lib,
    const std::unordered_map<std::string, corpus::TextRecord>& records) {
  std::vector<std::pair<prompts::PromptTemplate, corpus::TextRecord>> out;
  for (const auto& a : as) {
    auto it = records.find(a.record_id);
    if (it == records.end()) throw StageError("assignment names unknown record '" + a.record_id + "'");
    out.emplace_back(lib.by_id(a.template_id), it->second);
  }
  return out;
}

inline std::vector<SynthPair> of_setting(const std::vector<SynthPair>& pairs, Setting s) {
  std::vector<SynthPair> out;
  for (const auto& p : pairs) {
    if (p.setting == s) out.push_back(p);
  }
  return out;
}

/// Runs one synthesis batch per setting and writes pairs, failures, usage.
inline void synthesize_into(StageContext& ctx, const teacher::EndpointProfile& profile,
                            const std::vector<Assignment>& assignments, const std::string& pairs_name) {
  const auto lib = library(ctx.cfg());
  const auto records = by_id(snapshot(ctx));
  const auto client = ctx.client(profile);
  std::vector<SynthPair> pairs;
  std::vector<teacher::Failure> failures;
  json usage = json::object();
  for (Setting s : prompts::kAllSettings) {
    std::vector<Assignment> mine;
    for (const auto& a : assignments) {
      if (a.setting == s) mine.push_back(a);
    }
    if (mine.empty()) continue;
    const auto batch = teacher::synthesize_batch(resolve(mine, lib, records), client, ctx.cfg().concurrency,
                                                 ctx.cfg().max_failure_rate);
    pairs.insert(pairs.end(), batch.pairs.begin(), batch.pairs.end());
    failures.insert(failures.end(), batch.failures.begin(), batch.failures.end());
    const std::string name(prompts::short_name(s));
    usage[name] = {{"calls", batch.usage.calls},
                   {"prompt_tokens", batch.usage.prompt_tokens},
                   {"completion_tokens", batch.usage.completion_tokens}};
    ctx.counts[name] = {{"requests", mine.size()}, {"pairs", batch.pairs.size()}, {"failures", batch.failures.size()}};
  }
  write_jsonl(ctx.out(pairs_name), pairs);
  write_jsonl(ctx.out("failures.jsonl"), failures);
  write_file_atomic(ctx.out("usage.json"), usage.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stage bodies

inline void ingest(StageContext& ctx) {
  std::vector<corpus::TextRecord> all;
  for (const auto& [source, path] : ctx.cfg().corpus) {
    auto loaded = corpus::load_records(path, source, true);
    all.insert(all.end(), loaded.records.begin(), loaded.records.end());
  }
  const std::size_t loaded = all.size();
  all = corpus::filter_quality(all, ctx.cfg().quality_min, ctx.cfg().quality_max);
  const auto m = corpus::write_snapshot(ctx.out("snapshot"), all);
  ctx.counts = {{"loaded", loaded}, {"kept", all.size()}, {"total_tokens", m.total_tokens}};
}

inline void sample_kd(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto lib = library(cfg);
  const auto records = snapshot(ctx);
  std::vector<Assignment> out;
  for (Setting s : prompts::kAllSettings) {
    const std::size_t n = s == Setting::natural_language_reasoning ? cfg.kd_size_nlr : cfg.kd_size_tm;
    const std::string name(prompts::short_name(s));
    const auto subset = corpus::sample_subset(records, n, keyed_seed(cfg.seed_sample, "kd-" + name));
    auto as = to_assignments(prompts::random_assign(lib, subset, s, keyed_seed(cfg.seed_assign, "kd")));
    ctx.counts[name] = as.size();
    out.insert(out.end(), as.begin(), as.end());
  }
  write_jsonl(ctx.out("assignments.jsonl"), out);
}

inline void kd_synthesize(StageContext& ctx) {
  synthesize_into(ctx, ctx.cfg().kd_teacher, read_jsonl<Assignment>(ctx.upstream("sample-kd", "assignments.jsonl")),
                  "pairs.jsonl");
}

inline void emit_kd(StageContext& ctx) {
  const auto pairs = read_jsonl<SynthPair>(ctx.upstream("kd-synthesize", "pairs.jsonl"));
  const auto ds = dataset::assemble_kd(pairs, dataset::Round::initial, library(ctx.cfg()), by_id(snapshot(ctx)));
  dataset::write_kd(ctx.out("kd"), ds);
  ctx.counts = {{"total", ds.manifest.total}, {"settings", ds.manifest.setting_counts}};
}

inline void candidate_synthesize(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto lib = library(cfg);
  const auto records = snapshot(ctx);
  const std::size_t pool = std::min(cfg.candidate_pool, records.size());
  std::vector<Assignment> as;
  for (Setting s : prompts::kAllSettings) {
    const std::string name(prompts::short_name(s));
    const auto subset = corpus::sample_subset(records, pool, keyed_seed(cfg.seed_sample, "pool-" + name));
    auto mine = to_assignments(prompts::random_assign(lib, subset, s, keyed_seed(cfg.seed_assign, "pool")));
    as.insert(as.end(), mine.begin(), mine.end());
  }
  synthesize_into(ctx, cfg.synthesizer, as, "candidates.jsonl");
  ctx.counts["pool_requested"] = cfg.candidate_pool;
  ctx.counts["pool"] = pool;
}

inline const fs::path& probes_path(const PipelineConfig& cfg, Setting s) {
  return s == Setting::natural_language_reasoning ? cfg.probes_nlr : cfg.probes_tm;
}

inline void train_ref(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto candidates = read_jsonl<SynthPair>(ctx.upstream("candidate-synthesize", "candidates.jsonl"));
  for (Setting s : prompts::kAllSettings) {
    const std::string name(prompts::short_name(s));
    const auto mine = of_setting(candidates, s);
    if (mine.empty()) throw StageError("train-ref: no " + name + " candidates");
    const auto probes = load_probes(probes_path(cfg, s), s);
    const auto subset = dataset::detail::subsample(mine, cfg.reference_subset, keyed_seed(cfg.seed_sample, "ref-" + name));
    std::vector<SynthPair> vocab_src = mine;
    vocab_src.insert(vocab_src.end(), probes.begin(), probes.end());
    const auto model = influence::train_reference(subset, influence::Vocabulary::from_pairs(vocab_src), cfg.train);
    write_file_atomic(ctx.out("ref_" + name + ".bin"), influence::serialize_model(model));
    ctx.counts[name] = {{"train_examples", subset.size()},
                        {"vocab", model.vocab_size()},
                        {"adapter_dim", model.adapter_dim()},
                        {"loss_first", model.loss_trace.front()},
                        {"loss_last", model.loss_trace.back()}};
  }
}

inline void score(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto candidates = read_jsonl<SynthPair>(ctx.upstream("candidate-synthesize", "candidates.jsonl"));
  for (Setting s : prompts::kAllSettings) {
    const std::string name(prompts::short_name(s));
    const auto model = influence::read_model(ctx.upstream("train-ref", "ref_" + name + ".bin"));
    influence::ScoringOptions opts;
    opts.projection = {cfg.seed_projection, 0, cfg.d_out};
    opts.normalize_before_mean = cfg.normalize_before_mean;
    const auto result = influence::score_candidates(model, of_setting(candidates, s), load_probes(probes_path(cfg, s), s), opts);
    write_file_atomic(ctx.out("features_" + name + ".bin"),
                      influence::serialize_features({cfg.seed_projection, model.adapter_dim(), cfg.d_out},
                                                    result.candidate_features));
    write_jsonl(ctx.out("scores_" + name + ".jsonl"), result.scores);
    ctx.counts[name] = result.scores.size();
  }
}

inline void select(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto candidates = read_jsonl<SynthPair>(ctx.upstream("candidate-synthesize", "candidates.jsonl"));
  std::unordered_map<std::string, const SynthPair*> by_key;
  for (const auto& c : candidates) by_key.emplace(std::string(prompts::short_name(c.setting)) + ":" + influence::pair_key(c), &c);
  json selected = json::array();
  std::vector<Assignment> as;
  for (Setting s : prompts::kAllSettings) {
    const std::string name(prompts::short_name(s));
    const auto scores = read_jsonl<influence::ValueScore>(ctx.upstream("score", "scores_" + name + ".jsonl"));
    std::unordered_map<std::string, double> value;
    for (const auto& v : scores) value[v.example_id] = v.value;
    const std::size_t k = std::min(cfg.k, scores.size());
    const auto top = influence::rank_topk(scores, k);
    for (std::size_t rank = 0; rank < top.size(); ++rank) {
      const SynthPair* p = by_key.at(name + ":" + top[rank]);
      as.push_back({s, p->template_id, p->record_id});
      selected.push_back(json{{"setting", name}, {"rank", rank + 1}, {"template_id", p->template_id},
                              {"record_id", p->record_id}, {"value", value.at(top[rank])}});
    }
    ctx.counts[name] = {{"k_requested", cfg.k}, {"k", k}, {"scored", scores.size()}};
  }
  write_jsonl(ctx.out("selected.jsonl"), selected);
  write_jsonl(ctx.out("assignments.jsonl"), as);
}

inline void boost_synthesize(StageContext& ctx) {
  synthesize_into(ctx, ctx.cfg().kd_teacher, read_jsonl<Assignment>(ctx.upstream("select", "assignments.jsonl")),
                  "pairs.jsonl");
}

inline void merge_kd(StageContext& ctx) {
  const auto initial = dataset::read_kd(ctx.upstream("emit-kd", "kd"));
  const auto pairs = read_jsonl<SynthPair>(ctx.upstream("boost-synthesize", "pairs.jsonl"));
  const auto boosted = dataset::assemble_kd(pairs, dataset::Round::boost, library(ctx.cfg()), by_id(snapshot(ctx)));
  const auto merged = dataset::merge_boost(initial, boosted.records);
  dataset::write_kd(ctx.out("kd"), merged);
  ctx.counts = {{"initial", initial.records.size()},
                {"boost", boosted.records.size()},
                {"total", merged.manifest.total},
                {"rounds", merged.manifest.round_counts}};
}

inline void corpus_synthesize(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto lib = library(cfg);
  const auto records = snapshot(ctx);
  std::vector<Assignment> as;
  for (Setting s : prompts::kAllSettings) {
    auto mine = to_assignments(prompts::random_assign(lib, records, s, keyed_seed(cfg.seed_assign, "corpus")));
    as.insert(as.end(), mine.begin(), mine.end());
  }
  synthesize_into(ctx, cfg.synthesizer, as, "pairs.jsonl");
}

inline void filter(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  const auto pairs = read_jsonl<SynthPair>(ctx.upstream("corpus-synthesize", "pairs.jsonl"));
  std::vector<std::string> protected_texts;
  for (const auto& t : cfg.tests) {
    auto more = curation::load_protected_texts(t);
    protected_texts.insert(protected_texts.end(), more.begin(), more.end());
  }
  const auto index = curation::build_ngram_index(protected_texts, cfg.ngram_n, "tests");
  curation::Executor executor(cfg.executor_config());
  json report = json::object();
  for (Setting s : prompts::kAllSettings) {
    const std::string name(prompts::short_name(s));
    auto [clean, contam] = curation::decontaminate(of_setting(pairs, s), index);
    auto [unique, dups] = curation::dedup(clean);
    json steps = json::array({contam, dups});
    std::vector<SynthPair> kept = std::move(unique);
    if (s == Setting::tool_manipulation) {
      auto [runnable, exec] = curation::filter_executable(kept, executor);
      steps.push_back(exec);
      kept = std::move(runnable);
    }
    report[name] = steps;
    write_jsonl(ctx.out(name + ".jsonl"), kept);
    ctx.counts[name] = {{"input", contam.input}, {"kept", kept.size()}};
  }
  write_file_atomic(ctx.out("report.json"), report.dump(2) + "\n");
}

inline void mix(StageContext& ctx) {
  const auto nlr = read_jsonl<SynthPair>(ctx.upstream("filter", "nlr.jsonl"));
  const auto tm = read_jsonl<SynthPair>(ctx.upstream("filter", "tm.jsonl"));
  const auto mixed = dataset::mix_pretrain(nlr, tm, ctx.cfg().ratio, ctx.cfg().seed_mix);
  write_jsonl(ctx.out("pretrain.jsonl"), mixed.items);
  ctx.counts = {{"nlr", mixed.nlr_count}, {"tm", mixed.tm_count}, {"total", mixed.items.size()}};
}

inline void pack(StageContext& ctx) {
  const auto items = read_jsonl<SynthPair>(ctx.upstream("mix", "pretrain.jsonl"));
  const auto packed = dataset::pack(dataset::pack_items(items), ctx.cfg().max_len);
  std::size_t tokens = 0;
  for (const auto& p : packed.packs) tokens += p.length;
  write_file_atomic(ctx.out("packs.json"), dataset::pack_manifest_json(packed).dump(2) + "\n");
  write_file_atomic(ctx.out("training_manifest.json"),
                    dataset::training_manifest(ctx.cfg().max_len, ctx.cfg().ratio, items.size() - packed.dropped.size(),
                                               packed.packs.size(), tokens)
                            .dump(2) +
                        "\n");
  ctx.counts = {{"instances", items.size()}, {"packs", packed.packs.size()}, {"dropped", packed.dropped.size()},
                {"tokens", tokens}, {"manifest_hash", packed.manifest_hash}};
}

/// Exact decimal num/den, truncated to `digits` fractional digits.
inline cost::Decimal truncated_ratio(std::size_t num, std::size_t den, int digits) {
  if (den == 0) return 0;
  unsigned __int128 scaled = num;
  for (int i = 0; i < digits; ++i) scaled *= 10;
  const auto q = static_cast<std::uint64_t>(scaled / den);
  return cost::Decimal(static_cast<std::int64_t>(q)).shifted(digits);
}

inline void cost_report(StageContext& ctx) {
  const auto& cfg = ctx.cfg();
  cost::PriceSheet prices;
  if (cfg.price_sheet) prices = cost::parse_price_sheet(json::parse(read_file(*cfg.price_sheet)));
  std::size_t calls = 0, in = 0, out = 0;
  for (std::string_view stage : {"kd-synthesize", "boost-synthesize"}) {
    const json usage = json::parse(read_file(ctx.upstream(stage, "usage.json")));
    for (const auto& [setting, u] : usage.items()) {
      calls += u.at("calls").get<std::size_t>();
      in += u.at("prompt_tokens").get<std::size_t>();
      out += u.at("completion_tokens").get<std::size_t>();
    }
  }
  cost::RunProfile run{"this run", truncated_ratio(in, calls, 2), truncated_ratio(out, calls, 2),
                       cost::Decimal(static_cast<std::int64_t>(calls)), cost::Decimal::parse(cfg.synth_hours),
                       cost::Decimal::parse(cfg.train_hours)};
  std::vector<cost::RunProfile> rows = cost::reference_profiles();
  rows.push_back(run);
  json j = json::array();
  for (const auto& r : rows) j.push_back(cost::profile_json(r, prices));
  write_file_atomic(ctx.out("cost.json"), j.dump(2) + "\n");
  write_file_atomic(ctx.out("cost.txt"),
                    cost::report(rows, prices) + "\nToken counts use the pipeline tokenizer; the reference rows are "
                                                 "the published profiles.\n");
  ctx.counts = {{"teacher_calls", calls}, {"reported_total_usd", cost::reported_total(run, prices)}};
}

}  // namespace stages

// ---------------------------------------------------------------------------
// Stage graph

struct StageDef {
  std::string_view name;
  std::vector<std::string_view> deps;
  std::function<std::map<std::string, fs::path>(const PipelineConfig&)> external;
  std::function<json(const PipelineConfig&)> params;
  std::function<std::map<std::string, std::uint64_t>(const PipelineConfig&)> seeds;
  std::function<void(StageContext&)> body;
  std::string_view boundary_after;  // external step that follows, if any
};

namespace detail {
inline json profile_params(const teacher::EndpointProfile& p) {
  return json{{"id", p.id},
              {"kind", p.kind == teacher::ProfileKind::mock ? "mock" : "live"},
              {"model", p.model},
              {"base_url", p.base_url},
              {"temperature", p.params.temperature},
              {"max_tokens", p.params.max_new_tokens}};
}

inline std::map<std::string, fs::path> with_prompts(const PipelineConfig& c, std::map<std::string, fs::path> m = {}) {
  m["prompts"] = c.prompts ? *c.prompts : prompts::PromptLibrary::bundled_path();
  return m;
}

inline std::map<std::string, fs::path> teacher_inputs(const PipelineConfig& c, const teacher::EndpointProfile& p) {
  auto m = with_prompts(c);
  if (p.kind == teacher::ProfileKind::mock) m[p.id + ".fixtures"] = p.fixture_dir;
  return m;
}

inline json synth_params(const PipelineConfig& c, const teacher::EndpointProfile& p) {
  return json{{"profile", profile_params(p)}, {"max_failure_rate", c.max_failure_rate}};
}
}  // namespace detail

inline const std::vector<StageDef>& stage_graph() {
  using C = PipelineConfig;
  using Seeds = std::map<std::string, std::uint64_t>;
  static const std::vector<StageDef> graph = {
      {"ingest", {},
       [](const C& c) {
         std::map<std::string, fs::path> m;
         for (const auto& [s, p] : c.corpus) m["corpus." + std::string(corpus::to_string(s))] = p;
         return m;
       },
       [](const C& c) { return json{{"quality", {c.quality_min, c.quality_max}}, {"normalization", corpus::kNormalizationVersion}}; },
       [](const C&) { return Seeds{}; }, stages::ingest, {}},
      {"sample-kd", {"ingest"}, [](const C& c) { return detail::with_prompts(c); },
       [](const C& c) { return json{{"kd_size_nlr", c.kd_size_nlr}, {"kd_size_tm", c.kd_size_tm}}; },
       [](const C& c) { return Seeds{{"sample", c.seed_sample}, {"assign", c.seed_assign}}; }, stages::sample_kd, {}},
      {"kd-synthesize", {"ingest", "sample-kd"}, [](const C& c) { return detail::teacher_inputs(c, c.kd_teacher); },
       [](const C& c) { return detail::synth_params(c, c.kd_teacher); }, [](const C&) { return Seeds{}; },
       stages::kd_synthesize, {}},
      {"emit-kd", {"ingest", "kd-synthesize"}, [](const C& c) { return detail::with_prompts(c); },
       [](const C&) { return json::object(); }, [](const C&) { return Seeds{}; }, stages::emit_kd,
       "train the synthesizer on emit-kd/kd/kd.jsonl and serve it as the [synthesizer] profile"},
      {"candidate-synthesize", {"ingest", "emit-kd"}, [](const C& c) { return detail::teacher_inputs(c, c.synthesizer); },
       [](const C& c) {
         auto j = detail::synth_params(c, c.synthesizer);
         j["candidate_pool"] = c.candidate_pool;
         return j;
       },
       [](const C& c) { return Seeds{{"sample", c.seed_sample}, {"assign", c.seed_assign}}; },
       stages::candidate_synthesize, {}},
      {"train-ref", {"candidate-synthesize"},
       [](const C& c) { return std::map<std::string, fs::path>{{"probes.nlr", c.probes_nlr}, {"probes.tm", c.probes_tm}}; },
       [](const C& c) {
         return json{{"reference_subset", c.reference_subset}, {"rank", c.train.rank}, {"lr", c.train.lr},
                     {"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"init_scale", c.train.init_scale},
                     {"smoothing", c.train.smoothing}};
       },
       [](const C& c) { return Seeds{{"sample", c.seed_sample}, {"train", c.seed_train}}; }, stages::train_ref, {}},
      {"score", {"candidate-synthesize", "train-ref"},
       [](const C& c) { return std::map<std::string, fs::path>{{"probes.nlr", c.probes_nlr}, {"probes.tm", c.probes_tm}}; },
       [](const C& c) { return json{{"d_out", c.d_out}, {"normalize_before_mean", c.normalize_before_mean}}; },
       [](const C& c) { return Seeds{{"projection", c.seed_projection}}; }, stages::score, {}},
      {"select", {"candidate-synthesize", "score"}, [](const C&) { return std::map<std::string, fs::path>{}; },
       [](const C& c) { return json{{"k", c.k}}; }, [](const C&) { return Seeds{}; }, stages::select, {}},
      {"boost-synthesize", {"ingest", "select"}, [](const C& c) { return detail::teacher_inputs(c, c.kd_teacher); },
       [](const C& c) { return detail::synth_params(c, c.kd_teacher); }, [](const C&) { return Seeds{}; },
       stages::boost_synthesize, {}},
      {"merge-kd", {"ingest", "emit-kd", "boost-synthesize"}, [](const C& c) { return detail::with_prompts(c); },
       [](const C& c) { return json{{"boost_rounds", c.boost_rounds}}; }, [](const C&) { return Seeds{}; },
       stages::merge_kd, "retrain the synthesizer on merge-kd/kd/kd.jsonl and serve it as the [synthesizer] profile"},
      {"corpus-synthesize", {"ingest", "merge-kd"}, [](const C& c) { return detail::teacher_inputs(c, c.synthesizer); },
       [](const C& c) { return detail::synth_params(c, c.synthesizer); },
       [](const C& c) { return Seeds{{"assign", c.seed_assign}}; }, stages::corpus_synthesize, {}},
      {"filter", {"corpus-synthesize"},
       [](const C& c) {
         std::map<std::string, fs::path> m;
         for (std::size_t i = 0; i < c.tests.size(); ++i) m["tests." + std::to_string(i)] = c.tests[i];
         return m;
       },
       [](const C& c) {
         return json{{"ngram_n", c.ngram_n}, {"tokenizer", kTokenizerVersion}, {"exec_command", c.exec.command},
                     {"exec_timeout_ms", c.exec.timeout_ms}, {"exec_memory_mb", c.exec.memory_mb},
                     {"exec_strict", c.exec.strict}};
       },
       [](const C&) { return Seeds{}; }, stages::filter, {}},
      {"mix", {"filter"}, [](const C&) { return std::map<std::string, fs::path>{}; },
       [](const C& c) { return json{{"ratio", {c.ratio.nlr, c.ratio.tm}}}; },
       [](const C& c) { return Seeds{{"mix", c.seed_mix}}; }, stages::mix, {}},
      {"pack", {"mix"}, [](const C&) { return std::map<std::string, fs::path>{}; },
       [](const C& c) { return json{{"max_len", c.max_len}}; }, [](const C&) { return Seeds{}; }, stages::pack, {}},
      {"cost-report", {"kd-synthesize", "boost-synthesize", "pack"},
       [](const C& c) {
         std::map<std::string, fs::path> m;
         if (c.price_sheet) m["prices"] = *c.price_sheet;
         return m;
       },
       [](const C& c) { return json{{"synth_hours", c.synth_hours}, {"train_hours", c.train_hours}}; },
       [](const C&) { return Seeds{}; }, stages::cost_report, {}},
  };
  return graph;
}

inline const StageDef& find_stage(std::string_view name) {
  for (const auto& s : stage_graph()) {
    if (s.name == name) return s;
  }
  throw InvalidArgument("unknown stage '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Runner

enum class StageState { missing, blocked, fresh, stale, corrupt };

inline std::string_view to_string(StageState s) {
  switch (s) {
    case StageState::missing: return "not run";
    case StageState::blocked: return "blocked";
    case StageState::fresh: return "up to date";
    case StageState::stale: return "stale";
    case StageState::corrupt: return "corrupt";
  }
  return "?";
}

struct StageStatus {
  std::string stage;
  StageState state;
  std::string detail;
};

using ClientFactory = std::function<teacher::ChatClient(const teacher::EndpointProfile&)>;

/// Mock profiles only; live profiles need a factory with an HTTP transport.
inline ClientFactory offline_clients() {
  return [](const teacher::EndpointProfile& p) {
    if (p.kind != teacher::ProfileKind::mock) {
      throw teacher::TeacherError(teacher::TeacherErrorKind::configuration,
                                  "profile '" + p.id + "' is live but no HTTP transport is configured");
    }
    return teacher::ChatClient(p);
  };
}

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg, ClientFactory clients = offline_clients())
      : cfg_(std::move(cfg)), clients_(std::move(clients)) {}

  const PipelineConfig& config() const { return cfg_; }
  fs::path stage_dir(std::string_view stage) const { return cfg_.output_root / std::string(stage); }
  fs::path manifest_path(std::string_view stage) const { return stage_dir(stage) / std::string(kRunManifestName); }
  fs::path event_log() const { return cfg_.output_root / "events.jsonl"; }

  std::optional<RunManifest> read_manifest(std::string_view stage) const {
    const fs::path p = manifest_path(stage);
    if (!fs::exists(p)) return std::nullopt;
    try {
      return json::parse(read_file(p)).get<RunManifest>();
    } catch (const json::exception& e) {
      throw StageError(p.string() + ": unreadable manifest: " + e.what());
    }
  }

  /// Empty when every recorded output matches the bytes on disk.
  std::string verify_outputs(std::string_view stage, const RunManifest& m) const {
    for (const auto& [rel, hash] : m.outputs) {
      const fs::path p = stage_dir(stage) / rel;
      if (!fs::exists(p)) return "output " + rel + " is missing";
      if (sha256_file(p.string()) != hash) return "output " + rel + " does not match its recorded hash";
    }
    return {};
  }

  /// Current input hashes; throws StageError if an upstream manifest is
  /// missing or its outputs no longer match it.
  std::map<std::string, std::string> current_inputs(const StageDef& def) const {
    std::map<std::string, std::string> inputs;
    for (auto dep : def.deps) {
      auto m = read_manifest(dep);
      if (!m) {
        throw StageError("stage '" + std::string(def.name) + "': missing upstream manifest for '" + std::string(dep) +
                         "' (run it first)");
      }
      if (auto bad = verify_outputs(dep, *m); !bad.empty()) {
        throw StageError("stage '" + std::string(def.name) + "': stale upstream manifest for '" + std::string(dep) +
                         "': " + bad);
      }
      inputs["stage:" + std::string(dep)] = sha256_file(manifest_path(dep).string());
    }
    for (const auto& [name, path] : def.external(cfg_)) {
      if (!fs::exists(path)) throw StageError("stage '" + std::string(def.name) + "': input " + name + " missing: " + path.string());
      inputs[name] = content_hash_of(path);
    }
    return inputs;
  }

  std::string params_hash(const StageDef& def) const {
    return sha256_hex(json{{"tool", kToolVersion}, {"params", def.params(cfg_)}}.dump());
  }

  RunManifest run_stage(std::string_view name, bool force = false) {
    const StageDef& def = find_stage(name);
    fs::create_directories(cfg_.output_root);
    const auto started = std::chrono::steady_clock::now();
    std::map<std::string, std::string> inputs;
    try {
      inputs = current_inputs(def);
    } catch (const Error& e) {
      log({{"event", "stage_failed"}, {"stage", name}, {"error", e.what()}});
      throw;
    }
    const std::string phash = params_hash(def);
    const auto seeds = def.seeds(cfg_);

    if (!force) {
      if (auto prev = read_manifest(name);
          prev && prev->inputs == inputs && prev->params_hash == phash && prev->seeds == seeds &&
          verify_outputs(name, *prev).empty()) {
        prev->cache_hit = true;
        log({{"event", "cache_hit"}, {"stage", name}, {"manifest", sha256_file(manifest_path(name).string())}});
        return *prev;
      }
    }

    log({{"event", "stage_started"}, {"stage", name}});
    RunManifest m;
    m.stage = std::string(name);
    m.inputs = std::move(inputs);
    m.params_hash = phash;
    m.seeds = seeds;
    m.versions = {{"tool", std::string(kToolVersion)},
                  {"tokenizer", std::string(kTokenizerVersion)},
                  {"normalization", std::string(corpus::kNormalizationVersion)}};
    try {
      StagingDir staging(stage_dir(name));
      StageContext ctx(cfg_, staging.path(), clients_);
      def.body(ctx);
      m.counts = ctx.counts;
      for (const auto& e : fs::recursive_directory_iterator(staging.path())) {
        if (e.is_regular_file()) {
          m.outputs[fs::relative(e.path(), staging.path()).generic_string()] = sha256_file(e.path().string());
        }
      }
      m.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      write_file_atomic(staging.path() / std::string(kRunManifestName), json(m).dump(2) + "\n");
      write_file_atomic(staging.path() / std::string(kTimingName),
                        json{{"wall_clock_s", m.wall_clock_s}, {"finished_at", now_iso()}}.dump(2) + "\n");
      staging.commit();
    } catch (const teacher::BatchAborted& e) {
      preserve_failures(name, e.report().failures);
      log({{"event", "stage_failed"}, {"stage", name}, {"error", e.what()}});
      throw;
    } catch (const std::exception& e) {
      log({{"event", "stage_failed"}, {"stage", name}, {"error", e.what()}});
      throw;
    }
    // Exit success only after the published manifest re-verifies.
    auto published = read_manifest(name);
    if (!published || json(*published) != json(m) || !verify_outputs(name, m).empty()) {
      throw StageError("stage '" + std::string(name) + "': published outputs failed verification");
    }
    log({{"event", "stage_finished"}, {"stage", name}, {"wall_clock_s", m.wall_clock_s},
         {"manifest", sha256_file(manifest_path(name).string())}});
    if (!def.boundary_after.empty()) log({{"event", "external_step"}, {"after", name}, {"note", def.boundary_after}});
    return m;
  }

  std::vector<RunManifest> run_all(bool force = false) {
    std::vector<RunManifest> out;
    for (const auto& def : stage_graph()) out.push_back(run_stage(def.name, force));
    return out;
  }

  std::vector<StageStatus> status() const {
    std::vector<StageStatus> out;
    for (const auto& def : stage_graph()) {
      StageStatus st{std::string(def.name), StageState::missing, {}};
      std::optional<RunManifest> m;
      try {
        m = read_manifest(def.name);
      } catch (const StageError& e) {
        st.state = StageState::corrupt;
        st.detail = e.what();
        out.push_back(st);
        continue;
      }
      if (!m) {
        out.push_back(st);
        continue;
      }
      if (auto bad = verify_outputs(def.name, *m); !bad.empty()) {
        st.state = StageState::corrupt;
        st.detail = bad;
      } else {
        try {
          const auto inputs = current_inputs(def);
          const bool same = inputs == m->inputs && params_hash(def) == m->params_hash && def.seeds(cfg_) == m->seeds;
          st.state = same ? StageState::fresh : StageState::stale;
          if (!same) st.detail = "inputs or parameters changed since the last run";
        } catch (const StageError& e) {
          st.state = StageState::blocked;
          st.detail = e.what();
        }
      }
      out.push_back(st);
    }
    return out;
  }

 private:
  static std::string now_iso() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  /// One write(2) per event on an O_APPEND descriptor, so lines never interleave.
  void log(json event) const {
    event["ts"] = now_iso();
    const std::string line = event.dump() + "\n";
    fs::create_directories(cfg_.output_root);
    const int fd = ::open(event_log().c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) return;
    [[maybe_unused]] auto n = ::write(fd, line.data(), line.size());
    ::close(fd);
  }

  void preserve_failures(std::string_view stage, const std::vector<teacher::Failure>& failures) const {
    write_jsonl(cfg_.output_root / "logs" / (std::string(stage) + ".failures.jsonl"), failures);
  }

  PipelineConfig cfg_;
  ClientFactory clients_;
};

}  // namespace mathforge::pipeline
