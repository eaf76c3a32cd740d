#include <CLI11.hpp>
#include <iostream>

#include "mathforge/cost.hpp"
#include "mathforge/curation.hpp"
#include "mathforge/influence.hpp"
#include "mathforge/pipeline/config.hpp"
#include "mathforge/pipeline/demo.hpp"
#include "mathforge/pipeline/stages.hpp"
#include "mathforge/prompts.hpp"
#include "mathforge/teacher_http.hpp"

namespace {

using namespace mathforge;
using teacher::SynthPair;

pipeline::Pipeline make_pipeline(const std::string& config) {
  return pipeline::Pipeline(pipeline::validate_config(config),
                            [](const teacher::EndpointProfile& p) { return teacher::make_client(p); });
}

void print_manifest(const pipeline::RunManifest& m) {
  std::cout << m.stage << ": " << (m.cache_hit ? "cache hit" : "done");
  if (!m.cache_hit) std::cout << " in " << m.wall_clock_s << " s";
  std::cout << "  " << m.counts.dump() << "\n";
}

void write_pairs(const std::string& path, const std::vector<SynthPair>& pairs) {
  if (path == "-") {
    std::cout << to_jsonl(pairs);
  } else {
    write_jsonl(path, pairs);
  }
}

void print_report(const curation::FilterReport& r) {
  std::cerr << "input " << r.input << ", kept " << r.kept << ", dropped " << r.dropped() << "\n";
  for (const auto& d : r.drops) std::cerr << "  " << d.id << ": " << d.reason << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mathforge: data synthesis pipeline toolkit"};
  app.require_subcommand(1);

  // Pipeline stages.
  std::string config;
  bool force = false;
  std::vector<std::pair<CLI::App*, std::string>> stage_cmds;
  // train-ref and score double as module commands; --config selects stage mode.
  auto is_dual = [](std::string_view n) { return n == "train-ref" || n == "score"; };
  for (const auto& def : pipeline::stage_graph()) {
    if (is_dual(def.name)) continue;
    auto* sub = app.add_subcommand(std::string(def.name), "Run the " + std::string(def.name) + " stage");
    sub->add_option("--config", config, "Pipeline config file")->required()->check(CLI::ExistingFile);
    sub->add_flag("--force", force, "Re-run even when inputs are unchanged");
    stage_cmds.emplace_back(sub, std::string(def.name));
  }
  auto* run = app.add_subcommand("run", "Run every stage in order");
  bool all = false;
  run->add_flag("--all", all, "Run the full stage graph")->required();
  run->add_option("--config", config, "Pipeline config file")->required()->check(CLI::ExistingFile);
  run->add_flag("--force", force, "Re-run even when inputs are unchanged");
  auto* status = app.add_subcommand("status", "Show per-stage state");
  status->add_option("--config", config, "Pipeline config file")->required()->check(CLI::ExistingFile);
  auto* validate = app.add_subcommand("validate", "Check a config file and print the normalized values");
  validate->add_option("--config", config, "Pipeline config file")->required();

  auto* init_demo = app.add_subcommand("init-demo", "Write the demo corpus, fixtures and config");
  std::string demo_dir;
  init_demo->add_option("dir", demo_dir, "Target directory")->required();

  // prompts
  auto* prompts_cmd = app.add_subcommand("prompts", "Inspect the prompt library");
  prompts_cmd->require_subcommand(1);
  std::string prompt_file;
  prompts_cmd->add_option("--file", prompt_file, "Prompt file (default: bundled)");
  auto* prompts_list = prompts_cmd->add_subcommand("list", "List templates");
  auto* prompts_render = prompts_cmd->add_subcommand("render", "Render one template against one record");
  std::string setting_name, stage_name, record_id, corpus_file, source_name = "webpages";
  prompts_render->add_option("--setting", setting_name)->required();
  prompts_render->add_option("--stage", stage_name)->required();
  prompts_render->add_option("--record-id", record_id)->required();
  prompts_render->add_option("--corpus", corpus_file, "Line-delimited records")->required()->check(CLI::ExistingFile);
  prompts_render->add_option("--source", source_name);

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "Run one setting's prompts through a teacher profile");
  std::string profile_file, in_file, out_file = "-";
  std::size_t concurrency = 4;
  std::uint64_t seed = 0;
  double max_failure_rate = 0.05;
  synth->add_option("--setting", setting_name)->required();
  synth->add_option("--profile", profile_file, "Profile file with one [section]")->required()->check(CLI::ExistingFile);
  synth->add_option("--in", in_file, "Line-delimited corpus records")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out_file);
  synth->add_option("--concurrency", concurrency);
  synth->add_option("--seed", seed);
  synth->add_option("--source", source_name);
  synth->add_option("--max-failure-rate", max_failure_rate);

  // influence
  auto* train_ref = app.add_subcommand("train-ref", "Train a reference model on SynthPair lines");
  influence::TrainConfig tcfg;
  std::string model_file, probes_file, extra_vocab;
  train_ref->add_option("--config", config, "Pipeline config: run the train-ref stage")->check(CLI::ExistingFile);
  train_ref->add_flag("--force", force);
  train_ref->add_option("--in", in_file)->check(CLI::ExistingFile);
  train_ref->add_option("--out", model_file);
  train_ref->add_option("--vocab-from", extra_vocab, "More SynthPair lines whose tokens join the vocabulary");
  train_ref->add_option("--rank", tcfg.rank);
  train_ref->add_option("--lr", tcfg.lr);
  train_ref->add_option("--epochs", tcfg.epochs);
  train_ref->add_option("--batch-size", tcfg.batch_size);
  train_ref->add_option("--seed", tcfg.seed);

  auto* score = app.add_subcommand("score", "Score candidates against downstream probes");
  std::string candidates_file, features_file;
  std::size_t k = 2000, d_out = 4096;
  bool normalize = false;
  score->add_option("--config", config, "Pipeline config: run the score stage")->check(CLI::ExistingFile);
  score->add_flag("--force", force);
  score->add_option("--model", model_file)->check(CLI::ExistingFile);
  score->add_option("--candidates", candidates_file)->check(CLI::ExistingFile);
  score->add_option("--probes", probes_file)->check(CLI::ExistingFile);
  score->add_option("--k", k);
  score->add_option("--d-out", d_out);
  score->add_option("--seed", seed);
  score->add_option("--normalize-before-mean", normalize);
  score->add_option("--out", out_file, "Scores file (line-delimited id, value)");
  score->add_option("--features", features_file, "Feature store output");

  auto* oracle = app.add_subcommand("oracle", "Probe-loss decrease after one step on each training example");
  double step_lr = 1e-3;
  oracle->add_option("--model", model_file)->required()->check(CLI::ExistingFile);
  oracle->add_option("--train", candidates_file)->required()->check(CLI::ExistingFile);
  oracle->add_option("--probes", probes_file)->required()->check(CLI::ExistingFile);
  oracle->add_option("--step-lr", step_lr);

  // curation
  auto* decontam = app.add_subcommand("decontam", "Drop items sharing an n-gram with protected test sets");
  std::vector<std::string> tests;
  std::size_t n = 10;
  decontam->add_option("--tests", tests)->required()->check(CLI::ExistingFile);
  decontam->add_option("--n", n);
  decontam->add_option("--in", in_file)->required()->check(CLI::ExistingFile);
  decontam->add_option("--out", out_file);

  auto* dedup = app.add_subcommand("dedup", "Drop exact duplicates after normalization");
  dedup->add_option("--in", in_file)->required()->check(CLI::ExistingFile);
  dedup->add_option("--out", out_file);

  auto* exec_filter = app.add_subcommand("exec-filter", "Keep tool-manipulation pairs whose programs run");
  curation::ExecutorConfig ecfg;
  std::size_t timeout_ms = 10000;
  exec_filter->add_option("--in", in_file)->required()->check(CLI::ExistingFile);
  exec_filter->add_option("--out", out_file);
  exec_filter->add_flag("--strict", ecfg.strict, "Also require the declared output");
  exec_filter->add_option("--timeout-ms", timeout_ms);
  exec_filter->add_option("--workers", ecfg.workers);

  // cost
  auto* cost_cmd = app.add_subcommand("cost", "Print a cost report");
  std::string prices_file;
  bool as_json = false;
  cost_cmd->add_option("--profile", profile_file, "Run profiles (JSON); default: the reference rows")
      ->check(CLI::ExistingFile);
  cost_cmd->add_option("--prices", prices_file, "Price sheet override (JSON)")->check(CLI::ExistingFile);
  cost_cmd->add_flag("--json", as_json);

  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [sub, name] : stage_cmds) {
      if (sub->parsed()) {
        print_manifest(make_pipeline(config).run_stage(name, force));
        return 0;
      }
    }
    if (run->parsed()) {
      auto p = make_pipeline(config);
      for (const auto& def : pipeline::stage_graph()) {
        print_manifest(p.run_stage(def.name, force));
        if (!def.boundary_after.empty()) std::cout << "  (external step: " << def.boundary_after << ")\n";
      }
      return 0;
    }
    if (status->parsed()) {
      bool ok = true;
      for (const auto& s : make_pipeline(config).status()) {
        std::cout << s.stage << ": " << pipeline::to_string(s.state);
        if (!s.detail.empty()) std::cout << " (" << s.detail << ")";
        std::cout << "\n";
        ok &= s.state == pipeline::StageState::fresh;
      }
      return ok ? 0 : 1;
    }
    if (validate->parsed()) {
      const auto c = pipeline::validate_config(config);
      std::cout << "ok: output_root=" << c.output_root.string() << " k=" << c.k << " d_out=" << c.d_out
                << " ratio=" << c.ratio.nlr << ":" << c.ratio.tm << " max_len=" << c.max_len << " ngram_n=" << c.ngram_n
                << "\n";
      return 0;
    }
    if (init_demo->parsed()) {
      std::cout << demo::write_demo(demo_dir).string() << "\n";
      return 0;
    }
    if (prompts_cmd->parsed()) {
      const auto lib = prompt_file.empty() ? prompts::PromptLibrary::bundled() : prompts::PromptLibrary::load(prompt_file);
      if (prompts_list->parsed()) {
        for (const auto& t : lib.all()) {
          std::cout << t.id << "\t" << prompts::short_name(t.setting) << "\t" << prompts::to_string(t.stage) << "\t"
                    << t.provenance << "\n";
        }
        return 0;
      }
      if (prompts_render->parsed()) {
        const auto records = corpus::load_records(corpus_file, corpus::parse_source(source_name)).records;
        for (const auto& r : records) {
          if (r.id == record_id) {
            const auto& t = lib.get(prompts::parse_setting(setting_name), prompts::parse_stage(stage_name));
            std::cout << prompts::render(t, r).body << "\n";
            return 0;
          }
        }
        throw InvalidArgument("no record with id '" + record_id + "'");
      }
    }
    if (synth->parsed()) {
      const auto profile = pipeline::load_profile(profile_file);
      const auto records = corpus::load_records(in_file, corpus::parse_source(source_name)).records;
      const auto inputs =
          prompts::random_assign(prompts::PromptLibrary::bundled(), records, prompts::parse_setting(setting_name), seed);
      const auto result = teacher::synthesize_batch(inputs, teacher::make_client(profile), concurrency, max_failure_rate);
      write_pairs(out_file, result.pairs);
      std::cerr << result.pairs.size() << " pairs, " << result.failures.size() << " failures\n";
      for (const auto& f : result.failures) std::cerr << "  " << f.request_id << ": " << f.reason << "\n";
      return 0;
    }
    for (auto* sub : {train_ref, score}) {
      if (sub->parsed() && !config.empty()) {
        print_manifest(make_pipeline(config).run_stage(sub->get_name(), force));
        return 0;
      }
    }
    if (train_ref->parsed()) {
      if (in_file.empty() || model_file.empty()) throw InvalidArgument("train-ref needs --in and --out (or --config)");
      const auto pairs = read_jsonl<SynthPair>(in_file);
      auto vocab_src = pairs;
      if (!extra_vocab.empty()) {
        auto more = read_jsonl<SynthPair>(extra_vocab);
        vocab_src.insert(vocab_src.end(), more.begin(), more.end());
      }
      const auto model = influence::train_reference(pairs, influence::Vocabulary::from_pairs(vocab_src), tcfg);
      write_file_atomic(model_file, influence::serialize_model(model));
      std::cout << "vocab " << model.vocab_size() << ", adapter dim " << model.adapter_dim() << ", loss "
                << model.loss_trace.front() << " -> " << model.loss_trace.back() << "\n";
      return 0;
    }
    if (score->parsed()) {
      if (model_file.empty() || candidates_file.empty() || probes_file.empty()) {
        throw InvalidArgument("score needs --model, --candidates and --probes (or --config)");
      }
      const auto model = influence::read_model(model_file);
      const auto candidates = read_jsonl<SynthPair>(candidates_file);
      const auto probes = read_jsonl<SynthPair>(probes_file);
      influence::ScoringOptions opts;
      opts.projection = {seed, 0, d_out};
      opts.normalize_before_mean = normalize;
      const auto result = influence::score_candidates(model, candidates, probes, opts);
      if (!features_file.empty()) {
        write_file_atomic(features_file, influence::serialize_features({seed, model.adapter_dim(), d_out},
                                                                       result.candidate_features));
      }
      if (out_file != "-") write_jsonl(out_file, result.scores);
      for (const auto& id : influence::rank_topk(result.scores, std::min(k, result.scores.size()))) {
        std::cout << id << "\n";
      }
      return 0;
    }
    if (oracle->parsed()) {
      const auto model = influence::read_model(model_file);
      const auto train = read_jsonl<SynthPair>(candidates_file);
      const auto probes = read_jsonl<SynthPair>(probes_file);
      for (const auto& t : train) {
        for (const auto& p : probes) {
          std::cout << json{{"train", influence::pair_key(t)}, {"probe", influence::pair_key(p)},
                            {"loss_decrease", influence::tracin_oracle(model, t, p, step_lr)}}
                           .dump()
                    << "\n";
        }
      }
      return 0;
    }
    if (decontam->parsed()) {
      std::vector<std::string> texts;
      for (const auto& t : tests) {
        auto more = curation::load_protected_texts(t);
        texts.insert(texts.end(), more.begin(), more.end());
      }
      auto [kept, report] = curation::decontaminate(read_jsonl<SynthPair>(in_file), curation::build_ngram_index(texts, n));
      write_pairs(out_file, kept);
      print_report(report);
      return 0;
    }
    if (dedup->parsed()) {
      auto [kept, report] = curation::dedup(read_jsonl<SynthPair>(in_file));
      write_pairs(out_file, kept);
      print_report(report);
      return 0;
    }
    if (exec_filter->parsed()) {
      ecfg.timeout = std::chrono::milliseconds(timeout_ms);
      curation::Executor executor(ecfg);
      auto [kept, report] = curation::filter_executable(read_jsonl<SynthPair>(in_file), executor);
      write_pairs(out_file, kept);
      print_report(report);
      return 0;
    }
    if (cost_cmd->parsed()) {
      const cost::PriceSheet prices =
          prices_file.empty() ? cost::PriceSheet{} : cost::parse_price_sheet(json::parse(read_file(prices_file)));
      const auto profiles =
          profile_file.empty() ? cost::reference_profiles() : cost::parse_profiles(json::parse(read_file(profile_file)));
      if (as_json) {
        json j = json::array();
        for (const auto& p : profiles) j.push_back(cost::profile_json(p, prices));
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << cost::report(profiles, prices);
      }
      return 0;
    }
  } catch (const pipeline::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
