#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"
#include "mathforge/core/jsonl.hpp"
#include "mathforge/core/parallel.hpp"
#include "mathforge/core/random.hpp"
#include "mathforge/teacher.hpp"
#include "mathforge/tokenizer.hpp"

namespace mathforge::influence {

using teacher::SynthPair;

/// Stable identifier of a synthetic instance: its (prompt, source text) key.
inline std::string pair_key(const SynthPair& p) { return p.template_id + "@" + p.record_id; }

// ---------------------------------------------------------------------------
// Vocabulary and tokenization

class Vocabulary {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr int kUnkIndex = 0;

  Vocabulary() { add(std::string(kUnk)); }

  /// Index 0 is <unk>; the remaining tokens follow in byte order.
  static Vocabulary from_texts(const std::vector<std::string>& texts) {
    std::vector<std::string> toks;
    for (const auto& t : texts) {
      tokenize_into(t, [&](std::string_view tok) { toks.emplace_back(tok); });
    }
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    Vocabulary v;
    for (auto& t : toks) {
      if (t != kUnk) v.add(std::move(t));
    }
    return v;
  }

  static Vocabulary from_pairs(const std::vector<SynthPair>& pairs) {
    std::vector<std::string> texts;
    texts.reserve(2 * pairs.size());
    for (const auto& p : pairs) {
      texts.push_back(p.problem);
      texts.push_back(p.solution);
    }
    return from_texts(texts);
  }

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
      if (t != kUnk && !v.index_.contains(t)) v.add(t);
    }
    return v;
  }

  int lookup(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    return it == index_.end() ? kUnkIndex : it->second;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void add(std::string tok) {
    index_.emplace(tok, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(tok));
  }

  std::unordered_map<std::string, int> index_;
  std::vector<std::string> tokens_;
};

struct TokenizedPair {
  std::vector<int> tokens;
  std::size_t solution_start = 0;  // index of the first solution token
};

/// Problem tokens followed by solution tokens; loss is taken only on
/// positions >= solution_start.
inline TokenizedPair tokenize_pair(const SynthPair& pair, const Vocabulary& vocab) {
  if (pair.problem.empty() || pair.solution.empty()) {
    throw InvalidArgument("tokenize_pair: problem and solution must be non-empty");
  }
  TokenizedPair out;
  tokenize_into(pair.problem, [&](std::string_view t) { out.tokens.push_back(vocab.lookup(t)); });
  out.solution_start = out.tokens.size();
  tokenize_into(pair.solution, [&](std::string_view t) { out.tokens.push_back(vocab.lookup(t)); });
  return out;
}

// ---------------------------------------------------------------------------
// Reference model: bigram logits W0 (frozen) + low-rank adapter A*B.

struct TrainConfig {
  std::size_t rank = 4;
  double lr = 1.0;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double init_scale = 0.5;  // stddev of A's entries; B starts at zero
  double smoothing = 1.0;   // add-alpha smoothing of the bigram base
};

class ReferenceModel {
 public:
  ReferenceModel() = default;

  /// Builds a model from explicit tables; sizes must be V*V, V*r, r*V.
  ReferenceModel(Vocabulary vocab, std::size_t rank, std::vector<double> base, std::vector<double> a,
                 std::vector<double> b)
      : vocab_(std::move(vocab)), rank_(rank), base_(std::move(base)), a_(std::move(a)), b_(std::move(b)) {
    const std::size_t v = vocab_.size();
    if (rank_ < 1 || base_.size() != v * v || a_.size() != v * rank_ || b_.size() != rank_ * v) {
      throw InvalidArgument("ReferenceModel: table sizes do not match vocabulary and rank");
    }
  }

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  std::size_t rank() const { return rank_; }
  std::size_t adapter_dim() const { return 2 * vocab_.size() * rank_; }

  std::span<const double> base() const { return base_; }
  std::span<const double> a() const { return a_; }
  std::span<const double> b() const { return b_; }

  /// Flat adapter coordinate: A row-major, then B row-major.
  double& adapter(std::size_t flat) { return flat < a_.size() ? a_[flat] : b_[flat - a_.size()]; }
  double adapter(std::size_t flat) const { return flat < a_.size() ? a_[flat] : b_[flat - a_.size()]; }

  /// Adds `scale * direction` to the adapter parameters.
  void step(std::span<const double> direction, double scale) {
    if (direction.size() != adapter_dim()) throw InvalidArgument("step: direction length mismatch");
    for (std::size_t i = 0; i < a_.size(); ++i) a_[i] += scale * direction[i];
    for (std::size_t i = 0; i < b_.size(); ++i) b_[i] += scale * direction[a_.size() + i];
  }

  /// Effective logits for predecessor token p: W0[p] + A[p] * B.
  void logits(int p, std::vector<double>& out) const {
    const std::size_t v = vocab_.size();
    out.assign(base_.begin() + static_cast<std::ptrdiff_t>(p * v), base_.begin() + static_cast<std::ptrdiff_t>((p + 1) * v));
    for (std::size_t k = 0; k < rank_; ++k) {
      const double apk = a_[static_cast<std::size_t>(p) * rank_ + k];
      if (apk == 0.0) continue;
      const double* brow = &b_[k * v];
      for (std::size_t j = 0; j < v; ++j) out[j] += apk * brow[j];
    }
  }

  TrainConfig config;
  std::vector<double> loss_trace;  // mean loss before training, then after each epoch

 private:
  Vocabulary vocab_;
  std::size_t rank_ = 1;
  std::vector<double> base_;
  std::vector<double> a_;
  std::vector<double> b_;
};

namespace detail {

/// log-softmax probability of `target` given logits, and (optionally) the
/// softmax minus one-hot residual written into `residual`.
inline double nll_and_residual(const std::vector<double>& z, int target, std::vector<double>* residual) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double x : z) sum += std::exp(x - zmax);
  const double lse = zmax + std::log(sum);
  if (residual) {
    residual->resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) (*residual)[j] = std::exp(z[j] - lse);
    (*residual)[static_cast<std::size_t>(target)] -= 1.0;
  }
  return lse - z[static_cast<std::size_t>(target)];
}

}  // namespace detail

/// Mean negative log-likelihood over solution positions.
inline double example_loss(const ReferenceModel& model, const TokenizedPair& tp) {
  std::vector<double> z;
  double total = 0.0;
  std::size_t m = 0;
  for (std::size_t j = std::max<std::size_t>(tp.solution_start, 1); j < tp.tokens.size(); ++j) {
    model.logits(tp.tokens[j - 1], z);
    total += detail::nll_and_residual(z, tp.tokens[j], nullptr);
    ++m;
  }
  return m == 0 ? 0.0 : total / static_cast<double>(m);
}

inline double example_loss(const ReferenceModel& model, const SynthPair& pair) {
  return example_loss(model, tokenize_pair(pair, model.vocab()));
}

/// Analytic gradient of example_loss with respect to (A, B), flattened A
/// row-major then B row-major. Accumulates `scale * grad` into `out`.
inline void accumulate_gradient(const ReferenceModel& model, const TokenizedPair& tp, double scale,
                                std::span<double> out) {
  const std::size_t v = model.vocab_size();
  const std::size_t r = model.rank();
  const std::size_t first = std::max<std::size_t>(tp.solution_start, 1);
  if (tp.tokens.size() <= first) return;
  const double inv_m = scale / static_cast<double>(tp.tokens.size() - first);
  const auto a = model.a();
  const auto b = model.b();
  double* grad_a = out.data();
  double* grad_b = out.data() + v * r;
  std::vector<double> z, g;
  for (std::size_t j = first; j < tp.tokens.size(); ++j) {
    const auto p = static_cast<std::size_t>(tp.tokens[j - 1]);
    model.logits(static_cast<int>(p), z);
    detail::nll_and_residual(z, tp.tokens[j], &g);
    for (std::size_t k = 0; k < r; ++k) {
      const double* brow = &b[k * v];
      double dot = 0.0;
      for (std::size_t c = 0; c < v; ++c) dot += g[c] * brow[c];
      grad_a[p * r + k] += inv_m * dot;
      const double apk = a[p * r + k];
      if (apk == 0.0) continue;
      double* gbrow = &grad_b[k * v];
      const double s = inv_m * apk;
      for (std::size_t c = 0; c < v; ++c) gbrow[c] += s * g[c];
    }
  }
}

inline std::vector<double> per_example_gradient(const ReferenceModel& model, const TokenizedPair& tp) {
  std::vector<double> g(model.adapter_dim(), 0.0);
  accumulate_gradient(model, tp, 1.0, g);
  return g;
}

inline std::vector<double> per_example_gradient(const ReferenceModel& model, const SynthPair& pair) {
  return per_example_gradient(model, tokenize_pair(pair, model.vocab()));
}

inline double mean_loss(const ReferenceModel& model, const std::vector<TokenizedPair>& data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& tp : data) total += example_loss(model, tp);
  return total / static_cast<double>(data.size());
}

/// Mini-batch gradient descent on the adapter only. Appends the mean loss
/// after every epoch to model.loss_trace.
inline void train_adapters(ReferenceModel& model, const std::vector<TokenizedPair>& data, const TrainConfig& cfg) {
  if (data.empty()) throw InvalidArgument("train_adapters: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(keyed_seed(cfg.seed, "adapter-shuffle"));
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  std::vector<double> grad(model.adapter_dim());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) accumulate_gradient(model, data[order[i]], w, grad);
      model.step(grad, -cfg.lr);
    }
    model.loss_trace.push_back(mean_loss(model, data));
  }
}

/// Frozen base: add-alpha smoothed bigram log-probabilities over all tokens
/// of the dataset (problems and solutions).
inline std::vector<double> bigram_base(const Vocabulary& vocab, const std::vector<TokenizedPair>& data, double alpha) {
  const std::size_t v = vocab.size();
  std::vector<double> counts(v * v, 0.0);
  for (const auto& tp : data) {
    for (std::size_t j = 1; j < tp.tokens.size(); ++j) {
      counts[static_cast<std::size_t>(tp.tokens[j - 1]) * v + static_cast<std::size_t>(tp.tokens[j])] += 1.0;
    }
  }
  std::vector<double> base(v * v);
  for (std::size_t p = 0; p < v; ++p) {
    double row = 0.0;
    for (std::size_t c = 0; c < v; ++c) row += counts[p * v + c];
    const double denom = row + alpha * static_cast<double>(v);
    for (std::size_t c = 0; c < v; ++c) base[p * v + c] = std::log((counts[p * v + c] + alpha) / denom);
  }
  return base;
}

/// Builds the base over `vocab` from `dataset`, initialises A ~ N(0, s^2)
/// and B = 0, then trains the adapter. loss_trace[0] is the untrained loss.
inline ReferenceModel train_reference(const std::vector<SynthPair>& dataset, const Vocabulary& vocab,
                                      const TrainConfig& cfg) {
  if (dataset.empty()) throw InvalidArgument("train_reference: empty dataset");
  if (cfg.rank < 1) throw InvalidArgument("train_reference: rank must be >= 1");
  if (vocab.size() < 2) throw InvalidArgument("train_reference: vocabulary has fewer than 2 tokens");
  std::vector<TokenizedPair> data;
  data.reserve(dataset.size());
  for (const auto& p : dataset) data.push_back(tokenize_pair(p, vocab));
  const std::size_t v = vocab.size();
  std::vector<double> a(v * cfg.rank);
  std::mt19937_64 rng(keyed_seed(cfg.seed, "adapter-init"));
  std::normal_distribution<double> normal(0.0, cfg.init_scale);
  for (auto& x : a) x = normal(rng);
  ReferenceModel model(vocab, cfg.rank, bigram_base(vocab, data, cfg.smoothing), std::move(a),
                       std::vector<double>(cfg.rank * v, 0.0));
  model.config = cfg;
  model.loss_trace.push_back(mean_loss(model, data));
  train_adapters(model, data, cfg);
  return model;
}

inline ReferenceModel train_reference(const std::vector<SynthPair>& dataset, const TrainConfig& cfg) {
  return train_reference(dataset, Vocabulary::from_pairs(dataset), cfg);
}

/// Ground-truth influence: probe loss before minus after one gradient step
/// of size step_lr on train_example.
inline double tracin_oracle(const ReferenceModel& model, const SynthPair& train_example, const SynthPair& probe,
                            double step_lr = 1e-3) {
  if (!(step_lr > 0.0)) throw InvalidArgument("tracin_oracle: step_lr must be positive");
  const TokenizedPair probe_tp = tokenize_pair(probe, model.vocab());
  const double before = example_loss(model, probe_tp);
  ReferenceModel stepped = model;
  stepped.step(per_example_gradient(model, train_example), -step_lr);
  return before - example_loss(stepped, probe_tp);
}

// ---------------------------------------------------------------------------
// Rademacher projection, applied without materialising the matrix.

struct ProjectionSpec {
  std::uint64_t seed = 0;
  std::size_t d_in = 0;
  std::size_t d_out = 4096;
};

namespace detail {
/// 64 consecutive column signs of row i, block b (columns 64b .. 64b+63).
inline std::uint64_t sign_word(std::uint64_t seed_mix, std::uint64_t row, std::uint64_t block) {
  return splitmix64(splitmix64(seed_mix ^ (row * 0xD1B54A32D192ED03ULL)) ^ (block * 0x8CB92BA72F3D8DD7ULL));
}
inline std::uint64_t seed_mix(std::uint64_t seed) { return splitmix64(seed ^ 0x5EED5EED5EED5EEDULL); }
}  // namespace detail

/// Entry (row, column) of the implied d_in x d_out matrix: +1 or -1.
inline int projection_sign(const ProjectionSpec& spec, std::size_t row, std::size_t col) {
  const std::uint64_t w = detail::sign_word(detail::seed_mix(spec.seed), row, col / 64);
  return ((w >> (col % 64)) & 1U) ? 1 : -1;
}

struct GradientFeature {
  std::string example_id;
  std::vector<double> vector;
  double norm = 0.0;
  std::uint64_t projection_seed = 0;
};

inline double l2_norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

/// output[j] = sum_i sign(i, j) * gradient[i]. Zero coordinates are skipped.
inline GradientFeature project(std::span<const double> gradient, const ProjectionSpec& spec, std::string example_id = {}) {
  if (gradient.size() != spec.d_in) {
    throw InvalidArgument("project: gradient length " + std::to_string(gradient.size()) + " != d_in " +
                          std::to_string(spec.d_in));
  }
  GradientFeature f;
  f.example_id = std::move(example_id);
  f.projection_seed = spec.seed;
  f.vector.assign(spec.d_out, 0.0);
  const std::uint64_t mix = detail::seed_mix(spec.seed);
  const std::size_t blocks = (spec.d_out + 63) / 64;
  double* out = f.vector.data();
  for (std::size_t i = 0; i < gradient.size(); ++i) {
    const double g = gradient[i];
    if (g == 0.0) continue;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::uint64_t w = detail::sign_word(mix, i, b);
      const std::size_t base = b * 64;
      const std::size_t lim = std::min<std::size_t>(64, spec.d_out - base);
      for (std::size_t t = 0; t < lim; ++t) {
        out[base + t] += ((w >> t) & 1U) ? g : -g;
      }
    }
  }
  f.norm = l2_norm(f.vector);
  return f;
}

/// Arithmetic mean of raw vectors, summed in ascending example-id order.
inline std::vector<double> mean_feature(const std::vector<GradientFeature>& features) {
  if (features.empty()) throw InvalidArgument("mean_feature: empty feature list");
  std::vector<const GradientFeature*> sorted;
  for (const auto& f : features) {
    if (f.projection_seed != features.front().projection_seed) {
      throw InvalidArgument("mean_feature: features use different projection seeds");
    }
    if (f.vector.size() != features.front().vector.size()) throw InvalidArgument("mean_feature: dimension mismatch");
    sorted.push_back(&f);
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](auto* x, auto* y) { return x->example_id < y->example_id; });
  std::vector<double> mean(features.front().vector.size(), 0.0);
  for (const auto* f : sorted) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += f->vector[j];
  }
  const double n = static_cast<double>(features.size());
  for (double& x : mean) x /= n;
  return mean;
}

struct ValueScore {
  std::string example_id;
  double value = 0.0;

  friend bool operator==(const ValueScore&, const ValueScore&) = default;
};

inline void to_json(json& j, const ValueScore& s) { j = json{{"id", s.example_id}, {"value", s.value}}; }
inline void from_json(const json& j, ValueScore& s) {
  s.example_id = j.at("id").get<std::string>();
  s.value = j.at("value").get<double>();
}

inline double cosine(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("cosine: dimension mismatch");
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0);
}

/// Cosine similarity against the downstream mean; zero vectors score 0.
inline ValueScore estimate_value(const GradientFeature& feature, std::span<const double> target_mean) {
  if (feature.vector.size() != target_mean.size()) {
    throw InvalidArgument("estimate_value: dimension mismatch");
  }
  return ValueScore{feature.example_id, cosine(feature.vector, target_mean)};
}

/// Ids of the k highest values, descending; ties by ascending id.
inline std::vector<std::string> rank_topk(std::vector<ValueScore> scores, std::size_t k) {
  if (k > scores.size()) {
    throw InvalidArgument("rank_topk: k=" + std::to_string(k) + " exceeds " + std::to_string(scores.size()) + " scores");
  }
  auto better = [](const ValueScore& a, const ValueScore& b) {
    return a.value != b.value ? a.value > b.value : a.example_id < b.example_id;
  };
  std::partial_sort(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k), scores.end(), better);
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(scores[i].example_id);
  return out;
}

struct ScoringOptions {
  ProjectionSpec projection;  // d_in is filled from the model
  bool normalize_before_mean = false;
  std::size_t workers = default_workers();
};

inline std::vector<GradientFeature> compute_features(const ReferenceModel& model, const std::vector<SynthPair>& pairs,
                                                     const ProjectionSpec& spec, std::size_t workers) {
  std::vector<GradientFeature> out(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t i) {
    out[i] = project(per_example_gradient(model, pairs[i]), spec, pair_key(pairs[i]));
  });
  return out;
}

struct ScoringResult {
  std::vector<GradientFeature> candidate_features;
  std::vector<double> target_mean;
  std::vector<ValueScore> scores;  // candidate order
};

/// Value of every candidate against the mean projected gradient of the
/// downstream probes.
inline ScoringResult score_candidates(const ReferenceModel& model, const std::vector<SynthPair>& candidates,
                                      const std::vector<SynthPair>& probes, ScoringOptions opts) {
  if (probes.empty()) throw InvalidArgument("score_candidates: no downstream probes");
  opts.projection.d_in = model.adapter_dim();
  ScoringResult r;
  auto probe_features = compute_features(model, probes, opts.projection, opts.workers);
  if (opts.normalize_before_mean) {
    for (auto& f : probe_features) {
      if (f.norm > 0.0) {
        for (double& x : f.vector) x /= f.norm;
        f.norm = 1.0;
      }
    }
  }
  r.target_mean = mean_feature(probe_features);
  r.candidate_features = compute_features(model, candidates, opts.projection, opts.workers);
  r.scores.reserve(candidates.size());
  for (const auto& f : r.candidate_features) r.scores.push_back(estimate_value(f, r.target_mean));
  return r;
}

// ---------------------------------------------------------------------------
// Binary formats

namespace detail {
template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("truncated binary file");
  return v;
}
inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("truncated binary file");
  return s;
}
inline void put_doubles(std::ostream& out, std::span<const double> xs) {
  out.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size() * sizeof(double)));
}
inline std::vector<double> get_doubles(std::istream& in, std::size_t n) {
  std::vector<double> xs(n);
  in.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("truncated binary file");
  return xs;
}
inline constexpr char kFeatureMagic[8] = {'M', 'F', 'F', 'E', 'A', 'T', '0', '1'};
inline constexpr char kModelMagic[8] = {'M', 'F', 'R', 'E', 'F', 'M', '0', '1'};
}  // namespace detail

struct FeatureStoreHeader {
  std::uint64_t seed = 0;
  std::uint64_t d_in = 0;
  std::uint64_t d_out = 0;
};

/// Layout: magic, seed, d_in, d_out, count (u64 each), then per record a
/// u32-length-prefixed id and d_out little-endian float64 values.
inline std::string serialize_features(const FeatureStoreHeader& h, const std::vector<GradientFeature>& features) {
  std::ostringstream out(std::ios::binary);
  out.write(detail::kFeatureMagic, 8);
  detail::put(out, h.seed);
  detail::put(out, h.d_in);
  detail::put(out, h.d_out);
  detail::put<std::uint64_t>(out, features.size());
  for (const auto& f : features) {
    if (f.vector.size() != h.d_out) throw InvalidArgument("feature store: vector length != d_out");
    detail::put_string(out, f.example_id);
    detail::put_doubles(out, f.vector);
  }
  return out.str();
}

inline std::pair<FeatureStoreHeader, std::vector<GradientFeature>> read_features(const fs::path& path) {
  std::istringstream in(read_file(path), std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kFeatureMagic, 8) != 0) throw IoError(path.string() + ": not a feature store");
  FeatureStoreHeader h;
  h.seed = detail::get<std::uint64_t>(in);
  h.d_in = detail::get<std::uint64_t>(in);
  h.d_out = detail::get<std::uint64_t>(in);
  const auto n = detail::get<std::uint64_t>(in);
  std::vector<GradientFeature> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    GradientFeature f;
    f.example_id = detail::get_string(in);
    f.vector = detail::get_doubles(in, h.d_out);
    f.norm = l2_norm(f.vector);
    f.projection_seed = h.seed;
    out.push_back(std::move(f));
  }
  return {h, std::move(out)};
}

inline std::string serialize_model(const ReferenceModel& m) {
  std::ostringstream out(std::ios::binary);
  out.write(detail::kModelMagic, 8);
  detail::put<std::uint64_t>(out, m.vocab_size());
  detail::put<std::uint64_t>(out, m.rank());
  for (const auto& t : m.vocab().tokens()) detail::put_string(out, t);
  detail::put_doubles(out, m.base());
  detail::put_doubles(out, m.a());
  detail::put_doubles(out, m.b());
  const json cfg = {{"rank", m.config.rank},         {"lr", m.config.lr},
                    {"epochs", m.config.epochs},     {"batch_size", m.config.batch_size},
                    {"seed", m.config.seed},         {"init_scale", m.config.init_scale},
                    {"smoothing", m.config.smoothing}, {"loss_trace", m.loss_trace}};
  detail::put_string(out, cfg.dump());
  return out.str();
}

inline ReferenceModel read_model(const fs::path& path) {
  std::istringstream in(read_file(path), std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kModelMagic, 8) != 0) throw IoError(path.string() + ": not a reference model");
  const auto v = detail::get<std::uint64_t>(in);
  const auto r = detail::get<std::uint64_t>(in);
  std::vector<std::string> tokens;
  for (std::uint64_t i = 0; i < v; ++i) tokens.push_back(detail::get_string(in));
  auto base = detail::get_doubles(in, v * v);
  auto a = detail::get_doubles(in, v * r);
  auto b = detail::get_doubles(in, r * v);
  Vocabulary vocab = Vocabulary::from_tokens(std::vector<std::string>(tokens.begin() + 1, tokens.end()));
  if (vocab.tokens() != tokens) throw IoError(path.string() + ": vocabulary is not in canonical order");
  ReferenceModel m(std::move(vocab), r, std::move(base), std::move(a), std::move(b));
  const json cfg = json::parse(detail::get_string(in));
  m.config.rank = cfg.at("rank");
  m.config.lr = cfg.at("lr");
  m.config.epochs = cfg.at("epochs");
  m.config.batch_size = cfg.at("batch_size");
  m.config.seed = cfg.at("seed");
  m.config.init_scale = cfg.at("init_scale");
  m.config.smoothing = cfg.at("smoothing");
  m.loss_trace = cfg.at("loss_trace").get<std::vector<double>>();
  return m;
}

}  // namespace mathforge::influence
