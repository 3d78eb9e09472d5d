#include "ehrdr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "ehrdr/error.hpp"
#include "ehrdr/io.hpp"

namespace ehrdr::trainer {

void MslConfig::validate() const {
  if (!(epsilon >= 0)) throw ConfigError("msl epsilon must be >= 0");
  if (!(alpha > 0) || !(beta > 0)) throw ConfigError("msl alpha and beta must be > 0");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch size must be >= 2 for in-batch negatives");
  if (positives_per_chunk < 1) throw ConfigError("positives per chunk must be >= 1");
  if (!(lr >= 0)) throw ConfigError("learning rate must be >= 0");
  if (!(warmup_ratio >= 0 && warmup_ratio <= 1)) throw ConfigError("warmup ratio must lie in [0, 1]");
}

MiningResult mine(std::span<const double> pos_sims, std::span<const double> neg_sims, double epsilon) {
  MiningResult r;
  if (pos_sims.empty() || neg_sims.empty()) return r;
  const double max_neg = *std::max_element(neg_sims.begin(), neg_sims.end());
  const double min_pos = *std::min_element(pos_sims.begin(), pos_sims.end());
  r.max_neg = max_neg;
  r.min_pos = min_pos;
  for (std::size_t j = 0; j < pos_sims.size(); ++j)
    if (pos_sims[j] < max_neg + epsilon) r.positives.push_back(j);
  for (std::size_t k = 0; k < neg_sims.size(); ++k)
    if (neg_sims[k] > min_pos - epsilon) r.negatives.push_back(k);
  return r;
}

namespace {

/// (1/scale) log(1 + sum exp(x_i)) and, if requested, d/dS of it for each x_i = sign*scale*(S_i - lambda).
double soft_term(std::span<const std::size_t> idx, std::span<const double> sims, double sign, double scale,
                 double lambda, std::vector<double>* grad) {
  if (idx.empty()) return 0.0;
  double shift = 0.0;
  for (std::size_t i : idx) shift = std::max(shift, sign * scale * (sims[i] - lambda));
  double denom = std::exp(-shift);
  for (std::size_t i : idx) denom += std::exp(sign * scale * (sims[i] - lambda) - shift);
  if (grad) {
    for (std::size_t i : idx) (*grad)[i] = sign * std::exp(sign * scale * (sims[i] - lambda) - shift) / denom;
  }
  const double lse = shift == 0.0 ? std::log1p(denom - 1.0) : shift + std::log(denom);
  return lse / scale;
}

}  // namespace

double msl_loss(const MiningResult& mining, std::span<const double> pos_sims, std::span<const double> neg_sims,
                const MslConfig& config) {
  return soft_term(mining.positives, pos_sims, -1.0, config.alpha, config.lambda, nullptr) +
         soft_term(mining.negatives, neg_sims, 1.0, config.beta, config.lambda, nullptr);
}

double msl_loss_grad(const MiningResult& mining, std::span<const double> pos_sims,
                     std::span<const double> neg_sims, const MslConfig& config, std::vector<double>& d_pos,
                     std::vector<double>& d_neg) {
  d_pos.assign(pos_sims.size(), 0.0);
  d_neg.assign(neg_sims.size(), 0.0);
  return soft_term(mining.positives, pos_sims, -1.0, config.alpha, config.lambda, &d_pos) +
         soft_term(mining.negatives, neg_sims, 1.0, config.beta, config.lambda, &d_neg);
}

std::vector<std::string> sample_positives(std::span<const std::string> positives, std::size_t count, Rng& rng) {
  if (positives.empty()) throw Error("cannot sample from an empty positive set");
  std::vector<std::string> out;
  out.reserve(count);
  if (positives.size() >= count) {
    for (std::size_t i : rng.sample_without_replacement(positives.size(), count)) out.push_back(positives[i]);
    return out;
  }
  out.assign(positives.begin(), positives.end());
  while (out.size() < count) out.push_back(positives[rng.below(positives.size())]);
  return out;
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  const auto warmup = static_cast<std::size_t>(std::ceil(config.warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) return config.lr * static_cast<double>(step) / static_cast<double>(warmup);
  return config.lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

std::vector<std::vector<std::pair<std::size_t, std::size_t>>> negative_pool(const AnchorBatch& batch,
                                                                            bool filter_false_negatives) {
  const std::size_t b = batch.anchors.size();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pools(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::set<std::string_view> own(batch.positives[i].begin(), batch.positives[i].end());
    for (std::size_t k = 0; k < b; ++k) {
      if (k == i) continue;
      for (std::size_t p = 0; p < batch.positives[k].size(); ++p) {
        if (filter_false_negatives && own.contains(batch.positives[k][p])) continue;
        pools[i].emplace_back(k, p);
      }
    }
  }
  return pools;
}

BatchOutcome msl_gradients(const AnchorBatch& batch, const encoder::EncoderParams& params,
                           const MslConfig& config, bool filter_false_negatives, encoder::Gradient& grad) {
  const std::size_t b = batch.anchors.size();
  if (b == 0 || batch.positives.size() != b) throw Error("malformed anchor batch");
  const std::size_t d = params.dim();

  std::vector<encoder::Encoded> anchors;
  anchors.reserve(b);
  for (const auto& a : batch.anchors) anchors.push_back(encoder::encode_text(params, a, encoder::kChunkTokenBudget));

  // Positive terms, encoded once per slot.
  std::vector<std::vector<encoder::Encoded>> terms(b);
  for (std::size_t i = 0; i < b; ++i)
    for (const auto& t : batch.positives[i])
      terms[i].push_back(encoder::encode_text(params, t, encoder::kEntityTokenBudget));

  const auto pools = negative_pool(batch, filter_false_negatives);
  std::vector<std::vector<double>> dl_du_anchor(b, std::vector<double>(d, 0.0));
  std::vector<std::vector<std::vector<double>>> dl_du_term(b);
  for (std::size_t i = 0; i < b; ++i) dl_du_term[i].assign(terms[i].size(), std::vector<double>(d, 0.0));

  BatchOutcome outcome;
  const double inv_b = 1.0 / static_cast<double>(b);
  std::vector<double> pos, neg, d_pos, d_neg;
  for (std::size_t i = 0; i < b; ++i) {
    const auto& u = anchors[i].embedding;
    pos.clear();
    neg.clear();
    for (const auto& t : terms[i]) pos.push_back(encoder::similarity(u, t.embedding));
    for (const auto& [k, p] : pools[i]) neg.push_back(encoder::similarity(u, terms[k][p].embedding));

    auto mining = mine(pos, neg, config.epsilon);
    outcome.loss += inv_b * msl_loss_grad(mining, pos, neg, config, d_pos, d_neg);

    auto accumulate = [&](double dl_ds, const encoder::Encoded& term, std::vector<double>& term_grad) {
      if (dl_ds == 0.0) return;
      const double g = dl_ds * inv_b;
      for (std::size_t c = 0; c < d; ++c) {
        dl_du_anchor[i][c] += g * term.embedding[c];
        term_grad[c] += g * u[c];
      }
    };
    for (std::size_t j = 0; j < pos.size(); ++j) accumulate(d_pos[j], terms[i][j], dl_du_term[i][j]);
    for (std::size_t n = 0; n < neg.size(); ++n) {
      const auto [k, p] = pools[i][n];
      accumulate(d_neg[n], terms[k][p], dl_du_term[k][p]);
    }
    outcome.negative_counts.push_back(neg.size());
    outcome.mining.push_back(std::move(mining));
  }

  for (std::size_t i = 0; i < b; ++i) {
    encoder::backprop_unit(anchors[i], dl_du_anchor[i], grad);
    for (std::size_t j = 0; j < terms[i].size(); ++j) encoder::backprop_unit(terms[i][j], dl_du_term[i][j], grad);
  }
  return outcome;
}

std::vector<TrainingExample> make_examples(std::span<const corpus::Chunk> chunks,
                                           std::span<const pairgen::PositiveSet> sets,
                                           const std::function<bool(const pairgen::PositiveSample&)>& keep) {
  std::unordered_map<std::string, const pairgen::PositiveSet*> by_chunk;
  for (const auto& s : sets) by_chunk.emplace(s.chunk_id, &s);
  std::vector<TrainingExample> out;
  for (const auto& c : chunks) {
    const auto id = c.id();
    const auto it = by_chunk.find(id);
    if (it == by_chunk.end()) continue;
    if (encoder::split_tokens(c.text).empty()) continue;
    TrainingExample ex{id, c.text, {}};
    std::set<std::string> seen;
    for (const auto& s : it->second->samples) {
      if (keep && !keep(s)) continue;
      if (encoder::split_tokens(s.term).empty()) continue;
      if (seen.insert(s.term).second) ex.positives.push_back(s.term);
    }
    if (!ex.positives.empty()) out.push_back(std::move(ex));
  }
  return out;
}

namespace {

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double weight_decay) : weight_decay_(weight_decay) {}
  void step(std::vector<double>& params, const std::vector<double>& grad, double lr) override {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * (grad[i] + weight_decay_ * params[i]);
  }

 private:
  double weight_decay_;
};

class AdamW final : public Optimizer {
 public:
  AdamW(const TrainConfig& c, std::size_t size)
      : b1_(c.adam_beta1), b2_(c.adam_beta2), eps_(c.adam_eps), wd_(c.weight_decay), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad, double lr) override {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] *= 1.0 - lr * wd_;
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  double b1_, b2_, eps_, wd_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config, std::size_t size) {
  if (config.optimizer == OptimizerKind::sgd) return std::make_unique<Sgd>(0.0);
  return std::make_unique<AdamW>(config, size);
}

TrainResult train(std::span<const TrainingExample> examples, encoder::EncoderParams& params,
                  const TrainConfig& config, const MslConfig& msl, const BatchObserver& observer) {
  config.validate();
  msl.validate();
  if (examples.size() < config.batch_size)
    throw ConfigError("dataset has " + std::to_string(examples.size()) + " usable chunks, fewer than one batch of " +
                      std::to_string(config.batch_size));
  const std::size_t per_epoch = examples.size() / config.batch_size;
  TrainResult result;
  result.total_steps = per_epoch * config.epochs;

  auto optimizer = make_optimizer(config, params.table().size());
  encoder::Gradient grad(params);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(config.seed, epoch));
    shuffle_rng.shuffle(order);

    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      AnchorBatch batch;
      Rng sample_rng(mix_seed(config.seed ^ 0x5a5a5a5aull, step));
      for (std::size_t j = 0; j < config.batch_size; ++j) {
        const auto& ex = examples[order[b * config.batch_size + j]];
        batch.anchors.push_back(ex.text);
        batch.positives.push_back(sample_positives(ex.positives, config.positives_per_chunk, sample_rng));
      }
      grad.zero();
      const auto outcome = msl_gradients(batch, params, msl, config.in_batch_negative_filter, grad);
      const double lr = lr_at(step, result.total_steps, config);
      optimizer->step(params.table(), grad.values, lr);
      result.history.push_back(StepRecord{step, lr, outcome.loss});
      if (observer) observer(step, batch, outcome);
    }
  }
  return result;
}

void save_history(const std::filesystem::path& path, std::span<const StepRecord> history) {
  std::ostringstream out;
  out << "step,lr,loss\n";
  char buf[96];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.step, r.lr, r.loss);
    out << buf;
  }
  io::write_file(path, out.str());
}

}  // namespace ehrdr::trainer
