#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ehrdr/corpus.hpp"
#include "ehrdr/encoder.hpp"
#include "ehrdr/pairgen.hpp"
#include "ehrdr/rng.hpp"

namespace ehrdr::trainer {

/// Multi-similarity loss hyperparameters.
struct MslConfig {
  double epsilon = 0.1;
  double alpha = 2.0;
  double beta = 50.0;
  double lambda = 0.5;

  void validate() const;
};

enum class OptimizerKind { sgd, adamw };

struct TrainConfig {
  std::size_t positives_per_chunk = 16;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  double lr = 1e-4;
  double warmup_ratio = 0.1;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  /// Drop in-batch negatives that equal one of the anchor's own positives.
  bool in_batch_negative_filter = false;

  void validate() const;
};

/// Informative samples of one anchor: indices into the positive and negative
/// similarity lists. Both empty when the opposite list is empty.
struct MiningResult {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  std::optional<double> max_neg;
  std::optional<double> min_pos;
};

/// Positives with S < max_neg + eps, negatives with S > min_pos - eps.
MiningResult mine(std::span<const double> pos_sims, std::span<const double> neg_sims, double epsilon);

/// Per-anchor loss:
///   log(1 + sum_P' exp(-alpha (S - lambda))) / alpha
/// + log(1 + sum_N' exp( beta  (S - lambda))) / beta
/// evaluated with max-shifted log-sum-exp.
double msl_loss(const MiningResult& mining, std::span<const double> pos_sims, std::span<const double> neg_sims,
                const MslConfig& config);

/// Loss plus dL/dS for every positive and negative (zero outside the mined sets).
double msl_loss_grad(const MiningResult& mining, std::span<const double> pos_sims,
                     std::span<const double> neg_sims, const MslConfig& config, std::vector<double>& d_pos,
                     std::vector<double>& d_neg);

/// Exactly `count` items: a uniform sample without replacement when the set is
/// large enough, otherwise every item plus uniform draws with replacement.
std::vector<std::string> sample_positives(std::span<const std::string> positives, std::size_t count, Rng& rng);

/// Linear warmup to config.lr over ceil(warmup_ratio * total) steps, then linear decay to 0.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& config);

/// B anchors with P sampled positive terms each. The negatives of anchor i
/// are the positives of every other anchor.
struct AnchorBatch {
  std::vector<std::string> anchors;
  std::vector<std::vector<std::string>> positives;
};

/// (anchor, slot) references forming each anchor's negative pool.
std::vector<std::vector<std::pair<std::size_t, std::size_t>>> negative_pool(const AnchorBatch& batch,
                                                                            bool filter_false_negatives);

struct BatchOutcome {
  double loss = 0.0;  // mean over anchors
  std::vector<MiningResult> mining;
  std::vector<std::size_t> negative_counts;
};

/// Batch loss and its exact gradient with respect to the embedding table,
/// accumulated into `grad`. Mined sets are constants of the forward pass.
BatchOutcome msl_gradients(const AnchorBatch& batch, const encoder::EncoderParams& params,
                           const MslConfig& config, bool filter_false_negatives, encoder::Gradient& grad);

/// One anchor chunk and its distinct positive terms.
struct TrainingExample {
  std::string chunk_id;
  std::string text;
  std::vector<std::string> positives;
};

/// Joins chunks with their positive sets. Chunks without usable positives are
/// skipped; `keep` filters samples (all kept when empty).
std::vector<TrainingExample> make_examples(std::span<const corpus::Chunk> chunks,
                                           std::span<const pairgen::PositiveSet> sets,
                                           const std::function<bool(const pairgen::PositiveSample&)>& keep = {});

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> history;
  std::size_t total_steps = 0;
};

/// Called after every batch with the batch and its outcome.
using BatchObserver = std::function<void(std::size_t step, const AnchorBatch&, const BatchOutcome&)>;

/// Seeded shuffle per epoch, floor(N / B) full batches per epoch, one
/// optimizer update per batch. Throws ConfigError when N < B.
TrainResult train(std::span<const TrainingExample> examples, encoder::EncoderParams& params,
                  const TrainConfig& config, const MslConfig& msl, const BatchObserver& observer = {});

/// step,lr,loss with round-trip precision.
void save_history(const std::filesystem::path& path, std::span<const StepRecord> history);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<double>& params, const std::vector<double>& grad, double lr) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config, std::size_t size);

}  // namespace ehrdr::trainer
