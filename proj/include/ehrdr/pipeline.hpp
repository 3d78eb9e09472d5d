#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ehrdr/corpus.hpp"
#include "ehrdr/error.hpp"
#include "ehrdr/evalkit.hpp"
#include "ehrdr/generator_client.hpp"
#include "ehrdr/kg.hpp"
#include "ehrdr/manifest.hpp"
#include "ehrdr/pairgen.hpp"
#include "ehrdr/trainer.hpp"

namespace ehrdr::pipeline {

enum class Stage { chunk, match, abbrev, pairs1, train1, pairs2, train2, eval };
inline constexpr std::array kStages{Stage::chunk,  Stage::match,  Stage::abbrev, Stage::pairs1,
                                    Stage::train1, Stage::pairs2, Stage::train2, Stage::eval};
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

/// Raised when a stage fails; names the stage.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what)
      : Error("stage " + std::string(to_string(stage)) + " failed: " + what), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct Paths {
  std::filesystem::path notes;
  std::optional<std::filesystem::path> eval_notes;
  std::filesystem::path concepts;
  std::filesystem::path relations;
  std::optional<std::filesystem::path> abbreviations;  // mock client table
  std::optional<std::filesystem::path> prompts;        // template directory
  std::optional<std::filesystem::path> queries;
  std::optional<std::filesystem::path> qrels;
  std::filesystem::path out;
};

struct PipelineConfig {
  Paths paths;
  corpus::ChunkingOptions chunking;
  std::string client = "mock";  // mock | http
  gen::ClientConfig http;
  double mock_noise_rate = 0.15;
  std::size_t dim = 64;
  std::size_t oov_buckets = 1024;
  double init_scale = 0.05;
  trainer::MslConfig msl;
  trainer::TrainConfig stage1;
  trainer::TrainConfig stage2;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  Manifest manifest;

  /// Reads every recognised key; unknown keys are errors. Referenced input
  /// paths must exist.
  static PipelineConfig from_manifest(const Manifest& m);
  /// Seeds of the individual components, derived from `seed`.
  std::uint64_t component_seed(std::string_view component) const;
};

/// Training-data switches for ablation runs.
struct Ablation {
  std::set<pairgen::Source> disabled;
  bool skip_stage1 = false;
  std::optional<eval::QueryType> stage2_only;

  bool empty() const { return disabled.empty() && !skip_stage1 && !stage2_only; }
  /// "full", "wo_stage1", "wo_kg_synonym", "stage2_disease", joined with '+'.
  std::string label() const;
  bool keeps(const pairgen::PositiveSample& s) const;
};

/// Parses "stage1" or a stage-I source name as a --without switch.
void add_without(Ablation& a, std::string_view what);

/// Files inside a run directory.
struct RunLayout {
  std::filesystem::path dir;
  std::filesystem::path chunks() const { return dir / "chunks.jsonl"; }
  std::filesystem::path eval_chunks() const { return dir / "eval_chunks.jsonl"; }
  std::filesystem::path mentions() const { return dir / "mentions.jsonl"; }
  std::filesystem::path abbreviations() const { return dir / "abbreviations.jsonl"; }
  std::filesystem::path pairs(int stage) const { return dir / ("pairs_stage" + std::to_string(stage) + ".jsonl"); }
  std::filesystem::path stats(int stage) const { return dir / ("stats_stage" + std::to_string(stage) + ".txt"); }
  std::filesystem::path checkpoint(std::string_view name) const { return dir / ("encoder_" + std::string(name) + ".ckpt"); }
  std::filesystem::path loss(int stage) const { return dir / ("loss_stage" + std::to_string(stage) + ".csv"); }
  std::filesystem::path run(std::string_view model, eval::Setting s) const {
    return dir / ("run_" + std::string(model) + "_" + std::string(eval::to_string(s)) + ".tsv");
  }
  std::filesystem::path report() const { return dir / "report.txt"; }
  std::filesystem::path report_json() const { return dir / "report.json"; }
  std::filesystem::path manifest() const { return dir / "manifest.txt"; }
};

/// Evaluation of one encoder: both settings plus dissections.
struct ModelReport {
  std::string model;
  std::optional<eval::RunResult> single;
  std::optional<eval::RunResult> multi;
  std::optional<eval::Dissection> single_by_match;
  std::optional<eval::Dissection> single_by_query;
  std::optional<eval::Dissection> multi_by_query;

  /// Dissected single-patient MRR for a match type, if any query has it.
  std::optional<double> match_mrr(eval::MatchType t) const;
};

using Log = std::function<void(const std::string&)>;

class Pipeline {
 public:
  /// Shared data (chunks, pairs) lives in config.paths.out; training and
  /// evaluation outputs go to `work_dir` (defaults to the same place).
  Pipeline(PipelineConfig config, Ablation ablation = {}, std::optional<std::filesystem::path> work_dir = {},
           Log log = {});

  /// Runs stages from `from` through `to` inclusive.
  void run(Stage from = Stage::chunk, Stage to = Stage::eval);
  void run_stage(Stage s);

  /// Reports of the untrained, stage-1 and stage-2 encoders that exist.
  const std::vector<ModelReport>& reports() const { return reports_; }
  const RunLayout& data() const { return data_; }
  const RunLayout& work() const { return work_; }

  /// Vocabulary over training chunk tokens and all KG terms, fresh table.
  static encoder::EncoderParams initial_encoder(std::span<const corpus::Chunk> chunks, const kg::KnowledgeGraph& kg,
                                                const PipelineConfig& config);

 private:
  const kg::KnowledgeGraph& graph();
  gen::GeneratorClient& client();
  gen::PromptTemplates prompts() const;
  void write_manifest() const;
  void stage_chunk();
  void stage_match();
  void stage_abbrev();
  void stage_pairs1();
  void stage_train1();
  void stage_pairs2();
  void stage_train2();
  void stage_eval();
  void say(const std::string& s) const {
    if (log_) log_(s);
  }

  PipelineConfig config_;
  Ablation ablation_;
  RunLayout data_, work_;
  Log log_;
  std::optional<kg::KnowledgeGraph> kg_;
  std::unique_ptr<gen::GeneratorClient> client_;
  std::vector<ModelReport> reports_;
};

/// Evaluates one encoder on held-out chunks: both settings and dissections.
/// Writes run files into `layout` when given.
ModelReport evaluate_model(const std::string& name, const encoder::EncoderParams& params,
                           std::span<const corpus::Chunk> chunks, const eval::Judgments& judgments,
                           std::size_t jobs, const RunLayout* layout = nullptr);

std::string format_reports(std::span<const ModelReport> reports);
nlohmann::json reports_json(std::span<const ModelReport> reports);

/// One comparison row per configuration (Table 4/5 shape).
struct AblationRow {
  std::string label;
  ModelReport report;
};

/// Runs the full pipeline (reusing existing shared artifacts) and then every
/// ablation in `variants`, each into out/ablate/<label>/.
std::vector<AblationRow> run_ablations(const PipelineConfig& config, std::span<const Ablation> variants, Log log = {});
std::string format_ablation_table(std::span<const AblationRow> rows);

}  // namespace ehrdr::pipeline
