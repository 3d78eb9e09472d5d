#include "ehrdr/pipeline.hpp"

#include <cinttypes>
#include <cstdio>

#include "ehrdr/io.hpp"
#include "ehrdr/matcher.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::pipeline {

namespace fs = std::filesystem;

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::chunk: return "chunk";
    case Stage::match: return "match";
    case Stage::abbrev: return "abbrev";
    case Stage::pairs1: return "pairs1";
    case Stage::train1: return "train1";
    case Stage::pairs2: return "pairs2";
    case Stage::train2: return "train2";
    case Stage::eval: return "eval";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (auto st : kStages)
    if (to_string(st) == s) return st;
  throw ConfigError("unknown stage \"" + std::string(s) +
                    "\" (expected chunk, match, abbrev, pairs1, train1, pairs2, train2 or eval)");
}

namespace {

const std::set<std::string, std::less<>>& known_keys() {
  static const std::set<std::string, std::less<>> keys = [] {
    std::set<std::string, std::less<>> k{
        "notes", "eval_notes", "kg.concepts", "kg.relations", "abbreviations", "prompts", "queries", "qrels", "out",
        "corpus.window", "corpus.overlap", "corpus.masks", "client", "gen.base_url", "gen.model", "gen.timeout_s",
        "gen.max_retries", "gen.max_in_flight", "gen.backoff_ms", "mock.noise_rate", "encoder.dim",
        "encoder.oov_buckets", "encoder.init_scale", "msl.epsilon", "msl.alpha", "msl.beta", "msl.lambda", "seed",
        "jobs"};
    for (const char* stage : {"stage1.", "stage2."})
      for (const char* field : {"positives", "batch_size", "epochs", "lr", "warmup_ratio", "optimizer",
                                "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "negative_filter"})
        k.insert(std::string(stage) + field);
    return k;
  }();
  return keys;
}

trainer::TrainConfig read_train(const Manifest& m, const std::string& prefix, trainer::TrainConfig t) {
  t.positives_per_chunk = m.count(prefix + "positives", t.positives_per_chunk);
  t.batch_size = m.count(prefix + "batch_size", t.batch_size);
  t.epochs = m.count(prefix + "epochs", t.epochs);
  t.lr = m.number(prefix + "lr", t.lr);
  t.warmup_ratio = m.number(prefix + "warmup_ratio", t.warmup_ratio);
  t.weight_decay = m.number(prefix + "weight_decay", t.weight_decay);
  t.adam_beta1 = m.number(prefix + "adam_beta1", t.adam_beta1);
  t.adam_beta2 = m.number(prefix + "adam_beta2", t.adam_beta2);
  t.adam_eps = m.number(prefix + "adam_eps", t.adam_eps);
  t.in_batch_negative_filter = m.flag(prefix + "negative_filter", t.in_batch_negative_filter);
  const auto opt = m.text(prefix + "optimizer", "adamw");
  if (opt == "adamw") {
    t.optimizer = trainer::OptimizerKind::adamw;
  } else if (opt == "sgd") {
    t.optimizer = trainer::OptimizerKind::sgd;
  } else {
    throw ConfigError(prefix + "optimizer must be adamw or sgd, got \"" + opt + "\"");
  }
  t.validate();
  return t;
}

fs::path require_path(const Manifest& m, std::string_view key) {
  const auto p = m.path(key);
  if (!p) throw ConfigError("config key " + std::string(key) + " is required");
  if (!fs::exists(*p)) throw ConfigError(std::string(key) + ": path does not exist: " + p->string());
  return *p;
}

std::optional<fs::path> optional_path(const Manifest& m, std::string_view key) {
  const auto p = m.path(key);
  if (p && !fs::exists(*p)) throw ConfigError(std::string(key) + ": path does not exist: " + p->string());
  return p;
}

pairgen::Source source_of(eval::QueryType t) {
  switch (t) {
    case eval::QueryType::disease: return pairgen::Source::syn_disease;
    case eval::QueryType::procedure: return pairgen::Source::syn_procedure;
    case eval::QueryType::drug: return pairgen::Source::syn_drug;
  }
  return pairgen::Source::syn_disease;
}

}  // namespace

PipelineConfig PipelineConfig::from_manifest(const Manifest& m) {
  m.require_known(known_keys());
  PipelineConfig c;
  c.manifest = m;
  c.paths.notes = require_path(m, "notes");
  c.paths.concepts = require_path(m, "kg.concepts");
  c.paths.relations = require_path(m, "kg.relations");
  c.paths.eval_notes = optional_path(m, "eval_notes");
  c.paths.abbreviations = optional_path(m, "abbreviations");
  c.paths.prompts = optional_path(m, "prompts");
  c.paths.queries = optional_path(m, "queries");
  c.paths.qrels = optional_path(m, "qrels");
  const auto out = m.path("out");
  if (!out) throw ConfigError("config key out is required");
  c.paths.out = *out;

  c.chunking.window = m.count("corpus.window", c.chunking.window);
  c.chunking.overlap = m.count("corpus.overlap", c.chunking.overlap);
  if (const auto masks = m.get("corpus.masks")) c.chunking.mask_patterns = text::split_ws(*masks);
  if (c.chunking.overlap >= c.chunking.window) throw ConfigError("corpus.overlap must be smaller than corpus.window");

  c.client = m.text("client", "mock");
  if (c.client != "mock" && c.client != "http") throw ConfigError("client must be mock or http");
  c.http.base_url = m.text("gen.base_url", c.http.base_url);
  c.http.model = m.text("gen.model", c.http.model);
  c.http.timeout_s = m.number("gen.timeout_s", c.http.timeout_s);
  c.http.max_retries = static_cast<int>(m.count("gen.max_retries", static_cast<std::size_t>(c.http.max_retries)));
  c.http.max_in_flight = static_cast<int>(m.count("gen.max_in_flight", static_cast<std::size_t>(c.http.max_in_flight)));
  c.http.backoff_ms = static_cast<int>(m.count("gen.backoff_ms", static_cast<std::size_t>(c.http.backoff_ms)));
  c.http = gen::ClientConfig::from_env(c.http);
  c.mock_noise_rate = m.number("mock.noise_rate", c.mock_noise_rate);
  if (c.client == "mock" && !c.paths.abbreviations)
    throw ConfigError("the mock client needs an abbreviations table (config key abbreviations)");

  c.dim = m.count("encoder.dim", c.dim);
  c.oov_buckets = m.count("encoder.oov_buckets", c.oov_buckets);
  c.init_scale = m.number("encoder.init_scale", c.init_scale);
  if (c.dim == 0) throw ConfigError("encoder.dim must be positive");

  c.msl.epsilon = m.number("msl.epsilon", c.msl.epsilon);
  c.msl.alpha = m.number("msl.alpha", c.msl.alpha);
  c.msl.beta = m.number("msl.beta", c.msl.beta);
  c.msl.lambda = m.number("msl.lambda", c.msl.lambda);
  c.msl.validate();

  c.seed = m.u64("seed", 0);
  c.jobs = std::max<std::size_t>(1, m.count("jobs", 1));

  trainer::TrainConfig s1;
  s1.positives_per_chunk = 16;
  s1.batch_size = 16;
  trainer::TrainConfig s2 = s1;
  s2.positives_per_chunk = 8;
  c.stage1 = read_train(m, "stage1.", s1);
  c.stage2 = read_train(m, "stage2.", s2);
  c.stage1.seed = c.component_seed("train1");
  c.stage2.seed = c.component_seed("train2");
  return c;
}

std::uint64_t PipelineConfig::component_seed(std::string_view component) const {
  return mix_seed(seed, fnv1a64(component));
}

std::string Ablation::label() const {
  std::vector<std::string> parts;
  if (skip_stage1) parts.emplace_back("wo_stage1");
  for (auto s : disabled) parts.push_back("wo_" + std::string(pairgen::to_string(s)));
  if (stage2_only) parts.push_back("stage2_" + std::string(eval::to_string(*stage2_only)));
  return parts.empty() ? "full" : text::join(parts, "+");
}

bool Ablation::keeps(const pairgen::PositiveSample& s) const {
  if (disabled.contains(s.source)) return false;
  if (stage2_only && std::find(pairgen::kStage2Sources.begin(), pairgen::kStage2Sources.end(), s.source) !=
                         pairgen::kStage2Sources.end())
    return s.source == source_of(*stage2_only);
  return true;
}

void add_without(Ablation& a, std::string_view what) {
  if (what == "stage1") {
    a.skip_stage1 = true;
    return;
  }
  const auto s = pairgen::parse_source(what);
  if (!s || std::find(pairgen::kStage1Sources.begin(), pairgen::kStage1Sources.end(), *s) ==
                pairgen::kStage1Sources.end())
    throw ConfigError("--without expects stage1 or a stage-I source (string, abbreviation, kg_synonym, "
                      "kg_hypernym, kg_related), got \"" + std::string(what) + "\"");
  a.disabled.insert(*s);
}

std::optional<double> ModelReport::match_mrr(eval::MatchType t) const {
  if (!single_by_match) return std::nullopt;
  for (const auto& r : single_by_match->rows)
    if (r.category == eval::to_string(t)) return r.metrics[0];
  return std::nullopt;
}

Pipeline::Pipeline(PipelineConfig config, Ablation ablation, std::optional<fs::path> work_dir, Log log)
    : config_(std::move(config)),
      ablation_(std::move(ablation)),
      data_{config_.paths.out},
      work_{work_dir.value_or(config_.paths.out)},
      log_(std::move(log)) {}

const kg::KnowledgeGraph& Pipeline::graph() {
  if (!kg_) kg_.emplace(kg::load_kg(config_.paths.concepts, config_.paths.relations));
  return *kg_;
}

gen::GeneratorClient& Pipeline::client() {
  if (!client_) {
    if (config_.client == "http") {
      client_ = std::make_unique<gen::HttpGeneratorClient>(config_.http);
    } else {
      client_ = std::make_unique<gen::MockGeneratorClient>(
          graph(), gen::load_abbreviation_table(*config_.paths.abbreviations),
          gen::MockOptions{config_.component_seed("mock"), config_.mock_noise_rate});
    }
  }
  return *client_;
}

gen::PromptTemplates Pipeline::prompts() const {
  return config_.paths.prompts ? gen::PromptTemplates::load(*config_.paths.prompts) : gen::PromptTemplates::defaults();
}

void Pipeline::write_manifest() const {
  char buf[128];
  std::snprintf(buf, sizeof buf, "config_hash = %016" PRIx64 "\nseed = %" PRIu64 "\n", config_.manifest.hash(),
                config_.seed);
  io::write_file(work_.manifest(), "# resolved configuration\n" + config_.manifest.canonical() + "ablation = " +
                                       ablation_.label() + "\n" + buf);
}

void Pipeline::run(Stage from, Stage to) {
  fs::create_directories(work_.dir);
  write_manifest();
  for (auto s : kStages)
    if (s >= from && s <= to) run_stage(s);
}

void Pipeline::run_stage(Stage s) {
  try {
    switch (s) {
      case Stage::chunk: stage_chunk(); break;
      case Stage::match: stage_match(); break;
      case Stage::abbrev: stage_abbrev(); break;
      case Stage::pairs1: stage_pairs1(); break;
      case Stage::train1: stage_train1(); break;
      case Stage::pairs2: stage_pairs2(); break;
      case Stage::train2: stage_train2(); break;
      case Stage::eval: stage_eval(); break;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(s, e.what());
  }
}

void Pipeline::stage_chunk() {
  const auto notes = corpus::load_notes(config_.paths.notes);
  const auto chunks = corpus::prepare_chunks(notes, config_.chunking);
  corpus::save_chunks(data_.chunks(), chunks);
  say("[chunk] " + std::to_string(chunks.size()) + " chunks from " + std::to_string(notes.size()) + " notes");
  if (config_.paths.eval_notes) {
    const auto eval_notes = corpus::load_notes(*config_.paths.eval_notes);
    const auto eval_chunks = corpus::prepare_chunks(eval_notes, config_.chunking);
    corpus::save_chunks(data_.eval_chunks(), eval_chunks);
    say("[chunk] " + std::to_string(eval_chunks.size()) + " evaluation chunks from " +
        std::to_string(eval_notes.size()) + " notes");
  }
}

void Pipeline::stage_match() {
  const auto chunks = corpus::load_chunks(data_.chunks());
  const auto automaton = matcher::build_automaton(graph(), graph().filter());
  const auto rows = pairgen::match_chunks(automaton, chunks, config_.jobs);
  matcher::save_mentions(data_.mentions(), rows);
  std::size_t n = 0;
  for (const auto& r : rows) n += r.mentions.size();
  say("[match] " + std::to_string(n) + " mentions over " + std::to_string(automaton.pattern_count()) + " patterns");
}

void Pipeline::stage_abbrev() {
  const auto chunks = corpus::load_chunks(data_.chunks());
  const auto rows = pairgen::reduce_chunks(client(), prompts(), chunks, graph(), config_.jobs);
  pairgen::save_abbreviations(data_.abbreviations(), rows);
  std::size_t raw = 0, kept = 0, skipped = 0;
  for (const auto& r : rows) {
    raw += r.raw.size();
    kept += r.cleaned.size();
    skipped += r.skipped;
  }
  say("[abbrev] " + std::to_string(kept) + " of " + std::to_string(raw) + " pairs kept, " + std::to_string(skipped) +
      " unparseable lines");
}

void Pipeline::stage_pairs1() {
  const auto chunks = corpus::load_chunks(data_.chunks());
  const auto abbreviations = pairgen::load_abbreviations(data_.abbreviations());
  if (abbreviations.size() != chunks.size()) throw Error("abbreviations file does not match the chunk file");
  for (std::size_t i = 0; i < chunks.size(); ++i)
    if (abbreviations[i].chunk_id != chunks[i].id())
      throw Error("abbreviations file out of step with chunks at " + chunks[i].id());
  const auto automaton = matcher::build_automaton(graph(), graph().filter());
  const auto result = pairgen::build_stage1(graph(), automaton, chunks, abbreviations, config_.component_seed("pairs1"));
  pairgen::save_pairs(data_.pairs(1), result.sets);
  const auto stats = pairgen::compute_stats(result.sets, 1);
  io::write_file(data_.stats(1), stats.to_table());
  say("[pairs1]\n" + stats.to_table());
}

void Pipeline::stage_pairs2() {
  const auto chunks = corpus::load_chunks(data_.chunks());
  const auto sets = pairgen::build_stage2(client(), prompts(), chunks, config_.jobs);
  pairgen::save_pairs(data_.pairs(2), sets);
  const auto stats = pairgen::compute_stats(sets, 2);
  io::write_file(data_.stats(2), stats.to_table());
  say("[pairs2]\n" + stats.to_table());
}

encoder::EncoderParams Pipeline::initial_encoder(std::span<const corpus::Chunk> chunks, const kg::KnowledgeGraph& kg,
                                                 const PipelineConfig& config) {
  std::vector<std::string> texts;
  texts.reserve(chunks.size() + kg.concepts().size());
  for (const auto& c : chunks) texts.push_back(c.text);
  for (const auto& c : kg.concepts())
    for (const auto& t : c.terms) texts.push_back(t);
  return encoder::EncoderParams(encoder::Vocabulary::build(texts, config.oov_buckets), config.dim,
                                config.component_seed("encoder"), config.init_scale);
}

namespace {

void train_stage(int stage, const trainer::TrainConfig& cfg, const trainer::MslConfig& msl,
                 std::span<const corpus::Chunk> chunks, std::span<const pairgen::PositiveSet> sets,
                 const Ablation& ablation, encoder::EncoderParams& params, const RunLayout& out, const Log& log) {
  const auto examples =
      trainer::make_examples(chunks, sets, [&](const pairgen::PositiveSample& s) { return ablation.keeps(s); });
  const auto result = trainer::train(examples, params, cfg, msl);
  trainer::save_history(out.loss(stage), result.history);
  encoder::save_checkpoint(out.checkpoint("stage" + std::to_string(stage)), params);
  if (log && !result.history.empty()) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "[train%d] %zu examples, %zu steps, loss %.4f -> %.4f", stage, examples.size(),
                  result.total_steps, result.history.front().loss, result.history.back().loss);
    log(buf);
  }
}

}  // namespace

void Pipeline::stage_train1() {
  const auto chunks = corpus::load_chunks(data_.chunks());
  auto params = initial_encoder(chunks, graph(), config_);
  encoder::save_checkpoint(work_.checkpoint("untrained"), params);
  if (ablation_.skip_stage1) {
    say("[train1] skipped (ablation " + ablation_.label() + ")");
    fs::remove(work_.checkpoint("stage1"));
    return;
  }
  const auto sets = pairgen::load_pairs(data_.pairs(1));
  train_stage(1, config_.stage1, config_.msl, chunks, sets, ablation_, params, work_, log_);
}

void Pipeline::stage_train2() {
  const auto chunks = corpus::load_chunks(data_.chunks());
  encoder::EncoderParams params;
  if (ablation_.skip_stage1) {
    params = initial_encoder(chunks, graph(), config_);
  } else {
    params = encoder::load_checkpoint(work_.checkpoint("stage1"));
  }
  const auto sets = pairgen::load_pairs(data_.pairs(2));
  train_stage(2, config_.stage2, config_.msl, chunks, sets, ablation_, params, work_, log_);
}

void Pipeline::stage_eval() {
  if (!config_.paths.queries || !config_.paths.qrels || !fs::exists(data_.eval_chunks())) {
    say("[eval] skipped: no evaluation notes, queries or qrels configured");
    return;
  }
  const auto judgments = eval::load_judgments(*config_.paths.queries, *config_.paths.qrels);
  const auto chunks = corpus::load_chunks(data_.eval_chunks());
  reports_.clear();
  for (const char* model : {"untrained", "stage1", "stage2"}) {
    const auto ckpt = work_.checkpoint(model);
    if (!fs::exists(ckpt)) continue;
    const auto params = encoder::load_checkpoint(ckpt);
    reports_.push_back(evaluate_model(model, params, chunks, judgments, config_.jobs, &work_));
  }
  const auto text = format_reports(reports_);
  io::write_file(work_.report(), text);
  io::write_file(work_.report_json(), reports_json(reports_).dump(2) + "\n");
  say("[eval]\n" + text);
}

ModelReport evaluate_model(const std::string& name, const encoder::EncoderParams& params,
                           std::span<const corpus::Chunk> chunks, const eval::Judgments& judgments, std::size_t jobs,
                           const RunLayout* layout) {
  ModelReport r;
  r.model = name;
  eval::EncoderScorer scorer(params);
  scorer.prepare(chunks, jobs);
  const bool any_single = std::any_of(judgments.queries().begin(), judgments.queries().end(),
                                      [](const eval::Query& q) { return !q.multi_patient(); });
  const bool any_multi = std::any_of(judgments.queries().begin(), judgments.queries().end(),
                                     [](const eval::Query& q) { return q.multi_patient(); });
  if (any_single) {
    r.single = eval::run_setting(scorer, judgments, chunks, eval::Setting::single, jobs);
    r.single_by_match = eval::dissect(*r.single, judgments, eval::Axis::match_type);
    r.single_by_query = eval::dissect(*r.single, judgments, eval::Axis::query_type);
    if (layout) eval::save_run(layout->run(name, eval::Setting::single), *r.single);
  }
  if (any_multi) {
    r.multi = eval::run_setting(scorer, judgments, chunks, eval::Setting::multi, jobs);
    r.multi_by_query = eval::dissect(*r.multi, judgments, eval::Axis::query_type);
    if (layout) eval::save_run(layout->run(name, eval::Setting::multi), *r.multi);
  }
  return r;
}

std::string format_reports(std::span<const ModelReport> reports) {
  std::string out;
  for (const auto& r : reports) {
    out += "== " + r.model + " ==\n";
    if (r.single) out += eval::format_report(*r.single, "retrieval");
    if (r.single_by_match) out += eval::format_dissection(*r.single_by_match, "dissection");
    if (r.single_by_query) out += eval::format_dissection(*r.single_by_query, "dissection");
    if (r.multi) out += eval::format_report(*r.multi, "retrieval");
    if (r.multi_by_query) out += eval::format_dissection(*r.multi_by_query, "dissection");
    out += '\n';
  }
  return out;
}

nlohmann::json reports_json(std::span<const ModelReport> reports) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& r : reports) {
    nlohmann::json m;
    if (r.single) m["single"] = eval::to_json(*r.single);
    if (r.single_by_match) m["single_by_match_type"] = eval::to_json(*r.single_by_match);
    if (r.single_by_query) m["single_by_query_type"] = eval::to_json(*r.single_by_query);
    if (r.multi) m["multi"] = eval::to_json(*r.multi);
    if (r.multi_by_query) m["multi_by_query_type"] = eval::to_json(*r.multi_by_query);
    j[r.model] = m;
  }
  return j;
}

std::vector<AblationRow> run_ablations(const PipelineConfig& config, std::span<const Ablation> variants, Log log) {
  Pipeline full(config, {}, std::nullopt, log);
  const auto& d = full.data();
  // Shared artifacts of an earlier run in the same directory are reused.
  fs::create_directories(d.dir);
  const std::pair<Stage, fs::path> shared[] = {{Stage::chunk, d.chunks()},
                                               {Stage::abbrev, d.abbreviations()},
                                               {Stage::pairs1, d.pairs(1)},
                                               {Stage::pairs2, d.pairs(2)}};
  for (const auto& [stage, file] : shared)
    if (!fs::exists(file)) full.run_stage(stage);
  full.run(Stage::train1, Stage::eval);

  std::vector<AblationRow> rows;
  if (!full.reports().empty()) rows.push_back({"full", full.reports().back()});
  for (const auto& v : variants) {
    if (v.empty()) continue;
    Pipeline p(config, v, d.dir / "ablate" / v.label(), log);
    p.run(Stage::train1, Stage::eval);
    if (!p.reports().empty()) rows.push_back({v.label(), p.reports().back()});
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %8s %8s", "configuration", "single", "multi");
  out += buf;
  for (auto t : eval::kMatchTypes) {
    std::snprintf(buf, sizeof buf, " %12.12s", std::string(eval::to_string(t)).c_str());
    out += buf;
  }
  for (auto t : eval::kQueryTypes) {
    std::snprintf(buf, sizeof buf, " %10s", std::string(eval::to_string(t)).c_str());
    out += buf;
  }
  out += '\n';
  auto cell = [&](std::optional<double> v, int width) {
    if (v) {
      std::snprintf(buf, sizeof buf, " %*.4f", width, *v);
    } else {
      std::snprintf(buf, sizeof buf, " %*s", width, "-");
    }
    out += buf;
  };
  auto row_avg = [](const std::optional<eval::Dissection>& d, std::string_view cat) -> std::optional<double> {
    if (!d) return std::nullopt;
    for (const auto& r : d->rows)
      if (r.category == cat) return r.average;
    return std::nullopt;
  };
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-28.28s", row.label.c_str());
    out += buf;
    const auto& r = row.report;
    cell(r.single ? std::optional(r.single->average()) : std::nullopt, 8);
    cell(r.multi ? std::optional(r.multi->average()) : std::nullopt, 8);
    for (auto t : eval::kMatchTypes) cell(row_avg(r.single_by_match, eval::to_string(t)), 12);
    for (auto t : eval::kQueryTypes) cell(row_avg(r.single_by_query, eval::to_string(t)), 10);
    out += '\n';
  }
  return out;
}

}  // namespace ehrdr::pipeline
