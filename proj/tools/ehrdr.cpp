// Command-line front end: one subcommand per pipeline stage plus the whole
// pipeline, ablations, dataset statistics and the synthetic benchmark.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ehrdr/corpus.hpp"
#include "ehrdr/encoder.hpp"
#include "ehrdr/error.hpp"
#include "ehrdr/evalkit.hpp"
#include "ehrdr/io.hpp"
#include "ehrdr/manifest.hpp"
#include "ehrdr/pairgen.hpp"
#include "ehrdr/pipeline.hpp"
#include "ehrdr/synth.hpp"

namespace fs = std::filesystem;
using namespace ehrdr;

namespace {

struct ConfigArgs {
  std::vector<std::string> files;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.files, "config file(s); later files override earlier ones");
  cmd->add_option("--set", args.sets, "key=value override (wins over config files)");
}

pipeline::PipelineConfig load_config(const ConfigArgs& args, std::optional<std::size_t> jobs) {
  Manifest m;
  for (const auto& f : args.files) m.load(f);
  for (const auto& s : args.sets) m.set_assignment(s);
  if (jobs) m.set("jobs", std::to_string(*jobs));
  return pipeline::PipelineConfig::from_manifest(m);
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

/// Latest encoder in the run directory: stage 2, else stage 1, else untrained.
fs::path latest_checkpoint(const pipeline::RunLayout& layout) {
  for (const char* m : {"stage2", "stage1", "untrained"})
    if (fs::exists(layout.checkpoint(m))) return layout.checkpoint(m);
  throw Error("no encoder checkpoint in " + layout.dir.string());
}

eval::Judgments judgments_from(const pipeline::PipelineConfig& c) {
  if (!c.paths.queries || !c.paths.qrels) throw ConfigError("config keys queries and qrels are required");
  return eval::load_judgments(*c.paths.queries, *c.paths.qrels);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage dense retrieval training for clinical notes"};
  app.require_subcommand(1);
  std::optional<std::size_t> jobs;
  app.add_option("-j,--jobs", jobs, "cap on worker threads for every stage")->check(CLI::PositiveNumber);

  ConfigArgs cfg;

  // synth
  auto* synth = app.add_subcommand("synth", "write the bundled synthetic benchmark");
  synth::SynthOptions synth_opt;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_opt.seed, "generator seed");
  synth->add_option("--concepts", synth_opt.concepts, "knowledge graph size");
  synth->add_option("--train-notes", synth_opt.train_notes, "training notes");
  synth->add_option("--eval-notes", synth_opt.eval_notes, "held-out evaluation notes");

  // single stages
  auto* chunk = app.add_subcommand("chunk", "clean and chunk notes");
  auto* match = app.add_subcommand("match", "dictionary-match KG terms in chunks");
  auto* abbrev = app.add_subcommand("abbrev", "abbreviation reduction and cleaning");
  auto* pairs = app.add_subcommand("pairs", "build a positive-pair dataset");
  int pairs_stage = 1;
  pairs->add_option("--stage", pairs_stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  auto* train = app.add_subcommand("train", "train the encoder on one stage");
  int train_stage = 1;
  train->add_option("--stage", train_stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  for (auto* cmd : {chunk, match, abbrev, pairs, train}) add_config_options(cmd, cfg);

  auto* evalc = app.add_subcommand("eval", "evaluate an encoder in one setting");
  std::string setting = "single";
  std::string checkpoint;
  evalc->add_option("--setting", setting, "single or multi")->check(CLI::IsMember({"single", "multi"}));
  evalc->add_option("--checkpoint", checkpoint, "encoder checkpoint (default: latest in the run directory)");
  add_config_options(evalc, cfg);

  auto* dis = app.add_subcommand("dissect", "per-category metrics of a run file");
  std::string axis = "match", run_file, queries_file, qrels_file;
  bool dis_json = false;
  dis->add_option("--axis", axis, "match or query")->check(CLI::IsMember({"match", "query"}));
  dis->add_option("--setting", setting, "single or multi")->check(CLI::IsMember({"single", "multi"}));
  dis->add_option("--run", run_file, "run TSV")->required()->check(CLI::ExistingFile);
  dis->add_option("--queries", queries_file, "queries TSV")->required()->check(CLI::ExistingFile);
  dis->add_option("--qrels", qrels_file, "qrels TSV")->required()->check(CLI::ExistingFile);
  dis->add_flag("--json", dis_json, "print JSON");

  auto* pipe = app.add_subcommand("pipeline", "run every stage end to end");
  std::string from = "chunk", to = "eval";
  pipe->add_option("--from", from, "first stage to run (resume)");
  pipe->add_option("--to", to, "last stage to run");
  add_config_options(pipe, cfg);

  auto* abl = app.add_subcommand("ablate", "train and evaluate ablated configurations");
  std::vector<std::string> without, stage2_only;
  bool combine = false;
  abl->add_option("--without", without, "stage1 or a stage-I source to drop");
  abl->add_option("--stage2-only", stage2_only, "train stage II on one query type (disease, procedure, drug)");
  abl->add_flag("--combine", combine, "apply all switches together as one configuration");
  add_config_options(abl, cfg);

  auto* stats = app.add_subcommand("stats", "per-source statistics of a pairs file");
  std::string pairs_file;
  int stats_stage = 0;
  bool stats_json = false;
  stats->add_option("pairs", pairs_file, "pairs JSONL")->required();
  stats->add_option("--stage", stats_stage, "1 or 2 (default: inferred)")->check(CLI::IsMember({0, 1, 2}));
  stats->add_flag("--json", stats_json, "print JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto bench = synth::generate(synth_opt);
      synth::write_benchmark(bench, synth_out);
      // Paths for the pipeline, relative to the benchmark directory.
      io::write_file(fs::path(synth_out) / "paths.conf",
                     "notes = notes.jsonl\neval_notes = eval_notes.jsonl\nkg.concepts = kg/concepts.jsonl\n"
                     "kg.relations = kg/relations.tsv\nabbreviations = abbreviations.tsv\n"
                     "queries = eval/queries.tsv\nqrels = eval/qrels.tsv\nout = run\n");
      std::printf("wrote %zu concepts, %zu training notes, %zu evaluation notes, %zu queries to %s\n",
                  bench.concepts.size(), bench.train_notes.size(), bench.eval_notes.size(),
                  bench.judgments.queries().size(), synth_out.c_str());
      return 0;
    }

    if (stats->parsed()) {
      const auto sets = pairgen::load_pairs(pairs_file);
      const auto s = pairgen::compute_stats(sets, stats_stage ? stats_stage : pairgen::infer_stage(sets));
      std::cout << (stats_json ? s.to_json() + "\n" : s.to_table());
      return 0;
    }

    if (dis->parsed()) {
      const auto judgments = eval::load_judgments(queries_file, qrels_file);
      const auto run = eval::score_rankings(eval::load_run(run_file), judgments, eval::parse_setting(setting));
      const auto d = eval::dissect(run, judgments, eval::parse_axis(axis));
      std::cout << (dis_json ? eval::to_json(d).dump(2) + "\n" : eval::format_dissection(d, run_file));
      return 0;
    }

    const auto config = load_config(cfg, jobs);

    if (pipe->parsed()) {
      pipeline::Pipeline p(config, {}, std::nullopt, log_line);
      p.run(pipeline::parse_stage(from), pipeline::parse_stage(to));
      return 0;
    }

    if (abl->parsed()) {
      std::vector<pipeline::Ablation> variants;
      pipeline::Ablation joint;
      for (const auto& w : without) {
        pipeline::Ablation a;
        pipeline::add_without(a, w);
        pipeline::add_without(joint, w);
        variants.push_back(a);
      }
      for (const auto& t : stage2_only) {
        pipeline::Ablation a;
        a.stage2_only = eval::parse_query_type(t);
        joint.stage2_only = a.stage2_only;
        variants.push_back(a);
      }
      if (combine) variants = {joint};
      const auto rows = pipeline::run_ablations(config, variants, log_line);
      const auto table = pipeline::format_ablation_table(rows);
      io::write_file(config.paths.out / "ablation.txt", table);
      std::cout << table;
      return 0;
    }

    pipeline::Pipeline p(config, {}, std::nullopt, log_line);
    if (chunk->parsed()) p.run(pipeline::Stage::chunk, pipeline::Stage::chunk);
    if (match->parsed()) p.run(pipeline::Stage::match, pipeline::Stage::match);
    if (abbrev->parsed()) p.run(pipeline::Stage::abbrev, pipeline::Stage::abbrev);
    if (pairs->parsed()) {
      const auto s = pairs_stage == 1 ? pipeline::Stage::pairs1 : pipeline::Stage::pairs2;
      p.run(s, s);
    }
    if (train->parsed()) {
      const auto s = train_stage == 1 ? pipeline::Stage::train1 : pipeline::Stage::train2;
      p.run(s, s);
    }
    if (evalc->parsed()) {
      const auto judgments = judgments_from(config);
      const auto chunks = corpus::load_chunks(p.data().eval_chunks());
      const fs::path ckpt = checkpoint.empty() ? latest_checkpoint(p.work()) : fs::path(checkpoint);
      const auto params = encoder::load_checkpoint(ckpt);
      eval::EncoderScorer scorer(params);
      scorer.prepare(chunks, config.jobs);
      const auto s = eval::parse_setting(setting);
      const auto run = eval::run_setting(scorer, judgments, chunks, s, config.jobs);
      const auto model = ckpt.stem().string();
      eval::save_run(p.work().dir / ("run_" + model.substr(model.find('_') + 1) + "_" + setting + ".tsv"), run);
      std::cout << eval::format_report(run, ckpt.filename().string());
      std::cout << eval::format_dissection(eval::dissect(run, judgments, eval::Axis::query_type), "dissection");
      if (s == eval::Setting::single)
        std::cout << eval::format_dissection(eval::dissect(run, judgments, eval::Axis::match_type), "dissection");
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
