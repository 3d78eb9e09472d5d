#include <doctest.h>

#include <cmath>

#include "bench.hpp"
#include "ehrdr/error.hpp"
#include "ehrdr/manifest.hpp"
#include "ehrdr/pipeline.hpp"
#include "ehrdr/synth.hpp"
#include "test_util.hpp"

using namespace ehrdr;
using pipeline::Pipeline;
using pipeline::PipelineConfig;
using pipeline::Stage;

TEST_CASE("manifest layering and paths") {
  testing::TempDir dir;
  testing::write(dir / "a.conf", "# comment\nseed = 4\nout = run\nname = x y\n");
  testing::write(dir / "sub" / "b.conf", "seed = 5\nnotes = notes.jsonl\n");
  Manifest m;
  m.load(dir / "a.conf");
  m.load(dir / "sub" / "b.conf");
  CHECK(m.u64("seed", 0) == 5);
  CHECK(m.text("name", "") == "x y");
  CHECK(*m.path("notes") == dir.path() / "sub" / "notes.jsonl");
  CHECK(*m.path("out") == dir.path() / "run");
  const auto h = m.hash();
  m.set_assignment("seed=6");
  CHECK(m.u64("seed", 0) == 6);
  CHECK(m.hash() != h);
  CHECK_THROWS_AS(m.set_assignment("noequals"), ConfigError);
  CHECK_THROWS_AS(m.require_known({"seed"}), ConfigError);
  m.set("flag", "maybe");
  CHECK_THROWS_AS(m.flag("flag", false), ConfigError);
  m.set("n", "abc");
  CHECK_THROWS_AS(m.number("n", 0), ConfigError);
  testing::write(dir / "bad.conf", "no equals sign\n");
  CHECK_THROWS_AS(m.load(dir / "bad.conf"), ParseError);
  CHECK_THROWS_AS(m.load(dir / "missing.conf"), Error);
}

TEST_CASE("synthetic benchmark generation") {
  const auto opt = bench::small();
  const auto a = synth::generate(opt);
  const auto b = synth::generate(opt);
  CHECK(a.judgments == b.judgments);
  CHECK(a.concepts.size() == opt.concepts);
  CHECK(a.train_notes.size() == opt.train_notes);
  CHECK(a.eval_notes.size() == opt.eval_notes);
  const kg::KnowledgeGraph g(a.concepts, a.relations);

  // single-patient qrels stay inside the query's note
  std::size_t multi = 0;
  for (const auto& q : a.judgments.queries()) {
    if (q.multi_patient()) {
      ++multi;
      continue;
    }
    for (const auto& [chunk, type] : a.judgments.qrels(q.id)) CHECK(chunk.rfind(q.note_id + "#", 0) == 0);
  }
  CHECK(multi == opt.multi_queries);

  // every planted match type occurs
  std::set<eval::MatchType> types;
  for (const auto& q : a.judgments.queries())
    for (const auto& [chunk, type] : a.judgments.qrels(q.id)) types.insert(type);
  CHECK(types.size() == 5);
}

TEST_CASE("judge priorities") {
  const auto g = testing::small_graph();
  const synth::Judge judge(g, {{"htn", "hypertension"}});
  using eval::MatchType;
  CHECK(judge.classify("c1", "hypertension", "known hypertension") == MatchType::string);
  CHECK(judge.classify("c1", "hypertension", "high blood pressure noted") == MatchType::synonym);
  CHECK(judge.classify("c1", "hypertension", "hx of htn") == MatchType::synonym);
  // the child term contains a parent term, so the synonym match wins
  CHECK(judge.classify("c1", "high blood pressure", "essential hypertension") == MatchType::synonym);
  CHECK(judge.classify("c2", "cardiovascular disease", "essential hypertension") == MatchType::hyponym);
  CHECK(judge.classify("c1", "hypertension", "started zestril") == MatchType::implication);
  CHECK(!judge.classify("c1", "hypertension", "gerd only").has_value());

  std::vector<kg::Concept> cs{{"m", "Disease, Syndrome or Pathologic Function", {"myocardial infarction"}}};
  const kg::KnowledgeGraph g2(cs, {});
  const synth::Judge j2(g2, {{"mi", "myocardial infarction"}});
  CHECK(j2.classify("m", "myocardial infarction", "r/o mi today") == MatchType::abbreviation);
}

TEST_CASE("pipeline config validation") {
  testing::TempDir dir;
  auto m = bench::prepare(dir.path(), bench::small());
  CHECK_NOTHROW(PipelineConfig::from_manifest(m));

  auto missing = m;
  missing.set("notes", "nowhere/notes.jsonl", dir.path());
  try {
    PipelineConfig::from_manifest(missing);
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("nowhere/notes.jsonl") != std::string::npos);
  }
  auto unknown = m;
  unknown.set("stage1.learning_rate", "1");
  CHECK_THROWS_AS(PipelineConfig::from_manifest(unknown), ConfigError);
  auto bad_batch = m;
  bad_batch.set("stage2.batch_size", "1");
  CHECK_THROWS_AS(PipelineConfig::from_manifest(bad_batch), ConfigError);
}

TEST_CASE("pipeline end to end on a small benchmark") {
  testing::TempDir dir;
  const std::vector<std::string> fast{"stage1.epochs=2", "stage2.epochs=1", "jobs=2"};
  const auto cfg = PipelineConfig::from_manifest(bench::prepare(dir.path(), bench::small(), fast));
  Pipeline p(cfg);
  p.run();
  const auto& L = p.data();
  for (const auto& f : {L.chunks(), L.eval_chunks(), L.mentions(), L.abbreviations(), L.pairs(1), L.pairs(2),
                        L.stats(1), L.stats(2), L.loss(1), L.loss(2), L.report(), L.report_json(), L.manifest()})
    CHECK_MESSAGE(std::filesystem::exists(f), f.string());
  CHECK(p.reports().size() == 3);
  const auto manifest = testing::slurp(L.manifest());
  CHECK(manifest.find("config_hash") != std::string::npos);
  CHECK(manifest.find("seed = 13") != std::string::npos);

  // resuming from train1 reproduces the same artifacts
  const auto loss2 = testing::slurp(L.loss(2));
  const auto run2 = testing::slurp(L.run("stage2", eval::Setting::single));
  Pipeline resumed(cfg);
  resumed.run(Stage::train1, Stage::eval);
  CHECK(testing::slurp(L.loss(2)) == loss2);
  CHECK(testing::slurp(L.run("stage2", eval::Setting::single)) == run2);

  // an empty ablation set reproduces the pipeline output
  auto other = cfg;
  other.paths.out = dir / "again";
  const auto rows = pipeline::run_ablations(other, {});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].label == "full");
  CHECK(testing::slurp(dir / "again" / "run_stage2_single.tsv") == run2);
  CHECK(testing::slurp(dir / "again" / "pairs_stage1.jsonl") == testing::slurp(L.pairs(1)));

  // thread count does not change any artifact
  auto serial_m = bench::prepare(dir.path(), bench::small(), fast, "serial");
  serial_m.set("jobs", "1");
  Pipeline serial(PipelineConfig::from_manifest(serial_m));
  serial.run();
  const auto& S = serial.data();
  for (const auto& [a, b] : std::vector<std::pair<std::filesystem::path, std::filesystem::path>>{
           {L.pairs(1), S.pairs(1)}, {L.pairs(2), S.pairs(2)}, {L.loss(1), S.loss(1)}, {L.loss(2), S.loss(2)},
           {L.checkpoint("stage2"), S.checkpoint("stage2")}, {L.report_json(), S.report_json()}})
    CHECK_MESSAGE(testing::slurp(a) == testing::slurp(b), b.string());

  // a stage with missing inputs names itself
  std::filesystem::remove(L.chunks());
  try {
    Pipeline(cfg).run_stage(Stage::match);
    FAIL("expected an error");
  } catch (const pipeline::StageError& e) {
    CHECK(e.stage() == Stage::match);
    CHECK(std::string(e.what()).find("stage match failed") != std::string::npos);
  }
}

TEST_CASE("ablation switches") {
  pipeline::Ablation a;
  CHECK(a.label() == "full");
  pipeline::add_without(a, "stage1");
  pipeline::add_without(a, "kg_synonym");
  CHECK(a.skip_stage1);
  CHECK(!a.keeps({"x", pairgen::Source::kg_synonym, "c"}));
  CHECK(a.keeps({"x", pairgen::Source::kg_related, "c"}));
  CHECK_THROWS_AS(pipeline::add_without(a, "nonsense"), ConfigError);
  pipeline::Ablation d;
  d.stage2_only = eval::QueryType::disease;
  CHECK(d.keeps({"x", pairgen::Source::syn_disease, std::nullopt}));
  CHECK(!d.keeps({"x", pairgen::Source::syn_drug, std::nullopt}));
  CHECK(d.keeps({"x", pairgen::Source::string, "c"}));
}
