#include <doctest.h>

#include <cmath>

#include "dissect_fixture.hpp"
#include "ehrdr/corpus.hpp"
#include "ehrdr/error.hpp"
#include "ehrdr/evalkit.hpp"
#include "ehrdr/rng.hpp"
#include "ehrdr/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ehrdr;
using namespace ehrdr::eval;

namespace {

std::vector<std::string> v(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }
RelevantSet r(std::initializer_list<const char*> xs) { return {xs.begin(), xs.end()}; }

}  // namespace

TEST_CASE("metric examples") {
  CHECK(reciprocal_rank(v({"x", "y", "z", "a"}), r({"a"})) == 0.25);
  CHECK(reciprocal_rank(v({"a", "x"}), r({"a"})) == 1.0);
  CHECK(reciprocal_rank(v({"x", "y"}), r({"a"})) == 0.0);

  CHECK(average_precision(v({"a", "x", "b"}), r({"a", "b"})) == doctest::Approx(0.8333).epsilon(1e-4));
  CHECK(average_precision(v({"a", "b", "x"}), r({"a", "b"})) == 1.0);
  CHECK(average_precision(v({"x", "y"}), r({"a"})) == 0.0);

  CHECK(ndcg(v({"a", "x", "b"}), r({"a", "b"})) == doctest::Approx(0.9197).epsilon(1e-4));
  CHECK(ndcg(v({"a", "b", "x"}), r({"a", "b"})) == doctest::Approx(1.0));
  std::vector<std::string> late(12, "x");
  for (std::size_t i = 0; i < late.size(); ++i) late[i] += std::to_string(i);
  late.push_back("a");
  CHECK(ndcg(late, r({"a"}), 10) == 0.0);

  std::vector<std::string> hundred;
  for (int i = 0; i < 150; ++i) hundred.push_back("d" + std::to_string(i));
  CHECK(recall_at(hundred, r({"d1", "d50", "d120"})) == doctest::Approx(2.0 / 3));
  CHECK(recall_at(hundred, r({"d1", "d2"})) == 1.0);
  CHECK(recall_at(hundred, r({"d5"}), 3) == 0.0);
}

TEST_CASE("metrics equal the brute-force references") {
  Rng rng(17);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(150);
    std::vector<std::string> ranking;
    for (std::size_t i = 0; i < n; ++i) ranking.push_back("d" + std::to_string(i));
    rng.shuffle(ranking);
    std::set<std::string> rel;
    RelevantSet rs;
    const std::size_t nr = rng.below(8);
    for (std::size_t i = 0; i < nr; ++i) {
      // some relevant chunks are absent from the ranking
      const auto id = "d" + std::to_string(rng.below(n + 20));
      rel.insert(id);
      rs.insert(id);
    }
    CHECK(oracle::rel_err(reciprocal_rank(ranking, rs), oracle::rr(ranking, rel), 1e-12) < 1e-9);
    CHECK(oracle::rel_err(average_precision(ranking, rs), oracle::ap(ranking, rel), 1e-12) < 1e-9);
    CHECK(oracle::rel_err(ndcg(ranking, rs), oracle::ndcg(ranking, rel, ranking.size() + rel.size()), 1e-12) < 1e-9);
    CHECK(oracle::rel_err(ndcg(ranking, rs, 10), oracle::ndcg(ranking, rel, 10), 1e-12) < 1e-9);
    CHECK(oracle::rel_err(recall_at(ranking, rs, 100), oracle::recall(ranking, rel, 100), 1e-12) < 1e-9);
  }
}

TEST_CASE("metric properties") {
  Rng rng(23);
  for (int t = 0; t < 300; ++t) {
    std::vector<std::string> ranking;
    for (int i = 0; i < 20; ++i) ranking.push_back("d" + std::to_string(i));
    rng.shuffle(ranking);
    RelevantSet rel;
    for (std::size_t i = 0; i < 1 + rng.below(5); ++i) rel.insert("d" + std::to_string(rng.below(20)));
    for (double m : {reciprocal_rank(ranking, rel), average_precision(ranking, rel), ndcg(ranking, rel),
                     ndcg(ranking, rel, 10), recall_at(ranking, rel, 5)}) {
      CHECK(m >= 0.0);
      CHECK(m <= 1.0 + 1e-12);
    }
    // relevant-first reordering is ideal
    std::stable_partition(ranking.begin(), ranking.end(), [&](const std::string& d) { return rel.count(d) > 0; });
    CHECK(reciprocal_rank(ranking, rel) == 1.0);
    CHECK(average_precision(ranking, rel) == doctest::Approx(1.0));
    CHECK(ndcg(ranking, rel) == doctest::Approx(1.0));
    CHECK(ndcg(ranking, rel, 10) == doctest::Approx(1.0));
  }
}

TEST_CASE("ranking order breaks ties by chunk id") {
  std::vector<Scored> s{{"b", 0.5}, {"a", 0.5}, {"c", 0.9}, {"d", -1}};
  sort_ranking(s);
  CHECK(s == std::vector<Scored>{{"c", 0.9}, {"a", 0.5}, {"b", 0.5}, {"d", -1}});
}

TEST_CASE("judgments I/O") {
  testing::TempDir dir;
  const auto j = fixture::judgments();
  save_judgments(dir / "q.tsv", dir / "r.tsv", j);
  CHECK(load_judgments(dir / "q.tsv", dir / "r.tsv") == j);
  CHECK(j.relevant("q5", MatchType::string) == r({"n#2", "n#4"}));
  CHECK_THROWS_AS(j.query("q9"), Error);

  testing::write(dir / "bad.tsv", "q1\tn#1\t1\tweird\tdisease\n");
  CHECK_THROWS_AS(load_judgments(dir / "q.tsv", dir / "bad.tsv"), ParseError);
  testing::write(dir / "orphan.tsv", "q9\tn#1\t1\tstring\tdisease\n");
  CHECK_THROWS_AS(load_judgments(dir / "q.tsv", dir / "orphan.tsv"), Error);
}

TEST_CASE("single-patient runs") {
  const std::vector<corpus::Chunk> chunks{{"n", 0, 0, 1, "alpha"}, {"n", 1, 1, 2, "beta"}, {"n", 2, 2, 3, "gamma"},
                                          {"m", 0, 0, 1, "alpha"}};
  Judgments j({{"q", "n", "gamma", QueryType::drug}}, {{"q", {{"n#2", MatchType::string}}}});
  const auto params = encoder::EncoderParams(
      encoder::Vocabulary::build(std::vector<std::string>{"alpha beta gamma"}, 2), 16, 5, 0.5);
  EncoderScorer enc(params);
  enc.prepare(chunks, 1);
  const auto run = run_setting(enc, j, chunks, Setting::single);
  REQUIRE(run.queries.size() == 1);
  CHECK(run.queries[0].ranking.size() == 3);  // only note n
  CHECK(run.queries[0].ranking[0].chunk_id == "n#2");
  CHECK(run.macro == std::array<double, 3>{1.0, 1.0, 1.0});

  OracleScorer oracle_scorer(fixture::judgments());
  std::vector<corpus::Chunk> six;
  for (std::size_t i = 1; i <= 6; ++i) six.push_back({"n", i, 0, 1, "w"});
  oracle_scorer.prepare(six, 1);
  const auto ceiling = run_setting(oracle_scorer, fixture::judgments(), six, Setting::single);
  for (double m : ceiling.macro) CHECK(m == doctest::Approx(1.0));
}

TEST_CASE("run files round trip") {
  testing::TempDir dir;
  const auto run = score_rankings(fixture::rankings(), fixture::judgments(), Setting::single);
  save_run(dir / "run.tsv", run);
  const auto loaded = score_rankings(load_run(dir / "run.tsv"), fixture::judgments(), Setting::single);
  CHECK(loaded.macro == run.macro);
}

TEST_CASE("dissection") {
  const auto j = fixture::judgments();
  const auto run = score_rankings(fixture::rankings(), j, Setting::single);
  CHECK(fixture::deviation(dissect(run, j, Axis::match_type), fixture::match_axis()) < 1e-12);
  CHECK(fixture::deviation(dissect(run, j, Axis::query_type), fixture::query_axis()) < 1e-12);

  // one string and one synonym chunk; the synonym row sees its chunk at rank 1
  Judgments two({{"q", "n", "t", QueryType::disease}}, {{"q", {{"s", MatchType::string}, {"y", MatchType::synonym}}}});
  const auto r2 = score_rankings({{"q", {{"s", 3}, {"y", 2}, {"x", 1}}}}, two, Setting::single);
  const auto d2 = dissect(r2, two, Axis::match_type);
  for (const auto& row : d2.rows)
    if (row.category == "synonym") CHECK(row.metrics[0] == 1.0);

  Judgments single_type({{"q", "*", "t", QueryType::drug}, {"p", "*", "u", QueryType::drug}},
                        {{"q", {{"a", MatchType::synonym}, {"b", MatchType::synonym}}}, {"p", {{"b", MatchType::synonym}}}});
  const auto r3 = score_rankings({{"q", {{"x", 3}, {"a", 2}, {"b", 1}}}, {"p", {{"b", 3}, {"a", 2}}}}, single_type,
                                 Setting::multi);
  for (auto axis : {Axis::match_type, Axis::query_type}) {
    const auto d3 = dissect(r3, single_type, axis);
    REQUIRE(d3.rows.size() == 1);
    for (int k = 0; k < 3; ++k) CHECK(d3.rows[0].metrics[k] == doctest::Approx(r3.macro[k]).epsilon(1e-15));
  }
}

TEST_CASE("random scorer matches the analytic expectation over 100 seeds") {
  synth::SynthOptions opt;
  opt.train_notes = 1;
  opt.eval_notes = 20;
  const auto bench = synth::generate(opt);
  const auto chunks = corpus::prepare_chunks(bench.eval_notes, {});
  const auto& j = bench.judgments;

  std::map<std::string, std::size_t> per_note;
  for (const auto& c : chunks) ++per_note[c.note_id];
  double expected = 0, variance = 0;
  std::size_t nq = 0;
  for (const auto& q : j.queries()) {
    if (q.multi_patient()) continue;
    double var = 0;
    expected += oracle::random_rr_mean(per_note.at(q.note_id), j.relevant(q.id).size(), &var);
    variance += var;
    ++nq;
  }
  REQUIRE(nq > 20);
  expected /= static_cast<double>(nq);
  const double sigma_single = std::sqrt(variance) / static_cast<double>(nq);

  const int seeds = 100;
  double mean = 0;
  for (int s = 0; s < seeds; ++s) {
    RandomScorer scorer(static_cast<std::uint64_t>(s));
    mean += run_setting(scorer, j, chunks, Setting::single).macro[0] / seeds;
  }
  CHECK(std::fabs(mean - expected) < 2 * sigma_single / std::sqrt(double(seeds)));
}
