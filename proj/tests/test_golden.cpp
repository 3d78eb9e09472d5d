#include <doctest.h>

#include <fstream>

#include "bench.hpp"
#include "ehrdr/pipeline.hpp"
#include "test_util.hpp"

using namespace ehrdr;

namespace {

/// Default benchmark, data stages through pairs2, shared by the cases below.
struct Prepared {
  testing::TempDir dir;
  pipeline::PipelineConfig config;
  Prepared() : config(pipeline::PipelineConfig::from_manifest(bench::prepare(dir.path(), synth::SynthOptions{}))) {
    pipeline::Pipeline(config).run(pipeline::Stage::chunk, pipeline::Stage::pairs2);
  }
};

Prepared& prepared() {
  static Prepared p;
  return p;
}

}  // namespace

TEST_CASE("dataset statistics of the bundled benchmark are pinned") {
  auto& p = prepared();
  for (int stage : {1, 2}) {
    const auto golden = bench::source_dir() / "tests" / "golden" / ("stats_stage" + std::to_string(stage) + ".txt");
    const auto actual = testing::slurp(p.config.paths.out / ("stats_stage" + std::to_string(stage) + ".txt"));
    if (!std::filesystem::exists(golden)) {
      std::ofstream(golden) << actual;
      MESSAGE("froze " << golden.string());
    }
    CHECK(actual == testing::slurp(golden));
  }
}

TEST_CASE("one epoch of stage-1 training lowers the moving-average loss") {
  auto& p = prepared();
  const auto chunks = corpus::load_chunks(p.config.paths.out / "chunks.jsonl");
  const auto sets = pairgen::load_pairs(p.config.paths.out / "pairs_stage1.jsonl");
  const auto examples = trainer::make_examples(chunks, sets);
  auto params = pipeline::Pipeline::initial_encoder(chunks, kg::load_kg(p.config.paths.concepts, p.config.paths.relations),
                                                    p.config);
  auto cfg = p.config.stage1;
  cfg.epochs = 1;
  const auto history = trainer::train(examples, params, cfg, p.config.msl).history;
  // Non-overlapping 10-step window means over the first half must fall
  // strictly; single steps are too noisy for a per-step claim.
  const std::size_t half = history.size() / 2, w = 10;
  REQUIRE(half >= 3 * w);
  std::vector<double> means;
  for (std::size_t b = 0; b + w <= half; b += w) {
    double s = 0;
    for (std::size_t k = b; k < b + w; ++k) s += history[k].loss;
    means.push_back(s / w);
  }
  for (std::size_t i = 1; i < means.size(); ++i) CHECK(means[i] < means[i - 1]);
}
