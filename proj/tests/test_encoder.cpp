#include <doctest.h>

#include <cmath>

#include "ehrdr/encoder.hpp"
#include "ehrdr/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ehrdr;
using namespace ehrdr::encoder;

namespace {

EncoderParams random_params(std::size_t known, std::size_t dim, std::uint64_t seed) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < known; ++i) words.push_back("w" + std::to_string(i));
  return EncoderParams(Vocabulary(words, 8), dim, seed, 1.0);
}

/// max relative error of backprop() for S = u(a).u(b) against central differences.
double similarity_fd(EncoderParams& p, const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, double h) {
  Gradient g(p);
  backprop(encode(p, a), encode(p, b), 1.0, g);
  double worst = 0;
  auto s = [&] { return similarity(encode(p, a).embedding, encode(p, b).embedding); };
  for (std::size_t k = 0; k < p.table().size(); ++k) {
    const double orig = p.table()[k];
    p.table()[k] = orig + h;
    const double up = s();
    p.table()[k] = orig - h;
    const double down = s();
    p.table()[k] = orig;
    worst = std::max(worst, oracle::rel_err(g.values[k], (up - down) / (2 * h), 1e-7));
  }
  return worst;
}

}  // namespace

TEST_CASE("tokenization") {
  CHECK(split_tokens("(acute) heart, failure.") == std::vector<std::string>{"acute", "heart", "failure"});
  const auto v = Vocabulary::build(std::vector<std::string>{"acute heart failure"}, 16);
  CHECK(v.tokenize("acute heart failure").size() == 3);
  for (auto i : v.tokenize("acute heart failure")) CHECK(i < v.known());
  const auto oov = v.tokenize("zzz");
  REQUIRE(oov.size() == 1);
  CHECK(oov[0] >= v.known());
  CHECK(oov == Vocabulary::build(std::vector<std::string>{"acute heart failure"}, 16).tokenize("zzz"));
  std::string long_text;
  for (int i = 0; i < 600; ++i) long_text += "acute ";
  CHECK(v.tokenize(long_text, kChunkTokenBudget).size() == 512);
  CHECK(v.tokenize(long_text).size() == 600);
}

TEST_CASE("encode") {
  auto p = random_params(6, 8, 1);
  const std::vector<std::size_t> one{2};
  const auto e = encode(p, one);
  double n = 0;
  for (double x : p.row(2)) n += x * x;
  for (std::size_t k = 0; k < 8; ++k) CHECK(e.embedding[k] == doctest::Approx(p.row(2)[k] / std::sqrt(n)).epsilon(1e-12));

  auto row3 = p.row(3);
  for (std::size_t k = 0; k < 8; ++k) row3[k] = -p.row(2)[k];
  try {
    encode(p, std::vector<std::size_t>{2, 3});
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(std::string(err.what()).find("degenerate embedding") != std::string::npos);
  }
  try {
    encode(p, std::vector<std::size_t>{});
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(std::string(err.what()).find("degenerate input") != std::string::npos);
  }

  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::size_t> idx;
    for (int i = 0; i < 5; ++i) idx.push_back(rng.below(p.rows()));
    const auto u = encode(p, idx).embedding;
    CHECK(std::fabs(similarity(u, u) - 1.0) < 1e-9);
    std::vector<double> neg(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) neg[k] = -u[k];
    CHECK(std::fabs(similarity(u, neg) + 1.0) < 1e-9);
  }
}

TEST_CASE("backprop") {
  auto p = random_params(12, 6, 9);
  Gradient g(p);
  backprop(encode(p, std::vector<std::size_t>{1}), encode(p, std::vector<std::size_t>{4, 5}), 0.0, g);
  for (double x : g.values) CHECK(x == 0.0);

  CHECK(similarity_fd(p, {1}, {4}, 1e-4) < 1e-6);
  Rng rng(21);
  for (int t = 0; t < 10; ++t) {
    std::vector<std::size_t> a, b;
    for (int i = 0; i < 10; ++i) a.push_back(rng.below(p.rows()));
    for (int i = 0; i < 3; ++i) b.push_back(rng.below(p.rows()));
    CHECK(similarity_fd(p, a, b, 1e-4) < 1e-5);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  testing::TempDir dir;
  const auto p = random_params(20, 5, 77);
  save_checkpoint(dir / "m.ckpt", p);
  CHECK(load_checkpoint(dir / "m.ckpt") == p);
  testing::write(dir / "bad.ckpt", "garbage");
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), Error);
}

TEST_CASE("init is seeded") {
  CHECK(random_params(5, 4, 3) == random_params(5, 4, 3));
  CHECK(!(random_params(5, 4, 3) == random_params(5, 4, 4)));
}
