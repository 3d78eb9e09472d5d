#include <doctest.h>

#include <random>

#include "ehrdr/corpus.hpp"
#include "ehrdr/error.hpp"
#include "ehrdr/rng.hpp"
#include "ehrdr/text.hpp"
#include "test_util.hpp"

using namespace ehrdr;
using corpus::clean_note;
using corpus::chunk_note;

namespace {

const std::vector<std::string> kMasks{"___"};

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(i);
  return s;
}

std::vector<std::pair<std::size_t, std::size_t>> spans(const std::vector<corpus::Chunk>& cs) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& c : cs) out.emplace_back(c.start_word, c.end_word);
  return out;
}

}  // namespace

TEST_CASE("clean_note examples") {
  CHECK(clean_note("Pt has HTN ___ and CHF!!!", kMasks) == "pt has htn and chf!");
  CHECK(clean_note("", kMasks) == "");
  CHECK(clean_note("abc", kMasks) == "abc");
}

TEST_CASE("clean_note edge cases") {
  CHECK(clean_note("  a\t\tb \n c  ", kMasks) == "a b c");
  CHECK(clean_note("wait...what?!", kMasks) == "wait.what?!");
  CHECK(clean_note("a--b", kMasks) == "a-b");
  CHECK(clean_note("x _____ y", kMasks) == "x _ y");
  // removal exposes a new occurrence of the mask
  CHECK(clean_note("x aabb y", std::vector<std::string>{"ab"}) == "x y");
  CHECK(clean_note("ÄBC", kMasks) == "Äbc");
  CHECK_THROWS_AS(clean_note("x", std::vector<std::string>{"("}), ConfigError);
}

TEST_CASE("clean_note is idempotent on random noisy text") {
  Rng rng(11);
  const std::string alphabet = "aB_ !!..,,\t\n-?x";
  for (int t = 0; t < 500; ++t) {
    std::string s;
    const auto n = rng.below(60);
    for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.below(alphabet.size())];
    const auto once = clean_note(s, kMasks);
    CHECK(clean_note(once, kMasks) == once);
    CHECK(once.find("___") == std::string::npos);
  }
}

TEST_CASE("chunk_note spans") {
  CHECK(spans(chunk_note({"n", words(250)})) ==
        std::vector<std::pair<std::size_t, std::size_t>>{{0, 100}, {90, 190}, {180, 250}});
  CHECK(spans(chunk_note({"n", words(100)})) == std::vector<std::pair<std::size_t, std::size_t>>{{0, 100}});
  CHECK(spans(chunk_note({"n", words(101)})) ==
        std::vector<std::pair<std::size_t, std::size_t>>{{0, 100}, {90, 101}});
  CHECK(chunk_note({"n", ""}).empty());
  CHECK_THROWS_AS(chunk_note({"n", "a b"}, 10, 10), ConfigError);
}

TEST_CASE("chunk invariants hold for random notes and windows") {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng.below(400);
    const std::size_t window = 1 + rng.below(120);
    const std::size_t overlap = rng.below(window);
    const auto text = words(n);
    const auto ws = text::split_ws(text);
    const auto cs = chunk_note({"note", text}, window, overlap);
    REQUIRE(!cs.empty());
    CHECK(cs.front().start_word == 0);
    CHECK(cs.back().end_word == n);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const auto& c = cs[i];
      CHECK(c.ordinal == i);
      CHECK(c.start_word < c.end_word);
      CHECK(c.end_word - c.start_word <= window);
      CHECK(c.id() == "note#" + std::to_string(i));
      std::vector<std::string> part(ws.begin() + static_cast<long>(c.start_word), ws.begin() + static_cast<long>(c.end_word));
      CHECK(c.text == text::join(part, " "));
      if (i > 0) CHECK(cs[i - 1].end_word - c.start_word == overlap);
    }
  }
}

TEST_CASE("notes JSONL loading") {
  testing::TempDir dir;
  testing::write(dir / "ok.jsonl", R"({"note_id":"a","text":"x"})" "\n\n" R"({"note_id":"b","text":"y"})" "\n");
  const auto notes = corpus::load_notes(dir / "ok.jsonl");
  REQUIRE(notes.size() == 2);
  CHECK(notes[0].note_id == "a");
  CHECK(notes[1].text == "y");

  testing::write(dir / "dup.jsonl", R"({"note_id":"n1","text":"x"})" "\n" R"({"note_id":"n1","text":"y"})" "\n");
  try {
    corpus::load_notes(dir / "dup.jsonl");
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("\"n1\"") != std::string::npos);
  }

  testing::write(dir / "bad.jsonl", R"({"note_id":"a","text":"x"})" "\n" R"({"note_id":"b","text":"y"})" "\n[1,2]\n");
  try {
    corpus::load_notes(dir / "bad.jsonl");
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(corpus::load_notes(dir / "missing.jsonl"), Error);
}

TEST_CASE("prepare_chunks drops notes that clean to nothing and round-trips") {
  testing::TempDir dir;
  std::vector<corpus::Note> notes{{"a", "___ ___"}, {"b", "One two THREE"}};
  const auto chunks = corpus::prepare_chunks(notes, {});
  REQUIRE(chunks.size() == 1);
  CHECK(chunks[0].text == "one two three");
  corpus::save_chunks(dir / "c.jsonl", chunks);
  CHECK(corpus::load_chunks(dir / "c.jsonl") == chunks);
}
