#include <doctest.h>

#include <set>

#include "ehrdr/error.hpp"
#include "ehrdr/generator_client.hpp"
#include "ehrdr/pairgen.hpp"
#include "test_util.hpp"

using namespace ehrdr;
using pairgen::AbbreviationPair;
using pairgen::Seed;
using pairgen::Source;

namespace {

const std::string kDrug = "Chemical or Drug";
const std::string kDisease = "Disease, Syndrome or Pathologic Function";

corpus::Chunk chunk_of(const std::string& text) { return corpus::Chunk{"n", 0, 0, 1, text}; }

/// s has 6 terms, 3 hypernyms (2 terms each) and optionally 3 related drugs.
kg::KnowledgeGraph expansion_graph(bool with_related) {
  using kg::RelationKind;
  std::vector<kg::Concept> cs{{"s", kDisease, {"s0", "s1", "s2", "s3", "s4", "s5"}}};
  std::vector<kg::Relation> rs;
  for (int i = 0; i < 3; ++i) {
    const auto h = "h" + std::to_string(i);
    cs.push_back({h, kDisease, {h + "a", h + "b"}});
    rs.push_back({"s", RelationKind::is_a, h});
    if (with_related) {
      const auto d = "d" + std::to_string(i);
      cs.push_back({d, kDrug, {d + "a", d + "b"}});
      rs.push_back({"s", RelationKind::may_be_treated_by, d});
    }
  }
  cs.push_back({"lone", kDisease, {"lonely"}});
  cs.push_back({"kid", kDisease, {"kid term"}});
  rs.push_back({"kid", RelationKind::is_a, "s"});
  return {cs, rs};
}

std::size_t count_source(const std::vector<pairgen::PositiveSample>& xs, Source s) {
  return static_cast<std::size_t>(std::count_if(xs.begin(), xs.end(), [&](const auto& x) { return x.source == s; }));
}

}  // namespace

TEST_CASE("response parsing") {
  const auto parsed = gen::parse_abbreviation_response("- HTN = hypertension\nnonsense line\n\n2) CHF = Heart Failure\n");
  REQUIRE(parsed.pairs.size() == 2);
  CHECK(parsed.pairs[0] == std::pair<std::string, std::string>{"htn", "hypertension"});
  CHECK(parsed.pairs[1].second == "heart failure");
  CHECK(parsed.skipped == 1);
  CHECK(gen::parse_abbreviation_response("").pairs.empty());

  CHECK(gen::parse_entity_response("1. Pneumonia.\n* chest x-ray\n\n(3) Azithromycin;") ==
        std::vector<std::string>{"pneumonia", "chest x-ray", "azithromycin"});
  CHECK(gen::strip_list_marker("\xE2\x80\xA2 aspirin") == "aspirin");
  CHECK(gen::render_prompt("{entity_type} in {note}; {note}", "x", "drugs") == "drugs in x; x");
}

TEST_CASE("chat completion wire format") {
  const auto body = gen::chat_request_body("m", "hello");
  CHECK(body.find("\"model\":\"m\"") != std::string::npos);
  CHECK(body.find("\"content\":\"hello\"") != std::string::npos);
  CHECK(gen::chat_response_content(R"({"choices":[{"message":{"role":"assistant","content":"hi"}}]})") == "hi");
  CHECK_THROWS_AS(gen::chat_response_content(R"({"choices":[]})"), Error);
  CHECK_THROWS_AS(gen::chat_response_content("not json"), Error);
}

TEST_CASE("http client reports transport failures with the chunk id") {
  gen::ClientConfig cfg;
  cfg.base_url = "http://127.0.0.1:1/v1";
  cfg.max_retries = 1;
  cfg.backoff_ms = 1;
  cfg.timeout_s = 1;
  gen::HttpGeneratorClient client(cfg);
  try {
    client.complete({gen::Task::entities, "note#3", "x", "drugs", "p"});
    FAIL("expected an error");
  } catch (const gen::GenerationError& e) {
    CHECK(e.chunk_id() == "note#3");
  }
}

TEST_CASE("reduce_abbreviations") {
  const auto g = testing::small_graph();
  const auto prompts = gen::PromptTemplates::defaults();
  gen::MockGeneratorClient mock(g, {{"htn", "hypertension"}}, {0, 0.0});
  const auto r = pairgen::reduce_abbreviations(mock, prompts, chunk_of("pt with htn on lisinopril"));
  CHECK(r.pairs == std::vector<AbbreviationPair>{{"htn", "hypertension"}});

  gen::FunctionClient three([](const gen::GenerationRequest&) { return "HTN = hypertension\n???\nCHF = heart failure\n"; });
  const auto r3 = pairgen::reduce_abbreviations(three, prompts, chunk_of("x"));
  CHECK(r3.pairs.size() == 2);
  CHECK(r3.skipped == 1);

  gen::FunctionClient empty([](const gen::GenerationRequest&) { return std::string(); });
  CHECK(pairgen::reduce_abbreviations(empty, prompts, chunk_of("x")).pairs.empty());
}

TEST_CASE("clean_abbreviations applies the four rules") {
  const auto g = testing::small_graph();
  const std::string text = "q htn mi noted, esomeprazole for gerd";
  CHECK(pairgen::abbreviation_rule_violation({"htn", "hypertension"}, text, g) == 0);
  CHECK(pairgen::abbreviation_rule_violation({"bp", "hypertension"}, text, g) == 1);
  CHECK(pairgen::abbreviation_rule_violation({"mi", "mi"}, text, g) == 2);
  CHECK(pairgen::abbreviation_rule_violation({"mi", "myocardial infarction"}, text, g) == 3);
  CHECK(pairgen::abbreviation_rule_violation({"q", "every"}, text, g) == 3);
  CHECK(pairgen::abbreviation_rule_violation({"q", "hypertension"}, text, g) == 4);
  const std::vector<AbbreviationPair> raw{
      {"htn", "hypertension"}, {"q", "every"}, {"mi", "mi"}, {"htn", "hypertension"}, {"gerd", "gastroesophageal reflux disease"}};
  CHECK(pairgen::clean_abbreviations(raw, text, g) ==
        std::vector<AbbreviationPair>{{"htn", "hypertension"}, {"gerd", "gastroesophageal reflux disease"}});
}

TEST_CASE("expand_stage1 cap arithmetic") {
  Rng rng(4);
  {
    const auto g = expansion_graph(false);
    const std::vector<Seed> seeds{{"s", "s0", Source::string}};
    const auto e = pairgen::expand_stage1(g, seeds, rng);
    REQUIRE(e.audits.size() == 1);
    CHECK(e.audits[0].kg_additions() == 6);
    CHECK(e.samples.size() == 7);
  }
  {
    const auto g = expansion_graph(true);
    const std::vector<Seed> seeds{{"s", "s3", Source::string}};
    const auto e = pairgen::expand_stage1(g, seeds, rng);
    const auto& a = e.audits[0];
    CHECK(a.kg_additions() == 10);
    CHECK(a.synonyms == 2);
    CHECK(a.hypernyms == 2);
    CHECK(a.hypernym_companions == 2);
    CHECK(a.related == 2);
    CHECK(a.related_companions == 2);
    CHECK(count_source(e.samples, Source::string) == 1);
    for (const auto& s : e.samples) CHECK(s.term != "kid term");
  }
  {
    const auto g = expansion_graph(false);
    const std::vector<Seed> seeds{{"lone", "lonely", Source::string}};
    const auto e = pairgen::expand_stage1(g, seeds, rng);
    CHECK(e.samples == std::vector<pairgen::PositiveSample>{{"lonely", Source::string, "lone"}});
    const std::vector<Seed> bad{{"nope", "x", Source::string}};
    CHECK_THROWS_AS(pairgen::expand_stage1(g, bad, rng), Error);
  }
}

TEST_CASE("expand_stage1 is deterministic and deduplicates per source") {
  const auto g = expansion_graph(true);
  const std::vector<Seed> seeds{{"s", "s0", Source::string}, {"s", "s1", Source::abbreviation}};
  Rng a(8), b(8);
  const auto ea = pairgen::expand_stage1(g, seeds, a);
  CHECK(ea.samples == pairgen::expand_stage1(g, seeds, b).samples);
  std::set<std::pair<std::string, Source>> seen;
  for (const auto& s : ea.samples) CHECK(seen.emplace(s.term, s.source).second);
}

TEST_CASE("generate_stage2") {
  const auto prompts = gen::PromptTemplates::defaults();
  auto scripted = [](std::map<std::string, std::string> by_type) {
    return gen::FunctionClient([by_type](const gen::GenerationRequest& r) {
      auto it = by_type.find(r.entity_type);
      return it == by_type.end() ? std::string() : it->second;
    });
  };
  auto c1 = scripted({{"diseases", "pneumonia"}, {"clinical procedures", "chest x-ray"}, {"drugs", "azithromycin"}});
  const auto s1 = pairgen::generate_stage2(c1, prompts, chunk_of("x"));
  CHECK(s1 == std::vector<pairgen::PositiveSample>{{"pneumonia", Source::syn_disease, std::nullopt},
                                                   {"chest x-ray", Source::syn_procedure, std::nullopt},
                                                   {"azithromycin", Source::syn_drug, std::nullopt}});
  auto c2 = scripted({{"clinical procedures", "aspirin"}, {"drugs", "Aspirin\n"}});
  CHECK(pairgen::generate_stage2(c2, prompts, chunk_of("x")).size() == 1);
  auto c3 = scripted({});
  CHECK(pairgen::generate_stage2(c3, prompts, chunk_of("x")).empty());

  std::string long_entity;
  for (int i = 0; i < 17; ++i) long_entity += "w ";
  auto c4 = scripted({{"drugs", long_entity + "\nok drug"}});
  CHECK(pairgen::generate_stage2(c4, prompts, chunk_of("x")).size() == 1);
}

TEST_CASE("quantiles and statistics") {
  CHECK(pairgen::quantile({}, 0.25) == 0.0);
  CHECK(pairgen::quantile({1, 4, 10}, 0.25) == doctest::Approx(2.5));
  CHECK(pairgen::quantile({10, 1, 4}, 0.75) == doctest::Approx(7.0));

  auto set_with = [](std::string id, std::size_t n, Source s) {
    pairgen::PositiveSet ps{std::move(id), {}};
    for (std::size_t i = 0; i < n; ++i) ps.samples.push_back({"t" + std::to_string(i), s, std::nullopt});
    return ps;
  };
  std::vector<pairgen::PositiveSet> two{set_with("a", 3, Source::string), set_with("b", 5, Source::string)};
  const auto st = pairgen::compute_stats(two, 1);
  CHECK(st.rows.back().label == "Overall");
  CHECK(st.rows.back().sum == 8);
  CHECK(st.rows.back().avg == doctest::Approx(4.0));

  std::vector<pairgen::PositiveSet> three{set_with("a", 1, Source::kg_synonym), set_with("b", 4, Source::kg_synonym),
                                          set_with("c", 10, Source::kg_synonym)};
  const auto s3 = pairgen::compute_stats(three, 1);
  const auto& syn = s3.rows[2];
  CHECK(syn.label == "KG Synonym");
  CHECK(syn.avg == doctest::Approx(5.0));
  CHECK(syn.q1 == doctest::Approx(2.5));
  CHECK(syn.q3 == doctest::Approx(7.0));
  CHECK(syn.max == 10);
  CHECK(syn.sum == 15);
  CHECK(s3.rows[0].sum == 0);

  const auto empty = pairgen::compute_stats({}, 2);
  CHECK(empty.rows.size() == 4);
  for (const auto& r : empty.rows) CHECK((r.avg == 0 && r.q1 == 0 && r.q3 == 0 && r.max == 0 && r.sum == 0));

  std::vector<pairgen::PositiveSet> one{set_with("a", 6, Source::syn_drug)};
  const auto& o = pairgen::compute_stats(one, 2).rows.back();
  CHECK(o.avg == 6);
  CHECK(o.q1 == 6);
  CHECK(o.q3 == 6);
  CHECK(o.max == 6);
}

TEST_CASE("pairs file round trip keeps empty chunks") {
  testing::TempDir dir;
  std::vector<pairgen::PositiveSet> sets{{"a#0", {{"htn", Source::string, "c1"}, {"zestril", Source::kg_related, "c1"}}},
                                         {"a#1", {}},
                                         {"a#2", {{"gerd", Source::syn_disease, std::nullopt}}}};
  pairgen::save_pairs(dir / "p.jsonl", sets);
  CHECK(pairgen::load_pairs(dir / "p.jsonl") == sets);
  CHECK(pairgen::infer_stage(sets) == 2);
  sets.pop_back();
  CHECK(pairgen::infer_stage(sets) == 1);
}

TEST_CASE("build_dataset with an empty chunk list") {
  testing::TempDir dir;
  const auto g = testing::small_graph();
  gen::MockGeneratorClient mock(g, {}, {0, 0.0});
  const auto st = pairgen::build_dataset(1, {}, g, mock, gen::PromptTemplates::defaults(), 1, dir / "p.jsonl");
  CHECK(st.chunks == 0);
  CHECK(st.rows.back().sum == 0);
  CHECK(pairgen::load_pairs(dir / "p.jsonl").empty());
}

TEST_CASE("stage-1 build over a small corpus") {
  const auto g = testing::small_graph();
  const auto automaton = matcher::build_automaton(g, g.filter());
  const std::vector<corpus::Chunk> chunks{{"n", 0, 0, 6, "htn treated with zestril , gerd"}, {"n", 1, 5, 8, "nothing here today"}};
  gen::MockGeneratorClient mock(g, {{"htn", "hypertension"}}, {0, 0.0});
  const auto abbrevs = pairgen::reduce_chunks(mock, gen::PromptTemplates::defaults(), chunks, g);
  const auto r = pairgen::build_stage1(g, automaton, chunks, abbrevs, 3);
  REQUIRE(r.sets.size() == 2);
  CHECK(r.sets[1].samples.empty());
  std::set<std::string> terms;
  for (const auto& s : r.sets[0].samples) terms.insert(s.term);
  CHECK(terms.count("htn"));
  CHECK(terms.count("hypertension"));
  CHECK(terms.count("essential hypertension") == 0);
  CHECK(count_source(r.sets[0].samples, Source::abbreviation) == 1);
  CHECK(r.sets == pairgen::build_stage1(g, automaton, chunks, abbrevs, 3).sets);
}

TEST_CASE("bundled prompt files equal the built-in templates") {
  const auto loaded = gen::PromptTemplates::load(std::filesystem::path(EHRDR_SOURCE_DIR) / "prompts");
  const auto builtin = gen::PromptTemplates::defaults();
  CHECK(loaded.abbreviation == builtin.abbreviation);
  CHECK(loaded.synthetic == builtin.synthetic);
  CHECK_THROWS_AS(gen::PromptTemplates::load("/nonexistent"), Error);
}
