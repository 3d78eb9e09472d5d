#include "ehrdr/pairgen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "ehrdr/error.hpp"
#include "ehrdr/io.hpp"
#include "ehrdr/parallel.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::pairgen {

namespace {

constexpr std::array<std::pair<Source, std::string_view>, 8> kSourceNames{{
    {Source::string, "string"},
    {Source::abbreviation, "abbreviation"},
    {Source::kg_synonym, "kg_synonym"},
    {Source::kg_hypernym, "kg_hypernym"},
    {Source::kg_related, "kg_related"},
    {Source::syn_disease, "syn_disease"},
    {Source::syn_procedure, "syn_procedure"},
    {Source::syn_drug, "syn_drug"},
}};

std::string_view row_label(Source s) {
  switch (s) {
    case Source::string: return "String Match";
    case Source::abbreviation: return "Abbreviation";
    case Source::kg_synonym: return "KG Synonym";
    case Source::kg_hypernym: return "KG Hypernym";
    case Source::kg_related: return "KG Related";
    case Source::syn_disease: return "Disease";
    case Source::syn_procedure: return "Procedure";
    case Source::syn_drug: return "Drug";
  }
  return "?";
}

Source stage2_source(std::string_view entity_type) {
  if (entity_type == "diseases") return Source::syn_disease;
  if (entity_type == "clinical procedures") return Source::syn_procedure;
  return Source::syn_drug;
}

bool within_budget(std::string_view term) {
  const auto n = text::count_words(term);
  return n > 0 && n <= kMaxEntityTokens;
}

/// Appends unique (term, source) samples.
class SampleSink {
 public:
  bool add(std::string term, Source source, const std::optional<std::string>& seed) {
    if (!within_budget(term)) return false;
    if (!seen_.emplace(term, source).second) return true;
    samples_.push_back(PositiveSample{std::move(term), source, seed});
    return true;
  }
  std::vector<PositiveSample> take() { return std::move(samples_); }

 private:
  std::set<std::pair<std::string, Source>> seen_;
  std::vector<PositiveSample> samples_;
};

}  // namespace

std::string_view to_string(Source s) {
  for (const auto& [k, name] : kSourceNames)
    if (k == s) return name;
  return "unknown";
}

std::optional<Source> parse_source(std::string_view s) {
  for (const auto& [k, name] : kSourceNames)
    if (s == name) return k;
  return std::nullopt;
}

RawAbbreviations reduce_abbreviations(gen::GeneratorClient& client, const gen::PromptTemplates& prompts,
                                      const corpus::Chunk& chunk) {
  gen::GenerationRequest req{gen::Task::abbreviation, chunk.id(), chunk.text, "",
                             gen::render_prompt(prompts.abbreviation, chunk.text)};
  const auto parsed = gen::parse_abbreviation_response(client.complete(req));
  RawAbbreviations out;
  out.skipped = parsed.skipped;
  for (const auto& [a, f] : parsed.pairs) out.pairs.push_back({a, f});
  return out;
}

int abbreviation_rule_violation(const AbbreviationPair& pair, std::string_view chunk_text,
                                const kg::KnowledgeGraph& kg) {
  if (!text::contains_word(chunk_text, pair.abbreviation)) return 1;
  if (pair.full_name == pair.abbreviation) return 2;
  if (kg.lookup_term(pair.full_name).empty()) return 3;
  if (pair.abbreviation.size() < 2) return 4;
  return 0;
}

std::vector<AbbreviationPair> clean_abbreviations(std::span<const AbbreviationPair> raw,
                                                  std::string_view chunk_text, const kg::KnowledgeGraph& kg) {
  std::vector<AbbreviationPair> out;
  for (const auto& p : raw) {
    if (abbreviation_rule_violation(p, chunk_text, kg) != 0) continue;
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  return out;
}

Stage1Expansion expand_stage1(const kg::KnowledgeGraph& kg, std::span<const Seed> seeds, Rng& rng) {
  SampleSink sink;
  Stage1Expansion out;
  for (const auto& seed : seeds) {
    if (!kg.find(seed.concept_id)) throw Error("unknown seed concept \"" + seed.concept_id + "\"");
    const std::optional<std::string> origin = seed.concept_id;
    SeedAudit audit;
    audit.seed = seed;
    sink.add(seed.surface, seed.origin, origin);

    auto add_kg = [&](const std::string& term, Source source, std::size_t& counter) {
      if (sink.add(term, source, origin)) {
        ++counter;
        audit.kg_terms.push_back(term);
      }
    };

    const auto syns = kg.synonyms(seed.concept_id, seed.surface);
    for (std::size_t i : rng.sample_without_replacement(syns.size(), kPerClassLimit))
      add_kg(syns[i], Source::kg_synonym, audit.synonyms);

    auto expand_class = [&](kg::NeighborClass cls, Source source, std::size_t& main, std::size_t& companions) {
      const auto ids = kg.neighbor_concepts(seed.concept_id, cls);
      for (std::size_t i : rng.sample_without_replacement(ids.size(), kPerClassLimit)) {
        add_kg(kg.get(ids[i]).preferred_term(), source, main);
        if (auto syn = kg.random_synonym(ids[i], rng)) add_kg(*syn, source, companions);
      }
    };
    expand_class(kg::NeighborClass::hypernym, Source::kg_hypernym, audit.hypernyms, audit.hypernym_companions);
    expand_class(kg::NeighborClass::related, Source::kg_related, audit.related, audit.related_companions);

    if (audit.kg_additions() > kMaxKgAdditionsPerSeed)
      throw Error("KG expansion cap exceeded for seed " + seed.concept_id);
    out.audits.push_back(std::move(audit));
  }
  out.samples = sink.take();
  return out;
}

std::vector<PositiveSample> generate_stage2(gen::GeneratorClient& client, const gen::PromptTemplates& prompts,
                                            const corpus::Chunk& chunk) {
  std::vector<PositiveSample> out;
  std::set<std::string> seen;
  for (const auto& type : gen::kEntityTypes) {
    gen::GenerationRequest req{gen::Task::entities, chunk.id(), chunk.text, type,
                               gen::render_prompt(prompts.synthetic, chunk.text, type)};
    for (auto& item : gen::parse_entity_response(client.complete(req))) {
      if (!within_budget(item) || !seen.insert(item).second) continue;
      out.push_back(PositiveSample{std::move(item), stage2_source(type), std::nullopt});
    }
  }
  return out;
}

std::vector<matcher::ChunkMentions> match_chunks(const matcher::TermAutomaton& automaton,
                                                 std::span<const corpus::Chunk> chunks, std::size_t jobs) {
  std::vector<matcher::ChunkMentions> out(chunks.size());
  parallel_for(chunks.size(), jobs, [&](std::size_t i) {
    out[i] = matcher::ChunkMentions{chunks[i].id(), automaton.find_mentions(chunks[i].text)};
  });
  return out;
}

std::vector<ChunkAbbreviations> reduce_chunks(gen::GeneratorClient& client, const gen::PromptTemplates& prompts,
                                              std::span<const corpus::Chunk> chunks,
                                              const kg::KnowledgeGraph& kg, std::size_t jobs) {
  std::vector<ChunkAbbreviations> out(chunks.size());
  parallel_for(chunks.size(), jobs, [&](std::size_t i) {
    auto raw = reduce_abbreviations(client, prompts, chunks[i]);
    auto cleaned = clean_abbreviations(raw.pairs, chunks[i].text, kg);
    out[i] = ChunkAbbreviations{chunks[i].id(), std::move(raw.pairs), std::move(cleaned), raw.skipped};
  });
  return out;
}

namespace {

io::Json pairs_to_json(const std::vector<AbbreviationPair>& pairs) {
  auto arr = io::Json::array();
  for (const auto& p : pairs) arr.push_back(io::Json::array({p.abbreviation, p.full_name}));
  return arr;
}

std::vector<AbbreviationPair> pairs_from_json(const io::Json& arr, std::size_t line) {
  std::vector<AbbreviationPair> out;
  if (!arr.is_array()) throw ParseError("expected an array of pairs", line);
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
      throw ParseError("malformed abbreviation pair", line);
    out.push_back({p[0].get<std::string>(), p[1].get<std::string>()});
  }
  return out;
}

}  // namespace

void save_abbreviations(const std::filesystem::path& path, std::span<const ChunkAbbreviations> rows) {
  std::ostringstream out;
  for (const auto& r : rows)
    out << io::Json{{"chunk_id", r.chunk_id},
                    {"raw", pairs_to_json(r.raw)},
                    {"cleaned", pairs_to_json(r.cleaned)},
                    {"skipped", r.skipped}}
               .dump()
        << '\n';
  io::write_file(path, out.str());
}

std::vector<ChunkAbbreviations> load_abbreviations(const std::filesystem::path& path) {
  std::vector<ChunkAbbreviations> rows;
  io::for_each_jsonl(path, [&](const io::Json& obj, std::size_t line) {
    ChunkAbbreviations r;
    r.chunk_id = io::require_string(obj, "chunk_id", line);
    r.raw = pairs_from_json(obj.value("raw", io::Json::array()), line);
    r.cleaned = pairs_from_json(obj.value("cleaned", io::Json::array()), line);
    r.skipped = obj.value("skipped", std::size_t{0});
    rows.push_back(std::move(r));
  });
  return rows;
}

Stage1Result build_stage1(const kg::KnowledgeGraph& kg, const matcher::TermAutomaton& automaton,
                          std::span<const corpus::Chunk> chunks, std::span<const ChunkAbbreviations> abbreviations,
                          std::uint64_t seed) {
  if (abbreviations.size() != chunks.size())
    throw Error("abbreviation results do not line up with the chunk list");
  Stage1Result out;
  out.sets.reserve(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& chunk = chunks[i];
    const auto id = chunk.id();
    if (abbreviations[i].chunk_id != id)
      throw Error("abbreviation row " + abbreviations[i].chunk_id + " does not match chunk " + id);

    std::set<Seed> seeds;
    const auto mentions = automaton.find_mentions(chunk.text);
    for (auto& [concept_id, surface] : matcher::chunk_concepts(mentions))
      seeds.insert(Seed{concept_id, surface, Source::string});
    for (const auto& p : abbreviations[i].cleaned)
      for (auto& concept_id : kg.lookup_term(p.full_name))
        seeds.insert(Seed{concept_id, p.full_name, Source::abbreviation});

    // String seeds first, then abbreviation seeds, each sorted.
    std::vector<Seed> ordered;
    for (const auto& s : seeds)
      if (s.origin == Source::string) ordered.push_back(s);
    for (const auto& s : seeds)
      if (s.origin == Source::abbreviation) ordered.push_back(s);

    Rng rng(mix_seed(seed, fnv1a64(id)));
    auto expansion = expand_stage1(kg, ordered, rng);
    out.sets.push_back(PositiveSet{id, std::move(expansion.samples)});
    out.audits.push_back(std::move(expansion.audits));
  }
  return out;
}

std::vector<PositiveSet> build_stage2(gen::GeneratorClient& client, const gen::PromptTemplates& prompts,
                                      std::span<const corpus::Chunk> chunks, std::size_t jobs) {
  std::vector<PositiveSet> out(chunks.size());
  parallel_for(chunks.size(), jobs, [&](std::size_t i) {
    out[i] = PositiveSet{chunks[i].id(), generate_stage2(client, prompts, chunks[i])};
  });
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

DatasetStats compute_stats(std::span<const PositiveSet> sets, int stage) {
  DatasetStats stats;
  stats.stage = stage;
  stats.chunks = sets.size();
  std::vector<Source> sources;
  if (stage == 1)
    sources.assign(kStage1Sources.begin(), kStage1Sources.end());
  else
    sources.assign(kStage2Sources.begin(), kStage2Sources.end());

  auto make_row = [&](std::string label, const std::vector<double>& counts) {
    StatsRow row{std::move(label)};
    if (counts.empty()) return row;
    double sum = 0;
    double mx = 0;
    for (double c : counts) {
      sum += c;
      mx = std::max(mx, c);
    }
    row.avg = sum / static_cast<double>(counts.size());
    row.q1 = quantile(counts, 0.25);
    row.q3 = quantile(counts, 0.75);
    row.max = static_cast<std::size_t>(mx);
    row.sum = static_cast<std::size_t>(sum);
    return row;
  };

  std::vector<double> overall;
  for (const auto& set : sets) overall.push_back(static_cast<double>(set.samples.size()));
  for (Source s : sources) {
    std::vector<double> counts;
    for (const auto& set : sets)
      counts.push_back(static_cast<double>(
          std::count_if(set.samples.begin(), set.samples.end(), [&](const auto& x) { return x.source == s; })));
    stats.rows.push_back(make_row(std::string(row_label(s)), counts));
  }
  stats.rows.push_back(make_row("Overall", overall));
  return stats;
}

std::string DatasetStats::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(14) << "Source" << std::right << std::setw(10) << "Avg" << std::setw(10) << "Q1"
      << std::setw(10) << "Q3" << std::setw(10) << "Max" << std::setw(12) << "Sum" << '\n';
  out << std::fixed;
  for (const auto& r : rows) {
    out << std::left << std::setw(14) << r.label << std::right << std::setprecision(1) << std::setw(10) << r.avg
        << std::setprecision(2) << std::setw(10) << r.q1 << std::setw(10) << r.q3 << std::setw(10) << r.max
        << std::setw(12) << r.sum << '\n';
  }
  out << "chunks: " << chunks << '\n';
  return out.str();
}

std::string DatasetStats::to_json() const {
  io::Json j{{"stage", stage}, {"chunks", chunks}, {"rows", io::Json::array()}};
  for (const auto& r : rows)
    j["rows"].push_back({{"source", r.label}, {"avg", r.avg}, {"q1", r.q1}, {"q3", r.q3}, {"max", r.max}, {"sum", r.sum}});
  return j.dump(2);
}

void save_pairs(const std::filesystem::path& path, std::span<const PositiveSet> sets) {
  std::ostringstream out;
  for (const auto& set : sets) {
    if (set.samples.empty()) {
      out << io::Json{{"chunk_id", set.chunk_id}}.dump() << '\n';
      continue;
    }
    for (const auto& s : set.samples) {
      io::Json j{{"chunk_id", set.chunk_id}, {"term", s.term}, {"source", to_string(s.source)}};
      if (s.seed_concept) j["seed_concept"] = *s.seed_concept;
      out << j.dump() << '\n';
    }
  }
  io::write_file(path, out.str());
}

std::vector<PositiveSet> load_pairs(const std::filesystem::path& path) {
  std::vector<PositiveSet> sets;
  std::map<std::string, std::size_t> index;
  io::for_each_jsonl(path, [&](const io::Json& obj, std::size_t line) {
    const auto chunk_id = io::require_string(obj, "chunk_id", line);
    auto [it, inserted] = index.emplace(chunk_id, sets.size());
    if (inserted) sets.push_back(PositiveSet{chunk_id, {}});
    if (!obj.contains("term")) return;
    PositiveSample s;
    s.term = io::require_string(obj, "term", line);
    const auto src = parse_source(io::require_string(obj, "source", line));
    if (!src) throw ParseError("unknown source \"" + obj["source"].get<std::string>() + "\"", line);
    s.source = *src;
    if (auto sc = obj.find("seed_concept"); sc != obj.end() && sc->is_string()) s.seed_concept = sc->get<std::string>();
    sets[it->second].samples.push_back(std::move(s));
  });
  return sets;
}

int infer_stage(std::span<const PositiveSet> sets) {
  for (const auto& set : sets)
    for (const auto& s : set.samples)
      if (std::find(kStage2Sources.begin(), kStage2Sources.end(), s.source) != kStage2Sources.end()) return 2;
  return 1;
}

DatasetStats build_dataset(int stage, std::span<const corpus::Chunk> chunks, const kg::KnowledgeGraph& kg,
                           gen::GeneratorClient& client, const gen::PromptTemplates& prompts, std::uint64_t seed,
                           const std::filesystem::path& out_path, std::size_t jobs) {
  std::vector<PositiveSet> sets;
  if (stage == 1) {
    const auto automaton = matcher::build_automaton(kg, kg.filter());
    const auto abbreviations = reduce_chunks(client, prompts, chunks, kg, jobs);
    sets = build_stage1(kg, automaton, chunks, abbreviations, seed).sets;
  } else if (stage == 2) {
    sets = build_stage2(client, prompts, chunks, jobs);
  } else {
    throw ConfigError("stage must be 1 or 2");
  }
  save_pairs(out_path, sets);
  return compute_stats(sets, stage);
}

}  // namespace ehrdr::pairgen
