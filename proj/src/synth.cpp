#include "ehrdr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "ehrdr/error.hpp"
#include "ehrdr/generator_client.hpp"
#include "ehrdr/io.hpp"
#include "ehrdr/rng.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::synth {
namespace {

using kg::RelationKind;

constexpr std::string_view kDisease = "Disease, Syndrome or Pathologic Function";
constexpr std::string_view kSign = "Sign, Symptom, or Finding";
constexpr std::string_view kDrug = "Chemical or Drug";
constexpr std::string_view kLab = "Laboratory Procedure";
constexpr std::string_view kDiagnostic = "Diagnostic Procedure";
constexpr std::string_view kTherapeutic = "Therapeutic or Preventive Procedure";
constexpr std::string_view kDecoy = "Body Part, Organ, or Organ Component";

// Share of the concept budget per semantic type.
constexpr std::array<std::pair<std::string_view, double>, 7> kTypeShares{{
    {kDisease, 0.28}, {kSign, 0.14}, {kDrug, 0.22}, {kLab, 0.08},
    {kDiagnostic, 0.10}, {kTherapeutic, 0.10}, {kDecoy, 0.08},
}};

constexpr std::array<std::string_view, 8> kSuffixDisease{"itis", "osis", "emia", "oma", "pathy", "algia", "ism", "ia"};
constexpr std::array<std::string_view, 6> kSuffixDrug{"ine", "ol", "pril", "mab", "azole", "cillin"};
constexpr std::array<std::string_view, 6> kSuffixProcedure{"ectomy", "scopy", "graphy", "plasty", "otomy", "assay"};
constexpr std::array<std::string_view, 7> kModifiers{"acute", "chronic", "severe", "primary", "recurrent", "left",
                                                     "right"};

// Filler vocabulary, most frequent first (sampled with Zipf weights).
constexpr std::string_view kFiller[] = {
    "the", "patient", "was", "and", "of", "to", "with", "in", "on", "for", "is", "at", "no", "he", "she",
    "had", "as", "be", "this", "by", "were", "her", "his", "from", "denies", "noted", "given", "history",
    "admitted", "status", "post", "daily", "stable", "normal", "follow", "up", "day", "exam", "pain", "left",
    "right", "without", "after", "prior", "blood", "pressure", "hospital", "course", "home", "discharge",
    "mg", "po", "bid", "tid", "prn", "iv", "per", "well", "which", "also", "then", "continued", "started",
    "showed", "found", "reports", "states", "family", "social", "plan", "assessment", "medications", "allergies",
    "vital", "signs", "temperature", "heart", "rate", "respiratory", "oxygen", "saturation", "room", "air",
    "alert", "oriented", "comfortable", "appearing", "clear", "soft", "nontender", "regular", "rhythm",
    "murmurs", "edema", "extremities", "warm", "pulses", "intact", "labs", "significant", "notable",
    "improved", "worsening", "resolved", "ongoing", "evaluation", "consulted", "recommended", "team",
    "service", "transferred", "floor", "unit", "overnight", "morning", "evening", "week", "month", "year",
    "years", "old", "woman", "man", "presented", "emergency", "department", "complaint", "chief", "onset",
    "sudden", "gradual", "episode", "episodes", "similar", "previous", "recent", "baseline", "tolerated",
    "diet", "ambulating", "independently", "instructions", "return", "if", "any", "new", "symptoms", "call",
    "doctor", "office", "appointment", "scheduled", "primary", "care", "provider", "outpatient", "clinic",
    "monitoring", "repeat", "levels", "within", "limits", "range",
};

constexpr std::array<std::string_view, 9> kHeaders{"CHIEF COMPLAINT:", "HISTORY OF PRESENT ILLNESS:",
                                                   "PAST MEDICAL HISTORY:", "MEDICATIONS ON ADMISSION:",
                                                   "PHYSICAL EXAM:", "PERTINENT RESULTS:", "BRIEF HOSPITAL COURSE:",
                                                   "DISCHARGE MEDICATIONS:", "DISCHARGE INSTRUCTIONS:"};

class Words {
 public:
  explicit Words(Rng& rng) : rng_(rng) {
    for (auto w : kFiller) used_.emplace(w);
    for (auto w : kModifiers) used_.emplace(w);
  }

  /// A fresh pseudo-word, optionally with a type-flavored suffix.
  std::string fresh(std::string_view suffix) {
    static constexpr std::string_view onsets = "bcdfghjklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    for (;;) {
      std::string w;
      const std::size_t syllables = 2 + rng_.below(2);
      for (std::size_t s = 0; s < syllables; ++s) {
        w += onsets[rng_.below(onsets.size())];
        w += vowels[rng_.below(vowels.size())];
        if (rng_.below(3) == 0) w += "nrlst"[rng_.below(5)];
      }
      w += suffix;
      if (used_.insert(w).second) return w;
    }
  }

  /// 2-4 uppercase-free letters, never colliding with another word.
  std::string abbreviation() {
    static constexpr std::string_view letters = "bcdfghjklmnpqrstvwxz";
    for (;;) {
      std::string a;
      const std::size_t n = 2 + rng_.below(3);
      for (std::size_t i = 0; i < n; ++i) a += letters[rng_.below(letters.size())];
      if (used_.insert(a).second) return a;
    }
  }

 private:
  Rng& rng_;
  std::set<std::string> used_;
};

std::string_view suffix_for(std::string_view type, Rng& rng) {
  if (type == kDisease || type == kSign) return kSuffixDisease[rng.below(kSuffixDisease.size())];
  if (type == kDrug) return kSuffixDrug[rng.below(kSuffixDrug.size())];
  if (type == kDecoy) return "";
  return kSuffixProcedure[rng.below(kSuffixProcedure.size())];
}

std::string make_term(Words& words, std::string_view type, Rng& rng) {
  const std::size_t tokens = 1 + (rng.uniform() < 0.45 ? 1 : 0) + (rng.uniform() < 0.1 ? 1 : 0);
  std::string term;
  if (type != kDrug && rng.uniform() < 0.15) term = std::string(kModifiers[rng.below(kModifiers.size())]) + " ";
  for (std::size_t t = 0; t + 1 < tokens; ++t) term += words.fresh("") + " ";
  term += words.fresh(suffix_for(type, rng));
  return term;
}

struct Graph {
  std::vector<kg::Concept> concepts;
  std::vector<kg::Relation> relations;
  std::map<std::string, std::vector<std::size_t>> by_type;
};

void add_pair(Graph& g, const std::string& head, RelationKind kind, RelationKind inverse, const std::string& tail) {
  g.relations.push_back({head, kind, tail});
  if (kind != inverse) g.relations.push_back({tail, inverse, head});
}

Graph make_graph(const SynthOptions& opt, Words& words, Rng& rng) {
  Graph g;
  std::size_t next_id = 0;
  for (const auto& [type, share] : kTypeShares) {
    const auto n = std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(share * static_cast<double>(opt.concepts))));
    for (std::size_t i = 0; i < n; ++i) {
      kg::Concept c;
      char id[16];
      std::snprintf(id, sizeof id, "C%04zu", next_id++);
      c.concept_id = id;
      c.semantic_type = std::string(type);
      const double r = rng.uniform();
      const std::size_t terms = r < 0.15 ? 1 : r < 0.5 ? 2 : r < 0.85 ? 3 : 4;
      for (std::size_t t = 0; t < terms; ++t) c.terms.push_back(make_term(words, type, rng));
      g.by_type[c.semantic_type].push_back(g.concepts.size());
      g.concepts.push_back(std::move(c));
    }
  }

  // A few polysemous short terms shared by two concepts of different types.
  for (int k = 0; k < 6; ++k) {
    const auto shared = words.fresh("");
    const auto& a = g.by_type[std::string(kDisease)];
    const auto& b = g.by_type[std::string(k % 2 ? kDrug : kDiagnostic)];
    g.concepts[a[rng.below(a.size())]].terms.push_back(shared);
    g.concepts[b[rng.below(b.size())]].terms.push_back(shared);
  }

  // is_a forest per type: the first quarter are categories; every other
  // concept gets a category parent, and some categories a grandparent.
  for (auto& [type, members] : g.by_type) {
    const std::size_t categories = std::max<std::size_t>(2, members.size() / 4);
    for (std::size_t i = 1; i < categories; ++i)
      if (rng.uniform() < 0.3) g.relations.push_back({g.concepts[members[i]].concept_id, RelationKind::is_a,
                                                       g.concepts[members[rng.below(i)]].concept_id});
    for (std::size_t i = categories; i < members.size(); ++i)
      g.relations.push_back({g.concepts[members[i]].concept_id, RelationKind::is_a,
                             g.concepts[members[rng.below(categories)]].concept_id});
  }

  auto pick = [&](std::string_view type) -> const std::string& {
    const auto& m = g.by_type[std::string(type)];
    return g.concepts[m[rng.below(m.size())]].concept_id;
  };
  auto link = [&](std::string_view from_type, std::string_view to_type, RelationKind kind, RelationKind inverse,
                  std::size_t max_links) {
    for (std::size_t i : g.by_type[std::string(from_type)]) {
      std::set<std::string> tails;
      const std::size_t n = 1 + rng.below(max_links);
      while (tails.size() < n) tails.insert(pick(to_type));
      for (const auto& t : tails) add_pair(g, g.concepts[i].concept_id, kind, inverse, t);
    }
  };
  link(kDrug, kDisease, RelationKind::may_treat, RelationKind::may_be_treated_by, 2);
  link(kDisease, kSign, RelationKind::may_cause, RelationKind::may_be_caused_by, 2);
  link(kDiagnostic, kDisease, RelationKind::may_diagnose, RelationKind::may_be_diagnosed_by, 1);
  link(kLab, kDisease, RelationKind::may_diagnose, RelationKind::may_be_diagnosed_by, 1);
  link(kTherapeutic, kDisease, RelationKind::may_treat, RelationKind::may_be_treated_by, 1);
  return g;
}

/// Zipf-weighted filler sampler.
class Filler {
 public:
  Filler() {
    double total = 0;
    for (std::size_t r = 0; r < std::size(kFiller); ++r) cdf_.push_back(total += 1.0 / static_cast<double>(r + 2));
    for (auto& c : cdf_) c /= total;
  }
  std::string_view draw(Rng& rng) const {
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), rng.uniform());
    return kFiller[std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), std::size(kFiller) - 1)];
  }

 private:
  std::vector<double> cdf_;
};

std::string capitalize(std::string s) {
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

std::string upper(std::string s) {
  for (char& c : s)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return s;
}

/// Raw note with planted mentions: section headers, sentences of filler, the
/// occasional mask, repeated punctuation and capitalization.
std::string make_note(const Graph& g, const std::map<std::string, std::string>& abbreviation_of,
                      const SynthOptions& opt, const Filler& filler, Rng& rng) {
  const std::size_t target = opt.min_words + rng.below(opt.max_words - opt.min_words + 1);

  // Topics: admissible concepts mentioned 1-3 times each, plus one decoy.
  std::vector<std::string> phrases;
  std::vector<std::size_t> admissible;
  for (std::size_t i = 0; i < g.concepts.size(); ++i)
    if (g.concepts[i].semantic_type != kDecoy) admissible.push_back(i);
  for (std::size_t i : rng.sample_without_replacement(admissible.size(), opt.topics_per_note)) {
    const auto& c = g.concepts[admissible[i]];
    const auto abbr = abbreviation_of.find(c.concept_id);
    const bool use_abbr = abbr != abbreviation_of.end() && rng.uniform() < 0.6;
    const std::size_t mentions = 1 + rng.below(3);
    for (std::size_t m = 0; m < mentions; ++m) {
      if (use_abbr) {
        phrases.push_back(upper(abbr->second));
      } else {
        const auto& term = rng.uniform() < 0.5 ? c.preferred_term() : c.terms[rng.below(c.terms.size())];
        phrases.push_back(rng.uniform() < 0.2 ? capitalize(term) : term);
      }
    }
  }
  const auto& decoys = g.by_type.at(std::string(kDecoy));
  const auto& decoy = g.concepts[decoys[rng.below(decoys.size())]];
  phrases.push_back(decoy.terms[rng.below(decoy.terms.size())]);
  rng.shuffle(phrases);

  // Spread the phrases over the note at roughly even gaps.
  const std::size_t gap = std::max<std::size_t>(3, target / (phrases.size() + 1));
  std::string out;
  std::size_t words = 0, sentence = 0, next_phrase = 0, header = 0;
  auto emit = [&](std::string_view w) {
    if (!out.empty()) out += ' ';
    out += w;
  };
  while (words < target || next_phrase < phrases.size()) {
    if (sentence == 0 && header < kHeaders.size() && rng.uniform() < 0.12) {
      out += out.empty() ? "" : "\n\n";
      out += kHeaders[header++];
    }
    std::string w(filler.draw(rng));
    if (sentence == 0) w = capitalize(w);
    emit(w);
    ++words;
    ++sentence;
    if (next_phrase < phrases.size() && words >= gap * (next_phrase + 1)) {
      emit(phrases[next_phrase]);
      words += text::count_words(phrases[next_phrase++]);
    }
    if (rng.uniform() < 0.02) emit("___");
    if (sentence >= 8 + rng.below(10)) {
      const double p = rng.uniform();
      out += p < 0.05 ? "!!" : p < 0.1 ? "..." : p < 0.15 ? "," : ".";
      sentence = 0;
    }
  }
  out += '.';
  return out;
}

eval::QueryType query_type_of(std::string_view semantic_type) {
  const auto et = gen::entity_type_of(semantic_type);
  if (et == "diseases") return eval::QueryType::disease;
  if (et == "drugs") return eval::QueryType::drug;
  return eval::QueryType::procedure;
}

std::string id_of(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
  return buf;
}

}  // namespace

Judge::Judge(const kg::KnowledgeGraph& kg, const std::map<std::string, std::string>& abbreviations)
    : kg_(kg), automaton_(matcher::build_automaton(kg, kg.filter())) {
  for (const auto& [abbr, full] : abbreviations) abbreviation_concepts_.emplace_back(abbr, kg.lookup_term(full));
  for (const auto& c : kg.concepts()) {
    std::set<std::string> anc;
    std::vector<std::string> frontier{c.concept_id};
    while (!frontier.empty()) {
      const auto id = frontier.back();
      frontier.pop_back();
      for (const auto& r : kg.relations_from(id))
        if (r.kind == RelationKind::is_a && anc.insert(r.tail).second) frontier.push_back(r.tail);
    }
    ancestors_.emplace(c.concept_id, std::move(anc));
  }
}

std::optional<eval::MatchType> Judge::classify(std::string_view concept_id, std::string_view query_text,
                                               std::string_view chunk_text) const {
  if (text::contains_word(chunk_text, query_text)) return eval::MatchType::string;
  std::set<std::string, std::less<>> named, abbreviated;
  for (const auto& m : automaton_.find_mentions(chunk_text)) named.insert(m.concept_ids.begin(), m.concept_ids.end());
  for (const auto& [abbr, ids] : abbreviation_concepts_)
    if (text::contains_word(chunk_text, abbr)) abbreviated.insert(ids.begin(), ids.end());
  if (named.contains(concept_id)) return eval::MatchType::synonym;
  if (abbreviated.contains(concept_id)) return eval::MatchType::abbreviation;

  std::set<std::string, std::less<>> present = named;
  present.insert(abbreviated.begin(), abbreviated.end());
  for (const auto& id : present) {
    const auto it = ancestors_.find(id);
    if (it != ancestors_.end() && it->second.contains(std::string(concept_id))) return eval::MatchType::hyponym;
  }
  for (const auto& id : present)
    for (const auto& r : kg_.relations_from(id))
      if ((r.kind == RelationKind::may_treat || r.kind == RelationKind::may_cause) && r.tail == concept_id)
        return eval::MatchType::implication;
  return std::nullopt;
}

Benchmark generate(const SynthOptions& opt) {
  if (opt.min_words == 0 || opt.max_words < opt.min_words) throw ConfigError("synth: need 0 < min_words <= max_words");
  Rng rng(opt.seed);
  Words words(rng);
  Graph g = make_graph(opt, words, rng);

  Benchmark bench;
  // Abbreviations point at preferred terms of admissible, non-category concepts.
  std::map<std::string, std::string> abbreviation_of;  // concept id -> abbreviation
  {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < g.concepts.size(); ++i)
      if (g.concepts[i].semantic_type != kDecoy) candidates.push_back(i);
    for (std::size_t i : rng.sample_without_replacement(candidates.size(), opt.abbreviations)) {
      const auto& c = g.concepts[candidates[i]];
      const auto a = words.abbreviation();
      abbreviation_of.emplace(c.concept_id, a);
      bench.abbreviations.emplace(a, c.preferred_term());
    }
  }

  const Filler filler;
  for (std::size_t n = 0; n < opt.train_notes; ++n) {
    Rng note_rng(mix_seed(opt.seed, fnv1a64(id_of("tr", n))));
    bench.train_notes.push_back({id_of("tr", n), make_note(g, abbreviation_of, opt, filler, note_rng)});
  }
  for (std::size_t n = 0; n < opt.eval_notes; ++n) {
    Rng note_rng(mix_seed(opt.seed, fnv1a64(id_of("ev", n))));
    bench.eval_notes.push_back({id_of("ev", n), make_note(g, abbreviation_of, opt, filler, note_rng)});
  }

  const kg::KnowledgeGraph kg(g.concepts, g.relations);
  const Judge judge(kg, bench.abbreviations);
  const auto eval_chunks = corpus::prepare_chunks(bench.eval_notes, corpus::ChunkingOptions{});
  const auto automaton = matcher::build_automaton(kg, kg.filter());

  std::vector<eval::Query> queries;
  std::map<std::string, std::map<std::string, eval::MatchType>> qrels;
  auto add_query = [&](const std::string& note_id, const std::string& concept_id, const std::string& text,
                       std::span<const corpus::Chunk> pool) {
    std::map<std::string, eval::MatchType> rel;
    for (const auto& ch : pool)
      if (auto t = judge.classify(concept_id, text, ch.text)) rel.emplace(ch.id(), *t);
    if (rel.empty()) return false;
    const auto qid = id_of("q", queries.size());
    queries.push_back({qid, note_id, text, query_type_of(kg.get(concept_id).semantic_type)});
    qrels.emplace(qid, std::move(rel));
    return true;
  };

  // Single-patient queries: one per planted relation kind where the note allows it.
  std::size_t begin = 0;
  for (const auto& note : bench.eval_notes) {
    std::size_t end = begin;
    while (end < eval_chunks.size() && eval_chunks[end].note_id == note.note_id) ++end;
    const std::span<const corpus::Chunk> pool(eval_chunks.data() + begin, end - begin);
    begin = end;
    const auto cleaned = corpus::clean_note(note.text, corpus::ChunkingOptions{}.mask_patterns);
    Rng qrng(mix_seed(opt.seed ^ 0x9e11, fnv1a64(note.note_id)));

    auto absent = [&](const kg::Concept& c) {
      return std::none_of(c.terms.begin(), c.terms.end(),
                          [&](const std::string& t) { return text::contains_word(cleaned, t); });
    };
    std::vector<std::pair<std::string, std::string>> mentioned;  // concept, surface
    for (const auto& m : automaton.find_mentions(cleaned))
      for (const auto& id : m.concept_ids) mentioned.emplace_back(id, m.surface);
    std::sort(mentioned.begin(), mentioned.end());
    mentioned.erase(std::unique(mentioned.begin(), mentioned.end()), mentioned.end());
    if (mentioned.empty()) continue;
    const auto& [s_id, s_surface] = mentioned[qrng.below(mentioned.size())];
    add_query(note.note_id, s_id, s_surface, pool);

    qrng.shuffle(mentioned);
    for (const auto& [id, surface] : mentioned) {
      const auto& c = kg.get(id);
      std::vector<std::string> unseen;
      for (const auto& t : c.terms)
        if (!text::contains_word(cleaned, t) && kg.lookup_term(t).size() == 1) unseen.push_back(t);
      if (!unseen.empty() && add_query(note.note_id, id, unseen[qrng.below(unseen.size())], pool)) break;
    }
    for (const auto& [abbr, full] : bench.abbreviations) {
      if (!text::contains_word(cleaned, abbr)) continue;
      const auto ids = kg.lookup_term(full);
      if (ids.size() == 1 && absent(kg.get(ids[0])) && add_query(note.note_id, ids[0], full, pool)) break;
    }
    for (const auto& [id, surface] : mentioned) {
      const auto parents = kg.neighbor_concepts(id, kg::NeighborClass::hypernym);
      if (parents.empty()) continue;
      const auto& p = kg.get(parents.front());
      if (absent(p) && add_query(note.note_id, p.concept_id, p.preferred_term(), pool)) break;
    }
    for (const auto& [id, surface] : mentioned) {
      if (kg.get(id).semantic_type != kDrug) continue;
      bool done = false;
      for (const auto& r : kg.relations_from(id)) {
        if (r.kind != RelationKind::may_treat) continue;
        const auto& d = kg.get(r.tail);
        if (absent(d) && add_query(note.note_id, d.concept_id, d.preferred_term(), pool)) {
          done = true;
          break;
        }
      }
      if (done) break;
    }
  }

  // Multi-patient queries over the whole eval collection.
  std::vector<std::size_t> admissible;
  for (std::size_t i = 0; i < g.concepts.size(); ++i)
    if (g.concepts[i].semantic_type != kDecoy) admissible.push_back(i);
  Rng mrng(mix_seed(opt.seed, 0x3417));
  mrng.shuffle(admissible);
  std::size_t made = 0;
  for (std::size_t i = 0; i < admissible.size() && made < opt.multi_queries; ++i) {
    const auto& c = g.concepts[admissible[i]];
    if (add_query(std::string(eval::kAllNotes), c.concept_id, c.preferred_term(), eval_chunks)) ++made;
  }

  bench.concepts = std::move(g.concepts);
  bench.relations = std::move(g.relations);
  bench.judgments = eval::Judgments(std::move(queries), std::move(qrels));
  return bench;
}

void write_benchmark(const Benchmark& bench, const std::filesystem::path& dir) {
  corpus::save_notes(dir / Layout::notes, bench.train_notes);
  corpus::save_notes(dir / Layout::eval_notes, bench.eval_notes);
  kg::save_kg(kg::KnowledgeGraph(bench.concepts, bench.relations), dir / Layout::concepts, dir / Layout::relations);
  std::string abbr;
  for (const auto& [a, full] : bench.abbreviations) abbr += a + '\t' + full + '\n';
  io::write_file(dir / Layout::abbreviations, abbr);
  eval::save_judgments(dir / Layout::queries, dir / Layout::qrels, bench.judgments);
}

}  // namespace ehrdr::synth
