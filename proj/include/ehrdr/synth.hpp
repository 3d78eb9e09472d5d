#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ehrdr/corpus.hpp"
#include "ehrdr/evalkit.hpp"
#include "ehrdr/kg.hpp"
#include "ehrdr/matcher.hpp"

namespace ehrdr::synth {

/// Seeded generator of a self-contained retrieval benchmark: a pseudo-word
/// knowledge graph, an abbreviation table, training notes and held-out
/// evaluation notes with planted mentions, and CliniQ-style judgments.
struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t concepts = 500;
  std::size_t train_notes = 200;
  std::size_t eval_notes = 50;
  std::size_t min_words = 600;
  std::size_t max_words = 900;
  std::size_t topics_per_note = 12;
  std::size_t abbreviations = 60;
  std::size_t multi_queries = 60;
};

struct Benchmark {
  std::vector<kg::Concept> concepts;
  std::vector<kg::Relation> relations;
  std::map<std::string, std::string> abbreviations;  // lowercase abbreviation -> full name
  std::vector<corpus::Note> train_notes;
  std::vector<corpus::Note> eval_notes;
  eval::Judgments judgments;
};

Benchmark generate(const SynthOptions& options);

/// Relevance of a query about `concept_id` (worded as `query_text`) to a
/// cleaned chunk, by priority string > synonym > abbreviation > hyponym >
/// implication. Hyponym: the chunk names a descendant along is_a. Implication:
/// the chunk names something with a may_treat / may_cause edge to the concept.
class Judge {
 public:
  Judge(const kg::KnowledgeGraph& kg, const std::map<std::string, std::string>& abbreviations);

  std::optional<eval::MatchType> classify(std::string_view concept_id, std::string_view query_text,
                                          std::string_view chunk_text) const;

 private:
  const kg::KnowledgeGraph& kg_;
  matcher::TermAutomaton automaton_;
  std::vector<std::pair<std::string, std::vector<std::string>>> abbreviation_concepts_;
  std::map<std::string, std::set<std::string>, std::less<>> ancestors_;
};

/// Layout written by write_benchmark, relative to the output directory.
struct Layout {
  static constexpr const char* notes = "notes.jsonl";
  static constexpr const char* eval_notes = "eval_notes.jsonl";
  static constexpr const char* concepts = "kg/concepts.jsonl";
  static constexpr const char* relations = "kg/relations.tsv";
  static constexpr const char* abbreviations = "abbreviations.tsv";
  static constexpr const char* queries = "eval/queries.tsv";
  static constexpr const char* qrels = "eval/qrels.tsv";
};

void write_benchmark(const Benchmark& bench, const std::filesystem::path& dir);

}  // namespace ehrdr::synth
