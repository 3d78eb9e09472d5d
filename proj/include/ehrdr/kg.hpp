#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ehrdr/rng.hpp"

namespace ehrdr::kg {

enum class RelationKind {
  is_a,
  may_treat,
  may_be_treated_by,
  may_diagnose,
  may_be_diagnosed_by,
  may_cause,
  may_be_caused_by,
};

std::string_view to_string(RelationKind kind);
/// Accepts both "may_be_treated_by" and "may be treated by".
std::optional<RelationKind> parse_relation_kind(std::string_view s);

enum class NeighborClass { synonym, hypernym, related };

struct Concept {
  std::string concept_id;
  std::string semantic_type;
  /// Lowercase, unique, non-empty. The first entry is the preferred term.
  std::vector<std::string> terms;

  const std::string& preferred_term() const { return terms.front(); }
};

struct Relation {
  std::string head;
  RelationKind kind;
  std::string tail;

  auto operator<=>(const Relation&) const = default;
};

/// Semantic types whose concepts take part in mention matching and training data.
struct SemanticTypeFilter {
  std::set<std::string, std::less<>> admissible;

  /// The six clinical types: lab, diagnostic and therapeutic procedures,
  /// findings, diseases, drugs.
  static SemanticTypeFilter defaults();
  bool admits(std::string_view type) const { return admissible.contains(type); }
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  /// Validates endpoints, self-loops and term invariants; builds the indexes.
  KnowledgeGraph(std::vector<Concept> concepts, std::vector<Relation> relations,
                 SemanticTypeFilter filter = SemanticTypeFilter::defaults());

  const std::vector<Concept>& concepts() const { return concepts_; }
  const std::vector<Relation>& relations() const { return relations_; }
  const SemanticTypeFilter& filter() const { return filter_; }

  const Concept* find(std::string_view concept_id) const;
  /// Throws Error for unknown ids.
  const Concept& get(std::string_view concept_id) const;
  bool is_admissible(std::string_view concept_id) const;

  /// Admissible concepts having `term` among their terms, sorted by id.
  std::vector<std::string> lookup_term(std::string_view term) const;
  /// Same, ignoring the semantic-type filter.
  std::vector<std::string> lookup_term_any(std::string_view term) const;

  /// Outgoing edges of a concept, in load order.
  std::span<const Relation> relations_from(std::string_view concept_id) const;

  /// Term-level neighborhood. synonym: own terms minus seed_surface (the
  /// preferred term when empty). hypernym: terms of is_a tails. related: terms
  /// of tails of every other outgoing relation. Incoming is_a edges (hyponyms)
  /// are never followed.
  std::set<std::string> neighbors(std::string_view concept_id, NeighborClass cls,
                                  std::string_view seed_surface = {}) const;

  /// Concept-level neighborhood for hypernym/related, sorted and unique.
  std::vector<std::string> neighbor_concepts(std::string_view concept_id, NeighborClass cls) const;

  /// Own terms minus seed_surface (preferred term when empty), in stored order.
  std::vector<std::string> synonyms(std::string_view concept_id,
                                    std::string_view seed_surface = {}) const;

  /// Uniform pick from synonyms(concept_id); nullopt when there are none.
  std::optional<std::string> random_synonym(std::string_view concept_id, Rng& rng,
                                            std::string_view seed_surface = {}) const;

  /// Order-insensitive graph equality (concepts by id, relations as a set).
  bool same_graph(const KnowledgeGraph& other) const;

 private:
  std::vector<Concept> concepts_;
  std::vector<Relation> relations_;
  SemanticTypeFilter filter_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_term_;
  // Per concept index: [begin, end) into relations_sorted_.
  std::vector<Relation> relations_sorted_;
  std::vector<std::pair<std::size_t, std::size_t>> out_edges_;
};

KnowledgeGraph load_kg(const std::filesystem::path& concepts_path,
                       const std::filesystem::path& relations_path,
                       SemanticTypeFilter filter = SemanticTypeFilter::defaults());

void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& concepts_path,
             const std::filesystem::path& relations_path);

}  // namespace ehrdr::kg
