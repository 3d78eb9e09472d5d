#include "ehrdr/kg.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <sstream>

#include "ehrdr/error.hpp"
#include "ehrdr/io.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::kg {

namespace {

constexpr std::array<std::pair<RelationKind, std::string_view>, 7> kKindNames{{
    {RelationKind::is_a, "is_a"},
    {RelationKind::may_treat, "may_treat"},
    {RelationKind::may_be_treated_by, "may_be_treated_by"},
    {RelationKind::may_diagnose, "may_diagnose"},
    {RelationKind::may_be_diagnosed_by, "may_be_diagnosed_by"},
    {RelationKind::may_cause, "may_cause"},
    {RelationKind::may_be_caused_by, "may_be_caused_by"},
}};

}  // namespace

std::string_view to_string(RelationKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

std::optional<RelationKind> parse_relation_kind(std::string_view s) {
  std::string norm(text::trim(s));
  for (char& c : norm) c = (c == ' ' || c == '-') ? '_' : static_cast<char>(std::tolower(c));
  for (const auto& [k, name] : kKindNames)
    if (norm == name) return k;
  return std::nullopt;
}

SemanticTypeFilter SemanticTypeFilter::defaults() {
  return SemanticTypeFilter{{
      "Laboratory Procedure",
      "Sign, Symptom, or Finding",
      "Diagnostic Procedure",
      "Therapeutic or Preventive Procedure",
      "Disease, Syndrome or Pathologic Function",
      "Chemical or Drug",
  }};
}

KnowledgeGraph::KnowledgeGraph(std::vector<Concept> concepts, std::vector<Relation> relations,
                               SemanticTypeFilter filter)
    : concepts_(std::move(concepts)), relations_(std::move(relations)), filter_(std::move(filter)) {
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    auto& c = concepts_[i];
    if (c.concept_id.empty()) throw Error("concept with empty id");
    std::vector<std::string> terms;
    for (const auto& t : c.terms) {
      std::string lower = text::to_lower(text::trim(t));
      if (lower.empty()) continue;
      if (std::find(terms.begin(), terms.end(), lower) == terms.end()) terms.push_back(lower);
    }
    if (terms.empty()) throw Error("concept \"" + c.concept_id + "\" has no terms");
    c.terms = std::move(terms);
    if (!by_id_.emplace(c.concept_id, i).second)
      throw Error("duplicate concept id \"" + c.concept_id + "\"");
    for (const auto& t : c.terms) by_term_[t].push_back(i);
  }
  for (const auto& r : relations_) {
    if (!by_id_.contains(r.head)) throw Error("relation endpoint \"" + r.head + "\" not in concept table");
    if (!by_id_.contains(r.tail)) throw Error("relation endpoint \"" + r.tail + "\" not in concept table");
    if (r.head == r.tail) throw Error("self-loop relation on \"" + r.head + "\"");
  }
  relations_sorted_ = relations_;
  std::stable_sort(relations_sorted_.begin(), relations_sorted_.end(),
                   [&](const Relation& a, const Relation& b) { return by_id_.at(a.head) < by_id_.at(b.head); });
  out_edges_.assign(concepts_.size(), {0, 0});
  for (std::size_t i = 0; i < relations_sorted_.size();) {
    const std::size_t head = by_id_.at(relations_sorted_[i].head);
    std::size_t j = i;
    while (j < relations_sorted_.size() && by_id_.at(relations_sorted_[j].head) == head) ++j;
    out_edges_[head] = {i, j};
    i = j;
  }
}

const Concept* KnowledgeGraph::find(std::string_view concept_id) const {
  const auto it = by_id_.find(std::string(concept_id));
  return it == by_id_.end() ? nullptr : &concepts_[it->second];
}

const Concept& KnowledgeGraph::get(std::string_view concept_id) const {
  if (const auto* c = find(concept_id)) return *c;
  throw Error("unknown concept \"" + std::string(concept_id) + "\"");
}

bool KnowledgeGraph::is_admissible(std::string_view concept_id) const {
  return filter_.admits(get(concept_id).semantic_type);
}

std::vector<std::string> KnowledgeGraph::lookup_term_any(std::string_view term) const {
  std::vector<std::string> out;
  const auto it = by_term_.find(std::string(term));
  if (it == by_term_.end()) return out;
  for (std::size_t i : it->second) out.push_back(concepts_[i].concept_id);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> KnowledgeGraph::lookup_term(std::string_view term) const {
  auto ids = lookup_term_any(term);
  std::erase_if(ids, [&](const std::string& id) { return !filter_.admits(get(id).semantic_type); });
  return ids;
}

std::span<const Relation> KnowledgeGraph::relations_from(std::string_view concept_id) const {
  const auto it = by_id_.find(std::string(concept_id));
  if (it == by_id_.end()) throw Error("unknown concept \"" + std::string(concept_id) + "\"");
  const auto [b, e] = out_edges_[it->second];
  return std::span<const Relation>(relations_sorted_).subspan(b, e - b);
}

std::vector<std::string> KnowledgeGraph::neighbor_concepts(std::string_view concept_id,
                                                           NeighborClass cls) const {
  std::vector<std::string> out;
  if (cls == NeighborClass::synonym) return out;
  for (const auto& r : relations_from(concept_id)) {
    const bool hyper = r.kind == RelationKind::is_a;
    if ((cls == NeighborClass::hypernym) == hyper) out.push_back(r.tail);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::string> KnowledgeGraph::synonyms(std::string_view concept_id,
                                                  std::string_view seed_surface) const {
  const auto& c = get(concept_id);
  const std::string_view seed = seed_surface.empty() ? std::string_view(c.preferred_term()) : seed_surface;
  std::vector<std::string> out;
  for (const auto& t : c.terms)
    if (t != seed) out.push_back(t);
  return out;
}

std::set<std::string> KnowledgeGraph::neighbors(std::string_view concept_id, NeighborClass cls,
                                                std::string_view seed_surface) const {
  std::set<std::string> out;
  if (cls == NeighborClass::synonym) {
    for (auto& t : synonyms(concept_id, seed_surface)) out.insert(std::move(t));
    return out;
  }
  for (const auto& id : neighbor_concepts(concept_id, cls))
    for (const auto& t : get(id).terms) out.insert(t);
  return out;
}

std::optional<std::string> KnowledgeGraph::random_synonym(std::string_view concept_id, Rng& rng,
                                                          std::string_view seed_surface) const {
  auto syn = synonyms(concept_id, seed_surface);
  if (syn.empty()) return std::nullopt;
  return syn[rng.below(syn.size())];
}

bool KnowledgeGraph::same_graph(const KnowledgeGraph& other) const {
  if (concepts_.size() != other.concepts_.size()) return false;
  for (const auto& c : concepts_) {
    const auto* o = other.find(c.concept_id);
    if (!o || o->semantic_type != c.semantic_type || o->preferred_term() != c.preferred_term())
      return false;
    std::set<std::string> a(c.terms.begin(), c.terms.end()), b(o->terms.begin(), o->terms.end());
    if (a != b) return false;
  }
  std::multiset<Relation> ra(relations_.begin(), relations_.end());
  std::multiset<Relation> rb(other.relations_.begin(), other.relations_.end());
  return ra == rb;
}

KnowledgeGraph load_kg(const std::filesystem::path& concepts_path,
                       const std::filesystem::path& relations_path, SemanticTypeFilter filter) {
  std::vector<Concept> concepts;
  io::for_each_jsonl(concepts_path, [&](const io::Json& obj, std::size_t line) {
    Concept c;
    c.concept_id = io::require_string(obj, "concept_id", line);
    c.semantic_type = io::require_string(obj, "semantic_type", line);
    if (auto it = obj.find("preferred_term"); it != obj.end() && it->is_string())
      c.terms.push_back(it->get<std::string>());
    const auto terms = obj.find("terms");
    if (terms == obj.end() || !terms->is_array()) throw ParseError("missing array field 'terms'", line);
    for (const auto& t : *terms) {
      if (!t.is_string()) throw ParseError("non-string term", line);
      c.terms.push_back(t.get<std::string>());
    }
    concepts.push_back(std::move(c));
  });
  std::vector<Relation> relations;
  io::for_each_tsv(relations_path, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 3) throw ParseError("relation needs 3 tab-separated fields", line);
    const auto kind = parse_relation_kind(f[1]);
    if (!kind) throw ParseError("unknown relation kind \"" + f[1] + "\"", line);
    relations.push_back(Relation{std::string(text::trim(f[0])), *kind, std::string(text::trim(f[2]))});
  });
  return KnowledgeGraph(std::move(concepts), std::move(relations), std::move(filter));
}

void save_kg(const KnowledgeGraph& kg, const std::filesystem::path& concepts_path,
             const std::filesystem::path& relations_path) {
  std::ostringstream cs;
  for (const auto& c : kg.concepts())
    cs << io::Json{{"concept_id", c.concept_id}, {"semantic_type", c.semantic_type}, {"terms", c.terms}}.dump()
       << '\n';
  io::write_file(concepts_path, cs.str());
  std::ostringstream rs;
  for (const auto& r : kg.relations()) rs << r.head << '\t' << to_string(r.kind) << '\t' << r.tail << '\n';
  io::write_file(relations_path, rs.str());
}

}  // namespace ehrdr::kg
