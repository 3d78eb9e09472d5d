#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ehrdr/kg.hpp"

namespace ehrdr::matcher {

struct Mention {
  std::string surface;
  std::size_t start_char = 0;
  std::size_t end_char = 0;  // exclusive
  std::vector<std::string> concept_ids;  // sorted

  std::size_t length() const { return end_char - start_char; }
  bool operator==(const Mention&) const = default;
};

/// Aho-Corasick automaton over a term dictionary. Each pattern carries the
/// sorted list of concept ids that own the term. Immutable after construction.
class TermAutomaton {
 public:
  /// dictionary: term -> owning concept ids. Empty terms are ignored.
  explicit TermAutomaton(const std::map<std::string, std::vector<std::string>>& dictionary);

  std::size_t pattern_count() const { return patterns_.size(); }
  const std::string& pattern(std::size_t i) const { return patterns_[i]; }
  const std::vector<std::string>& payload(std::size_t i) const { return payloads_[i]; }

  /// Calls on_match(pattern_index, end_offset) for every occurrence of every
  /// pattern, boundary rules not applied.
  template <class F>
  void scan(std::string_view text, F&& on_match) const {
    std::int32_t state = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
      state = step(state, static_cast<unsigned char>(text[i]));
      for (std::int32_t s = nodes_[state].pattern >= 0 ? state : nodes_[state].out_link; s > 0;
           s = nodes_[s].out_link)
        on_match(static_cast<std::size_t>(nodes_[s].pattern), i + 1);
    }
  }

  /// Word-bounded matches, same-concept overlaps resolved in favor of the
  /// longest match (earliest on ties), sorted by (start, -length).
  std::vector<Mention> find_mentions(std::string_view text) const;

 private:
  struct Node {
    std::vector<std::pair<unsigned char, std::int32_t>> next;  // sorted by byte
    std::int32_t fail = 0;
    std::int32_t out_link = 0;  // nearest proper suffix state carrying a pattern; 0 = none
    std::int32_t pattern = -1;
  };

  std::int32_t child(std::int32_t state, unsigned char c) const;
  std::int32_t step(std::int32_t state, unsigned char c) const;

  std::vector<Node> nodes_;
  std::vector<std::string> patterns_;
  std::vector<std::vector<std::string>> payloads_;
};

/// Automaton over every term of every concept admitted by `filter`. Throws
/// Error when no admissible term exists.
TermAutomaton build_automaton(const kg::KnowledgeGraph& kg, const kg::SemanticTypeFilter& filter);

inline std::vector<Mention> find_mentions(const TermAutomaton& a, std::string_view chunk_text) {
  return a.find_mentions(chunk_text);
}

/// Distinct (concept_id, surface) pairs, sorted.
std::vector<std::pair<std::string, std::string>> chunk_concepts(std::span<const Mention> mentions);

struct ChunkMentions {
  std::string chunk_id;
  std::vector<Mention> mentions;
};

void save_mentions(const std::filesystem::path& path, std::span<const ChunkMentions> rows);

}  // namespace ehrdr::matcher
