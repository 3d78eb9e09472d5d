#include "ehrdr/matcher.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <sstream>

#include "ehrdr/error.hpp"
#include "ehrdr/io.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::matcher {

TermAutomaton::TermAutomaton(const std::map<std::string, std::vector<std::string>>& dictionary) {
  nodes_.emplace_back();
  for (const auto& [term, ids] : dictionary) {
    if (term.empty()) continue;
    std::int32_t state = 0;
    for (unsigned char c : term) {
      std::int32_t nxt = child(state, c);
      if (nxt < 0) {
        nxt = static_cast<std::int32_t>(nodes_.size());
        auto& edges = nodes_[state].next;
        edges.insert(std::lower_bound(edges.begin(), edges.end(), std::make_pair(c, std::int32_t{0})),
                     {c, nxt});
        nodes_.emplace_back();
      }
      state = nxt;
    }
    nodes_[state].pattern = static_cast<std::int32_t>(patterns_.size());
    patterns_.push_back(term);
    std::vector<std::string> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    payloads_.push_back(std::move(sorted));
  }

  // Breadth-first failure links.
  std::deque<std::int32_t> queue;
  for (const auto& [c, nxt] : nodes_[0].next) queue.push_back(nxt);
  while (!queue.empty()) {
    const std::int32_t u = queue.front();
    queue.pop_front();
    for (const auto& [c, v] : nodes_[u].next) {
      std::int32_t f = nodes_[u].fail;
      std::int32_t target = -1;
      for (;;) {
        target = child(f, c);
        if (target >= 0 || f == 0) break;
        f = nodes_[f].fail;
      }
      nodes_[v].fail = (target >= 0 && target != v) ? target : 0;
      const auto& fn = nodes_[nodes_[v].fail];
      nodes_[v].out_link = fn.pattern >= 0 ? nodes_[v].fail : fn.out_link;
      queue.push_back(v);
    }
  }
}

std::int32_t TermAutomaton::child(std::int32_t state, unsigned char c) const {
  const auto& edges = nodes_[state].next;
  const auto it = std::lower_bound(edges.begin(), edges.end(), std::make_pair(c, std::int32_t{0}),
                                   [](const auto& a, const auto& b) { return a.first < b.first; });
  return (it != edges.end() && it->first == c) ? it->second : -1;
}

std::int32_t TermAutomaton::step(std::int32_t state, unsigned char c) const {
  for (;;) {
    const std::int32_t nxt = child(state, c);
    if (nxt >= 0) return nxt;
    if (state == 0) return 0;
    state = nodes_[state].fail;
  }
}

std::vector<Mention> TermAutomaton::find_mentions(std::string_view text) const {
  struct Candidate {
    std::size_t start, end, pattern;
  };
  std::vector<Candidate> cands;
  scan(text, [&](std::size_t p, std::size_t end) {
    const std::size_t start = end - patterns_[p].size();
    if (text::is_word_boundary(text, start) && text::is_word_boundary(text, end))
      cands.push_back({start, end, p});
  });

  // Per concept: longest-first greedy selection among overlapping candidates.
  std::map<std::string, std::vector<std::size_t>> by_concept;
  for (std::size_t i = 0; i < cands.size(); ++i)
    for (const auto& id : payloads_[cands[i].pattern]) by_concept[id].push_back(i);

  std::vector<std::vector<std::string>> kept(cands.size());
  for (auto& [id, idx] : by_concept) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto la = cands[a].end - cands[a].start, lb = cands[b].end - cands[b].start;
      return la != lb ? la > lb : cands[a].start < cands[b].start;
    });
    std::vector<std::size_t> accepted;
    for (std::size_t i : idx) {
      const bool overlaps = std::any_of(accepted.begin(), accepted.end(), [&](std::size_t j) {
        return cands[i].start < cands[j].end && cands[j].start < cands[i].end;
      });
      if (!overlaps) {
        accepted.push_back(i);
        kept[i].push_back(id);
      }
    }
  }

  std::vector<Mention> out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (kept[i].empty()) continue;
    std::sort(kept[i].begin(), kept[i].end());
    out.push_back(Mention{patterns_[cands[i].pattern], cands[i].start, cands[i].end, std::move(kept[i])});
  }
  std::sort(out.begin(), out.end(), [](const Mention& a, const Mention& b) {
    return a.start_char != b.start_char ? a.start_char < b.start_char : a.length() > b.length();
  });
  return out;
}

TermAutomaton build_automaton(const kg::KnowledgeGraph& kg, const kg::SemanticTypeFilter& filter) {
  std::map<std::string, std::vector<std::string>> dict;
  for (const auto& c : kg.concepts()) {
    if (!filter.admits(c.semantic_type)) continue;
    for (const auto& t : c.terms) dict[t].push_back(c.concept_id);
  }
  if (dict.empty()) throw Error("no admissible terms in the knowledge graph");
  return TermAutomaton(dict);
}

std::vector<std::pair<std::string, std::string>> chunk_concepts(std::span<const Mention> mentions) {
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& m : mentions)
    for (const auto& id : m.concept_ids) pairs.emplace(id, m.surface);
  return {pairs.begin(), pairs.end()};
}

void save_mentions(const std::filesystem::path& path, std::span<const ChunkMentions> rows) {
  std::ostringstream out;
  for (const auto& row : rows)
    for (const auto& m : row.mentions)
      out << io::Json{{"chunk_id", row.chunk_id},
                      {"surface", m.surface},
                      {"start_char", m.start_char},
                      {"end_char", m.end_char},
                      {"concept_ids", m.concept_ids}}
                 .dump()
          << '\n';
  io::write_file(path, out.str());
}

}  // namespace ehrdr::matcher
