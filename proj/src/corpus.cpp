#include "ehrdr/corpus.hpp"

#include <regex>
#include <sstream>
#include <unordered_set>

#include "ehrdr/error.hpp"
#include "ehrdr/io.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::corpus {

std::string Chunk::id() const { return chunk_id(note_id, ordinal); }

std::string chunk_id(std::string_view note_id, std::size_t ordinal) {
  std::string id(note_id);
  id += '#';
  id += std::to_string(ordinal);
  return id;
}

namespace {

std::string clean_once(std::string s, const std::vector<std::regex>& masks) {
  for (const auto& re : masks) s = std::regex_replace(s, re, "");

  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (text::is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (text::is_punct(c) && !pending_space && !out.empty() && out.back() == c) continue;
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += c;
  }
  return out;
}

}  // namespace

std::string clean_note(std::string_view raw, std::span<const std::string> mask_patterns) {
  std::vector<std::regex> masks;
  masks.reserve(mask_patterns.size());
  for (const auto& p : mask_patterns) {
    if (p.empty()) continue;
    try {
      masks.emplace_back(p, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw ConfigError("invalid mask pattern '" + p + "': " + e.what());
    }
  }
  // Removing a mask can splice text into a new mask or punctuation run, so
  // iterate to a fixed point. Each pass either shrinks the string or stops.
  std::string cur = clean_once(std::string(raw), masks);
  for (;;) {
    std::string next = clean_once(cur, masks);
    if (next == cur) return cur;
    cur = std::move(next);
  }
}

std::vector<Chunk> chunk_note(const Note& note, std::size_t window, std::size_t overlap) {
  if (window == 0 || overlap >= window)
    throw ConfigError("chunking requires 0 <= overlap < window");
  const auto words = text::split_ws(note.text);
  std::vector<Chunk> out;
  const std::size_t n = words.size();
  const std::size_t stride = window - overlap;
  for (std::size_t start = 0; start < n; start += stride) {
    const std::size_t end = std::min(start + window, n);
    std::vector<std::string> span(words.begin() + static_cast<std::ptrdiff_t>(start),
                                  words.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(Chunk{note.note_id, out.size(), start, end, text::join(span, " ")});
    if (end == n) break;
  }
  return out;
}

std::vector<Chunk> prepare_chunks(std::span<const Note> notes, const ChunkingOptions& opts) {
  std::vector<Chunk> out;
  for (const auto& note : notes) {
    Note cleaned{note.note_id, clean_note(note.text, opts.mask_patterns)};
    if (cleaned.text.empty()) continue;
    auto chunks = chunk_note(cleaned, opts.window, opts.overlap);
    for (auto& c : chunks) out.push_back(std::move(c));
  }
  return out;
}

std::vector<Note> load_notes(const std::filesystem::path& path) {
  std::vector<Note> notes;
  std::unordered_set<std::string> seen;
  io::for_each_jsonl(path, [&](const io::Json& obj, std::size_t line) {
    Note n{io::require_string(obj, "note_id", line), io::require_string(obj, "text", line)};
    if (!seen.insert(n.note_id).second)
      throw ParseError("duplicate note_id \"" + n.note_id + "\"", line);
    notes.push_back(std::move(n));
  });
  return notes;
}

void save_notes(const std::filesystem::path& path, std::span<const Note> notes) {
  std::ostringstream out;
  for (const auto& n : notes) out << io::Json{{"note_id", n.note_id}, {"text", n.text}}.dump() << '\n';
  io::write_file(path, out.str());
}

std::vector<Chunk> load_chunks(const std::filesystem::path& path) {
  std::vector<Chunk> chunks;
  io::for_each_jsonl(path, [&](const io::Json& obj, std::size_t line) {
    Chunk c;
    c.note_id = io::require_string(obj, "note_id", line);
    c.text = io::require_string(obj, "text", line);
    try {
      c.ordinal = obj.at("ordinal").get<std::size_t>();
      c.start_word = obj.at("start_word").get<std::size_t>();
      c.end_word = obj.at("end_word").get<std::size_t>();
    } catch (const io::Json::exception& e) {
      throw ParseError(std::string("bad chunk record: ") + e.what(), line);
    }
    chunks.push_back(std::move(c));
  });
  return chunks;
}

void save_chunks(const std::filesystem::path& path, std::span<const Chunk> chunks) {
  std::ostringstream out;
  for (const auto& c : chunks) {
    out << io::Json{{"note_id", c.note_id},
                    {"ordinal", c.ordinal},
                    {"start_word", c.start_word},
                    {"end_word", c.end_word},
                    {"text", c.text}}
               .dump()
        << '\n';
  }
  io::write_file(path, out.str());
}

}  // namespace ehrdr::corpus
