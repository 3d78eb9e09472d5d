#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ehrdr::corpus {

struct Note {
  std::string note_id;
  std::string text;
};

/// A contiguous word window [start_word, end_word) of a cleaned note.
struct Chunk {
  std::string note_id;
  std::size_t ordinal = 0;
  std::size_t start_word = 0;
  std::size_t end_word = 0;
  std::string text;

  std::string id() const;
  bool operator==(const Chunk&) const = default;
};

struct ChunkingOptions {
  std::size_t window = 100;
  std::size_t overlap = 10;
  std::vector<std::string> mask_patterns{"___"};
};

/// "<note_id>#<ordinal>"
std::string chunk_id(std::string_view note_id, std::size_t ordinal);

/// Removes masks (regex patterns, applied until none match), lowercases ASCII,
/// collapses runs of one repeated punctuation character and normalizes
/// whitespace to single spaces. Idempotent.
std::string clean_note(std::string_view raw, std::span<const std::string> mask_patterns);

/// Splits on whitespace into windows starting every (window - overlap) words.
/// The first window reaching the end of the note is clipped and is the last.
std::vector<Chunk> chunk_note(const Note& note, std::size_t window = 100,
                              std::size_t overlap = 10);

/// Cleans every note, drops the ones that end up empty, and chunks the rest in
/// note order.
std::vector<Chunk> prepare_chunks(std::span<const Note> notes, const ChunkingOptions& opts);

std::vector<Note> load_notes(const std::filesystem::path& path);
void save_notes(const std::filesystem::path& path, std::span<const Note> notes);

std::vector<Chunk> load_chunks(const std::filesystem::path& path);
void save_chunks(const std::filesystem::path& path, std::span<const Chunk> chunks);

}  // namespace ehrdr::corpus
