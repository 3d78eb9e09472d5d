#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ehrdr::text {

inline bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
inline bool is_alnum(char c) noexcept {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}
/// ASCII punctuation, same set as std::ispunct in the C locale.
inline bool is_punct(char c) noexcept {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') ||
         (c >= '{' && c <= '~');
}

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::size_t count_words(std::string_view s);

/// True when position p of s sits next to a non-alphanumeric char or an edge.
inline bool is_word_boundary(std::string_view s, std::size_t p) noexcept {
  return p == 0 || p >= s.size() || !is_alnum(s[p - 1]) || !is_alnum(s[p]);
}

/// Word-boundary occurrence test, used for abbreviation presence checks.
bool contains_word(std::string_view haystack, std::string_view needle);

}  // namespace ehrdr::text
