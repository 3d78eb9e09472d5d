#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

namespace ehrdr {

/// Layered "key = value" configuration. Later layers win. Lines starting with
/// '#' are comments. Relative paths resolve against the directory of the file
/// that set them (or the working directory for values set in code).
class Manifest {
 public:
  void load(const std::filesystem::path& path);
  void set(std::string key, std::string value, std::filesystem::path base = std::filesystem::current_path());
  /// "key=value"
  void set_assignment(std::string_view assignment);

  bool has(std::string_view key) const { return entries_.contains(key); }
  std::optional<std::string> get(std::string_view key) const;
  std::string text(std::string_view key, std::string fallback) const;
  double number(std::string_view key, double fallback) const;
  std::size_t count(std::string_view key, std::size_t fallback) const;
  std::uint64_t u64(std::string_view key, std::uint64_t fallback) const;
  bool flag(std::string_view key, bool fallback) const;
  std::optional<std::filesystem::path> path(std::string_view key) const;

  /// Throws ConfigError naming the first key outside `known`.
  void require_known(const std::set<std::string, std::less<>>& known) const;

  /// Sorted "key = value" lines with paths as written.
  std::string canonical() const;
  std::uint64_t hash() const;

 private:
  struct Entry {
    std::string value;
    std::filesystem::path base;
  };
  std::map<std::string, Entry, std::less<>> entries_;
};

}  // namespace ehrdr
