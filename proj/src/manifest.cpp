#include "ehrdr/manifest.hpp"

#include <charconv>
#include <fstream>

#include "ehrdr/error.hpp"
#include "ehrdr/rng.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr {

void Manifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path();
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError(path.string() + ": expected key = value", n);
    auto key = text::trim(t.substr(0, eq));
    if (key.empty()) throw ParseError(path.string() + ": empty key", n);
    set(std::string(key), std::string(text::trim(t.substr(eq + 1))), base);
  }
}

void Manifest::set(std::string key, std::string value, std::filesystem::path base) {
  entries_.insert_or_assign(std::move(key), Entry{std::move(value), std::move(base)});
}

void Manifest::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got \"" + std::string(assignment) + "\"");
  set(std::string(text::trim(assignment.substr(0, eq))), std::string(text::trim(assignment.substr(eq + 1))));
}

std::optional<std::string> Manifest::get(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second.value;
}

std::string Manifest::text(std::string_view key, std::string fallback) const {
  return get(key).value_or(std::move(fallback));
}

double Manifest::number(std::string_view key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used == v->size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key " + std::string(key) + " must be a number, got \"" + *v + "\"");
}

std::uint64_t Manifest::u64(std::string_view key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || p != v->data() + v->size())
    throw ConfigError("config key " + std::string(key) + " must be a non-negative integer, got \"" + *v + "\"");
  return out;
}

std::size_t Manifest::count(std::string_view key, std::size_t fallback) const {
  return static_cast<std::size_t>(u64(key, fallback));
}

bool Manifest::flag(std::string_view key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  const auto s = text::to_lower(*v);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key " + std::string(key) + " must be a boolean, got \"" + *v + "\"");
}

std::optional<std::filesystem::path> Manifest::path(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end() || it->second.value.empty()) return std::nullopt;
  std::filesystem::path p(it->second.value);
  return p.is_absolute() ? p : (it->second.base / p).lexically_normal();
}

void Manifest::require_known(const std::set<std::string, std::less<>>& known) const {
  for (const auto& [key, entry] : entries_)
    if (!known.contains(key)) throw ConfigError("unknown config key \"" + key + "\"");
}

std::string Manifest::canonical() const {
  std::string out;
  for (const auto& [key, entry] : entries_) out += key + " = " + entry.value + "\n";
  return out;
}

std::uint64_t Manifest::hash() const { return fnv1a64(canonical()); }

}  // namespace ehrdr
