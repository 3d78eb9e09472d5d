#include "ehrdr/io.hpp"

#include <fstream>
#include <sstream>

#include "ehrdr/error.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::io {

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(path.string() + ": invalid JSON: " + e.what(), lineno);
    }
    if (!obj.is_object()) throw ParseError(path.string() + ": expected a JSON object", lineno);
    fn(obj, lineno);
  }
}

void for_each_tsv(const std::filesystem::path& path,
                  const std::function<void(const std::vector<std::string>&, std::size_t)>& fn) {
  auto in = open_in(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty() || line.front() == '#') continue;
    fn(text::split(line, '\t'), lineno);
  }
}

std::string read_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::string require_string(const Json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw ParseError(std::string("missing string field '") + key + "'", line);
  return it->get<std::string>();
}

}  // namespace ehrdr::io
