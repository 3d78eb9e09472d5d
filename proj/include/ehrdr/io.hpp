#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

namespace ehrdr::io {

using Json = nlohmann::json;

/// Calls fn(object, line_number) for every non-blank line. A line that is not a
/// JSON object raises ParseError citing the line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn);

/// Calls fn(fields, line_number) for every non-blank, non-comment TSV line.
void for_each_tsv(const std::filesystem::path& path,
                  const std::function<void(const std::vector<std::string>&, std::size_t)>& fn);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

/// Required string field of a JSONL record.
std::string require_string(const Json& obj, const char* key, std::size_t line);

}  // namespace ehrdr::io
