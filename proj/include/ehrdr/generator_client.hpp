#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <functional>
#include <semaphore>
#include <string>
#include <vector>

#include "ehrdr/error.hpp"
#include "ehrdr/kg.hpp"
#include "ehrdr/matcher.hpp"

namespace ehrdr::gen {

enum class Task { abbreviation, entities };

/// The three entity types requested during synthetic generation, in call order.
inline const std::vector<std::string> kEntityTypes{"diseases", "clinical procedures", "drugs"};

struct GenerationRequest {
  Task task = Task::entities;
  std::string chunk_id;
  std::string note;         // chunk text
  std::string entity_type;  // empty for abbreviation requests
  std::string prompt;       // rendered template
};

/// Transport or protocol failure, after retries, for one chunk.
class GenerationError : public Error {
 public:
  GenerationError(std::string chunk_id, const std::string& what)
      : Error("generation failed for chunk " + chunk_id + ": " + what), chunk_id_(std::move(chunk_id)) {}
  const std::string& chunk_id() const noexcept { return chunk_id_; }

 private:
  std::string chunk_id_;
};

/// Something that turns a prompt into raw response text. Implementations must
/// be safe to call from several threads at once.
class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual std::string complete(const GenerationRequest& request) = 0;
};

struct ClientConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model = "Llama-3.1-8B-Instruct";
  std::string api_key;
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_in_flight = 4;
  int backoff_ms = 200;

  /// Overrides from GEN_BASE_URL, GEN_MODEL, GEN_API_KEY, GEN_TIMEOUT_S,
  /// GEN_MAX_RETRIES when set.
  static ClientConfig from_env(ClientConfig base);
  static ClientConfig from_env();
};

/// Chat-completions client: POST {base_url}/chat/completions with
/// {model, messages:[{role:user, content:prompt}], temperature:0}.
class HttpGeneratorClient final : public GeneratorClient {
 public:
  explicit HttpGeneratorClient(ClientConfig config);
  std::string complete(const GenerationRequest& request) override;

  const ClientConfig& config() const { return config_; }

 private:
  ClientConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::counting_semaphore<1024> in_flight_;
};

/// Builds the request body sent by HttpGeneratorClient.
std::string chat_request_body(const std::string& model, const std::string& prompt);
/// Extracts choices[0].message.content; throws Error on malformed bodies.
std::string chat_response_content(const std::string& body);

struct MockOptions {
  std::uint64_t seed = 0;
  /// Probability that a response carries one noise line.
  double noise_rate = 0.15;
};

/// Offline simulator driven by the knowledge graph. Abbreviation requests list
/// table abbreviations found in the note; entity requests list concepts
/// mentioned in the note plus one-hop may_treat / may_cause neighbors, grouped
/// by entity type. Seeded noise lines mimic an imperfect model.
class MockGeneratorClient final : public GeneratorClient {
 public:
  MockGeneratorClient(const kg::KnowledgeGraph& kg, std::map<std::string, std::string> abbreviations,
                      MockOptions options = {});
  std::string complete(const GenerationRequest& request) override;

 private:
  std::string abbreviation_response(const GenerationRequest& request) const;
  std::string entity_response(const GenerationRequest& request) const;

  const kg::KnowledgeGraph& kg_;
  std::map<std::string, std::string> abbreviations_;
  MockOptions options_;
  matcher::TermAutomaton automaton_;
  std::map<std::string, std::vector<std::string>> preferred_by_type_;
};

/// Scripted client for tests and notebooks.
class FunctionClient final : public GeneratorClient {
 public:
  explicit FunctionClient(std::function<std::string(const GenerationRequest&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const GenerationRequest& request) override { return fn_(request); }

 private:
  std::function<std::string(const GenerationRequest&)> fn_;
};

/// Maps a semantic type to "diseases", "clinical procedures" or "drugs";
/// empty for types outside the six clinical ones.
std::string entity_type_of(std::string_view semantic_type);

struct PromptTemplates {
  std::string abbreviation;  // uses {note}
  std::string synthetic;     // uses {note} and {entity_type}

  static PromptTemplates defaults();
  /// Reads abbreviation.txt and synthetic.txt from dir.
  static PromptTemplates load(const std::filesystem::path& dir);
};

/// Replaces every {note} and {entity_type} placeholder.
std::string render_prompt(std::string_view tmpl, std::string_view note, std::string_view entity_type = {});

/// Strips leading bullets ("-", "*", "+", U+2022) and numbering ("1.", "2)", "(3)").
std::string strip_list_marker(std::string_view line);

struct ParsedAbbreviations {
  std::vector<std::pair<std::string, std::string>> pairs;  // lowercase (abbreviation, full name)
  std::size_t skipped = 0;
};

/// One "ABBR = full name" pair per line; blank lines ignored, other lines skipped and counted.
ParsedAbbreviations parse_abbreviation_response(std::string_view response);

/// One entity per non-blank line, lowercased, trailing ".,;" removed.
std::vector<std::string> parse_entity_response(std::string_view response);

/// Loads "abbreviation \t full name" rows.
std::map<std::string, std::string> load_abbreviation_table(const std::filesystem::path& path);

}  // namespace ehrdr::gen
