#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "ehrdr/generator_client.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "ehrdr/io.hpp"
#include "ehrdr/rng.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::gen {

namespace {

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return (v && *v) ? std::string(v) : fallback;
}

struct SemaphoreGuard {
  std::counting_semaphore<1024>& sem;
  explicit SemaphoreGuard(std::counting_semaphore<1024>& s) : sem(s) { sem.acquire(); }
  ~SemaphoreGuard() { sem.release(); }
};

std::string upper(std::string s) {
  for (char& c : s)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return s;
}

}  // namespace

ClientConfig ClientConfig::from_env(ClientConfig base) {
  base.base_url = env_or("GEN_BASE_URL", base.base_url);
  base.model = env_or("GEN_MODEL", base.model);
  base.api_key = env_or("GEN_API_KEY", base.api_key);
  try {
    base.timeout_s = std::stod(env_or("GEN_TIMEOUT_S", std::to_string(base.timeout_s)));
    base.max_retries = std::stoi(env_or("GEN_MAX_RETRIES", std::to_string(base.max_retries)));
  } catch (const std::exception&) {
    throw ConfigError("GEN_TIMEOUT_S / GEN_MAX_RETRIES must be numeric");
  }
  return base;
}

ClientConfig ClientConfig::from_env() { return from_env(ClientConfig{}); }

std::string chat_request_body(const std::string& model, const std::string& prompt) {
  io::Json body{{"model", model},
                {"messages", io::Json::array({io::Json{{"role", "user"}, {"content", prompt}}})},
                {"temperature", 0}};
  return body.dump();
}

std::string chat_response_content(const std::string& body) {
  try {
    const auto j = io::Json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const io::Json::exception& e) {
    throw Error(std::string("malformed chat-completions response: ") + e.what());
  }
}

HttpGeneratorClient::HttpGeneratorClient(ClientConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 1024)) {
  const auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("GEN_BASE_URL needs a scheme: " + config_.base_url);
  const auto path_start = config_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string HttpGeneratorClient::complete(const GenerationRequest& request) {
  SemaphoreGuard guard(in_flight_);
  httplib::Client cli(scheme_host_port_);
  const auto timeout = std::chrono::milliseconds(static_cast<long>(config_.timeout_s * 1000));
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  const std::string body = chat_request_body(config_.model, request.prompt);
  const std::string path = path_prefix_ + "/chat/completions";

  std::string last_error;
  const int attempts = std::max(0, config_.max_retries) + 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
    auto res = cli.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) {
      try {
        return chat_response_content(res->body);
      } catch (const Error& e) {
        throw GenerationError(request.chunk_id, e.what());
      }
    }
    last_error = "HTTP " + std::to_string(res->status);
    if (res->status != 429 && res->status < 500) break;
  }
  throw GenerationError(request.chunk_id, last_error + " after " + std::to_string(attempts) + " attempt(s)");
}

std::string entity_type_of(std::string_view semantic_type) {
  if (semantic_type == "Disease, Syndrome or Pathologic Function" || semantic_type == "Sign, Symptom, or Finding")
    return "diseases";
  if (semantic_type == "Laboratory Procedure" || semantic_type == "Diagnostic Procedure" ||
      semantic_type == "Therapeutic or Preventive Procedure")
    return "clinical procedures";
  if (semantic_type == "Chemical or Drug") return "drugs";
  return {};
}

MockGeneratorClient::MockGeneratorClient(const kg::KnowledgeGraph& kg,
                                         std::map<std::string, std::string> abbreviations, MockOptions options)
    : kg_(kg),
      abbreviations_(std::move(abbreviations)),
      options_(options),
      automaton_(matcher::build_automaton(kg, kg::SemanticTypeFilter::defaults())) {
  for (const auto& c : kg_.concepts()) {
    const auto et = entity_type_of(c.semantic_type);
    if (!et.empty()) preferred_by_type_[et].push_back(c.preferred_term());
  }
}

std::string MockGeneratorClient::complete(const GenerationRequest& request) {
  return request.task == Task::abbreviation ? abbreviation_response(request) : entity_response(request);
}

std::string MockGeneratorClient::abbreviation_response(const GenerationRequest& request) const {
  const auto& note = request.note;
  std::vector<std::string> lines;
  for (const auto& [abbr, full] : abbreviations_)
    if (text::contains_word(note, abbr)) lines.push_back(upper(abbr) + " = " + full);

  Rng rng(mix_seed(options_.seed, fnv1a64(note) ^ 0xabbull));
  if (rng.uniform() < options_.noise_rate) {
    const auto words = text::split_ws(note);
    std::string word = "mi";
    if (!words.empty()) {
      const auto& w = words[rng.below(words.size())];
      if (w.size() >= 2 && std::all_of(w.begin(), w.end(), text::is_alnum)) word = w;
    }
    std::string noise;
    switch (rng.below(5)) {
      case 0: noise = "Q = every"; break;
      case 1: noise = word + " = " + word; break;
      case 2: noise = upper(word) + " = " + word + " of unspecified origin"; break;
      case 3: {
        const auto& pool = preferred_by_type_.begin()->second;
        noise = "ZQX = " + pool[rng.below(pool.size())];
        break;
      }
      default: noise = "see discharge instructions"; break;
    }
    lines.insert(lines.begin() + static_cast<std::ptrdiff_t>(rng.below(lines.size() + 1)), noise);
  }
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) out += "- " + lines[i] + "\n";
  return out;
}

std::string MockGeneratorClient::entity_response(const GenerationRequest& request) const {
  const auto& note = request.note;
  const auto& type = request.entity_type;
  std::vector<std::string> items;
  auto push = [&](const std::string& t) {
    if (std::find(items.begin(), items.end(), t) == items.end()) items.push_back(t);
  };

  std::vector<std::string> seen_concepts;
  for (const auto& m : automaton_.find_mentions(note)) {
    for (const auto& id : m.concept_ids) {
      seen_concepts.push_back(id);
      if (entity_type_of(kg_.get(id).semantic_type) == type) push(m.surface);
    }
  }
  for (const auto& [abbr, full] : abbreviations_) {
    if (!text::contains_word(note, abbr)) continue;
    for (const auto& id : kg_.lookup_term_any(full)) {
      seen_concepts.push_back(id);
      if (entity_type_of(kg_.get(id).semantic_type) == type) push(full);
    }
  }
  std::sort(seen_concepts.begin(), seen_concepts.end());
  seen_concepts.erase(std::unique(seen_concepts.begin(), seen_concepts.end()), seen_concepts.end());
  // Implied entities: treatments given and consequences caused by what the note mentions.
  for (const auto& id : seen_concepts) {
    for (const auto& r : kg_.relations_from(id)) {
      if (r.kind != kg::RelationKind::may_treat && r.kind != kg::RelationKind::may_cause) continue;
      const auto& tail = kg_.get(r.tail);
      if (entity_type_of(tail.semantic_type) == type) push(tail.preferred_term());
    }
  }

  Rng rng(mix_seed(options_.seed, fnv1a64(note) ^ fnv1a64(type)));
  if (const auto it = preferred_by_type_.find(type);
      it != preferred_by_type_.end() && rng.uniform() < options_.noise_rate)
    push(it->second[rng.below(it->second.size())]);

  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += std::to_string(i + 1) + ". " + items[i] + "\n";
  return out;
}

PromptTemplates PromptTemplates::defaults() {
  return PromptTemplates{
      "You are a clinical documentation expert. Read the clinical note below and list every "
      "abbreviation that appears in it together with its full name. Write one abbreviation per "
      "line in the form ABBREVIATION = full name. Do not list anything that is not an "
      "abbreviation used in the note.\n\nNote:\n{note}\n",
      "You are a clinical documentation expert. Read the clinical note below and list the "
      "{entity_type} that are explicitly mentioned in the note or can be implicitly inferred from "
      "it. Write one item per line and nothing else.\n\nNote:\n{note}\n",
  };
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  return PromptTemplates{io::read_file(dir / "abbreviation.txt"), io::read_file(dir / "synthetic.txt")};
}

std::string render_prompt(std::string_view tmpl, std::string_view note, std::string_view entity_type) {
  std::string out;
  out.reserve(tmpl.size() + note.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.substr(i, 6) == "{note}") {
      out += note;
      i += 6;
    } else if (tmpl.substr(i, 13) == "{entity_type}") {
      out += entity_type;
      i += 13;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

std::string strip_list_marker(std::string_view line) {
  auto s = text::trim(line);
  if (s.starts_with("\xE2\x80\xA2")) {
    s.remove_prefix(3);
  } else if (!s.empty() && (s[0] == '-' || s[0] == '*' || s[0] == '+') &&
             (s.size() == 1 || text::is_space(s[1]))) {
    s.remove_prefix(1);
  } else {
    std::size_t i = s.starts_with('(') ? 1 : 0;
    const std::size_t digits_start = i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    if (i > digits_start && i < s.size() && (s[i] == '.' || s[i] == ')') &&
        (i + 1 == s.size() || text::is_space(s[i + 1])))
      s.remove_prefix(i + 1);
  }
  return std::string(text::trim(s));
}

ParsedAbbreviations parse_abbreviation_response(std::string_view response) {
  ParsedAbbreviations out;
  for (const auto& raw : text::split(response, '\n')) {
    if (text::trim(raw).empty()) continue;
    const auto line = strip_list_marker(raw);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      ++out.skipped;
      continue;
    }
    auto abbr = text::to_lower(text::trim(std::string_view(line).substr(0, eq)));
    auto full = text::to_lower(text::trim(std::string_view(line).substr(eq + 1)));
    if (abbr.empty() || full.empty()) {
      ++out.skipped;
      continue;
    }
    out.pairs.emplace_back(std::move(abbr), std::move(full));
  }
  return out;
}

std::vector<std::string> parse_entity_response(std::string_view response) {
  std::vector<std::string> out;
  for (const auto& raw : text::split(response, '\n')) {
    auto item = text::to_lower(strip_list_marker(raw));
    while (!item.empty() && (item.back() == '.' || item.back() == ',' || item.back() == ';')) item.pop_back();
    item = std::string(text::trim(item));
    if (!item.empty()) out.push_back(std::move(item));
  }
  return out;
}

std::map<std::string, std::string> load_abbreviation_table(const std::filesystem::path& path) {
  std::map<std::string, std::string> table;
  io::for_each_tsv(path, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 2) throw ParseError("abbreviation row needs 2 tab-separated fields", line);
    table[text::to_lower(text::trim(f[0]))] = text::to_lower(text::trim(f[1]));
  });
  return table;
}

}  // namespace ehrdr::gen
