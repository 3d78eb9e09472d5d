#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ehrdr/corpus.hpp"
#include "ehrdr/generator_client.hpp"
#include "ehrdr/kg.hpp"
#include "ehrdr/matcher.hpp"
#include "ehrdr/rng.hpp"

namespace ehrdr::pairgen {

enum class Source {
  string,
  abbreviation,
  kg_synonym,
  kg_hypernym,
  kg_related,
  syn_disease,
  syn_procedure,
  syn_drug,
};

inline constexpr std::array kStage1Sources{Source::string, Source::abbreviation, Source::kg_synonym,
                                           Source::kg_hypernym, Source::kg_related};
inline constexpr std::array kStage2Sources{Source::syn_disease, Source::syn_procedure, Source::syn_drug};

std::string_view to_string(Source s);
std::optional<Source> parse_source(std::string_view s);

/// Entities longer than this many whitespace tokens are dropped.
inline constexpr std::size_t kMaxEntityTokens = 16;
/// Per-class sampling budget for KG expansion.
inline constexpr std::size_t kPerClassLimit = 2;
/// Upper bound on KG-sourced terms contributed by one seed.
inline constexpr std::size_t kMaxKgAdditionsPerSeed = 10;

struct PositiveSample {
  std::string term;
  Source source = Source::string;
  std::optional<std::string> seed_concept;

  bool operator==(const PositiveSample&) const = default;
};

struct PositiveSet {
  std::string chunk_id;
  std::vector<PositiveSample> samples;

  bool operator==(const PositiveSet&) const = default;
};

struct AbbreviationPair {
  std::string abbreviation;
  std::string full_name;

  auto operator<=>(const AbbreviationPair&) const = default;
};

struct RawAbbreviations {
  std::vector<AbbreviationPair> pairs;
  std::size_t skipped = 0;
};

/// Asks the client to expand abbreviations in one chunk and parses the reply.
RawAbbreviations reduce_abbreviations(gen::GeneratorClient& client, const gen::PromptTemplates& prompts,
                                      const corpus::Chunk& chunk);

/// Which cleaning rule rejects the pair: 1 abbreviation absent from the
/// chunk, 2 full name equals abbreviation, 3 full name not an admissible KG
/// term, 4 single-character abbreviation. 0 when the pair is clean.
int abbreviation_rule_violation(const AbbreviationPair& pair, std::string_view chunk_text,
                                const kg::KnowledgeGraph& kg);

/// Drops pairs violating any rule, plus duplicates; keeps input order.
std::vector<AbbreviationPair> clean_abbreviations(std::span<const AbbreviationPair> raw,
                                                  std::string_view chunk_text, const kg::KnowledgeGraph& kg);

struct Seed {
  std::string concept_id;
  std::string surface;
  Source origin = Source::string;  // string or abbreviation

  auto operator<=>(const Seed&) const = default;
};

/// What one seed contributed, for auditing the expansion caps.
struct SeedAudit {
  Seed seed;
  std::size_t synonyms = 0;
  std::size_t hypernyms = 0;
  std::size_t hypernym_companions = 0;
  std::size_t related = 0;
  std::size_t related_companions = 0;
  std::vector<std::string> kg_terms;

  std::size_t kg_additions() const {
    return synonyms + hypernyms + hypernym_companions + related + related_companions;
  }
};

struct Stage1Expansion {
  std::vector<PositiveSample> samples;
  std::vector<SeedAudit> audits;
};

/// For every seed: its surface, up to two synonyms, two hypernym concepts and
/// two related concepts (uniform, without replacement), and one random
/// synonym of each sampled hypernym/related concept. Output is deduplicated
/// on (term, source). Throws Error on unknown seed concepts.
Stage1Expansion expand_stage1(const kg::KnowledgeGraph& kg, std::span<const Seed> seeds, Rng& rng);

/// Three client calls (diseases, clinical procedures, drugs); items are
/// lowercased, length-filtered and deduplicated across types, first wins.
std::vector<PositiveSample> generate_stage2(gen::GeneratorClient& client, const gen::PromptTemplates& prompts,
                                            const corpus::Chunk& chunk);

/// Per-chunk abbreviation reduction result.
struct ChunkAbbreviations {
  std::string chunk_id;
  std::vector<AbbreviationPair> raw;
  std::vector<AbbreviationPair> cleaned;
  std::size_t skipped = 0;
};

std::vector<matcher::ChunkMentions> match_chunks(const matcher::TermAutomaton& automaton,
                                                 std::span<const corpus::Chunk> chunks, std::size_t jobs = 1);

std::vector<ChunkAbbreviations> reduce_chunks(gen::GeneratorClient& client, const gen::PromptTemplates& prompts,
                                              std::span<const corpus::Chunk> chunks,
                                              const kg::KnowledgeGraph& kg, std::size_t jobs = 1);

void save_abbreviations(const std::filesystem::path& path, std::span<const ChunkAbbreviations> rows);
std::vector<ChunkAbbreviations> load_abbreviations(const std::filesystem::path& path);

struct Stage1Result {
  std::vector<PositiveSet> sets;
  std::vector<std::vector<SeedAudit>> audits;  // parallel to sets
};

/// Stage-I positives for every chunk. `abbreviations` must be parallel to
/// `chunks`. The per-chunk rng stream depends only on (seed, chunk id).
Stage1Result build_stage1(const kg::KnowledgeGraph& kg, const matcher::TermAutomaton& automaton,
                          std::span<const corpus::Chunk> chunks, std::span<const ChunkAbbreviations> abbreviations,
                          std::uint64_t seed);

std::vector<PositiveSet> build_stage2(gen::GeneratorClient& client, const gen::PromptTemplates& prompts,
                                      std::span<const corpus::Chunk> chunks, std::size_t jobs = 1);

/// One row of the per-source statistics table.
struct StatsRow {
  std::string label;
  double avg = 0, q1 = 0, q3 = 0;
  std::size_t max = 0, sum = 0;
};

struct DatasetStats {
  int stage = 1;
  std::size_t chunks = 0;
  std::vector<StatsRow> rows;  // one per source of the stage, then "Overall"

  std::string to_table() const;
  std::string to_json() const;
};

/// Quantile with linear interpolation between closest ranks.
double quantile(std::vector<double> values, double q);

DatasetStats compute_stats(std::span<const PositiveSet> sets, int stage);

/// Pairs JSONL: one {chunk_id, term, source[, seed_concept]} record per sample,
/// and a bare {chunk_id} record for chunks without samples.
void save_pairs(const std::filesystem::path& path, std::span<const PositiveSet> sets);
std::vector<PositiveSet> load_pairs(const std::filesystem::path& path);

/// Stage 1 when only stage-1 sources are present, stage 2 when any synthetic source is.
int infer_stage(std::span<const PositiveSet> sets);

/// Generates the whole stage dataset, writes it to out_path, returns its statistics.
DatasetStats build_dataset(int stage, std::span<const corpus::Chunk> chunks, const kg::KnowledgeGraph& kg,
                           gen::GeneratorClient& client, const gen::PromptTemplates& prompts, std::uint64_t seed,
                           const std::filesystem::path& out_path, std::size_t jobs = 1);

}  // namespace ehrdr::pairgen
