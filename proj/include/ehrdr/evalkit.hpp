#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ehrdr/corpus.hpp"
#include "ehrdr/encoder.hpp"

namespace ehrdr::eval {

enum class MatchType { string, synonym, abbreviation, hyponym, implication };
enum class QueryType { disease, procedure, drug };
enum class Setting { single, multi };
enum class Axis { match_type, query_type };

inline constexpr std::array kMatchTypes{MatchType::string, MatchType::synonym, MatchType::abbreviation,
                                        MatchType::hyponym, MatchType::implication};
inline constexpr std::array kQueryTypes{QueryType::disease, QueryType::procedure, QueryType::drug};

std::string_view to_string(MatchType t);
std::string_view to_string(QueryType t);
std::string_view to_string(Setting s);
MatchType parse_match_type(std::string_view s);
QueryType parse_query_type(std::string_view s);
Setting parse_setting(std::string_view s);
/// "match" / "match_type" / "query" / "query_type".
Axis parse_axis(std::string_view s);

/// Note id of queries scoped to the whole collection.
inline constexpr std::string_view kAllNotes = "*";

struct Query {
  std::string id;
  std::string note_id;
  std::string text;
  QueryType type = QueryType::disease;

  bool multi_patient() const { return note_id == kAllNotes; }
  bool operator==(const Query&) const = default;
};

using RelevantSet = std::set<std::string, std::less<>>;

class Judgments {
 public:
  Judgments() = default;
  /// Throws on duplicate query ids or qrels for unknown queries.
  Judgments(std::vector<Query> queries, std::map<std::string, std::map<std::string, MatchType>> qrels);

  const std::vector<Query>& queries() const { return queries_; }
  const Query& query(std::string_view id) const;
  /// chunk id -> match type, empty for queries without relevant chunks.
  const std::map<std::string, MatchType>& qrels(std::string_view query_id) const;
  RelevantSet relevant(std::string_view query_id) const;
  RelevantSet relevant(std::string_view query_id, MatchType type) const;

  bool operator==(const Judgments& o) const { return queries_ == o.queries_ && qrels_ == o.qrels_; }

 private:
  std::vector<Query> queries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::map<std::string, std::map<std::string, MatchType>, std::less<>> qrels_;
};

/// queries TSV: qid, note_id, text, query_type.
/// qrels TSV: qid, chunk_id, 1, match_type, query_type.
Judgments load_judgments(const std::filesystem::path& queries_tsv, const std::filesystem::path& qrels_tsv);
void save_judgments(const std::filesystem::path& queries_tsv, const std::filesystem::path& qrels_tsv,
                    const Judgments& judgments);

// Metrics over a ranked list of chunk ids (rank 1 first).

double reciprocal_rank(std::span<const std::string> ranking, const RelevantSet& relevant);
/// Relevant chunks missing from the ranking contribute 0 precision.
double average_precision(std::span<const std::string> ranking, const RelevantSet& relevant);
/// Binary gains, discount 1/log2(i + 1), ideal DCG at the same cutoff.
double ndcg(std::span<const std::string> ranking, const RelevantSet& relevant,
            std::optional<std::size_t> cutoff = std::nullopt);
double recall_at(std::span<const std::string> ranking, const RelevantSet& relevant, std::size_t k = 100);

struct Scored {
  std::string chunk_id;
  double score = 0.0;
  bool operator==(const Scored&) const = default;
};

/// Descending score, ties by chunk id ascending.
void sort_ranking(std::vector<Scored>& ranking);

/// Metric names and values for a setting: single -> mrr, ndcg, map;
/// multi -> mrr, ndcg@10, recall@100.
std::array<std::string_view, 3> metric_names(Setting s);
std::array<double, 3> setting_metrics(Setting s, std::span<const std::string> ranking, const RelevantSet& relevant);

struct QueryResult {
  std::string query_id;
  std::vector<Scored> ranking;
  std::array<double, 3> metrics{};
};

struct RunResult {
  Setting setting = Setting::single;
  std::vector<QueryResult> queries;
  std::array<double, 3> macro{};
  /// Mean of the three macro metrics.
  double average() const { return (macro[0] + macro[1] + macro[2]) / 3.0; }
};

/// Scores candidate chunks for a query; higher is better.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual void prepare(std::span<const corpus::Chunk> chunks, std::size_t jobs) = 0;
  virtual std::vector<double> score(const Query& query, std::span<const std::size_t> candidates) const = 0;
};

/// Cosine between the query and cached chunk embeddings. Chunks without
/// tokens score 0.
class EncoderScorer final : public Scorer {
 public:
  explicit EncoderScorer(const encoder::EncoderParams& params) : params_(&params) {}
  void prepare(std::span<const corpus::Chunk> chunks, std::size_t jobs) override;
  std::vector<double> score(const Query& query, std::span<const std::size_t> candidates) const override;

 private:
  const encoder::EncoderParams* params_;
  std::vector<std::optional<std::vector<double>>> cache_;
};

/// 1 for relevant chunks, 0 otherwise: the metric ceiling.
class OracleScorer final : public Scorer {
 public:
  explicit OracleScorer(const Judgments& judgments) : judgments_(&judgments) {}
  void prepare(std::span<const corpus::Chunk> chunks, std::size_t jobs) override;
  std::vector<double> score(const Query& query, std::span<const std::size_t> candidates) const override;

 private:
  const Judgments* judgments_;
  std::vector<std::string> ids_;
};

/// Independent uniform scores per (seed, query).
class RandomScorer final : public Scorer {
 public:
  explicit RandomScorer(std::uint64_t seed) : seed_(seed) {}
  void prepare(std::span<const corpus::Chunk>, std::size_t) override {}
  std::vector<double> score(const Query& query, std::span<const std::size_t> candidates) const override;

 private:
  std::uint64_t seed_;
};

/// Single: queries scoped to one note, candidates are that note's chunks.
/// Multi: queries scoped to "*", candidates are all chunks. Exhaustive scoring,
/// macro-averaged metrics. `scorer` must already be prepared on `chunks`.
RunResult run_setting(const Scorer& scorer, const Judgments& judgments, std::span<const corpus::Chunk> chunks,
                      Setting setting, std::size_t jobs = 1);

/// Recomputes metrics of stored rankings (e.g. a loaded run file).
RunResult score_rankings(std::map<std::string, std::vector<Scored>> rankings, const Judgments& judgments,
                         Setting setting);

/// run TSV: qid, chunk_id, rank, score.
void save_run(const std::filesystem::path& path, const RunResult& run);
std::map<std::string, std::vector<Scored>> load_run(const std::filesystem::path& path);

struct DissectRow {
  std::string category;
  std::size_t queries = 0;
  std::array<double, 3> metrics{};
  double average = 0.0;
};

struct Dissection {
  Setting setting = Setting::single;
  Axis axis = Axis::match_type;
  std::vector<DissectRow> rows;  // categories with at least one query
};

/// Match axis: per type t, queries with a type-t relevant chunk are re-scored
/// after removing chunks relevant with any other type. Query axis: queries
/// are partitioned by query type, rankings unchanged.
Dissection dissect(const RunResult& run, const Judgments& judgments, Axis axis);

std::string format_report(const RunResult& run, std::string_view title);
std::string format_dissection(const Dissection& d, std::string_view title);
nlohmann::json to_json(const RunResult& run);
nlohmann::json to_json(const Dissection& d);

}  // namespace ehrdr::eval
