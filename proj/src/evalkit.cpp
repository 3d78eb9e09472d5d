#include "ehrdr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ehrdr/error.hpp"
#include "ehrdr/io.hpp"
#include "ehrdr/parallel.hpp"
#include "ehrdr/rng.hpp"

namespace ehrdr::eval {

std::string_view to_string(MatchType t) {
  switch (t) {
    case MatchType::string: return "string";
    case MatchType::synonym: return "synonym";
    case MatchType::abbreviation: return "abbreviation";
    case MatchType::hyponym: return "hyponym";
    case MatchType::implication: return "implication";
  }
  return "?";
}

std::string_view to_string(QueryType t) {
  switch (t) {
    case QueryType::disease: return "disease";
    case QueryType::procedure: return "procedure";
    case QueryType::drug: return "drug";
  }
  return "?";
}

std::string_view to_string(Setting s) { return s == Setting::single ? "single" : "multi"; }

MatchType parse_match_type(std::string_view s) {
  for (auto t : kMatchTypes)
    if (to_string(t) == s) return t;
  throw ConfigError("unknown match type \"" + std::string(s) + "\"");
}

QueryType parse_query_type(std::string_view s) {
  for (auto t : kQueryTypes)
    if (to_string(t) == s) return t;
  throw ConfigError("unknown query type \"" + std::string(s) + "\"");
}

Setting parse_setting(std::string_view s) {
  if (s == "single") return Setting::single;
  if (s == "multi") return Setting::multi;
  throw ConfigError("unknown setting \"" + std::string(s) + "\" (expected single or multi)");
}

Axis parse_axis(std::string_view s) {
  if (s == "match" || s == "match_type") return Axis::match_type;
  if (s == "query" || s == "query_type") return Axis::query_type;
  throw ConfigError("unknown axis \"" + std::string(s) + "\" (expected match or query)");
}

Judgments::Judgments(std::vector<Query> queries, std::map<std::string, std::map<std::string, MatchType>> qrels)
    : queries_(std::move(queries)) {
  for (std::size_t i = 0; i < queries_.size(); ++i)
    if (!index_.emplace(queries_[i].id, i).second) throw Error("duplicate query id \"" + queries_[i].id + "\"");
  for (auto& [qid, rels] : qrels) {
    if (!index_.contains(qid)) throw Error("qrels reference unknown query \"" + qid + "\"");
    qrels_.emplace(qid, std::move(rels));
  }
}

const Query& Judgments::query(std::string_view id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw Error("unknown query \"" + std::string(id) + "\"");
  return queries_[it->second];
}

const std::map<std::string, MatchType>& Judgments::qrels(std::string_view query_id) const {
  static const std::map<std::string, MatchType> empty;
  const auto it = qrels_.find(query_id);
  return it == qrels_.end() ? empty : it->second;
}

RelevantSet Judgments::relevant(std::string_view query_id) const {
  RelevantSet out;
  for (const auto& [chunk, type] : qrels(query_id)) out.insert(chunk);
  return out;
}

RelevantSet Judgments::relevant(std::string_view query_id, MatchType t) const {
  RelevantSet out;
  for (const auto& [chunk, type] : qrels(query_id))
    if (type == t) out.insert(chunk);
  return out;
}

Judgments load_judgments(const std::filesystem::path& queries_tsv, const std::filesystem::path& qrels_tsv) {
  std::vector<Query> queries;
  io::for_each_tsv(queries_tsv, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 4) throw ParseError(queries_tsv.string() + ": expected 4 columns", line);
    try {
      queries.push_back(Query{f[0], f[1], f[2], parse_query_type(f[3])});
    } catch (const ConfigError& e) {
      throw ParseError(queries_tsv.string() + ": " + e.what(), line);
    }
  });
  std::map<std::string, QueryType> types;
  for (const auto& q : queries) types.emplace(q.id, q.type);

  std::map<std::string, std::map<std::string, MatchType>> qrels;
  io::for_each_tsv(qrels_tsv, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 5) throw ParseError(qrels_tsv.string() + ": expected 5 columns", line);
    if (f[2] != "1") throw ParseError(qrels_tsv.string() + ": relevance must be 1", line);
    const auto t = types.find(f[0]);
    if (t == types.end()) throw ParseError(qrels_tsv.string() + ": unknown query \"" + f[0] + "\"", line);
    try {
      if (parse_query_type(f[4]) != t->second)
        throw ParseError(qrels_tsv.string() + ": query type disagrees with the queries file", line);
      if (!qrels[f[0]].emplace(f[1], parse_match_type(f[3])).second)
        throw ParseError(qrels_tsv.string() + ": duplicate judgment for \"" + f[0] + "\", \"" + f[1] + "\"", line);
    } catch (const ConfigError& e) {
      throw ParseError(qrels_tsv.string() + ": " + e.what(), line);
    }
  });
  return Judgments(std::move(queries), std::move(qrels));
}

void save_judgments(const std::filesystem::path& queries_tsv, const std::filesystem::path& qrels_tsv,
                    const Judgments& judgments) {
  std::string q, r;
  for (const auto& query : judgments.queries()) {
    q += query.id + '\t' + query.note_id + '\t' + query.text + '\t' + std::string(to_string(query.type)) + '\n';
    for (const auto& [chunk, type] : judgments.qrels(query.id))
      r += query.id + '\t' + chunk + "\t1\t" + std::string(to_string(type)) + '\t' +
           std::string(to_string(query.type)) + '\n';
  }
  io::write_file(queries_tsv, q);
  io::write_file(qrels_tsv, r);
}

double reciprocal_rank(std::span<const std::string> ranking, const RelevantSet& relevant) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (relevant.contains(ranking[i])) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

double average_precision(std::span<const std::string> ranking, const RelevantSet& relevant) {
  if (relevant.empty()) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (!relevant.contains(ranking[i])) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(relevant.size());
}

double ndcg(std::span<const std::string> ranking, const RelevantSet& relevant, std::optional<std::size_t> cutoff) {
  const std::size_t depth = std::min(ranking.size(), cutoff.value_or(ranking.size()));
  double dcg = 0.0;
  for (std::size_t i = 0; i < depth; ++i)
    if (relevant.contains(ranking[i])) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
  const std::size_t ideal_hits = std::min(relevant.size(), cutoff.value_or(relevant.size()));
  double idcg = 0.0;
  for (std::size_t i = 0; i < ideal_hits; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
  return idcg == 0.0 ? 0.0 : dcg / idcg;
}

double recall_at(std::span<const std::string> ranking, const RelevantSet& relevant, std::size_t k) {
  if (relevant.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i)
    if (relevant.contains(ranking[i])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

void sort_ranking(std::vector<Scored>& ranking) {
  std::sort(ranking.begin(), ranking.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.chunk_id < b.chunk_id;
  });
}

std::array<std::string_view, 3> metric_names(Setting s) {
  if (s == Setting::single) return {"mrr", "ndcg", "map"};
  return {"mrr", "ndcg@10", "recall@100"};
}

std::array<double, 3> setting_metrics(Setting s, std::span<const std::string> ranking, const RelevantSet& relevant) {
  if (s == Setting::single)
    return {reciprocal_rank(ranking, relevant), ndcg(ranking, relevant), average_precision(ranking, relevant)};
  return {reciprocal_rank(ranking, relevant), ndcg(ranking, relevant, 10), recall_at(ranking, relevant, 100)};
}

namespace {

std::vector<std::string> ids_of(const std::vector<Scored>& ranking) {
  std::vector<std::string> ids;
  ids.reserve(ranking.size());
  for (const auto& s : ranking) ids.push_back(s.chunk_id);
  return ids;
}

std::array<double, 3> mean_of(const std::vector<std::array<double, 3>>& rows) {
  std::array<double, 3> out{};
  if (rows.empty()) return out;
  for (const auto& r : rows)
    for (std::size_t m = 0; m < 3; ++m) out[m] += r[m];
  for (auto& v : out) v /= static_cast<double>(rows.size());
  return out;
}

bool in_setting(const Query& q, Setting s) { return q.multi_patient() == (s == Setting::multi); }

void finalize(RunResult& run) {
  std::vector<std::array<double, 3>> rows;
  for (const auto& q : run.queries) rows.push_back(q.metrics);
  run.macro = mean_of(rows);
}

}  // namespace

void EncoderScorer::prepare(std::span<const corpus::Chunk> chunks, std::size_t jobs) {
  cache_.assign(chunks.size(), std::nullopt);
  parallel_for(chunks.size(), jobs, [&](std::size_t i) {
    const auto idx = params_->vocab().tokenize(chunks[i].text, encoder::kChunkTokenBudget);
    if (idx.empty()) return;
    try {
      cache_[i] = encoder::encode(*params_, idx).embedding;
    } catch (const Error&) {
      // zero mean: leave uncached, scores 0
    }
  });
}

std::vector<double> EncoderScorer::score(const Query& query, std::span<const std::size_t> candidates) const {
  const auto q = encoder::encode_text(*params_, query.text, encoder::kEntityTokenBudget);
  std::vector<double> out;
  out.reserve(candidates.size());
  for (std::size_t c : candidates) out.push_back(cache_.at(c) ? encoder::similarity(q.embedding, *cache_[c]) : 0.0);
  return out;
}

void OracleScorer::prepare(std::span<const corpus::Chunk> chunks, std::size_t) {
  ids_.clear();
  for (const auto& c : chunks) ids_.push_back(c.id());
}

std::vector<double> OracleScorer::score(const Query& query, std::span<const std::size_t> candidates) const {
  const auto& rels = judgments_->qrels(query.id);
  std::vector<double> out;
  for (std::size_t c : candidates) out.push_back(rels.contains(ids_.at(c)) ? 1.0 : 0.0);
  return out;
}

std::vector<double> RandomScorer::score(const Query& query, std::span<const std::size_t> candidates) const {
  Rng rng(mix_seed(seed_, fnv1a64(query.id)));
  std::vector<double> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) out.push_back(rng.uniform());
  return out;
}

RunResult run_setting(const Scorer& scorer, const Judgments& judgments, std::span<const corpus::Chunk> chunks,
                      Setting setting, std::size_t jobs) {
  std::map<std::string, std::vector<std::size_t>, std::less<>> by_note;
  std::vector<std::size_t> all(chunks.size());
  std::vector<std::string> ids(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    by_note[chunks[i].note_id].push_back(i);
    all[i] = i;
    ids[i] = chunks[i].id();
  }

  std::vector<const Query*> queries;
  for (const auto& q : judgments.queries())
    if (in_setting(q, setting)) queries.push_back(&q);

  RunResult run;
  run.setting = setting;
  run.queries.resize(queries.size());
  parallel_for(queries.size(), jobs, [&](std::size_t i) {
    const Query& q = *queries[i];
    const std::vector<std::size_t>* candidates = &all;
    if (setting == Setting::single) {
      const auto it = by_note.find(q.note_id);
      if (it == by_note.end()) throw Error("query \"" + q.id + "\" targets note \"" + q.note_id + "\" with no chunks");
      candidates = &it->second;
    }
    const auto scores = scorer.score(q, *candidates);
    auto& result = run.queries[i];
    result.query_id = q.id;
    for (std::size_t c = 0; c < candidates->size(); ++c) {
      if (!std::isfinite(scores[c])) throw Error("non-finite score for query \"" + q.id + "\"");
      result.ranking.push_back(Scored{ids[(*candidates)[c]], scores[c]});
    }
    sort_ranking(result.ranking);
    result.metrics = setting_metrics(setting, ids_of(result.ranking), judgments.relevant(q.id));
  });
  finalize(run);
  return run;
}

RunResult score_rankings(std::map<std::string, std::vector<Scored>> rankings, const Judgments& judgments,
                         Setting setting) {
  RunResult run;
  run.setting = setting;
  for (const auto& q : judgments.queries()) {
    if (!in_setting(q, setting)) continue;
    QueryResult r;
    r.query_id = q.id;
    if (auto it = rankings.find(q.id); it != rankings.end()) r.ranking = std::move(it->second);
    r.metrics = setting_metrics(setting, ids_of(r.ranking), judgments.relevant(q.id));
    run.queries.push_back(std::move(r));
  }
  finalize(run);
  return run;
}

void save_run(const std::filesystem::path& path, const RunResult& run) {
  std::string out;
  char buf[64];
  for (const auto& q : run.queries) {
    for (std::size_t i = 0; i < q.ranking.size(); ++i) {
      std::snprintf(buf, sizeof buf, "\t%zu\t%.17g\n", i + 1, q.ranking[i].score);
      out += q.query_id + '\t' + q.ranking[i].chunk_id + buf;
    }
  }
  io::write_file(path, out);
}

std::map<std::string, std::vector<Scored>> load_run(const std::filesystem::path& path) {
  std::map<std::string, std::vector<Scored>> out;
  io::for_each_tsv(path, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 4) throw ParseError(path.string() + ": expected 4 columns", line);
    double score = 0.0;
    try {
      score = std::stod(f[3]);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": bad score \"" + f[3] + "\"", line);
    }
    out[f[0]].push_back(Scored{f[1], score});
  });
  for (auto& [qid, ranking] : out) sort_ranking(ranking);
  return out;
}

Dissection dissect(const RunResult& run, const Judgments& judgments, Axis axis) {
  Dissection d;
  d.setting = run.setting;
  d.axis = axis;
  if (axis == Axis::query_type) {
    for (auto t : kQueryTypes) {
      std::vector<std::array<double, 3>> rows;
      for (const auto& q : run.queries)
        if (judgments.query(q.query_id).type == t) rows.push_back(q.metrics);
      if (rows.empty()) continue;
      DissectRow row{std::string(to_string(t)), rows.size(), mean_of(rows), 0.0};
      row.average = (row.metrics[0] + row.metrics[1] + row.metrics[2]) / 3.0;
      d.rows.push_back(row);
    }
    return d;
  }
  for (auto t : kMatchTypes) {
    std::vector<std::array<double, 3>> rows;
    for (const auto& q : run.queries) {
      const auto target = judgments.relevant(q.query_id, t);
      if (target.empty()) continue;
      const auto& rels = judgments.qrels(q.query_id);
      std::vector<std::string> kept;
      for (const auto& s : q.ranking) {
        const auto it = rels.find(s.chunk_id);
        if (it != rels.end() && it->second != t) continue;
        kept.push_back(s.chunk_id);
      }
      rows.push_back(setting_metrics(run.setting, kept, target));
    }
    if (rows.empty()) continue;
    DissectRow row{std::string(to_string(t)), rows.size(), mean_of(rows), 0.0};
    row.average = (row.metrics[0] + row.metrics[1] + row.metrics[2]) / 3.0;
    d.rows.push_back(row);
  }
  return d;
}

namespace {

std::string header_line(Setting s, std::string_view first, std::size_t width) {
  char buf[160];
  const auto names = metric_names(s);
  std::snprintf(buf, sizeof buf, "%-*.*s %8s %10s %10s %10s %10s\n", static_cast<int>(width),
                static_cast<int>(first.size()), first.data(), "queries", std::string(names[0]).c_str(),
                std::string(names[1]).c_str(), std::string(names[2]).c_str(), "avg");
  return buf;
}

std::string metric_line(std::string_view label, std::size_t n, const std::array<double, 3>& m, std::size_t width) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*.*s %8zu %10.4f %10.4f %10.4f %10.4f\n", static_cast<int>(width),
                static_cast<int>(label.size()), label.data(), n, m[0], m[1], m[2], (m[0] + m[1] + m[2]) / 3.0);
  return buf;
}

}  // namespace

std::string format_report(const RunResult& run, std::string_view title) {
  std::string out = std::string(title) + " (" + std::string(to_string(run.setting)) + "-patient)\n";
  out += header_line(run.setting, "", 12);
  out += metric_line("overall", run.queries.size(), run.macro, 12);
  return out;
}

std::string format_dissection(const Dissection& d, std::string_view title) {
  std::string out = std::string(title) + " (" + std::string(to_string(d.setting)) + "-patient, by " +
                    (d.axis == Axis::match_type ? "match type" : "query type") + ")\n";
  out += header_line(d.setting, "category", 14);
  for (const auto& r : d.rows) out += metric_line(r.category, r.queries, r.metrics, 14);
  return out;
}

nlohmann::json to_json(const RunResult& run) {
  nlohmann::json j;
  j["setting"] = to_string(run.setting);
  j["queries"] = run.queries.size();
  const auto names = metric_names(run.setting);
  for (std::size_t m = 0; m < 3; ++m) j["metrics"][std::string(names[m])] = run.macro[m];
  j["average"] = run.average();
  return j;
}

nlohmann::json to_json(const Dissection& d) {
  nlohmann::json j;
  j["setting"] = to_string(d.setting);
  j["axis"] = d.axis == Axis::match_type ? "match_type" : "query_type";
  j["rows"] = nlohmann::json::array();
  const auto names = metric_names(d.setting);
  for (const auto& r : d.rows) {
    nlohmann::json row{{"category", r.category}, {"queries", r.queries}, {"average", r.average}};
    for (std::size_t m = 0; m < 3; ++m) row["metrics"][std::string(names[m])] = r.metrics[m];
    j["rows"].push_back(row);
  }
  return j;
}

}  // namespace ehrdr::eval
