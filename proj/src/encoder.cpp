#include "ehrdr/encoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ehrdr/error.hpp"
#include "ehrdr/rng.hpp"
#include "ehrdr/text.hpp"

namespace ehrdr::encoder {

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& w : text::split_ws(text)) {
    std::string_view s = w;
    while (!s.empty() && text::is_punct(s.front())) s.remove_prefix(1);
    while (!s.empty() && text::is_punct(s.back())) s.remove_suffix(1);
    if (!s.empty()) out.emplace_back(s);
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::size_t oov_buckets)
    : tokens_(std::move(tokens)), oov_buckets_(oov_buckets) {
  if (oov_buckets_ == 0) throw Error("vocabulary needs at least one OOV bucket");
  std::sort(tokens_.begin(), tokens_.end());
  tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t oov_buckets) {
  std::vector<std::string> tokens;
  for (const auto& t : texts)
    for (auto& tok : split_tokens(t)) tokens.push_back(std::move(tok));
  return Vocabulary(std::move(tokens), oov_buckets);
}

std::size_t Vocabulary::index_of(std::string_view token) const {
  if (const auto it = index_.find(std::string(token)); it != index_.end()) return it->second;
  return tokens_.size() + fnv1a64(token) % oov_buckets_;
}

std::vector<std::size_t> Vocabulary::tokenize(std::string_view text, std::size_t max_tokens) const {
  std::vector<std::size_t> out;
  for (const auto& tok : split_tokens(text)) {
    if (max_tokens && out.size() == max_tokens) break;
    out.push_back(index_of(tok));
  }
  return out;
}

EncoderParams::EncoderParams(Vocabulary vocab, std::size_t dim, std::uint64_t seed, double init_scale)
    : vocab_(std::move(vocab)), dim_(dim), seed_(seed), table_(vocab_.rows() * dim) {
  if (dim == 0) throw Error("embedding dimension must be positive");
  Rng rng(seed);
  for (double& x : table_) x = rng.uniform(-init_scale, init_scale);
}

Encoded encode(const EncoderParams& params, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error("degenerate input");
  const std::size_t d = params.dim();
  Encoded out;
  out.trace.indices.assign(indices.begin(), indices.end());
  out.trace.mean.assign(d, 0.0);
  for (std::size_t idx : indices) {
    if (idx >= params.rows()) throw Error("token index out of range");
    const auto r = params.row(idx);
    for (std::size_t k = 0; k < d; ++k) out.trace.mean[k] += r[k];
  }
  const double inv_n = 1.0 / static_cast<double>(indices.size());
  double sq = 0.0;
  for (double& x : out.trace.mean) {
    x *= inv_n;
    sq += x * x;
  }
  out.trace.norm = std::sqrt(sq);
  if (!(out.trace.norm > 0.0) || !std::isfinite(out.trace.norm)) throw Error("degenerate embedding");
  out.embedding.resize(d);
  for (std::size_t k = 0; k < d; ++k) out.embedding[k] = out.trace.mean[k] / out.trace.norm;
  return out;
}

Encoded encode_text(const EncoderParams& params, std::string_view text, std::size_t max_tokens) {
  const auto idx = params.vocab().tokenize(text, max_tokens);
  return encode(params, idx);
}

double similarity(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

void backprop_unit(const Encoded& enc, std::span<const double> dl_du, Gradient& grad) {
  if (!(enc.trace.norm > 0.0)) throw Error("backprop through a degenerate trace");
  const auto& u = enc.embedding;
  const std::size_t d = u.size();
  const double gu = similarity(dl_du, u);
  const double scale = 1.0 / (enc.trace.norm * static_cast<double>(enc.trace.indices.size()));
  std::vector<double> dm(d);
  for (std::size_t k = 0; k < d; ++k) dm[k] = (dl_du[k] - gu * u[k]) * scale;
  for (std::size_t idx : enc.trace.indices) {
    auto r = grad.row(idx);
    for (std::size_t k = 0; k < d; ++k) r[k] += dm[k];
  }
}

void backprop(const Encoded& first, const Encoded& second, double dl_ds, Gradient& grad) {
  if (dl_ds == 0.0) return;
  const std::size_t d = first.embedding.size();
  std::vector<double> g1(d), g2(d);
  for (std::size_t k = 0; k < d; ++k) {
    g1[k] = dl_ds * second.embedding[k];
    g2[k] = dl_ds * first.embedding[k];
  }
  backprop_unit(first, g1, grad);
  backprop_unit(second, g2, grad);
}

namespace {

constexpr char kMagic[8] = {'E', 'H', 'R', 'D', 'R', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

void put_u64(std::ofstream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u64(out, params.dim());
  put_u64(out, params.vocab().known());
  put_u64(out, params.vocab().oov_buckets());
  put_u64(out, params.seed());
  for (const auto& tok : params.vocab().tokens()) {
    put_u64(out, tok.size());
    out.write(tok.data(), static_cast<std::streamsize>(tok.size()));
  }
  out.write(reinterpret_cast<const char*>(params.table().data()),
            static_cast<std::streamsize>(params.table().size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path.string());
}

EncoderParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw IoError("not an encoder checkpoint: " + path.string());
  const auto dim = get_u64(in);
  const auto known = get_u64(in);
  const auto oov = get_u64(in);
  const auto seed = get_u64(in);
  std::vector<std::string> tokens(known);
  for (auto& tok : tokens) {
    tok.resize(get_u64(in));
    if (!in.read(tok.data(), static_cast<std::streamsize>(tok.size()))) throw IoError("truncated checkpoint");
  }
  EncoderParams params(Vocabulary(std::move(tokens), oov), dim, seed, 0.0);
  auto& table = params.table();
  if (!in.read(reinterpret_cast<char*>(table.data()), static_cast<std::streamsize>(table.size() * sizeof(double))))
    throw IoError("truncated checkpoint table");
  return params;
}

}  // namespace ehrdr::encoder
