#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ehrdr::encoder {

inline constexpr std::size_t kDefaultOovBuckets = 1024;
inline constexpr std::size_t kDefaultDim = 64;
inline constexpr std::size_t kChunkTokenBudget = 512;
inline constexpr std::size_t kEntityTokenBudget = 16;

/// Whitespace split with leading/trailing punctuation stripped; empty tokens dropped.
std::vector<std::string> split_tokens(std::string_view text);

/// Sorted known tokens followed by hashed out-of-vocabulary buckets.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens, std::size_t oov_buckets = kDefaultOovBuckets);

  /// Every token of every text.
  static Vocabulary build(std::span<const std::string> texts, std::size_t oov_buckets = kDefaultOovBuckets);

  std::size_t known() const { return tokens_.size(); }
  std::size_t oov_buckets() const { return oov_buckets_; }
  std::size_t rows() const { return tokens_.size() + oov_buckets_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Row of a known token, or its FNV-1a bucket past the known range.
  std::size_t index_of(std::string_view token) const;
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }

  /// max_tokens == 0 keeps everything.
  std::vector<std::size_t> tokenize(std::string_view text, std::size_t max_tokens = 0) const;

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && oov_buckets_ == o.oov_buckets_; }

 private:
  std::vector<std::string> tokens_;
  std::size_t oov_buckets_ = kDefaultOovBuckets;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Embedding table, rows() x dim, row-major.
class EncoderParams {
 public:
  EncoderParams() = default;
  /// Uniform init in [-init_scale, init_scale] from `seed`.
  EncoderParams(Vocabulary vocab, std::size_t dim, std::uint64_t seed, double init_scale = 0.05);

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t dim() const { return dim_; }
  std::size_t rows() const { return vocab_.rows(); }
  std::uint64_t seed() const { return seed_; }

  std::span<double> row(std::size_t i) { return {table_.data() + i * dim_, dim_}; }
  std::span<const double> row(std::size_t i) const { return {table_.data() + i * dim_, dim_}; }
  std::vector<double>& table() { return table_; }
  const std::vector<double>& table() const { return table_; }

  bool operator==(const EncoderParams&) const = default;

 private:
  Vocabulary vocab_;
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> table_;
};

/// What backpropagation needs from a forward pass.
struct EncodeTrace {
  std::vector<std::size_t> indices;
  std::vector<double> mean;  // before normalization
  double norm = 0.0;
};

struct Encoded {
  std::vector<double> embedding;  // unit norm
  EncodeTrace trace;
};

/// Mean of the rows, L2-normalized. Throws Error("degenerate input") on empty
/// indices and Error("degenerate embedding") when the mean is zero.
Encoded encode(const EncoderParams& params, std::span<const std::size_t> indices);
Encoded encode_text(const EncoderParams& params, std::string_view text, std::size_t max_tokens);

/// Dot product; the cosine for unit vectors.
double similarity(std::span<const double> a, std::span<const double> b);

/// Dense gradient buffer shaped like the embedding table.
struct Gradient {
  std::size_t dim = 0;
  std::vector<double> values;

  Gradient() = default;
  explicit Gradient(const EncoderParams& p) : dim(p.dim()), values(p.table().size(), 0.0) {}
  std::span<double> row(std::size_t i) { return {values.data() + i * dim, dim}; }
  void zero() { std::fill(values.begin(), values.end(), 0.0); }
};

/// Accumulates dL/drow for every row in the trace, given dL/du for the unit
/// output u: dL/dm = (g - (g.u) u) / |m|, split evenly over the pooled rows.
void backprop_unit(const Encoded& enc, std::span<const double> dl_du, Gradient& grad);

/// Gradient of S = u1.u2 scaled by dl_ds, accumulated for both sides.
void backprop(const Encoded& first, const Encoded& second, double dl_ds, Gradient& grad);

/// Binary checkpoint: header (dim, vocab size, OOV buckets, seed), the
/// vocabulary, then the row-major table. Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params);
EncoderParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ehrdr::encoder
