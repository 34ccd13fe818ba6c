#pragma once

// Dual-encoder precedent search: a shared text encoder trained with InfoNCE
// over random crops, an in-memory index of the case database, and the
// one-precedent-per-candidate selection rule.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pljp/corpus.hpp"
#include "pljp/predictor.hpp"
#include "pljp/types.hpp"
#include "pljp/util.hpp"

namespace pljp {

enum class RetrieverErrc {
  empty_text,
  zero_norm,
  dimension_mismatch,
  batch_too_small,
  non_finite_loss,
  stale_model_hash,
  no_case_with_label,
  bad_model_file,
  bad_index_file,
  bad_config,
};

class RetrieverError : public Error {
 public:
  RetrieverError(RetrieverErrc kind, const std::string& message) : Error(message), kind_(kind) {}
  RetrieverErrc kind() const noexcept { return kind_; }

 private:
  RetrieverErrc kind_;
};

/// Anything that maps text to a fixed-size vector can back the index.
class RetrievalEncoder {
 public:
  virtual ~RetrievalEncoder() = default;
  virtual std::size_t dim() const = 0;
  /// Throws RetrieverError(empty_text) when the text has no tokens.
  virtual std::vector<double> embed(std::string_view text) const = 0;
  /// Identifies the exact parameters; stored in index files.
  virtual std::uint64_t version_hash() const = 0;
};

/// Mean of hashed token embeddings plus a learned shared offset.
class RetrievalModel final : public RetrievalEncoder {
 public:
  RetrievalModel() = default;
  RetrievalModel(std::size_t buckets, std::size_t dim, std::uint64_t seed, double init_scale = 0.1);

  std::size_t dim() const override { return dim_; }
  std::size_t buckets() const { return buckets_; }
  std::vector<double> embed(std::string_view text) const override;
  std::vector<double> embed_buckets(std::span<const std::size_t> token_buckets) const;
  std::size_t bucket_of(std::string_view token) const;
  std::uint64_t version_hash() const override;

  std::span<double> row(std::size_t bucket) { return {table_.data() + bucket * dim_, dim_}; }
  std::span<const double> row(std::size_t bucket) const { return {table_.data() + bucket * dim_, dim_}; }
  std::vector<double>& table() { return table_; }
  const std::vector<double>& table() const { return table_; }
  std::vector<double>& offset() { return offset_; }
  const std::vector<double>& offset() const { return offset_; }

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static RetrievalModel deserialize(std::string bytes);
  static RetrievalModel load(const std::filesystem::path& path);

  bool operator==(const RetrievalModel& other) const {
    return buckets_ == other.buckets_ && dim_ == other.dim_ && table_ == other.table_ && offset_ == other.offset_;
  }

 private:
  std::size_t buckets_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> table_;
  std::vector<double> offset_;
};

std::vector<double> embed_text(std::string_view text, const RetrievalEncoder& model);

/// a.b / (|a| |b|), accumulated in double and clamped to [-1, 1].
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

struct RetrieverConfig {
  int epochs = 10;
  double lr = 0.01;
  std::size_t batch = 32;
  double temperature = 0.05;
  std::uint64_t seed = 1;
  std::size_t dim = 128;
  std::size_t buckets = 1u << 13;
  double init_scale = 0.1;
  double crop_min = 0.5;
  double crop_max = 0.9;
};

struct RetrieverTrainReport {
  /// Mean InfoNCE loss over a fixed set of evaluation crops, at
  /// initialization and after each epoch.
  std::vector<double> loss_curve;
};

/// Contiguous span covering a uniform fraction in [crop_min, crop_max] of
/// the tokens (at least one token).
std::vector<std::size_t> random_crop(std::span<const std::size_t> tokens, double crop_min, double crop_max, Rng& rng);

/// Seeded model before any training.
RetrievalModel init_retriever(const RetrieverConfig& config);

/// Two independent crops of each document form a positive pair; the other
/// documents in the batch are negatives. Adam on the one-directional InfoNCE
/// loss. Trailing partial batches are dropped.
RetrievalModel train_retriever(std::span<const std::string> corpus, const RetrieverConfig& config,
                               RetrieverTrainReport* report = nullptr);

/// InfoNCE loss of one batch of (query, key) vectors; gradients optional.
double info_nce(std::span<const std::vector<double>> queries, std::span<const std::vector<double>> keys,
                double temperature, std::vector<std::vector<double>>* d_queries = nullptr,
                std::vector<std::vector<double>>* d_keys = nullptr);

// --- Index ------------------------------------------------------------------

struct PrecedentIndex {
  std::uint64_t model_hash = 0;
  std::size_t dim = 0;
  std::vector<std::string> ids;
  /// Row-major count x dim.
  std::vector<float> vectors;
  std::vector<Verdict> verdicts;
  /// Back-store; empty until attach() is called or the index was built from
  /// a database.
  std::vector<ReorganizedFact> facts;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  std::span<const float> vector(std::size_t i) const { return {vectors.data() + i * dim, dim}; }

  /// Binds database entries by id; throws bad_index_file on a mismatch.
  void attach(const CaseDatabase& db);

  /// Header (magic, version, model hash, dim, count), little-endian float32
  /// vectors, then the id and label table.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static PrecedentIndex deserialize(std::string bytes);
  /// Throws stale_model_hash when the file was built by a different model.
  static PrecedentIndex load(const std::filesystem::path& path, const RetrievalEncoder& model);
};

/// Embeds concat_reorganized of every entry.
PrecedentIndex index_database(const CaseDatabase& db, const RetrievalEncoder& model);

struct Precedent {
  std::string case_id;
  ReorganizedFact rf;
  Verdict verdict;
  double score = 0;
  LabelId matched_label;
};

struct LabelMatch {
  std::size_t entry = 0;
  double score = 0;
};

/// For each label, the highest-cosine entry with that label for `task`;
/// ties go to the lower case id. nullopt when no entry bears the label.
std::vector<std::optional<LabelMatch>> best_per_label(std::span<const float> query, Task task,
                                                      std::span<const LabelId> labels, const PrecedentIndex& index);

/// One precedent per candidate, in candidate order. Throws
/// no_case_with_label when a candidate has no database case.
std::vector<Precedent> select_precedents(std::span<const float> query, const CandidateSet& candidates,
                                         const PrecedentIndex& index);
std::vector<Precedent> select_precedents(const ReorganizedFact& query, const CandidateSet& candidates,
                                         const PrecedentIndex& index, const RetrievalEncoder& model);

std::vector<float> to_float(std::span<const double> v);

}  // namespace pljp
