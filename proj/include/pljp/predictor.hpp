#pragma once

// Per-task candidate-label model: token embeddings, column-wise max-pooling,
// then an affine layer with softmax, trained with cross-entropy.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pljp/corpus.hpp"
#include "pljp/types.hpp"

namespace pljp {

enum class PredictorErrc {
  empty_after_tokenization,
  dimension_mismatch,
  degenerate_labels,
  non_finite_loss,
  bad_n,
  bad_model_file,
  vocab_mismatch,
  bad_hyperparameters,
};

class PredictorError : public Error {
 public:
  PredictorError(PredictorErrc kind, const std::string& message) : Error(message), kind_(kind) {}
  PredictorErrc kind() const noexcept { return kind_; }

 private:
  PredictorErrc kind_;
};

/// Row-major l x d matrix, one row per token.
struct EmbeddingSequence {
  std::size_t dim = 0;
  std::vector<double> values;

  std::size_t rows() const { return dim ? values.size() / dim : 0; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

/// Pluggable fact encoder producing one vector per token.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual EmbeddingSequence encode(std::string_view text) const = 0;
};

/// Learned embedding table over a hashed token vocabulary. Position
/// independent: equal tokens get equal rows.
class HashedEmbeddingEncoder final : public TextEncoder {
 public:
  HashedEmbeddingEncoder() = default;
  HashedEmbeddingEncoder(std::size_t buckets, std::size_t dim, std::uint64_t seed, double init_scale = 0.5);

  std::size_t dim() const override { return dim_; }
  std::size_t buckets() const { return buckets_; }
  EmbeddingSequence encode(std::string_view text) const override;
  EmbeddingSequence encode_tokens(std::span<const std::string> tokens) const;

  std::size_t bucket_of(std::string_view token) const;
  std::span<double> row(std::size_t bucket) { return {table_.data() + bucket * dim_, dim_}; }
  std::span<const double> row(std::size_t bucket) const { return {table_.data() + bucket * dim_, dim_}; }
  std::vector<double>& table() { return table_; }
  const std::vector<double>& table() const { return table_; }

  bool operator==(const HashedEmbeddingEncoder& other) const {
    return buckets_ == other.buckets_ && dim_ == other.dim_ && table_ == other.table_;
  }

 private:
  std::size_t buckets_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> table_;
};

/// Column-wise maximum over rows; the first maximal row wins ties.
std::vector<double> max_pool(const EmbeddingSequence& h, std::vector<std::size_t>* argmax_rows = nullptr);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Fully connected layer: weights (m x d, row-major) and bias (m).
struct ClassifierHead {
  std::size_t labels = 0;
  std::size_t dim = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  std::vector<double> logits(std::span<const double> pooled) const;
  bool operator==(const ClassifierHead&) const = default;
};

struct HeadGradients {
  double loss = 0;
  std::vector<double> d_weights;
  std::vector<double> d_bias;
  std::vector<double> d_pooled;
};

/// Cross-entropy of softmax(W h + b) against `target` and its gradients.
HeadGradients head_gradients(const ClassifierHead& head, std::span<const double> pooled, std::size_t target);

struct ProbDist {
  std::vector<double> probs;
};

struct CandidateSet {
  Task task = Task::article;
  std::vector<LabelId> labels;
  std::vector<std::size_t> indices;
  std::vector<double> probs;

  std::size_t size() const { return labels.size(); }
};

struct PredictiveModel {
  Task task = Task::article;
  LabelVocab vocab;
  HashedEmbeddingEncoder encoder;
  ClassifierHead head;

  ProbDist predict(std::string_view fact) const;

  /// Versioned binary file. Header: magic "PLJPPRED", version, task, m, d,
  /// vocab hash; then encoder table, head and vocabulary JSON.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static PredictiveModel deserialize(std::string bytes);
  /// Loads and, when `expected` is given, checks its hash against the
  /// embedded vocabulary.
  static PredictiveModel load(const std::filesystem::path& path, const LabelVocab* expected = nullptr);

  bool operator==(const PredictiveModel& other) const {
    return task == other.task && vocab == other.vocab && encoder == other.encoder && head == other.head;
  }
};

/// Encode with any TextEncoder. Throws empty_after_tokenization when the text
/// has no tokens.
EmbeddingSequence encode(std::string_view fact, const TextEncoder& encoder);

/// softmax(W maxpool(H) + b).
ProbDist pool_and_classify(const EmbeddingSequence& h, const ClassifierHead& head);

/// Top-n labels by probability; ties go to the lower label index.
CandidateSet candidate_labels(const ProbDist& dist, std::size_t n, const LabelVocab& vocab);

inline constexpr std::size_t kDefaultCandidates = 3;

struct PredictorHyper {
  int epochs = 20;
  double lr = 0.1;
  std::size_t batch = 32;
  std::uint64_t seed = 1;
  std::size_t dim = 64;
  std::size_t buckets = 1u << 13;
  double init_scale = 0.1;
  double head_init_scale = 2.0;
};

struct PredictorTrainReport {
  /// Mean cross-entropy over the training set at initialization and after
  /// each epoch (epochs + 1 values).
  std::vector<double> loss_curve;
  double final_loss = 0;
  double final_accuracy = 0;
};

/// Seeded model before any training.
PredictiveModel init_predictor(Task task, const LabelVocab& vocab, const PredictorHyper& hyper);

/// Mini-batch gradient descent on mean cross-entropy; updates both the head
/// and the embedding rows selected by max-pooling.
PredictiveModel train_predictor(std::span<const std::string> facts, std::span<const std::size_t> labels, Task task,
                                const LabelVocab& vocab, const PredictorHyper& hyper,
                                PredictorTrainReport* report = nullptr);

/// Convenience overload over raw cases.
PredictiveModel train_predictor(std::span<const Case> train, Task task, const VocabSet& vocab,
                                const PredictorHyper& hyper, PredictorTrainReport* report = nullptr);

}  // namespace pljp
