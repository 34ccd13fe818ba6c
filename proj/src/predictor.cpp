#include "pljp/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "pljp/binio.hpp"
#include "pljp/text.hpp"
#include "pljp/util.hpp"

namespace pljp {

// --- Encoder ----------------------------------------------------------------

HashedEmbeddingEncoder::HashedEmbeddingEncoder(std::size_t buckets, std::size_t dim, std::uint64_t seed,
                                               double init_scale)
    : buckets_(buckets), dim_(dim), table_(buckets * dim) {
  Rng rng(seed);
  for (auto& v : table_) v = rng.uniform(-init_scale, init_scale);
}

std::size_t HashedEmbeddingEncoder::bucket_of(std::string_view token) const { return fnv1a(token) % buckets_; }

EmbeddingSequence HashedEmbeddingEncoder::encode_tokens(std::span<const std::string> tokens) const {
  EmbeddingSequence h{dim_, {}};
  h.values.reserve(tokens.size() * dim_);
  for (const auto& t : tokens) {
    const auto r = row(bucket_of(t));
    h.values.insert(h.values.end(), r.begin(), r.end());
  }
  return h;
}

EmbeddingSequence HashedEmbeddingEncoder::encode(std::string_view text) const {
  const auto tokens = text::tokenize(text);
  return encode_tokens(tokens);
}

EmbeddingSequence encode(std::string_view fact, const TextEncoder& encoder) {
  auto h = encoder.encode(fact);
  if (h.rows() == 0) {
    throw PredictorError(PredictorErrc::empty_after_tokenization, "fact has no tokens after tokenization");
  }
  return h;
}

// --- Pooling and classification ---------------------------------------------

std::vector<double> max_pool(const EmbeddingSequence& h, std::vector<std::size_t>* argmax_rows) {
  if (h.rows() == 0) throw PredictorError(PredictorErrc::empty_after_tokenization, "cannot pool an empty sequence");
  std::vector<double> pooled(h.row(0).begin(), h.row(0).end());
  if (argmax_rows) argmax_rows->assign(h.dim, 0);
  for (std::size_t i = 1; i < h.rows(); ++i) {
    const auto r = h.row(i);
    for (std::size_t j = 0; j < h.dim; ++j) {
      if (r[j] > pooled[j]) {
        pooled[j] = r[j];
        if (argmax_rows) (*argmax_rows)[j] = i;
      }
    }
  }
  return pooled;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::vector<double> ClassifierHead::logits(std::span<const double> pooled) const {
  if (pooled.size() != dim) {
    throw PredictorError(PredictorErrc::dimension_mismatch,
                         fmt::format("pooled vector has dimension {}, head expects {}", pooled.size(), dim));
  }
  std::vector<double> z(bias);
  for (std::size_t k = 0; k < labels; ++k) {
    const double* w = weights.data() + k * dim;
    double acc = 0;
    for (std::size_t j = 0; j < dim; ++j) acc += w[j] * pooled[j];
    z[k] += acc;
  }
  return z;
}

HeadGradients head_gradients(const ClassifierHead& head, std::span<const double> pooled, std::size_t target) {
  const auto z = head.logits(pooled);
  auto p = softmax(z);
  HeadGradients g;
  g.loss = -std::log(std::max(p[target], 1e-300));
  p[target] -= 1.0;  // dL/dz
  g.d_bias = p;
  g.d_weights.assign(head.labels * head.dim, 0.0);
  g.d_pooled.assign(head.dim, 0.0);
  for (std::size_t k = 0; k < head.labels; ++k) {
    const double dz = p[k];
    double* dw = g.d_weights.data() + k * head.dim;
    const double* w = head.weights.data() + k * head.dim;
    for (std::size_t j = 0; j < head.dim; ++j) {
      dw[j] = dz * pooled[j];
      g.d_pooled[j] += dz * w[j];
    }
  }
  return g;
}

ProbDist pool_and_classify(const EmbeddingSequence& h, const ClassifierHead& head) {
  if (h.dim != head.dim) {
    throw PredictorError(PredictorErrc::dimension_mismatch,
                         fmt::format("embedding dimension {} does not match head dimension {}", h.dim, head.dim));
  }
  const auto pooled = max_pool(h);
  return {softmax(head.logits(pooled))};
}

CandidateSet candidate_labels(const ProbDist& dist, std::size_t n, const LabelVocab& vocab) {
  const std::size_t m = dist.probs.size();
  if (m != vocab.size()) {
    throw PredictorError(PredictorErrc::dimension_mismatch,
                         fmt::format("distribution has {} entries, vocabulary has {}", m, vocab.size()));
  }
  if (n < 1 || n > m) {
    throw PredictorError(PredictorErrc::bad_n, fmt::format("n = {} outside [1, {}]", n, m));
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist.probs[a] > dist.probs[b]; });
  CandidateSet c;
  c.task = vocab.task();
  for (std::size_t i = 0; i < n; ++i) {
    c.indices.push_back(order[i]);
    c.labels.push_back(vocab.label(order[i]));
    c.probs.push_back(dist.probs[order[i]]);
  }
  return c;
}

ProbDist PredictiveModel::predict(std::string_view fact) const { return pool_and_classify(encode(fact, encoder), head); }

// --- Serialization ----------------------------------------------------------

namespace {
constexpr std::string_view kModelMagic = "PLJPPRED";
constexpr std::uint32_t kModelVersion = 1;
}  // namespace

std::string PredictiveModel::serialize() const {
  BinaryWriter w;
  w.raw(kModelMagic);
  w.u32(kModelVersion);
  w.u8(static_cast<std::uint8_t>(task));
  w.u32(static_cast<std::uint32_t>(head.labels));
  w.u32(static_cast<std::uint32_t>(head.dim));
  w.u64(vocab.hash());
  w.u32(static_cast<std::uint32_t>(encoder.buckets()));
  w.f64s(encoder.table());
  w.f64s(head.weights);
  w.f64s(head.bias);
  w.str(vocab.to_json().dump());
  return w.bytes();
}

void PredictiveModel::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

PredictiveModel PredictiveModel::deserialize(std::string bytes) {
  BinaryReader r(std::move(bytes));
  try {
    if (r.raw(kModelMagic.size()) != kModelMagic) {
      throw PredictorError(PredictorErrc::bad_model_file, "not a predictor model file");
    }
    const auto version = r.u32();
    if (version != kModelVersion) {
      throw PredictorError(PredictorErrc::bad_model_file, fmt::format("unsupported model version {}", version));
    }
    PredictiveModel m;
    const auto task = r.u8();
    if (task > 2) throw PredictorError(PredictorErrc::bad_model_file, "bad task code");
    m.task = static_cast<Task>(task);
    const std::size_t labels = r.u32();
    const std::size_t dim = r.u32();
    const auto vocab_hash = r.u64();
    const std::size_t buckets = r.u32();
    m.encoder = HashedEmbeddingEncoder(buckets, dim, 0, 0.0);
    m.encoder.table() = r.f64s(buckets * dim);
    m.head.labels = labels;
    m.head.dim = dim;
    m.head.weights = r.f64s(labels * dim);
    m.head.bias = r.f64s(labels);
    m.vocab = LabelVocab::from_json(nlohmann::json::parse(r.str()));
    if (!r.at_end()) throw PredictorError(PredictorErrc::bad_model_file, "trailing bytes in model file");
    if (m.vocab.hash() != vocab_hash || m.vocab.size() != labels || m.vocab.task() != m.task) {
      throw PredictorError(PredictorErrc::bad_model_file, "embedded vocabulary does not match header");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw PredictorError(PredictorErrc::bad_model_file, e.what());
  } catch (const PredictorError&) {
    throw;
  } catch (const Error& e) {
    throw PredictorError(PredictorErrc::bad_model_file, e.what());
  }
}

PredictiveModel PredictiveModel::load(const std::filesystem::path& path, const LabelVocab* expected) {
  PredictiveModel m;
  try {
    m = deserialize(read_file(path));
  } catch (const PredictorError& e) {
    throw PredictorError(e.kind(), fmt::format("{}: {}", path.string(), e.what()));
  }
  if (expected && expected->hash() != m.vocab.hash()) {
    throw PredictorError(PredictorErrc::vocab_mismatch,
                         fmt::format("{}: model vocabulary {} does not match expected {}", path.string(),
                                     hex64(m.vocab.hash()), hex64(expected->hash())));
  }
  return m;
}

// --- Training ---------------------------------------------------------------

PredictiveModel init_predictor(Task task, const LabelVocab& vocab, const PredictorHyper& hyper) {
  if (hyper.dim == 0 || hyper.buckets == 0) {
    throw PredictorError(PredictorErrc::bad_hyperparameters, "dim and buckets must be positive");
  }
  PredictiveModel m;
  m.task = task;
  m.vocab = vocab;
  m.encoder = HashedEmbeddingEncoder(hyper.buckets, hyper.dim, hyper.seed, hyper.init_scale);
  m.head.labels = vocab.size();
  m.head.dim = hyper.dim;
  m.head.weights.resize(vocab.size() * hyper.dim);
  m.head.bias.assign(vocab.size(), 0.0);
  Rng rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& w : m.head.weights) w = rng.uniform(-hyper.head_init_scale, hyper.head_init_scale);
  return m;
}

namespace {

struct Example {
  std::vector<std::size_t> buckets;
  std::size_t label;
};

// Max-pooled embedding of an example plus, per column, the bucket that won.
std::vector<double> pool_buckets(const HashedEmbeddingEncoder& enc, const Example& ex,
                                 std::vector<std::size_t>& winners) {
  const std::size_t d = enc.dim();
  const auto first = enc.row(ex.buckets.front());
  std::vector<double> pooled(first.begin(), first.end());
  winners.assign(d, ex.buckets.front());
  for (std::size_t i = 1; i < ex.buckets.size(); ++i) {
    const auto r = enc.row(ex.buckets[i]);
    for (std::size_t j = 0; j < d; ++j) {
      if (r[j] > pooled[j]) {
        pooled[j] = r[j];
        winners[j] = ex.buckets[i];
      }
    }
  }
  return pooled;
}

std::pair<double, double> evaluate(const PredictiveModel& m, const std::vector<Example>& data) {
  double loss = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> winners;
  for (const auto& ex : data) {
    const auto pooled = pool_buckets(m.encoder, ex, winners);
    const auto p = softmax(m.head.logits(pooled));
    loss -= std::log(std::max(p[ex.label], 1e-300));
    const auto best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    if (best == ex.label) ++correct;
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

PredictiveModel train_predictor(std::span<const std::string> facts, std::span<const std::size_t> labels, Task task,
                                const LabelVocab& vocab, const PredictorHyper& hyper, PredictorTrainReport* report) {
  if (facts.size() != labels.size() || facts.empty()) {
    throw PredictorError(PredictorErrc::bad_hyperparameters, "facts and labels must be non-empty and aligned");
  }
  if (hyper.epochs < 0 || hyper.batch == 0 || !(hyper.lr > 0)) {
    throw PredictorError(PredictorErrc::bad_hyperparameters, "need epochs >= 0, batch > 0 and lr > 0");
  }
  std::set<std::size_t> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) {
    throw PredictorError(PredictorErrc::degenerate_labels, "training data needs at least two distinct labels");
  }
  if (*distinct.rbegin() >= vocab.size()) {
    throw PredictorError(PredictorErrc::dimension_mismatch, "label index outside the vocabulary");
  }

  PredictiveModel model = init_predictor(task, vocab, hyper);
  std::vector<Example> data;
  data.reserve(facts.size());
  for (std::size_t i = 0; i < facts.size(); ++i) {
    Example ex{{}, labels[i]};
    for (const auto& t : text::tokenize(facts[i])) ex.buckets.push_back(model.encoder.bucket_of(t));
    if (ex.buckets.empty()) {
      throw PredictorError(PredictorErrc::empty_after_tokenization,
                           fmt::format("training fact {} has no tokens", i));
    }
    data.push_back(std::move(ex));
  }

  PredictorTrainReport local;
  auto [loss0, acc0] = evaluate(model, data);
  local.loss_curve.push_back(loss0);
  local.final_loss = loss0;
  local.final_accuracy = acc0;

  const std::size_t m = model.head.labels;
  const std::size_t d = model.head.dim;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(hyper.seed + 1);
  std::vector<std::size_t> winners;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + hyper.batch);
      const double scale = hyper.lr / static_cast<double>(end - start);
      std::vector<double> dw(m * d, 0.0), db(m, 0.0);
      std::unordered_map<std::size_t, std::vector<double>> demb;
      for (std::size_t k = start; k < end; ++k) {
        const Example& ex = data[order[k]];
        const auto pooled = pool_buckets(model.encoder, ex, winners);
        const auto g = head_gradients(model.head, pooled, ex.label);
        if (!std::isfinite(g.loss)) {
          throw PredictorError(PredictorErrc::non_finite_loss, fmt::format("non-finite loss in epoch {}", epoch));
        }
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += g.d_weights[i];
        for (std::size_t i = 0; i < m; ++i) db[i] += g.d_bias[i];
        for (std::size_t j = 0; j < d; ++j) {
          auto& row = demb[winners[j]];
          if (row.empty()) row.assign(d, 0.0);
          row[j] += g.d_pooled[j];
        }
      }
      for (std::size_t i = 0; i < dw.size(); ++i) model.head.weights[i] -= scale * dw[i];
      for (std::size_t i = 0; i < m; ++i) model.head.bias[i] -= scale * db[i];
      // Apply embedding updates in bucket order so results do not depend on
      // hash-map iteration order.
      std::vector<std::size_t> touched;
      touched.reserve(demb.size());
      for (const auto& kv : demb) touched.push_back(kv.first);
      std::sort(touched.begin(), touched.end());
      for (auto b : touched) {
        auto row = model.encoder.row(b);
        const auto& g = demb[b];
        for (std::size_t j = 0; j < d; ++j) row[j] -= scale * g[j];
      }
    }
    auto [loss, acc] = evaluate(model, data);
    if (!std::isfinite(loss)) {
      throw PredictorError(PredictorErrc::non_finite_loss, fmt::format("non-finite loss after epoch {}", epoch + 1));
    }
    local.loss_curve.push_back(loss);
    local.final_loss = loss;
    local.final_accuracy = acc;
    spdlog::debug("{} predictor epoch {}: loss {:.5f} acc {:.4f}", task_name(task), epoch + 1, loss, acc);
  }
  if (report) *report = std::move(local);
  return model;
}

PredictiveModel train_predictor(std::span<const Case> train, Task task, const VocabSet& vocab,
                                const PredictorHyper& hyper, PredictorTrainReport* report) {
  std::vector<std::string> facts;
  std::vector<std::size_t> labels;
  facts.reserve(train.size());
  labels.reserve(train.size());
  for (const auto& c : train) {
    facts.push_back(c.fact);
    labels.push_back(vocab[task].require_index(verdict_of(c, vocab.bins)[task]));
  }
  return train_predictor(facts, labels, task, vocab[task], hyper, report);
}

}  // namespace pljp
