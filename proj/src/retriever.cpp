#include "pljp/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pljp/binio.hpp"
#include "pljp/reorganizer.hpp"
#include "pljp/text.hpp"

namespace pljp {

// --- Model ------------------------------------------------------------------

RetrievalModel::RetrievalModel(std::size_t buckets, std::size_t dim, std::uint64_t seed, double init_scale)
    : buckets_(buckets), dim_(dim), table_(buckets * dim), offset_(dim) {
  Rng rng(seed);
  for (auto& v : table_) v = rng.uniform(-init_scale, init_scale);
  // A large shared component makes every text start out nearly parallel, so
  // the untrained contrastive logits are close to uniform.
  const double base = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& v : offset_) v = base * (1.0 + rng.uniform(-0.05, 0.05));
}

std::size_t RetrievalModel::bucket_of(std::string_view token) const { return fnv1a(token) % buckets_; }

std::vector<double> RetrievalModel::embed_buckets(std::span<const std::size_t> token_buckets) const {
  if (token_buckets.empty()) throw RetrieverError(RetrieverErrc::empty_text, "cannot embed text without tokens");
  std::vector<double> out(dim_, 0.0);
  for (auto b : token_buckets) {
    const auto r = row(b);
    for (std::size_t j = 0; j < dim_; ++j) out[j] += r[j];
  }
  const double inv = 1.0 / static_cast<double>(token_buckets.size());
  for (std::size_t j = 0; j < dim_; ++j) out[j] = out[j] * inv + offset_[j];
  return out;
}

std::vector<double> RetrievalModel::embed(std::string_view text) const {
  std::vector<std::size_t> buckets;
  for (const auto& t : text::tokenize(text)) buckets.push_back(bucket_of(t));
  return embed_buckets(buckets);
}

namespace {
constexpr std::string_view kModelMagic = "PLJPRETR";
constexpr std::string_view kIndexMagic = "PLJPINDX";
constexpr std::uint32_t kFormatVersion = 1;
}  // namespace

std::string RetrievalModel::serialize() const {
  BinaryWriter w;
  w.raw(kModelMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(buckets_));
  w.u32(static_cast<std::uint32_t>(dim_));
  w.f64s(table_);
  w.f64s(offset_);
  return w.bytes();
}

std::uint64_t RetrievalModel::version_hash() const { return fnv1a(serialize()); }

void RetrievalModel::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

RetrievalModel RetrievalModel::deserialize(std::string bytes) {
  BinaryReader r(std::move(bytes));
  try {
    if (r.raw(kModelMagic.size()) != kModelMagic) {
      throw RetrieverError(RetrieverErrc::bad_model_file, "not a retrieval model file");
    }
    if (r.u32() != kFormatVersion) throw RetrieverError(RetrieverErrc::bad_model_file, "unsupported model version");
    RetrievalModel m;
    m.buckets_ = r.u32();
    m.dim_ = r.u32();
    m.table_ = r.f64s(m.buckets_ * m.dim_);
    m.offset_ = r.f64s(m.dim_);
    if (!r.at_end()) throw RetrieverError(RetrieverErrc::bad_model_file, "trailing bytes in model file");
    return m;
  } catch (const RetrieverError&) {
    throw;
  } catch (const Error& e) {
    throw RetrieverError(RetrieverErrc::bad_model_file, e.what());
  }
}

RetrievalModel RetrievalModel::load(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const RetrieverError& e) {
    throw RetrieverError(e.kind(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<double> embed_text(std::string_view text, const RetrievalEncoder& model) { return model.embed(text); }

// --- Similarity -------------------------------------------------------------

namespace {

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw RetrieverError(RetrieverErrc::dimension_mismatch,
                         fmt::format("cosine of vectors with dimensions {} and {}", a.size(), b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i];
    const double y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0 || nb == 0) throw RetrieverError(RetrieverErrc::zero_norm, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }
double cosine_similarity(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }

std::vector<float> to_float(std::span<const double> v) { return {v.begin(), v.end()}; }

// --- Training ---------------------------------------------------------------

std::vector<std::size_t> random_crop(std::span<const std::size_t> tokens, double crop_min, double crop_max,
                                     Rng& rng) {
  const double frac = rng.uniform(crop_min, crop_max);
  const auto len = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(frac * tokens.size())), 1,
                                           tokens.size());
  const auto start = rng.below(tokens.size() - len + 1);
  return {tokens.begin() + start, tokens.begin() + start + len};
}

RetrievalModel init_retriever(const RetrieverConfig& config) {
  if (config.dim == 0 || config.buckets == 0) {
    throw RetrieverError(RetrieverErrc::bad_config, "dim and buckets must be positive");
  }
  return RetrievalModel(config.buckets, config.dim, config.seed, config.init_scale);
}

double info_nce(std::span<const std::vector<double>> queries, std::span<const std::vector<double>> keys,
                double temperature, std::vector<std::vector<double>>* d_queries,
                std::vector<std::vector<double>>* d_keys) {
  const std::size_t n = queries.size();
  if (n == 0 || keys.size() != n) {
    throw RetrieverError(RetrieverErrc::dimension_mismatch, "queries and keys must be non-empty and aligned");
  }
  const std::size_t d = queries[0].size();
  auto normalize = [&](std::span<const std::vector<double>> vs, std::vector<std::vector<double>>& unit,
                       std::vector<double>& norms) {
    for (const auto& v : vs) {
      if (v.size() != d) throw RetrieverError(RetrieverErrc::dimension_mismatch, "ragged batch");
      double s = 0;
      for (double x : v) s += x * x;
      if (s == 0) throw RetrieverError(RetrieverErrc::zero_norm, "zero embedding in batch");
      const double norm = std::sqrt(s);
      norms.push_back(norm);
      auto& u = unit.emplace_back(v);
      for (auto& x : u) x /= norm;
    }
  };
  std::vector<std::vector<double>> a, b;
  std::vector<double> na, nb;
  normalize(queries, a, na);
  normalize(keys, b, nb);

  double loss = 0;
  std::vector<double> g(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = std::inner_product(a[i].begin(), a[i].end(), b[j].begin(), 0.0) / temperature;
    }
    const auto p = softmax(s);
    const double mx = *std::max_element(s.begin(), s.end());
    double lse = 0;
    for (double x : s) lse += std::exp(x - mx);
    loss += mx + std::log(lse) - s[i];
    for (std::size_t j = 0; j < n; ++j) g[i * n + j] = (p[j] - (i == j ? 1.0 : 0.0)) / static_cast<double>(n);
  }
  loss /= static_cast<double>(n);

  if (d_queries || d_keys) {
    // dL/da_i = sum_j g_ij b_j / tau, dL/db_j = sum_i g_ij a_i / tau, then
    // back through x / |x|: (I - u u^T) / |x|.
    auto through_norm = [&](std::vector<double> du, const std::vector<double>& u, double norm) {
      const double proj = std::inner_product(du.begin(), du.end(), u.begin(), 0.0);
      for (std::size_t k = 0; k < d; ++k) du[k] = (du[k] - u[k] * proj) / norm;
      return du;
    };
    if (d_queries) {
      d_queries->assign(n, {});
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> da(d, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
          const double c = g[i * n + j] / temperature;
          for (std::size_t k = 0; k < d; ++k) da[k] += c * b[j][k];
        }
        (*d_queries)[i] = through_norm(std::move(da), a[i], na[i]);
      }
    }
    if (d_keys) {
      d_keys->assign(n, {});
      for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> db(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double c = g[i * n + j] / temperature;
          for (std::size_t k = 0; k < d; ++k) db[k] += c * a[i][k];
        }
        (*d_keys)[j] = through_norm(std::move(db), b[j], nb[j]);
      }
    }
  }
  return loss;
}

namespace {

class Adam {
 public:
  explicit Adam(std::size_t size, double lr) : lr_(lr), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1 - kBeta2) * grad[i] * grad[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

using Crops = std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>;

double batch_loss(const RetrievalModel& model, const Crops& crops, std::size_t begin, std::size_t end, double tau) {
  std::vector<std::vector<double>> q, k;
  for (std::size_t i = begin; i < end; ++i) {
    q.push_back(model.embed_buckets(crops[i].first));
    k.push_back(model.embed_buckets(crops[i].second));
  }
  return info_nce(q, k, tau);
}

}  // namespace

RetrievalModel train_retriever(std::span<const std::string> corpus, const RetrieverConfig& config,
                               RetrieverTrainReport* report) {
  if (config.epochs < 0 || !(config.lr > 0) || !(config.temperature > 0) || config.crop_min <= 0 ||
      config.crop_max > 1 || config.crop_min > config.crop_max) {
    throw RetrieverError(RetrieverErrc::bad_config, "invalid retriever training configuration");
  }
  if (config.batch < 2) throw RetrieverError(RetrieverErrc::batch_too_small, "batch size must be at least 2");

  RetrievalModel model = init_retriever(config);
  std::vector<std::vector<std::size_t>> docs;
  for (const auto& text : corpus) {
    std::vector<std::size_t> buckets;
    for (const auto& t : text::tokenize(text)) buckets.push_back(model.bucket_of(t));
    if (buckets.empty()) {
      spdlog::warn("retriever corpus: skipping a document without tokens");
      continue;
    }
    docs.push_back(std::move(buckets));
  }
  if (docs.size() < config.batch) {
    throw RetrieverError(RetrieverErrc::batch_too_small,
                         fmt::format("corpus has {} usable documents, batch size is {}", docs.size(), config.batch));
  }

  const std::size_t full = docs.size() / config.batch * config.batch;
  Crops eval_crops;
  {
    Rng eval_rng(config.seed ^ 0x5bd1e9955bd1e995ULL);
    for (std::size_t i = 0; i < full; ++i) {
      auto c1 = random_crop(docs[i], config.crop_min, config.crop_max, eval_rng);
      auto c2 = random_crop(docs[i], config.crop_min, config.crop_max, eval_rng);
      eval_crops.emplace_back(std::move(c1), std::move(c2));
    }
  }
  auto evaluate = [&] {
    double total = 0;
    for (std::size_t s = 0; s < full; s += config.batch) {
      total += batch_loss(model, eval_crops, s, s + config.batch, config.temperature);
    }
    const double loss = total / static_cast<double>(full / config.batch);
    if (!std::isfinite(loss)) throw RetrieverError(RetrieverErrc::non_finite_loss, "non-finite InfoNCE loss");
    return loss;
  };

  RetrieverTrainReport local;
  local.loss_curve.push_back(evaluate());

  const std::size_t d = model.dim();
  Adam table_opt(model.table().size(), config.lr);
  Adam offset_opt(d, config.lr);
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed + 1);
  std::vector<double> table_grad(model.table().size(), 0.0);
  std::vector<double> offset_grad(d, 0.0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t s = 0; s + config.batch <= order.size(); s += config.batch) {
      Crops crops;
      for (std::size_t i = s; i < s + config.batch; ++i) {
        auto c1 = random_crop(docs[order[i]], config.crop_min, config.crop_max, rng);
        auto c2 = random_crop(docs[order[i]], config.crop_min, config.crop_max, rng);
        crops.emplace_back(std::move(c1), std::move(c2));
      }
      std::vector<std::vector<double>> q, k, dq, dk;
      for (const auto& [c1, c2] : crops) {
        q.push_back(model.embed_buckets(c1));
        k.push_back(model.embed_buckets(c2));
      }
      const double loss = info_nce(q, k, config.temperature, &dq, &dk);
      if (!std::isfinite(loss)) {
        throw RetrieverError(RetrieverErrc::non_finite_loss, fmt::format("non-finite loss in epoch {}", epoch + 1));
      }
      std::fill(table_grad.begin(), table_grad.end(), 0.0);
      std::fill(offset_grad.begin(), offset_grad.end(), 0.0);
      auto scatter = [&](const std::vector<std::size_t>& crop, const std::vector<double>& grad) {
        const double inv = 1.0 / static_cast<double>(crop.size());
        for (std::size_t j = 0; j < d; ++j) offset_grad[j] += grad[j];
        for (auto b : crop) {
          double* row = table_grad.data() + b * d;
          for (std::size_t j = 0; j < d; ++j) row[j] += grad[j] * inv;
        }
      };
      for (std::size_t i = 0; i < crops.size(); ++i) {
        scatter(crops[i].first, dq[i]);
        scatter(crops[i].second, dk[i]);
      }
      table_opt.step(model.table(), table_grad);
      offset_opt.step(model.offset(), offset_grad);
    }
    local.loss_curve.push_back(evaluate());
    spdlog::debug("retriever epoch {}: loss {:.5f}", epoch + 1, local.loss_curve.back());
  }
  if (report) *report = std::move(local);
  return model;
}

// --- Index ------------------------------------------------------------------

void PrecedentIndex::attach(const CaseDatabase& db) {
  std::unordered_map<std::string, const CaseDatabaseEntry*> by_id;
  for (const auto& e : db.entries) by_id[e.id] = &e;
  std::vector<ReorganizedFact> bound;
  bound.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = by_id.find(ids[i]);
    if (it == by_id.end()) {
      throw RetrieverError(RetrieverErrc::bad_index_file,
                           fmt::format("index entry '{}' is not in the case database", ids[i]));
    }
    if (!(it->second->verdict == verdicts[i])) {
      throw RetrieverError(RetrieverErrc::bad_index_file,
                           fmt::format("labels of '{}' differ between index and case database", ids[i]));
    }
    bound.push_back(it->second->rf);
  }
  facts = std::move(bound);
}

std::string PrecedentIndex::serialize() const {
  BinaryWriter w;
  w.raw(kIndexMagic);
  w.u32(kFormatVersion);
  w.u64(model_hash);
  w.u32(static_cast<std::uint32_t>(dim));
  w.u32(static_cast<std::uint32_t>(ids.size()));
  w.f32s(vectors);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    w.str(ids[i]);
    w.str(verdicts[i].article);
    w.str(verdicts[i].charge);
    w.str(verdicts[i].term);
  }
  return w.bytes();
}

void PrecedentIndex::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

PrecedentIndex PrecedentIndex::deserialize(std::string bytes) {
  BinaryReader r(std::move(bytes));
  try {
    if (r.raw(kIndexMagic.size()) != kIndexMagic) {
      throw RetrieverError(RetrieverErrc::bad_index_file, "not a precedent index file");
    }
    if (r.u32() != kFormatVersion) throw RetrieverError(RetrieverErrc::bad_index_file, "unsupported index version");
    PrecedentIndex idx;
    idx.model_hash = r.u64();
    idx.dim = r.u32();
    const std::size_t count = r.u32();
    idx.vectors = r.f32s(count * idx.dim);
    for (std::size_t i = 0; i < count; ++i) {
      idx.ids.push_back(r.str());
      Verdict v;
      v.article = r.str();
      v.charge = r.str();
      v.term = r.str();
      idx.verdicts.push_back(std::move(v));
    }
    if (!r.at_end()) throw RetrieverError(RetrieverErrc::bad_index_file, "trailing bytes in index file");
    return idx;
  } catch (const RetrieverError&) {
    throw;
  } catch (const Error& e) {
    throw RetrieverError(RetrieverErrc::bad_index_file, e.what());
  }
}

PrecedentIndex PrecedentIndex::load(const std::filesystem::path& path, const RetrievalEncoder& model) {
  PrecedentIndex idx;
  try {
    idx = deserialize(read_file(path));
  } catch (const RetrieverError& e) {
    throw RetrieverError(e.kind(), fmt::format("{}: {}", path.string(), e.what()));
  }
  const auto expected = model.version_hash();
  if (idx.model_hash != expected || idx.dim != model.dim()) {
    throw RetrieverError(RetrieverErrc::stale_model_hash,
                         fmt::format("{}: built with model {}, current model is {}", path.string(),
                                     hex64(idx.model_hash), hex64(expected)));
  }
  return idx;
}

PrecedentIndex index_database(const CaseDatabase& db, const RetrievalEncoder& model) {
  PrecedentIndex idx;
  idx.model_hash = model.version_hash();
  idx.dim = model.dim();
  idx.vectors.reserve(db.size() * idx.dim);
  for (const auto& e : db.entries) {
    const auto v = model.embed(concat_reorganized(e.rf));
    for (double x : v) {
      if (!std::isfinite(x)) {
        throw RetrieverError(RetrieverErrc::non_finite_loss, fmt::format("non-finite embedding for '{}'", e.id));
      }
      idx.vectors.push_back(static_cast<float>(x));
    }
    idx.ids.push_back(e.id);
    idx.verdicts.push_back(e.verdict);
    idx.facts.push_back(e.rf);
  }
  return idx;
}

// --- Selection --------------------------------------------------------------

std::vector<std::optional<LabelMatch>> best_per_label(std::span<const float> query, Task task,
                                                      std::span<const LabelId> labels, const PrecedentIndex& index) {
  if (query.size() != index.dim) {
    throw RetrieverError(RetrieverErrc::dimension_mismatch,
                         fmt::format("query dimension {} does not match index dimension {}", query.size(), index.dim));
  }
  std::unordered_map<LabelId, std::size_t> slot;
  for (std::size_t i = 0; i < labels.size(); ++i) slot.try_emplace(labels[i], i);
  std::vector<std::optional<LabelMatch>> best(labels.size());
  for (std::size_t e = 0; e < index.size(); ++e) {
    auto it = slot.find(index.verdicts[e][task]);
    if (it == slot.end()) continue;
    const double score = cosine_similarity(query, index.vector(e));
    auto& cur = best[it->second];
    if (!cur || score > cur->score || (score == cur->score && index.ids[e] < index.ids[cur->entry])) {
      cur = LabelMatch{e, score};
    }
  }
  // Duplicate labels share the first slot's answer.
  for (std::size_t i = 0; i < labels.size(); ++i) best[i] = best[slot.at(labels[i])];
  return best;
}

std::vector<Precedent> select_precedents(std::span<const float> query, const CandidateSet& candidates,
                                         const PrecedentIndex& index) {
  const auto best = best_per_label(query, candidates.task, candidates.labels, index);
  std::vector<Precedent> out;
  out.reserve(best.size());
  for (std::size_t i = 0; i < best.size(); ++i) {
    if (!best[i]) {
      throw RetrieverError(RetrieverErrc::no_case_with_label,
                           fmt::format("no database case has {} label '{}'", task_name(candidates.task),
                                       candidates.labels[i]));
    }
    const auto e = best[i]->entry;
    Precedent p;
    p.case_id = index.ids[e];
    if (e < index.facts.size()) p.rf = index.facts[e];
    p.verdict = index.verdicts[e];
    p.score = best[i]->score;
    p.matched_label = candidates.labels[i];
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Precedent> select_precedents(const ReorganizedFact& query, const CandidateSet& candidates,
                                         const PrecedentIndex& index, const RetrievalEncoder& model) {
  return select_precedents(to_float(model.embed(concat_reorganized(query))), candidates, index);
}

}  // namespace pljp
