#include "iia/engine.hpp"

#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include <Eigen/Sparse>

#include "iia/error.hpp"

namespace iia {

namespace {

// Rows of similarity computed per GEMM call in the blocked neighbor search.
constexpr std::size_t kRowBlock = 512;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t effective_k(std::size_t k, std::size_t available) {
  if (available == 1) return 1;
  if (available == 0 || k > available) {
    throw ConfigError("k=" + std::to_string(k) + " exceeds the " + std::to_string(available) +
                      " neighbor candidates available per item");
  }
  return k;
}

std::vector<std::size_t> index_range(std::size_t first, std::size_t count) {
  std::vector<std::size_t> out(count);
  std::iota(out.begin(), out.end(), first);
  return out;
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(cols[j]));
  }
  return out;
}

Eigen::MatrixXd gather_block(const Eigen::MatrixXd& m, std::span<const std::size_t> rows,
                             std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          m(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(cols[c]));
    }
  }
  return out;
}

// Items being updated in a phase and the items they may aggregate from.
struct Phase {
  std::vector<std::size_t> updatable;
  std::vector<char> candidate;
};

Phase make_phase(std::size_t n, std::vector<std::size_t> updatable,
                 std::span<const std::size_t> candidates) {
  Phase p{std::move(updatable), std::vector<char>(n, 0)};
  for (const std::size_t c : candidates) p.candidate[c] = 1;
  return p;
}

/// Mutable state of the loop: either explicit features or an implicit Gram matrix.
class Workspace {
 public:
  virtual ~Workspace() = default;
  virtual std::size_t size() const = 0;
  /// Column b holds the similarity of items[b] to every item.
  virtual Eigen::MatrixXd similarity_to_all(std::span<const std::size_t> items) const = 0;
  virtual Eigen::MatrixXd cross(std::span<const std::size_t> rows,
                                std::span<const std::size_t> cols) const = 0;
  virtual Eigen::MatrixXd full() const = 0;
  /// One aggregation step for `rows`; returns false if the new state is not finite.
  virtual bool apply(const TopKGraph& weights, std::span<const std::size_t> rows, double alpha) = 0;
};

class FeatureWorkspace final : public Workspace {
 public:
  FeatureWorkspace(Eigen::MatrixXd features, Metric metric)
      : features_(std::move(features)), metric_(metric) {
    if (!refresh()) throw DataError("zero-norm vector cannot be scored by cosine similarity");
  }

  const Eigen::MatrixXd& features() const { return features_; }
  std::size_t size() const override { return static_cast<std::size_t>(features_.cols()); }

  Eigen::MatrixXd similarity_to_all(std::span<const std::size_t> items) const override {
    const Eigen::MatrixXd block = gather_columns(scoring(), items);
    Eigen::MatrixXd s = scoring().transpose() * block;
    if (metric_ == Metric::euclidean) {
      s.colwise() -= half_sq_norms_;
      for (std::size_t b = 0; b < items.size(); ++b) {
        s.col(static_cast<Eigen::Index>(b)).array() -= half_sq_norms_(static_cast<Eigen::Index>(items[b]));
      }
    }
    return s;
  }

  Eigen::MatrixXd cross(std::span<const std::size_t> rows,
                        std::span<const std::size_t> cols) const override {
    const Eigen::MatrixXd a = gather_columns(scoring(), rows);
    const Eigen::MatrixXd b = gather_columns(scoring(), cols);
    Eigen::MatrixXd s = a.transpose() * b;
    if (metric_ == Metric::euclidean) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        s.row(static_cast<Eigen::Index>(r)).array() -= half_sq_norms_(static_cast<Eigen::Index>(rows[r]));
      }
      for (std::size_t c = 0; c < cols.size(); ++c) {
        s.col(static_cast<Eigen::Index>(c)).array() -= half_sq_norms_(static_cast<Eigen::Index>(cols[c]));
      }
    }
    return s;
  }

  Eigen::MatrixXd full() const override {
    const auto all = index_range(0, size());
    return cross(all, all);
  }

  bool apply(const TopKGraph& weights, std::span<const std::size_t> rows, double alpha) override {
    Eigen::MatrixXd next = features_;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(rows.size()); ++b) {
      Eigen::VectorXd gathered = Eigen::VectorXd::Zero(features_.rows());
      for (const auto& nb : weights.row(static_cast<std::size_t>(b))) {
        gathered += nb.weight * features_.col(static_cast<Eigen::Index>(nb.index));
      }
      const auto j = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(b)]);
      next.col(j) = alpha * features_.col(j) + (1.0 - alpha) * gathered;
    }
    features_.swap(next);
    return features_.allFinite() && refresh();
  }

 private:
  const Eigen::MatrixXd& scoring() const {
    return metric_ == Metric::cosine ? normalized_ : features_;
  }

  bool refresh() {
    if (metric_ == Metric::cosine) {
      const Eigen::RowVectorXd norms = features_.colwise().norm();
      if ((norms.array() <= 0.0).any()) return false;
      normalized_ = features_.array().rowwise() / norms.array();
    } else {
      half_sq_norms_ = 0.5 * features_.colwise().squaredNorm().transpose();
    }
    return true;
  }

  Eigen::MatrixXd features_;
  Metric metric_;
  Eigen::MatrixXd normalized_;
  Eigen::VectorXd half_sq_norms_;
};

class KernelWorkspace final : public Workspace {
 public:
  explicit KernelWorkspace(Eigen::MatrixXd gram) : gram_(std::move(gram)) {
    if (gram_.rows() != gram_.cols()) throw ShapeError("precomputed similarity must be square");
    if (!refresh()) throw DataError("precomputed similarity needs a positive diagonal");
  }

  std::size_t size() const override { return static_cast<std::size_t>(gram_.rows()); }

  Eigen::MatrixXd similarity_to_all(std::span<const std::size_t> items) const override {
    return gather_columns(cosine_, items);
  }

  Eigen::MatrixXd cross(std::span<const std::size_t> rows,
                        std::span<const std::size_t> cols) const override {
    return gather_block(cosine_, rows, cols);
  }

  Eigen::MatrixXd full() const override { return cosine_; }

  bool apply(const TopKGraph& weights, std::span<const std::size_t> rows, double alpha) override {
    const auto n = static_cast<Eigen::Index>(size());
    std::vector<char> moving(size(), 0);
    for (const std::size_t r : rows) moving[r] = 1;
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(size() + rows.size() * weights.k());
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!moving[static_cast<std::size_t>(j)]) entries.emplace_back(j, j, 1.0);
    }
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const auto j = static_cast<Eigen::Index>(rows[b]);
      entries.emplace_back(j, j, alpha);
      for (const auto& nb : weights.row(b)) {
        entries.emplace_back(static_cast<Eigen::Index>(nb.index), j, (1.0 - alpha) * nb.weight);
      }
    }
    Eigen::SparseMatrix<double> update(n, n);
    update.setFromTriplets(entries.begin(), entries.end());
    const Eigen::MatrixXd right = gram_ * update;
    Eigen::MatrixXd next = update.transpose() * right;
    gram_ = 0.5 * (next + next.transpose());
    return gram_.allFinite() && refresh();
  }

 private:
  bool refresh() {
    const Eigen::VectorXd diag = gram_.diagonal();
    if ((diag.array() <= 0.0).any()) return false;
    const Eigen::VectorXd inv = diag.array().sqrt().inverse();
    cosine_ = inv.asDiagonal() * gram_ * inv.asDiagonal();
    return true;
  }

  Eigen::MatrixXd gram_;
  Eigen::MatrixXd cosine_;
};

Eigen::MatrixXd transformed_full(const Workspace& ws, const IiaConfig& cfg) {
  SimilarityMatrix s(ws.full());
  if (cfg.transform == SimilarityTransform::reciprocal) s = reciprocal_transform(s, cfg.reciprocal);
  return s.values();
}

Eigen::MatrixXd query_gallery_block(const Workspace& ws, std::span<const std::size_t> queries,
                                    std::span<const std::size_t> gallery, const IiaConfig& cfg) {
  if (cfg.transform == SimilarityTransform::none) return ws.cross(queries, gallery);
  return gather_block(transformed_full(ws, cfg), queries, gallery);
}

TopKGraph select_neighbors(const Workspace& ws, const Phase& phase, std::size_t k,
                           const IiaConfig& cfg) {
  const std::size_t n = ws.size();
  TopKGraph graph(phase.updatable.size(), k, true);
  const auto choose = [&](std::size_t b, const double* column) {
    const std::size_t self = phase.updatable[b];
    select_top_k(std::span<const double>(column, n), graph.row(b),
                 [&](std::size_t j) { return j == self || !phase.candidate[j]; });
    softmax_in_place(graph.row(b), cfg.tau);
  };

  if (cfg.transform == SimilarityTransform::reciprocal) {
    // column i of the transpose is row i of the transformed matrix
    const Eigen::MatrixXd rows_as_columns = transformed_full(ws, cfg).transpose();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(phase.updatable.size()); ++b) {
      const auto item = static_cast<Eigen::Index>(phase.updatable[static_cast<std::size_t>(b)]);
      choose(static_cast<std::size_t>(b), rows_as_columns.col(item).data());
    }
    return graph;
  }

  const std::span<const std::size_t> all(phase.updatable);
  for (std::size_t start = 0; start < all.size(); start += kRowBlock) {
    const auto items = all.subspan(start, std::min(kRowBlock, all.size() - start));
    const Eigen::MatrixXd s = ws.similarity_to_all(items);
    if (!s.allFinite()) throw NumericalError("non-finite similarity");
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(items.size()); ++b) {
      choose(start + static_cast<std::size_t>(b), s.col(b).data());
    }
  }
  return graph;
}

/// Runs cfg.iters steps of `phase`, calling `after_step(t)` after each one.
void run_phase(Workspace& ws, const Phase& phase, const IiaConfig& cfg,
               std::vector<double>* seconds, const std::function<void(std::size_t)>& after_step) {
  std::size_t k = cfg.k;
  if (!phase.updatable.empty()) {
    const auto candidates = static_cast<std::size_t>(
        std::count(phase.candidate.begin(), phase.candidate.end(), char{1}));
    std::size_t available = candidates;
    for (const std::size_t i : phase.updatable) {
      available = std::min(available, candidates - (phase.candidate[i] ? 1u : 0u));
    }
    k = effective_k(cfg.k, available);
  }
  for (std::size_t t = 1; t <= cfg.iters; ++t) {
    const auto start = Clock::now();
    if (!phase.updatable.empty()) {
      const TopKGraph weights = select_neighbors(ws, phase, k, cfg);
      if (!ws.apply(weights, phase.updatable, cfg.alpha)) {
        throw NumericalError("non-finite or zero impression at iteration " + std::to_string(t));
      }
    }
    if (seconds != nullptr) seconds->push_back(seconds_since(start));
    if (after_step) after_step(t);
  }
}

void check_roles(const EmbeddingSet& set, Role expected, const char* what) {
  for (const auto& rec : set.items()) {
    if (rec.role != expected) {
      throw ContractError(std::string(what) + " set contains item '" + rec.item_id +
                          "' tagged as " + std::string(to_string(rec.role)));
    }
  }
}

Eigen::MatrixXd kernel_for(Metric metric, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return metric == Metric::euclidean ? euclidean_kernel(a, b) : cosine_kernel(a, b);
}

/// Independent per-query updates of `queries` against the fixed `gallery`.
Eigen::MatrixXd update_queries_independently(const Eigen::MatrixXd& queries,
                                             const Eigen::MatrixXd& gallery, const IiaConfig& cfg,
                                             std::vector<double>& seconds,
                                             const IterationObserver& observer) {
  Eigen::MatrixXd current = queries;
  if (observer) observer(0, SimilarityMatrix(kernel_for(cfg.metric, current, gallery)));
  if (current.cols() == 0) {
    seconds.assign(cfg.iters, 0.0);
    return current;
  }
  const OnlineQueryUpdater updater(gallery, cfg);
  for (std::size_t t = 1; t <= cfg.iters; ++t) {
    const auto start = Clock::now();
#pragma omp parallel for schedule(dynamic, 4)
    for (Eigen::Index q = 0; q < current.cols(); ++q) current.col(q) = updater.step(current.col(q));
    if (!current.allFinite()) {
      throw NumericalError("non-finite query impression at iteration " + std::to_string(t));
    }
    seconds.push_back(seconds_since(start));
    if (observer) observer(t, SimilarityMatrix(kernel_for(cfg.metric, current, gallery)));
  }
  return current;
}

struct JointLayout {
  std::vector<std::size_t> queries;
  std::vector<std::size_t> gallery;
  std::vector<std::size_t> all;
};

JointLayout stacked_layout(std::size_t nq, std::size_t ng) {
  return {index_range(0, nq), index_range(nq, ng), index_range(0, nq + ng)};
}

std::vector<std::size_t> concat_indices(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::vector<std::size_t> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

/// Query phase shared by query_only and the second half of gallery_offline
/// when queries see each other: queries move, gallery stays fixed.
void update_queries_jointly(Workspace& ws, const JointLayout& layout, const IiaConfig& cfg,
                            std::vector<double>& seconds, const IterationObserver& observer) {
  const auto candidates = concat_indices(layout.queries, layout.gallery);
  const Phase phase = make_phase(ws.size(), layout.queries, candidates);
  if (observer) observer(0, SimilarityMatrix(query_gallery_block(ws, layout.queries, layout.gallery, cfg)));
  run_phase(ws, phase, cfg, &seconds, [&](std::size_t t) {
    if (observer) observer(t, SimilarityMatrix(query_gallery_block(ws, layout.queries, layout.gallery, cfg)));
  });
}

void update_all_jointly(Workspace& ws, const JointLayout& layout, const IiaConfig& cfg,
                        std::vector<double>& seconds, const IterationObserver& observer) {
  const Phase phase = make_phase(ws.size(), layout.all, layout.all);
  if (observer) observer(0, SimilarityMatrix(query_gallery_block(ws, layout.queries, layout.gallery, cfg)));
  run_phase(ws, phase, cfg, &seconds, [&](std::size_t t) {
    if (observer) observer(t, SimilarityMatrix(query_gallery_block(ws, layout.queries, layout.gallery, cfg)));
  });
}

/// Strict per-query gallery_online: every query iterates with its own copy of
/// the gallery. `make_workspace(q)` builds the [q | gallery] workspace.
Eigen::MatrixXd per_query_online(std::size_t nq, std::size_t ng, const IiaConfig& cfg,
                                 const std::function<std::unique_ptr<Workspace>(std::size_t)>& make_workspace,
                                 std::vector<double>& seconds, const IterationObserver& observer,
                                 const std::function<void(std::size_t, const Workspace&)>& on_done = {}) {
  Eigen::MatrixXd final_qg(static_cast<Eigen::Index>(nq), static_cast<Eigen::Index>(ng));
  std::vector<Eigen::MatrixXd> per_step;
  if (observer) per_step.assign(cfg.iters + 1, final_qg);
  seconds.assign(cfg.iters, 0.0);
  const JointLayout layout = stacked_layout(1, ng);
  const Phase phase = make_phase(ng + 1, layout.all, layout.all);
  for (std::size_t q = 0; q < nq; ++q) {
    auto ws = make_workspace(q);
    const auto record = [&](std::size_t t) {
      if (!observer) return;
      per_step[t].row(static_cast<Eigen::Index>(q)) = ws->cross(layout.queries, layout.gallery);
    };
    record(0);
    std::vector<double> local;
    run_phase(*ws, phase, cfg, &local, record);
    for (std::size_t t = 0; t < local.size(); ++t) seconds[t] += local[t];
    final_qg.row(static_cast<Eigen::Index>(q)) = ws->cross(layout.queries, layout.gallery);
    if (on_done) on_done(q, *ws);
  }
  if (observer) {
    for (std::size_t t = 0; t <= cfg.iters; ++t) observer(t, SimilarityMatrix(per_step[t]));
  }
  return final_qg;
}

}  // namespace

void IiaConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive and finite");
  if (k < 1) throw ConfigError("k must be at least 1");
  if (transform == SimilarityTransform::reciprocal) {
    if (reciprocal.k_r < 1) throw ConfigError("reciprocal k_r must be at least 1");
    if (!(reciprocal.lambda_mix >= 0.0 && reciprocal.lambda_mix <= 1.0)) {
      throw ConfigError("reciprocal lambda must lie in [0, 1]");
    }
  }
}

UpdateMatrix build_update_matrix(const TopKGraph& weights, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  const std::size_t n = weights.num_rows();
  Eigen::MatrixXd u = alpha * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n),
                                                        static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    double total = 0.0;
    for (const auto& nb : weights.row(j)) {
      if (!(nb.weight > 0.0)) throw ContractError("attention weights must be strictly positive");
      if (nb.index >= n) throw ContractError("neighbor index outside the update matrix");
      total += nb.weight;
      u(static_cast<Eigen::Index>(nb.index), static_cast<Eigen::Index>(j)) += (1.0 - alpha) * nb.weight;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("attention row " + std::to_string(j) + " sums to " + std::to_string(total));
    }
  }
  return UpdateMatrix(std::move(u));
}

IterationTrace iterate(const EmbeddingSet& d0, const IiaConfig& cfg) {
  cfg.validate();
  if (cfg.metric == Metric::precomputed) {
    throw ConfigError("precomputed metric has no feature matrix; use iterate_precomputed");
  }
  if (d0.is_empty()) throw ContractError("iterate needs at least one item");

  FeatureWorkspace ws(d0.matrix(), cfg.metric);
  const auto all = index_range(0, d0.size());
  const Phase phase = make_phase(d0.size(), all, all);

  std::vector<EmbeddingSet> embedding_history;
  std::vector<SimilarityMatrix> similarity_history;
  const auto snapshot = [&](std::size_t) {
    if (!cfg.retain_trace) return;
    embedding_history.push_back(d0.with_matrix(ws.features()));
    similarity_history.emplace_back(transformed_full(ws, cfg));
  };
  snapshot(0);
  run_phase(ws, phase, cfg, nullptr, snapshot);

  if (cfg.iters == 0) {
    return {d0, SimilarityMatrix(transformed_full(ws, cfg)), std::move(embedding_history),
            std::move(similarity_history)};
  }
  return {d0.with_matrix(ws.features()), SimilarityMatrix(transformed_full(ws, cfg)),
          std::move(embedding_history), std::move(similarity_history)};
}

KernelTrace iterate_precomputed(const SimilarityMatrix& s0, const IiaConfig& cfg) {
  cfg.validate();
  if (!s0.is_square()) throw ShapeError("precomputed similarity must be square");
  if (s0.rows() == 0) throw ContractError("iterate needs at least one item");
  KernelWorkspace ws(s0.values());
  const auto all = index_range(0, s0.rows());
  const Phase phase = make_phase(s0.rows(), all, all);
  std::vector<SimilarityMatrix> history;
  const auto snapshot = [&](std::size_t) {
    if (cfg.retain_trace) history.emplace_back(transformed_full(ws, cfg));
  };
  snapshot(0);
  run_phase(ws, phase, cfg, nullptr, snapshot);
  return {SimilarityMatrix(transformed_full(ws, cfg)), std::move(history)};
}

RunResult run(const EmbeddingSet& queries, const EmbeddingSet& gallery, const IiaConfig& cfg,
              const IterationObserver& observer) {
  cfg.validate();
  if (cfg.metric == Metric::precomputed) {
    throw ConfigError("precomputed metric needs a similarity input; use run_precomputed");
  }
  if (queries.dim() != gallery.dim()) {
    throw ShapeError("query dim " + std::to_string(queries.dim()) + " != gallery dim " +
                     std::to_string(gallery.dim()));
  }
  if (gallery.is_empty()) throw ContractError("gallery is empty");
  if (cfg.transform != SimilarityTransform::none && !cfg.joint_queries) {
    throw ConfigError("similarity transforms need joint_queries");
  }
  check_roles(queries, Role::query, "query");
  check_roles(gallery, Role::gallery, "gallery");

  const std::size_t nq = queries.size();
  const std::size_t ng = gallery.size();
  const JointLayout layout = stacked_layout(nq, ng);
  RunResult result;

  const auto finish_joint = [&](const FeatureWorkspace& ws, bool gallery_moved) {
    result.query_gallery = SimilarityMatrix(query_gallery_block(ws, layout.queries, layout.gallery, cfg));
    result.queries = queries.with_matrix(ws.features().leftCols(static_cast<Eigen::Index>(nq)));
    result.gallery = gallery_moved
                         ? gallery.with_matrix(ws.features().rightCols(static_cast<Eigen::Index>(ng)))
                         : gallery;
  };

  switch (cfg.mode) {
    case UpdateMode::query_only:
    case UpdateMode::gallery_offline: {
      EmbeddingSet fixed_gallery = gallery;
      if (cfg.mode == UpdateMode::gallery_offline) {
        const auto start = Clock::now();
        FeatureWorkspace offline(gallery.matrix(), cfg.metric);
        const auto all = index_range(0, ng);
        run_phase(offline, make_phase(ng, all, all), cfg, nullptr, {});
        fixed_gallery = gallery.with_matrix(offline.features());
        result.offline_seconds = seconds_since(start);
      }
      if (cfg.joint_queries) {
        Eigen::MatrixXd stacked(queries.matrix().rows(), static_cast<Eigen::Index>(nq + ng));
        stacked << queries.matrix(), fixed_gallery.matrix();
        FeatureWorkspace ws(std::move(stacked), cfg.metric);
        update_queries_jointly(ws, layout, cfg, result.iteration_seconds, observer);
        finish_joint(ws, false);
        result.gallery = fixed_gallery;
      } else {
        const Eigen::MatrixXd final_queries = update_queries_independently(
            queries.matrix(), fixed_gallery.matrix(), cfg, result.iteration_seconds, observer);
        result.query_gallery = SimilarityMatrix(kernel_for(cfg.metric, final_queries, fixed_gallery.matrix()));
        result.queries = queries.with_matrix(final_queries);
        result.gallery = fixed_gallery;
      }
      break;
    }
    case UpdateMode::gallery_online: {
      if (cfg.joint_queries || nq == 0) {
        Eigen::MatrixXd stacked(queries.matrix().rows(), static_cast<Eigen::Index>(nq + ng));
        stacked << queries.matrix(), gallery.matrix();
        FeatureWorkspace ws(std::move(stacked), cfg.metric);
        update_all_jointly(ws, layout, cfg, result.iteration_seconds, observer);
        finish_joint(ws, true);
      } else {
        Eigen::MatrixXd final_queries = queries.matrix();
        const auto make = [&](std::size_t q) -> std::unique_ptr<Workspace> {
          Eigen::MatrixXd stacked(gallery.matrix().rows(), static_cast<Eigen::Index>(ng + 1));
          stacked << queries.matrix().col(static_cast<Eigen::Index>(q)), gallery.matrix();
          return std::make_unique<FeatureWorkspace>(std::move(stacked), cfg.metric);
        };
        // each query moves its own copy of the gallery, so only the queries are reported
        const auto keep_query = [&](std::size_t q, const Workspace& ws) {
          final_queries.col(static_cast<Eigen::Index>(q)) =
              static_cast<const FeatureWorkspace&>(ws).features().col(0);
        };
        const auto final_qg =
            per_query_online(nq, ng, cfg, make, result.iteration_seconds, observer, keep_query);
        result.query_gallery = SimilarityMatrix(final_qg);
        result.queries = queries.with_matrix(std::move(final_queries));
      }
      break;
    }
  }
  return result;
}

RunResult run_precomputed(const SimilarityMatrix& joint, std::span<const Role> roles,
                          const IiaConfig& cfg, const IterationObserver& observer) {
  cfg.validate();
  if (!joint.is_square() || joint.rows() != roles.size()) {
    throw ShapeError("precomputed similarity must be square with one row per item");
  }
  if (cfg.transform != SimilarityTransform::none && !cfg.joint_queries) {
    throw ConfigError("similarity transforms need joint_queries");
  }
  JointLayout layout;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    (roles[i] == Role::query ? layout.queries : layout.gallery).push_back(i);
    layout.all.push_back(i);
  }
  if (layout.gallery.empty()) throw ContractError("gallery is empty");

  KernelWorkspace ws(joint.values());
  RunResult result;
  const auto n = roles.size();

  switch (cfg.mode) {
    case UpdateMode::query_only:
    case UpdateMode::gallery_offline: {
      if (cfg.mode == UpdateMode::gallery_offline) {
        const auto start = Clock::now();
        run_phase(ws, make_phase(n, layout.gallery, layout.gallery), cfg, nullptr, {});
        result.offline_seconds = seconds_since(start);
      }
      if (cfg.joint_queries) {
        update_queries_jointly(ws, layout, cfg, result.iteration_seconds, observer);
      } else {
        const Phase phase = make_phase(n, layout.queries, layout.gallery);
        if (observer) observer(0, SimilarityMatrix(ws.cross(layout.queries, layout.gallery)));
        run_phase(ws, phase, cfg, &result.iteration_seconds, [&](std::size_t t) {
          if (observer) observer(t, SimilarityMatrix(ws.cross(layout.queries, layout.gallery)));
        });
      }
      result.query_gallery = SimilarityMatrix(query_gallery_block(ws, layout.queries, layout.gallery, cfg));
      break;
    }
    case UpdateMode::gallery_online: {
      if (cfg.joint_queries || layout.queries.empty()) {
        update_all_jointly(ws, layout, cfg, result.iteration_seconds, observer);
        result.query_gallery = SimilarityMatrix(query_gallery_block(ws, layout.queries, layout.gallery, cfg));
      } else {
        const auto make = [&](std::size_t q) -> std::unique_ptr<Workspace> {
          std::vector<std::size_t> items{layout.queries[q]};
          items.insert(items.end(), layout.gallery.begin(), layout.gallery.end());
          return std::make_unique<KernelWorkspace>(gather_block(joint.values(), items, items));
        };
        result.query_gallery = SimilarityMatrix(per_query_online(
            layout.queries.size(), layout.gallery.size(), cfg, make, result.iteration_seconds, observer));
      }
      break;
    }
  }
  return result;
}

OnlineQueryUpdater::OnlineQueryUpdater(const Eigen::MatrixXd& gallery, const IiaConfig& cfg)
    : gallery_(gallery), cfg_(cfg), k_(0) {
  cfg_.validate();
  if (cfg_.metric == Metric::precomputed) throw ConfigError("online updates need feature vectors");
  if (cfg_.transform != SimilarityTransform::none) {
    throw ConfigError("online per-query updates do not support similarity transforms");
  }
  k_ = iia::effective_k(cfg_.k, static_cast<std::size_t>(gallery_.cols()));
  if (cfg_.metric == Metric::cosine) {
    const Eigen::RowVectorXd norms = gallery_.colwise().norm();
    if ((norms.array() <= 0.0).any()) throw DataError("zero-norm gallery vector");
    scoring_ = gallery_.array().rowwise() / norms.array();
  } else {
    half_sq_norms_ = 0.5 * gallery_.colwise().squaredNorm().transpose();
  }
}

Eigen::VectorXd OnlineQueryUpdater::step(const Eigen::VectorXd& query) const {
  Eigen::VectorXd scores;
  if (cfg_.metric == Metric::cosine) {
    const double norm = query.norm();
    if (!(norm > 0.0)) throw NumericalError("zero-norm query impression");
    scores.noalias() = scoring_.transpose() * (query / norm);
  } else {
    scores.noalias() = gallery_.transpose() * query;
    scores -= half_sq_norms_;
    scores.array() -= 0.5 * query.squaredNorm();
  }
  std::vector<Neighbor> top(k_);
  select_top_k(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), top);
  softmax_in_place(top, cfg_.tau);
  Eigen::VectorXd gathered = Eigen::VectorXd::Zero(query.size());
  for (const auto& nb : top) gathered += nb.weight * gallery_.col(static_cast<Eigen::Index>(nb.index));
  return cfg_.alpha * query + (1.0 - cfg_.alpha) * gathered;
}

Eigen::VectorXd OnlineQueryUpdater::update(const Eigen::VectorXd& query) const {
  Eigen::VectorXd current = query;
  for (std::size_t t = 0; t < cfg_.iters; ++t) current = step(current);
  return current;
}

}  // namespace iia
