#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "iia/embeddings.hpp"
#include "iia/similarity.hpp"

namespace iia {

enum class UpdateMode { query_only, gallery_offline, gallery_online };
enum class SimilarityTransform { none, reciprocal };

/// Hyperparameters of one aggregation run. Defaults are the Market-1501
/// operating point (alpha 0.82, K 11, n 6, tau 0.2).
struct IiaConfig {
  double alpha = 0.82;  ///< weight kept by the current impression each step
  std::size_t k = 11;   ///< neighbors aggregated per item
  std::size_t iters = 6;
  double tau = 0.2;     ///< softmax temperature
  UpdateMode mode = UpdateMode::gallery_online;
  /// Gallery modes: all queries share one joint matrix with the gallery.
  /// Query-only / offline modes: queries may aggregate from other queries.
  bool joint_queries = true;
  Metric metric = Metric::cosine;
  SimilarityTransform transform = SimilarityTransform::none;
  ReciprocalParams reciprocal;
  /// Keep D^t and S^t for every iteration in iterate().
  bool retain_trace = false;

  void validate() const;  // throws ConfigError
};

/// Dense square matrix U with U(i, j) = alpha [i == j] + (1 - alpha) W[j][i].
/// Column j holds the weights item j gathers, so D * U advances every item by one step.
class UpdateMatrix {
 public:
  explicit UpdateMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {}
  const Eigen::MatrixXd& values() const { return values_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.rows()); }

 private:
  Eigen::MatrixXd values_;
};

/// Throws ContractError when a row of `weights` is not a positive probability vector.
UpdateMatrix build_update_matrix(const TopKGraph& weights, double alpha);

struct IterationTrace {
  EmbeddingSet embeddings;      ///< D^n
  SimilarityMatrix similarity;  ///< S^n over all items
  /// D^0..D^n and S^0..S^n, filled only when IiaConfig::retain_trace is set.
  std::vector<EmbeddingSet> embedding_history;
  std::vector<SimilarityMatrix> similarity_history;
};

/// Runs the aggregation loop on one matrix where every item is both updated
/// and a neighbor candidate. Requires cfg.metric != precomputed.
IterationTrace iterate(const EmbeddingSet& d0, const IiaConfig& cfg);

/// Same loop driven by a precomputed square similarity, treated as the Gram
/// matrix of implicit features: G <- U^T G U each step, attention read from
/// its cosine normalization. Returns the normalized similarity history.
struct KernelTrace {
  SimilarityMatrix similarity;
  std::vector<SimilarityMatrix> similarity_history;
};
KernelTrace iterate_precomputed(const SimilarityMatrix& s0, const IiaConfig& cfg);

struct RunResult {
  SimilarityMatrix query_gallery;
  std::optional<EmbeddingSet> queries;  ///< final query impressions (embedding input only)
  std::optional<EmbeddingSet> gallery;  ///< final gallery, when a single one exists
  std::vector<double> iteration_seconds;
  double offline_seconds = 0.0;  ///< gallery pre-iteration in gallery_offline mode
};

/// Called with t = 0..iters and the query-gallery similarity after step t.
using IterationObserver = std::function<void(std::size_t, const SimilarityMatrix&)>;

RunResult run(const EmbeddingSet& queries, const EmbeddingSet& gallery, const IiaConfig& cfg,
              const IterationObserver& observer = {});

/// `joint` is a square similarity over items whose roles are given in order.
RunResult run_precomputed(const SimilarityMatrix& joint, std::span<const Role> roles,
                          const IiaConfig& cfg, const IterationObserver& observer = {});

/// Per-query update against a frozen gallery. One step costs a gallery scan,
/// a top-K pass and a K-term weighted sum.
class OnlineQueryUpdater {
 public:
  OnlineQueryUpdater(const Eigen::MatrixXd& gallery, const IiaConfig& cfg);

  Eigen::VectorXd step(const Eigen::VectorXd& query) const;
  Eigen::VectorXd update(const Eigen::VectorXd& query) const;

  std::size_t effective_k() const { return k_; }

 private:
  Eigen::MatrixXd gallery_;
  Eigen::MatrixXd scoring_;  // normalized columns for cosine, raw for euclidean
  Eigen::VectorXd half_sq_norms_;
  IiaConfig cfg_;
  std::size_t k_;
};

/// Average query expansion: q' = (q + sum of its k nearest gallery vectors) / (k + 1).
EmbeddingSet aqe_expand(const EmbeddingSet& queries, const EmbeddingSet& gallery, std::size_t k,
                        bool renormalize = true);

}  // namespace iia
