#pragma once

#include <cstddef>
#include <filesystem>
#include <algorithm>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "iia/embeddings.hpp"

namespace iia {

/// Dense rows x cols matrix of finite similarity scores.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(Eigen::MatrixXd values);  // throws DataError on non-finite entries

  std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values_.cols()); }
  bool is_square() const { return values_.rows() == values_.cols(); }
  double operator()(std::size_t i, std::size_t j) const {
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const Eigen::MatrixXd& values() const { return values_; }

 private:
  Eigen::MatrixXd values_;
};

struct Neighbor {
  std::size_t index = 0;
  double weight = 0.0;

  bool operator==(const Neighbor&) const = default;
};

/// Per-row neighbor lists. Rows built by topk_rows all hold k entries; rows
/// given explicitly may differ in length, and k() is then the longest row.
/// Before attention_weights() the weights hold raw similarities; afterwards
/// each row is a probability vector.
class TopKGraph {
 public:
  TopKGraph() = default;
  TopKGraph(std::size_t num_rows, std::size_t k, bool excludes_self);
  TopKGraph(std::vector<std::vector<Neighbor>> rows, bool excludes_self);

  std::size_t num_rows() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t k() const { return k_; }
  bool excludes_self() const { return excludes_self_; }

  std::span<Neighbor> row(std::size_t i) {
    return {entries_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::span<const Neighbor> row(std::size_t i) const {
    return {entries_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

 private:
  std::size_t k_ = 0;
  bool excludes_self_ = true;
  std::vector<std::size_t> offsets_;
  std::vector<Neighbor> entries_;
};

enum class Metric { cosine, euclidean, precomputed };

SimilarityMatrix cosine_similarity(const EmbeddingSet& a, const EmbeddingSet& b);

/// -||a_i - b_j||^2 / 2, so larger still means more similar.
SimilarityMatrix euclidean_similarity(const EmbeddingSet& a, const EmbeddingSet& b);

/// Matrix-level kernels behind the two functions above. Columns are items.
Eigen::MatrixXd cosine_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
Eigen::MatrixXd euclidean_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Ordering used for every top-k selection: higher value first, lower index on ties.
inline bool ranks_before(const Neighbor& a, const Neighbor& b) {
  return a.weight > b.weight || (a.weight == b.weight && a.index < b.index);
}

/// Writes the out.size() best entries of `values` into `out` in rank order,
/// skipping positions for which `skip` returns true. Weights hold the raw
/// values. Caller guarantees enough admissible positions.
template <typename Skip>
void select_top_k(std::span<const double> values, std::span<Neighbor> out, Skip&& skip) {
  const std::size_t k = out.size();
  std::size_t filled = 0;
  // min-heap on rank: out[0] is the worst kept entry
  const auto worse = [](const Neighbor& a, const Neighbor& b) { return ranks_before(a, b); };
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (skip(j)) continue;
    const Neighbor cand{j, values[j]};
    if (filled < k) {
      out[filled++] = cand;
      std::push_heap(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(filled), worse);
    } else if (ranks_before(cand, out[0])) {
      std::pop_heap(out.begin(), out.end(), worse);
      out[k - 1] = cand;
      std::push_heap(out.begin(), out.end(), worse);
    }
  }
  std::sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(filled), ranks_before);
}

inline void select_top_k(std::span<const double> values, std::span<Neighbor> out) {
  select_top_k(values, out, [](std::size_t) { return false; });
}

/// Per-row top-k. With exclude_self, column i is never chosen for row i.
TopKGraph topk_rows(const SimilarityMatrix& s, std::size_t k, bool exclude_self);

/// Softmax with temperature over each row's neighbors, read from `raw`.
TopKGraph attention_weights(const TopKGraph& g, const SimilarityMatrix& raw, double tau);

/// In-place softmax over neighbor weights (which must hold raw similarities).
void softmax_in_place(std::span<Neighbor> row, double tau);

struct ReciprocalParams {
  std::size_t k_r = 20;
  double lambda_mix = 0.3;
};

/// lambda_mix * s + (1 - lambda_mix) * Jaccard(R(i), R(j)) where R(i) is i's
/// k_r-reciprocal neighbor set plus i itself.
SimilarityMatrix reciprocal_transform(const SimilarityMatrix& s, std::size_t k_r, double lambda_mix);
inline SimilarityMatrix reciprocal_transform(const SimilarityMatrix& s, const ReciprocalParams& p) {
  return reciprocal_transform(s, p.k_r, p.lambda_mix);
}

SimilarityMatrix load_similarity(const std::filesystem::path& path);
void save_similarity(const SimilarityMatrix& s, const std::filesystem::path& path);

}  // namespace iia
