#include "iia/similarity.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "binary_io.hpp"
#include "iia/error.hpp"

namespace iia {

namespace {

constexpr std::string_view kSimilarityMagic = "SIM1";

Eigen::MatrixXd normalized_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double norm = out.col(c).norm();
    if (!(norm > 0.0)) throw DataError("zero-norm vector at column " + std::to_string(c));
    out.col(c) /= norm;
  }
  return out;
}

void check_same_dim(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("dimension mismatch: " + std::to_string(a.rows()) + " vs " +
                     std::to_string(b.rows()));
  }
}

}  // namespace

SimilarityMatrix::SimilarityMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
  if (!values_.allFinite()) throw DataError("similarity matrix contains non-finite entries");
}

TopKGraph::TopKGraph(std::size_t num_rows, std::size_t k, bool excludes_self)
    : k_(k), excludes_self_(excludes_self), offsets_(num_rows + 1), entries_(num_rows * k) {
  for (std::size_t i = 0; i <= num_rows; ++i) offsets_[i] = i * k;
}

TopKGraph::TopKGraph(std::vector<std::vector<Neighbor>> rows, bool excludes_self)
    : excludes_self_(excludes_self), offsets_{0} {
  for (auto& r : rows) {
    k_ = std::max(k_, r.size());
    entries_.insert(entries_.end(), r.begin(), r.end());
    offsets_.push_back(entries_.size());
  }
}

Eigen::MatrixXd cosine_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_same_dim(a, b);
  const Eigen::MatrixXd an = normalized_columns(a);
  const Eigen::MatrixXd bn = normalized_columns(b);
  return an.transpose() * bn;
}

Eigen::MatrixXd euclidean_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  check_same_dim(a, b);
  Eigen::MatrixXd s = a.transpose() * b;
  const Eigen::VectorXd an = a.colwise().squaredNorm().transpose();
  const Eigen::RowVectorXd bn = b.colwise().squaredNorm();
  s.colwise() -= 0.5 * an;
  s.rowwise() -= 0.5 * bn;
  return s;
}

SimilarityMatrix cosine_similarity(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError("dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()));
  }
  const auto zero_norm = [](const EmbeddingSet& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!(s.column(i).norm() > 0.0)) throw DataError("zero-norm vector for item '" + s.item(i).item_id + "'");
    }
  };
  zero_norm(a);
  zero_norm(b);
  return SimilarityMatrix(cosine_kernel(a.matrix(), b.matrix()));
}

SimilarityMatrix euclidean_similarity(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError("dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()));
  }
  return SimilarityMatrix(euclidean_kernel(a.matrix(), b.matrix()));
}

TopKGraph topk_rows(const SimilarityMatrix& s, std::size_t k, bool exclude_self) {
  const std::size_t available = s.cols() - ((exclude_self && s.cols() > 0) ? 1 : 0);
  if (k < 1 || k > available) {
    throw ConfigError("k=" + std::to_string(k) + " out of range [1, " + std::to_string(available) +
                      "]");
  }
  if (exclude_self && s.rows() > s.cols()) {
    throw ShapeError("self-exclusion needs rows <= cols");
  }
  TopKGraph g(s.rows(), k, exclude_self);
  // Eigen is column-major; copy each row once so selection scans contiguous memory.
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(s.rows()); ++i) {
    const Eigen::VectorXd row = s.values().row(i).transpose();
    const auto self = static_cast<std::size_t>(i);
    select_top_k(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                 g.row(self), [&](std::size_t j) { return exclude_self && j == self; });
  }
  return g;
}

void softmax_in_place(std::span<Neighbor> row, double tau) {
  if (row.empty()) return;
  double peak = row.front().weight;
  for (const auto& n : row) peak = std::max(peak, n.weight);
  double total = 0.0;
  for (auto& n : row) {
    n.weight = std::exp((n.weight - peak) / tau);
    total += n.weight;
  }
  // far-away neighbors underflow at small tau; keep them strictly positive
  constexpr double kFloor = std::numeric_limits<double>::min();
  for (auto& n : row) n.weight = std::max(n.weight / total, kFloor);
}

TopKGraph attention_weights(const TopKGraph& g, const SimilarityMatrix& raw, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("temperature tau must be positive, got " + std::to_string(tau));
  }
  if (raw.rows() < g.num_rows()) throw ShapeError("similarity matrix has fewer rows than graph");
  TopKGraph out = g;
  for (std::size_t i = 0; i < out.num_rows(); ++i) {
    auto row = out.row(i);
    for (auto& n : row) {
      if (n.index >= raw.cols()) throw ShapeError("neighbor index outside similarity matrix");
      n.weight = raw(i, n.index);
    }
    softmax_in_place(row, tau);
  }
  return out;
}

SimilarityMatrix reciprocal_transform(const SimilarityMatrix& s, std::size_t k_r, double lambda_mix) {
  if (!s.is_square()) {
    throw ShapeError("reciprocal transform needs a square matrix, got " + std::to_string(s.rows()) +
                     "x" + std::to_string(s.cols()));
  }
  const std::size_t n = s.rows();
  if (k_r < 1 || k_r >= n) {
    throw ConfigError("k_r=" + std::to_string(k_r) + " out of range [1, " + std::to_string(n - 1) + "]");
  }
  if (!(lambda_mix >= 0.0 && lambda_mix <= 1.0)) {
    throw ConfigError("lambda_mix must lie in [0, 1]");
  }
  if (lambda_mix == 1.0) return s;

  const TopKGraph knn = topk_rows(s, k_r, true);
  // k_r nearest per row, sorted for binary search
  std::vector<std::vector<std::size_t>> forward(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& nb : knn.row(i)) forward[i].push_back(nb.index);
    std::sort(forward[i].begin(), forward[i].end());
  }
  std::vector<std::vector<std::size_t>> reciprocal(n);
  for (std::size_t i = 0; i < n; ++i) {
    reciprocal[i].push_back(i);
    for (const std::size_t j : forward[i]) {
      if (std::binary_search(forward[j].begin(), forward[j].end(), i)) reciprocal[i].push_back(j);
    }
  }
  // members -> sets containing them, so only overlapping pairs are visited
  std::vector<std::vector<std::size_t>> containing(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const std::size_t m : reciprocal[i]) containing[m].push_back(i);
  }

  Eigen::MatrixXd out = lambda_mix * s.values();
  const double jaccard_weight = 1.0 - lambda_mix;
#pragma omp parallel
  {
    std::vector<std::size_t> overlap(n, 0);
    std::vector<std::size_t> touched;
#pragma omp for schedule(dynamic, 64)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (const std::size_t m : reciprocal[i]) {
        for (const std::size_t j : containing[m]) {
          if (overlap[j]++ == 0) touched.push_back(j);
        }
      }
      for (const std::size_t j : touched) {
        const double inter = static_cast<double>(overlap[j]);
        const double uni = static_cast<double>(reciprocal[i].size() + reciprocal[j].size()) - inter;
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += jaccard_weight * inter / uni;
        overlap[j] = 0;
      }
      touched.clear();
    }
  }
  return SimilarityMatrix(std::move(out));
}

SimilarityMatrix load_similarity(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  const auto bytes = detail::read_file_bytes(path);
  const auto header = detail::parse_header(bytes, kSimilarityMagic, path.string());
  Eigen::MatrixXd values(static_cast<Eigen::Index>(header.first),
                         static_cast<Eigen::Index>(header.second));
  std::size_t offset = detail::kHeaderSize;
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c, offset += 4) {
      values(r, c) = detail::read_f32(bytes, offset);
    }
  }
  if (!values.allFinite()) throw DataError(path.string() + ": non-finite similarity entry");
  return SimilarityMatrix(std::move(values));
}

void save_similarity(const SimilarityMatrix& s, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(detail::kHeaderSize + s.rows() * s.cols() * 4);
  detail::append_header(bytes, kSimilarityMagic, static_cast<std::uint32_t>(s.rows()),
                        static_cast<std::uint32_t>(s.cols()));
  for (Eigen::Index r = 0; r < s.values().rows(); ++r) {
    for (Eigen::Index c = 0; c < s.values().cols(); ++c) {
      detail::append_f32(bytes, static_cast<float>(s.values()(r, c)));
    }
  }
  detail::write_file_bytes(path, bytes);
}

}  // namespace iia
