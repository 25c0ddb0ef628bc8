#include "iia/engine.hpp"
#include "iia/error.hpp"

namespace iia {

EmbeddingSet aqe_expand(const EmbeddingSet& queries, const EmbeddingSet& gallery, std::size_t k,
                        bool renormalize) {
  if (k < 1 || k > gallery.size()) {
    throw ConfigError("AQE k=" + std::to_string(k) + " out of range [1, " +
                      std::to_string(gallery.size()) + "]");
  }
  const SimilarityMatrix sims = cosine_similarity(queries, gallery);
  const TopKGraph top = topk_rows(sims, k, false);

  Eigen::MatrixXd expanded = queries.matrix();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto col = expanded.col(static_cast<Eigen::Index>(q));
    for (const auto& nb : top.row(q)) col += gallery.column(nb.index);
    col /= static_cast<double>(k + 1);
  }
  const EmbeddingSet out = queries.with_matrix(std::move(expanded));
  return renormalize ? l2_normalize(out) : out;
}

}  // namespace iia
