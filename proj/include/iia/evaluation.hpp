#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iia/embeddings.hpp"
#include "iia/similarity.hpp"

namespace iia {

/// Gallery indices per query sorted by descending score, ties by lower index.
class RankingResult {
 public:
  RankingResult(std::size_t num_queries, std::size_t num_gallery);

  std::size_t num_queries() const { return num_queries_; }
  std::size_t num_gallery() const { return num_gallery_; }

  std::span<const std::uint32_t> order(std::size_t q) const {
    return {order_.data() + q * num_gallery_, num_gallery_};
  }
  std::span<const double> scores(std::size_t q) const {
    return {scores_.data() + q * num_gallery_, num_gallery_};
  }
  std::span<std::uint32_t> mutable_order(std::size_t q) {
    return {order_.data() + q * num_gallery_, num_gallery_};
  }
  std::span<double> mutable_scores(std::size_t q) {
    return {scores_.data() + q * num_gallery_, num_gallery_};
  }

 private:
  std::size_t num_queries_;
  std::size_t num_gallery_;
  std::vector<std::uint32_t> order_;
  std::vector<double> scores_;
};

RankingResult rank(const SimilarityMatrix& qg);

/// Fills `order` with 0..n-1 sorted by descending score, ties by lower index.
void rank_row(std::span<const double> scores, std::span<std::uint32_t> order);

struct QueryOutcome {
  double ap = 0.0;
  std::size_t first_hit = 0;  ///< 1-based position of the first positive after filtering
};

/// AP under the single-query protocol: gallery items sharing both identity
/// and camera with the query are dropped, as are junk items; AP averages the
/// precision at each remaining positive. Returns nullopt when no positive remains.
std::optional<QueryOutcome> average_precision(std::span<const std::uint32_t> ordering,
                                              std::span<const ItemRecord> gallery,
                                              const ItemRecord& query);

struct EvalReport {
  double map = 0.0;
  std::vector<std::pair<std::size_t, double>> cmc;  ///< (rank, matching rate)
  std::vector<std::pair<std::string, double>> per_query_ap;
  std::size_t num_valid_queries = 0;

  double cmc_at(std::size_t rank) const;  // throws EvalError when rank was not requested
};

inline const std::vector<std::size_t>& default_cmc_ranks() {
  static const std::vector<std::size_t> ranks{1, 5, 10, 20};
  return ranks;
}

/// Throws EvalError when no query has a valid positive.
EvalReport compute_map(const RankingResult& ranking, std::span<const ItemRecord> queries,
                       std::span<const ItemRecord> gallery,
                       std::span<const std::size_t> cmc_ranks = default_cmc_ranks());
EvalReport compute_map(const RankingResult& ranking, const EmbeddingSet& queries,
                       const EmbeddingSet& gallery,
                       std::span<const std::size_t> cmc_ranks = default_cmc_ranks());

/// rank + compute_map without materializing the full ranking.
EvalReport evaluate(const SimilarityMatrix& qg, std::span<const ItemRecord> queries,
                    std::span<const ItemRecord> gallery,
                    std::span<const std::size_t> cmc_ranks = default_cmc_ranks());

/// {"map", "cmc": [{"rank", "value"}], "per_query_ap": [{"item_id", "ap"}], "num_valid_queries"}
std::string report_to_json(const EvalReport& report, int indent = 2);
/// metric,value rows: map, cmc@<rank>..., num_valid_queries.
std::string report_to_csv(const EvalReport& report);

}  // namespace iia
