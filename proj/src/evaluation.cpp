#include "iia/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "iia/error.hpp"

namespace iia {

namespace {

using QueryTally = std::optional<QueryOutcome>;

EvalReport summarize(std::span<const ItemRecord> queries, const std::vector<QueryTally>& tallies,
                     std::span<const std::size_t> cmc_ranks) {
  EvalReport report;
  double ap_sum = 0.0;
  std::vector<std::size_t> hits(cmc_ranks.size(), 0);
  for (std::size_t q = 0; q < tallies.size(); ++q) {
    const auto& outcome = tallies[q];
    if (!outcome) continue;
    ++report.num_valid_queries;
    ap_sum += outcome->ap;
    report.per_query_ap.emplace_back(queries[q].item_id, outcome->ap);
    for (std::size_t r = 0; r < cmc_ranks.size(); ++r) {
      if (outcome->first_hit <= cmc_ranks[r]) ++hits[r];
    }
  }
  if (report.num_valid_queries == 0) {
    throw EvalError("no query has a valid positive in the gallery");
  }
  const auto valid = static_cast<double>(report.num_valid_queries);
  report.map = ap_sum / valid;
  for (std::size_t r = 0; r < cmc_ranks.size(); ++r) {
    report.cmc.emplace_back(cmc_ranks[r], static_cast<double>(hits[r]) / valid);
  }
  return report;
}

void check_sizes(std::size_t nq, std::size_t ng, std::span<const ItemRecord> queries,
                 std::span<const ItemRecord> gallery) {
  if (nq != queries.size() || ng != gallery.size()) {
    throw ShapeError("ranking is " + std::to_string(nq) + "x" + std::to_string(ng) + " but metadata has " +
                     std::to_string(queries.size()) + " queries and " + std::to_string(gallery.size()) +
                     " gallery items");
  }
}

}  // namespace

RankingResult::RankingResult(std::size_t num_queries, std::size_t num_gallery)
    : num_queries_(num_queries),
      num_gallery_(num_gallery),
      order_(num_queries * num_gallery),
      scores_(num_queries * num_gallery) {}

void rank_row(std::span<const double> scores, std::span<std::uint32_t> order) {
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
}

RankingResult rank(const SimilarityMatrix& qg) {
  RankingResult result(qg.rows(), qg.cols());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t qi = 0; qi < static_cast<std::ptrdiff_t>(qg.rows()); ++qi) {
    const auto q = static_cast<std::size_t>(qi);
    const Eigen::VectorXd row = qg.values().row(qi).transpose();
    const std::span<const double> scores(row.data(), qg.cols());
    auto order = result.mutable_order(q);
    rank_row(scores, order);
    auto out = result.mutable_scores(q);
    for (std::size_t i = 0; i < order.size(); ++i) out[i] = scores[order[i]];
  }
  return result;
}

std::optional<QueryOutcome> average_precision(std::span<const std::uint32_t> ordering,
                                              std::span<const ItemRecord> gallery,
                                              const ItemRecord& query) {
  std::size_t position = 0;
  std::size_t hits = 0;
  double precision_sum = 0.0;
  std::size_t first_hit = 0;
  for (const std::uint32_t g : ordering) {
    const ItemRecord& cand = gallery[g];
    if (cand.person_id == kJunkPersonId) continue;
    const bool same_id = cand.person_id == query.person_id;
    if (same_id && cand.camera_id == query.camera_id) continue;
    ++position;
    if (!same_id) continue;
    ++hits;
    if (first_hit == 0) first_hit = position;
    precision_sum += static_cast<double>(hits) / static_cast<double>(position);
  }
  if (hits == 0) return std::nullopt;
  return QueryOutcome{precision_sum / static_cast<double>(hits), first_hit};
}

double EvalReport::cmc_at(std::size_t rank) const {
  for (const auto& [r, v] : cmc) {
    if (r == rank) return v;
  }
  throw EvalError("CMC rank " + std::to_string(rank) + " was not computed");
}

EvalReport compute_map(const RankingResult& ranking, std::span<const ItemRecord> queries,
                       std::span<const ItemRecord> gallery, std::span<const std::size_t> cmc_ranks) {
  check_sizes(ranking.num_queries(), ranking.num_gallery(), queries, gallery);
  std::vector<QueryTally> tallies(queries.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(queries.size()); ++q) {
    const auto qi = static_cast<std::size_t>(q);
    tallies[qi] = average_precision(ranking.order(qi), gallery, queries[qi]);
  }
  return summarize(queries, tallies, cmc_ranks);
}

EvalReport compute_map(const RankingResult& ranking, const EmbeddingSet& queries,
                       const EmbeddingSet& gallery, std::span<const std::size_t> cmc_ranks) {
  return compute_map(ranking, queries.items(), gallery.items(), cmc_ranks);
}

EvalReport evaluate(const SimilarityMatrix& qg, std::span<const ItemRecord> queries,
                    std::span<const ItemRecord> gallery, std::span<const std::size_t> cmc_ranks) {
  check_sizes(qg.rows(), qg.cols(), queries, gallery);
  std::vector<QueryTally> tallies(queries.size());
#pragma omp parallel
  {
    std::vector<std::uint32_t> order(qg.cols());
    Eigen::VectorXd row(static_cast<Eigen::Index>(qg.cols()));
#pragma omp for schedule(dynamic, 8)
    for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(queries.size()); ++q) {
      const auto qi = static_cast<std::size_t>(q);
      row = qg.values().row(q).transpose();
      rank_row(std::span<const double>(row.data(), qg.cols()), order);
      tallies[qi] = average_precision(order, gallery, queries[qi]);
    }
  }
  return summarize(queries, tallies, cmc_ranks);
}

std::string report_to_json(const EvalReport& report, int indent) {
  nlohmann::ordered_json j;
  j["map"] = report.map;
  j["cmc"] = nlohmann::ordered_json::array();
  for (const auto& [r, v] : report.cmc) j["cmc"].push_back({{"rank", r}, {"value", v}});
  j["per_query_ap"] = nlohmann::ordered_json::array();
  for (const auto& [id, ap] : report.per_query_ap) {
    j["per_query_ap"].push_back({{"item_id", id}, {"ap", ap}});
  }
  j["num_valid_queries"] = report.num_valid_queries;
  return j.dump(indent);
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "metric,value\n";
  out << "map," << report.map << '\n';
  for (const auto& [r, v] : report.cmc) out << "cmc" << r << ',' << v << '\n';
  out << "num_valid_queries," << report.num_valid_queries << '\n';
  return out.str();
}

}  // namespace iia
