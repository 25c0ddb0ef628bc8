#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "iia/error.hpp"
#include "iia/similarity.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace iia;

namespace {

EmbeddingSet from_columns(const std::vector<oracle::Vec>& cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(cols[0].size()), static_cast<Eigen::Index>(cols.size()));
  std::vector<ItemRecord> items;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    for (std::size_t r = 0; r < cols[c].size(); ++r) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cols[c][r];
    items.push_back({"v" + std::to_string(c), 1, 0, Role::gallery});
  }
  return EmbeddingSet(cols[0].size(), std::move(items), std::move(m));
}

SimilarityMatrix one_row(std::initializer_list<double> values) {
  Eigen::MatrixXd m(1, static_cast<Eigen::Index>(values.size()));
  Eigen::Index j = 0;
  for (const double v : values) m(0, j++) = v;
  return SimilarityMatrix(m);
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

TEST_CASE("cosine examples") {
  const double r = 1.0 / std::sqrt(2.0);
  const auto s = cosine_similarity(from_columns({{1, 0}}), from_columns({{1, 0}, {0, 1}, {r, r}}));
  CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(s(0, 1)) < 1e-12);
  CHECK(s(0, 2) == doctest::Approx(0.70711).epsilon(1e-5));
}

TEST_CASE("cosine errors") {
  CHECK_THROWS_AS(cosine_similarity(from_columns({{1, 0}}), from_columns({{1, 0, 0}})), ShapeError);
  CHECK_THROWS_AS(cosine_similarity(from_columns({{1, 0}}), from_columns({{0, 0}})), DataError);
  CHECK_THROWS_AS(euclidean_similarity(from_columns({{1, 0}}), from_columns({{1, 0, 0}})), ShapeError);
}

TEST_CASE("cosine matches the oracle, is symmetric with unit diagonal, and ignores scale") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto set = oracle::random_set(rng, 2 + trial % 11, 1 + trial % 7, Role::gallery);
    const auto s = cosine_similarity(set, set);
    const auto cols = oracle::columns_of(set.matrix());
    Eigen::MatrixXd scaled = set.matrix();
    for (Eigen::Index c = 0; c < scaled.cols(); ++c) scaled.col(c) *= scale(rng);
    const auto s_scaled = cosine_similarity(set.with_matrix(scaled), set);
    for (std::size_t i = 0; i < set.size(); ++i) {
      CHECK(s(i, i) == doctest::Approx(1.0).epsilon(1e-6));
      for (std::size_t j = 0; j < set.size(); ++j) {
        CHECK(std::abs(s(i, j) - oracle::cosine(cols[i], cols[j])) <= 1e-12);
        CHECK(std::abs(s(i, j) - s(j, i)) <= 1e-6);
        CHECK(std::abs(s_scaled(i, j) - s(i, j)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("euclidean similarity is minus half the squared distance") {
  const auto s = euclidean_similarity(from_columns({{1, 2}}), from_columns({{1, 2}, {4, 6}}));
  CHECK(s(0, 0) == doctest::Approx(0.0));
  CHECK(s(0, 1) == doctest::Approx(-12.5));
}

TEST_CASE("topk_rows examples") {
  SUBCASE("direct ordering") {
    const auto g = topk_rows(one_row({0.9, 0.1, 0.5}), 2, false);
    CHECK(g.row(0)[0].index == 0);
    CHECK(g.row(0)[1].index == 2);
  }
  SUBCASE("ties go to the lower index") {
    const auto g = topk_rows(one_row({0.5, 0.5, 0.1}), 1, false);
    CHECK(g.row(0)[0].index == 0);
  }
  SUBCASE("self is excluded") {
    Eigen::MatrixXd m(2, 2);
    m << 1.0, 0.2, 0.2, 1.0;
    const auto g = topk_rows(SimilarityMatrix(m), 1, true);
    CHECK(g.row(0)[0].index == 1);
    CHECK(g.row(1)[0].index == 0);
  }
  SUBCASE("k out of range") {
    CHECK_THROWS_AS(topk_rows(one_row({0.1, 0.2}), 0, false), ConfigError);
    CHECK_THROWS_AS(topk_rows(one_row({0.1, 0.2}), 3, false), ConfigError);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(3, 3);
    CHECK_THROWS_AS(topk_rows(SimilarityMatrix(m), 3, true), ConfigError);
  }
}

TEST_CASE("topk_rows matches an exhaustive sort on random matrices up to 50x50") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial) % 49;
    Eigen::MatrixXd m = random_matrix(rng, n, n);
    // coarse quantization forces plenty of ties
    if (trial % 2 == 0) m = (m * 4.0).array().round() / 4.0;
    const SimilarityMatrix s(m);
    const bool self = trial % 3 != 0;
    const std::size_t k = 1 + static_cast<std::size_t>(trial) % (n - (self ? 1 : 0));
    const auto g = topk_rows(s, k, self);
    CHECK(g.excludes_self() == self);
    for (std::size_t i = 0; i < n; ++i) {
      oracle::Vec row(n);
      for (std::size_t j = 0; j < n; ++j) row[j] = s(i, j);
      std::vector<bool> excluded;
      if (self) {
        excluded.assign(n, false);
        excluded[i] = true;
      }
      const auto expected = oracle::sorted_top_k(row, k, excluded);
      REQUIRE(g.row(i).size() == k);
      for (std::size_t r = 0; r < k; ++r) {
        CHECK(g.row(i)[r].index == expected[r]);
        CHECK(g.row(i)[r].weight == row[expected[r]]);
      }
    }
  }
}

TEST_CASE("attention weights examples") {
  SUBCASE("(0.8, 0.6) at tau 0.2") {
    const auto raw = one_row({0.8, 0.6, 0.1});
    const auto w = attention_weights(topk_rows(raw, 2, false), raw, 0.2);
    CHECK(w.row(0)[0].weight == doctest::Approx(0.73106).epsilon(1e-4));
    CHECK(w.row(0)[1].weight == doctest::Approx(0.26894).epsilon(1e-4));
  }
  SUBCASE("singleton row has weight 1 for any tau") {
    const auto raw = one_row({0.3, -0.7});
    for (const double tau : {1e-4, 0.2, 1e3}) {
      CHECK(attention_weights(topk_rows(raw, 1, false), raw, tau).row(0)[0].weight == 1.0);
    }
  }
  SUBCASE("equal similarities give uniform weights") {
    const auto raw = one_row({0.4, 0.4, 0.4, 0.4});
    const auto w = attention_weights(topk_rows(raw, 4, false), raw, 0.2);
    for (const auto& nb : w.row(0)) CHECK(nb.weight == doctest::Approx(0.25));
  }
  SUBCASE("non-positive tau") {
    const auto raw = one_row({0.4, 0.3});
    CHECK_THROWS_AS(attention_weights(topk_rows(raw, 1, false), raw, 0.0), ConfigError);
    CHECK_THROWS_AS(attention_weights(topk_rows(raw, 1, false), raw, -1.0), ConfigError);
  }
  SUBCASE("large similarities do not overflow") {
    const auto raw = one_row({1e4, 1e4 - 1.0});
    const auto w = attention_weights(topk_rows(raw, 2, false), raw, 1e-3);
    CHECK(std::isfinite(w.row(0)[0].weight));
    CHECK(w.row(0)[0].weight == doctest::Approx(1.0));
  }
}

TEST_CASE("attention rows are probability vectors across temperatures") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> log_tau(-3.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(trial) % 20;
    const SimilarityMatrix raw(random_matrix(rng, n, n));
    const double tau = std::pow(10.0, log_tau(rng));
    const std::size_t k = 1 + static_cast<std::size_t>(trial) % (n - 1);
    const auto w = attention_weights(topk_rows(raw, k, true), raw, tau);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (const auto& nb : w.row(i)) {
        CHECK(nb.weight > 0.0);
        CHECK(nb.index != i);
        sum += nb.weight;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("tiny tau concentrates on the argmax neighbor") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 12;
    const SimilarityMatrix raw(random_matrix(rng, n, n));
    const auto w = attention_weights(topk_rows(raw, 5, true), raw, 1e-4);
    const auto ranked = topk_rows(raw, 5, true);
    for (std::size_t i = 0; i < n; ++i) {
      const double gap = raw(i, ranked.row(i)[0].index) - raw(i, ranked.row(i)[1].index);
      if (gap < 20 * 1e-4) continue;  // near-ties legitimately split the mass
      CHECK(w.row(i)[0].weight > 1.0 - 1e-3);
    }
  }
}

TEST_CASE("reciprocal transform on a hand-built 4-item matrix") {
  Eigen::MatrixXd m(4, 4);
  m << 1.0, 0.9, 0.2, 0.1,  //
      0.9, 1.0, 0.3, 0.8,   //
      0.2, 0.3, 1.0, 0.7,   //
      0.1, 0.8, 0.7, 1.0;
  // With k_r = 2: R(0) = {0,1}, R(1) = {0,1,3}, R(2) = {2,3}, R(3) = {1,2,3}.
  const auto out = reciprocal_transform(SimilarityMatrix(m), 2, 0.3);
  CHECK(out(0, 1) == doctest::Approx(0.27 + 0.7 * 2.0 / 3.0));
  CHECK(out(0, 2) == doctest::Approx(0.06));
  CHECK(out(0, 3) == doctest::Approx(0.03 + 0.7 * 0.25));
  CHECK(out(1, 2) == doctest::Approx(0.09 + 0.7 * 0.25));
  CHECK(out(1, 3) == doctest::Approx(0.24 + 0.7 * 0.5));
  CHECK(out(2, 3) == doctest::Approx(0.21 + 0.7 * 2.0 / 3.0));
  for (std::size_t i = 0; i < 4; ++i) CHECK(out(i, i) == doctest::Approx(0.3 + 0.7));

  std::vector<oracle::Vec> rows(4, oracle::Vec(4));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) rows[i][j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const auto expected = oracle::reciprocal_mix(rows, 2, 0.3);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(out(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-12));
  }
}

TEST_CASE("reciprocal transform matches the set oracle on random symmetric matrices") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(trial) % 25;
    Eigen::MatrixXd m = random_matrix(rng, n, n);
    if (trial % 4 != 0) m = Eigen::MatrixXd((m + m.transpose()) / 2.0);
    const std::size_t k_r = 1 + static_cast<std::size_t>(trial) % (n - 1);
    const double lambda = static_cast<double>(trial % 5) / 4.0;
    const auto out = reciprocal_transform(SimilarityMatrix(m), k_r, lambda);
    std::vector<oracle::Vec> rows(n, oracle::Vec(n));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) rows[i][j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    const auto expected = oracle::reciprocal_mix(rows, k_r, lambda);
    const bool symmetric = trial % 4 != 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(std::abs(out(i, j) - expected[i][j]) <= 1e-12);
        if (symmetric) CHECK(std::abs(out(i, j) - out(j, i)) <= 1e-6);
        if (lambda == 0.0) {
          CHECK(out(i, j) >= 0.0);
          CHECK(out(i, j) <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("reciprocal transform degenerate mix and errors") {
  std::mt19937_64 rng(37);
  const SimilarityMatrix s(random_matrix(rng, 6, 6));
  CHECK(reciprocal_transform(s, 3, 1.0).values() == s.values());
  CHECK_THROWS_AS(reciprocal_transform(SimilarityMatrix(random_matrix(rng, 3, 4)), 1, 0.3), ShapeError);
  CHECK_THROWS_AS(reciprocal_transform(s, 0, 0.3), ConfigError);
  CHECK_THROWS_AS(reciprocal_transform(s, 6, 0.3), ConfigError);
  CHECK_THROWS_AS(reciprocal_transform(s, 2, 1.5), ConfigError);
}

TEST_CASE("SIM1 round trip and errors") {
  const auto dir = testing::scratch_dir("sim_io");
  std::mt19937_64 rng(41);
  const Eigen::MatrixXd m = random_matrix(rng, 3, 5).cast<float>().cast<double>();
  save_similarity(SimilarityMatrix(m), dir / "s.sim");
  const auto back = load_similarity(dir / "s.sim");
  CHECK(back.rows() == 3);
  CHECK(back.cols() == 5);
  CHECK(back.values() == m);

  {
    std::ifstream in(dir / "s.sim", std::ios::binary);
    char magic[5] = {};
    in.read(magic, 4);
    CHECK(std::string(magic) == "SIM1");
  }

  SUBCASE("truncated payload") {
    std::filesystem::resize_file(dir / "s.sim", std::filesystem::file_size(dir / "s.sim") - 4);
    CHECK_THROWS_AS(load_similarity(dir / "s.sim"), FormatError);
  }
  SUBCASE("NaN entry") {
    std::fstream f(dir / "s.sim", std::ios::in | std::ios::out | std::ios::binary);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    f.seekp(13);
    f.write(reinterpret_cast<const char*>(&nan), 4);
    f.close();
    CHECK_THROWS_AS(load_similarity(dir / "s.sim"), DataError);
  }
  SUBCASE("non-finite matrix rejected in memory") {
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
    bad(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(SimilarityMatrix{bad}, DataError);
  }
}
