#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "iia/embeddings.hpp"
#include "iia/error.hpp"
#include "iia/similarity.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace iia;

namespace {

EmbeddingSet small_set() {
  Eigen::MatrixXd m(4, 3);
  m << 1.5, -2.0, 0.25,  //
      0.0, 3.0, -1.0,    //
      7.0, 0.5, 0.125,   //
      -0.75, 1.0, 2.0;
  return EmbeddingSet(4,
                      {{"a", 1, 0, Role::query}, {"b", 1, 1, Role::gallery}, {"c", 2, 0, Role::gallery}},
                      m);
}

// EMB1 bytes written field by field, independent of the library writer.
std::vector<unsigned char> emb1_bytes(std::uint32_t dim, std::uint32_t count, const std::vector<float>& payload) {
  std::vector<unsigned char> out{'E', 'M', 'B', '1', 1};
  for (const std::uint32_t v : {dim, count}) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xFF));
  }
  for (const float f : payload) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xFF));
  }
  return out;
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_sidecar(const std::filesystem::path& p, std::size_t count) {
  std::vector<ItemRecord> items;
  for (std::size_t i = 0; i < count; ++i) items.push_back({"x" + std::to_string(i), 1, 0, Role::gallery});
  save_metadata(items, metadata_sidecar_path(p));
}

}  // namespace

TEST_CASE("binary round trip is bit exact") {
  const auto dir = testing::scratch_dir("emb_roundtrip");
  const auto set = small_set();
  save_embeddings(set, dir / "s.emb", EmbeddingFormat::binary);
  const auto back = load_embeddings(dir / "s.emb", EmbeddingFormat::binary);
  CHECK(back.dim() == 4);
  CHECK(back.size() == 3);
  CHECK(back.items() == set.items());
  CHECK(back.matrix() == set.matrix());
}

TEST_CASE("binary round trip holds for random float-valued sets") {
  const auto dir = testing::scratch_dir("emb_roundtrip_random");
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto set = oracle::random_set(rng, 1 + trial, 1 + trial % 9, Role::gallery);
    // stored precision is f32, so start from f32-representable values
    const Eigen::MatrixXd m = set.matrix().cast<float>().cast<double>();
    set = set.with_matrix(m);
    save_embeddings(set, dir / "r.bin", EmbeddingFormat::binary);
    const auto back = load_embeddings(dir / "r.bin", EmbeddingFormat::binary);
    CHECK(back.matrix() == set.matrix());
    CHECK(back.items() == set.items());
  }
}

TEST_CASE("payload written by hand loads in item-major order") {
  const auto dir = testing::scratch_dir("emb_layout");
  write_bytes(dir / "h.emb", emb1_bytes(2, 3, {1, 2, 3, 4, 5, 6}));
  write_sidecar(dir / "h.emb", 3);
  const auto set = load_embeddings(dir / "h.emb", EmbeddingFormat::binary);
  CHECK(set.column(0)(1) == 2.0);
  CHECK(set.column(1)(0) == 3.0);
  CHECK(set.column(2)(1) == 6.0);
}

TEST_CASE("empty set round trips") {
  const auto dir = testing::scratch_dir("emb_empty");
  const auto set = EmbeddingSet::empty(5);
  save_embeddings(set, dir / "e.emb", EmbeddingFormat::binary);
  const auto back = load_embeddings(dir / "e.emb", EmbeddingFormat::binary);
  CHECK(back.is_empty());
  CHECK(back.dim() == 5);
}

TEST_CASE("malformed binary files") {
  const auto dir = testing::scratch_dir("emb_bad");

  SUBCASE("payload shorter than header declares") {
    write_bytes(dir / "p.emb", emb1_bytes(4, 3, std::vector<float>(11, 0.5f)));
    write_sidecar(dir / "p.emb", 3);
    CHECK_THROWS_AS(load_embeddings(dir / "p.emb", EmbeddingFormat::binary), FormatError);
  }
  SUBCASE("bad magic") {
    auto bytes = emb1_bytes(1, 1, {1.0f});
    bytes[0] = 'X';
    write_bytes(dir / "m.emb", bytes);
    write_sidecar(dir / "m.emb", 1);
    CHECK_THROWS_AS(load_embeddings(dir / "m.emb", EmbeddingFormat::binary), FormatError);
  }
  SUBCASE("bad version") {
    auto bytes = emb1_bytes(1, 1, {1.0f});
    bytes[4] = 2;
    write_bytes(dir / "v.emb", bytes);
    write_sidecar(dir / "v.emb", 1);
    CHECK_THROWS_AS(load_embeddings(dir / "v.emb", EmbeddingFormat::binary), FormatError);
  }
  SUBCASE("NaN entry") {
    write_bytes(dir / "n.emb", emb1_bytes(2, 1, {1.0f, std::numeric_limits<float>::quiet_NaN()}));
    write_sidecar(dir / "n.emb", 1);
    CHECK_THROWS_AS(load_embeddings(dir / "n.emb", EmbeddingFormat::binary), DataError);
  }
  SUBCASE("missing sidecar") {
    write_bytes(dir / "s.emb", emb1_bytes(1, 1, {1.0f}));
    CHECK_THROWS_AS(load_embeddings(dir / "s.emb", EmbeddingFormat::binary), FormatError);
  }
  SUBCASE("sidecar count mismatch") {
    write_bytes(dir / "c.emb", emb1_bytes(1, 2, {1.0f, 2.0f}));
    write_sidecar(dir / "c.emb", 3);
    CHECK_THROWS_AS(load_embeddings(dir / "c.emb", EmbeddingFormat::binary), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_embeddings(dir / "nothing.emb", EmbeddingFormat::binary), IoError);
  }
}

TEST_CASE("duplicate ids and bad shapes are rejected") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Ones(2, 2);
  CHECK_THROWS_AS(EmbeddingSet(2, {{"a", 1, 0, Role::query}, {"a", 2, 0, Role::query}}, m), DataError);
  CHECK_THROWS_AS(EmbeddingSet(0, {}, Eigen::MatrixXd(0, 0)), DataError);
  CHECK_THROWS_AS(EmbeddingSet(3, {{"a", 1, 0, Role::query}, {"b", 2, 0, Role::query}}, m), DataError);
  CHECK_THROWS_AS(EmbeddingSet(2, {{"a", 1, -1, Role::query}, {"b", 2, 0, Role::query}}, m), DataError);
  CHECK_THROWS_AS(EmbeddingSet(2, {{"a", 1, 0, Role::query}, {"b", 2, 0, Role::query}}, m, true), DataError);
}

TEST_CASE("text format round trip and errors") {
  const auto dir = testing::scratch_dir("emb_text");
  const auto set = small_set();
  save_embeddings(set, dir / "s.csv", EmbeddingFormat::text);
  const auto back = load_embeddings(dir / "s.csv", EmbeddingFormat::text);
  CHECK(back.items() == set.items());
  CHECK(back.matrix() == set.matrix().cast<float>().cast<double>());

  std::ifstream in(dir / "s.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "item_id,person_id,camera_id,role,f0,f1,f2,f3");

  {
    std::ofstream out(dir / "bad.csv");
    out << "item_id,person_id,camera_id,role,f0,f1\n";
    out << "a,1,0,query,0.5\n";
  }
  CHECK_THROWS_AS(load_embeddings(dir / "bad.csv", EmbeddingFormat::text), FormatError);
  {
    std::ofstream out(dir / "role.csv");
    out << "item_id,person_id,camera_id,role,f0\n";
    out << "a,1,0,probe,0.5\n";
  }
  CHECK_THROWS_AS(load_embeddings(dir / "role.csv", EmbeddingFormat::text), FormatError);
}

TEST_CASE("format is chosen by extension") {
  CHECK(format_from_path("x.emb") == EmbeddingFormat::binary);
  CHECK(format_from_path("x.bin") == EmbeddingFormat::binary);
  CHECK(format_from_path("x.csv") == EmbeddingFormat::text);
  CHECK_THROWS_AS(format_from_path("x.txt"), ConfigError);
}

TEST_CASE("l2_normalize") {
  SUBCASE("(3,4) becomes (0.6,0.8)") {
    Eigen::MatrixXd m(2, 1);
    m << 3, 4;
    const auto out = l2_normalize(EmbeddingSet(2, {{"a", 1, 0, Role::query}}, m));
    CHECK(out.column(0)(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out.column(0)(1) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(out.is_normalized());
  }
  SUBCASE("zero column names the item") {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
    m(0, 0) = 1;
    try {
      l2_normalize(EmbeddingSet(2, {{"ok", 1, 0, Role::query}, {"empty_one", 1, 0, Role::query}}, m));
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("empty_one") != std::string::npos);
    }
  }
  SUBCASE("idempotent and preserves cosine") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const auto set = oracle::random_set(rng, 2 + trial % 7, 1 + trial % 6, Role::gallery);
      const auto once = l2_normalize(set);
      const auto twice = l2_normalize(once);
      CHECK((once.matrix() - twice.matrix()).cwiseAbs().maxCoeff() <= 1e-7);
      const auto raw_cos = oracle::columns_of(set.matrix());
      const auto norm_cos = cosine_similarity(once, once);
      for (std::size_t i = 0; i < set.size(); ++i) {
        for (std::size_t j = 0; j < set.size(); ++j) {
          CHECK(std::abs(norm_cos(i, j) - oracle::cosine(raw_cos[i], raw_cos[j])) <= 1e-6);
        }
      }
    }
  }
}

TEST_CASE("split_by_role keeps relative order") {
  const auto set = small_set();
  const auto [q, g] = split_by_role(set);
  REQUIRE(q.size() == 1);
  REQUIRE(g.size() == 2);
  CHECK(q.item(0).item_id == "a");
  CHECK(g.item(0).item_id == "b");
  CHECK(g.item(1).item_id == "c");
  CHECK(g.column(1) == set.column(2));
}

TEST_CASE("concat rejects mismatched dims") {
  CHECK_THROWS_AS(EmbeddingSet::concat(EmbeddingSet::empty(3), EmbeddingSet::empty(4)), ShapeError);
}
