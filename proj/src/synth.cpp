#include <cmath>
#include <numbers>
#include <random>

#include "iia/embeddings.hpp"
#include "iia/error.hpp"

namespace iia {

namespace {

// Box-Muller on raw mt19937_64 output. std::normal_distribution is not
// specified bit-for-bit by the standard, so it is avoided here.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1], u2 in [0, 1)
    const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

Eigen::VectorXd unit_direction(GaussianSource& rng, int dim) {
  Eigen::VectorXd v(dim);
  do {
    for (int r = 0; r < dim; ++r) v(r) = rng.next();
  } while (v.norm() == 0.0);
  return v / v.norm();
}

}  // namespace

SynthParams calibrated_synth_params(std::uint64_t seed) {
  SynthParams p;
  p.noise_sigma = kCalibratedNoiseSigma;
  p.seed = seed;
  return p;
}

EmbeddingSet synthesize_clusters(const SynthParams& p) {
  if (p.num_ids <= 0 || p.queries_per_id <= 0 || p.gallery_per_id <= 0 || p.dim <= 0) {
    throw ConfigError("synthesize_clusters: counts and dim must be positive");
  }
  if (p.num_distractors < 0) throw ConfigError("synthesize_clusters: num_distractors must be >= 0");
  if (!(p.noise_sigma >= 0.0) || !std::isfinite(p.noise_sigma)) {
    throw ConfigError("synthesize_clusters: noise_sigma must be finite and >= 0");
  }

  GaussianSource rng(p.seed);
  const int per_id = p.queries_per_id + p.gallery_per_id;
  const auto total = static_cast<Eigen::Index>(p.num_ids) * per_id + p.num_distractors;

  std::vector<ItemRecord> items;
  items.reserve(static_cast<std::size_t>(total));
  Eigen::MatrixXd m(p.dim, total);
  Eigen::Index col = 0;

  for (int id = 1; id <= p.num_ids; ++id) {
    const Eigen::VectorXd centroid = unit_direction(rng, p.dim);
    for (int s = 0; s < per_id; ++s, ++col) {
      const bool is_query = s < p.queries_per_id;
      for (int r = 0; r < p.dim; ++r) m(r, col) = centroid(r) + p.noise_sigma * rng.next();
      ItemRecord rec;
      rec.person_id = id;
      // cameras alternate within each identity, so both cameras hold samples of it
      rec.camera_id = s % 2;
      rec.role = is_query ? Role::query : Role::gallery;
      rec.item_id = "id" + std::to_string(id) + (is_query ? "_q" : "_g") +
                    std::to_string(is_query ? s : s - p.queries_per_id);
      items.push_back(std::move(rec));
    }
  }
  for (int j = 0; j < p.num_distractors; ++j, ++col) {
    m.col(col) = unit_direction(rng, p.dim);
    ItemRecord rec;
    rec.person_id = kDistractorPersonId;
    rec.camera_id = j % 2;
    rec.role = Role::gallery;
    rec.item_id = "distractor" + std::to_string(j);
    items.push_back(std::move(rec));
  }
  return EmbeddingSet(static_cast<std::size_t>(p.dim), std::move(items), std::move(m));
}

}  // namespace iia
