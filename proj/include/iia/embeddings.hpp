#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace iia {

enum class Role { query, gallery };

/// person_id value for items excluded from evaluation.
inline constexpr int kJunkPersonId = -1;
/// person_id value for distractors; they count as negatives for every query.
inline constexpr int kDistractorPersonId = 0;

struct ItemRecord {
  std::string item_id;
  int person_id = kJunkPersonId;
  int camera_id = 0;
  Role role = Role::gallery;

  bool operator==(const ItemRecord&) const = default;
};

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);  // throws FormatError

/// Feature vectors stored as columns of a dim x count matrix, together with
/// per-item metadata. Immutable once constructed; every constructor validates
/// the invariants (finite entries, unique ids, matching sizes, unit columns
/// when flagged normalized).
class EmbeddingSet {
 public:
  EmbeddingSet(std::size_t dim, std::vector<ItemRecord> items, Eigen::MatrixXd matrix,
               bool normalized = false);

  static EmbeddingSet empty(std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return items_.size(); }
  bool is_empty() const { return items_.empty(); }
  bool is_normalized() const { return normalized_; }

  const std::vector<ItemRecord>& items() const { return items_; }
  const ItemRecord& item(std::size_t i) const { return items_.at(i); }
  const Eigen::MatrixXd& matrix() const { return matrix_; }
  auto column(std::size_t i) const { return matrix_.col(static_cast<Eigen::Index>(i)); }

  /// Same metadata, new vectors. The normalized flag is dropped.
  EmbeddingSet with_matrix(Eigen::MatrixXd matrix) const;

  EmbeddingSet subset(std::span<const std::size_t> indices) const;

  /// Stacks `first` then `second` into one set.
  static EmbeddingSet concat(const EmbeddingSet& first, const EmbeddingSet& second);

 private:
  std::size_t dim_;
  std::vector<ItemRecord> items_;
  Eigen::MatrixXd matrix_;
  bool normalized_;
};

enum class EmbeddingFormat { binary, text };

/// .emb / .bin map to binary, .csv to text; anything else is a ConfigError.
EmbeddingFormat format_from_path(const std::filesystem::path& path);

/// Path of the JSON-lines metadata file that accompanies a binary matrix.
std::filesystem::path metadata_sidecar_path(const std::filesystem::path& path);

EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path,
                     EmbeddingFormat format);

/// Metadata sidecar alone; used both for EMB1 files and precomputed similarity files.
std::vector<ItemRecord> load_metadata(const std::filesystem::path& sidecar);
void save_metadata(std::span<const ItemRecord> items, const std::filesystem::path& sidecar);

/// Unit-normalizes every column. Throws DataError naming the first zero-norm item.
EmbeddingSet l2_normalize(const EmbeddingSet& set);

/// Splits a mixed set into (queries, gallery), preserving relative order.
std::pair<EmbeddingSet, EmbeddingSet> split_by_role(const EmbeddingSet& set);

struct SynthParams {
  int num_ids = 50;
  int queries_per_id = 2;
  int gallery_per_id = 8;
  int dim = 64;
  double noise_sigma = 0.0;
  int num_distractors = 0;
  std::uint64_t seed = 0;
};

/// Noise level that puts raw-cosine mAP of the default 50-id layout in the
/// middle of [0.5, 0.8]; see tests/test_synth.cpp for the calibration sweep.
inline constexpr double kCalibratedNoiseSigma = 0.18;

SynthParams calibrated_synth_params(std::uint64_t seed);

/// Gaussian identity clusters around random unit centroids. Uses
/// std::mt19937_64 with a Box-Muller transform so the output depends only on
/// the seed, not on the standard library's distribution implementations.
EmbeddingSet synthesize_clusters(const SynthParams& params);

}  // namespace iia
