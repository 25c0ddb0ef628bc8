#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace iia {

/// Published mAP / cmc1 (percent) for trained backbones on the standard
/// benchmarks. Used by the reproduction harness to report deltas for
/// user-supplied feature dumps; nothing in CI depends on them.
struct ReferenceResult {
  std::string_view dataset;   ///< market1501, dukemtmc, cuhk03-lab, cuhk03-det
  std::string_view backbone;  ///< trip, pcb, pab, mgn
  std::string_view method;    ///< baseline, aqe, iia_bas, iia_adv
  double map = 0.0;
  double cmc1 = 0.0;
};

struct OperatingPoint {
  double alpha = 0.82;
  std::size_t k = 11;
  std::size_t iters = 6;
  double tau = 0.2;
};

/// Expected |delta mAP| when reproducing with our AP convention and
/// normalization defaults.
inline constexpr double kReproductionToleranceMap = 0.5;

std::span<const ReferenceResult> reference_results();
std::optional<ReferenceResult> find_reference(std::string_view dataset, std::string_view backbone,
                                              std::string_view method);
/// Hyperparameters tuned per dataset; throws ConfigError for unknown names.
OperatingPoint operating_point(std::string_view dataset);

}  // namespace iia
