#include "iia/reference_results.hpp"

#include <array>
#include <string>

#include "iia/error.hpp"

namespace iia {

namespace {

constexpr std::array kResults = std::to_array<ReferenceResult>({
    {"market1501", "trip", "baseline", 74.85, 88.33},
    {"market1501", "trip", "aqe", 83.09, 90.02},
    {"market1501", "trip", "iia_bas", 85.56, 90.66},
    {"market1501", "trip", "iia_adv", 87.89, 91.24},
    {"market1501", "pcb", "baseline", 78.54, 92.87},
    {"market1501", "pcb", "aqe", 87.00, 93.53},
    {"market1501", "pcb", "iia_bas", 89.02, 93.56},
    {"market1501", "pcb", "iia_adv", 90.48, 94.03},
    {"market1501", "pab", "baseline", 79.35, 92.28},
    {"market1501", "pab", "aqe", 86.83, 92.73},
    {"market1501", "pab", "iia_bas", 88.59, 93.05},
    {"market1501", "pab", "iia_adv", 90.41, 93.44},
    {"market1501", "mgn", "baseline", 86.00, 95.19},
    {"market1501", "mgn", "aqe", 92.82, 95.87},
    {"market1501", "mgn", "iia_bas", 93.60, 95.84},
    {"market1501", "mgn", "iia_adv", 94.50, 95.69},

    {"dukemtmc", "trip", "baseline", 63.92, 79.53},
    {"dukemtmc", "trip", "aqe", 74.87, 82.81},
    {"dukemtmc", "trip", "iia_bas", 78.45, 83.84},
    {"dukemtmc", "trip", "iia_adv", 82.14, 85.10},
    {"dukemtmc", "pcb", "baseline", 69.94, 84.47},
    {"dukemtmc", "pcb", "aqe", 80.20, 87.21},
    {"dukemtmc", "pcb", "iia_bas", 83.21, 88.02},
    {"dukemtmc", "pcb", "iia_adv", 85.20, 88.82},
    {"dukemtmc", "pab", "baseline", 68.43, 84.20},
    {"dukemtmc", "pab", "aqe", 79.04, 87.39},
    {"dukemtmc", "pab", "iia_bas", 82.81, 88.62},
    {"dukemtmc", "pab", "iia_adv", 85.27, 88.78},
    {"dukemtmc", "mgn", "baseline", 76.88, 88.33},
    {"dukemtmc", "mgn", "aqe", 86.70, 91.02},
    {"dukemtmc", "mgn", "iia_bas", 89.40, 91.11},
    {"dukemtmc", "mgn", "iia_adv", 90.71, 92.24},

    {"cuhk03-lab", "trip", "baseline", 57.81, 63.29},
    {"cuhk03-lab", "trip", "aqe", 69.45, 69.93},
    {"cuhk03-lab", "trip", "iia_bas", 74.70, 73.50},
    {"cuhk03-lab", "trip", "iia_adv", 75.53, 73.86},
    {"cuhk03-lab", "pcb", "baseline", 61.57, 68.07},
    {"cuhk03-lab", "pcb", "aqe", 74.11, 74.86},
    {"cuhk03-lab", "pcb", "iia_bas", 79.78, 78.50},
    {"cuhk03-lab", "pcb", "iia_adv", 78.66, 76.93},
    {"cuhk03-lab", "pab", "baseline", 56.19, 61.86},
    {"cuhk03-lab", "pab", "aqe", 67.86, 69.07},
    {"cuhk03-lab", "pab", "iia_bas", 72.98, 71.86},
    {"cuhk03-lab", "pab", "iia_adv", 73.13, 71.64},
    {"cuhk03-lab", "mgn", "baseline", 67.67, 71.93},
    {"cuhk03-lab", "mgn", "aqe", 80.29, 80.57},
    {"cuhk03-lab", "mgn", "iia_bas", 85.93, 84.93},
    {"cuhk03-lab", "mgn", "iia_adv", 85.66, 84.36},

    {"cuhk03-det", "trip", "baseline", 54.85, 60.79},
    {"cuhk03-det", "trip", "aqe", 66.39, 67.71},
    {"cuhk03-det", "trip", "iia_bas", 72.58, 72.07},
    {"cuhk03-det", "trip", "iia_adv", 72.64, 72.10},
    {"cuhk03-det", "pcb", "baseline", 57.53, 62.86},
    {"cuhk03-det", "pcb", "aqe", 70.03, 71.79},
    {"cuhk03-det", "pcb", "iia_bas", 76.68, 75.64},
    {"cuhk03-det", "pcb", "iia_adv", 76.70, 75.58},
    {"cuhk03-det", "pab", "baseline", 55.20, 57.79},
    {"cuhk03-det", "pab", "aqe", 63.95, 64.57},
    {"cuhk03-det", "pab", "iia_bas", 70.93, 68.21},
    {"cuhk03-det", "pab", "iia_adv", 71.39, 68.93},
    {"cuhk03-det", "mgn", "baseline", 64.43, 69.71},
    {"cuhk03-det", "mgn", "aqe", 77.32, 76.79},
    {"cuhk03-det", "mgn", "iia_bas", 82.72, 80.14},
    {"cuhk03-det", "mgn", "iia_adv", 82.74, 80.21},
});

}  // namespace

std::span<const ReferenceResult> reference_results() { return kResults; }

std::optional<ReferenceResult> find_reference(std::string_view dataset, std::string_view backbone,
                                              std::string_view method) {
  for (const auto& r : kResults) {
    if (r.dataset == dataset && r.backbone == backbone && r.method == method) return r;
  }
  return std::nullopt;
}

OperatingPoint operating_point(std::string_view dataset) {
  if (dataset == "market1501") return {0.82, 11, 6, 0.2};
  if (dataset == "dukemtmc") return {0.82, 13, 7, 0.2};
  if (dataset == "cuhk03-lab" || dataset == "cuhk03-det") return {0.82, 8, 12, 0.2};
  throw ConfigError("unknown dataset '" + std::string(dataset) +
                    "' (expected market1501, dukemtmc, cuhk03-lab, cuhk03-det)");
}

}  // namespace iia
