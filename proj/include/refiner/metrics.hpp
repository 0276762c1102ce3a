#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "refiner/scene.hpp"

namespace refiner {

// Pose accuracy metrics. MPJPE/PCK/AUC work on root-relative coordinates,
// PCKabs on absolute camera-centered ones. PCK thresholds use strict '<'
// (an error exactly at the threshold counts as a miss), except that an
// exactly-zero error is correct at every threshold, so a perfect pose keeps
// a perfect score at the 0 mm end of the AUC grid.
inline constexpr double kPckThresholdMm = 150.0;
inline constexpr double kPckAbsThresholdMm = 250.0;
inline constexpr double kAucStepMm = 5.0;  // grid 0,5,...,150 -> 31 samples

double mpjpe_mm(const Pose& pred, const Pose& gt, int root_index);
double pck_pct(const Pose& pred, const Pose& gt, int root_index,
               double threshold_mm = kPckThresholdMm);
double auc_pct(const Pose& pred, const Pose& gt, int root_index);
double pck_abs_pct(const Pose& pred, const Pose& gt,
                   double threshold_mm = kPckAbsThresholdMm);

// Optimal similarity alignment (rotation, uniform scale, translation) of
// pred onto gt in the least-squares sense; reflections are rejected by
// flipping the smallest singular direction. Needs J >= 3 and a
// non-degenerate (not collinear) configuration, else throws DataError.
Pose procrustes_align(const Pose& pred, const Pose& gt);
double mpjpe_pa_mm(const Pose& pred, const Pose& gt);

struct SceneMetrics {
  std::string id;
  double mpjpe_mm = 0;
  double mpjpe_pa_mm = 0;
  double pck_pct = 0;
  double auc_pct = 0;
  double pck_abs_pct = 0;
};

struct MetricReport {
  double mpjpe_mm = 0;
  double mpjpe_pa_mm = 0;
  double pck_pct = 0;
  double auc_pct = 0;
  double pck_abs_pct = 0;
  std::vector<SceneMetrics> per_scene;
  std::size_t joint_count = 0;  // total joints aggregated

  nlohmann::json to_json(bool include_per_scene = true) const;
};

// Aggregates persons vs gt over all scenes, joint-weighted. Every scene must
// carry ground truth.
MetricReport evaluate(const std::vector<Scene>& scenes);

}  // namespace refiner
