#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "refiner/metrics.hpp"
#include "refiner/model.hpp"
#include "refiner/scene.hpp"
#include "refiner/train.hpp"

namespace refiner {

// How a displacement of one input joint moves every refined joint. Columns
// index the perturbed joint, rows the affected joint (person-major), entries
// in meters: the largest absolute coordinate change of that output joint.
struct PerturbationMatrix {
  std::size_t persons = 0;
  std::size_t joints = 0;
  std::vector<double> entries;  // (persons*joints)^2, row-major

  std::size_t dim() const { return persons * joints; }
  double at(std::size_t row, std::size_t col) const {
    return entries[row * dim() + col];
  }
  std::string label(std::size_t index) const;
  void write_csv(std::ostream& out) const;
};

// Each column comes from one extra refinement with (delta,delta,delta) added
// to the perturbed input joint. With separate_axes the three axes are
// displaced one at a time instead and the per-axis effects combined by max.
PerturbationMatrix perturbation_matrix(const RefinerModel& model,
                                       const Scene& scene, double delta = 0.10,
                                       bool separate_axes = false);

struct CostReport {
  std::size_t parameter_count = 0;
  std::uint64_t flops_per_refine = 0;
  int persons = 0;
  int joints = 0;
  double wall_ms_per_refine = 0;  // measured, hardware-specific

  nlohmann::json to_json() const;
};

// Parameters counted exactly; FLOPs counted analytically from the recorded
// forward pass at the given scene size.
CostReport count_cost(const RefinerModel& model, int n_persons);

struct AblationResult {
  MetricReport initial;
  MetricReport people;
  MetricReport scene;
  MetricReport none;
  std::string ordering_note;
};

// Trains one model per interaction mode with identical seed, budget and
// architecture, then evaluates all of them (and the unrefined initial poses)
// on the test set. The mode ordering is reported, not enforced.
AblationResult ablation_run(const std::vector<Scene>& train,
                            const std::vector<Scene>& test,
                            const ModelConfig& base_config,
                            const TrainConfig& budget);

}  // namespace refiner
