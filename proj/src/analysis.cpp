#include "refiner/analysis.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>

#include "refiner/errors.hpp"
#include "refiner/tape.hpp"

namespace refiner {

std::string PerturbationMatrix::label(std::size_t index) const {
  return "p" + std::to_string(index / joints) + "_j" + std::to_string(index % joints);
}

void PerturbationMatrix::write_csv(std::ostream& out) const {
  const std::size_t d = dim();
  out << "affected\\perturbed";
  for (std::size_t c = 0; c < d; ++c) out << ',' << label(c);
  out << '\n';
  out.precision(17);
  for (std::size_t r = 0; r < d; ++r) {
    out << label(r);
    for (std::size_t c = 0; c < d; ++c) out << ',' << at(r, c);
    out << '\n';
  }
}

namespace {

void max_abs_change(const std::vector<Pose>& perturbed,
                    const std::vector<Pose>& baseline, std::size_t joints,
                    std::size_t col, PerturbationMatrix& m) {
  const std::size_t d = m.dim();
  for (std::size_t p = 0; p < perturbed.size(); ++p) {
    for (std::size_t q = 0; q < joints; ++q) {
      double change = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        change = std::max(change, std::abs(perturbed[p][q][c] - baseline[p][q][c]));
      }
      const std::size_t row = p * joints + q;
      m.entries[row * d + col] = std::max(m.entries[row * d + col], change);
    }
  }
}

}  // namespace

PerturbationMatrix perturbation_matrix(const RefinerModel& model,
                                       const Scene& scene, double delta,
                                       bool separate_axes) {
  scene.validate();
  PerturbationMatrix m;
  m.persons = scene.person_count();
  m.joints = scene.joint_count();
  m.entries.assign(m.dim() * m.dim(), 0.0);

  const std::vector<Pose> baseline = refine(model, scene).refined;
  for (std::size_t p = 0; p < m.persons; ++p) {
    for (std::size_t q = 0; q < m.joints; ++q) {
      const std::size_t col = p * m.joints + q;
      if (separate_axes) {
        for (std::size_t axis = 0; axis < 3; ++axis) {
          Scene perturbed = scene;
          perturbed.persons[p][q][axis] += delta;
          max_abs_change(refine(model, perturbed).refined, baseline, m.joints,
                         col, m);
        }
      } else {
        Scene perturbed = scene;
        for (std::size_t axis = 0; axis < 3; ++axis) {
          perturbed.persons[p][q][axis] += delta;
        }
        max_abs_change(refine(model, perturbed).refined, baseline, m.joints,
                       col, m);
      }
    }
  }
  return m;
}

CostReport count_cost(const RefinerModel& model, int n_persons) {
  if (n_persons < 1) throw DataError("count_cost: need at least one person");
  const int joints = model.config.joints;

  // Probe scene with deterministic placeholder coordinates.
  Scene probe;
  probe.id = "cost_probe";
  for (int p = 0; p < n_persons; ++p) {
    Pose pose(static_cast<std::size_t>(joints));
    for (int q = 0; q < joints; ++q) {
      pose[static_cast<std::size_t>(q)] = {0.31 * p + 0.01 * q, 0.9 - 0.05 * q,
                                           4.0 + 0.17 * p};
    }
    probe.persons.push_back(std::move(pose));
  }

  CostReport report;
  report.parameter_count = model.parameter_count();
  report.persons = n_persons;
  report.joints = joints;
  {
    Tape tape;
    const BoundModel bound = bind_model(tape, model);
    build_graph(tape, bound, probe, false);
    report.flops_per_refine = tape.flops();
  }
  {
    constexpr int kRuns = 5;
    double best = 1e300;
    for (int r = 0; r < kRuns; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      refine(model, probe);
      const std::chrono::duration<double, std::milli> dt =
          std::chrono::steady_clock::now() - t0;
      best = std::min(best, dt.count());
    }
    report.wall_ms_per_refine = best;
  }
  return report;
}

nlohmann::json CostReport::to_json() const {
  return {{"parameter_count", parameter_count},
          {"flops_per_refine", flops_per_refine},
          {"persons", persons},
          {"joints", joints},
          {"wall_ms_per_refine", wall_ms_per_refine}};
}

AblationResult ablation_run(const std::vector<Scene>& train,
                            const std::vector<Scene>& test,
                            const ModelConfig& base_config,
                            const TrainConfig& budget) {
  AblationResult result;
  result.initial = evaluate(test);

  auto run_mode = [&](InteractionMode mode) {
    ModelConfig config = base_config;
    config.mode = mode;
    RefinerModel model = init_model(config, budget.seed);
    train_model(model, train, {}, budget);
    return evaluate(refine_scenes(model, test));
  };
  result.people = run_mode(InteractionMode::kPeople);
  result.scene = run_mode(InteractionMode::kScene);
  result.none = run_mode(InteractionMode::kNone);

  std::ostringstream note;
  note.precision(4);
  note << "mpjpe_mm initial=" << result.initial.mpjpe_mm
       << " people=" << result.people.mpjpe_mm
       << " scene=" << result.scene.mpjpe_mm << " none=" << result.none.mpjpe_mm
       << "; people<=scene<=none "
       << ((result.people.mpjpe_mm <= result.scene.mpjpe_mm &&
            result.scene.mpjpe_mm <= result.none.mpjpe_mm)
               ? "holds"
               : "does not hold");
  result.ordering_note = note.str();
  return result;
}

}  // namespace refiner
