#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "refiner/adam.hpp"
#include "refiner/model.hpp"
#include "refiner/scene.hpp"

namespace refiner {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;  // scenes per optimizer step, gradients averaged
  AdamConfig adam;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;  // 0 is the pre-training evaluation pass
  double train_loss = 0;
  double heldout_mpjpe_mm = 0;
  bool has_heldout = false;
  double seconds = 0;
};

using LogSink = std::function<void(const EpochLog&)>;

// Mini-batch ADAM on the per-scene objective. Epoch 0 in the log is a pure
// evaluation before any update; later entries carry the running training
// loss of the epoch. Deterministic for a fixed (model, data, config).
void train_model(RefinerModel& model, const std::vector<Scene>& train,
                 const std::vector<Scene>& heldout, const TrainConfig& config,
                 const LogSink& sink = {});

// Root-relative MPJPE of the refined poses over a scene set, joint-weighted.
double heldout_mpjpe_mm(const RefinerModel& model,
                        const std::vector<Scene>& scenes);

}  // namespace refiner
