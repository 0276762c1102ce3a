#include "refiner/train.hpp"

#include <chrono>
#include <numeric>
#include <stdexcept>

#include "refiner/errors.hpp"
#include "refiner/metrics.hpp"
#include "refiner/rng.hpp"
#include "refiner/tape.hpp"

namespace refiner {

double heldout_mpjpe_mm(const RefinerModel& model,
                        const std::vector<Scene>& scenes) {
  double sum = 0.0;
  std::size_t joints = 0;
  for (const Scene& scene : scenes) {
    const RefineResult result = refine(model, scene);
    for (std::size_t p = 0; p < scene.person_count(); ++p) {
      sum += mpjpe_mm(result.refined[p], scene.gt[p], scene.root_index) *
             static_cast<double>(scene.joint_count());
      joints += scene.joint_count();
    }
  }
  if (joints == 0) throw DataError("heldout_mpjpe_mm: no joints to evaluate");
  return sum / static_cast<double>(joints);
}

void train_model(RefinerModel& model, const std::vector<Scene>& train,
                 const std::vector<Scene>& heldout, const TrainConfig& config,
                 const LogSink& sink) {
  if (train.empty()) throw DataError("train_model: empty training set");
  if (config.epochs < 0 || config.batch_size < 1) {
    throw std::invalid_argument("train_model: bad epoch/batch configuration");
  }
  for (const Scene& scene : train) {
    if (!scene.has_gt()) {
      throw DataError("train_model: scene '" + scene.id + "' has no ground truth");
    }
  }

  const auto params = model.parameters();
  AdamState adam(params, config.adam);
  const Rng base(config.seed);

  auto emit = [&](int epoch, double loss, double seconds) {
    if (!sink) return;
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss;
    log.seconds = seconds;
    if (!heldout.empty()) {
      log.heldout_mpjpe_mm = heldout_mpjpe_mm(model, heldout);
      log.has_heldout = true;
    }
    sink(log);
  };

  {
    const auto t0 = std::chrono::steady_clock::now();
    double initial_loss = 0.0;
    for (const Scene& scene : train) initial_loss += scene_loss(model, scene);
    initial_loss /= static_cast<double>(train.size());
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    emit(0, initial_loss, dt.count());
  }

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> grad_sum;
  grad_sum.reserve(params.size());
  for (const ParamRef& p : params) grad_sum.push_back(Tensor::zeros(p.tensor->shape));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng epoch_rng = base.split(static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(order);
    double loss_sum = 0.0;

    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      for (Tensor& g : grad_sum) {
        std::fill(g.data.begin(), g.data.end(), 0.0);
      }
      for (std::size_t i = start; i < stop; ++i) {
        Tape tape;
        const BoundModel bound = bind_model(tape, model);
        const SceneGraph graph = build_graph(tape, bound, train[order[i]], true);
        const double loss = tape.scalar(graph.loss);
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite loss on scene '" + train[order[i]].id + "'");
        }
        loss_sum += loss;
        tape.backward(graph.loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
          const Tensor& g = tape.grad(bound.param_ids[p]);
          for (std::size_t c = 0; c < g.size(); ++c) grad_sum[p].data[c] += g.data[c];
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (Tensor& g : grad_sum) {
        for (double& v : g.data) v *= inv;
      }
      adam.step(params, grad_sum);
    }

    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    emit(epoch, loss_sum / static_cast<double>(order.size()), dt.count());
  }
}

}  // namespace refiner
