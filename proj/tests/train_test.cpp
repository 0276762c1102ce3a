#include <doctest.h>

#include <cmath>

#include "refiner/data.hpp"
#include "refiner/errors.hpp"
#include "refiner/train.hpp"

using namespace refiner;

namespace {

ModelConfig tiny_config() {
  ModelConfig config;
  config.joints = 15;
  config.dim = 8;
  config.sab_blocks = 1;
  config.heads = 2;
  config.decoder_hidden = 16;
  return config;
}

std::vector<Scene> tiny_dataset(int count, std::uint64_t seed) {
  DatasetConfig config;
  config.count = count;
  config.seed = seed;
  config.persons_max = 3;
  return generate_dataset(config);
}

}  // namespace

TEST_CASE("epoch zero logs the loss of the unrefined poses") {
  const std::vector<Scene> data = tiny_dataset(10, 3);
  RefinerModel model = init_model(tiny_config(), 5);

  double expected = 0.0;
  for (const Scene& scene : data) expected += pose_set_loss(scene.persons, scene.gt);
  expected /= static_cast<double>(data.size());

  std::vector<EpochLog> logs;
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = 4;
  train_model(model, data, {}, config, [&](const EpochLog& log) {
    logs.push_back(log);
  });
  REQUIRE(logs.size() == 2);
  CHECK(logs[0].epoch == 0);
  CHECK(logs[0].train_loss == expected);
  CHECK(logs[1].epoch == 1);
}

TEST_CASE("training reduces the loss and is reproducible") {
  const std::vector<Scene> train = tiny_dataset(32, 11);
  const std::vector<Scene> held = tiny_dataset(8, 12);

  TrainConfig config;
  config.epochs = 8;
  config.batch_size = 8;
  config.adam.lr = 1e-3;  // aggressive on purpose, tiny model
  config.seed = 2;

  std::vector<EpochLog> logs;
  RefinerModel model = init_model(tiny_config(), 5);
  train_model(model, train, held, config, [&](const EpochLog& log) {
    logs.push_back(log);
  });
  REQUIRE(logs.size() == 9);
  CHECK(logs.front().has_heldout);
  CHECK(logs.back().train_loss < logs.front().train_loss);

  RefinerModel rerun = init_model(tiny_config(), 5);
  train_model(rerun, train, held, config);
  const auto a = model.parameter_items();
  const auto b = rerun.parameter_items();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].second->data == b[i].second->data);  // bitwise
  }
}

TEST_CASE("training refuses scenes without ground truth") {
  std::vector<Scene> data = tiny_dataset(4, 1);
  data[2].gt.clear();
  RefinerModel model = init_model(tiny_config(), 5);
  CHECK_THROWS_AS(train_model(model, data, {}, TrainConfig{}), DataError);
}
