// Command-line driver: generate synthetic scene data, train the refiner,
// apply it, evaluate, and probe it (perturbation matrices, cost accounting).
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "refiner/analysis.hpp"
#include "refiner/data.hpp"
#include "refiner/errors.hpp"
#include "refiner/metrics.hpp"
#include "refiner/model.hpp"
#include "refiner/train.hpp"

namespace {

using nlohmann::json;

struct GlobalOpts {
  std::uint64_t seed = 0;
  bool quiet = false;
};

void announce(const GlobalOpts& global, const json& resolved) {
  if (!global.quiet) std::cerr << resolved.dump() << '\n';
}

void say(const GlobalOpts& global, const std::string& line) {
  if (!global.quiet) std::cout << line << '\n';
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw refiner::DataError("cannot open '" + path + "' for writing");
  return out;
}

void emit_json(const GlobalOpts& global, const json& payload,
               const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << payload.dump(2) << '\n';
  } else {
    open_out(out_path) << payload.dump(2) << '\n';
    say(global, "wrote " + out_path);
  }
}

void check_uniform_joints(const std::vector<refiner::Scene>& scenes) {
  for (const refiner::Scene& s : scenes) {
    if (s.joint_count() != scenes.front().joint_count()) {
      throw refiner::DataError("scene '" + s.id + "' has " +
                               std::to_string(s.joint_count()) +
                               " joints, expected " +
                               std::to_string(scenes.front().joint_count()));
    }
  }
}

// ---------------------------------------------------------------------------

struct GenOpts {
  std::string out;
  int scenes = 15000;
  int persons = 0;  // 0: keep min/max
  int persons_min = 2;
  int persons_max = 5;
  double handshake_frac = 0.4;
  double group_frac = 0.4;
  double joint_noise = 0.05;
  double depth_noise = 0.20;
  double trunc_prob = 0.2;
  double trunc_noise = 0.15;
};

void cmd_gen(const GlobalOpts& global, const GenOpts& opts) {
  refiner::DatasetConfig config;
  config.count = opts.scenes;
  config.seed = global.seed;
  config.persons_min = opts.persons > 0 ? opts.persons : opts.persons_min;
  config.persons_max = opts.persons > 0 ? opts.persons : opts.persons_max;
  config.handshake_frac = opts.handshake_frac;
  config.group_frac = opts.group_frac;
  config.corruption.joint_noise_sigma = opts.joint_noise;
  config.corruption.depth_offset_sigma = opts.depth_noise;
  config.corruption.truncation_prob = opts.trunc_prob;
  config.corruption.truncation_noise_sigma = opts.trunc_noise;
  config.validate();

  announce(global, {{"command", "gen"},
                    {"out", opts.out},
                    {"scenes", config.count},
                    {"seed", config.seed},
                    {"persons_min", config.persons_min},
                    {"persons_max", config.persons_max},
                    {"handshake_frac", config.handshake_frac},
                    {"group_frac", config.group_frac},
                    {"joint_noise", config.corruption.joint_noise_sigma},
                    {"depth_noise", config.corruption.depth_offset_sigma},
                    {"trunc_prob", config.corruption.truncation_prob},
                    {"trunc_noise", config.corruption.truncation_noise_sigma}});

  const std::vector<refiner::Scene> scenes = refiner::generate_dataset(config);
  refiner::write_scenes(opts.out, scenes);
  std::size_t persons = 0;
  for (const refiner::Scene& s : scenes) persons += s.person_count();
  say(global, "wrote " + std::to_string(scenes.size()) + " scenes (" +
                  std::to_string(persons) + " people) to " + opts.out);
}

// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string data;
  std::string out;
  std::string mode = "people";
  std::string fold = "10/0";
  std::string log_path;
  int epochs = 50;
  int batch = 32;
  double lr = 1e-4;
  int dim = 64;
  int blocks = 2;
  int heads = 4;
  int hidden = 256;
};

std::optional<std::pair<int, int>> parse_fold(const std::string& text) {
  if (text == "off" || text == "none") return std::nullopt;
  const std::size_t slash = text.find('/');
  if (slash == std::string::npos) {
    throw std::invalid_argument("--fold expects k/index (e.g. 10/0) or 'off'");
  }
  try {
    const int k = std::stoi(text.substr(0, slash));
    const int index = std::stoi(text.substr(slash + 1));
    return std::make_pair(k, index);
  } catch (const std::exception&) {
    throw std::invalid_argument("--fold expects k/index (e.g. 10/0) or 'off'");
  }
}

void cmd_train(const GlobalOpts& global, const TrainOpts& opts) {
  const auto fold = parse_fold(opts.fold);
  const std::vector<refiner::Scene> scenes = refiner::read_scenes(opts.data);
  if (scenes.empty()) throw refiner::DataError("no scenes in '" + opts.data + "'");
  check_uniform_joints(scenes);

  std::vector<refiner::Scene> train_set, heldout;
  if (fold) {
    refiner::KFoldSplit split =
        refiner::kfold(scenes, fold->first, fold->second, global.seed);
    train_set = std::move(split.train);
    heldout = std::move(split.test);
  } else {
    train_set = scenes;
  }

  refiner::ModelConfig config;
  config.joints = static_cast<int>(scenes.front().joint_count());
  config.dim = opts.dim;
  config.sab_blocks = opts.blocks;
  config.heads = opts.heads;
  config.decoder_hidden = opts.hidden;
  config.mode = refiner::parse_interaction_mode(opts.mode);
  config.validate();

  refiner::TrainConfig train_config;
  train_config.epochs = opts.epochs;
  train_config.batch_size = opts.batch;
  train_config.adam.lr = opts.lr;
  train_config.seed = global.seed;

  const json resolved = {{"command", "train"},
                         {"data", opts.data},
                         {"out", opts.out},
                         {"mode", opts.mode},
                         {"fold", opts.fold},
                         {"epochs", opts.epochs},
                         {"batch", opts.batch},
                         {"lr", opts.lr},
                         {"dim", opts.dim},
                         {"blocks", opts.blocks},
                         {"heads", opts.heads},
                         {"hidden", opts.hidden},
                         {"joints", config.joints},
                         {"train_scenes", train_set.size()},
                         {"heldout_scenes", heldout.size()},
                         {"seed", global.seed}};
  announce(global, resolved);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!opts.log_path.empty()) {
    log_file = open_out(opts.log_path);
    log = &log_file;
  }
  json config_line = resolved;
  config_line["event"] = "config";
  *log << config_line.dump() << '\n';

  refiner::RefinerModel model = refiner::init_model(config, global.seed);
  refiner::train_model(model, train_set, heldout, train_config,
                       [&](const refiner::EpochLog& entry) {
                         json line{{"event", "epoch"},
                                   {"epoch", entry.epoch},
                                   {"train_loss", entry.train_loss},
                                   {"seconds", entry.seconds}};
                         if (entry.has_heldout) {
                           line["heldout_mpjpe_mm"] = entry.heldout_mpjpe_mm;
                         }
                         *log << line.dump() << '\n' << std::flush;
                       });
  refiner::save_model(model, opts.out);
  say(global, "saved model to " + opts.out);
}

// ---------------------------------------------------------------------------

struct RefineOpts {
  std::string model;
  std::string data;
  std::string out;
};

void cmd_refine(const GlobalOpts& global, const RefineOpts& opts) {
  announce(global, {{"command", "refine"},
                    {"model", opts.model},
                    {"data", opts.data},
                    {"out", opts.out}});
  const refiner::RefinerModel model = refiner::load_model(opts.model);
  const std::vector<refiner::Scene> scenes = refiner::read_scenes(opts.data);
  refiner::write_scenes(opts.out, refiner::refine_scenes(model, scenes));
  say(global, "refined " + std::to_string(scenes.size()) + " scenes to " + opts.out);
}

// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string data;
  std::string initial;
  std::string out;
  bool per_scene = false;
};

void cmd_eval(const GlobalOpts& global, const EvalOpts& opts) {
  announce(global, {{"command", "eval"},
                    {"data", opts.data},
                    {"initial", opts.initial},
                    {"per_scene", opts.per_scene}});
  const std::vector<refiner::Scene> scenes = refiner::read_scenes(opts.data);
  const refiner::MetricReport report = refiner::evaluate(scenes);
  if (opts.initial.empty()) {
    emit_json(global, report.to_json(opts.per_scene), opts.out);
    return;
  }
  const refiner::MetricReport initial =
      refiner::evaluate(refiner::read_scenes(opts.initial));
  json payload;
  payload["refined"] = report.to_json(opts.per_scene);
  payload["initial"] = initial.to_json(opts.per_scene);
  payload["delta"] = {{"mpjpe_mm", report.mpjpe_mm - initial.mpjpe_mm},
                      {"mpjpe_pa_mm", report.mpjpe_pa_mm - initial.mpjpe_pa_mm},
                      {"pck_pct", report.pck_pct - initial.pck_pct},
                      {"auc_pct", report.auc_pct - initial.auc_pct},
                      {"pck_abs_pct", report.pck_abs_pct - initial.pck_abs_pct}};
  emit_json(global, payload, opts.out);
}

// ---------------------------------------------------------------------------

struct PerturbOpts {
  std::string model;
  std::string data;
  std::string out;
  int index = 0;
  double delta = 0.10;
  bool separate_axes = false;
};

void cmd_perturb(const GlobalOpts& global, const PerturbOpts& opts) {
  announce(global, {{"command", "perturb"},
                    {"model", opts.model},
                    {"data", opts.data},
                    {"index", opts.index},
                    {"delta", opts.delta},
                    {"separate_axes", opts.separate_axes},
                    {"out", opts.out}});
  const refiner::RefinerModel model = refiner::load_model(opts.model);
  const std::vector<refiner::Scene> scenes = refiner::read_scenes(opts.data);
  if (opts.index < 0 || static_cast<std::size_t>(opts.index) >= scenes.size()) {
    throw refiner::DataError("scene index " + std::to_string(opts.index) +
                             " out of range (file has " +
                             std::to_string(scenes.size()) + " scenes)");
  }
  const refiner::PerturbationMatrix matrix = refiner::perturbation_matrix(
      model, scenes[static_cast<std::size_t>(opts.index)], opts.delta,
      opts.separate_axes);
  if (opts.out.empty()) {
    matrix.write_csv(std::cout);
  } else {
    std::ofstream out = open_out(opts.out);
    matrix.write_csv(out);
    say(global, "wrote " + opts.out);
  }
}

// ---------------------------------------------------------------------------

struct CountOpts {
  std::string model;
  std::string out;
  int persons = 3;
};

void cmd_count(const GlobalOpts& global, const CountOpts& opts) {
  announce(global, {{"command", "count"},
                    {"model", opts.model},
                    {"persons", opts.persons},
                    {"out", opts.out}});
  const refiner::RefinerModel model = refiner::load_model(opts.model);
  emit_json(global, refiner::count_cost(model, opts.persons).to_json(), opts.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interaction-aware multi-person 3D pose refinement"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Read option defaults from a TOML file");

  GlobalOpts global;
  app.add_option("--seed", global.seed, "Seed for every random choice");
  app.add_flag("--quiet", global.quiet, "Suppress progress chatter");

  GenOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic scene file");
  gen_cmd->add_option("-o,--out", gen.out, "Output scene file (.jsonl)")->required();
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--persons", gen.persons, "Exact people per scene")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--persons-min", gen.persons_min, "Minimum people per scene")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--persons-max", gen.persons_max, "Maximum people per scene")
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--handshake-frac", gen.handshake_frac, "Share of hand-holding scenes")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--group-frac", gen.group_frac, "Share of standing-group scenes")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--joint-noise", gen.joint_noise, "Per-joint noise sigma (m)")
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--depth-noise", gen.depth_noise, "Per-person depth offset sigma (m)")
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--trunc-prob", gen.trunc_prob, "Truncation probability per person")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--trunc-noise", gen.trunc_noise, "Truncation noise sigma (m)")
      ->check(CLI::NonNegativeNumber);

  TrainOpts train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a refiner model");
  train_cmd->add_option("--data", train.data, "Scene file with ground truth")->required();
  train_cmd->add_option("-o,--out", train.out, "Output model file")->required();
  train_cmd->add_option("--mode", train.mode, "people|scene|none")
      ->check(CLI::IsMember({"people", "scene", "none"}));
  train_cmd->add_option("--fold", train.fold, "k/index cross-validation split, or 'off'");
  train_cmd->add_option("--epochs", train.epochs, "Training epochs")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch", train.batch, "Scenes per optimizer step")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", train.lr, "ADAM learning rate")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--dim", train.dim, "Embedding width")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--blocks", train.blocks, "Stacked attention blocks")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--heads", train.heads, "Attention heads")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--hidden", train.hidden, "Decoder hidden width")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--log", train.log_path, "Training log file (.jsonl; default stdout)");

  RefineOpts refine;
  CLI::App* refine_cmd = app.add_subcommand("refine", "Apply a model to a scene file");
  refine_cmd->add_option("--model", refine.model, "Model file")->required();
  refine_cmd->add_option("--data", refine.data, "Scene file")->required();
  refine_cmd->add_option("-o,--out", refine.out, "Output scene file")->required();

  EvalOpts eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate poses against ground truth");
  eval_cmd->add_option("--data", eval.data, "Scene file with ground truth")->required();
  eval_cmd->add_option("--initial", eval.initial,
                       "Also evaluate this file and report side-by-side deltas");
  eval_cmd->add_option("-o,--out", eval.out, "Write the report here instead of stdout");
  eval_cmd->add_flag("--per-scene", eval.per_scene, "Include the per-scene breakdown");

  PerturbOpts perturb;
  CLI::App* perturb_cmd =
      app.add_subcommand("perturb", "Joint-perturbation influence matrix (CSV)");
  perturb_cmd->add_option("--model", perturb.model, "Model file")->required();
  perturb_cmd->add_option("--data", perturb.data, "Scene file")->required();
  perturb_cmd->add_option("--index", perturb.index, "Scene index within the file")
      ->check(CLI::NonNegativeNumber);
  perturb_cmd->add_option("--delta", perturb.delta, "Displacement (m)")
      ->check(CLI::NonNegativeNumber);
  perturb_cmd->add_flag("--separate-axes", perturb.separate_axes,
                        "Displace x, y, z one at a time and combine by max");
  perturb_cmd->add_option("-o,--out", perturb.out, "Output CSV (default stdout)");

  CountOpts count;
  CLI::App* count_cmd = app.add_subcommand("count", "Parameter / FLOP / latency report");
  count_cmd->add_option("--model", count.model, "Model file")->required();
  count_cmd->add_option("--persons", count.persons, "Scene size for the FLOP count")
      ->check(CLI::PositiveNumber);
  count_cmd->add_option("-o,--out", count.out, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\nRun with --help for usage.\n";
    return 1;
  }

  try {
    if (gen_cmd->parsed()) cmd_gen(global, gen);
    if (train_cmd->parsed()) cmd_train(global, train);
    if (refine_cmd->parsed()) cmd_refine(global, refine);
    if (eval_cmd->parsed()) cmd_eval(global, eval);
    if (perturb_cmd->parsed()) cmd_perturb(global, perturb);
    if (count_cmd->parsed()) cmd_count(global, count);
  } catch (const refiner::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const refiner::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
