#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refiner/adam.hpp"
#include "refiner/scene.hpp"
#include "refiner/tape.hpp"
#include "refiner/tensor.hpp"

namespace refiner {

// What the attention encoder treats as one set element:
//   kPeople - each person's full pose (one set per scene)
//   kScene  - each joint in the scene (one set per scene)
//   kNone   - each person alone in a singleton set (no cross-person flow)
enum class InteractionMode : std::uint8_t { kPeople = 0, kScene = 1, kNone = 2 };

std::string to_string(InteractionMode mode);
InteractionMode parse_interaction_mode(const std::string& name);

struct ModelConfig {
  int joints = 15;
  int dim = 64;  // width of set elements, attention and the scene embedding
  int sab_blocks = 2;
  int heads = 4;
  int decoder_hidden = 256;
  InteractionMode mode = InteractionMode::kPeople;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LinearLayer {
  Tensor w;  // in x out
  Tensor b;  // out
};

// Multihead attention block: two layer norms around residual attention and a
// row-wise feed-forward (d -> d -> d, ReLU hidden).
struct MabParams {
  std::vector<LinearLayer> q, k, v;  // one projection per head, d -> d/heads
  LinearLayer out;                   // d -> d
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
  LinearLayer ff1, ff2;
};

// Attention pooling onto a single learnable seed row.
struct PmaParams {
  Tensor seed;             // 1 x d
  LinearLayer pre1, pre2;  // feed-forward over the set before pooling
  MabParams mab;
};

struct RefinerModel {
  ModelConfig config;
  LinearLayer person_proj;  // 3J -> d, set elements + decoder conditioning
  LinearLayer joint_proj;   // 3 -> d, set elements in kScene mode only
  std::vector<MabParams> sab;
  PmaParams pma;
  LinearLayer decoder_hidden;  // 2d -> hidden
  LinearLayer decoder_out;     // hidden -> 3J

  // Canonical enumeration; order is stable and shared by init, the model
  // file format and the optimizer.
  std::vector<ParamRef> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameter_items() const;
  std::size_t parameter_count() const;
};

// Closed-form parameter count for a config (mirrors the stored tensors).
std::size_t parameter_count(const ModelConfig& config);

// Glorot-uniform weights, zero biases, unit layer-norm gains. With
// zero_decoder_out the last decoder layer starts at exactly zero, so a fresh
// model is the identity refinement. Same seed, same bits.
RefinerModel init_model(const ModelConfig& config, std::uint64_t seed,
                        bool zero_decoder_out = true);

void save_model(const RefinerModel& model, const std::string& path);
RefinerModel load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Tape-level forward pieces. bind_model pushes every parameter as a leaf;
// param_ids aligns with RefinerModel::parameters() so gradients can be read
// back after a backward pass.

struct BoundLinear {
  NodeId w = 0, b = 0;
};

struct BoundMab {
  std::vector<BoundLinear> q, k, v;
  BoundLinear out;
  NodeId ln1_gain = 0, ln1_bias = 0, ln2_gain = 0, ln2_bias = 0;
  BoundLinear ff1, ff2;
};

struct BoundPma {
  NodeId seed = 0;
  BoundLinear pre1, pre2;
  BoundMab mab;
};

struct BoundModel {
  ModelConfig config;
  BoundLinear person_proj, joint_proj;
  std::vector<BoundMab> sab;
  BoundPma pma;
  BoundLinear decoder_hidden, decoder_out;
  std::vector<NodeId> param_ids;
};

BoundModel bind_model(Tape& tape, const RefinerModel& model);

NodeId linear(Tape& tape, const BoundLinear& layer, NodeId x);
NodeId multihead_attention(Tape& tape, const BoundMab& block, NodeId query,
                           NodeId keyval, int heads);
NodeId mab_forward(Tape& tape, const BoundMab& block, NodeId x, NodeId y,
                   int heads);
NodeId sab_forward(Tape& tape, const BoundMab& block, NodeId x, int heads);
NodeId pma_forward(Tape& tape, const BoundPma& block, NodeId z, int heads);

// Set elements after input projection: one M x d node per set (a single set
// for kPeople/kScene, one singleton set per person for kNone). Inputs are
// centered on the set's mean root joint beforehand.
std::vector<NodeId> encode_set(Tape& tape, const BoundModel& bound,
                               const Scene& scene);

// Full forward graph for one scene. Blocks come in person-major order: a
// single N x 3J node for kPeople/kScene, or N separate 1 x 3J nodes for
// kNone. The loss node (mean over persons of the squared coordinate error
// against gt) is built only when requested.
struct SceneGraph {
  std::vector<NodeId> embeddings;        // each 1 x d
  std::vector<NodeId> correction_blocks;
  std::vector<NodeId> refined_blocks;
  NodeId loss = 0;
  bool has_loss = false;
};

SceneGraph build_graph(Tape& tape, const BoundModel& bound, const Scene& scene,
                       bool with_loss);

// ---------------------------------------------------------------------------
// Plain-data entry points.

struct RefineResult {
  std::vector<Pose> refined;
  std::vector<Pose> corrections;
  std::vector<std::vector<double>> embeddings;  // 1 entry, or N for kNone
};

RefineResult refine(const RefinerModel& model, const Scene& scene);

// Applies the model to every scene, replacing persons with refined poses
// (ids, gt and root index are preserved).
std::vector<Scene> refine_scenes(const RefinerModel& model,
                                 const std::vector<Scene>& scenes);

// Forward-only training loss of one scene (requires gt).
double scene_loss(const RefinerModel& model, const Scene& scene);

// Same objective computed directly from poses, no model involved.
double pose_set_loss(const std::vector<Pose>& pred, const std::vector<Pose>& gt);

// Max relative error between tape gradients and central finite differences
// over every parameter coordinate (the model copy is perturbed, the input
// model is untouched).
double model_grad_max_rel_error(const RefinerModel& model, const Scene& scene,
                                double h = 1e-5);

}  // namespace refiner
