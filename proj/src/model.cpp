#include "refiner/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "refiner/errors.hpp"
#include "refiner/rng.hpp"

namespace refiner {

std::string to_string(InteractionMode mode) {
  switch (mode) {
    case InteractionMode::kPeople: return "people";
    case InteractionMode::kScene: return "scene";
    case InteractionMode::kNone: return "none";
  }
  return "?";
}

InteractionMode parse_interaction_mode(const std::string& name) {
  if (name == "people") return InteractionMode::kPeople;
  if (name == "scene") return InteractionMode::kScene;
  if (name == "none") return InteractionMode::kNone;
  throw DataError("unknown interaction mode '" + name +
                  "' (expected people|scene|none)");
}

void ModelConfig::validate() const {
  if (joints < 2) throw std::invalid_argument("config: joints must be >= 2");
  if (sab_blocks < 1) throw std::invalid_argument("config: need >= 1 attention block");
  if (heads < 1) throw std::invalid_argument("config: need >= 1 head");
  if (dim < heads || dim % heads != 0) {
    throw std::invalid_argument("config: dim must be a positive multiple of heads");
  }
  if (decoder_hidden < 1) throw std::invalid_argument("config: decoder_hidden must be >= 1");
}

// ---------------------------------------------------------------------------
// Canonical parameter walk. Everything that enumerates parameters (init,
// optimizer, model file, tape binding) must agree on this order.

namespace {

template <typename LinearT, typename Fn>
void walk_linear(const std::string& prefix, LinearT& layer, Fn&& fn) {
  fn(prefix + ".w", layer.w);
  fn(prefix + ".b", layer.b);
}

template <typename MabT, typename Fn>
void walk_mab(const std::string& prefix, MabT& mab, Fn&& fn) {
  for (std::size_t h = 0; h < mab.q.size(); ++h) {
    walk_linear(prefix + ".q" + std::to_string(h), mab.q[h], fn);
  }
  for (std::size_t h = 0; h < mab.k.size(); ++h) {
    walk_linear(prefix + ".k" + std::to_string(h), mab.k[h], fn);
  }
  for (std::size_t h = 0; h < mab.v.size(); ++h) {
    walk_linear(prefix + ".v" + std::to_string(h), mab.v[h], fn);
  }
  walk_linear(prefix + ".out", mab.out, fn);
  fn(prefix + ".ln1.gain", mab.ln1_gain);
  fn(prefix + ".ln1.bias", mab.ln1_bias);
  fn(prefix + ".ln2.gain", mab.ln2_gain);
  fn(prefix + ".ln2.bias", mab.ln2_bias);
  walk_linear(prefix + ".ff1", mab.ff1, fn);
  walk_linear(prefix + ".ff2", mab.ff2, fn);
}

template <typename ModelT, typename Fn>
void walk_model(ModelT& model, Fn&& fn) {
  walk_linear("person_proj", model.person_proj, fn);
  if (model.config.mode == InteractionMode::kScene) {
    walk_linear("joint_proj", model.joint_proj, fn);
  }
  for (std::size_t i = 0; i < model.sab.size(); ++i) {
    walk_mab("sab" + std::to_string(i), model.sab[i], fn);
  }
  fn("pma.seed", model.pma.seed);
  walk_linear("pma.pre1", model.pma.pre1, fn);
  walk_linear("pma.pre2", model.pma.pre2, fn);
  walk_mab("pma.mab", model.pma.mab, fn);
  walk_linear("decoder.hidden", model.decoder_hidden, fn);
  walk_linear("decoder.out", model.decoder_out, fn);
}

LinearLayer make_linear(std::size_t in, std::size_t out) {
  return LinearLayer{Tensor::zeros({in, out}), Tensor::zeros({out})};
}

MabParams make_mab(int dim, int heads) {
  const std::size_t d = static_cast<std::size_t>(dim);
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  MabParams mab;
  for (int h = 0; h < heads; ++h) {
    mab.q.push_back(make_linear(d, dh));
    mab.k.push_back(make_linear(d, dh));
    mab.v.push_back(make_linear(d, dh));
  }
  mab.out = make_linear(d, d);
  mab.ln1_gain = Tensor::zeros({d});
  mab.ln1_bias = Tensor::zeros({d});
  mab.ln2_gain = Tensor::zeros({d});
  mab.ln2_bias = Tensor::zeros({d});
  mab.ff1 = make_linear(d, d);
  mab.ff2 = make_linear(d, d);
  return mab;
}

RefinerModel make_skeleton(const ModelConfig& config) {
  config.validate();
  RefinerModel model;
  model.config = config;
  const std::size_t d = static_cast<std::size_t>(config.dim);
  const std::size_t in3j = 3u * static_cast<std::size_t>(config.joints);
  model.person_proj = make_linear(in3j, d);
  if (config.mode == InteractionMode::kScene) {
    model.joint_proj = make_linear(3, d);
  }
  for (int i = 0; i < config.sab_blocks; ++i) {
    model.sab.push_back(make_mab(config.dim, config.heads));
  }
  model.pma.seed = Tensor::zeros({1, d});
  model.pma.pre1 = make_linear(d, d);
  model.pma.pre2 = make_linear(d, d);
  model.pma.mab = make_mab(config.dim, config.heads);
  model.decoder_hidden = make_linear(2 * d, static_cast<std::size_t>(config.decoder_hidden));
  model.decoder_out = make_linear(static_cast<std::size_t>(config.decoder_hidden), in3j);
  return model;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<ParamRef> RefinerModel::parameters() {
  std::vector<ParamRef> out;
  walk_model(*this, [&](const std::string& name, Tensor& t) {
    out.push_back(ParamRef{name, &t});
  });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> RefinerModel::parameter_items()
    const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  walk_model(*this, [&](const std::string& name, const Tensor& t) {
    out.emplace_back(name, &t);
  });
  return out;
}

std::size_t RefinerModel::parameter_count() const {
  std::size_t n = 0;
  walk_model(*this, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::size_t parameter_count(const ModelConfig& config) {
  config.validate();
  const std::size_t d = static_cast<std::size_t>(config.dim);
  const std::size_t j3 = 3u * static_cast<std::size_t>(config.joints);
  const std::size_t hid = static_cast<std::size_t>(config.decoder_hidden);
  const std::size_t mab = 6 * d * d + 10 * d;  // per-head qkv fold to 3(d^2+d)
  std::size_t n = j3 * d + d;                                 // person projection
  if (config.mode == InteractionMode::kScene) n += 3 * d + d; // joint projection
  n += static_cast<std::size_t>(config.sab_blocks) * mab;
  n += d + 2 * (d * d + d) + mab;                             // pooling block
  n += 2 * d * hid + hid + hid * j3 + j3;                     // decoder
  return n;
}

RefinerModel init_model(const ModelConfig& config, std::uint64_t seed,
                        bool zero_decoder_out) {
  RefinerModel model = make_skeleton(config);
  Rng rng(seed);
  walk_model(model, [&](const std::string& name, Tensor& t) {
    if (ends_with(name, ".gain")) {
      for (double& v : t.data) v = 1.0;
    } else if (name == "pma.seed") {
      const double a = std::sqrt(3.0 / static_cast<double>(config.dim));
      for (double& v : t.data) v = rng.uniform(-a, a);
    } else if (ends_with(name, ".w")) {
      const double a =
          std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      for (double& v : t.data) v = rng.uniform(-a, a);
    }
    // biases and ln offsets stay zero
  });
  if (zero_decoder_out) {
    for (double& v : model.decoder_out.w.data) v = 0.0;
    for (double& v : model.decoder_out.b.data) v = 0.0;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Model file: magic "SREF", format version, config, then every parameter in
// canonical order as (name, rank, dims, raw little-endian f64).

namespace {

constexpr char kMagic[4] = {'S', 'R', 'E', 'F'};
constexpr std::uint32_t kFormatVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void write_f64(std::ostream& os, double v) {
  write_u64(os, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("corrupt model file: truncated while reading " + what);
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw DataError("corrupt model file: truncated while reading " + what);
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is, const std::string& what) {
  return std::bit_cast<double>(read_u64(is, what));
}

}  // namespace

void save_model(const RefinerModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  write_u32(os, kFormatVersion);
  write_u32(os, static_cast<std::uint32_t>(model.config.joints));
  write_u32(os, static_cast<std::uint32_t>(model.config.dim));
  write_u32(os, static_cast<std::uint32_t>(model.config.sab_blocks));
  write_u32(os, static_cast<std::uint32_t>(model.config.heads));
  write_u32(os, static_cast<std::uint32_t>(model.config.decoder_hidden));
  write_u32(os, static_cast<std::uint32_t>(model.config.mode));
  const auto items = model.parameter_items();
  write_u32(os, static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, tensor] : items) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(tensor->rank()));
    for (std::size_t dim : tensor->shape) write_u64(os, dim);
    for (double v : tensor->data) write_f64(os, v);
  }
  if (!os) throw DataError("write failed for '" + path + "'");
}

RefinerModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open model file '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("'" + path + "' is not a model file (bad magic)");
  }
  const std::uint32_t version = read_u32(is, "version");
  if (version != kFormatVersion) {
    throw DataError("unsupported model format version " + std::to_string(version));
  }
  ModelConfig config;
  config.joints = static_cast<int>(read_u32(is, "config.joints"));
  config.dim = static_cast<int>(read_u32(is, "config.dim"));
  config.sab_blocks = static_cast<int>(read_u32(is, "config.sab_blocks"));
  config.heads = static_cast<int>(read_u32(is, "config.heads"));
  config.decoder_hidden = static_cast<int>(read_u32(is, "config.decoder_hidden"));
  const std::uint32_t mode = read_u32(is, "config.mode");
  if (mode > 2) throw DataError("corrupt model file: bad interaction mode");
  config.mode = static_cast<InteractionMode>(mode);
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("corrupt model file: ") + e.what());
  }

  RefinerModel model = make_skeleton(config);
  const auto expected = model.parameters();
  const std::uint32_t count = read_u32(is, "parameter count");
  if (count != expected.size()) {
    throw DataError("corrupt model file: expected " +
                    std::to_string(expected.size()) + " parameters, found " +
                    std::to_string(count));
  }
  for (const ParamRef& p : expected) {
    const std::uint32_t name_len = read_u32(is, "parameter name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw DataError("corrupt model file: truncated parameter name");
    }
    if (name != p.name) {
      throw DataError("corrupt model file: parameter '" + name +
                      "' where '" + p.name + "' was expected");
    }
    const std::uint32_t rank = read_u32(is, name + " rank");
    if (rank != p.tensor->rank()) {
      throw DataError("corrupt model file: rank mismatch for " + name);
    }
    for (std::size_t d = 0; d < rank; ++d) {
      if (read_u64(is, name + " dims") != p.tensor->shape[d]) {
        throw DataError("corrupt model file: shape mismatch for " + name);
      }
    }
    for (double& v : p.tensor->data) v = read_f64(is, name + " data");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Forward graph construction.

namespace {

BoundLinear bind_linear(Tape& tape, const LinearLayer& layer,
                        std::vector<NodeId>& ids) {
  BoundLinear bound;
  bound.w = tape.leaf(layer.w);
  ids.push_back(bound.w);
  bound.b = tape.leaf(layer.b);
  ids.push_back(bound.b);
  return bound;
}

BoundMab bind_mab(Tape& tape, const MabParams& mab, std::vector<NodeId>& ids) {
  BoundMab bound;
  for (const LinearLayer& l : mab.q) bound.q.push_back(bind_linear(tape, l, ids));
  for (const LinearLayer& l : mab.k) bound.k.push_back(bind_linear(tape, l, ids));
  for (const LinearLayer& l : mab.v) bound.v.push_back(bind_linear(tape, l, ids));
  bound.out = bind_linear(tape, mab.out, ids);
  bound.ln1_gain = tape.leaf(mab.ln1_gain);
  ids.push_back(bound.ln1_gain);
  bound.ln1_bias = tape.leaf(mab.ln1_bias);
  ids.push_back(bound.ln1_bias);
  bound.ln2_gain = tape.leaf(mab.ln2_gain);
  ids.push_back(bound.ln2_gain);
  bound.ln2_bias = tape.leaf(mab.ln2_bias);
  ids.push_back(bound.ln2_bias);
  bound.ff1 = bind_linear(tape, mab.ff1, ids);
  bound.ff2 = bind_linear(tape, mab.ff2, ids);
  return bound;
}

}  // namespace

BoundModel bind_model(Tape& tape, const RefinerModel& model) {
  BoundModel bound;
  bound.config = model.config;
  bound.person_proj = bind_linear(tape, model.person_proj, bound.param_ids);
  if (model.config.mode == InteractionMode::kScene) {
    bound.joint_proj = bind_linear(tape, model.joint_proj, bound.param_ids);
  }
  for (const MabParams& mab : model.sab) {
    bound.sab.push_back(bind_mab(tape, mab, bound.param_ids));
  }
  bound.pma.seed = tape.leaf(model.pma.seed);
  bound.param_ids.push_back(bound.pma.seed);
  bound.pma.pre1 = bind_linear(tape, model.pma.pre1, bound.param_ids);
  bound.pma.pre2 = bind_linear(tape, model.pma.pre2, bound.param_ids);
  bound.pma.mab = bind_mab(tape, model.pma.mab, bound.param_ids);
  bound.decoder_hidden = bind_linear(tape, model.decoder_hidden, bound.param_ids);
  bound.decoder_out = bind_linear(tape, model.decoder_out, bound.param_ids);
  return bound;
}

NodeId linear(Tape& tape, const BoundLinear& layer, NodeId x) {
  return tape.add_row_vector(tape.matmul(x, layer.w), layer.b);
}

NodeId multihead_attention(Tape& tape, const BoundMab& block, NodeId query,
                           NodeId keyval, int heads) {
  const std::size_t dh = tape.value(block.q[0].w).cols();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<NodeId> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const NodeId qh = linear(tape, block.q[static_cast<std::size_t>(h)], query);
    const NodeId kh = linear(tape, block.k[static_cast<std::size_t>(h)], keyval);
    const NodeId vh = linear(tape, block.v[static_cast<std::size_t>(h)], keyval);
    const NodeId scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), att_scale);
    head_outputs.push_back(tape.matmul(tape.softmax_rows(scores), vh));
  }
  return linear(tape, block.out, tape.concat_cols(head_outputs));
}

NodeId mab_forward(Tape& tape, const BoundMab& block, NodeId x, NodeId y,
                   int heads) {
  const NodeId h = tape.layer_norm(
      tape.add(x, multihead_attention(tape, block, x, y, heads)),
      block.ln1_gain, block.ln1_bias);
  const NodeId ff =
      linear(tape, block.ff2, tape.relu(linear(tape, block.ff1, h)));
  return tape.layer_norm(tape.add(h, ff), block.ln2_gain, block.ln2_bias);
}

NodeId sab_forward(Tape& tape, const BoundMab& block, NodeId x, int heads) {
  return mab_forward(tape, block, x, x, heads);
}

NodeId pma_forward(Tape& tape, const BoundPma& block, NodeId z, int heads) {
  const NodeId ff =
      linear(tape, block.pre2, tape.relu(linear(tape, block.pre1, z)));
  return mab_forward(tape, block.mab, block.seed, ff, heads);
}

namespace {

// Row-major flattening of poses: person per row, coordinates x0 y0 z0 x1 ...
Tensor pose_matrix(const std::vector<Pose>& poses) {
  const std::size_t n = poses.size();
  const std::size_t j = poses[0].size();
  Tensor out({n, 3 * j});
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < j; ++q) {
      for (std::size_t c = 0; c < 3; ++c) out(p, 3 * q + c) = poses[p][q][c];
    }
  }
  return out;
}

Joint mean_root(const std::vector<Pose>& poses, int root_index) {
  Joint c{0.0, 0.0, 0.0};
  for (const Pose& p : poses) {
    for (std::size_t k = 0; k < 3; ++k) {
      c[k] += p[static_cast<std::size_t>(root_index)][k];
    }
  }
  for (std::size_t k = 0; k < 3; ++k) c[k] /= static_cast<double>(poses.size());
  return c;
}

Tensor centered_person_matrix(const Scene& scene, const Joint& centroid) {
  Tensor m = pose_matrix(scene.persons);
  for (std::size_t p = 0; p < m.rows(); ++p) {
    for (std::size_t col = 0; col < m.cols(); ++col) {
      m(p, col) -= centroid[col % 3];
    }
  }
  return m;
}

Tensor centered_joint_matrix(const Scene& scene, const Joint& centroid) {
  const std::size_t n = scene.person_count();
  const std::size_t j = scene.joint_count();
  Tensor m({n * j, 3});
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < j; ++q) {
      for (std::size_t c = 0; c < 3; ++c) {
        m(p * j + q, c) = scene.persons[p][q][c] - centroid[c];
      }
    }
  }
  return m;
}

Tensor centered_person_row(const Scene& scene, std::size_t person) {
  const Pose& pose = scene.persons[person];
  const Joint& root = pose[static_cast<std::size_t>(scene.root_index)];
  Tensor m({1, 3 * pose.size()});
  for (std::size_t q = 0; q < pose.size(); ++q) {
    for (std::size_t c = 0; c < 3; ++c) m(0, 3 * q + c) = pose[q][c] - root[c];
  }
  return m;
}

void check_scene_for_model(const ModelConfig& config, const Scene& scene) {
  scene.validate();
  if (scene.joint_count() != static_cast<std::size_t>(config.joints)) {
    throw DataError("scene '" + scene.id + "' has " +
                    std::to_string(scene.joint_count()) +
                    " joints but the model expects " +
                    std::to_string(config.joints));
  }
}

NodeId decode_corrections(Tape& tape, const BoundModel& bound, NodeId embedding,
                          NodeId person_rows, std::size_t n_rows) {
  const NodeId conditioned = tape.concat_cols(
      {n_rows == 1 ? embedding : tape.repeat_rows(embedding, n_rows),
       person_rows});
  const NodeId hidden = tape.relu(linear(tape, bound.decoder_hidden, conditioned));
  return linear(tape, bound.decoder_out, hidden);
}

}  // namespace

std::vector<NodeId> encode_set(Tape& tape, const BoundModel& bound,
                               const Scene& scene) {
  check_scene_for_model(bound.config, scene);
  switch (bound.config.mode) {
    case InteractionMode::kPeople: {
      const Joint centroid = mean_root(scene.persons, scene.root_index);
      const NodeId x = tape.leaf(centered_person_matrix(scene, centroid));
      return {linear(tape, bound.person_proj, x)};
    }
    case InteractionMode::kScene: {
      const Joint centroid = mean_root(scene.persons, scene.root_index);
      const NodeId x = tape.leaf(centered_joint_matrix(scene, centroid));
      return {linear(tape, bound.joint_proj, x)};
    }
    case InteractionMode::kNone: {
      std::vector<NodeId> sets;
      sets.reserve(scene.person_count());
      for (std::size_t p = 0; p < scene.person_count(); ++p) {
        const NodeId x = tape.leaf(centered_person_row(scene, p));
        sets.push_back(linear(tape, bound.person_proj, x));
      }
      return sets;
    }
  }
  throw std::logic_error("unreachable");
}

SceneGraph build_graph(Tape& tape, const BoundModel& bound, const Scene& scene,
                       bool with_loss) {
  check_scene_for_model(bound.config, scene);
  if (with_loss && !scene.has_gt()) {
    throw DataError("scene '" + scene.id + "' has no ground truth");
  }
  const std::size_t n = scene.person_count();
  const double j3 = 3.0 * static_cast<double>(scene.joint_count());
  SceneGraph graph;

  if (bound.config.mode == InteractionMode::kNone) {
    std::vector<NodeId> losses;
    for (std::size_t p = 0; p < n; ++p) {
      NodeId elements = linear(tape, bound.person_proj,
                               tape.leaf(centered_person_row(scene, p)));
      NodeId z = elements;
      for (const BoundMab& block : bound.sab) {
        z = sab_forward(tape, block, z, bound.config.heads);
      }
      const NodeId embedding = pma_forward(tape, bound.pma, z, bound.config.heads);
      const NodeId delta = decode_corrections(tape, bound, embedding, elements, 1);
      const NodeId initial = tape.leaf(pose_matrix({scene.persons[p]}));
      const NodeId refined = tape.add(initial, delta);
      graph.embeddings.push_back(embedding);
      graph.correction_blocks.push_back(delta);
      graph.refined_blocks.push_back(refined);
      if (with_loss) {
        const NodeId gt = tape.leaf(pose_matrix({scene.gt[p]}));
        losses.push_back(tape.scale(tape.mse(refined, gt), j3));
      }
    }
    if (with_loss) {
      NodeId total = losses[0];
      for (std::size_t p = 1; p < losses.size(); ++p) {
        total = tape.add(total, losses[p]);
      }
      graph.loss = tape.scale(total, 1.0 / static_cast<double>(n));
      graph.has_loss = true;
    }
    return graph;
  }

  // kPeople / kScene: a single set covers the whole scene.
  const Joint centroid = mean_root(scene.persons, scene.root_index);
  const NodeId person_rows =
      linear(tape, bound.person_proj, tape.leaf(centered_person_matrix(scene, centroid)));
  NodeId z;
  if (bound.config.mode == InteractionMode::kPeople) {
    z = person_rows;
  } else {
    z = linear(tape, bound.joint_proj, tape.leaf(centered_joint_matrix(scene, centroid)));
  }
  for (const BoundMab& block : bound.sab) {
    z = sab_forward(tape, block, z, bound.config.heads);
  }
  const NodeId embedding = pma_forward(tape, bound.pma, z, bound.config.heads);
  const NodeId delta = decode_corrections(tape, bound, embedding, person_rows, n);
  const NodeId initial = tape.leaf(pose_matrix(scene.persons));
  const NodeId refined = tape.add(initial, delta);
  graph.embeddings.push_back(embedding);
  graph.correction_blocks.push_back(delta);
  graph.refined_blocks.push_back(refined);
  if (with_loss) {
    const NodeId gt = tape.leaf(pose_matrix(scene.gt));
    graph.loss = tape.scale(tape.mse(refined, gt), j3);
    graph.has_loss = true;
  }
  return graph;
}

namespace {

std::vector<Pose> blocks_to_poses(const Tape& tape,
                                  const std::vector<NodeId>& blocks,
                                  std::size_t n, std::size_t j) {
  std::vector<Pose> poses(n, Pose(j));
  auto fill_row = [&](const Tensor& m, std::size_t row, std::size_t person) {
    for (std::size_t q = 0; q < j; ++q) {
      for (std::size_t c = 0; c < 3; ++c) {
        poses[person][q][c] = m(row, 3 * q + c);
      }
    }
  };
  if (blocks.size() == 1) {
    const Tensor& m = tape.value(blocks[0]);
    for (std::size_t p = 0; p < n; ++p) fill_row(m, p, p);
  } else {
    for (std::size_t p = 0; p < n; ++p) fill_row(tape.value(blocks[p]), 0, p);
  }
  return poses;
}

}  // namespace

RefineResult refine(const RefinerModel& model, const Scene& scene) {
  Tape tape;
  const BoundModel bound = bind_model(tape, model);
  const SceneGraph graph = build_graph(tape, bound, scene, false);
  RefineResult result;
  const std::size_t n = scene.person_count();
  const std::size_t j = scene.joint_count();
  result.refined = blocks_to_poses(tape, graph.refined_blocks, n, j);
  result.corrections = blocks_to_poses(tape, graph.correction_blocks, n, j);
  for (NodeId e : graph.embeddings) {
    result.embeddings.push_back(tape.value(e).data);
  }
  return result;
}

std::vector<Scene> refine_scenes(const RefinerModel& model,
                                 const std::vector<Scene>& scenes) {
  std::vector<Scene> out;
  out.reserve(scenes.size());
  for (const Scene& scene : scenes) {
    Scene refined = scene;
    refined.persons = refine(model, scene).refined;
    out.push_back(std::move(refined));
  }
  return out;
}

double scene_loss(const RefinerModel& model, const Scene& scene) {
  Tape tape;
  const BoundModel bound = bind_model(tape, model);
  const SceneGraph graph = build_graph(tape, bound, scene, true);
  return tape.scalar(graph.loss);
}

double pose_set_loss(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw DataError("pose_set_loss: person count mismatch");
  }
  double total = 0.0;
  std::size_t coords = 0;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (pred[p].size() != gt[p].size()) {
      throw DataError("pose_set_loss: joint count mismatch");
    }
    for (std::size_t q = 0; q < pred[p].size(); ++q) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = pred[p][q][c] - gt[p][q][c];
        total += d * d;
      }
    }
    coords += 3 * pred[p].size();
  }
  // Same operation order as the graph (mean over coordinates, then scaled by
  // 3J), so a zero-correction model reproduces this value bit for bit.
  const double per_person = 3.0 * static_cast<double>(pred[0].size());
  return total / static_cast<double>(coords) * per_person;
}

double model_grad_max_rel_error(const RefinerModel& model, const Scene& scene,
                                double h) {
  RefinerModel probe = model;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    const BoundModel bound = bind_model(tape, probe);
    const SceneGraph graph = build_graph(tape, bound, scene, true);
    tape.backward(graph.loss);
    analytic.reserve(bound.param_ids.size());
    for (NodeId id : bound.param_ids) analytic.push_back(tape.grad(id));
  }
  auto eval = [&]() {
    Tape tape;
    const BoundModel bound = bind_model(tape, probe);
    return tape.scalar(build_graph(tape, bound, scene, true).loss);
  };
  const auto params = probe.parameters();
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].tensor;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double keep = t.data[i];
      t.data[i] = keep + h;
      const double hi = eval();
      t.data[i] = keep - h;
      const double lo = eval();
      t.data[i] = keep;
      const double numeric = (hi - lo) / (2.0 * h);
      const double a = analytic[p].data[i];
      // Denominator floor 1e-4: some coordinates (key biases, which cancel
      // in the row softmax) have an exactly-zero gradient, where finite
      // differences return pure rounding noise of ~1e-9.
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-4});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace refiner
