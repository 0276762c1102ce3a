#include "refiner/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "refiner/errors.hpp"
#include "refiner/rng.hpp"

namespace refiner {

int SkeletonTemplate::root() const {
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (parents[i] < 0) return static_cast<int>(i);
  }
  return -1;
}

int SkeletonTemplate::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < joint_names.size(); ++i) {
    if (joint_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

void SkeletonTemplate::validate() const {
  const std::size_t j = joint_names.size();
  if (j < 2 || parents.size() != j || bone_lengths.size() != j) {
    throw DataError("skeleton template: inconsistent field lengths");
  }
  int roots = 0;
  for (std::size_t i = 0; i < j; ++i) {
    if (parents[i] < 0) {
      ++roots;
    } else {
      if (static_cast<std::size_t>(parents[i]) >= i) {
        throw DataError("skeleton template: parent must precede child");
      }
      if (bone_lengths[i] <= 0.0) {
        throw DataError("skeleton template: bone lengths must be positive");
      }
    }
  }
  if (roots != 1) throw DataError("skeleton template: exactly one root required");
}

SkeletonTemplate SkeletonTemplate::default_human() {
  SkeletonTemplate t;
  auto add = [&](const char* name, int parent, double length) {
    t.joint_names.emplace_back(name);
    t.parents.push_back(parent);
    t.bone_lengths.push_back(length);
  };
  add("pelvis", -1, 0.0);
  add("neck", 0, 0.52);
  add("head", 1, 0.22);
  add("l_shoulder", 1, 0.18);
  add("l_elbow", 3, 0.28);
  add("l_wrist", 4, 0.25);
  add("r_shoulder", 1, 0.18);
  add("r_elbow", 6, 0.28);
  add("r_wrist", 7, 0.25);
  add("l_hip", 0, 0.11);
  add("l_knee", 9, 0.42);
  add("l_ankle", 10, 0.41);
  add("r_hip", 0, 0.11);
  add("r_knee", 12, 0.42);
  add("r_ankle", 13, 0.41);
  return t;
}

void CorruptionConfig::validate() const {
  if (joint_noise_sigma < 0 || depth_offset_sigma < 0 || truncation_noise_sigma < 0) {
    throw DataError("corruption config: sigmas must be >= 0");
  }
  if (truncation_prob < 0 || truncation_prob > 1) {
    throw DataError("corruption config: truncation_prob must be in [0,1]");
  }
}

std::string to_string(InteractionPattern pattern) {
  switch (pattern) {
    case InteractionPattern::kHandshake: return "handshake";
    case InteractionPattern::kGroup: return "group";
    case InteractionPattern::kIndependent: return "independent";
  }
  return "?";
}

InteractionPattern parse_interaction_pattern(const std::string& name) {
  if (name == "handshake") return InteractionPattern::kHandshake;
  if (name == "group") return InteractionPattern::kGroup;
  if (name == "independent") return InteractionPattern::kIndependent;
  throw DataError("unknown interaction pattern '" + name + "'");
}

// ---------------------------------------------------------------------------
// Pose synthesis. Minimal 3-vector / 3x3 rotation helpers, local to this file.

namespace {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double norm(Vec3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }
Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  return n > 0 ? (1.0 / n) * a : Vec3{0, -1, 0};
}

struct Mat3 {
  // row-major
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  Vec3 apply(Vec3 v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        r.m[3 * i + j] = m[3 * i] * o.m[j] + m[3 * i + 1] * o.m[3 + j] +
                         m[3 * i + 2] * o.m[6 + j];
      }
    }
    return r;
  }
};

Mat3 yaw_rotation(double angle) {
  Mat3 r;
  const double c = std::cos(angle), s = std::sin(angle);
  r.m[0] = c;  r.m[1] = 0; r.m[2] = s;
  r.m[3] = 0;  r.m[4] = 1; r.m[5] = 0;
  r.m[6] = -s; r.m[7] = 0; r.m[8] = c;
  return r;
}

Mat3 axis_angle(Vec3 axis, double angle) {
  const Vec3 u = normalized(axis);
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  Mat3 r;
  r.m[0] = t * u.x * u.x + c;
  r.m[1] = t * u.x * u.y - s * u.z;
  r.m[2] = t * u.x * u.z + s * u.y;
  r.m[3] = t * u.x * u.y + s * u.z;
  r.m[4] = t * u.y * u.y + c;
  r.m[5] = t * u.y * u.z - s * u.x;
  r.m[6] = t * u.x * u.z - s * u.y;
  r.m[7] = t * u.y * u.z + s * u.x;
  r.m[8] = t * u.z * u.z + c;
  return r;
}

Vec3 random_unit(Rng& rng) {
  // Marsaglia rejection on the unit sphere.
  for (;;) {
    const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1),
                 c = rng.uniform(-1, 1);
    const double n2 = a * a + b * b + c * c;
    if (n2 > 1e-6 && n2 <= 1.0) return normalized({a, b, c});
  }
}

// Rest direction of the bone ending at a joint, in the person's local frame:
// +y up, facing +z, left side toward +x.
Vec3 rest_direction(const std::string& name) {
  const bool left = name.rfind("l_", 0) == 0;
  const double side = left ? 1.0 : -1.0;
  if (name == "neck" || name == "head") return {0, 1, 0};
  if (name.find("shoulder") != std::string::npos) return normalized({side, -0.1, 0});
  if (name.find("elbow") != std::string::npos) return normalized({side * 0.3, -1, 0.1});
  if (name.find("wrist") != std::string::npos) return normalized({side * 0.15, -1, 0.1});
  if (name.find("hip") != std::string::npos) return normalized({side, -0.3, 0});
  return {0, -1, 0};  // knees, ankles, anything unknown
}

// Spread of the random joint-angle perturbation, radians.
double angle_sigma(const std::string& name) {
  if (name.find("elbow") != std::string::npos) return 0.45;
  if (name.find("wrist") != std::string::npos) return 0.40;
  if (name.find("shoulder") != std::string::npos) return 0.25;
  if (name.find("knee") != std::string::npos) return 0.30;
  if (name.find("ankle") != std::string::npos) return 0.25;
  if (name.find("hip") != std::string::npos) return 0.10;
  return 0.12;  // spine/neck/head
}

struct ArmOverride {
  int elbow = -1, wrist = -1;
  Vec3 upper, lower;  // local-frame directions replacing the rest pose
};

// One person's joints from the kinematic tree: random per-bone rotations
// compose down the chains, so bone lengths are preserved exactly.
Pose sample_pose(const SkeletonTemplate& skel, Rng& rng, double yaw, Vec3 root_pos,
                 const std::vector<ArmOverride>& overrides) {
  const std::size_t j = skel.joint_count();
  std::vector<Vec3> pos(j);
  std::vector<Mat3> rot(j);
  const Mat3 base = yaw_rotation(yaw);
  for (std::size_t i = 0; i < j; ++i) {
    const int parent = skel.parents[i];
    if (parent < 0) {
      pos[i] = root_pos;
      rot[i] = base;
      continue;
    }
    Vec3 dir = rest_direction(skel.joint_names[i]);
    double sigma = angle_sigma(skel.joint_names[i]);
    for (const ArmOverride& ov : overrides) {
      if (static_cast<int>(i) == ov.elbow) { dir = ov.upper; sigma = 0.06; }
      if (static_cast<int>(i) == ov.wrist) { dir = ov.lower; sigma = 0.06; }
    }
    const double angle = std::clamp(rng.normal(0.0, sigma), -1.0, 1.0);
    rot[i] = rot[static_cast<std::size_t>(parent)] * axis_angle(random_unit(rng), angle);
    pos[i] = pos[static_cast<std::size_t>(parent)] +
             skel.bone_lengths[i] * rot[i].apply(dir);
  }
  Pose pose(j);
  for (std::size_t i = 0; i < j; ++i) pose[i] = {pos[i].x, pos[i].y, pos[i].z};
  return pose;
}

void translate(Pose& pose, Vec3 t) {
  for (Joint& joint : pose) {
    joint[0] += t.x;
    joint[1] += t.y;
    joint[2] += t.z;
  }
}

void rotate_about_origin(Pose& pose, const Mat3& r) {
  for (Joint& joint : pose) {
    const Vec3 v = r.apply({joint[0], joint[1], joint[2]});
    joint = {v.x, v.y, v.z};
  }
}

Vec3 joint_vec(const Pose& pose, int index) {
  const Joint& j = pose[static_cast<std::size_t>(index)];
  return {j[0], j[1], j[2]};
}

double root_height(Rng& rng) { return 0.91 + rng.normal(0.0, 0.03); }

// People holding hands in a line: consecutive left/right wrists coincide
// within 5 cm, everyone facing roughly the same way. The whole chain gets a
// random yaw and placement afterwards.
std::vector<Pose> build_handshake(const SkeletonTemplate& skel, int n, Rng& rng) {
  const int l_elbow = skel.index_of("l_elbow"), l_wrist = skel.index_of("l_wrist");
  const int r_elbow = skel.index_of("r_elbow"), r_wrist = skel.index_of("r_wrist");
  std::vector<Pose> poses;
  for (int p = 0; p < n; ++p) {
    Rng person_rng = rng.split(static_cast<std::uint64_t>(p));
    std::vector<ArmOverride> overrides;
    auto jittered = [&](Vec3 v) {
      return normalized(v + Vec3{person_rng.normal(0, 0.08),
                                 person_rng.normal(0, 0.08),
                                 person_rng.normal(0, 0.08)});
    };
    if (p + 1 < n) {  // left hand reaches to the next person
      overrides.push_back({l_elbow, l_wrist, jittered({0.9, -0.45, 0.15}),
                           jittered({0.95, -0.1, 0.1})});
    }
    if (p > 0) {  // right hand reaches back
      overrides.push_back({r_elbow, r_wrist, jittered({-0.9, -0.45, 0.15}),
                           jittered({-0.95, -0.1, 0.1})});
    }
    const double yaw = person_rng.normal(0.0, 0.12);
    poses.push_back(sample_pose(skel, person_rng, yaw,
                                {0.0, root_height(person_rng), 0.0}, overrides));
  }
  // Chain the roots so adjacent wrists meet.
  for (int p = 1; p < n; ++p) {
    Rng link_rng = rng.split(1000 + static_cast<std::uint64_t>(p));
    const Vec3 prev_wrist = joint_vec(poses[static_cast<std::size_t>(p - 1)], l_wrist);
    const Vec3 own_wrist = joint_vec(poses[static_cast<std::size_t>(p)], r_wrist);
    const Vec3 gap = link_rng.uniform(0.0, 0.05) * random_unit(link_rng);
    translate(poses[static_cast<std::size_t>(p)], prev_wrist - own_wrist + gap);
  }
  return poses;
}

std::vector<Pose> build_group(const SkeletonTemplate& skel, int n, Rng& rng) {
  constexpr double kDiscRadius = 0.75;  // 1.5 m across
  std::vector<Vec3> roots;
  for (int p = 0; p < n; ++p) {
    Rng place_rng = rng.split(2000 + static_cast<std::uint64_t>(p));
    Vec3 pos;
    for (int attempt = 0; attempt < 40; ++attempt) {
      const double r = kDiscRadius * std::sqrt(place_rng.uniform());
      const double theta = place_rng.uniform(0.0, 6.283185307179586);
      pos = {r * std::cos(theta), 0.0, r * std::sin(theta)};
      bool ok = true;
      for (const Vec3& other : roots) {
        const Vec3 d = pos - other;
        if (std::sqrt(d.x * d.x + d.z * d.z) < 0.45) { ok = false; break; }
      }
      if (ok) break;
    }
    roots.push_back(pos);
  }
  std::vector<Pose> poses;
  for (int p = 0; p < n; ++p) {
    Rng person_rng = rng.split(static_cast<std::uint64_t>(p));
    const Vec3 r = roots[static_cast<std::size_t>(p)];
    // face the disc center (the local origin)
    const double yaw = std::atan2(-r.x, -r.z) + person_rng.normal(0.0, 0.15);
    poses.push_back(sample_pose(skel, person_rng, yaw,
                                {r.x, root_height(person_rng), r.z}, {}));
  }
  return poses;
}

std::vector<Pose> build_independent(const SkeletonTemplate& skel, int n, Rng& rng) {
  std::vector<Pose> poses;
  for (int p = 0; p < n; ++p) {
    Rng person_rng = rng.split(static_cast<std::uint64_t>(p));
    const Vec3 root{person_rng.uniform(-3.0, 3.0), root_height(person_rng),
                    person_rng.uniform(-3.0, 3.0)};
    const double yaw = person_rng.uniform(0.0, 6.283185307179586);
    poses.push_back(sample_pose(skel, person_rng, yaw, root, {}));
  }
  return poses;
}

void corrupt(std::vector<Pose>& persons, const SkeletonTemplate& skel,
             const CorruptionConfig& cfg, Rng& rng) {
  std::vector<bool> is_leg(skel.joint_count(), false);
  for (std::size_t i = 0; i < skel.joint_count(); ++i) {
    const std::string& name = skel.joint_names[i];
    is_leg[i] = name.find("knee") != std::string::npos ||
                name.find("ankle") != std::string::npos;
  }
  for (std::size_t p = 0; p < persons.size(); ++p) {
    Rng person_rng = rng.split(p);
    const double depth = cfg.depth_offset_sigma * person_rng.normal();
    const bool truncated = person_rng.uniform() < cfg.truncation_prob;
    for (std::size_t q = 0; q < persons[p].size(); ++q) {
      Joint& joint = persons[p][q];
      joint[2] += depth;
      if (truncated && is_leg[q]) {
        for (double& c : joint) c += cfg.truncation_noise_sigma * person_rng.normal();
      }
      for (double& c : joint) c += cfg.joint_noise_sigma * person_rng.normal();
    }
  }
}

}  // namespace

Scene generate_scene(const SkeletonTemplate& skeleton, int n_persons,
                     InteractionPattern pattern,
                     const CorruptionConfig& corruption, std::uint64_t seed,
                     std::string id) {
  skeleton.validate();
  corruption.validate();
  if (n_persons < 1) throw DataError("generate_scene: need at least one person");
  if (pattern == InteractionPattern::kHandshake && n_persons < 2) {
    throw DataError("generate_scene: handshake needs at least two people");
  }
  Rng rng(seed);
  Rng pose_rng = rng.split(1);

  std::vector<Pose> gt;
  switch (pattern) {
    case InteractionPattern::kHandshake:
      gt = build_handshake(skeleton, n_persons, pose_rng);
      break;
    case InteractionPattern::kGroup:
      gt = build_group(skeleton, n_persons, pose_rng);
      break;
    case InteractionPattern::kIndependent:
      gt = build_independent(skeleton, n_persons, pose_rng);
      break;
  }

  // Shared placement in the camera frame (independent people are already
  // scattered over the full area).
  Rng place_rng = rng.split(2);
  if (pattern != InteractionPattern::kIndependent) {
    const Mat3 spin = yaw_rotation(place_rng.uniform(0.0, 6.283185307179586));
    const Vec3 shift{place_rng.uniform(-2.0, 2.0), 0.0, place_rng.uniform(3.5, 7.0)};
    for (Pose& pose : gt) {
      rotate_about_origin(pose, spin);
      translate(pose, shift);
    }
  } else {
    const Vec3 shift{0.0, 0.0, 5.0};
    for (Pose& pose : gt) translate(pose, shift);
  }

  Scene scene;
  scene.id = id.empty() ? "scene" : std::move(id);
  scene.root_index = skeleton.root();
  scene.gt = gt;
  scene.persons = std::move(gt);
  Rng corrupt_rng = rng.split(3);
  corrupt(scene.persons, skeleton, corruption, corrupt_rng);
  scene.validate();
  return scene;
}

void DatasetConfig::validate() const {
  if (count < 1) throw DataError("dataset config: count must be >= 1");
  corruption.validate();
  if (handshake_frac < 0 || group_frac < 0 || handshake_frac + group_frac > 1.0) {
    throw DataError("dataset config: pattern fractions must be >= 0 and sum <= 1");
  }
  if (persons_min < 1 || persons_max < persons_min) {
    throw DataError("dataset config: bad persons range");
  }
}

std::vector<Scene> generate_dataset(const DatasetConfig& config) {
  config.validate();
  const SkeletonTemplate skeleton = SkeletonTemplate::default_human();
  const Rng base(config.seed);
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(config.count));
  for (int i = 0; i < config.count; ++i) {
    Rng scene_rng = base.split(static_cast<std::uint64_t>(i));
    const double u = scene_rng.uniform();
    InteractionPattern pattern;
    if (u < config.handshake_frac) {
      pattern = InteractionPattern::kHandshake;
    } else if (u < config.handshake_frac + config.group_frac) {
      pattern = InteractionPattern::kGroup;
    } else {
      pattern = InteractionPattern::kIndependent;
    }
    int lo = config.persons_min, hi = config.persons_max;
    if (pattern != InteractionPattern::kIndependent) lo = std::max(lo, 2);
    if (hi < lo) hi = lo;
    const int n = lo + static_cast<int>(scene_rng.next_below(
                           static_cast<std::uint64_t>(hi - lo + 1)));
    char id[32];
    std::snprintf(id, sizeof(id), "s%06d", i);
    scenes.push_back(generate_scene(skeleton, n, pattern, config.corruption,
                                    scene_rng.next_u64(), id));
  }
  return scenes;
}

KFoldSplit kfold(const std::vector<Scene>& dataset, int k, int fold_index,
                 std::uint64_t seed) {
  const std::size_t n = dataset.size();
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw DataError("kfold: k must be in [1, dataset size]");
  }
  if (fold_index < 0 || fold_index >= k) {
    throw DataError("kfold: fold index out of range");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t base = n / static_cast<std::size_t>(k);
  const std::size_t rem = n % static_cast<std::size_t>(k);
  auto fold_begin = [&](std::size_t f) {
    return f * base + std::min<std::size_t>(f, rem);
  };
  const std::size_t begin = fold_begin(static_cast<std::size_t>(fold_index));
  const std::size_t end = fold_begin(static_cast<std::size_t>(fold_index) + 1);
  KFoldSplit split;
  split.test.reserve(end - begin);
  split.train.reserve(n - (end - begin));
  for (std::size_t i = 0; i < n; ++i) {
    (i >= begin && i < end ? split.test : split.train).push_back(dataset[order[i]]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Scene file I/O.

namespace {

std::vector<Pose> poses_from_json(const nlohmann::json& arr, const std::string& where) {
  if (!arr.is_array()) throw DataError(where + ": expected an array of poses");
  std::vector<Pose> poses;
  for (const auto& person : arr) {
    if (!person.is_array()) throw DataError(where + ": person is not an array");
    Pose pose;
    for (const auto& joint : person) {
      if (!joint.is_array() || joint.size() != 3) {
        throw DataError(where + ": joint is not an [x,y,z] triple");
      }
      pose.push_back({joint[0].get<double>(), joint[1].get<double>(),
                      joint[2].get<double>()});
    }
    poses.push_back(std::move(pose));
  }
  return poses;
}

nlohmann::json poses_to_json(const std::vector<Pose>& poses) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Pose& pose : poses) {
    nlohmann::json person = nlohmann::json::array();
    for (const Joint& joint : pose) {
      person.push_back({joint[0], joint[1], joint[2]});
    }
    arr.push_back(std::move(person));
  }
  return arr;
}

}  // namespace

std::vector<Scene> parse_scenes(std::istream& in, const std::string& origin) {
  std::vector<Scene> scenes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": " + e.what());
    }
    Scene scene;
    scene.id = j.value("id", "line" + std::to_string(line_no));
    if (!j.contains("persons")) {
      throw DataError(where + ": scene '" + scene.id + "' lacks \"persons\"");
    }
    scene.persons = poses_from_json(j["persons"], where + " scene '" + scene.id + "'");
    if (j.contains("gt")) {
      scene.gt = poses_from_json(j["gt"], where + " scene '" + scene.id + "' gt");
    }
    try {
      scene.validate();
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

std::vector<Scene> read_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file '" + path + "'");
  return parse_scenes(in, path);
}

void write_scenes(std::ostream& out, const std::vector<Scene>& scenes) {
  for (const Scene& scene : scenes) {
    scene.validate();
    nlohmann::json j;
    j["id"] = scene.id;
    j["persons"] = poses_to_json(scene.persons);
    if (scene.has_gt()) j["gt"] = poses_to_json(scene.gt);
    out << j.dump() << '\n';
  }
}

void write_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  write_scenes(out, scenes);
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace refiner
