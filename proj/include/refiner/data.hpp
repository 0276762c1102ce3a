#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "refiner/scene.hpp"

namespace refiner {

// Kinematic tree: one root, parents precede children, bone lengths in meters.
struct SkeletonTemplate {
  std::vector<std::string> joint_names;
  std::vector<int> parents;  // -1 marks the root
  std::vector<double> bone_lengths;

  std::size_t joint_count() const { return joint_names.size(); }
  int root() const;
  int index_of(const std::string& name) const;  // -1 when absent
  void validate() const;

  // 15-joint human: pelvis, neck, head and left/right
  // shoulder/elbow/wrist/hip/knee/ankle, anthropometric lengths.
  static SkeletonTemplate default_human();
};

// Error model for the initial pose estimates: per-joint jitter, a rigid
// per-person shift along the camera axis, and occasional high-variance noise
// on the legs standing in for truncated detections.
struct CorruptionConfig {
  double joint_noise_sigma = 0.05;        // m, every joint coordinate
  double depth_offset_sigma = 0.20;       // m, whole person along +z
  double truncation_prob = 0.2;           // per person
  double truncation_noise_sigma = 0.15;   // m, knee/ankle joints
  void validate() const;
};

enum class InteractionPattern : std::uint8_t {
  kHandshake = 0,   // chain of people holding hands, wrists touching
  kGroup = 1,       // standing inside a 1.5 m disc, facing its center
  kIndependent = 2  // scattered uniformly over a 6 x 6 m area
};

std::string to_string(InteractionPattern pattern);
InteractionPattern parse_interaction_pattern(const std::string& name);

// Ground truth from forward kinematics with randomized joint angles, then
// persons = gt + corruption. Pure function of its arguments.
Scene generate_scene(const SkeletonTemplate& skeleton, int n_persons,
                     InteractionPattern pattern,
                     const CorruptionConfig& corruption, std::uint64_t seed,
                     std::string id = "");

struct DatasetConfig {
  int count = 15000;
  CorruptionConfig corruption;
  double handshake_frac = 0.4;
  double group_frac = 0.4;  // remainder is independent
  int persons_min = 2;
  int persons_max = 5;
  std::uint64_t seed = 0;
  void validate() const;
};

std::vector<Scene> generate_dataset(const DatasetConfig& config);

// Deterministic contiguous partition of a seeded shuffle; the k test folds
// are disjoint and cover the dataset.
struct KFoldSplit {
  std::vector<Scene> train;
  std::vector<Scene> test;
};

KFoldSplit kfold(const std::vector<Scene>& dataset, int k, int fold_index,
                 std::uint64_t seed = 0);

// Scene files: line-delimited JSON, one scene per line,
// {"id": ..., "persons": [[[x,y,z], ...J], ...N], "gt": optional}.
std::vector<Scene> read_scenes(const std::string& path);
std::vector<Scene> parse_scenes(std::istream& in, const std::string& origin);
void write_scenes(const std::string& path, const std::vector<Scene>& scenes);
void write_scenes(std::ostream& out, const std::vector<Scene>& scenes);

}  // namespace refiner
