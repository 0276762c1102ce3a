#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace refiner {

using Joint = std::array<double, 3>;  // x, y, z in meters, camera frame
using Pose = std::vector<Joint>;      // one entry per joint

// One multi-person sample: N initial poses in absolute camera coordinates,
// optionally paired with ground truth of identical shape.
struct Scene {
  std::string id;
  std::vector<Pose> persons;
  std::vector<Pose> gt;  // empty when absent
  int root_index = 0;

  std::size_t person_count() const { return persons.size(); }
  std::size_t joint_count() const { return persons.empty() ? 0 : persons[0].size(); }
  bool has_gt() const { return !gt.empty(); }

  // Enforces: N >= 1, uniform joint counts, finite coordinates, gt shape
  // matching persons when present, root_index in range. Throws DataError.
  void validate() const;
};

}  // namespace refiner
