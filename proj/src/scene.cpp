#include "refiner/scene.hpp"

#include <cmath>

#include "refiner/errors.hpp"

namespace refiner {

void Scene::validate() const {
  const std::string where = "scene '" + id + "': ";
  if (persons.empty()) throw DataError(where + "persons array is empty");
  const std::size_t joints = persons[0].size();
  if (joints < 2) throw DataError(where + "poses need at least 2 joints");
  if (root_index < 0 || static_cast<std::size_t>(root_index) >= joints) {
    throw DataError(where + "root index out of range");
  }
  auto check_poses = [&](const std::vector<Pose>& poses, const char* label) {
    for (std::size_t n = 0; n < poses.size(); ++n) {
      if (poses[n].size() != joints) {
        throw DataError(where + label + " person " + std::to_string(n) +
                        " has " + std::to_string(poses[n].size()) +
                        " joints, expected " + std::to_string(joints));
      }
      for (const Joint& j : poses[n]) {
        for (double c : j) {
          if (!std::isfinite(c)) {
            throw DataError(where + label + " person " + std::to_string(n) +
                            " has a non-finite coordinate");
          }
        }
      }
    }
  };
  check_poses(persons, "persons:");
  if (!gt.empty()) {
    if (gt.size() != persons.size()) {
      throw DataError(where + "gt person count differs from persons");
    }
    check_poses(gt, "gt:");
  }
}

}  // namespace refiner
