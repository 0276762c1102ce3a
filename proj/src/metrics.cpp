#include "refiner/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "refiner/errors.hpp"

namespace refiner {

namespace {

void check_pair(const Pose& pred, const Pose& gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw DataError("metric: pose shapes differ (" + std::to_string(pred.size()) +
                    " vs " + std::to_string(gt.size()) + " joints)");
  }
}

double joint_dist_mm(const Joint& a, const Joint& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return 1000.0 * std::sqrt(dx * dx + dy * dy + dz * dz);
}

Pose root_relative(const Pose& pose, int root_index) {
  const Joint root = pose[static_cast<std::size_t>(root_index)];
  Pose out = pose;
  for (Joint& j : out) {
    for (std::size_t c = 0; c < 3; ++c) j[c] -= root[c];
  }
  return out;
}

std::vector<double> rel_errors_mm(const Pose& pred, const Pose& gt,
                                  int root_index) {
  check_pair(pred, gt);
  const Pose p = root_relative(pred, root_index);
  const Pose g = root_relative(gt, root_index);
  std::vector<double> errs(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) errs[j] = joint_dist_mm(p[j], g[j]);
  return errs;
}

bool is_hit(double err_mm, double threshold_mm) {
  return err_mm == 0.0 || err_mm < threshold_mm;
}

double pct_below(const std::vector<double>& errs, double threshold_mm) {
  std::size_t hits = 0;
  for (double e : errs) {
    if (is_hit(e, threshold_mm)) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errs.size());
}

constexpr int kAucSamples =
    static_cast<int>(kPckThresholdMm / kAucStepMm) + 1;  // 31

}  // namespace

double mpjpe_mm(const Pose& pred, const Pose& gt, int root_index) {
  const std::vector<double> errs = rel_errors_mm(pred, gt, root_index);
  double sum = 0.0;
  for (double e : errs) sum += e;
  return sum / static_cast<double>(errs.size());
}

double pck_pct(const Pose& pred, const Pose& gt, int root_index,
               double threshold_mm) {
  return pct_below(rel_errors_mm(pred, gt, root_index), threshold_mm);
}

double auc_pct(const Pose& pred, const Pose& gt, int root_index) {
  const std::vector<double> errs = rel_errors_mm(pred, gt, root_index);
  double sum = 0.0;
  for (int i = 0; i < kAucSamples; ++i) {
    sum += pct_below(errs, kAucStepMm * i);
  }
  return sum / kAucSamples;
}

double pck_abs_pct(const Pose& pred, const Pose& gt, double threshold_mm) {
  check_pair(pred, gt);
  std::vector<double> errs(pred.size());
  for (std::size_t j = 0; j < pred.size(); ++j) {
    errs[j] = joint_dist_mm(pred[j], gt[j]);
  }
  return pct_below(errs, threshold_mm);
}

Pose procrustes_align(const Pose& pred, const Pose& gt) {
  check_pair(pred, gt);
  const std::size_t j = pred.size();
  if (j < 3) throw DataError("procrustes: need at least 3 joints");

  Eigen::Matrix3Xd x(3, j), y(3, j);
  for (std::size_t i = 0; i < j; ++i) {
    x.col(i) = Eigen::Vector3d(pred[i][0], pred[i][1], pred[i][2]);
    y.col(i) = Eigen::Vector3d(gt[i][0], gt[i][1], gt[i][2]);
  }
  const Eigen::Vector3d mx = x.rowwise().mean();
  const Eigen::Vector3d my = y.rowwise().mean();
  const Eigen::Matrix3Xd xc = x.colwise() - mx;
  const Eigen::Matrix3Xd yc = y.colwise() - my;

  const double var_x = xc.squaredNorm() / static_cast<double>(j);
  if (var_x < 1e-18) throw DataError("procrustes: degenerate prediction (no spread)");

  // Cross-covariance from pred-space to gt-space.
  const Eigen::Matrix3d sigma = yc * xc.transpose() / static_cast<double>(j);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma,
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d d = svd.singularValues();
  if (d(1) <= 1e-12 * std::max(d(0), 1e-30)) {
    throw DataError("procrustes: degenerate configuration (collinear joints)");
  }
  Eigen::Vector3d s_diag(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    s_diag(2) = -1.0;  // forbid reflections
  }
  const Eigen::Matrix3d rot =
      svd.matrixU() * s_diag.asDiagonal() * svd.matrixV().transpose();
  const double scale = d.dot(s_diag) / var_x;
  const Eigen::Vector3d t = my - scale * rot * mx;

  Pose aligned(j);
  for (std::size_t i = 0; i < j; ++i) {
    const Eigen::Vector3d v = scale * rot * x.col(i) + t;
    aligned[i] = {v(0), v(1), v(2)};
  }
  return aligned;
}

double mpjpe_pa_mm(const Pose& pred, const Pose& gt) {
  const Pose aligned = procrustes_align(pred, gt);
  double sum = 0.0;
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    sum += joint_dist_mm(aligned[i], gt[i]);
  }
  return sum / static_cast<double>(aligned.size());
}

namespace {

struct Accumulator {
  double dist_sum = 0;
  double pa_dist_sum = 0;
  std::size_t joints = 0;
  std::size_t pck_hits = 0;
  std::size_t pck_abs_hits = 0;
  std::array<std::size_t, kAucSamples> auc_hits{};

  void add_person(const Pose& pred, const Pose& gt, int root_index) {
    const std::vector<double> rel = rel_errors_mm(pred, gt, root_index);
    const Pose aligned = procrustes_align(pred, gt);
    for (std::size_t j = 0; j < pred.size(); ++j) {
      dist_sum += rel[j];
      pa_dist_sum += joint_dist_mm(aligned[j], gt[j]);
      if (is_hit(rel[j], kPckThresholdMm)) ++pck_hits;
      if (is_hit(joint_dist_mm(pred[j], gt[j]), kPckAbsThresholdMm)) ++pck_abs_hits;
      for (int t = 0; t < kAucSamples; ++t) {
        if (is_hit(rel[j], kAucStepMm * t)) ++auc_hits[static_cast<std::size_t>(t)];
      }
    }
    joints += pred.size();
  }

  void fill(SceneMetrics& out) const {
    const double n = static_cast<double>(joints);
    out.mpjpe_mm = dist_sum / n;
    out.mpjpe_pa_mm = pa_dist_sum / n;
    out.pck_pct = 100.0 * static_cast<double>(pck_hits) / n;
    out.pck_abs_pct = 100.0 * static_cast<double>(pck_abs_hits) / n;
    double auc = 0.0;
    for (std::size_t t = 0; t < auc_hits.size(); ++t) {
      auc += 100.0 * static_cast<double>(auc_hits[t]) / n;
    }
    out.auc_pct = auc / kAucSamples;
  }
};

}  // namespace

MetricReport evaluate(const std::vector<Scene>& scenes) {
  if (scenes.empty()) throw DataError("evaluate: no scenes");
  MetricReport report;
  Accumulator total;
  for (const Scene& scene : scenes) {
    scene.validate();
    if (!scene.has_gt()) {
      throw DataError("evaluate: scene '" + scene.id + "' has no ground truth");
    }
    Accumulator local;
    for (std::size_t p = 0; p < scene.person_count(); ++p) {
      local.add_person(scene.persons[p], scene.gt[p], scene.root_index);
      total.add_person(scene.persons[p], scene.gt[p], scene.root_index);
    }
    SceneMetrics sm;
    sm.id = scene.id;
    local.fill(sm);
    report.per_scene.push_back(sm);
  }
  SceneMetrics agg;
  total.fill(agg);
  report.mpjpe_mm = agg.mpjpe_mm;
  report.mpjpe_pa_mm = agg.mpjpe_pa_mm;
  report.pck_pct = agg.pck_pct;
  report.auc_pct = agg.auc_pct;
  report.pck_abs_pct = agg.pck_abs_pct;
  report.joint_count = total.joints;
  return report;
}

nlohmann::json MetricReport::to_json(bool include_per_scene) const {
  nlohmann::json j;
  j["mpjpe_mm"] = mpjpe_mm;
  j["mpjpe_pa_mm"] = mpjpe_pa_mm;
  j["pck_pct"] = pck_pct;
  j["auc_pct"] = auc_pct;
  j["pck_abs_pct"] = pck_abs_pct;
  j["joint_count"] = joint_count;
  j["per_scene"] = nlohmann::json::array();
  if (include_per_scene) {
    for (const SceneMetrics& s : per_scene) {
      j["per_scene"].push_back({{"id", s.id},
                                {"mpjpe_mm", s.mpjpe_mm},
                                {"mpjpe_pa_mm", s.mpjpe_pa_mm},
                                {"pck_pct", s.pck_pct},
                                {"auc_pct", s.auc_pct},
                                {"pck_abs_pct", s.pck_abs_pct}});
    }
  }
  return j;
}

}  // namespace refiner
