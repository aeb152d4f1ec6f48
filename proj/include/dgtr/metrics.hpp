#pragma once

// Pose and mesh accuracy metrics. Positions are in millimetres.

#include <Eigen/Dense>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dgtr/body_model.hpp"
#include "dgtr/error.hpp"

namespace dgtr {

namespace detail {

inline void require_same_points(const PointSet& a, const PointSet& b, const char* what) {
  if (a.rows() != b.rows()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.rows()) + " vs " +
                     std::to_string(b.rows()) + " points");
  }
}

inline double mean_point_distance(const PointSet& a, const PointSet& b) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < a.rows(); ++j) acc += (a.row(j) - b.row(j)).norm();
  return acc / static_cast<double>(a.rows());
}

}  // namespace detail

/// Mean per-joint position error.
inline double mpjpe(const PointSet& pred, const PointSet& gt) {
  detail::require_same_points(pred, gt, "mpjpe");
  return detail::mean_point_distance(pred, gt);
}

/// Mean per-vertex position error.
inline double mpvpe(const PointSet& pred, const PointSet& gt) {
  detail::require_same_points(pred, gt, "mpvpe");
  return detail::mean_point_distance(pred, gt);
}

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::RowVector3d translation = Eigen::RowVector3d::Zero();

  PointSet apply(const PointSet& p) const {
    PointSet out = (scale * (p * rotation.transpose())).rowwise() + translation;
    return out;
  }
};

/// Least-squares similarity transform taking `pred` onto `gt`, with a proper
/// rotation (det = +1).
inline SimilarityTransform procrustes_transform(const PointSet& pred, const PointSet& gt) {
  detail::require_same_points(pred, gt, "procrustes");
  if (pred.rows() < 3) throw AlignmentError("procrustes: need at least 3 points");
  const Eigen::RowVector3d mu_p = pred.colwise().mean();
  const Eigen::RowVector3d mu_g = gt.colwise().mean();
  const PointSet x = pred.rowwise() - mu_p;
  const PointSet y = gt.rowwise() - mu_g;
  const double var_p = x.squaredNorm();
  if (!(var_p > 1e-12 * static_cast<double>(pred.rows()))) {
    throw AlignmentError("procrustes: prediction points are coincident");
  }
  const Eigen::Matrix3d cov = y.transpose() * x;  // sum_j y_j x_j^T
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  SimilarityTransform t;
  t.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  t.scale = (svd.singularValues().asDiagonal() * d).trace() / var_p;
  t.translation = mu_g - t.scale * mu_p * t.rotation.transpose();
  return t;
}

inline PointSet procrustes_align(const PointSet& pred, const PointSet& gt) {
  return procrustes_transform(pred, gt).apply(pred);
}

inline double pa_mpjpe(const PointSet& pred, const PointSet& gt) {
  return mpjpe(procrustes_align(pred, gt), gt);
}

struct JointSequence {
  std::vector<PointSet> frames;
  std::optional<double> fps;
};

/// Mean norm of the difference of second differences over interior frames.
/// mm/frame^2, or mm/s^2 when an fps is attached.
inline double accel_error(const JointSequence& pred, const JointSequence& gt) {
  if (pred.frames.size() != gt.frames.size()) throw ContractError("accel_error: sequences are not aligned");
  if (pred.frames.size() < 3) throw ContractError("accel_error: need at least 3 frames");
  if (pred.fps && gt.fps && *pred.fps != *gt.fps) throw ContractError("accel_error: fps mismatch");
  const std::optional<double> fps = pred.fps ? pred.fps : gt.fps;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 1; t + 1 < pred.frames.size(); ++t) {
    detail::require_same_points(pred.frames[t], gt.frames[t], "accel_error");
    const PointSet ap = pred.frames[t + 1] - 2.0 * pred.frames[t] + pred.frames[t - 1];
    const PointSet ag = gt.frames[t + 1] - 2.0 * gt.frames[t] + gt.frames[t - 1];
    for (Eigen::Index j = 0; j < ap.rows(); ++j) acc += (ap.row(j) - ag.row(j)).norm();
    count += static_cast<std::size_t>(ap.rows());
  }
  double err = acc / static_cast<double>(count);
  if (fps) err *= (*fps) * (*fps);
  return err;
}

struct SequenceMetrics {
  std::string name;
  std::size_t frames = 0;
  double pa_mpjpe = 0.0;
  double mpjpe = 0.0;
  double mpvpe = 0.0;
  /// NaN when the sequence or window is too short to define acceleration.
  double acc_err = std::numeric_limits<double>::quiet_NaN();
};

struct MetricReport {
  std::vector<SequenceMetrics> sequences;
  SequenceMetrics aggregate{"mean"};
  std::vector<std::string> warnings;
  bool acc_in_seconds = false;

  static constexpr const char* kHeader = "sequence,pa_mpjpe,mpjpe,mpvpe,acc_err";

  /// Frame-weighted means; acceleration weighted by interior frame count.
  void finalize() {
    double f = 0, pa = 0, mp = 0, mv = 0, acc = 0, acc_w = 0;
    for (const auto& s : sequences) {
      const double n = static_cast<double>(s.frames);
      f += n;
      pa += n * s.pa_mpjpe;
      mp += n * s.mpjpe;
      mv += n * s.mpvpe;
      if (!std::isnan(s.acc_err)) {
        acc += (n - 2.0) * s.acc_err;
        acc_w += n - 2.0;
      }
    }
    aggregate.frames = static_cast<std::size_t>(f);
    aggregate.pa_mpjpe = f > 0 ? pa / f : 0.0;
    aggregate.mpjpe = f > 0 ? mp / f : 0.0;
    aggregate.mpvpe = f > 0 ? mv / f : 0.0;
    aggregate.acc_err = acc_w > 0 ? acc / acc_w : std::numeric_limits<double>::quiet_NaN();
  }

  /// Comma-separated table; `#` lines carry the unit note and config echo.
  std::string to_csv(const std::string& config_echo = {}) const {
    std::ostringstream os;
    os << "# units: mm; acc_err in " << (acc_in_seconds ? "mm/s^2" : "mm/frame^2") << '\n';
    std::istringstream echo(config_echo);
    for (std::string line; std::getline(echo, line);) os << "# " << line << '\n';
    os << kHeader << '\n';
    os << std::setprecision(10);
    auto row = [&](const SequenceMetrics& s) {
      os << s.name << ',' << s.pa_mpjpe << ',' << s.mpjpe << ',' << s.mpvpe << ',';
      if (std::isnan(s.acc_err)) os << "nan"; else os << s.acc_err;
      os << '\n';
    };
    for (const auto& s : sequences) row(s);
    row(aggregate);
    return os.str();
  }
};

}  // namespace dgtr
