#pragma once

// Supervision and temporal-velocity losses on decoded body quantities.

#include <vector>

#include "dgtr/autograd.hpp"
#include "dgtr/body_model.hpp"

namespace dgtr {

struct LossWeights {
  double shape = 0.06;
  double pose = 60.0;
  double joints3d = 300.0;
  double joints2d = 300.0;
  double vel3d = 300.0;
  double vel2d = 300.0;

  void validate() const {
    for (double w : {shape, pose, joints3d, joints2d, vel3d, vel2d}) {
      if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
    }
  }
};

/// Per-frame quantities stacked over a batch of frames, one row per frame:
/// shape [B x 10], rotations [B x 216], joints3d [B x 72], joints2d [B x 48].
template <class Real>
struct FrameBatch {
  Var<Real> shape, rotations, joints3d, joints2d;

  std::size_t frames() const { return shape.rows(); }
};

template <class Real>
struct LossTerms {
  Var<Real> shape, pose, joints3d, joints2d, vel3d, vel2d;
  Var<Real> total;
};

/// Decodes regressed parameter rows into the supervised quantities.
template <class Real>
FrameBatch<Real> decode_frames(Tape<Real>& tape, const std::vector<Var<Real>>& params,
                               const BodyMatrices<Real>& body) {
  if (params.empty()) throw ContractError("decode_frames: no frames");
  std::vector<Var<Real>> shape, rot, j3, j2;
  for (const auto& p : params) {
    Var<Real> joints = synth_joints(tape, p, body);
    shape.push_back(reshape(shape_part(p), {1, kShapeDim}));
    rot.push_back(reshape(rot6d_to_matrix(pose_part(p)), {1, 9 * kNumJoints}));
    j3.push_back(reshape(joints, {1, 3 * body.num_joints}));
    j2.push_back(reshape(project_weak_perspective(joints, camera_part(p)), {1, 2 * body.num_joints}));
  }
  return {concat_rows(shape), concat_rows(rot), concat_rows(j3), concat_rows(j2)};
}

/// Ground-truth counterpart of decode_frames, recorded as constants on `tape`.
template <class Real>
FrameBatch<Real> decode_targets(Tape<Real>& tape, const std::vector<SmplParams>& gt,
                                const BodyMatrices<Real>& body) {
  Tape<Real> scratch(false);
  std::vector<Var<Real>> rows;
  for (const auto& p : gt) rows.push_back(scratch.constant(p.to_tensor<Real>()));
  FrameBatch<Real> d = decode_frames(scratch, rows, body);
  return {tape.constant(d.shape.value()), tape.constant(d.rotations.value()),
          tape.constant(d.joints3d.value()), tape.constant(d.joints2d.value())};
}

template <class Real>
Var<Real> mse(const Var<Real>& pred, const Var<Real>& target) {
  return mean(square(sub(pred, target)));
}

namespace detail {

template <class Real>
Var<Real> weighted(const Var<Real>& term, double w) {
  return scale(term, static_cast<Real>(w));
}

template <class Real>
Var<Real> frame_diff(const Var<Real>& x) {
  const std::size_t n = x.rows();
  return sub(slice_rows(x, 1, n - 1), slice_rows(x, 0, n - 1));
}

}  // namespace detail

/// w_shape MSE(beta) + w_pose MSE(R) + w_3d MSE(J3D) + w_2d MSE(J2D).
/// The velocity members of the result are left empty.
template <class Real>
LossTerms<Real> supervision_loss(const FrameBatch<Real>& pred, const FrameBatch<Real>& gt,
                                 const LossWeights& w) {
  if (pred.frames() != gt.frames()) {
    throw ContractError("supervision_loss: " + std::to_string(pred.frames()) +
                        " predicted frames vs " + std::to_string(gt.frames()) + " targets");
  }
  LossTerms<Real> t;
  t.shape = detail::weighted(mse(pred.shape, gt.shape), w.shape);
  t.pose = detail::weighted(mse(pred.rotations, gt.rotations), w.pose);
  t.joints3d = detail::weighted(mse(pred.joints3d, gt.joints3d), w.joints3d);
  t.joints2d = detail::weighted(mse(pred.joints2d, gt.joints2d), w.joints2d);
  t.total = add(add(t.shape, t.pose), add(t.joints3d, t.joints2d));
  return t;
}

/// w_vel3d MSE(dJ3D) + w_vel2d MSE(dJ2D) over first differences in time.
/// Only the velocity members and total are set.
template <class Real>
LossTerms<Real> velocity_loss(const FrameBatch<Real>& pred, const FrameBatch<Real>& gt,
                              const LossWeights& w) {
  if (pred.frames() != gt.frames()) {
    throw ContractError("velocity_loss: sequences are not time-aligned");
  }
  if (pred.frames() < 2) throw ContractError("velocity_loss: need at least 2 frames");
  LossTerms<Real> t;
  t.vel3d = detail::weighted(mse(detail::frame_diff(pred.joints3d), detail::frame_diff(gt.joints3d)), w.vel3d);
  t.vel2d = detail::weighted(mse(detail::frame_diff(pred.joints2d), detail::frame_diff(gt.joints2d)), w.vel2d);
  t.total = add(t.vel3d, t.vel2d);
  return t;
}

/// Supervision plus, for two or more frames, velocity terms.
template <class Real>
LossTerms<Real> total_loss(const FrameBatch<Real>& pred, const FrameBatch<Real>& gt,
                           const LossWeights& w) {
  LossTerms<Real> t = supervision_loss(pred, gt, w);
  if (pred.frames() >= 2) {
    LossTerms<Real> v = velocity_loss(pred, gt, w);
    t.vel3d = v.vel3d;
    t.vel2d = v.vel2d;
    t.total = add(t.total, v.total);
  }
  return t;
}

}  // namespace dgtr
