#pragma once

// Parameter regressor head and the synthetic linear body that stands in for
// a licensed parametric body model.
//
// Parameter vector layout (157 reals):
//   [0, 144)    pose, 24 joints x 6-value continuous rotation
//   [144, 154)  shape coefficients
//   [154, 157)  weak-perspective camera (scale, tx, ty)

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dgtr/autograd.hpp"
#include "dgtr/binary_io.hpp"
#include "dgtr/params.hpp"
#include "dgtr/rng.hpp"

namespace dgtr {

inline constexpr std::size_t kNumJoints = 24;
inline constexpr std::size_t kPoseDim = 6 * kNumJoints;
inline constexpr std::size_t kShapeDim = 10;
inline constexpr std::size_t kCameraDim = 3;
inline constexpr std::size_t kBodyInputDim = kPoseDim + kShapeDim;
inline constexpr std::size_t kParamDim = kBodyInputDim + kCameraDim;
inline constexpr std::size_t kNumSynthVertices = 431;

using PointSet = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points2 = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

struct SmplParams {
  std::array<double, kPoseDim> pose{};
  std::array<double, kShapeDim> shape{};
  std::array<double, kCameraDim> camera{};

  /// Identity rotations, zero shape, unit-scale centred camera.
  static SmplParams neutral() {
    SmplParams p;
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      p.pose[6 * j + 0] = 1.0;
      p.pose[6 * j + 4] = 1.0;
    }
    p.camera = {1.0, 0.0, 0.0};
    return p;
  }

  std::vector<double> flat() const {
    std::vector<double> v;
    v.reserve(kParamDim);
    v.insert(v.end(), pose.begin(), pose.end());
    v.insert(v.end(), shape.begin(), shape.end());
    v.insert(v.end(), camera.begin(), camera.end());
    return v;
  }

  template <class T>
  static SmplParams from_flat(std::span<const T> v) {
    if (v.size() != kParamDim) {
      throw ShapeError("SmplParams: expected " + std::to_string(kParamDim) + " values, got " +
                       std::to_string(v.size()));
    }
    SmplParams p;
    for (std::size_t i = 0; i < kPoseDim; ++i) p.pose[i] = static_cast<double>(v[i]);
    for (std::size_t i = 0; i < kShapeDim; ++i) p.shape[i] = static_cast<double>(v[kPoseDim + i]);
    for (std::size_t i = 0; i < kCameraDim; ++i) p.camera[i] = static_cast<double>(v[kBodyInputDim + i]);
    return p;
  }

  template <class Real>
  Tensor<Real> to_tensor() const {
    auto f = flat();
    return Tensor<Real>({1, kParamDim}, std::vector<Real>(f.begin(), f.end()));
  }

  bool operator==(const SmplParams&) const = default;
};

/// Linear stand-in body: joints = W_J [pose; shape] + rest, likewise vertices.
/// Matrices are stored [3 * count x kBodyInputDim], row-major.
struct SyntheticBody {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t num_joints = kNumJoints;
  std::uint32_t num_vertices = kNumSynthVertices;
  std::uint64_t seed = 0;
  std::vector<float> joint_map;
  std::vector<float> vertex_map;
  std::vector<float> rest_joints;
  std::vector<float> rest_vertices;

  /// Unit-variance entries scaled by 1/sqrt(P); rest offsets unit variance.
  /// Used only by the offline data tool; runtime code loads the shipped file.
  static SyntheticBody generate(std::uint64_t seed) {
    SyntheticBody b;
    b.seed = seed;
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kBodyInputDim));
    auto fill = [&](std::vector<float>& v, std::size_t n, double s) {
      v.resize(n);
      for (auto& x : v) x = static_cast<float>(s * rng.normal());
    };
    fill(b.joint_map, 3 * kNumJoints * kBodyInputDim, scale);
    fill(b.vertex_map, 3 * kNumSynthVertices * kBodyInputDim, scale);
    fill(b.rest_joints, 3 * kNumJoints, 1.0);
    fill(b.rest_vertices, 3 * kNumSynthVertices, 1.0);
    return b;
  }

  void save(const std::string& path) const {
    io::Writer w;
    w.magic("DGTRBODY");
    w.u32(kVersion);
    w.u32(num_joints);
    w.u32(num_vertices);
    w.u32(static_cast<std::uint32_t>(kBodyInputDim));
    w.u64(seed);
    w.f32_array(joint_map);
    w.f32_array(vertex_map);
    w.f32_array(rest_joints);
    w.f32_array(rest_vertices);
    w.save(path);
  }

  static SyntheticBody load(const std::string& path) {
    io::Reader r = io::Reader::open(path);
    r.expect_magic("DGTRBODY");
    if (r.u32() != kVersion) throw FormatError(path + ": unsupported body version");
    SyntheticBody b;
    b.num_joints = r.u32();
    b.num_vertices = r.u32();
    const std::uint32_t p = r.u32();
    if (b.num_joints != kNumJoints || p != kBodyInputDim) {
      throw FormatError(path + ": body dims do not match the parameter layout");
    }
    b.seed = r.u64();
    b.joint_map = r.f32_array<float>(3ull * b.num_joints * p);
    b.vertex_map = r.f32_array<float>(3ull * b.num_vertices * p);
    b.rest_joints = r.f32_array<float>(3ull * b.num_joints);
    b.rest_vertices = r.f32_array<float>(3ull * b.num_vertices);
    r.expect_end();
    return b;
  }
};

/// Body matrices transposed for row-vector products, in the working precision.
template <class Real>
struct BodyMatrices {
  Tensor<Real> joint_map_t;   // [P x 3J]
  Tensor<Real> vertex_map_t;  // [P x 3V]
  Tensor<Real> rest_joints;   // [3J]
  Tensor<Real> rest_vertices; // [3V]
  std::size_t num_joints = 0;
  std::size_t num_vertices = 0;

  explicit BodyMatrices(const SyntheticBody& body)
      : joint_map_t(transposed(body.joint_map, 3 * body.num_joints)),
        vertex_map_t(transposed(body.vertex_map, 3 * body.num_vertices)),
        rest_joints({3 * body.num_joints}, std::vector<Real>(body.rest_joints.begin(), body.rest_joints.end())),
        rest_vertices({3 * body.num_vertices},
                      std::vector<Real>(body.rest_vertices.begin(), body.rest_vertices.end())),
        num_joints(body.num_joints),
        num_vertices(body.num_vertices) {}

 private:
  static Tensor<Real> transposed(const std::vector<float>& m, std::size_t rows) {
    Tensor<Real> t({kBodyInputDim, rows});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < kBodyInputDim; ++c) t[c * rows + r] = static_cast<Real>(m[r * kBodyInputDim + c]);
    return t;
  }
};

template <class Real>
Var<Real> pose_part(const Var<Real>& params) { return slice_cols(params, 0, kPoseDim); }
template <class Real>
Var<Real> shape_part(const Var<Real>& params) { return slice_cols(params, kPoseDim, kShapeDim); }
template <class Real>
Var<Real> camera_part(const Var<Real>& params) { return slice_cols(params, kBodyInputDim, kCameraDim); }

/// 6-value rotations [1 x 6J] -> row-flattened matrices [J x 9] via
/// Gram-Schmidt; the three output columns of each matrix are b1, b2, b3.
template <class Real>
Var<Real> rot6d_to_matrix(const Var<Real>& pose) {
  const std::size_t joints = pose.numel() / 6;
  Var<Real> p = reshape(pose, {joints, 6});
  Var<Real> a1 = slice_cols(p, 0, 3);
  Var<Real> a2 = slice_cols(p, 3, 3);
  constexpr Real eps = Real(1e-8);
  Var<Real> b1 = mul_col(a1, rsqrt(add_scalar(row_sums(square(a1)), eps)));
  Var<Real> u2 = sub(a2, mul_col(b1, row_sums(mul(b1, a2))));
  Var<Real> b2 = mul_col(u2, rsqrt(add_scalar(row_sums(square(u2)), eps)));
  Var<Real> b3 = cross_rows(b1, b2);
  // interleave so row j reads R_j row-major: [b1x b2x b3x; b1y b2y b3y; b1z b2z b3z]
  std::vector<Var<Real>> cols;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    cols.push_back(slice_cols(b1, axis, 1));
    cols.push_back(slice_cols(b2, axis, 1));
    cols.push_back(slice_cols(b3, axis, 1));
  }
  return concat_cols(cols);
}

/// params [1 x 157] -> joints [J x 3]
template <class Real>
Var<Real> synth_joints(Tape<Real>& tape, const Var<Real>& params, const BodyMatrices<Real>& body) {
  Var<Real> theta = slice_cols(params, 0, kBodyInputDim);
  Var<Real> flat = add_row(matmul(theta, tape.constant_ref(body.joint_map_t)),
                           tape.constant_ref(body.rest_joints));
  return reshape(flat, {body.num_joints, 3});
}

/// params [1 x 157] -> vertices [V x 3]
template <class Real>
Var<Real> synth_vertices(Tape<Real>& tape, const Var<Real>& params, const BodyMatrices<Real>& body) {
  Var<Real> theta = slice_cols(params, 0, kBodyInputDim);
  Var<Real> flat = add_row(matmul(theta, tape.constant_ref(body.vertex_map_t)),
                           tape.constant_ref(body.rest_vertices));
  return reshape(flat, {body.num_vertices, 3});
}

/// (x, y) = s (X, Y) + (tx, ty); camera is [1 x 3] = (s, tx, ty).
template <class Real>
Var<Real> project_weak_perspective(const Var<Real>& points, const Var<Real>& camera) {
  if (points.cols() != 3 || camera.numel() != 3) {
    throw ShapeError("projection: points " + shape_str(points.shape()) + ", camera " +
                     shape_str(camera.shape()));
  }
  const Real s = camera.value()[0];
  if (!(s > Real(0))) throw CameraError("weak-perspective scale must be positive, got " + std::to_string(s));
  return add_row(scale_by(slice_cols(points, 0, 2), slice_cols(camera, 0, 1)),
                 slice_cols(camera, 1, 2));
}

inline Points2 project_weak_perspective(const PointSet& points, const std::array<double, 3>& camera) {
  if (!(camera[0] > 0.0)) {
    throw CameraError("weak-perspective scale must be positive, got " + std::to_string(camera[0]));
  }
  Points2 out(points.rows(), 2);
  out.col(0) = camera[0] * points.col(0).array() + camera[1];
  out.col(1) = camera[0] * points.col(1).array() + camera[2];
  return out;
}

struct BodyPose {
  PointSet joints;
  PointSet vertices;
};

/// Evaluates the linear body at `p` in double precision.
inline BodyPose synth_forward(const SmplParams& p, const SyntheticBody& body) {
  std::array<double, kBodyInputDim> theta{};
  std::copy(p.pose.begin(), p.pose.end(), theta.begin());
  std::copy(p.shape.begin(), p.shape.end(), theta.begin() + kPoseDim);
  auto apply = [&](const std::vector<float>& map, const std::vector<float>& rest, std::size_t count) {
    PointSet out(count, 3);
    for (std::size_t r = 0; r < 3 * count; ++r) {
      double acc = 0.0;
      const float* row = map.data() + r * kBodyInputDim;
      for (std::size_t c = 0; c < kBodyInputDim; ++c) acc += static_cast<double>(row[c]) * theta[c];
      out(static_cast<Eigen::Index>(r / 3), static_cast<Eigen::Index>(r % 3)) = acc + rest[r];
    }
    return out;
  };
  return {apply(body.joint_map, body.rest_joints, body.num_joints),
          apply(body.vertex_map, body.rest_vertices, body.num_vertices)};
}

struct RegressorConfig {
  std::size_t input_dim = 2048;
  std::size_t hidden = 1024;
  std::size_t iterations = 3;
  /// Slope of the hidden activation for negative inputs.
  double negative_slope = 0.01;

  void validate() const {
    if (hidden < 1) throw ConfigError("regressor.hidden must be >= 1");
    if (iterations < 1) throw ConfigError("regressor.iterations must be >= 1");
  }
};

/// Iterative error-feedback head: params += Out(act(FC([feat; params]))).
template <class Real>
class Regressor {
 public:
  Regressor(const RegressorConfig& cfg, ParamStore<Real>& store, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    fc_ = Linear<Real>::create(store, "regressor.fc", cfg_.input_dim + kParamDim, cfg_.hidden, rng);
    out_ = Linear<Real>::create(store, "regressor.out", cfg_.hidden, kParamDim, rng, 0.01);
    mean_ = &store.add("regressor.mean_params", SmplParams::neutral().to_tensor<Real>());
  }

  const RegressorConfig& config() const noexcept { return cfg_; }
  Parameter<Real>& mean_params() noexcept { return *mean_; }
  const Linear<Real>& fc() const noexcept { return fc_; }
  const Linear<Real>& out() const noexcept { return out_; }

  /// One refinement iteration.
  Var<Real> step(Tape<Real>& tape, const Var<Real>& feature, const Var<Real>& current) const {
    if (feature.numel() != cfg_.input_dim || current.numel() != kParamDim) {
      throw ShapeError("regressor: feature " + shape_str(feature.shape()) + ", params " +
                       shape_str(current.shape()));
    }
    Var<Real> x = concat_cols<Real>({reshape(feature, {1, cfg_.input_dim}), reshape(current, {1, kParamDim})});
    Var<Real> h = leaky_relu(fc_(tape, x), static_cast<Real>(cfg_.negative_slope));
    return add(reshape(current, {1, kParamDim}), out_(tape, h));
  }

  Var<Real> forward(Tape<Real>& tape, const Var<Real>& feature, const Var<Real>& init) const {
    Var<Real> p = init;
    for (std::size_t i = 0; i < cfg_.iterations; ++i) p = step(tape, feature, p);
    return p;
  }

  /// Starts from the learned mean parameters.
  Var<Real> forward(Tape<Real>& tape, const Var<Real>& feature) const {
    return forward(tape, feature, tape.param(*mean_));
  }

 private:
  RegressorConfig cfg_;
  Linear<Real> fc_, out_;
  Parameter<Real>* mean_ = nullptr;
};

/// Plain-value regression without recording gradients.
template <class Real>
SmplParams regress_params(const Regressor<Real>& reg, std::span<const Real> feature,
                          const SmplParams& init) {
  Tape<Real> tape(false);
  Var<Real> f = tape.constant(Tensor<Real>({1, feature.size()}, std::vector<Real>(feature.begin(), feature.end())));
  Var<Real> out = reg.forward(tape, f, tape.constant(init.to_tensor<Real>()));
  return SmplParams::from_flat(out.value().span());
}

}  // namespace dgtr
