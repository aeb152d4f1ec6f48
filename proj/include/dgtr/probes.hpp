#pragma once

// Diagnostics of temporal reach: per-frame input sensitivity of one window and
// frame-to-frame output changes across a stitched discontinuity.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "dgtr/trainer.hpp"

namespace dgtr {

struct SensitivityRow {
  std::size_t frame = 0;
  double delta_norm = 0.0;
  /// Output identical bit for bit after perturbing this frame.
  bool bitwise_equal = false;
};

/// Perturbs each window row in turn by `magnitude` * N(0, 1) noise and
/// measures the change of the regressed parameters.
template <class Real>
std::vector<SensitivityRow> frame_sensitivity(const DgtrModel<Real>& model, const Tensor<Real>& window, Rng& rng,
                                              double magnitude = 1.0, FuseOptions fuse = {}) {
  auto run = [&](const Tensor<Real>& w) {
    Tape<Real> tape(false);
    return model.forward(tape, tape.constant(w), fuse).value();
  };
  const Tensor<Real> base = run(window);
  std::vector<SensitivityRow> rows;
  for (std::size_t j = 0; j < window.rows(); ++j) {
    Tensor<Real> w = window;
    for (std::size_t c = 0; c < w.cols(); ++c) w.at(j, c) += static_cast<Real>(magnitude * rng.normal());
    const Tensor<Real> out = run(w);
    double sq = 0.0;
    for (std::size_t k = 0; k < out.numel(); ++k) {
      const double d = static_cast<double>(out[k]) - static_cast<double>(base[k]);
      sq += d * d;
    }
    rows.push_back({j, std::sqrt(sq), out == base});
  }
  return rows;
}

struct StitchRow {
  std::size_t frame = 0;
  /// ||x_t - x_{t-1}|| of the static features; 0 at frame 0.
  double input_delta = 0.0;
  /// Root of summed squared predicted-joint change from frame t-1.
  double output_delta = 0.0;
};

template <class Real>
std::vector<StitchRow> stitched_deltas(const DgtrModel<Real>& model, const Sequence& seq, const SyntheticBody& body) {
  const Predictor predict = model_predictor(model);
  std::vector<StitchRow> rows;
  PointSet prev;
  for (std::size_t t = 0; t < seq.frames; ++t) {
    const PointSet joints = synth_forward(predict(seq, t), body).joints;
    StitchRow r;
    r.frame = t;
    if (t > 0) {
      double sq = 0.0;
      const auto a = seq.feature(t), b = seq.feature(t - 1);
      for (std::size_t c = 0; c < a.size(); ++c) {
        const double d = static_cast<double>(a[c]) - static_cast<double>(b[c]);
        sq += d * d;
      }
      r.input_delta = std::sqrt(sq);
      r.output_delta = (joints - prev).norm();
    }
    prev = joints;
    rows.push_back(r);
  }
  return rows;
}

inline std::string stitch_csv(const std::vector<StitchRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(10) << "frame,input_delta,output_delta\n";
  for (const auto& r : rows) os << r.frame << ',' << r.input_delta << ',' << r.output_delta << '\n';
  return os.str();
}

}  // namespace dgtr
