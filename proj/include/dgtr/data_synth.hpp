#pragma once

// Synthetic stand-in for the image backbone and datasets. Ground-truth
// parameters follow smooth per-channel sinusoids; static features are a fixed
// linear embedding of the parameters plus Gaussian noise.

#include <cmath>
#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "dgtr/binary_io.hpp"
#include "dgtr/body_model.hpp"
#include "dgtr/rng.hpp"
#include "dgtr/tensor.hpp"

namespace dgtr {

/// Location of a file shipped in the repository data/ directory.
inline std::string shipped_data_path(const std::string& file) {
#ifdef DGTR_SHARE_DIR
  return std::string(DGTR_SHARE_DIR) + "/" + file;
#else
  return "data/" + file;
#endif
}

/// Fixed [feature_dim x 157] map from parameters to static features.
struct FeatureEmbedding {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t rows = 2048;
  std::uint32_t cols = kParamDim;
  std::uint64_t seed = 0;
  std::vector<float> weights;

  /// Unit-variance entries scaled by 1/sqrt(157). Offline tool only.
  static FeatureEmbedding generate(std::uint64_t seed, std::uint32_t rows = 2048) {
    FeatureEmbedding e;
    e.rows = rows;
    e.seed = seed;
    Rng rng(seed);
    const double s = 1.0 / std::sqrt(static_cast<double>(kParamDim));
    e.weights.resize(static_cast<std::size_t>(rows) * kParamDim);
    for (auto& w : e.weights) w = static_cast<float>(s * rng.normal());
    return e;
  }

  void save(const std::string& path) const {
    io::Writer w;
    w.magic("DGTREMBD");
    w.u32(kVersion);
    w.u32(rows);
    w.u32(cols);
    w.u64(seed);
    w.f32_array(weights);
    w.save(path);
  }

  static FeatureEmbedding load(const std::string& path) {
    io::Reader r = io::Reader::open(path);
    r.expect_magic("DGTREMBD");
    if (r.u32() != kVersion) throw FormatError(path + ": unsupported embedding version");
    FeatureEmbedding e;
    e.rows = r.u32();
    e.cols = r.u32();
    if (e.cols != kParamDim) throw FormatError(path + ": embedding must have 157 columns");
    e.seed = r.u64();
    e.weights = r.f32_array<float>(static_cast<std::size_t>(e.rows) * e.cols);
    r.expect_end();
    return e;
  }
};

struct SyntheticDatasetSpec {
  std::size_t num_sequences = 4;
  std::size_t seq_len = 16;
  std::uint64_t seed = 1;
  double noise = 0.01;
  /// Pose oscillation frequency band, cycles per frame.
  double freq_lo = 0.02;
  double freq_hi = 0.12;
  /// Upper bound of per-channel pose amplitude.
  double amplitude = 0.3;

  void validate() const {
    if (seq_len < 3) throw ConfigError("sequences need at least 3 frames (metrics use second differences)");
    if (!(noise >= 0.0)) throw ConfigError("feature noise must be >= 0");
    if (!(freq_lo >= 0.0 && freq_hi >= freq_lo)) throw ConfigError("invalid frequency band");
  }
};

/// One synthetic clip: per-frame static features and ground-truth parameters,
/// both row-major 32-bit as stored on disk.
struct Sequence {
  static constexpr std::uint32_t kVersion = 1;

  std::string name;
  std::size_t frames = 0;
  std::size_t feature_dim = 0;
  std::vector<float> features;  // [frames x feature_dim]
  std::vector<float> params;    // [frames x 157]

  SmplParams gt(std::size_t t) const {
    return SmplParams::from_flat(std::span<const float>(params.data() + t * kParamDim, kParamDim));
  }

  std::span<const float> feature(std::size_t t) const {
    return {features.data() + t * feature_dim, feature_dim};
  }

  void save(const std::string& path) const {
    io::Writer w;
    w.magic("DGTRFEAT");
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(frames));
    w.u32(static_cast<std::uint32_t>(feature_dim));
    w.f32_array(features);
    w.magic("DGTRGT01");
    w.u32(static_cast<std::uint32_t>(frames));
    w.u32(static_cast<std::uint32_t>(kParamDim));
    w.f32_array(params);
    w.save(path);
  }

  static Sequence load(const std::string& path) {
    io::Reader r = io::Reader::open(path);
    r.expect_magic("DGTRFEAT");
    if (r.u32() != kVersion) throw FormatError(path + ": unsupported feature file version");
    Sequence s;
    s.name = std::filesystem::path(path).stem().string();
    s.frames = r.u32();
    s.feature_dim = r.u32();
    s.features = r.f32_array<float>(s.frames * s.feature_dim);
    r.expect_magic("DGTRGT01");
    if (r.u32() != s.frames) throw FormatError(path + ": ground-truth frame count mismatch");
    if (r.u32() != kParamDim) throw FormatError(path + ": ground-truth width must be 157");
    s.params = r.f32_array<float>(s.frames * kParamDim);
    r.expect_end();
    return s;
  }
};

/// Maps parameter values to features: E p + noise * N(0, 1).
inline void embed_features(const FeatureEmbedding& emb, std::span<const double> p, double noise, Rng& rng,
                           float* out) {
  for (std::size_t r = 0; r < emb.rows; ++r) {
    double acc = 0.0;
    const float* row = emb.weights.data() + r * kParamDim;
    for (std::size_t c = 0; c < kParamDim; ++c) acc += static_cast<double>(row[c]) * p[c];
    if (noise > 0.0) acc += noise * rng.normal();
    out[r] = static_cast<float>(acc);
  }
}

/// Draw order from Rng(seed): per pose channel (amplitude, frequency, phase)
/// uniforms; 10 shape normals; camera scale, tx, ty uniforms; then feature
/// noise frame by frame.
inline Sequence gen_sequence(std::uint64_t seed, std::size_t frames, const FeatureEmbedding& emb,
                             const SyntheticDatasetSpec& spec = {}) {
  if (frames < 3) throw ContractError("gen_sequence: need at least 3 frames");
  Rng rng(seed);
  std::vector<double> amp(kPoseDim), freq(kPoseDim), phase(kPoseDim);
  for (std::size_t c = 0; c < kPoseDim; ++c) {
    amp[c] = rng.uniform(0.0, spec.amplitude);
    freq[c] = rng.uniform(spec.freq_lo, spec.freq_hi);
    phase[c] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::array<double, kShapeDim> shape{};
  for (auto& b : shape) b = rng.normal();
  const std::array<double, kCameraDim> camera{rng.uniform(0.8, 1.2), rng.uniform(-0.1, 0.1),
                                              rng.uniform(-0.1, 0.1)};
  const SmplParams neutral = SmplParams::neutral();

  Sequence s;
  s.frames = frames;
  s.feature_dim = emb.rows;
  s.features.resize(frames * emb.rows);
  s.params.resize(frames * kParamDim);
  std::vector<double> p(kParamDim);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < kPoseDim; ++c) {
      p[c] = neutral.pose[c] + amp[c] * std::sin(2.0 * std::numbers::pi * freq[c] * static_cast<double>(t) + phase[c]);
    }
    std::copy(shape.begin(), shape.end(), p.begin() + kPoseDim);
    std::copy(camera.begin(), camera.end(), p.begin() + kBodyInputDim);
    for (std::size_t c = 0; c < kParamDim; ++c) s.params[t * kParamDim + c] = static_cast<float>(p[c]);
    embed_features(emb, p, spec.noise, rng, s.features.data() + t * emb.rows);
  }
  return s;
}

inline std::string sequence_name(std::size_t index) {
  std::string n = std::to_string(index);
  return "seq_" + std::string(4 - std::min<std::size_t>(4, n.size()), '0') + n;
}

/// Sequence i is generated from derive_seed(spec.seed, i).
inline std::vector<Sequence> generate_dataset(const SyntheticDatasetSpec& spec, const FeatureEmbedding& emb) {
  spec.validate();
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < spec.num_sequences; ++i) {
    out.push_back(gen_sequence(derive_seed(spec.seed, i), spec.seq_len, emb, spec));
    out.back().name = sequence_name(i);
  }
  return out;
}

/// Two distinct constant frames, each repeated `reps` times: a single step
/// discontinuity between frames reps-1 and reps. The frames are frame 0 of
/// sub-streams 0 and 1 of `seed`.
inline Sequence gen_stitched(std::uint64_t seed, std::size_t reps, std::size_t window,
                             const FeatureEmbedding& emb, const SyntheticDatasetSpec& spec = {}) {
  if (reps < window / 2 || reps == 0) {
    throw ContractError("gen_stitched: reps (" + std::to_string(reps) + ") must be >= T/2 (" +
                        std::to_string(window / 2) + ")");
  }
  const Sequence a = gen_sequence(derive_seed(seed, 0), 3, emb, spec);
  const Sequence b = gen_sequence(derive_seed(seed, 1), 3, emb, spec);
  Sequence s;
  s.name = "stitched";
  s.frames = 2 * reps;
  s.feature_dim = emb.rows;
  for (std::size_t t = 0; t < s.frames; ++t) {
    const Sequence& src = t < reps ? a : b;
    s.features.insert(s.features.end(), src.features.begin(), src.features.begin() + emb.rows);
    s.params.insert(s.params.end(), src.params.begin(), src.params.begin() + kParamDim);
  }
  return s;
}

/// Writes seq_XXXX.dgtr files into `dir`, creating it if needed.
inline std::vector<std::string> write_dataset(const std::vector<Sequence>& seqs, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::string name = seqs[i].name.empty() ? sequence_name(i) : seqs[i].name;
    paths.push_back((std::filesystem::path(dir) / (name + ".dgtr")).string());
    seqs[i].save(paths.back());
  }
  return paths;
}

/// Loads every *.dgtr file of `dir` in name order.
inline std::vector<Sequence> read_dataset(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("data directory '" + dir + "' does not exist");
  std::vector<std::string> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".dgtr") paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Sequence> out;
  for (const auto& p : paths) out.push_back(Sequence::load(p));
  return out;
}

}  // namespace dgtr
