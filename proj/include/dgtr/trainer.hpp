#pragma once

#include <cmath>
#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dgtr/config.hpp"
#include "dgtr/data_synth.hpp"
#include "dgtr/metrics.hpp"
#include "dgtr/model.hpp"
#include "dgtr/objectives.hpp"
#include "dgtr/optim.hpp"

namespace dgtr {

struct TrainConfig {
  std::size_t batch = 8;
  std::size_t epochs = 5;
  /// Overrides epochs * steps_per_epoch when nonzero.
  std::size_t max_steps = 0;
  std::size_t warmup_steps = 10;
  double base_lr = 1e-4;
  std::uint64_t seed = 0;
  LossWeights weights;

  static TrainConfig from(const Config& c) {
    TrainConfig t;
    t.batch = c.size("train.batch");
    t.epochs = c.size("train.epochs");
    t.max_steps = c.size("train.max_steps");
    t.warmup_steps = c.size("train.warmup_steps");
    t.base_lr = c.real("train.base_lr");
    t.seed = c.u64("train.seed");
    t.weights = loss_weights(c);
    return t;
  }
};

/// Frame indices of the T-frame window whose target row is `center`,
/// clamped at the sequence ends.
inline std::vector<std::size_t> window_frames(std::size_t length, std::size_t center, std::size_t T) {
  std::vector<std::size_t> idx(T);
  const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(center) - static_cast<std::ptrdiff_t>(T / 2);
  for (std::size_t j = 0; j < T; ++j) {
    idx[j] = static_cast<std::size_t>(
        std::clamp<std::ptrdiff_t>(start + static_cast<std::ptrdiff_t>(j), 0, static_cast<std::ptrdiff_t>(length) - 1));
  }
  return idx;
}

template <class Real>
Tensor<Real> gather_window(const Sequence& seq, std::size_t center, std::size_t T) {
  Tensor<Real> w({T, seq.feature_dim});
  const auto idx = window_frames(seq.frames, center, T);
  for (std::size_t j = 0; j < T; ++j) {
    auto f = seq.feature(idx[j]);
    std::copy(f.begin(), f.end(), w.data() + j * seq.feature_dim);
  }
  return w;
}

struct LossRecord {
  double total = 0, shape = 0, pose = 0, joints3d = 0, joints2d = 0, vel3d = 0, vel2d = 0;

  template <class Real>
  static LossRecord from(const LossTerms<Real>& t) {
    auto v = [](const Var<Real>& x) { return x.valid() ? static_cast<double>(x.value()[0]) : 0.0; };
    return {v(t.total), v(t.shape), v(t.pose), v(t.joints3d), v(t.joints2d), v(t.vel3d), v(t.vel2d)};
  }
};

/// Loss of the target-frame predictions for consecutive `centers` of `seq`.
template <class Real>
LossTerms<Real> batch_loss(Tape<Real>& tape, const DgtrModel<Real>& model, const Sequence& seq,
                           const std::vector<std::size_t>& centers, const BodyMatrices<Real>& body,
                           const LossWeights& weights) {
  std::vector<Var<Real>> preds;
  std::vector<SmplParams> gt;
  for (auto c : centers) {
    preds.push_back(model.forward(tape, tape.constant(gather_window<Real>(seq, c, model.config().seq_len))));
    gt.push_back(seq.gt(c));
  }
  return total_loss(decode_frames(tape, preds, body), decode_targets(tape, gt, body), weights);
}

/// Maps (sequence, frame) to predicted parameters.
using Predictor = std::function<SmplParams(const Sequence&, std::size_t)>;

template <class Real>
Predictor model_predictor(const DgtrModel<Real>& model) {
  return [&model](const Sequence& seq, std::size_t frame) {
    Tape<Real> tape(false);
    Var<Real> out = model.forward(tape, tape.constant(gather_window<Real>(seq, frame, model.config().seq_len)));
    return SmplParams::from_flat(out.value().span());
  };
}

inline Predictor gt_predictor() {
  return [](const Sequence& seq, std::size_t frame) { return seq.gt(frame); };
}

/// Reconstructs every frame as the target of its own edge-clamped window.
/// Sequences shorter than T are skipped with a warning; windows shorter than
/// 3 frames leave ACC-ERR undefined.
inline MetricReport evaluate(const std::vector<Sequence>& seqs, const SyntheticBody& body, const Predictor& predict,
                             std::size_t T, std::optional<double> fps = std::nullopt) {
  MetricReport report;
  report.acc_in_seconds = fps.has_value();
  if (T < 3) report.warnings.push_back("ACC-ERR refused: windows of " + std::to_string(T) + " frames (needs >= 3)");
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const Sequence& seq = seqs[i];
    const std::string name = seq.name.empty() ? sequence_name(i) : seq.name;
    if (seq.frames < T) {
      report.warnings.push_back("skipping " + name + ": " + std::to_string(seq.frames) + " frames < T=" + std::to_string(T));
      continue;
    }
    SequenceMetrics m;
    m.name = name;
    m.frames = seq.frames;
    JointSequence pj{{}, fps}, gj{{}, fps};
    for (std::size_t t = 0; t < seq.frames; ++t) {
      const BodyPose pred = synth_forward(predict(seq, t), body);
      const BodyPose gt = synth_forward(seq.gt(t), body);
      m.mpjpe += mpjpe(pred.joints, gt.joints);
      m.pa_mpjpe += pa_mpjpe(pred.joints, gt.joints);
      m.mpvpe += mpvpe(pred.vertices, gt.vertices);
      pj.frames.push_back(pred.joints);
      gj.frames.push_back(gt.joints);
    }
    const double n = static_cast<double>(seq.frames);
    m.mpjpe /= n;
    m.pa_mpjpe /= n;
    m.mpvpe /= n;
    if (T >= 3 && seq.frames >= 3) m.acc_err = accel_error(pj, gj);
    report.sequences.push_back(m);
  }
  report.finalize();
  return report;
}

template <class Real>
MetricReport evaluate(const DgtrModel<Real>& model, const std::vector<Sequence>& seqs, const SyntheticBody& body,
                      std::optional<double> fps = std::nullopt) {
  return evaluate(seqs, body, model_predictor(model), model.config().seq_len, fps);
}

struct StepLog {
  std::size_t step = 0;
  double lr = 0;
  LossRecord loss;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  SequenceMetrics metrics;
};

struct TrainLog {
  std::vector<StepLog> steps;
  /// Entry 0 is the evaluation before the first step.
  std::vector<EpochLog> epochs;

  std::string steps_csv() const {
    std::ostringstream os;
    os << std::setprecision(10) << "step,lr,total,shape,pose,joints3d,joints2d,vel3d,vel2d\n";
    for (const auto& s : steps) {
      os << s.step << ',' << s.lr << ',' << s.loss.total << ',' << s.loss.shape << ',' << s.loss.pose << ','
         << s.loss.joints3d << ',' << s.loss.joints2d << ',' << s.loss.vel3d << ',' << s.loss.vel2d << '\n';
    }
    return os.str();
  }

  std::string epochs_csv() const {
    std::ostringstream os;
    os << std::setprecision(10) << "epoch,step,pa_mpjpe,mpjpe,mpvpe,acc_err\n";
    for (const auto& e : epochs) {
      os << e.epoch << ',' << e.step << ',' << e.metrics.pa_mpjpe << ',' << e.metrics.mpjpe << ','
         << e.metrics.mpvpe << ',' << e.metrics.acc_err << '\n';
    }
    return os.str();
  }
};

/// Batches are `batch` consecutive target frames of one sequence; the batch
/// starts of every sequence are shuffled per epoch.
inline std::vector<std::pair<std::size_t, std::size_t>> epoch_batches(const std::vector<Sequence>& seqs,
                                                                      std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const std::size_t len = seqs[s].frames;
    const std::size_t b = std::min(batch, len);
    for (std::size_t start = 0; start < len; start += b) out.emplace_back(s, std::min(start, len - b));
  }
  return out;
}

using EpochCallback = std::function<void(const EpochLog&)>;

template <class Real>
TrainLog train(DgtrModel<Real>& model, const std::vector<Sequence>& seqs, const SyntheticBody& body,
               const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (seqs.empty()) throw ContractError("train: empty dataset");
  if (cfg.batch < 1) throw ConfigError("train.batch must be >= 1");
  cfg.weights.validate();
  const BodyMatrices<Real> bm(body);
  auto batches = epoch_batches(seqs, cfg.batch);
  const std::size_t total = cfg.max_steps ? cfg.max_steps : cfg.epochs * batches.size();
  if (total == 0) throw ConfigError("training needs at least one step");
  if (cfg.warmup_steps >= total) {
    throw ConfigError("train.warmup_steps (" + std::to_string(cfg.warmup_steps) + ") must be < total steps (" +
                      std::to_string(total) + ")");
  }

  TrainLog log;
  auto record_epoch = [&](std::size_t epoch, std::size_t step) {
    EpochLog e{epoch, step, evaluate(model, seqs, body).aggregate};
    log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  };
  record_epoch(0, 0);

  Adam<Real> adam;
  Rng shuffle(derive_seed(cfg.seed, 0x5eed));
  std::size_t step = 0;
  for (std::size_t epoch = 1; step < total; ++epoch) {
    for (std::size_t i = batches.size(); i > 1; --i) {
      std::swap(batches[i - 1], batches[shuffle.next() % i]);
    }
    for (const auto& [s, start] : batches) {
      if (step == total) break;
      const Sequence& seq = seqs[s];
      std::vector<std::size_t> centers;
      for (std::size_t c = start; c < std::min(start + cfg.batch, seq.frames); ++c) centers.push_back(c);

      model.params().zero_grad();
      Tape<Real> tape;
      LossTerms<Real> terms = batch_loss(tape, model, seq, centers, bm, cfg.weights);
      const LossRecord rec = LossRecord::from(terms);
      if (!std::isfinite(rec.total)) {
        throw DivergenceError("loss became non-finite at step " + std::to_string(step));
      }
      tape.backward(terms.total);
      const double lr = lr_schedule(step, total, cfg.warmup_steps, cfg.base_lr);
      adam.step(model.params(), lr);
      log.steps.push_back({step, lr, rec});
      ++step;
    }
    record_epoch(epoch, step);
  }
  return log;
}

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Binary model snapshot; every number little-endian, see docs/formats.md.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_echo;
  std::vector<NamedTensor> tensors;
  std::uint64_t step = 0;

  std::vector<char> bytes() const {
    io::Writer w;
    w.magic("DGTRCKPT");
    w.u32(kVersion);
    w.str(config_echo);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      w.str(t.name);
      w.u32(static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
      w.f32_array(t.data);
    }
    w.u64(step);
    return w.bytes();
  }

  void save(const std::string& path) const {
    auto b = bytes();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
    if (!out) throw Error("failed writing '" + path + "'");
  }

  static Checkpoint parse(io::Reader r) {
    r.expect_magic("DGTRCKPT");
    if (r.u32() != kVersion) throw FormatError(r.source() + ": unsupported checkpoint version");
    Checkpoint c;
    c.config_echo = r.str();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      t.name = r.str();
      const std::uint32_t ndim = r.u32();
      for (std::uint32_t d = 0; d < ndim; ++d) t.shape.push_back(r.u32());
      t.data = r.f32_array<float>(shape_numel(t.shape));
      c.tensors.push_back(std::move(t));
    }
    c.step = r.u64();
    r.expect_end();
    return c;
  }

  static Checkpoint load(const std::string& path) { return parse(io::Reader::open(path)); }

  Config config() const { return Config::parse(config_echo, "checkpoint config"); }
};

template <class Real>
Checkpoint make_checkpoint(const DgtrModel<Real>& model, std::string config_echo, std::uint64_t step) {
  Checkpoint c;
  c.config_echo = std::move(config_echo);
  c.step = step;
  for (const auto& p : model.params()) {
    c.tensors.push_back({p->name, p->value.shape(), std::vector<float>(p->value.values().begin(), p->value.values().end())});
  }
  return c;
}

/// Copies checkpoint tensors into `model`; names and shapes must match exactly.
template <class Real>
void restore(DgtrModel<Real>& model, const Checkpoint& c) {
  auto& store = model.params();
  if (c.tensors.size() != store.size()) {
    throw FormatError("checkpoint has " + std::to_string(c.tensors.size()) + " tensors, model expects " +
                      std::to_string(store.size()));
  }
  for (const auto& t : c.tensors) {
    if (!store.contains(t.name)) throw FormatError("checkpoint tensor '" + t.name + "' not in model");
    Parameter<Real>& p = store.get(t.name);
    if (p.value.shape() != t.shape) {
      throw FormatError("checkpoint tensor '" + t.name + "' has shape " + shape_str(t.shape) + ", model expects " +
                        shape_str(p.value.shape()));
    }
    std::copy(t.data.begin(), t.data.end(), p.value.values().begin());
  }
}

}  // namespace dgtr
