#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dgtr/dgtr.hpp"
#include "test_util.hpp"

using namespace dgtr;
using namespace dgtr::testing;

namespace {

std::string tmp_path(const std::string& name) {
  std::filesystem::create_directories(DGTR_TEST_TMP);
  return std::string(DGTR_TEST_TMP) + "/" + name;
}

std::vector<char> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<Sequence> small_dataset(std::size_t n = 2, std::size_t frames = 12) {
  SyntheticDatasetSpec s;
  s.num_sequences = n;
  s.seq_len = frames;
  return generate_dataset(s, shipped_embedding());
}

TrainConfig small_train(std::size_t steps) {
  TrainConfig t;
  t.max_steps = steps;
  t.warmup_steps = 2;
  t.batch = 4;
  return t;
}

}  // namespace

TEST(Window, EdgeClampedIndices) {
  EXPECT_EQ(window_frames(10, 0, 4), (std::vector<std::size_t>{0, 0, 0, 1}));
  EXPECT_EQ(window_frames(10, 5, 4), (std::vector<std::size_t>{3, 4, 5, 6}));
  EXPECT_EQ(window_frames(10, 9, 5), (std::vector<std::size_t>{7, 8, 9, 9, 9}));
  // target row sits at T/2 in every window
  for (std::size_t c = 0; c < 10; ++c) EXPECT_EQ(window_frames(10, c, 8)[4], c);
}

TEST(Window, GatherCopiesFeatureRows) {
  const Sequence s = small_dataset(1, 6)[0];
  const auto w = gather_window<double>(s, 0, 4);
  ASSERT_EQ(w.shape(), (Shape{4, s.feature_dim}));
  for (std::size_t c = 0; c < s.feature_dim; c += 101) {
    EXPECT_EQ(w.at(0, c), static_cast<double>(s.feature(0)[c]));
    EXPECT_EQ(w.at(3, c), static_cast<double>(s.feature(1)[c]));
  }
}

TEST(EpochBatches, CoverEveryFrame) {
  const auto seqs = small_dataset(2, 10);
  const auto b = epoch_batches(seqs, 4);
  ASSERT_EQ(b.size(), 6u);
  EXPECT_EQ(b[2], (std::pair<std::size_t, std::size_t>{0, 6}));  // last batch shifted back inside
}

TEST(Train, LossDropsAndRunIsDeterministic) {
  const auto seqs = small_dataset();
  const SyntheticBody& body = shipped_body();
  DgtrModel<double> a(probe_model_config(16, 8), 3), b(probe_model_config(16, 8), 3);
  const TrainLog la = train(a, seqs, body, small_train(40));
  const TrainLog lb = train(b, seqs, body, small_train(40));
  ASSERT_EQ(la.steps.size(), 40u);
  EXPECT_EQ(la.steps_csv(), lb.steps_csv());
  EXPECT_EQ(la.epochs_csv(), lb.epochs_csv());
  EXPECT_LT(la.epochs.back().metrics.mpjpe, la.epochs.front().metrics.mpjpe);
  EXPECT_EQ(la.epochs.front().step, 0u);
  EXPECT_EQ(la.epochs.back().step, 40u);
  for (const auto& p : a.params()) EXPECT_EQ(p->value, b.params().get(p->name).value);
}

TEST(Train, RejectsWarmupNotBelowTotal) {
  DgtrModel<double> m(probe_model_config(8, 4), 0);
  TrainConfig t = small_train(5);
  t.warmup_steps = 5;
  EXPECT_THROW(train(m, small_dataset(1, 8), shipped_body(), t), ConfigError);
  EXPECT_THROW(train(m, {}, shipped_body(), small_train(5)), ContractError);
}

TEST(Train, StepCsvSchema) {
  DgtrModel<float> m(probe_model_config(8, 4), 0);
  std::size_t calls = 0;
  const TrainLog log = train(m, small_dataset(1, 8), shipped_body(), small_train(4), [&](const EpochLog&) { ++calls; });
  EXPECT_EQ(calls, log.epochs.size());
  std::istringstream in(log.steps_csv());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,lr,total,shape,pose,joints3d,joints2d,vel3d,vel2d");
  EXPECT_EQ(log.epochs_csv().substr(0, log.epochs_csv().find('\n')), "epoch,step,pa_mpjpe,mpjpe,mpvpe,acc_err");
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  DgtrModel<float> m(probe_model_config(8, 4), 5);
  const Checkpoint c = make_checkpoint(m, Config().echo(), 17);
  const std::string p1 = tmp_path("a.ckpt"), p2 = tmp_path("b.ckpt");
  c.save(p1);
  const Checkpoint back = Checkpoint::load(p1);
  EXPECT_EQ(back.step, 17u);
  EXPECT_EQ(back.tensors.size(), m.params().size());
  back.save(p2);
  EXPECT_EQ(file_bytes(p1), file_bytes(p2));

  DgtrModel<float> n(probe_model_config(8, 4), 6);
  restore(n, back);
  make_checkpoint(n, Config().echo(), 17).save(p2);
  EXPECT_EQ(file_bytes(p1), file_bytes(p2));
}

TEST(Checkpoint, ReloadedFloatModelIsBitwiseIdentical) {
  DgtrModel<float> m(probe_model_config(8, 4), 5);
  DgtrModel<float> n(probe_model_config(8, 4), 9);
  restore(n, make_checkpoint(m, "", 0));
  const Sequence s = small_dataset(1, 6)[0];
  Tape<float> tape(false);
  const auto w = tape.constant(gather_window<float>(s, 2, 4));
  const Tensor<float> a = m.forward(tape, w).value();
  const Tensor<float> b = n.forward(tape, w).value();
  EXPECT_EQ(a, b);
}

TEST(Checkpoint, MismatchesRejected) {
  DgtrModel<float> m(probe_model_config(8, 4), 5);
  Checkpoint c = make_checkpoint(m, "", 0);
  DgtrModel<float> wider(probe_model_config(16, 4), 5);
  EXPECT_THROW(restore(wider, c), FormatError);
  c.tensors[0].name = "nope";
  EXPECT_THROW(restore(m, c), FormatError);
  c.tensors.pop_back();
  EXPECT_THROW(restore(m, c), FormatError);

  const std::string p = tmp_path("trunc.ckpt");
  make_checkpoint(m, "", 0).save(p);
  std::filesystem::resize_file(p, std::filesystem::file_size(p) - 3);
  EXPECT_THROW(Checkpoint::load(p), FormatError);
}

TEST(Evaluate, GroundTruthPredictionScoresZero) {
  const auto seqs = small_dataset(2, 10);
  const MetricReport r = evaluate(seqs, shipped_body(), gt_predictor(), 8);
  ASSERT_EQ(r.sequences.size(), 2u);
  EXPECT_EQ(r.aggregate.mpjpe, 0.0);
  EXPECT_EQ(r.aggregate.mpvpe, 0.0);
  EXPECT_EQ(r.aggregate.acc_err, 0.0);
  EXPECT_LT(r.aggregate.pa_mpjpe, 1e-6);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Evaluate, ShortSequencesSkippedAndShortWindowsHaveNoAccel) {
  std::vector<Sequence> seqs = small_dataset(1, 10);
  seqs.push_back(small_dataset(1, 4)[0]);
  const MetricReport r = evaluate(seqs, shipped_body(), gt_predictor(), 8);
  EXPECT_EQ(r.sequences.size(), 1u);
  EXPECT_EQ(r.warnings.size(), 1u);

  const MetricReport t2 = evaluate(seqs, shipped_body(), gt_predictor(), 2);
  EXPECT_TRUE(std::isnan(t2.aggregate.acc_err));
  EXPECT_FALSE(t2.warnings.empty());
}

TEST(GradCheck, PassesAndDetectsCorruptedGradient) {
  const Sequence seq = small_dataset(1, 10)[0];
  const SyntheticBody& bm = shipped_body();
  DgtrModel<double> m(probe_model_config(16, 8), 1);
  GradCheckOptions opt;
  opt.samples = 2;
  const GradCheckReport ok = grad_check(m, seq, {4, 5}, bm, LossWeights{}, opt);
  EXPECT_TRUE(ok.pass()) << ok.max_rel;
  EXPECT_EQ(ok.tensors.size(), m.params().size());

  opt.corrupt = "ldr.layer0.mgcn.weight";
  const GradCheckReport bad = grad_check(m, seq, {4, 5}, bm, LossWeights{}, opt);
  EXPECT_FALSE(bad.pass());
}

TEST(Evaluate, OneWindowPerFrame) {
  const auto seqs = small_dataset(1, 11);
  std::size_t calls = 0;
  const Predictor counting = [&](const Sequence& s, std::size_t t) {
    ++calls;
    return s.gt(t);
  };
  evaluate(seqs, shipped_body(), counting, 8);
  EXPECT_EQ(calls, 11u);
}

TEST(Model, BranchReach) {
  ModelConfig c = probe_model_config(8, 8);
  const Sequence seq = small_dataset(1, 10)[0];
  const Tensor<double> window = gather_window<double>(seq, 4, 8);
  Rng rng(2);
  c.use_gma = false;
  DgtrModel<double> local(c, 1);
  for (const auto& r : frame_sensitivity(local, window, rng)) {
    const bool inside = r.frame >= 3 && r.frame <= 5;
    EXPECT_EQ(r.bitwise_equal, !inside) << "frame " << r.frame;
  }
  c.use_gma = true;
  c.use_ldr = false;
  DgtrModel<double> global(c, 1);
  for (const auto& r : frame_sensitivity(global, window, rng)) EXPECT_GT(r.delta_norm, 0.0) << "frame " << r.frame;
}

TEST(Model, ZeroedBranchMatchesSingleBranch) {
  ModelConfig c = probe_model_config(8, 8);
  DgtrModel<double> full(c, 3);
  c.use_gma = false;
  DgtrModel<double> local(c, 3);
  for (const auto& p : local.params()) p->value = full.params().get(p->name).value;
  const Sequence seq = small_dataset(1, 10)[0];
  Tape<double> tape(false);
  const auto w = tape.constant(gather_window<double>(seq, 4, 8));
  const Tensor<double> a = full.forward(tape, w, {true, false}).value();
  const Tensor<double> b = local.forward(tape, w).value();
  EXPECT_EQ(a, b);
}

TEST(Train, SingleBranchRunsComplete) {
  for (bool gma : {false, true}) {
    ModelConfig c = probe_model_config(8, 4);
    c.use_gma = gma;
    c.use_ldr = !gma;
    DgtrModel<float> m(c, 0);
    const TrainLog log = train(m, small_dataset(1, 8), shipped_body(), small_train(4));
    EXPECT_EQ(log.steps.size(), 4u);
    EXPECT_TRUE(std::isfinite(log.epochs.back().metrics.mpjpe));
  }
}
