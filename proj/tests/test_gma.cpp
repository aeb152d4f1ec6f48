#include <gtest/gtest.h>

#include "eigen_ref.hpp"
#include "test_util.hpp"

using namespace dgtr;
using namespace dgtr::testing;

namespace {

GmaConfig small_gma() {
  GmaConfig c;
  c.layers = 2;
  c.heads = 4;
  c.dim = 16;
  c.input_dim = 12;
  c.ffn_dim = 24;
  c.seq_len = 6;
  return c;
}

}  // namespace

TEST(Attention, SingleHeadMatchesExplicitFormula) {
  Rng rng(1);
  const auto q = random_tensor({4, 3}, rng), k = random_tensor({5, 3}, rng), v = random_tensor({5, 2}, rng);
  Tape<double> tape;
  const auto out = scaled_dot_attention(tape.constant(q), tape.constant(k), tape.constant(v)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> w(5);
    double z = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 3; ++c) dot += q.at(i, c) * k.at(j, c);
      w[j] = std::exp(dot / std::sqrt(3.0));
      z += w[j];
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) s += w[j] / z * v.at(j, c);
      EXPECT_NEAR(out.at(i, c), s, 1e-14);
    }
  }
  EXPECT_THROW(scaled_dot_attention(tape.constant(q), tape.constant(k), tape.constant(q)), ShapeError);
}

TEST(Attention, Gradient) {
  Rng rng(2);
  auto f = [](Tape<double>&, const std::vector<Var<double>>& v) { return scaled_dot_attention(v[0], v[1], v[2]); };
  EXPECT_LT(fd_max_rel(f, {random_tensor({4, 3}, rng), random_tensor({5, 3}, rng), random_tensor({5, 2}, rng)}), 1e-6);
}

TEST(GmaEncoder, MatchesEigenReference) {
  const GmaConfig cfg = small_gma();
  ParamStore<double> store;
  Rng rng(5);
  GmaEncoder<double> enc(cfg, store, rng);
  // move away from the identity-like init of the norms
  for (auto& p : store) {
    for (auto& v : p->value.values()) v += 0.1 * rng.normal();
  }
  Rng xr(6);
  const auto frames = random_tensor({cfg.seq_len, cfg.input_dim}, xr);
  Tape<double> tape(false);
  const auto out = enc.forward(tape, tape.constant(frames)).value();
  const RowVec ref = ref_gma(store, cfg, to_mat(frames));
  ASSERT_EQ(out.numel(), cfg.input_dim);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], ref(static_cast<Eigen::Index>(i)), 1e-12);
}

TEST(GmaEncoder, ParameterNamesAndShapes) {
  const GmaConfig cfg = small_gma();
  ParamStore<double> store;
  Rng rng(5);
  GmaEncoder<double> enc(cfg, store, rng);
  EXPECT_EQ(store.get("gma.input.weight").value.shape(), (Shape{12, 16}));
  EXPECT_EQ(store.get("gma.pos_enc").value.shape(), (Shape{6, 16}));
  EXPECT_EQ(store.get("gma.layer1.ffn_in.weight").value.shape(), (Shape{16, 24}));
  EXPECT_EQ(store.get("gma.output.weight").value.shape(), (Shape{16, 12}));
  EXPECT_TRUE(store.contains("gma.layer0.norm_attn.gamma"));
  EXPECT_FALSE(store.contains("gma.layer2.query.weight"));
}

TEST(GmaEncoder, AllParameterGradients) {
  const GmaConfig cfg = small_gma();
  ParamStore<double> store;
  Rng rng(7);
  GmaEncoder<double> enc(cfg, store, rng);
  const auto frames = random_tensor({cfg.seq_len, cfg.input_dim}, rng);
  const auto probe = random_tensor({1, cfg.input_dim}, rng);
  auto loss = [&](Tape<double>& t) { return sum(mul(enc.forward(t, t.constant(frames)), t.constant(probe))); };
  EXPECT_LT(param_fd_max_rel(store, loss), 1e-5);
}

TEST(GmaEncoder, OutputDependsOnEveryFrame) {
  const GmaConfig cfg = small_gma();
  ParamStore<double> store;
  Rng rng(8);
  GmaEncoder<double> enc(cfg, store, rng);
  const auto frames = random_tensor({cfg.seq_len, cfg.input_dim}, rng);
  Tape<double> tape;
  Var<double> x = tape.variable(frames);
  tape.backward(sum(enc.forward(tape, x)));
  const auto& g = tape.grad(x.id());
  for (std::size_t t = 0; t < cfg.seq_len; ++t) {
    double norm = 0.0;
    for (std::size_t c = 0; c < cfg.input_dim; ++c) norm += std::abs(g.at(t, c));
    EXPECT_GT(norm, 1e-9) << "frame " << t;
  }
}

TEST(GmaEncoder, RejectsBadShapesAndConfigs) {
  GmaConfig cfg = small_gma();
  ParamStore<double> store;
  Rng rng(9);
  GmaEncoder<double> enc(cfg, store, rng);
  Tape<double> tape;
  EXPECT_THROW(enc.forward(tape, tape.constant(Tensor<double>({cfg.seq_len + 1, cfg.input_dim}))), ShapeError);
  cfg.heads = 5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_gma();
  cfg.layers = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Attention, ZeroQueryAveragesValues) {
  Rng rng(10);
  const auto k = random_tensor({5, 3}, rng), v = random_tensor({5, 2}, rng);
  Tape<double> tape(false);
  const auto out = scaled_dot_attention(tape.constant(Tensor<double>({4, 3})), tape.constant(k), tape.constant(v)).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 5; ++j) mean += v.at(j, c);
      EXPECT_NEAR(out.at(i, c), mean / 5, 1e-15);
    }
}

TEST(Attention, SingleTokenReturnsValue) {
  Rng rng(11);
  const auto v = random_tensor({1, 4}, rng);
  Tape<double> tape(false);
  const auto out = scaled_dot_attention(tape.constant(random_tensor({1, 3}, rng)),
                                        tape.constant(random_tensor({1, 3}, rng)), tape.constant(v))
                       .value();
  EXPECT_EQ(out, v);
}

TEST(GmaEncoder, FullWidthOutputShape) {
  GmaConfig cfg = small_gma();
  cfg.input_dim = 2048;
  cfg.seq_len = 16;
  ParamStore<double> store;
  Rng rng(12);
  GmaEncoder<double> enc(cfg, store, rng);
  Tape<double> tape(false);
  EXPECT_EQ(enc.forward(tape, tape.constant(Tensor<double>({16, 2048}))).shape(), (Shape{1, 2048}));
}

TEST(GmaEncoder, PermutingOtherFramesKeepsTargetFeature) {
  const GmaConfig cfg = small_gma();
  ParamStore<double> store;
  Rng rng(13);
  GmaEncoder<double> enc(cfg, store, rng);
  for (auto& v : enc.positional_encoding().value.values()) v = 0.0;
  const auto frames = random_tensor({cfg.seq_len, cfg.input_dim}, rng);
  // reverse every row except the target
  Tensor<double> permuted = frames;
  const std::size_t mid = cfg.seq_len / 2;
  std::vector<std::size_t> others;
  for (std::size_t t = 0; t < cfg.seq_len; ++t)
    if (t != mid) others.push_back(t);
  for (std::size_t i = 0; i < others.size(); ++i)
    for (std::size_t c = 0; c < cfg.input_dim; ++c)
      permuted.at(others[i], c) = frames.at(others[others.size() - 1 - i], c);
  Tape<double> tape(false);
  const Tensor<double> a = enc.forward(tape, tape.constant(frames)).value();
  const Tensor<double> b = enc.forward(tape, tape.constant(permuted)).value();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}
