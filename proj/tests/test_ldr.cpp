#include <gtest/gtest.h>

#include "eigen_ref.hpp"
#include "test_util.hpp"

using namespace dgtr;
using namespace dgtr::testing;

namespace {

LdrConfig small_ldr() {
  LdrConfig c;
  c.input_dim = 10;
  c.hidden = 8;
  c.ffn_dim = 12;
  return c;
}

}  // namespace

TEST(Mgcn, MatchesExplicitSummationWithNegativeAdjacency) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor({3, 4}, rng), w = random_tensor({4, 4}, rng);
    const auto mod = random_tensor({3, 4}, rng, -2, 2), delta = random_tensor({3, 3}, rng, -2.5, 0.5);
    Tape<double> tape(false);
    const auto y = modulated_gcn(tape.constant(x), tape.constant(w), tape.constant(mod), tape.constant(delta)).value();
    const Mat ref = ref_mgcn(to_mat(x), to_mat(w), to_mat(mod), to_mat(delta));
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t c = 0; c < 4; ++c) ASSERT_NEAR(y.at(j, c), ref(j, c), 1e-12);
  }
}

TEST(Mgcn, InitialAdjacencyIsUniformThird) {
  Tape<double> tape(false);
  const auto a = normalized_adjacency(tape.constant(Tensor<double>({3, 3}))).value();
  for (double v : a.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-6);
}

TEST(Mgcn, GradientsIncludingAdjacency) {
  Rng rng(22);
  auto f = [](Tape<double>&, const std::vector<Var<double>>& v) { return modulated_gcn(v[0], v[1], v[2], v[3]); };
  EXPECT_LT(fd_max_rel(f, {random_tensor({3, 4}, rng), random_tensor({4, 4}, rng), random_tensor({3, 4}, rng),
                           random_tensor({3, 3}, rng, -0.5, 0.5)}),
            1e-6);
  EXPECT_LT(fd_max_rel(f, {random_tensor({3, 4}, rng), random_tensor({4, 4}, rng), random_tensor({3, 4}, rng),
                           random_tensor({3, 3}, rng, -3.0, -2.2)}),
            1e-6);
}

TEST(Mgcn, InitialisesModulationToOnesAndDeltaToZero) {
  ParamStore<double> store;
  Rng rng(1);
  auto p = MgcnParams<double>::create(store, "m", 3, 4, rng);
  for (double v : p.modulation->value.values()) EXPECT_EQ(v, 1.0);
  for (double v : p.adjacency_delta->value.values()) EXPECT_EQ(v, 0.0);
  Tape<double> tape;
  EXPECT_THROW(modulated_gcn(tape.constant(Tensor<double>({2, 4})), tape.param(*p.weight), tape.param(*p.modulation),
                             tape.param(*p.adjacency_delta)),
               ShapeError);
}

class LdrReference : public ::testing::TestWithParam<bool> {};

TEST_P(LdrReference, MatchesEigenReference) {
  LdrConfig cfg = small_ldr();
  cfg.mgcn_residual = GetParam();
  cfg.layers = 2;
  ParamStore<double> store;
  Rng rng(31);
  LdrEncoder<double> enc(cfg, store, rng);
  for (auto& p : store) {
    for (auto& v : p->value.values()) v += 0.2 * rng.normal();
  }
  const auto frames = random_tensor({3, cfg.input_dim}, rng);
  Tape<double> tape(false);
  const auto out = enc.forward(tape, tape.constant(frames)).value();
  const RowVec ref = ref_ldr(store, cfg, to_mat(frames));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out[i], ref(static_cast<Eigen::Index>(i)), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Residual, LdrReference, ::testing::Bool());

TEST(LdrEncoder, AllParameterGradients) {
  LdrConfig cfg = small_ldr();
  ParamStore<double> store;
  Rng rng(32);
  LdrEncoder<double> enc(cfg, store, rng);
  for (auto& v : enc.mgcn(0).adjacency_delta->value.values()) v = 0.3 * rng.normal();
  const auto frames = random_tensor({3, cfg.input_dim}, rng);
  const auto probe = random_tensor({1, cfg.input_dim}, rng);
  auto loss = [&](Tape<double>& t) { return sum(mul(enc.forward(t, t.constant(frames)), t.constant(probe))); };
  EXPECT_LT(param_fd_max_rel(store, loss), 1e-5);
}

TEST(LdrEncoder, ShapesAndValidation) {
  LdrConfig cfg = small_ldr();
  ParamStore<double> store;
  Rng rng(33);
  LdrEncoder<double> enc(cfg, store, rng);
  EXPECT_EQ(store.get("ldr.conv.weight").value.shape(), (Shape{3, 10, 8}));
  EXPECT_EQ(store.get("ldr.pos_enc").value.shape(), (Shape{3, 8}));
  EXPECT_EQ(store.get("ldr.layer0.mgcn.adjacency_delta").value.shape(), (Shape{3, 3}));
  Tape<double> tape;
  EXPECT_THROW(enc.forward(tape, tape.constant(Tensor<double>({4, 10}))), ShapeError);
  cfg.kernel = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_ldr();
  cfg.window = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(LdrEncoder, UnitKernelKeepsFramesSeparate) {
  LdrConfig cfg = small_ldr();
  cfg.kernel = 1;
  ParamStore<double> store;
  Rng rng(34);
  LdrEncoder<double> enc(cfg, store, rng);
  auto frames = random_tensor({3, cfg.input_dim}, rng);
  Tape<double> tape(false);
  const Tensor<double> a = slice_rows(enc.local_aggregate(tape, tape.constant(frames)), 1, 1).value();
  for (std::size_t c = 0; c < cfg.input_dim; ++c) frames.at(0, c) += 1.0, frames.at(2, c) -= 2.0;
  const Tensor<double> b = slice_rows(enc.local_aggregate(tape, tape.constant(frames)), 1, 1).value();
  EXPECT_EQ(a, b);
}

TEST(LdrEncoder, ZeroFramesAggregateToZero) {
  LdrConfig cfg = small_ldr();
  ParamStore<double> store;
  Rng rng(35);
  LdrEncoder<double> enc(cfg, store, rng);
  Tape<double> tape(false);
  for (double v : enc.local_aggregate(tape, tape.constant(Tensor<double>({3, cfg.input_dim}))).value().values())
    EXPECT_EQ(v, 0.0);
}

TEST(Mgcn, OutputsInOpenUnitInterval) {
  Rng rng(36);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape(false);
    const auto y = modulated_gcn(tape.constant(random_tensor({3, 4}, rng, -3, 3)), tape.constant(random_tensor({4, 4}, rng)),
                                 tape.constant(random_tensor({3, 4}, rng)), tape.constant(random_tensor({3, 3}, rng)))
                       .value();
    for (double v : y.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Mgcn, IdenticalNodesGiveIdenticalRows) {
  Rng rng(37);
  const auto row = random_tensor({1, 4}, rng), mod_row = random_tensor({1, 4}, rng);
  Tensor<double> x({3, 4}), mod({3, 4});
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 4; ++c) x.at(j, c) = row[c], mod.at(j, c) = mod_row[c];
  Tape<double> tape(false);
  const auto y = modulated_gcn(tape.constant(x), tape.constant(random_tensor({4, 4}, rng)), tape.constant(mod),
                               tape.constant(Tensor<double>({3, 3})))
                     .value();
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(y.at(0, c), y.at(1, c));
    EXPECT_EQ(y.at(1, c), y.at(2, c));
  }
}

TEST(LdrEncoder, EveryWindowRowReachesTheOutput) {
  LdrConfig cfg = small_ldr();
  ParamStore<double> store;
  Rng rng(38);
  LdrEncoder<double> enc(cfg, store, rng);
  const auto frames = random_tensor({3, cfg.input_dim}, rng);
  Tape<double> tape(false);
  const Tensor<double> base = enc.forward(tape, tape.constant(frames)).value();
  for (std::size_t r = 0; r < 3; ++r) {
    Tensor<double> f = frames;
    for (std::size_t c = 0; c < cfg.input_dim; ++c) f.at(r, c) += rng.normal();
    EXPECT_NE(enc.forward(tape, tape.constant(f)).value(), base) << "row " << r;
  }
}

TEST(LdrEncoder, GraphParametersScaleWithLayerCount) {
  auto mgcn_params = [](std::size_t layers) {
    LdrConfig cfg = small_ldr();
    cfg.layers = layers;
    ParamStore<double> store;
    Rng rng(39);
    LdrEncoder<double> enc(cfg, store, rng);
    std::size_t n = 0;
    for (const auto& p : store)
      if (p->name.find(".mgcn.") != std::string::npos) n += p->value.numel();
    return n;
  };
  EXPECT_EQ(mgcn_params(2), 2 * mgcn_params(1));
  EXPECT_EQ(mgcn_params(1), 8u * 8 + 3 * 8 + 3 * 3);
}
