#include <gtest/gtest.h>

#include <sstream>

#include "dgtr/dgtr.hpp"

using namespace dgtr;
using U = std::uint64_t;

namespace {

U gma_params(const ModelConfig& c) {
  const U I = c.input_dim, T = c.seq_len, d = c.gma.dim, F = c.gma.ffn_dim, N = c.gma.layers;
  const U layer = 4 * (d * d + d) + 4 * d + (d * F + F) + (F * d + d);
  return I * d + d + T * d + N * layer + d * I + I;
}

U ldr_params(const ModelConfig& c) {
  const U I = c.input_dim, W = c.ldr.window, h = c.ldr.hidden, F = c.ldr.ffn_dim, k = c.ldr.kernel,
          M = c.ldr.layers;
  const U layer = h * h + W * h + W * W + 4 * h + (h * F + F) + (F * h + h);
  return k * I * h + h + W * h + M * layer + h * I + I;
}

U regressor_params(const ModelConfig& c) {
  const U I = c.input_dim, H = c.regressor.hidden, P = kParamDim;
  return (I + P) * H + H + H * P + P + P;
}

ModelConfig small_config() {
  ModelConfig c;
  c.seq_len = 6;
  c.input_dim = 40;
  c.gma.dim = 12;
  c.gma.heads = 3;
  c.gma.ffn_dim = 20;
  c.gma.layers = 2;
  c.ldr.hidden = 10;
  c.ldr.ffn_dim = 14;
  c.ldr.layers = 2;
  c.regressor.hidden = 9;
  return c.sync();
}

}  // namespace

TEST(Profiler, ParamCountsMatchClosedForms) {
  for (bool residual : {false, true}) {
    ModelConfig c = small_config();
    c.ldr.mgcn_residual = residual;
    DgtrModel<float> m(c, 0);
    const CostTable t = count_params(m);
    EXPECT_EQ(t.subtotal("gma").params, gma_params(c));
    EXPECT_EQ(t.subtotal("ldr").params, ldr_params(c));
    EXPECT_EQ(t.find("regressor")->params, regressor_params(c));
    EXPECT_EQ(t.total().params, gma_params(c) + ldr_params(c) + regressor_params(c));
  }
}

TEST(Profiler, BranchAblationDropsItsRows) {
  ModelConfig c = small_config();
  c.use_gma = false;
  DgtrModel<float> m(c, 0);
  const CostTable t = profile(m);
  EXPECT_EQ(t.subtotal("gma").params, 0u);
  EXPECT_EQ(t.subtotal("gma").flops, 0u);
  EXPECT_EQ(t.find("fusion"), nullptr);
  EXPECT_EQ(t.total().params, ldr_params(c) + regressor_params(c));
}

TEST(Profiler, FlopsMatchHandCount) {
  // single-layer, single-head attention with every extent distinct
  ModelConfig c;
  c.seq_len = 4;
  c.input_dim = 5;
  c.gma.dim = 2;
  c.gma.heads = 1;
  c.gma.ffn_dim = 3;
  c.gma.layers = 1;
  c.ldr.window = 3;
  c.ldr.kernel = 3;
  c.ldr.hidden = 2;
  c.ldr.ffn_dim = 3;
  c.ldr.layers = 1;
  c.regressor.hidden = 6;
  c.regressor.iterations = 1;
  c.sync();
  const CostTable t = count_flops(c);

  EXPECT_EQ(t.find("gma.input")->flops, 2u * 4 * 5 * 2 + 4 * 2);
  EXPECT_EQ(t.find("gma.pos_enc")->flops, 8u);
  // norms 3*8, qkv+proj 4*(32+8), ffn (48+12)+12+(48+8)
  EXPECT_EQ(t.find("gma.layer0")->flops, 24u + 160 + 128 + 8);
  // scores 64, softmax 32, weighted values 64
  EXPECT_EQ(t.find("gma.layer0.attention")->flops, 160u);
  EXPECT_EQ(t.find("gma.output")->flops, 2u * 2 * 5 + 5);
  EXPECT_EQ(t.find("ldr.conv")->flops, 2u * 3 * 3 * 5 * 2 + 6);
  // XW 24+6, adjacency 36+6, propagate 36+6, norms and residual 18, ffn (36+9)+9+(36+6)
  EXPECT_EQ(t.find("ldr.layer0")->flops, 30u + 42 + 42 + 18 + 96);
  EXPECT_EQ(t.find("fusion")->flops, 5u);
  EXPECT_EQ(t.find("regressor")->flops, (2u * 162 * 6 + 6) + 6 + (2u * 6 * 157 + 157) + 157);
}

TEST(Profiler, DefaultModelWithinExpectedRange) {
  const ModelConfig c = ModelConfig{}.sync();
  const U params = gma_params(c) + ldr_params(c) + regressor_params(c);
  EXPECT_EQ(params, 14'247'747u);
  EXPECT_GE(params, 5'400'000u);
  EXPECT_LE(params, 21'800'000u);
  const U flops = count_flops(c).total().flops;
  EXPECT_GE(flops, 138'780'000u);
  EXPECT_LE(flops, 555'120'000u);
}

TEST(Profiler, CsvAndTextSchema) {
  DgtrModel<float> m(small_config(), 0);
  const CostTable t = profile(m);
  std::istringstream in(t.to_csv());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "component,params,flops");
  std::vector<std::string> names;
  while (std::getline(in, line)) {
    ASSERT_EQ(std::count(line.begin(), line.end(), ','), 2) << line;
    names.push_back(line.substr(0, line.find(',')));
  }
  EXPECT_EQ(names.back(), "total");
  for (const char* s : {"subtotal:gma", "subtotal:ldr", "subtotal:regressor", "fusion"})
    EXPECT_NE(std::find(names.begin(), names.end(), s), names.end()) << s;
  EXPECT_NE(t.to_text().find("M params"), std::string::npos);
}

TEST(Profiler, ComponentNames) {
  EXPECT_EQ(cost_component("gma.layer1.query.weight"), "gma.layer1");
  EXPECT_EQ(cost_component("regressor.fc.bias"), "regressor");
  EXPECT_EQ(cost_component("ldr.pos_enc"), "ldr.pos_enc");
}

TEST(Profiler, LinearMapAndLayerScaling) {
  ParamStore<float> store;
  Rng rng(0);
  Linear<float>::create(store, "lin", 7, 5, rng);
  std::size_t n = 0;
  for (const auto& p : store) n += p->value.numel();
  EXPECT_EQ(n, 7u * 5 + 5);

  ModelConfig c = small_config();
  c.gma.layers = 1;
  DgtrModel<float> one(c, 0);
  c.gma.layers = 2;
  DgtrModel<float> two(c, 0);
  auto layer_params = [](const CostTable& t) {
    U s = 0;
    for (const auto& r : t.rows)
      if (r.component.rfind("gma.layer", 0) == 0) s += r.params;
    return s;
  };
  EXPECT_EQ(layer_params(count_params(two)), 2 * layer_params(count_params(one)));
}

TEST(Profiler, AttentionTermIsQuadraticInWindow) {
  ModelConfig c = ModelConfig{}.sync();
  const U T = 16, d = c.gma.dim, H = c.gma.heads;
  const U at16 = count_flops(c).find("gma.layer0.attention")->flops;
  // two T x d by d x T products at 2*m*k*n each, plus the softmax
  EXPECT_EQ(at16, 2 * (2 * T * d * T) + 2 * H * T * T);
  c.seq_len = 32;
  EXPECT_EQ(count_flops(c).find("gma.layer0.attention")->flops, 4 * at16);
}
