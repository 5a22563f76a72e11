#include <gtest/gtest.h>

#include "support.hpp"

using namespace hivae;
using ag::Var;

TEST(SpatialMask, RatioWithinRange) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    auto m = motion::sample_spatial_mask(64, rng);
    EXPECT_GE(m.masked_count(), 19);
    EXPECT_LE(m.masked_count(), 32);
    EXPECT_GE(m.ratio, 0.30);
    EXPECT_LE(m.ratio, 0.50);
    EXPECT_EQ(m.masked_count(), std::lround(m.ratio * 64));
  }
}

TEST(SpatialMask, SingleCellAndDeterminism) {
  Rng a(3);
  auto m = motion::sample_spatial_mask(1, a);
  EXPECT_LE(m.masked_count(), 1);
  Rng b(9), c(9);
  EXPECT_EQ(motion::sample_spatial_mask(100, b).keep, motion::sample_spatial_mask(100, c).keep);
  Rng d(0);
  EXPECT_THROW(motion::sample_spatial_mask(0, d), ConfigError);
}

TEST(SpatialMask, PositionsAreUniform) {
  // every position is masked at a rate close to the mean ratio 0.4
  std::vector<int> hits(16, 0);
  Rng rng(1);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) {
    auto m = motion::sample_spatial_mask(16, rng);
    for (int s = 0; s < 16; ++s) hits[static_cast<std::size_t>(s)] += m.keep[static_cast<std::size_t>(s)] == 0.0;
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.4, 0.02);
}

TEST(CrossAttention, SingletonKeyReturnsIt) {
  Rng rng(1);
  Array q = rng.normal_array({3, 4}), kv = rng.normal_array({1, 4});
  Array out = motion::cross_attention(Var::constant(q), Var::constant(kv)).array();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(out[static_cast<std::size_t>(i) * 4 + c], kv[static_cast<std::size_t>(c)], 1e-15);
}

TEST(CrossAttention, OrthogonalQueryAveragesKeys) {
  // q has support on coordinates where every kv row is zero: all logits equal
  Array q({2, 4}, Buffer{1, 0, 0, 0, 0, 2, 0, 0});
  Array kv({3, 4}, Buffer{0, 0, 1, 2, 0, 0, 3, -1, 0, 0, -2, 5});
  Array out = motion::cross_attention(Var::constant(q), Var::constant(kv)).array();
  const double mean[4] = {0, 0, 2.0 / 3.0, 2.0};
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(out[static_cast<std::size_t>(i) * 4 + c], mean[c], 1e-12);
}

TEST(CrossAttention, MatchesDenseOracle) {
  Rng rng(2);
  Array q = rng.normal_array({3, 4}), kv = rng.normal_array({5, 4});
  Array out = motion::cross_attention(Var::constant(q), Var::constant(kv)).array();
  EXPECT_LT(max_abs_diff(out, oracle::dense_attention(q, kv, kv)), 1e-6);
}

TEST(CrossAttention, EmptyOrZeroWidthIsConfigError) {
  EXPECT_THROW(motion::cross_attention(Var::constant(Array({2, 4})), Var::constant(Array({0, 4}))), ConfigError);
  EXPECT_THROW(motion::cross_attention(Var::constant(Array({2, 0})), Var::constant(Array({3, 0}))), ConfigError);
}

TEST(Reparameterize, VanishingVarianceAndDeterministic) {
  Rng rng(1);
  Array mu = rng.normal_array({50}), lv({50}, -30.0);
  Array s = motion::reparameterize(mu, lv, rng, true);
  EXPECT_LT(max_abs_diff(s, mu), 1e-6);
  EXPECT_EQ(motion::reparameterize(mu, Array({50}, 3.0), rng, false), mu);
}

TEST(Reparameterize, StandardNormalMoments) {
  Rng rng(2);
  const int n = 100000;
  Array s = motion::reparameterize(Array({n}), Array({n}), rng, true);
  double m = 0.0, v = 0.0;
  for (double x : s.data) m += x;
  m /= n;
  for (double x : s.data) v += (x - m) * (x - m);
  v /= n;
  EXPECT_LT(std::abs(m), 0.02);
  EXPECT_LT(std::abs(v - 1.0), 0.02);
}

namespace {

struct Encoders {
  nn::ParamStore ps;
  std::unique_ptr<motion::GlobalEncoder> g;
  std::unique_ptr<motion::DetailedEncoder> d;
  Encoders(const std::string& size, int frames, int layers = 1) {
    ModelConfig m;
    m.frames = frames;
    apply_size(m, size);
    m.global.layers = m.detail.layers = layers;
    Rng rng(0);
    g = std::make_unique<motion::GlobalEncoder>(ps, m.global, 16, rng);
    d = std::make_unique<motion::DetailedEncoder>(ps, m.detail, 16, rng);
  }
};

}  // namespace

TEST(Encoders, LatentShapesPerSize) {
  struct Case {
    const char* size;
    Shape ug, ud;
  };
  for (const auto& c : {Case{"S", {8, 8, 4}, {16, 16, 8}}, Case{"normal", {8, 8, 8}, {16, 16, 16}},
                        Case{"L", {8, 8, 8}, {16, 16, 32}}}) {
    Encoders e(c.size, 16);
    Rng rng(1);
    Array z = rng.normal_array({16, 16, 4, 4});
    EXPECT_EQ(e.g->forward(z, std::nullopt, rng, false).u.shape(), c.ug) << c.size;
    EXPECT_EQ(e.d->forward(z, rng, false).u.shape(), c.ud) << c.size;
  }
}

TEST(Encoders, AllOnesMaskEqualsNoMask) {
  Encoders e("normal", 8);
  Rng rng(2);
  Array z = rng.normal_array({16, 8, 4, 4});
  motion::SpatialMask ones{std::vector<double>(16, 1.0), 0.0};
  EXPECT_EQ(e.g->forward(z, std::nullopt, rng, false).u.array(), e.g->forward(z, ones, rng, false).u.array());
}

TEST(Encoders, ZeroInputDependsOnlyOnParameters) {
  Encoders e("normal", 8);
  Rng rng(3);
  Array z0({16, 8, 4, 4});
  Array z1 = z0;
  auto a = e.g->forward(z0, std::nullopt, rng, false).u.array();
  auto b = e.g->forward(z1, motion::SpatialMask{std::vector<double>(16, 0.0), 1.0}, rng, false).u.array();
  EXPECT_EQ(a, b);
}

TEST(Encoders, MaskChangesOutputForGenericInput) {
  Encoders e("normal", 8);
  Rng rng(4);
  Array z = rng.normal_array({16, 8, 4, 4});
  Rng mr(5);
  auto m = motion::sample_spatial_mask(16, mr);
  EXPECT_GT(max_abs_diff(e.g->forward(z, std::nullopt, rng, false).u.array(), e.g->forward(z, m, rng, false).u.array()), 1e-9);
}

TEST(Encoders, DetailedIsPermutationInvariantOverSpatialTokens) {
  Encoders e("normal", 8);
  Rng rng(6);
  Array z = rng.normal_array({16, 8, 4, 4});
  const int f = 8, hw = 16;
  Array tokens = permute(z, {1, 2, 3, 0}).reshaped({f * hw, 16});
  Array pos = e.d->positions(f, hw);
  auto ref = e.d->forward_tokens(tokens, pos, f, rng, false).u.array();
  // shuffle the spatial tokens of frame 2, positional codes travel with them
  Array tp = tokens, pp = pos;
  std::vector<int> perm(hw);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  const int w = pos.dim(1);
  for (int s = 0; s < hw; ++s) {
    const std::size_t dst = static_cast<std::size_t>(2 * hw + s), src = static_cast<std::size_t>(2 * hw + perm[static_cast<std::size_t>(s)]);
    std::copy_n(tokens.data.begin() + static_cast<std::ptrdiff_t>(src * 16), 16, tp.data.begin() + static_cast<std::ptrdiff_t>(dst * 16));
    std::copy_n(pos.data.begin() + static_cast<std::ptrdiff_t>(src * w), w, pp.data.begin() + static_cast<std::ptrdiff_t>(dst * w));
  }
  auto got = e.d->forward_tokens(tp, pp, f, rng, false).u.array();
  EXPECT_LT(max_abs_diff(got, ref), 1e-10);
}

TEST(Encoders, ShapeErrors) {
  Encoders e("normal", 8);
  Rng rng(7);
  EXPECT_THROW(e.g->forward(Array({16, 6, 4, 4}), std::nullopt, rng, false), ConfigError);
  EXPECT_THROW(e.g->forward(Array({16, 8, 4, 4}), motion::SpatialMask{std::vector<double>(5, 1.0), 0.0}, rng, false), ConfigError);
  EXPECT_THROW(e.d->forward(Array({16, 6, 4, 4}), rng, false), ConfigError);
}

TEST(Encoders, LogvarIsClamped) {
  Encoders e("normal", 8);
  Rng rng(8);
  Array z = rng.normal_array({16, 8, 4, 4}, 1e4);
  auto o = e.g->forward(z, std::nullopt, rng, false);
  for (double v : o.logvar.value()) {
    EXPECT_GE(v, motion::kLogvarMin);
    EXPECT_LE(v, motion::kLogvarMax);
  }
}

TEST(GradCheck, MicroGlobalEncoder) {
  oracle::MicroEncoders m;
  auto r = oracle::grad_check(m.ps, [&] { return m.global_loss(); }, "global.");
  EXPECT_GE(r.fraction(), 0.95);
  EXPECT_LE(r.worst, 1e-3) << r.worst_name;
}

TEST(GradCheck, MicroDetailedEncoder) {
  oracle::MicroEncoders m;
  auto r = oracle::grad_check(m.ps, [&] { return m.detail_loss(); }, "detail.");
  EXPECT_GE(r.fraction(), 0.95);
  EXPECT_LE(r.worst, 1e-3) << r.worst_name;
}

TEST(GradCheck, EveryEncoderParameterReceivesGradient) {
  oracle::MicroEncoders m;
  m.ps.zero_grad();
  ag::backward(ag::add(m.global_loss(), m.detail_loss()));
  for (const auto& [name, p] : m.ps.all()) {
    double s = 0.0;
    for (double g : p.grad()) s += std::abs(g);
    EXPECT_GT(s, 0.0) << name;
  }
}
