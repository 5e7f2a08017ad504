#include "gimtp/decoder.hpp"
#include "gimtp/errors.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gimtp;
using gimtp::testing::gradient_error;
using gimtp::testing::random_tensor;

namespace {

Tensor one_hot_rows(std::size_t F, int lat, int lon) {
  Tensor m({F, 6});
  for (std::size_t t = 0; t < F; ++t) {
    m.at({t, static_cast<std::size_t>(lat)}) = 1.0;
    m.at({t, 3 + static_cast<std::size_t>(lon)}) = 1.0;
  }
  return m;
}

Tensor random_rows(std::mt19937_64& rng, std::size_t F) {
  Tensor m = random_tensor({F, 6}, rng, 0.01, 1.0);
  for (std::size_t t = 0; t < F; ++t) {
    for (std::size_t b = 0; b < 2; ++b) {
      double s = 0.0;
      for (std::size_t r = 0; r < 3; ++r) s += m.at({t, 3 * b + r});
      for (std::size_t r = 0; r < 3; ++r) m.at({t, 3 * b + r}) /= s;
    }
  }
  return m;
}

layers::Dense dense(ad::Tape& t, std::mt19937_64& rng, std::size_t in, std::size_t out, double s = 0.5) {
  return {t.constant(random_tensor({in, out}, rng, -s, s)), t.constant(random_tensor({out}, rng, -s, s))};
}

layers::Dense zero_dense(ad::Tape& t, std::size_t in, std::size_t out) {
  return {t.constant(Tensor({in, out})), t.constant(Tensor({out}))};
}

decoder::Params zero_params(ad::Tape& t, std::size_t width, std::size_t hidden) {
  decoder::Params p;
  p.input = zero_dense(t, width + 6, hidden);
  p.gru.z = zero_dense(t, hidden, hidden);
  p.gru.r = zero_dense(t, hidden, hidden);
  p.gru.n = zero_dense(t, hidden, hidden);
  p.gru.uz = p.gru.ur = p.gru.un = t.constant(Tensor({hidden, hidden}));
  p.hidden = zero_dense(t, hidden, hidden);
  p.out = zero_dense(t, hidden, 5);
  return p;
}

}  // namespace

TEST(Fusion, ZeroMapAveragesTimesteps) {
  std::mt19937_64 rng(1);
  ad::Tape t;
  Tensor h = random_tensor({5, 3}, rng);
  const Tensor v = decoder::fuse(t.constant(h), t.constant(random_rows(rng, 2)), t.constant(Tensor({5, 2, 6}))).value();
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0;
      for (std::size_t k = 0; k < 5; ++k) mean += h.at({k, c}) / 5.0;
      EXPECT_NEAR(v.at({s, c}), mean, 1e-15);
    }
  }
}

TEST(Fusion, OneHotSelectsSheetExactly) {
  std::mt19937_64 rng(2);
  ad::Tape t;
  Tensor w = random_tensor({4, 3, 6}, rng, -2, 2);
  const Tensor u = decoder::fusion_weights(t.constant(w), t.constant(one_hot_rows(3, 1, 2))).value();
  for (std::size_t tp = 0; tp < 3; ++tp) {
    // softmax over time of W[.,tp,LLC] + W[.,tp,DEC]
    double z = 0.0;
    for (std::size_t k = 0; k < 4; ++k) z += std::exp(w.at({k, tp, 1}) + w.at({k, tp, 5}));
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(u.at({k, tp}), std::exp(w.at({k, tp, 1}) + w.at({k, tp, 5})) / z, 1e-14);
    }
  }
}

TEST(Fusion, LogThreeClosedForm) {
  ad::Tape t;
  Tensor w({2, 1, 6});
  w.at({0, 0, 0}) = std::log(3.0);
  Tensor h = Tensor::matrix({{1.0, 2.0}, {5.0, -2.0}});
  const Tensor v = decoder::fuse(t.constant(h), t.constant(one_hot_rows(1, 0, 0)), t.constant(w)).value();
  EXPECT_NEAR(v[0], 0.75 * 1.0 + 0.25 * 5.0, 1e-15);
  EXPECT_NEAR(v[1], 0.75 * 2.0 + 0.25 * -2.0, 1e-15);
}

TEST(Fusion, WeightsFormConvexCombination) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ad::Tape t;
    const Tensor u = decoder::fusion_weights(t.constant(random_tensor({7, 4, 6}, rng, -20, 20)),
                                             t.constant(random_rows(rng, 4))).value();
    for (std::size_t tp = 0; tp < 4; ++tp) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        EXPECT_GT(u.at({k, tp}), 0.0);
        s += u.at({k, tp});
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Fusion, ShapeMismatchIsDimensionError) {
  ad::Tape t;
  EXPECT_THROW(decoder::fuse(t.constant(Tensor({4, 2})), t.constant(Tensor({3, 6})), t.constant(Tensor({5, 3, 6}))),
               DimensionError);
  EXPECT_THROW(decoder::fusion_weights(t.constant(Tensor({5, 3, 6})), t.constant(Tensor({2, 6}))), DimensionError);
}

TEST(Weighting, ColumnsMustSumToOne) {
  Tensor m({6, 2});
  m.at({0, 0}) = m.at({3, 0}) = 1.0;
  m.at({1, 1}) = m.at({4, 1}) = 1.0;
  EXPECT_NO_THROW(decoder::check_weighting(m));
  m.at({5, 1}) = 0.1;
  EXPECT_THROW(decoder::check_weighting(m), ContractError);
}

TEST(Decode, ZeroParametersGiveStandardGaussian) {
  std::mt19937_64 rng(4);
  ad::Tape t;
  const std::size_t F = 4;
  decoder::Params p = zero_params(t, 3, 5);
  ad::Var raw = decoder::decode(t.constant(random_tensor({F, 3}, rng)), t.constant(random_rows(rng, F)), p);
  Tensor cum({F, F});
  for (std::size_t i = 0; i < F; ++i) {
    for (std::size_t j = 0; j <= i; ++j) cum.at({i, j}) = 1.0;
  }
  decoder::GaussianSequence g = decoder::materialize(decoder::gaussian(raw, cum, Tensor({F, 2})));
  for (double v : g.mu.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.sigma.data()) EXPECT_EQ(v, 1.0);
  for (double v : g.rho.data()) EXPECT_EQ(v, 0.0);
}

TEST(Decode, ZeroInputWeightsMakeOutputsIndependentOfInput) {
  std::mt19937_64 rng(5);
  const std::size_t F = 6, H = 4;
  auto run = [&](const Tensor& v) {
    std::mt19937_64 prng(9);
    ad::Tape t;
    decoder::Params p;
    p.input = dense(t, prng, 3 + 6, H);
    p.gru.z = zero_dense(t, H, H);
    p.gru.r = zero_dense(t, H, H);
    p.gru.n = zero_dense(t, H, H);
    p.gru.z.bias = t.constant(random_tensor({H}, prng));
    p.gru.n.bias = t.constant(random_tensor({H}, prng));
    p.gru.uz = t.constant(random_tensor({H, H}, prng));
    p.gru.ur = t.constant(random_tensor({H, H}, prng));
    p.gru.un = t.constant(random_tensor({H, H}, prng));
    p.hidden = dense(t, prng, H, H);
    p.out = dense(t, prng, H, 5);
    return decoder::decode(t.constant(v), t.constant(one_hot_rows(F, 0, 0)), p).value();
  };
  const Tensor a = run(random_tensor({F, 3}, rng)), b = run(random_tensor({F, 3}, rng));
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
}

TEST(Decode, ConstantStateGivesConstantOutputs) {
  // With every cell weight and bias zero the state stays at zero, so each
  // output row equals the first whatever the inputs.
  std::mt19937_64 rng(6);
  ad::Tape t;
  const std::size_t F = 5, H = 3;
  decoder::Params p = zero_params(t, 2, H);
  p.input = dense(t, rng, 8, H);
  p.hidden = dense(t, rng, H, H);
  p.out = dense(t, rng, H, 5);
  const Tensor y = decoder::decode(t.constant(random_tensor({F, 2}, rng)), t.constant(random_rows(rng, F)), p).value();
  for (std::size_t s = 1; s < F; ++s) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(y.at({s, c}), y.at({0, c}), 1e-15);
  }
}

TEST(Decode, SigmaPositiveAndRhoBounded) {
  std::mt19937_64 rng(7);
  ad::Tape t;
  const std::size_t F = 5;
  ad::Var raw = t.constant(random_tensor({F, 5}, rng, -30, 30));
  decoder::GaussianSequence g = decoder::materialize(decoder::gaussian(raw, Tensor::identity(F), Tensor({F, 2})));
  for (double v : g.sigma.data()) EXPECT_GT(v, 0.0);
  for (double v : g.rho.data()) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_THROW(decoder::gaussian(t.constant(Tensor({F, 4})), Tensor::identity(F), Tensor({F, 2})), DimensionError);
}

TEST(Decode, CumulativeMeanIntegratesIncrements) {
  ad::Tape t;
  Tensor raw({3, 5});
  for (std::size_t s = 0; s < 3; ++s) raw.at({s, 0}) = 1.0;
  Tensor cum = Tensor::matrix({{2, 0, 0}, {2, 2, 0}, {2, 2, 2}});
  Tensor offset({3, 2}, 0.5);
  decoder::GaussianSequence g = decoder::materialize(decoder::gaussian(t.constant(raw), cum, offset));
  EXPECT_DOUBLE_EQ(g.mu.at({2, 0}), 6.5);
  EXPECT_DOUBLE_EQ(g.mu.at({1, 1}), 0.5);
}

TEST(Decode, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  const std::size_t L = 4, F = 3, W = 3, H = 3;
  Tensor h = random_tensor({L, W}, rng), rows = random_rows(rng, F), target = random_tensor({F, 2}, rng);
  std::vector<Tensor> init = {random_tensor({L, F, 6}, rng),     random_tensor({W + 6, H}, rng, -0.5, 0.5),
                              random_tensor({H, H}, rng, -0.5, 0.5), random_tensor({H, H}, rng, -0.5, 0.5),
                              random_tensor({H, 5}, rng, -0.5, 0.5)};
  auto f = [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    std::mt19937_64 prng(10);
    decoder::Params p;
    p.w_map = v[0];
    p.input = {v[1], t.constant(random_tensor({H}, prng))};
    p.gru.z = dense(t, prng, H, H);
    p.gru.r = dense(t, prng, H, H);
    p.gru.n = dense(t, prng, H, H);
    p.gru.uz = v[2];
    p.gru.ur = t.constant(random_tensor({H, H}, prng));
    p.gru.un = v[3];
    p.hidden = dense(t, prng, H, H);
    p.out = {v[4], t.constant(random_tensor({5}, prng))};
    ad::Var r = t.constant(rows);
    ad::Var raw = decoder::decode(decoder::fuse(t.constant(h), r, p.w_map), r, p);
    decoder::Gaussian g = decoder::gaussian(raw, Tensor::identity(F), Tensor({F, 2}));
    ad::Var d = ad::sub(g.mu, t.constant(target));
    return ad::add(ad::sum(ad::mul(ad::square(d), ad::exp(ad::scale(g.log_sigma, -2.0)))), ad::sum(ad::square(g.rho)));
  };
  EXPECT_LT(gradient_error(f, init), 1e-5);
}

TEST(Modes, UniformPredictionsGiveEqualProbabilities) {
  auto p = decoder::mode_probabilities(Tensor({3, 4}, 1.0 / 3.0), Tensor({3, 4}, 1.0 / 3.0));
  double s = 0.0;
  for (double v : p) {
    EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Modes, OneHotPredictionsConcentrate) {
  Tensor lat({3, 5}), lon({3, 5});
  for (std::size_t t = 0; t < 5; ++t) {
    lat.at({0, t}) = 1.0;
    lon.at({0, t}) = 1.0;
  }
  auto p = decoder::mode_probabilities(lat, lon);
  EXPECT_EQ(p[0], 1.0);
  for (std::size_t k = 1; k < 9; ++k) EXPECT_EQ(p[k], 0.0);
}

TEST(Modes, SumToOneForRandomDistributions) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor rows = random_rows(rng, 7);
    Tensor lat({3, 7}), lon({3, 7});
    for (std::size_t t = 0; t < 7; ++t) {
      for (std::size_t k = 0; k < 3; ++k) {
        lat.at({k, t}) = rows.at({t, k});
        lon.at({k, t}) = rows.at({t, 3 + k});
      }
    }
    auto p = decoder::mode_probabilities(lat, lon);
    double s = 0.0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}
