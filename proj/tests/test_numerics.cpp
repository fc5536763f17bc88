#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mdt/gradcheck.hpp"
#include "mdt/ops.hpp"
#include "mdt/optim.hpp"
#include "mdt/rng.hpp"

namespace mdt {
namespace {

using Td = Tensor<double>;
using Tf = Tensor<float>;

Td random_matrix(Rng& rng, std::size_t r, std::size_t c, bool grad = true) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return Td({r, c}, std::move(v), grad);
}

double check(const std::function<Td()>& fn, ParamList<double> params) {
  return grad_check<double>(fn, params).max_rel_error;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto eye = Tf::matrix({{1, 0}, {0, 1}});
  auto m = Tf::matrix({{1, 2}, {3, 4}});
  auto out = matmul(eye, m);
  EXPECT_EQ(out.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<float>(out.data().begin(), out.data().end()), (std::vector<float>{1, 2, 3, 4}));
}

TEST(Matmul, HandArithmetic) {
  auto out = matmul(Tf::matrix({{1, 2}, {3, 4}}), Tf::matrix({{5}, {6}}));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_FLOAT_EQ(out.at(0, 0), 17.0f);
  EXPECT_FLOAT_EQ(out.at(1, 0), 39.0f);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tf::zeros({2, 3}), Tf::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto a = random_matrix(rng, 3, 4);
  auto b = random_matrix(rng, 4, 2);
  EXPECT_LT(check([&] { return sum(matmul(a, b)); }, {{"a", a}, {"b", b}}), 1e-4);
  // Non-linear downstream use exercises the full Jacobian, not just row sums.
  auto w = random_matrix(rng, 3, 2, false);
  EXPECT_LT(check([&] { return sum(mul(matmul(a, b), mul(matmul(a, b), w))); }, {{"a", a}, {"b", b}}), 1e-4);
}

TEST(SoftmaxRows, SymmetricScoresSplitEvenly) {
  auto out = softmax_rows(Tf::matrix({{0, 0}}), Tf::matrix({{0, 0}}));
  EXPECT_FLOAT_EQ(out.at(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(out.at(0, 1), 0.5f);
}

TEST(SoftmaxRows, MaskedEntryIsExactlyZero) {
  const float inf = std::numeric_limits<float>::infinity();
  auto out = softmax_rows(Tf::matrix({{5, 5}}), Tf::matrix({{0, -inf}}));
  EXPECT_EQ(out.at(0, 0), 1.0f);
  EXPECT_EQ(out.at(0, 1), 0.0f);
}

TEST(SoftmaxRows, FullyMaskedRowIsZeroAndCounted) {
  const double inf = std::numeric_limits<double>::infinity();
  Diagnostics diag;
  auto out = softmax_rows(Td::matrix({{1, 2}, {3, 4}}), Td::matrix({{-inf, -inf}, {0, 0}}), &diag);
  EXPECT_EQ(out.at(0, 0), 0.0);
  EXPECT_EQ(out.at(0, 1), 0.0);
  EXPECT_FALSE(std::isnan(out.at(1, 0)));
  EXPECT_EQ(diag.fully_masked_rows, 1u);
}

TEST(SoftmaxRows, MatchesNaiveExponentiation) {
  Rng rng(11);
  auto s = random_matrix(rng, 4, 4, false);
  auto b = random_matrix(rng, 4, 4, false);
  auto out = softmax_rows(s, b);
  for (std::size_t i = 0; i < 4; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < 4; ++j) denom += std::exp(s.at(i, j) + b.at(i, j));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.at(i, j), std::exp(s.at(i, j) + b.at(i, j)) / denom, 1e-6);
  }
}

TEST(SoftmaxRows, RowsSumToOneUnderRandomMasks) {
  Rng rng(5);
  const float inf = std::numeric_limits<float>::infinity();
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6);
    std::vector<float> s(m * n), b(m * n);
    for (std::size_t i = 0; i < m * n; ++i) {
      s[i] = static_cast<float>(rng.normal(0, 5));
      b[i] = rng.bernoulli(0.3) ? -inf : static_cast<float>(rng.normal());
    }
    auto out = softmax_rows(Tf({m, n}, s), Tf({m, n}, b));
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0;
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) {
        const float v = out.at(i, j);
        EXPECT_GE(v, 0.0f);
        if (b[i * n + j] == -inf) EXPECT_EQ(v, 0.0f);
        else any = true;
        total += v;
      }
      if (any) EXPECT_NEAR(total, 1.0, 1e-6);
      else EXPECT_EQ(total, 0.0);
    }
  }
}

TEST(SoftmaxRows, GradientFlowsToScoresAndBias) {
  Rng rng(8);
  const double inf = std::numeric_limits<double>::infinity();
  auto s = random_matrix(rng, 3, 4);
  auto b = random_matrix(rng, 3, 4);
  b.mutable_data()[1] = -inf;
  auto w = random_matrix(rng, 3, 4, false);
  EXPECT_LT(check([&] { return sum(mul(softmax_rows(s, b), w)); }, {{"s", s}}), 1e-4);
  // Perturbing a -inf entry is meaningless, so check the bias through a copy
  // without masked entries.
  auto b2 = random_matrix(rng, 3, 4);
  EXPECT_LT(check([&] { return sum(mul(softmax_rows(s, b2), w)); }, {{"s", s}, {"b", b2}}), 1e-4);
}

TEST(LayerNorm, ConstantInputResolvesToShift) {
  auto out = layer_norm(Tf::matrix({{3, 3}}), Tf::vector({1, 1}), Tf::vector({0, 0}));
  EXPECT_FLOAT_EQ(out.at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(out.at(0, 1), 0.0f);
}

TEST(LayerNorm, AlreadyNormalizedInputIsKept) {
  auto out = layer_norm(Td::matrix({{1, -1}}), Td::vector({1, 1}), Td::vector({0, 0}), 1e-12);
  EXPECT_NEAR(out.at(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(out.at(0, 1), -1.0, 1e-9);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  auto x = random_matrix(rng, 3, 5);
  auto g = Td({5}, {1.1, 0.9, 1.3, 0.7, 1.0}, true);
  auto sh = Td({5}, {0.1, -0.2, 0.3, 0.0, 0.5}, true);
  auto w = random_matrix(rng, 3, 5, false);
  EXPECT_LT(check([&] { return sum(mul(layer_norm(x, g, sh, 1e-5), w)); }, {{"x", x}, {"gain", g}, {"shift", sh}}),
            1e-4);
}

TEST(Ops, EveryDifferentiableOpPassesGradCheck) {
  Rng rng(21);
  auto a = random_matrix(rng, 3, 4);
  auto b = random_matrix(rng, 3, 4);
  auto c = random_matrix(rng, 2, 4);
  auto r = Td({4}, {0.3, -0.1, 0.2, 0.5}, true);
  auto w = random_matrix(rng, 5, 4, false);
  auto table = random_matrix(rng, 6, 2);
  const double tol = 1e-4;

  EXPECT_LT(check([&] { return sum(mul(matmul_nt(a, c), matmul_nt(a, c))); }, {{"a", a}, {"c", c}}), tol);
  EXPECT_LT(check([&] { return sum(mul(transpose(a), transpose(b))); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return sum(mul(sub(a, b), add(a, b))); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return sum(mul(add_row(a, r), add_row(a, r))); }, {{"a", a}, {"r", r}}), tol);
  EXPECT_LT(check([&] { return sum(mul(gelu(a), b)); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return sum(mul(scale(a, 2.5), a)); }, {{"a", a}}), tol);
  EXPECT_LT(check([&] { return sum(mul(concat_rows<double>({a, c}), w)); }, {{"a", a}, {"c", c}}), tol);
  EXPECT_LT(check([&] { return sum(mul(concat_cols<double>({a, b}), concat_cols<double>({b, a}))); },
                  {{"a", a}, {"b", b}}),
            tol);
  EXPECT_LT(check([&] { return sum(mul(gather_rows(a, {2, 0, 2}), gather_rows(b, {1, 1, 0}))); },
                  {{"a", a}, {"b", b}}),
            tol);
  EXPECT_LT(check([&] { return sum(mul(slice(a, 1, 2, 1, 3), slice(b, 0, 2, 0, 3))); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return sum(mul(reshape(a, {4, 3}), reshape(b, {4, 3}))); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return mean(mul(dropout(a, 0.5, 42), b)); }, {{"a", a}, {"b", b}}), tol);
  EXPECT_LT(check([&] { return weighted_cross_entropy_sum(a, {0, 3, -1}, {1.0, 1.5, 0.5, 2.0}); }, {{"a", a}}), tol);

  const std::vector<std::size_t> idx{0, 3, 5, 3, 1, 0, 2, 2, 4};
  const std::vector<bool> mask{true, true, false, true, true, true, true, true, true};
  auto s3 = random_matrix(rng, 3, 3);
  EXPECT_LT(check([&] { return sum(mul(softmax_rows(s3, gather_bias(table, idx, mask, 3, 1)), s3)); },
                  {{"table", table}, {"s", s3}}),
            tol);
}

TEST(Dropout, SameKeySameMask) {
  auto x = Tf::full({4, 8}, 1.0f);
  auto a = dropout(x, 0.3, 99);
  auto b = dropout(x, 0.3, 99);
  auto c = dropout(x, 0.3, 100);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST(Tensor, FrozenLeafNeverAccumulates) {
  auto w = Tf::matrix({{1, 2}, {3, 4}}, true);
  w.set_requires_grad(false);
  auto x = Tf::matrix({{1, 1}, {1, 1}}, true);
  sum(matmul(x, w)).backward();
  for (float g : w.grad()) EXPECT_EQ(g, 0.0f);
  for (float g : x.grad()) EXPECT_NE(g, 0.0f);
}

TEST(Tensor, RejectsInconsistentShape) {
  EXPECT_THROW(Tf({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  ParamList<float> params{{"w", Tf({3}, {1, -2, 3}, true)}};
  auto state = make_optimizer_state(params);
  for (int i = 0; i < 5; ++i) adam_step(params, state, 0.1);
  EXPECT_EQ(std::vector<float>(params[0].tensor.data().begin(), params[0].tensor.data().end()),
            (std::vector<float>{1, -2, 3}));
  EXPECT_EQ(state.step, 5u);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ParamList<double> params{{"w", Td({3}, {0.0, 1.0, -1.0}, true)}};
  auto g = params[0].tensor.mutable_grad();
  g[0] = 4.0;
  g[1] = -0.25;
  g[2] = 1e-3;
  auto state = make_optimizer_state(params);
  adam_step(params, state, 0.01);
  const auto w = params[0].tensor.data();
  EXPECT_NEAR(w[0], 0.0 - 0.01, 1e-8);
  EXPECT_NEAR(w[1], 1.0 + 0.01, 1e-8);
  EXPECT_NEAR(w[2], -1.0 - 0.01, 1e-6);  // eps matters most for the smallest gradient
}

TEST(Adam, ConvergesOnQuadratic) {
  ParamList<double> params{{"w", Td({1}, {0.0}, true)}};
  auto state = make_optimizer_state(params);
  for (int i = 0; i < 200; ++i) {
    params[0].tensor.zero_grad();
    auto d = sub(params[0].tensor, Td({1}, {3.0}));
    sum(mul(d, d)).backward();
    adam_step(params, state, 0.1);
  }
  EXPECT_LT(std::abs(params[0].tensor.item() - 3.0), 1e-3);
}

TEST(Adam, FrozenParameterUntouched) {
  ParamList<float> params{{"frozen", Tf({2}, {1, 2}, true)}, {"live", Tf({2}, {1, 2}, true)}};
  params[0].tensor.set_requires_grad(false);
  params[1].tensor.mutable_grad()[0] = 1.0f;
  auto state = make_optimizer_state(params);
  adam_step(params, state, 0.1);
  EXPECT_EQ(params[0].tensor.data()[0], 1.0f);
  EXPECT_NE(params[1].tensor.data()[0], 1.0f);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamList<float> params{{"encoder.w", Tf({2}, {1, 2}, true)}};
  params[0].tensor.mutable_grad()[1] = std::numeric_limits<float>::quiet_NaN();
  auto state = make_optimizer_state(params);
  try {
    adam_step(params, state, 0.1);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.w"), std::string::npos);
  }
  EXPECT_EQ(params[0].tensor.data()[0], 1.0f);
}

TEST(Adam, BitwiseDeterministic) {
  auto run = [] {
    ParamList<float> params{{"w", Tf({4}, {0.1f, -0.2f, 0.3f, 0.4f}, true)}};
    auto state = make_optimizer_state(params);
    for (int i = 0; i < 20; ++i) {
      auto g = params[0].tensor.mutable_grad();
      for (std::size_t k = 0; k < 4; ++k) g[k] = std::sin(static_cast<float>(i * 4 + k));
      adam_step(params, state, 1e-2);
    }
    return std::vector<float>(params[0].tensor.data().begin(), params[0].tensor.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(LrSchedule, MatchesWarmupAndDecayEndpoints) {
  LrSchedule s;  // 3e-5 -> 3e-7, warmup 500, total 3350
  s.validate();
  EXPECT_EQ(lr_at(s, 0), 0.0);
  EXPECT_NEAR(lr_at(s, 500), 3e-5, 1e-18);
  EXPECT_NEAR(lr_at(s, 3350), 3e-7, 1e-18);
  EXPECT_NEAR(lr_at(s, 10000), 3e-7, 1e-18);
  EXPECT_NEAR(lr_at(s, 250), 1.5e-5, 1e-18);
}

TEST(LrSchedule, ContinuousAtWarmupAndMonotoneAfter) {
  for (double power : {0.5, 1.0, 2.0}) {
    LrSchedule s;
    s.power = power;
    EXPECT_NEAR(lr_at(s, 499), lr_at(s, 500), 3e-5 / 500 + 1e-12);
    EXPECT_NEAR(lr_at(s, 501), lr_at(s, 500), 1e-7);
    for (std::int64_t t = 500; t < 3400; ++t) EXPECT_LE(lr_at(s, t + 1), lr_at(s, t));
  }
}

TEST(LrSchedule, RejectsInvalidSettings) {
  LrSchedule s;
  s.end_lr = 1e-3;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.warmup_updates = s.total_updates;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(GradCheck, LinearFunctionIsExact) {
  auto w = Td({4}, {0.5, -1.0, 2.0, 0.25}, true);
  auto x = Td({4}, {1.0, 2.0, -3.0, 4.0});
  ParamList<double> params{{"w", w}};
  EXPECT_LT(grad_check<double>([&] { return sum(mul(w, x)); }, params).max_rel_error, 1e-8);
}

TEST(GradCheck, SoftmaxWithWeightedCrossEntropy) {
  auto logits = Td::matrix({{0.2, -1.3, 0.7}}, true);
  ParamList<double> params{{"logits", logits}};
  auto fn = [&] {
    auto p = softmax_rows(logits);
    return weighted_cross_entropy_sum(mul(p, Td::matrix({{2.0, 1.0, 3.0}})), {2}, {1.0, 1.5, 1.0});
  };
  EXPECT_LT(grad_check<double>(fn, params).max_rel_error, 1e-5);
}

TEST(GradCheck, DetectsNonDeterminism) {
  auto w = Td({1}, {1.0}, true);
  ParamList<double> params{{"w", w}};
  int calls = 0;
  auto fn = [&] { return scale(w, static_cast<double>(++calls)); };
  EXPECT_THROW(grad_check<double>(fn, params), NumericError);
}

TEST(GradCheck, RestoresParameters) {
  Rng rng(2);
  auto a = random_matrix(rng, 2, 2);
  const std::vector<double> before(a.data().begin(), a.data().end());
  ParamList<double> params{{"a", a}};
  grad_check<double>([&] { return sum(mul(a, a)); }, params);
  EXPECT_EQ(before, std::vector<double>(a.data().begin(), a.data().end()));
}

TEST(WeightedCrossEntropy, ClassWeightsScaleLoss) {
  auto uniform = Td::matrix({{0.0, 0.0}});
  const std::vector<double> w{1.0, 1.5};
  EXPECT_NEAR(weighted_cross_entropy_sum(uniform, {1}, w).item(), 1.5 * std::log(2.0), 1e-12);
  EXPECT_NEAR(weighted_cross_entropy_sum(uniform, {0}, w).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(weighted_cross_entropy_sum(Td::matrix({{10.0, -10.0}}), {0}, w).item(), std::log1p(std::exp(-20.0)),
              1e-15);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_THROW(weighted_cross_entropy_sum(Td::matrix({{inf, 0.0}}), {0}, w), NumericError);
}

}  // namespace
}  // namespace mdt
