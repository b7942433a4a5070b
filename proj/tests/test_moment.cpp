#include <gtest/gtest.h>

#include <cmath>

#include "taylornet/moment.hpp"
#include "taylornet/random.hpp"

using namespace taylornet;

namespace {

// Independent oracle: direct summation of the moment definition, with the
// power computed by repeated multiplication (empty product gives 0^0 = 1).
double oracle_moment(const Tensor<double>& w, int i, int j) {
  const int k = w.dim(0), r = (k - 1) / 2;
  double ifact = 1.0, jfact = 1.0;
  for (int t = 2; t <= i; ++t) ifact *= t;
  for (int t = 2; t <= j; ++t) jfact *= t;
  double s = 0.0;
  for (int u = -r; u <= r; ++u) {
    for (int v = -r; v <= r; ++v) {
      double term = w.at(u + r, v + r);
      for (int t = 0; t < i; ++t) term *= u;
      for (int t = 0; t < j; ++t) term *= v;
      s += term;
    }
  }
  return s / (ifact * jfact);
}

SpatialFilter<double> central_diff_x() {
  // w[u=1, v=0] = 0.5, w[u=-1, v=0] = -0.5 on a 3x3 grid, target (1,0)
  SpatialFilter<double> f{Tensor<double>(Shape{3, 3}), DerivativeOrder{1, 0}};
  f.weights.at(2, 1) = 0.5;
  f.weights.at(0, 1) = -0.5;
  return f;
}

}  // namespace

TEST(MomentMatrix, CentralDifferenceFilter) {
  auto f = central_diff_x();
  auto m = compute_moment_matrix(f);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      EXPECT_DOUBLE_EQ(m.entries.at(i, j), oracle_moment(f.weights, i, j)) << i << "," << j;
  EXPECT_DOUBLE_EQ(m.entries.at(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(m.entries.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(m.entries.at(2, 0), 0.0);
  EXPECT_DOUBLE_EQ(m.entries.at(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(m.entries.at(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(m.entries.at(1, 1), 0.0);
}

TEST(MomentMatrix, ZeroFilter) {
  SpatialFilter<double> f{Tensor<double>(Shape{3, 3}), DerivativeOrder{0, 0}};
  auto m = compute_moment_matrix(f);
  for (int64_t i = 0; i < m.entries.size(); ++i) EXPECT_EQ(m.entries[i], 0.0);
}

TEST(MomentMatrix, CenteredImpulseFixesZeroPowerConvention) {
  // w[u=0, v=0] = 1: M(0,0) = 1 requires 0^0 = 1; all other entries vanish.
  SpatialFilter<double> f{Tensor<double>(Shape{3, 3}), DerivativeOrder{0, 0}};
  f.weights.at(1, 1) = 1.0;
  auto m = compute_moment_matrix(f);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(m.entries.at(i, j), oracle_moment(f.weights, i, j));
      EXPECT_DOUBLE_EQ(m.entries.at(i, j), (i == 0 && j == 0) ? 1.0 : 0.0);
    }
}

TEST(MomentMatrix, RejectsEvenOrEmptyFilter) {
  SpatialFilter<double> even{Tensor<double>(Shape{4, 4}), {}};
  EXPECT_THROW(compute_moment_matrix(even), std::invalid_argument);
  SpatialFilter<double> empty{Tensor<double>{}, {}};
  EXPECT_THROW(compute_moment_matrix(empty), std::invalid_argument);
}

TEST(MomentMatrix, LinearityExact) {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = trial % 2 ? 3 : 7;
    Tensor<double> w1(Shape{k, k}), w2(Shape{k, k});
    rng.fill_uniform(w1, -1, 1);
    rng.fill_uniform(w2, -1, 1);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    Tensor<double> mix(Shape{k, k});
    for (int64_t i = 0; i < mix.size(); ++i) mix[i] = a * w1[i] + b * w2[i];
    auto m1 = compute_moment_matrix(SpatialFilter<double>{w1, {}});
    auto m2 = compute_moment_matrix(SpatialFilter<double>{w2, {}});
    auto mm = compute_moment_matrix(SpatialFilter<double>{mix, {}});
    for (int64_t i = 0; i < mm.entries.size(); ++i)
      EXPECT_NEAR(mm.entries[i], a * m1.entries[i] + b * m2.entries[i], 1e-12);
  }
}

TEST(DeltaTarget, Basic) {
  auto d = make_delta_target<double>(1, 0, 3);
  EXPECT_EQ(d.entries.shape(), (Shape{3, 3}));
  EXPECT_EQ(d.entries.at(1, 0), 1.0);
  double sum = 0;
  for (int64_t i = 0; i < d.entries.size(); ++i) sum += d.entries[i];
  EXPECT_EQ(sum, 1.0);

  auto d7 = make_delta_target<double>(0, 0, 7);
  EXPECT_EQ(d7.entries.at(0, 0), 1.0);
  EXPECT_EQ(d7.entries.size(), 49);

  EXPECT_THROW(make_delta_target<double>(7, 0, 7), std::out_of_range);
}

TEST(MomentLoss, ExactMatchIsZero) {
  auto f = central_diff_x();
  EXPECT_DOUBLE_EQ(moment_loss(std::vector<SpatialFilter<double>>{f}), 0.0);
  // oracle confirms every one of the 9 entries already equals the target
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      EXPECT_DOUBLE_EQ(oracle_moment(f.weights, i, j), (i == 1 && j == 0) ? 1.0 : 0.0);
}

TEST(MomentLoss, ZeroFilterAgainstOriginTarget) {
  SpatialFilter<double> f{Tensor<double>(Shape{3, 3}), DerivativeOrder{0, 0}};
  EXPECT_DOUBLE_EQ(moment_loss(std::vector<SpatialFilter<double>>{f}), 1.0);
}

TEST(MomentLoss, NonNegativeAndZeroIffMatched) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    SpatialFilter<double> f{Tensor<double>(Shape{3, 3}), DerivativeOrder{trial % 3, (trial / 3) % 3}};
    rng.fill_uniform(f.weights, -1, 1);
    double loss = moment_loss(std::vector<SpatialFilter<double>>{f});
    EXPECT_GE(loss, 0.0);
    bool matched = true;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double want = (i == f.target_order.dx && j == f.target_order.dy) ? 1.0 : 0.0;
        if (oracle_moment(f.weights, i, j) != want) matched = false;
      }
    EXPECT_EQ(loss == 0.0, matched);
  }
  // constructed matched case: loss must be exactly zero
  EXPECT_EQ(moment_loss(std::vector<SpatialFilter<double>>{central_diff_x()}), 0.0);
}

TEST(MomentLoss, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int k : {3, 7}) {
    SpatialFilter<double> f{Tensor<double>(Shape{k, k}), DerivativeOrder{1, 0}};
    rng.fill_uniform(f.weights, -0.5, 0.5);
    auto g = moment_loss_grad(f);
    double max_rel = 0.0;
    for (int64_t i = 0; i < f.weights.size(); ++i) {
      const double h = 1e-4 * std::max(1.0, std::abs(f.weights[i]));
      const double orig = f.weights[i];
      f.weights[i] = orig + h;
      double lp = moment_loss(std::vector<SpatialFilter<double>>{f});
      f.weights[i] = orig - h;
      double lm = moment_loss(std::vector<SpatialFilter<double>>{f});
      f.weights[i] = orig;
      double num = (lp - lm) / (2 * h);
      max_rel = std::max(max_rel, std::abs(num - g[i]) / std::max(1e-6, std::abs(num) + std::abs(g[i])));
    }
    EXPECT_LT(max_rel, 1e-5) << "k=" << k;
  }
}

TEST(DerivativeError, CentralDiffExactOnLinearField) {
  auto f = central_diff_x();
  AnalyticField field{[](double x, double) { return x; }, [](double, double) { return 1.0; }};
  for (double h : {1.0, 0.37})
    EXPECT_LT(derivative_error(f, field, 16, h), 1e-12);
}

TEST(DerivativeError, SecondOrderConvergenceOnSine) {
  auto f = central_diff_x();
  AnalyticField field{[](double x, double) { return std::sin(x); },
                      [](double x, double) { return std::cos(x); }};
  double e1 = derivative_error(f, field, 32, 0.1);
  double e2 = derivative_error(f, field, 32, 0.05);
  EXPECT_LT(e1, 0.1 * 0.1);  // C h^2 with C <= 1 for sin
  EXPECT_NEAR(e1 / e2, 4.0, 0.35);
}

TEST(DerivativeError, ZeroFilterReportsExactDerivativeMagnitude) {
  SpatialFilter<double> f{Tensor<double>(Shape{3, 3}), DerivativeOrder{1, 0}};
  AnalyticField field{[](double x, double) { return std::sin(x); },
                      [](double x, double) { return std::cos(x); }};
  double err = derivative_error(f, field, 16, 0.3);
  double maxd = 0;
  for (int x = 1; x < 15; ++x) maxd = std::max(maxd, std::abs(std::cos(x * 0.3)));
  EXPECT_DOUBLE_EQ(err, maxd);
}

TEST(DerivativeError, RejectsBadInputs) {
  auto f = central_diff_x();
  AnalyticField field{[](double, double) { return 0.0; }, [](double, double) { return 0.0; }};
  EXPECT_THROW(derivative_error(f, field, 2, 1.0), std::invalid_argument);
  EXPECT_THROW(derivative_error(f, field, 16, 0.0), std::invalid_argument);
}

TEST(BankTraining, SmallBankReachesTinyLoss) {
  Rng rng(5);
  auto bank = make_filter_bank<double>(3, rng);
  auto res = train_bank_to_targets(bank, 200, 1e-12);
  EXPECT_LT(res.final_loss, 1e-12);
  // loss re-measured in double after the cast back stays tiny
  EXPECT_LT(moment_loss(bank), 1e-10);
}

TEST(BankTraining, FullBankConvergesAndTrainedFilterDifferentiates) {
  Rng rng(9);
  auto bank = make_filter_bank<double>(7, rng);
  auto res = train_bank_to_targets(bank, 500, 1e-16);
  EXPECT_LT(res.final_loss, 1e-16);
  EXPECT_LT(moment_loss(bank), 1e-12);
  EXPECT_LE(res.steps_used, 200);  // CG terminates near the 49-step bound

  // trained (1,0) filter approximates d/dx; halving the spacing must shrink
  // the error at least linearly (spec convergence-order property)
  SpatialFilter<double> fx{bank[1 * 7 + 0].weights, DerivativeOrder{1, 0}};
  AnalyticField field{[](double x, double y) { return std::sin(0.3 * x + 0.2 * y); },
                      [](double x, double y) { return 0.3 * std::cos(0.3 * x + 0.2 * y); }};
  double e1 = derivative_error(fx, field, 32, 1.0);
  double e2 = derivative_error(fx, field, 32, 0.5);
  double e3 = derivative_error(fx, field, 32, 0.25);
  EXPECT_LT(e1, 2e-2);
  EXPECT_GE(e1 / e2, 2.0);
  EXPECT_GE(e2 / e3, 2.0);
}
