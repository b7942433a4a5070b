// Moment-matrix machinery for derivative-approximating convolution filters.
//
// For a k x k filter w (k odd) with centered integer coordinates
// u, v in [-(k-1)/2, (k-1)/2], the moment matrix is
//
//   M(w)[i, j] = 1/(i! j!) * sum_{u,v} u^i v^j w[u, v],   i, j = 0..k-1
//
// with 0^0 = 1. Driving M(w) toward the indicator delta_{i,j} makes
// cross-correlation with w approximate the (i,j)-th spatial partial
// derivative of a smooth field sampled on a unit grid. The x index runs
// along rows (first spatial axis), y along columns.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "taylornet/random.hpp"
#include "taylornet/tensor.hpp"

namespace taylornet {

struct DerivativeOrder {
  int dx = 0;  // order along x (rows)
  int dy = 0;  // order along y (columns)
};

template <typename T>
struct SpatialFilter {
  Tensor<T> weights;  // (k, k), row index = u + (k-1)/2
  DerivativeOrder target_order;

  int k() const { return weights.rank() == 2 ? weights.dim(0) : 0; }
};

template <typename T>
struct MomentMatrix {
  Tensor<T> entries;  // (k, k) indexed by (i, j)
};

template <typename T>
struct DeltaTarget {
  Tensor<T> entries;  // (k, k), 1 at one_position, 0 elsewhere
  DerivativeOrder one_position;
};

namespace detail {

template <typename T>
void check_filter_grid(const Tensor<T>& w) {
  if (w.rank() != 2 || w.dim(0) != w.dim(1))
    throw std::invalid_argument("filter must be a square k x k grid, got " + shape_str(w.shape()));
  int k = w.dim(0);
  if (k < 3 || k % 2 == 0)
    throw std::invalid_argument("filter size k must be odd and >= 3, got " + std::to_string(k));
}

// ipow with the 0^0 = 1 convention used by the moment sum.
template <typename S>
S ipow(int base, int e) {
  S r = S(1);
  for (int i = 0; i < e; ++i) r *= S(base);
  return r;
}

template <typename S>
S factorial(int n) {
  S r = S(1);
  for (int i = 2; i <= n; ++i) r *= S(i);
  return r;
}

// Coefficient of w[u+r, v+r] in M[i, j]: u^i v^j / (i! j!).
template <typename S>
S moment_coeff(int i, int j, int u, int v) {
  return ipow<S>(u, i) * ipow<S>(v, j) / (factorial<S>(i) * factorial<S>(j));
}

}  // namespace detail

template <typename T>
MomentMatrix<T> compute_moment_matrix(const SpatialFilter<T>& filter) {
  detail::check_filter_grid(filter.weights);
  const int k = filter.k();
  const int r = (k - 1) / 2;
  MomentMatrix<T> m{Tensor<T>(Shape{k, k})};
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      T acc = T(0);
      for (int u = -r; u <= r; ++u)
        for (int v = -r; v <= r; ++v)
          acc += detail::moment_coeff<T>(i, j, u, v) * filter.weights.at(u + r, v + r);
      m.entries.at(i, j) = acc;
    }
  }
  return m;
}

template <typename T>
DeltaTarget<T> make_delta_target(int i, int j, int k) {
  if (k < 3 || k % 2 == 0)
    throw std::invalid_argument("delta target size k must be odd and >= 3");
  if (i < 0 || j < 0 || i > k - 1 || j > k - 1)
    throw std::out_of_range("delta target position (" + std::to_string(i) + "," +
                            std::to_string(j) + ") exceeds k-1 = " + std::to_string(k - 1));
  DeltaTarget<T> d{Tensor<T>(Shape{k, k}), DerivativeOrder{i, j}};
  d.entries.at(i, j) = T(1);
  return d;
}

// Squared L2 norm of (M(w) - Delta_target), summed over filters.
template <typename T>
T moment_loss(const std::vector<SpatialFilter<T>>& filters) {
  T total = T(0);
  for (const auto& f : filters) {
    auto m = compute_moment_matrix(f);
    auto d = make_delta_target<T>(f.target_order.dx, f.target_order.dy, f.k());
    for (int64_t i = 0; i < m.entries.size(); ++i) {
      T diff = m.entries[i] - d.entries[i];
      total += diff * diff;
    }
  }
  return total;
}

// Gradient of the single-filter moment loss with respect to the filter
// weights: 2 * sum_{i,j} (M[i,j] - delta[i,j]) * coeff(i,j,u,v).
template <typename T>
Tensor<T> moment_loss_grad(const SpatialFilter<T>& filter) {
  detail::check_filter_grid(filter.weights);
  const int k = filter.k();
  const int r = (k - 1) / 2;
  auto m = compute_moment_matrix(filter);
  auto d = make_delta_target<T>(filter.target_order.dx, filter.target_order.dy, k);
  Tensor<T> g(Shape{k, k});
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      T res = T(2) * (m.entries.at(i, j) - d.entries.at(i, j));
      if (res == T(0)) continue;
      for (int u = -r; u <= r; ++u)
        for (int v = -r; v <= r; ++v)
          g.at(u + r, v + r) += res * detail::moment_coeff<T>(i, j, u, v);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Verification oracle: worst-case derivative error of a filter on an
// analytic field.  The conv result divided by spacing^(dx+dy) is compared
// with the exact partial derivative on interior grid points.  Test-side
// utility, not part of the model path.

struct AnalyticField {
  std::function<double(double, double)> value;       // f(x, y)
  std::function<double(double, double)> derivative;  // exact d^{i+j} f / dx^i dy^j
};

template <typename T>
double derivative_error(const SpatialFilter<T>& filter, const AnalyticField& field, int grid_n,
                        double grid_spacing) {
  detail::check_filter_grid(filter.weights);
  if (grid_spacing <= 0) throw std::invalid_argument("grid_spacing must be positive");
  const int k = filter.k();
  const int r = (k - 1) / 2;
  if (grid_n < k) throw std::invalid_argument("field grid smaller than filter");

  Tensor<double> f(Shape{grid_n, grid_n});
  for (int x = 0; x < grid_n; ++x)
    for (int y = 0; y < grid_n; ++y) f.at(x, y) = field.value(x * grid_spacing, y * grid_spacing);

  const double scale = std::pow(grid_spacing, filter.target_order.dx + filter.target_order.dy);
  double worst = 0.0;
  for (int x = r; x < grid_n - r; ++x) {
    for (int y = r; y < grid_n - r; ++y) {
      double acc = 0.0;
      for (int u = -r; u <= r; ++u)
        for (int v = -r; v <= r; ++v)
          acc += static_cast<double>(filter.weights.at(u + r, v + r)) * f.at(x + u, y + v);
      double exact = field.derivative(x * grid_spacing, y * grid_spacing);
      worst = std::max(worst, std::abs(acc / scale - exact));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Gradient-only bank training.
//
// The per-filter moment loss is an ill-conditioned quadratic: the Hessian is
// 2 A^T A for the Kronecker-structured moment map A, whose condition number
// for k = 7 is ~9e4 (so ~7e9 for the Hessian). Fixed-step descent and Adam
// stall far above 1e-6, and double-precision conjugate directions lose
// conjugacy. Linear CG over a 49-dim quadratic terminates in <= 49 exact
// steps, so the trainer runs CG in extended precision, using only gradient
// evaluations of the moment loss (Hessian-products via H p = g(p) - g(0)).

#if defined(__SIZEOF_FLOAT128__)
using CgScalar = __float128;
#else
using CgScalar = long double;
#endif

struct BankTrainResult {
  int steps_used = 0;
  double final_loss = 0.0;
  std::vector<double> loss_curve;  // total loss after each bank step
};

// Trains every filter toward its delta target simultaneously; one "step"
// applies one CG update to each filter. Stops early once the total loss
// falls below `tol` (pass 0 to always use max_steps).
template <typename T>
BankTrainResult train_bank_to_targets(std::vector<SpatialFilter<T>>& filters, int max_steps,
                                      double tol, int restart_every = 64) {
  using S = CgScalar;
  const size_t nf = filters.size();
  if (nf == 0) return {};
  const int k = filters[0].k();
  const int64_t n = int64_t(k) * k;

  auto grad_of = [&](const Tensor<S>& w, size_t f) {
    SpatialFilter<S> tmp{w, filters[f].target_order};
    return moment_loss_grad(tmp);
  };

  std::vector<Tensor<S>> w(nf), resid(nf), dir(nf), g0(nf);
  std::vector<S> rs(nf);
  Tensor<S> zero(Shape{k, k});
  for (size_t f = 0; f < nf; ++f) {
    detail::check_filter_grid(filters[f].weights);
    w[f] = filters[f].weights.template cast<S>();
    g0[f] = grad_of(zero, f);
  }

  auto restart = [&](size_t f) {
    auto g = grad_of(w[f], f);
    resid[f] = Tensor<S>(Shape{k, k});
    for (int64_t i = 0; i < n; ++i) resid[f][i] = -g[i];
    dir[f] = resid[f];
    S acc = S(0);
    for (int64_t i = 0; i < n; ++i) acc += resid[f][i] * resid[f][i];
    rs[f] = acc;
  };
  for (size_t f = 0; f < nf; ++f) restart(f);

  BankTrainResult result;
  for (int step = 0; step < max_steps; ++step) {
    for (size_t f = 0; f < nf; ++f) {
      if (rs[f] <= S(0)) continue;
      auto hd = grad_of(dir[f], f);
      for (int64_t i = 0; i < n; ++i) hd[i] -= g0[f][i];  // H d = g(d) - g(0)
      S dhd = S(0);
      for (int64_t i = 0; i < n; ++i) dhd += dir[f][i] * hd[i];
      if (dhd <= S(0)) continue;
      S alpha = rs[f] / dhd;
      for (int64_t i = 0; i < n; ++i) {
        w[f][i] += alpha * dir[f][i];
        resid[f][i] -= alpha * hd[i];
      }
      S rs_new = S(0);
      for (int64_t i = 0; i < n; ++i) rs_new += resid[f][i] * resid[f][i];
      if (rs[f] > S(0)) {
        S beta = rs_new / rs[f];
        for (int64_t i = 0; i < n; ++i) dir[f][i] = resid[f][i] + beta * dir[f][i];
      }
      rs[f] = rs_new;
    }
    result.steps_used = step + 1;
    if ((step + 1) % restart_every == 0)
      for (size_t f = 0; f < nf; ++f) restart(f);

    double total = 0.0;
    for (size_t f = 0; f < nf; ++f) {
      SpatialFilter<S> tmp{w[f], filters[f].target_order};
      total += static_cast<double>(moment_loss(std::vector<SpatialFilter<S>>{tmp}));
    }
    result.loss_curve.push_back(total);
    result.final_loss = total;
    if (tol > 0 && total < tol) break;
  }

  for (size_t f = 0; f < nf; ++f)
    for (int64_t i = 0; i < n; ++i) filters[f].weights[i] = static_cast<T>(w[f][i]);
  return result;
}

// The full derivative bank: one filter per (i, j) in [0, k-1]^2, flat index
// i * k + j. This ordering is shared with the PDE model's channel stacking.
template <typename T>
std::vector<SpatialFilter<T>> make_filter_bank(int k, Rng& rng, double init_lo = -0.1,
                                               double init_hi = 0.1) {
  std::vector<SpatialFilter<T>> bank;
  bank.reserve(static_cast<size_t>(k) * k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      SpatialFilter<T> f{Tensor<T>(Shape{k, k}), DerivativeOrder{i, j}};
      rng.fill_uniform(f.weights, init_lo, init_hi);
      bank.push_back(std::move(f));
    }
  }
  return bank;
}

}  // namespace taylornet
