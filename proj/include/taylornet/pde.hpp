// Latent PDE model: the temporal derivative of a feature map is a learned
// 1x1 linear combination of moment-constrained spatial derivative responses,
//
//   dh/dt = sum_{i,j} c_{i,j} d^{i+j} h / dx^i dy^j
//
// realized as the derivative bank (one k x k filter per (i,j), applied to
// every latent channel) followed by a strictly 1x1 combination. The module
// is linear end to end: no biases anywhere.
#pragma once

#include "taylornet/ops.hpp"

namespace taylornet {

template <typename T>
struct PdeModelParams {
  Tensor<T> bank;  // (k*k, k, k); filter f targets derivative order (f/k, f%k)
  Tensor<T> comb;  // (C, k*k*C, 1, 1) combination weights, no bias

  int k() const { return bank.dim(1); }
  int filters() const { return bank.dim(0); }
  int channels() const { return comb.dim(0); }

  void validate() const {
    if (bank.rank() != 3 || bank.dim(1) != bank.dim(2))
      throw std::invalid_argument("pde bank must be (F, k, k)");
    const int kk = bank.dim(1);
    if (kk % 2 == 0 || kk < 3) throw std::invalid_argument("pde bank k must be odd >= 3");
    if (bank.dim(0) != kk * kk)
      throw std::invalid_argument("pde bank must hold exactly k*k filters");
    if (comb.rank() != 4 || comb.dim(2) != 1 || comb.dim(3) != 1)
      throw std::invalid_argument("pde combination must be 1x1");
    if (comb.dim(1) != bank.dim(0) * comb.dim(0))
      throw std::invalid_argument("pde combination input channels must be k*k * latent channels");
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".bank", bank);
    f(prefix + ".comb", comb);
  }
};

template <typename T>
PdeModelParams<T> init_pde_params(int k, int channels, Rng& rng) {
  PdeModelParams<T> p;
  p.bank = Tensor<T>(Shape{k * k, k, k});
  rng.fill_uniform(p.bank, -0.1, 0.1);
  // small combination weights keep the Taylor extrapolation near persistence
  // at initialization (t^n/n! factors amplify derivative noise otherwise)
  p.comb = Tensor<T>(Shape{channels, k * k * channels, 1, 1});
  rng.fill_uniform(p.comb, -0.01, 0.01);
  return p;
}

template <typename T>
struct PdeVars {
  Var bank = kNoVar;
  Var comb = kNoVar;
};

template <typename T>
PdeVars<T> bind(Tape<T>& tape, const PdeModelParams<T>& p, bool requires_grad = true) {
  p.validate();
  return PdeVars<T>{tape.leaf(p.bank, requires_grad), tape.leaf(p.comb, requires_grad)};
}

// dh/dt estimate; output shape equals input shape.
template <typename T>
Var temporal_derivative(Tape<T>& tp, const PdeVars<T>& pde, Var h) {
  detail::check_feature4(tp.val(h), "temporal_derivative");
  const int C = tp.val(pde.comb).dim(0);
  if (tp.val(h).dim(1) != C)
    throw std::invalid_argument("temporal_derivative: input channels " +
                                std::to_string(tp.val(h).dim(1)) + " do not match pde params " +
                                std::to_string(C));
  Var stack = bank_conv2d(tp, h, pde.bank);
  return conv2d(tp, stack, pde.comb, kNoVar, 1, 0);
}

// [h0, h0', ..., h0^(order-1)]: repeated application of the same PDE model.
template <typename T>
std::vector<Var> taylor_derivatives(Tape<T>& tp, const PdeVars<T>& pde, Var h0, int order) {
  if (order < 1) throw std::invalid_argument("taylor order must be >= 1");
  std::vector<Var> out{h0};
  for (int n = 1; n < order; ++n) out.push_back(temporal_derivative(tp, pde, out.back()));
  return out;
}

}  // namespace taylornet
