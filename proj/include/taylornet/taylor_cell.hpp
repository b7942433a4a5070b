// TaylorCell: recurrent prediction over the Taylor feature branch.
//
// Taylor prediction unit (TPU): expands the FIRST frame's feature into a
// truncated Taylor series and evaluates it at the current frame index,
//
//   h~_t = sum_{n=0}^{xi-1} t^n/n! * h0^(n),    h0^(n) from the PDE model,
//
// so the extrapolation never consumes frames after t = 0.
//
// Memory correction unit (MCU), GRU-style over all past Taylor features:
//
//   z = sigma(Wz * (e_{t-1}, h_{t-1}))         update gate, range (0,1)
//   r = sigma(Wr * (e_{t-1}, h_{t-1}))         reset gate
//   g = tanh(Wg * (r . e_{t-1}, h_{t-1}))      candidate, range (-1,1)
//   e_t = z . g + (1 - z) . h_{t-1}
//
// Correction with a learned 1x1 gain K_t over (h~_t, e_t):
//
//   h^_t = h~_t + K_t . (e_t - h~_t)
//
// computed in the convex form K_t . e_t + (1 - K_t) . h~_t, which is exact
// at both gate extremes. With the MCU disabled, e_t is replaced by the
// current input feature h_{t-1} in the correction.
#pragma once

#include "taylornet/pde.hpp"

namespace taylornet {

template <typename T>
struct TaylorCellParams {
  PdeModelParams<T> pde;
  Tensor<T> wz, bz;  // (C, 2C, 3, 3), (C)
  Tensor<T> wr, br;
  Tensor<T> wg, bg;
  Tensor<T> wk, bk;  // (C, 2C, 1, 1), (C): correction gain
  int order = 3;     // xi
  bool mcu_enabled = true;

  int channels() const { return pde.channels(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    pde.visit(prefix + ".pde", f);
    f(prefix + ".wz", wz);
    f(prefix + ".bz", bz);
    f(prefix + ".wr", wr);
    f(prefix + ".br", br);
    f(prefix + ".wg", wg);
    f(prefix + ".bg", bg);
    f(prefix + ".wk", wk);
    f(prefix + ".bk", bk);
  }
};

template <typename T>
TaylorCellParams<T> init_taylor_cell(int bank_k, int channels, int order, Rng& rng) {
  TaylorCellParams<T> p;
  p.pde = init_pde_params<T>(bank_k, channels, rng);
  p.order = order;
  const double lim3 = std::sqrt(1.0 / (2.0 * channels * 9));
  const double lim1 = std::sqrt(1.0 / (2.0 * channels));
  auto conv3 = [&](Tensor<T>& w, Tensor<T>& b) {
    w = Tensor<T>(Shape{channels, 2 * channels, 3, 3});
    b = Tensor<T>(Shape{channels});
    rng.fill_uniform(w, -lim3, lim3);
    rng.fill_uniform(b, -lim3, lim3);
  };
  conv3(p.wz, p.bz);
  conv3(p.wr, p.br);
  conv3(p.wg, p.bg);
  p.wk = Tensor<T>(Shape{channels, 2 * channels, 1, 1});
  p.bk = Tensor<T>(Shape{channels});
  rng.fill_uniform(p.wk, -lim1, lim1);
  rng.fill_uniform(p.bk, -lim1, lim1);
  return p;
}

template <typename T>
struct TaylorCellVars {
  PdeVars<T> pde;
  Var wz, bz, wr, br, wg, bg, wk, bk;
  int order = 3;
  bool mcu_enabled = true;
};

template <typename T>
TaylorCellVars<T> bind(Tape<T>& tape, const TaylorCellParams<T>& p, bool requires_grad = true) {
  TaylorCellVars<T> v;
  v.pde = bind(tape, p.pde, requires_grad);
  v.wz = tape.leaf(p.wz, requires_grad);
  v.bz = tape.leaf(p.bz, requires_grad);
  v.wr = tape.leaf(p.wr, requires_grad);
  v.br = tape.leaf(p.br, requires_grad);
  v.wg = tape.leaf(p.wg, requires_grad);
  v.bg = tape.leaf(p.bg, requires_grad);
  v.wk = tape.leaf(p.wk, requires_grad);
  v.bk = tape.leaf(p.bk, requires_grad);
  v.order = p.order;
  v.mcu_enabled = p.mcu_enabled;
  return v;
}

// Sequence-local state. Owned by exactly one sequence; create a fresh state
// (or call reset) before processing another sequence.
template <typename T>
struct TaylorCellState {
  std::vector<Var> derivatives;  // cached taylor_derivatives of h0, set once
  Var mcu_hidden = kNoVar;       // e_t
  int step = 0;                  // index of the frame being predicted
  const void* owner = nullptr;   // tape identity guard

  void reset() {
    derivatives.clear();
    mcu_hidden = kNoVar;
    step = 0;
    owner = nullptr;
  }
};

// h~_t from the cached first-frame derivatives and t = state.step.
template <typename T>
Var tpu_predict(Tape<T>& tp, const TaylorCellState<T>& state) {
  if (state.derivatives.empty()) throw std::logic_error("tpu_predict: derivatives not cached");
  Var acc = state.derivatives[0];
  T coef = T(1);
  for (size_t n = 1; n < state.derivatives.size(); ++n) {
    coef *= static_cast<T>(state.step) / static_cast<T>(n);  // t^n / n!
    if (coef == T(0)) continue;
    acc = add_scaled(tp, acc, state.derivatives[n], coef);
  }
  return acc;
}

template <typename T>
struct McuOut {
  Var e, z, r, g;
};

// One gated-memory update from (e_{t-1}, h_{t-1}).
template <typename T>
McuOut<T> mcu_update(Tape<T>& tp, const TaylorCellVars<T>& v, Var e_prev, Var h_prev) {
  check_same_shape(tp.val(e_prev), tp.val(h_prev), "mcu_update");
  Var zr_in = concat_c(tp, e_prev, h_prev);
  Var z = sigmoid(tp, conv2d(tp, zr_in, v.wz, v.bz, 1, 1));
  Var r = sigmoid(tp, conv2d(tp, zr_in, v.wr, v.br, 1, 1));
  Var gated = mul(tp, r, e_prev);
  Var g = tanh_op(tp, conv2d(tp, concat_c(tp, gated, h_prev), v.wg, v.bg, 1, 1));
  Var e = convex_mix(tp, z, g, h_prev);  // z.g + (1-z).h
  return {e, z, r, g};
}

template <typename T>
struct CorrectOut {
  Var h_hat, gain;
};

// Gain-gated correction of the Taylor inferred feature.
template <typename T>
CorrectOut<T> correct(Tape<T>& tp, const TaylorCellVars<T>& v, Var h_tilde, Var e_t) {
  check_same_shape(tp.val(h_tilde), tp.val(e_t), "correct");
  Var gain = sigmoid(tp, conv2d(tp, concat_c(tp, h_tilde, e_t), v.wk, v.bk, 1, 0));
  Var h_hat = convex_mix(tp, gain, e_t, h_tilde);  // h~ + K.(e - h~)
  return {h_hat, gain};
}

template <typename T>
struct CellStepOut {
  Var h_hat = kNoVar;
  Var h_tilde = kNoVar;  // TPU extrapolation (probe)
  Var gain = kNoVar;     // K_t (probe)
  McuOut<T> mcu{kNoVar, kNoVar, kNoVar, kNoVar};
};

// One full cell invocation. On the first call of a sequence the first-frame
// derivatives are cached and e_0 is set to the input feature.
template <typename T>
CellStepOut<T> taylor_cell_step(Tape<T>& tp, const TaylorCellVars<T>& v,
                                TaylorCellState<T>& state, Var h_input) {
  if (state.owner == nullptr) {
    if (!state.derivatives.empty() || state.step != 0)
      throw std::logic_error("taylor_cell_step: state was not reset between sequences");
    state.owner = &tp;
    state.derivatives = taylor_derivatives(tp, v.pde, h_input, v.order);
    state.mcu_hidden = h_input;  // e_0
  } else if (state.owner != &tp) {
    throw std::logic_error("taylor_cell_step: state belongs to a different sequence/tape");
  }

  state.step += 1;
  CellStepOut<T> out;
  if (v.mcu_enabled) {
    out.mcu = mcu_update(tp, v, state.mcu_hidden, h_input);
    state.mcu_hidden = out.mcu.e;
  }
  out.h_tilde = tpu_predict(tp, state);
  Var corrector = v.mcu_enabled ? state.mcu_hidden : h_input;
  auto corr = correct(tp, v, out.h_tilde, corrector);
  out.h_hat = corr.h_hat;
  out.gain = corr.gain;
  return out;
}

}  // namespace taylornet
