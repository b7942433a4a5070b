// Stacked vanilla ConvLSTM for the residual branch.
//
//   i = sigma(W_i * (x, h) + b_i)
//   f = sigma(W_f * (x, h) + b_f)
//   g = tanh (W_g * (x, h) + b_g)
//   o = sigma(W_o * (x, h) + b_o)
//   c' = f . c + i . g
//   h' = o . tanh(c')
//
// One fused 3x3 convolution per layer produces all four gate pre-activations
// (channel order i, f, g, o). The top layer's hidden state is the prediction.
#pragma once

#include "taylornet/ops.hpp"

namespace taylornet {

template <typename T>
struct ConvLstmParams {
  std::vector<Tensor<T>> w;  // per layer: (4C, Cin + C, 3, 3)
  std::vector<Tensor<T>> b;  // per layer: (4C)
  int hidden_channels = 0;

  int layers() const { return static_cast<int>(w.size()); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (size_t l = 0; l < w.size(); ++l) {
      f(prefix + ".l" + std::to_string(l) + ".w", w[l]);
      f(prefix + ".l" + std::to_string(l) + ".b", b[l]);
    }
  }
};

template <typename T>
ConvLstmParams<T> init_conv_lstm(int layers, int in_channels, int hidden_channels, Rng& rng,
                                 double forget_bias = 1.0) {
  ConvLstmParams<T> p;
  p.hidden_channels = hidden_channels;
  for (int l = 0; l < layers; ++l) {
    const int cin = (l == 0 ? in_channels : hidden_channels) + hidden_channels;
    const double lim = std::sqrt(1.0 / (cin * 9));
    Tensor<T> w(Shape{4 * hidden_channels, cin, 3, 3});
    Tensor<T> b(Shape{4 * hidden_channels});
    rng.fill_uniform(w, -lim, lim);
    rng.fill_uniform(b, -lim, lim);
    for (int c = hidden_channels; c < 2 * hidden_channels; ++c)
      b[c] = static_cast<T>(forget_bias);  // forget-gate quarter
    p.w.push_back(std::move(w));
    p.b.push_back(std::move(b));
  }
  return p;
}

template <typename T>
struct ConvLstmVars {
  std::vector<Var> w, b;
  int hidden_channels = 0;
};

template <typename T>
ConvLstmVars<T> bind(Tape<T>& tape, const ConvLstmParams<T>& p, bool requires_grad = true) {
  ConvLstmVars<T> v;
  v.hidden_channels = p.hidden_channels;
  for (size_t l = 0; l < p.w.size(); ++l) {
    v.w.push_back(tape.leaf(p.w[l], requires_grad));
    v.b.push_back(tape.leaf(p.b[l], requires_grad));
  }
  return v;
}

template <typename T>
struct ConvLstmState {
  std::vector<Var> h, c;  // per layer
};

template <typename T>
ConvLstmState<T> init_lstm_state(Tape<T>& tp, const ConvLstmVars<T>& v, int batch, int height,
                                 int width) {
  ConvLstmState<T> s;
  for (size_t l = 0; l < v.w.size(); ++l) {
    s.h.push_back(tp.constant(Tensor<T>(Shape{batch, v.hidden_channels, height, width})));
    s.c.push_back(tp.constant(Tensor<T>(Shape{batch, v.hidden_channels, height, width})));
  }
  return s;
}

// Gate probes of the last executed step, for range tests.
template <typename T>
struct ConvLstmProbe {
  std::vector<Var> i, f, g, o;
};

template <typename T>
Var convlstm_step(Tape<T>& tp, const ConvLstmVars<T>& v, ConvLstmState<T>& state, Var x,
                  ConvLstmProbe<T>* probe = nullptr) {
  if (state.h.size() != v.w.size()) throw std::invalid_argument("convlstm_step: uninitialized state");
  const int C = v.hidden_channels;
  Var layer_in = x;
  for (size_t l = 0; l < v.w.size(); ++l) {
    check_same_shape(tp.val(state.h[l]), tp.val(state.c[l]), "convlstm state");
    Var gates = conv2d(tp, concat_c(tp, layer_in, state.h[l]), v.w[l], v.b[l], 1, 1);
    Var i = sigmoid(tp, slice_c(tp, gates, 0, C));
    Var f = sigmoid(tp, slice_c(tp, gates, C, 2 * C));
    Var g = tanh_op(tp, slice_c(tp, gates, 2 * C, 3 * C));
    Var o = sigmoid(tp, slice_c(tp, gates, 3 * C, 4 * C));
    Var c_new = add(tp, mul(tp, f, state.c[l]), mul(tp, i, g));
    Var h_new = mul(tp, o, tanh_op(tp, c_new));
    state.c[l] = c_new;
    state.h[l] = h_new;
    layer_in = h_new;
    if (probe) {
      probe->i.push_back(i);
      probe->f.push_back(f);
      probe->g.push_back(g);
      probe->o.push_back(o);
    }
  }
  return state.h.back();
}

// Plain-tensor snapshot of a mid-sequence state, for serialization.
template <typename T>
struct ConvLstmSnapshot {
  std::vector<Tensor<T>> h, c;
};

template <typename T>
ConvLstmSnapshot<T> snapshot(const Tape<T>& tp, const ConvLstmState<T>& s) {
  ConvLstmSnapshot<T> out;
  for (Var v : s.h) out.h.push_back(tp.val(v));
  for (Var v : s.c) out.c.push_back(tp.val(v));
  return out;
}

template <typename T>
ConvLstmState<T> restore(Tape<T>& tp, const ConvLstmSnapshot<T>& snap) {
  ConvLstmState<T> s;
  for (const auto& h : snap.h) s.h.push_back(tp.constant(h));
  for (const auto& c : snap.c) s.c.push_back(tp.constant(c));
  return s;
}

}  // namespace taylornet
