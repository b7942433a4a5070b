// Differentiable operations over the tape. Convolutions follow the usual
// deep-learning cross-correlation convention; all loops are sequential with
// a fixed iteration order, so results are bit-reproducible run to run.
#pragma once

#include <array>
#include <cmath>

#include "taylornet/moment.hpp"
#include "taylornet/tape.hpp"
#include "taylornet/tensor.hpp"

namespace taylornet {

namespace kernels {

inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// out[b,co,oh,ow] = bias[co] + sum_{ci,kh,kw} x[b,ci,oh*s-p+kh,ow*s-p+kw] w[co,ci,kh,kw]
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int s, int p,
                    Tensor<T>& out) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int OH = out.dim(2), OW = out.dim(3);
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      T* oplane = &out.at(b, co, 0, 0);
      const T bv = bias ? (*bias)[co] : T(0);
      for (int64_t i = 0; i < int64_t(OH) * OW; ++i) oplane[i] = bv;
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xplane = &x.at(b, ci, 0, 0);
        for (int dh = 0; dh < kh; ++dh) {
          for (int dw = 0; dw < kw; ++dw) {
            const T wv = w.at(co, ci, dh, dw);
            if (wv == T(0)) continue;
            const int ow_lo = std::max(0, ceil_div(p - dw, s));
            const int ow_hi = std::min(OW, floor_div(W - 1 + p - dw, s) + 1);
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * s - p + dh;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xplane + int64_t(ih) * W - p + dw;
              T* orow = oplane + int64_t(oh) * OW;
              if (s == 1) {
                for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow];
              } else {
                for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[int64_t(ow) * s];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_x(const Tensor<T>& gout, const Tensor<T>& w, int s, int p, Tensor<T>& gx) {
  const int B = gx.dim(0), Ci = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int OH = gout.dim(2), OW = gout.dim(3);
  for (int b = 0; b < B; ++b) {
    for (int ci = 0; ci < Ci; ++ci) {
      T* gxplane = &gx.at(b, ci, 0, 0);
      for (int co = 0; co < Co; ++co) {
        const T* gplane = &gout.at(b, co, 0, 0);
        for (int dh = 0; dh < kh; ++dh) {
          for (int dw = 0; dw < kw; ++dw) {
            const T wv = w.at(co, ci, dh, dw);
            if (wv == T(0)) continue;
            const int ow_lo = std::max(0, ceil_div(p - dw, s));
            const int ow_hi = std::min(OW, floor_div(W - 1 + p - dw, s) + 1);
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * s - p + dh;
              if (ih < 0 || ih >= H) continue;
              T* gxrow = gxplane + int64_t(ih) * W - p + dw;
              const T* grow = gplane + int64_t(oh) * OW;
              if (s == 1) {
                for (int ow = ow_lo; ow < ow_hi; ++ow) gxrow[ow] += wv * grow[ow];
              } else {
                for (int ow = ow_lo; ow < ow_hi; ++ow) gxrow[int64_t(ow) * s] += wv * grow[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_w(const Tensor<T>& gout, const Tensor<T>& x, int s, int p, Tensor<T>& gw) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = gw.dim(0), kh = gw.dim(2), kw = gw.dim(3);
  const int OH = gout.dim(2), OW = gout.dim(3);
  for (int co = 0; co < Co; ++co) {
    for (int ci = 0; ci < Ci; ++ci) {
      for (int dh = 0; dh < kh; ++dh) {
        for (int dw = 0; dw < kw; ++dw) {
          const int ow_lo = std::max(0, ceil_div(p - dw, s));
          const int ow_hi = std::min(OW, floor_div(W - 1 + p - dw, s) + 1);
          T acc = T(0);
          for (int b = 0; b < B; ++b) {
            const T* xplane = &x.at(b, ci, 0, 0);
            const T* gplane = &gout.at(b, co, 0, 0);
            for (int oh = 0; oh < OH; ++oh) {
              const int ih = oh * s - p + dh;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xplane + int64_t(ih) * W - p + dw;
              const T* grow = gplane + int64_t(oh) * OW;
              if (s == 1) {
                for (int ow = ow_lo; ow < ow_hi; ++ow) acc += xrow[ow] * grow[ow];
              } else {
                for (int ow = ow_lo; ow < ow_hi; ++ow) acc += xrow[int64_t(ow) * s] * grow[ow];
              }
            }
          }
          gw.at(co, ci, dh, dw) += acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_b(const Tensor<T>& gout, Tensor<T>& gb) {
  const int B = gout.dim(0), Co = gout.dim(1);
  const int64_t plane = int64_t(gout.dim(2)) * gout.dim(3);
  for (int co = 0; co < Co; ++co) {
    T acc = T(0);
    for (int b = 0; b < B; ++b) {
      const T* g = &gout.at(b, co, 0, 0);
      for (int64_t i = 0; i < plane; ++i) acc += g[i];
    }
    gb[co] += acc;
  }
}

// Transposed convolution, weights (Ci, Co, kh, kw): out dim (in-1)*s - 2p + k.
template <typename T>
void convt2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int s, int p,
                     Tensor<T>& out) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int OH = out.dim(2), OW = out.dim(3);
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      T* oplane = &out.at(b, co, 0, 0);
      const T bv = bias ? (*bias)[co] : T(0);
      for (int64_t i = 0; i < int64_t(OH) * OW; ++i) oplane[i] = bv;
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xplane = &x.at(b, ci, 0, 0);
        for (int dh = 0; dh < kh; ++dh) {
          for (int dw = 0; dw < kw; ++dw) {
            const T wv = w.at(ci, co, dh, dw);
            if (wv == T(0)) continue;
            const int iw_lo = std::max(0, ceil_div(p - dw, s));
            const int iw_hi = std::min(W, floor_div(OW - 1 + p - dw, s) + 1);
            for (int ih = 0; ih < H; ++ih) {
              const int oh = ih * s - p + dh;
              if (oh < 0 || oh >= OH) continue;
              const T* xrow = xplane + int64_t(ih) * W;
              T* orow = oplane + int64_t(oh) * OW - p + dw;
              for (int iw = iw_lo; iw < iw_hi; ++iw) orow[int64_t(iw) * s] += wv * xrow[iw];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void convt2d_backward_x(const Tensor<T>& gout, const Tensor<T>& w, int s, int p, Tensor<T>& gx) {
  const int B = gx.dim(0), Ci = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const int Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int OH = gout.dim(2), OW = gout.dim(3);
  for (int b = 0; b < B; ++b) {
    for (int ci = 0; ci < Ci; ++ci) {
      T* gxplane = &gx.at(b, ci, 0, 0);
      for (int co = 0; co < Co; ++co) {
        const T* gplane = &gout.at(b, co, 0, 0);
        for (int dh = 0; dh < kh; ++dh) {
          for (int dw = 0; dw < kw; ++dw) {
            const T wv = w.at(ci, co, dh, dw);
            if (wv == T(0)) continue;
            const int iw_lo = std::max(0, ceil_div(p - dw, s));
            const int iw_hi = std::min(W, floor_div(OW - 1 + p - dw, s) + 1);
            for (int ih = 0; ih < H; ++ih) {
              const int oh = ih * s - p + dh;
              if (oh < 0 || oh >= OH) continue;
              T* gxrow = gxplane + int64_t(ih) * W;
              const T* grow = gplane + int64_t(oh) * OW - p + dw;
              for (int iw = iw_lo; iw < iw_hi; ++iw) gxrow[iw] += wv * grow[int64_t(iw) * s];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void convt2d_backward_w(const Tensor<T>& gout, const Tensor<T>& x, int s, int p, Tensor<T>& gw) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = gw.dim(1), kh = gw.dim(2), kw = gw.dim(3);
  const int OH = gout.dim(2), OW = gout.dim(3);
  for (int ci = 0; ci < Ci; ++ci) {
    for (int co = 0; co < Co; ++co) {
      for (int dh = 0; dh < kh; ++dh) {
        for (int dw = 0; dw < kw; ++dw) {
          const int iw_lo = std::max(0, ceil_div(p - dw, s));
          const int iw_hi = std::min(W, floor_div(OW - 1 + p - dw, s) + 1);
          T acc = T(0);
          for (int b = 0; b < B; ++b) {
            const T* xplane = &x.at(b, ci, 0, 0);
            const T* gplane = &gout.at(b, co, 0, 0);
            for (int ih = 0; ih < H; ++ih) {
              const int oh = ih * s - p + dh;
              if (oh < 0 || oh >= OH) continue;
              const T* xrow = xplane + int64_t(ih) * W;
              const T* grow = gplane + int64_t(oh) * OW - p + dw;
              for (int iw = iw_lo; iw < iw_hi; ++iw) acc += xrow[iw] * grow[int64_t(iw) * s];
            }
          }
          gw.at(ci, co, dh, dw) += acc;
        }
      }
    }
  }
}

// Derivative-bank stack: every filter (F,k,k) convolves every input channel,
// same padding; output channel index = c * F + f.
template <typename T>
void bank_forward(const Tensor<T>& x, const Tensor<T>& bank, Tensor<T>& out) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = bank.dim(0), k = bank.dim(1), p = (k - 1) / 2;
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const T* xplane = &x.at(b, c, 0, 0);
      for (int f = 0; f < F; ++f) {
        T* oplane = &out.at(b, c * F + f, 0, 0);
        for (int64_t i = 0; i < int64_t(H) * W; ++i) oplane[i] = T(0);
        for (int dh = 0; dh < k; ++dh) {
          for (int dw = 0; dw < k; ++dw) {
            const T wv = bank.at(f, dh, dw);
            if (wv == T(0)) continue;
            const int ow_lo = std::max(0, p - dw);
            const int ow_hi = std::min(W, W + p - dw);
            for (int oh = 0; oh < H; ++oh) {
              const int ih = oh - p + dh;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xplane + int64_t(ih) * W - p + dw;
              T* orow = oplane + int64_t(oh) * W;
              for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xrow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void bank_backward_x(const Tensor<T>& gout, const Tensor<T>& bank, Tensor<T>& gx) {
  const int B = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const int F = bank.dim(0), k = bank.dim(1), p = (k - 1) / 2;
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      T* gxplane = &gx.at(b, c, 0, 0);
      for (int f = 0; f < F; ++f) {
        const T* gplane = &gout.at(b, c * F + f, 0, 0);
        for (int dh = 0; dh < k; ++dh) {
          for (int dw = 0; dw < k; ++dw) {
            const T wv = bank.at(f, dh, dw);
            if (wv == T(0)) continue;
            const int ow_lo = std::max(0, p - dw);
            const int ow_hi = std::min(W, W + p - dw);
            for (int oh = 0; oh < H; ++oh) {
              const int ih = oh - p + dh;
              if (ih < 0 || ih >= H) continue;
              T* gxrow = gxplane + int64_t(ih) * W - p + dw;
              const T* grow = gplane + int64_t(oh) * W;
              for (int ow = ow_lo; ow < ow_hi; ++ow) gxrow[ow] += wv * grow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void bank_backward_w(const Tensor<T>& gout, const Tensor<T>& x, Tensor<T>& gbank) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int F = gbank.dim(0), k = gbank.dim(1), p = (k - 1) / 2;
  for (int f = 0; f < F; ++f) {
    for (int dh = 0; dh < k; ++dh) {
      for (int dw = 0; dw < k; ++dw) {
        const int ow_lo = std::max(0, p - dw);
        const int ow_hi = std::min(W, W + p - dw);
        T acc = T(0);
        for (int b = 0; b < B; ++b) {
          for (int c = 0; c < C; ++c) {
            const T* xplane = &x.at(b, c, 0, 0);
            const T* gplane = &gout.at(b, c * F + f, 0, 0);
            for (int oh = 0; oh < H; ++oh) {
              const int ih = oh - p + dh;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xplane + int64_t(ih) * W - p + dw;
              const T* grow = gplane + int64_t(oh) * W;
              for (int ow = ow_lo; ow < ow_hi; ++ow) acc += xrow[ow] * grow[ow];
            }
          }
        }
        gbank.at(f, dh, dw) += acc;
      }
    }
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Tape ops. Each op captures its own node id (the tape size at creation) so
// the backward closure can read the output gradient.

namespace detail {

template <typename T>
void check_feature4(const Tensor<T>& t, const char* what) {
  if (t.rank() != 4)
    throw std::invalid_argument(std::string(what) + ": expected rank-4 tensor, got " +
                                shape_str(t.shape()));
}

}  // namespace detail

template <typename T>
Var add(Tape<T>& tp, Var a, Var b) {
  check_same_shape(tp.val(a), tp.val(b), "add");
  Tensor<T> out = tp.val(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] += tp.val(b)[i];
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 2> in{a, b};
  return tp.op_node(std::move(out), in, [self, a, b](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    t.accum(a, g);
    t.accum(b, g);
  });
}

template <typename T>
Var sub(Tape<T>& tp, Var a, Var b) {
  check_same_shape(tp.val(a), tp.val(b), "sub");
  Tensor<T> out = tp.val(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= tp.val(b)[i];
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 2> in{a, b};
  return tp.op_node(std::move(out), in, [self, a, b](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    t.accum(a, g);
    if (t.wants_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var mul(Tape<T>& tp, Var a, Var b) {
  check_same_shape(tp.val(a), tp.val(b), "mul");
  Tensor<T> out = tp.val(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= tp.val(b)[i];
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 2> in{a, b};
  return tp.op_node(std::move(out), in, [self, a, b](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a);
      const Tensor<T>& bv = t.val(b);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.wants_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b);
      const Tensor<T>& av = t.val(a);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

// k*a + c, elementwise with scalar constants
template <typename T>
Var affine(Tape<T>& tp, Var a, T k, T c) {
  Tensor<T> out = tp.val(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = k * out[i] + c;
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 1> in{a};
  return tp.op_node(std::move(out), in, [self, a, k](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
    }
  });
}

// a + k*b
template <typename T>
Var add_scaled(Tape<T>& tp, Var a, Var b, T k) {
  check_same_shape(tp.val(a), tp.val(b), "add_scaled");
  Tensor<T> out = tp.val(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] += k * tp.val(b)[i];
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 2> in{a, b};
  return tp.op_node(std::move(out), in, [self, a, b, k](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    t.accum(a, g);
    if (t.wants_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += k * g[i];
    }
  });
}

// gate*a + (1-gate)*b; equals a exactly at gate = 1, b exactly at gate = 0.
template <typename T>
Var convex_mix(Tape<T>& tp, Var gate, Var a, Var b) {
  check_same_shape(tp.val(gate), tp.val(a), "convex_mix");
  check_same_shape(tp.val(a), tp.val(b), "convex_mix");
  const Tensor<T>& gv = tp.val(gate);
  Tensor<T> out(gv.shape());
  for (int64_t i = 0; i < out.size(); ++i)
    out[i] = gv[i] * tp.val(a)[i] + (T(1) - gv[i]) * tp.val(b)[i];
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 3> in{gate, a, b};
  return tp.op_node(std::move(out), in, [self, gate, a, b](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    const Tensor<T>& gv = t.val(gate);
    if (t.wants_grad(gate)) {
      Tensor<T>& gg = t.grad_buf(gate);
      const Tensor<T>& av = t.val(a);
      const Tensor<T>& bv = t.val(b);
      for (int64_t i = 0; i < g.size(); ++i) gg[i] += g[i] * (av[i] - bv[i]);
    }
    if (t.wants_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gv[i];
    }
    if (t.wants_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b);
      for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (T(1) - gv[i]);
    }
  });
}

template <typename T>
Var sigmoid(Tape<T>& tp, Var a) {
  Tensor<T> out = tp.val(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-out[i]));
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 1> in{a};
  return tp.op_node(std::move(out), in, [self, a](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a);
      const Tensor<T>& y = t.val(self);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    }
  });
}

template <typename T>
Var tanh_op(Tape<T>& tp, Var a) {
  Tensor<T> out = tp.val(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 1> in{a};
  return tp.op_node(std::move(out), in, [self, a](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a);
      const Tensor<T>& y = t.val(self);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    }
  });
}

template <typename T>
Var conv2d(Tape<T>& tp, Var x, Var w, Var bias, int stride, int pad) {
  detail::check_feature4(tp.val(x), "conv2d input");
  detail::check_feature4(tp.val(w), "conv2d weight");
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& wv = tp.val(w);
  if (xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("conv2d: input channels " + std::to_string(xv.dim(1)) +
                                " do not match weight " + shape_str(wv.shape()));
  if (bias != kNoVar && tp.val(bias).size() != wv.dim(0))
    throw std::invalid_argument("conv2d: bias size mismatch");
  const int OH = kernels::conv_out_dim(xv.dim(2), wv.dim(2), stride, pad);
  const int OW = kernels::conv_out_dim(xv.dim(3), wv.dim(3), stride, pad);
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: output would be empty");
  Tensor<T> out(Shape{xv.dim(0), wv.dim(0), OH, OW});
  kernels::conv2d_forward(xv, wv, bias == kNoVar ? nullptr : &tp.val(bias), stride, pad, out);
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 3> in{x, w, bias == kNoVar ? x : bias};
  return tp.op_node(std::move(out), in, [self, x, w, bias, stride, pad](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(x)) kernels::conv2d_backward_x(g, t.val(w), stride, pad, t.grad_buf(x));
    if (t.wants_grad(w)) kernels::conv2d_backward_w(g, t.val(x), stride, pad, t.grad_buf(w));
    if (bias != kNoVar && t.wants_grad(bias)) kernels::conv2d_backward_b(g, t.grad_buf(bias));
  });
}

template <typename T>
Var conv_transpose2d(Tape<T>& tp, Var x, Var w, Var bias, int stride, int pad) {
  detail::check_feature4(tp.val(x), "conv_transpose2d input");
  detail::check_feature4(tp.val(w), "conv_transpose2d weight");
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& wv = tp.val(w);
  if (xv.dim(1) != wv.dim(0))
    throw std::invalid_argument("conv_transpose2d: channel mismatch");
  const int OH = (xv.dim(2) - 1) * stride - 2 * pad + wv.dim(2);
  const int OW = (xv.dim(3) - 1) * stride - 2 * pad + wv.dim(3);
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv_transpose2d: output would be empty");
  Tensor<T> out(Shape{xv.dim(0), wv.dim(1), OH, OW});
  kernels::convt2d_forward(xv, wv, bias == kNoVar ? nullptr : &tp.val(bias), stride, pad, out);
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 3> in{x, w, bias == kNoVar ? x : bias};
  return tp.op_node(std::move(out), in, [self, x, w, bias, stride, pad](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(x)) kernels::convt2d_backward_x(g, t.val(w), stride, pad, t.grad_buf(x));
    if (t.wants_grad(w)) kernels::convt2d_backward_w(g, t.val(x), stride, pad, t.grad_buf(w));
    if (bias != kNoVar && t.wants_grad(bias)) kernels::conv2d_backward_b(g, t.grad_buf(bias));
  });
}

template <typename T>
Var bank_conv2d(Tape<T>& tp, Var x, Var bank) {
  detail::check_feature4(tp.val(x), "bank_conv2d input");
  const Tensor<T>& xv = tp.val(x);
  const Tensor<T>& bv = tp.val(bank);
  if (bv.rank() != 3 || bv.dim(1) != bv.dim(2))
    throw std::invalid_argument("bank_conv2d: bank must be (F, k, k)");
  if (xv.dim(2) < bv.dim(1) || xv.dim(3) < bv.dim(1))
    throw std::invalid_argument("bank_conv2d: input spatial size smaller than filter");
  Tensor<T> out(Shape{xv.dim(0), xv.dim(1) * bv.dim(0), xv.dim(2), xv.dim(3)});
  kernels::bank_forward(xv, bv, out);
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 2> in{x, bank};
  return tp.op_node(std::move(out), in, [self, x, bank](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(x)) kernels::bank_backward_x(g, t.val(bank), t.grad_buf(x));
    if (t.wants_grad(bank)) kernels::bank_backward_w(g, t.val(x), t.grad_buf(bank));
  });
}

template <typename T>
Var concat_c(Tape<T>& tp, Var a, Var b) {
  detail::check_feature4(tp.val(a), "concat_c");
  detail::check_feature4(tp.val(b), "concat_c");
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
    throw std::invalid_argument("concat_c: non-channel dims differ");
  const int B = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), H = av.dim(2), W = av.dim(3);
  const int64_t plane = int64_t(H) * W;
  Tensor<T> out(Shape{B, Ca + Cb, H, W});
  for (int bi = 0; bi < B; ++bi) {
    std::copy_n(&av.at(bi, 0, 0, 0), Ca * plane, &out.at(bi, 0, 0, 0));
    std::copy_n(&bv.at(bi, 0, 0, 0), Cb * plane, &out.at(bi, Ca, 0, 0));
  }
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 2> in{a, b};
  return tp.op_node(std::move(out), in, [self, a, b, B, Ca, Cb, plane](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a);
      for (int bi = 0; bi < B; ++bi) {
        const T* src = &g.at(bi, 0, 0, 0);
        T* dst = ga.data() + int64_t(bi) * Ca * plane;
        for (int64_t i = 0; i < Ca * plane; ++i) dst[i] += src[i];
      }
    }
    if (t.wants_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b);
      for (int bi = 0; bi < B; ++bi) {
        const T* src = &g.at(bi, Ca, 0, 0);
        T* dst = gb.data() + int64_t(bi) * Cb * plane;
        for (int64_t i = 0; i < Cb * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var slice_c(Tape<T>& tp, Var x, int c0, int c1) {
  detail::check_feature4(tp.val(x), "slice_c");
  const Tensor<T>& xv = tp.val(x);
  if (c0 < 0 || c1 > xv.dim(1) || c0 >= c1) throw std::invalid_argument("slice_c: bad channel range");
  const int B = xv.dim(0), C = xv.dim(1), Cs = c1 - c0;
  const int64_t plane = int64_t(xv.dim(2)) * xv.dim(3);
  Tensor<T> out(Shape{B, Cs, xv.dim(2), xv.dim(3)});
  for (int bi = 0; bi < B; ++bi)
    std::copy_n(&xv.at(bi, c0, 0, 0), Cs * plane, out.data() + int64_t(bi) * Cs * plane);
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 1> in{x};
  return tp.op_node(std::move(out), in, [self, x, c0, B, C, Cs, plane](Tape<T>& t) {
    const Tensor<T>& g = t.grad_buf(self);
    if (t.wants_grad(x)) {
      Tensor<T>& gx = t.grad_buf(x);
      for (int bi = 0; bi < B; ++bi) {
        const T* src = g.data() + int64_t(bi) * Cs * plane;
        T* dst = gx.data() + (int64_t(bi) * C + c0) * plane;
        for (int64_t i = 0; i < Cs * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var sum_all(Tape<T>& tp, Var a) {
  T acc = T(0);
  const Tensor<T>& av = tp.val(a);
  for (int64_t i = 0; i < av.size(); ++i) acc += av[i];
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 1> in{a};
  return tp.op_node(Tensor<T>::scalar(acc), in, [self, a](Tape<T>& t) {
    const T g = t.grad_buf(self)[0];
    if (t.wants_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a);
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    }
  });
}

// mean((a-b)^2) over every element
template <typename T>
Var mse_all(Tape<T>& tp, Var a, Var b) {
  check_same_shape(tp.val(a), tp.val(b), "mse_all");
  const Tensor<T>& av = tp.val(a);
  const Tensor<T>& bv = tp.val(b);
  const T inv_n = T(1) / static_cast<T>(av.size());
  T acc = T(0);
  for (int64_t i = 0; i < av.size(); ++i) {
    T d = av[i] - bv[i];
    acc += d * d;
  }
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 2> in{a, b};
  return tp.op_node(Tensor<T>::scalar(acc * inv_n), in, [self, a, b, inv_n](Tape<T>& t) {
    const T g = t.grad_buf(self)[0];
    const Tensor<T>& av = t.val(a);
    const Tensor<T>& bv = t.val(b);
    const T k = T(2) * inv_n * g;
    if (t.wants_grad(a)) {
      Tensor<T>& ga = t.grad_buf(a);
      for (int64_t i = 0; i < av.size(); ++i) ga[i] += k * (av[i] - bv[i]);
    }
    if (t.wants_grad(b)) {
      Tensor<T>& gb = t.grad_buf(b);
      for (int64_t i = 0; i < av.size(); ++i) gb[i] -= k * (av[i] - bv[i]);
    }
  });
}

// Moment loss of a full derivative bank (F, k, k), filter f targeting
// (f / k, f % k). Scalar output.
template <typename T>
Var moment_penalty(Tape<T>& tp, Var bank) {
  const Tensor<T>& bv = tp.val(bank);
  if (bv.rank() != 3 || bv.dim(1) != bv.dim(2) || bv.dim(0) != bv.dim(1) * bv.dim(2))
    throw std::invalid_argument("moment_penalty: bank must be (k*k, k, k)");
  const int F = bv.dim(0), k = bv.dim(1);
  const int64_t fsz = int64_t(k) * k;
  T total = T(0);
  for (int f = 0; f < F; ++f) {
    Tensor<T> w(Shape{k, k});
    std::copy_n(bv.data() + f * fsz, fsz, w.data());
    SpatialFilter<T> sf{std::move(w), DerivativeOrder{f / k, f % k}};
    total += moment_loss(std::vector<SpatialFilter<T>>{sf});
  }
  const Var self = static_cast<Var>(tp.size());
  std::array<Var, 1> in{bank};
  return tp.op_node(Tensor<T>::scalar(total), in, [self, bank, F, k, fsz](Tape<T>& t) {
    const T g = t.grad_buf(self)[0];
    if (!t.wants_grad(bank)) return;
    Tensor<T>& gb = t.grad_buf(bank);
    const Tensor<T>& bv = t.val(bank);
    for (int f = 0; f < F; ++f) {
      Tensor<T> w(Shape{k, k});
      std::copy_n(bv.data() + f * fsz, fsz, w.data());
      SpatialFilter<T> sf{std::move(w), DerivativeOrder{f / k, f % k}};
      Tensor<T> gw = moment_loss_grad(sf);
      for (int64_t i = 0; i < fsz; ++i) gb[f * fsz + i] += g * gw[i];
    }
  });
}

}  // namespace taylornet
