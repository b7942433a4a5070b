// Two-branch sequence-to-sequence assembly: frames are encoded to a latent
// space, linearly split into a Taylor feature and a residual feature, each
// branch predicts its next feature (TaylorCell / stacked ConvLSTM), the
// branch outputs are remapped and summed in the latent space, and the sum is
// decoded back to a frame with a [0,1] sigmoid head.
#pragma once

#include <map>
#include <optional>

#include "taylornet/conv_lstm.hpp"
#include "taylornet/data.hpp"
#include "taylornet/taylor_cell.hpp"

namespace taylornet {

struct ModelConfig {
  int frame_h = 32, frame_w = 32, frame_c = 1;
  int enc_mid = 8;    // encoder intermediate channels
  int latent_c = 16;  // channels of u and of both branch spaces
  int dec_mid = 16;   // first decoder stage channels
  int dec_low = 8;    // second decoder stage channels
  int bank_k = 7;
  int taylor_order = 3;  // xi
  int lstm_layers = 3;
  bool mcu_enabled = true;
  bool residual_branch_enabled = true;
  bool taylor_branch_enabled = true;
  int input_frames = 10;   // t
  int future_frames = 10;  // N+1

  int latent_h() const { return frame_h / 4; }
  int latent_w() const { return frame_w / 4; }

  void validate() const {
    if (taylor_order < 1) throw std::invalid_argument("taylor_order must be >= 1");
    if (input_frames < 1) throw std::invalid_argument("input_frames must be >= 1");
    if (future_frames < 0) throw std::invalid_argument("future_frames must be >= 0");
    if (frame_h % 4 != 0 || frame_w % 4 != 0)
      throw std::invalid_argument("frame size must be divisible by 4 (two 2x encoder strides)");
    if (latent_h() < bank_k || latent_w() < bank_k)
      throw std::invalid_argument("latent resolution smaller than the derivative bank");
    if (!taylor_branch_enabled && !residual_branch_enabled)
      throw std::invalid_argument("at least one branch must be enabled");
  }
};

template <typename T>
struct ModelParams {
  // encoder E and linear splitters E_T, E_R
  Tensor<T> enc1_w, enc1_b, enc2_w, enc2_b;
  Tensor<T> et_w, et_b, er_w, er_b;
  // branches
  TaylorCellParams<T> cell;
  ConvLstmParams<T> lstm;
  // linear remappers D_T, D_R (no bias: preserves the additive merge) and decoder D
  Tensor<T> dt_w, dr_w;
  Tensor<T> dec1_w, dec1_b, dec2_w, dec2_b, head_w, head_b;
  ModelConfig config;

  template <typename F>
  void visit(F&& f) {
    f("enc1.w", enc1_w);
    f("enc1.b", enc1_b);
    f("enc2.w", enc2_w);
    f("enc2.b", enc2_b);
    f("et.w", et_w);
    f("et.b", et_b);
    f("er.w", er_w);
    f("er.b", er_b);
    cell.visit("cell", f);
    lstm.visit("lstm", f);
    f("dt.w", dt_w);
    f("dr.w", dr_w);
    f("dec1.w", dec1_w);
    f("dec1.b", dec1_b);
    f("dec2.w", dec2_w);
    f("dec2.b", dec2_b);
    f("head.w", head_w);
    f("head.b", head_b);
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    auto self = const_cast<ModelParams<T>*>(this);
    std::vector<Tensor<T>*> src;
    self->visit([&](const std::string&, Tensor<T>& t) { src.push_back(&t); });
    std::vector<Tensor<U>*> dst;
    out.cell.order = cell.order;
    out.cell.mcu_enabled = cell.mcu_enabled;
    out.lstm.hidden_channels = lstm.hidden_channels;
    out.lstm.w.resize(lstm.w.size());
    out.lstm.b.resize(lstm.b.size());
    out.visit([&](const std::string&, Tensor<U>& t) { dst.push_back(&t); });
    for (size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams<T> p;
  p.config = cfg;
  auto conv_init = [&](Tensor<T>& w, Tensor<T>* b, Shape shape) {
    const double fan_in = double(shape[1]) * shape[2] * shape[3];
    const double lim = std::sqrt(1.0 / fan_in);
    w = Tensor<T>(std::move(shape));
    rng.fill_uniform(w, -lim, lim);
    if (b) {
      *b = Tensor<T>(Shape{w.dim(0)});
      rng.fill_uniform(*b, -lim, lim);
    }
  };
  auto convt_init = [&](Tensor<T>& w, Tensor<T>* b, Shape shape) {
    // transposed conv weights are (Cin, Cout, kh, kw)
    const double fan_in = double(shape[0]) * shape[2] * shape[3];
    const double lim = std::sqrt(1.0 / fan_in);
    w = Tensor<T>(std::move(shape));
    rng.fill_uniform(w, -lim, lim);
    if (b) {
      *b = Tensor<T>(Shape{w.dim(1)});
      rng.fill_uniform(*b, -lim, lim);
    }
  };
  const int C = cfg.latent_c;
  conv_init(p.enc1_w, &p.enc1_b, {cfg.enc_mid, cfg.frame_c, 3, 3});
  conv_init(p.enc2_w, &p.enc2_b, {C, cfg.enc_mid, 3, 3});
  conv_init(p.et_w, &p.et_b, {C, C, 3, 3});
  conv_init(p.er_w, &p.er_b, {C, C, 3, 3});
  p.cell = init_taylor_cell<T>(cfg.bank_k, C, cfg.taylor_order, rng);
  p.cell.mcu_enabled = cfg.mcu_enabled;
  p.lstm = init_conv_lstm<T>(cfg.lstm_layers, C, C, rng);
  conv_init(p.dt_w, nullptr, {C, C, 3, 3});
  conv_init(p.dr_w, nullptr, {C, C, 3, 3});
  convt_init(p.dec1_w, &p.dec1_b, {C, cfg.dec_mid, 4, 4});
  convt_init(p.dec2_w, &p.dec2_b, {cfg.dec_mid, cfg.dec_low, 4, 4});
  conv_init(p.head_w, &p.head_b, {cfg.frame_c, cfg.dec_low, 3, 3});
  p.head_b.fill(T(-2));  // frames are mostly background; start dark
  return p;
}

template <typename T>
struct ModelVars {
  Var enc1_w, enc1_b, enc2_w, enc2_b;
  Var et_w, et_b, er_w, er_b;
  TaylorCellVars<T> cell;
  ConvLstmVars<T> lstm;
  Var dt_w, dr_w;
  Var dec1_w, dec1_b, dec2_w, dec2_b, head_w, head_b;
  ModelConfig config;
  std::vector<std::pair<std::string, Var>> registry;  // name -> leaf var
};

template <typename T>
ModelVars<T> bind_model(Tape<T>& tp, ModelParams<T>& params, bool requires_grad = true) {
  params.config.validate();
  ModelVars<T> v;
  v.config = params.config;
  std::map<const Tensor<T>*, Var> lookup;
  params.visit([&](const std::string& name, Tensor<T>& t) {
    Var var = tp.leaf(t, requires_grad);
    v.registry.emplace_back(name, var);
    lookup[&t] = var;
  });
  auto get = [&](const Tensor<T>& t) { return lookup.at(&t); };
  v.enc1_w = get(params.enc1_w);
  v.enc1_b = get(params.enc1_b);
  v.enc2_w = get(params.enc2_w);
  v.enc2_b = get(params.enc2_b);
  v.et_w = get(params.et_w);
  v.et_b = get(params.et_b);
  v.er_w = get(params.er_w);
  v.er_b = get(params.er_b);
  v.cell.pde.bank = get(params.cell.pde.bank);
  v.cell.pde.comb = get(params.cell.pde.comb);
  v.cell.wz = get(params.cell.wz);
  v.cell.bz = get(params.cell.bz);
  v.cell.wr = get(params.cell.wr);
  v.cell.br = get(params.cell.br);
  v.cell.wg = get(params.cell.wg);
  v.cell.bg = get(params.cell.bg);
  v.cell.wk = get(params.cell.wk);
  v.cell.bk = get(params.cell.bk);
  v.cell.order = params.cell.order;
  v.cell.mcu_enabled = params.cell.mcu_enabled;
  v.lstm.hidden_channels = params.lstm.hidden_channels;
  for (size_t l = 0; l < params.lstm.w.size(); ++l) {
    v.lstm.w.push_back(get(params.lstm.w[l]));
    v.lstm.b.push_back(get(params.lstm.b[l]));
  }
  v.dt_w = get(params.dt_w);
  v.dr_w = get(params.dr_w);
  v.dec1_w = get(params.dec1_w);
  v.dec1_b = get(params.dec1_b);
  v.dec2_w = get(params.dec2_w);
  v.dec2_b = get(params.dec2_b);
  v.head_w = get(params.head_w);
  v.head_b = get(params.head_b);
  return v;
}

template <typename T>
struct EncodedFrame {
  Var u, h_taylor, h_residual;
};

template <typename T>
EncodedFrame<T> encode_split(Tape<T>& tp, const ModelVars<T>& v, Var frame) {
  const Tensor<T>& f = tp.val(frame);
  detail::check_feature4(f, "encode_split");
  if (f.dim(1) != v.config.frame_c || f.dim(2) != v.config.frame_h || f.dim(3) != v.config.frame_w)
    throw std::invalid_argument("encode_split: frame shape " + shape_str(f.shape()) +
                                " does not match configured " +
                                shape_str({f.dim(0), v.config.frame_c, v.config.frame_h,
                                           v.config.frame_w}));
  Var u = tanh_op(tp, conv2d(tp, frame, v.enc1_w, v.enc1_b, 2, 1));
  u = tanh_op(tp, conv2d(tp, u, v.enc2_w, v.enc2_b, 2, 1));
  Var ht = conv2d(tp, u, v.et_w, v.et_b, 1, 1);
  Var hr = conv2d(tp, u, v.er_w, v.er_b, 1, 1);
  return {u, ht, hr};
}

// u^ = D_T(h^T) + D_R(h^R), decoded to a [0,1] frame. Disabled branches are
// dropped from the sum (pass kNoVar).
template <typename T>
Var merge_decode(Tape<T>& tp, const ModelVars<T>& v, Var h_hat_taylor, Var h_hat_residual) {
  Var u = kNoVar;
  if (h_hat_taylor != kNoVar) u = conv2d(tp, h_hat_taylor, v.dt_w, kNoVar, 1, 1);
  if (h_hat_residual != kNoVar) {
    Var ur = conv2d(tp, h_hat_residual, v.dr_w, kNoVar, 1, 1);
    u = (u == kNoVar) ? ur : add(tp, u, ur);
  }
  if (u == kNoVar) throw std::invalid_argument("merge_decode: both branch inputs missing");
  Var d = tanh_op(tp, conv_transpose2d(tp, u, v.dec1_w, v.dec1_b, 2, 1));
  d = tanh_op(tp, conv_transpose2d(tp, d, v.dec2_w, v.dec2_b, 2, 1));
  return sigmoid(tp, conv2d(tp, d, v.head_w, v.head_b, 1, 1));
}

// Optional probes captured during forward_sequence (one entry per predicted
// frame unless noted).
template <typename T>
struct ForwardTrace {
  std::vector<Var> input_frames;  // one per consumed real input frame
  std::vector<Var> h_tilde;       // TPU extrapolation
  std::vector<Var> gain;          // K_t
  std::vector<Var> taylor_feat;   // h^T after correction
  std::vector<Var> residual_feat; // h^R from the residual branch
};

// Runs the two branches over the input transitions and then n_future
// prediction steps. During prediction, branch inputs come from the teacher
// frames when given, otherwise from the model's own previous branch outputs
// (the branches are closed over their own latent spaces).
template <typename T>
std::vector<Var> forward_sequence(Tape<T>& tp, const ModelVars<T>& v,
                                  const std::vector<Var>& input_frames, int n_future,
                                  const std::vector<Var>* teacher_frames = nullptr,
                                  std::type_identity_t<ForwardTrace<T>>* trace = nullptr,
                                  bool free_intermediates = false) {
  const ModelConfig& cfg = v.config;
  const int t_in = static_cast<int>(input_frames.size());
  if (t_in < 1) throw std::invalid_argument("forward_sequence: empty input");
  if (teacher_frames && static_cast<int>(teacher_frames->size()) != n_future)
    throw std::invalid_argument("forward_sequence: teacher frame count " +
                                std::to_string(teacher_frames->size()) + " != n_future " +
                                std::to_string(n_future));
  const int batch = tp.val(input_frames[0]).dim(0);
  const size_t base = tp.size();

  TaylorCellState<T> cell_state;
  ConvLstmState<T> lstm_state;
  if (cfg.residual_branch_enabled)
    lstm_state = init_lstm_state(tp, v.lstm, batch, cfg.latent_h(), cfg.latent_w());

  std::vector<Var> predictions;
  Var prev_taylor = kNoVar, prev_residual = kNoVar;
  for (int time = 0; time < t_in - 1 + n_future; ++time) {
    Var cur_t = kNoVar, cur_r = kNoVar;
    if (time < t_in) {
      auto enc = encode_split(tp, v, input_frames[static_cast<size_t>(time)]);
      cur_t = enc.h_taylor;
      cur_r = enc.h_residual;
      if (trace) trace->input_frames.push_back(input_frames[static_cast<size_t>(time)]);
    } else if (teacher_frames) {
      auto enc = encode_split(tp, v, (*teacher_frames)[static_cast<size_t>(time - t_in)]);
      cur_t = enc.h_taylor;
      cur_r = enc.h_residual;
    } else {
      cur_t = prev_taylor;
      cur_r = prev_residual;
    }

    Var h_hat_t = kNoVar, h_hat_r = kNoVar;
    CellStepOut<T> cell_out;
    if (cfg.taylor_branch_enabled) {
      cell_out = taylor_cell_step(tp, v.cell, cell_state, cur_t);
      h_hat_t = cell_out.h_hat;
    }
    if (cfg.residual_branch_enabled) h_hat_r = convlstm_step(tp, v.lstm, lstm_state, cur_r);

    prev_taylor = h_hat_t;
    prev_residual = h_hat_r;
    if (time >= t_in - 1) {
      predictions.push_back(merge_decode(tp, v, h_hat_t, h_hat_r));
      if (trace) {
        trace->h_tilde.push_back(cell_out.h_tilde);
        trace->gain.push_back(cell_out.gain);
        trace->taylor_feat.push_back(h_hat_t);
        trace->residual_feat.push_back(h_hat_r);
      }
    }

    if (free_intermediates && !tp.grad_enabled()) {
      std::vector<Var> keep;
      keep.reserve(cell_state.derivatives.size() + lstm_state.h.size() * 2 +
                   predictions.size() + 8);
      for (Var d : cell_state.derivatives) keep.push_back(d);
      if (cell_state.mcu_hidden != kNoVar) keep.push_back(cell_state.mcu_hidden);
      for (Var h : lstm_state.h) keep.push_back(h);
      for (Var c : lstm_state.c) keep.push_back(c);
      if (prev_taylor != kNoVar) keep.push_back(prev_taylor);
      if (prev_residual != kNoVar) keep.push_back(prev_residual);
      for (Var pr : predictions) keep.push_back(pr);
      if (trace) {
        for (Var x : trace->h_tilde) if (x != kNoVar) keep.push_back(x);
        for (Var x : trace->taylor_feat) if (x != kNoVar) keep.push_back(x);
        for (Var x : trace->residual_feat) if (x != kNoVar) keep.push_back(x);
        for (Var x : trace->gain) if (x != kNoVar) keep.push_back(x);
      }
      tp.free_values_except(base, keep);
    }
  }
  return predictions;
}

// Convenience wrapper: creates frame leaves from a VideoBatch layout.
template <typename T>
std::vector<Var> leaf_frames(Tape<T>& tp, const VideoBatch& batch, int from, int count,
                             bool requires_grad = false) {
  std::vector<Var> out;
  for (int t = from; t < from + count; ++t) {
    Tensor<float> f = batch.frames_at(t);
    if constexpr (std::is_same_v<T, float>)
      out.push_back(tp.leaf(std::move(f), requires_grad));
    else
      out.push_back(tp.leaf(f.template cast<T>(), requires_grad));
  }
  return out;
}

}  // namespace taylornet
