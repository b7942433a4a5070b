// Frame-quality metrics. MSE and MAE follow the per-frame pixel-sum
// convention of the Moving-MNIST literature (sum over pixels, averaged over
// frames and sequences); per-pixel means are reported alongside. SSIM uses
// the standard 11x11 Gaussian window (sigma 1.5) with the usual stabilizing
// constants on valid window positions; PSNR derives from the per-frame mean
// squared error; BCE is the summed binary cross-entropy with the prediction
// clamped to [1e-7, 1 - 1e-7].
#pragma once

#include <cmath>

#include "taylornet/tensor.hpp"

namespace taylornet {

struct FrameMetrics {
  double mse_sum = 0;   // sum of squared pixel errors
  double mae_sum = 0;   // sum of absolute pixel errors
  double ssim = 0;
  double psnr = 0;
  double bce_sum = 0;
  double mse_mean = 0;  // per-pixel mean squared error
};

namespace detail {

inline std::vector<double> ssim_window(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    w[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Separable Gaussian-weighted filtering of a (H, W) plane, valid region.
inline Tensor<double> gauss_valid(const Tensor<double>& img, const std::vector<double>& win) {
  const int H = img.dim(0), W = img.dim(1), k = static_cast<int>(win.size());
  Tensor<double> tmp(Shape{H, W - k + 1});
  for (int x = 0; x < H; ++x)
    for (int y = 0; y + k <= W; ++y) {
      double acc = 0;
      for (int i = 0; i < k; ++i) acc += win[static_cast<size_t>(i)] * img.at(x, y + i);
      tmp.at(x, y) = acc;
    }
  Tensor<double> out(Shape{H - k + 1, W - k + 1});
  for (int x = 0; x + k <= H; ++x)
    for (int y = 0; y < W - k + 1; ++y) {
      double acc = 0;
      for (int i = 0; i < k; ++i) acc += win[static_cast<size_t>(i)] * tmp.at(x + i, y);
      out.at(x, y) = acc;
    }
  return out;
}

}  // namespace detail

// Mean SSIM of two (H, W) planes in [0, 1]. Window falls back to the largest
// odd size that fits when the plane is smaller than 11.
inline double ssim_plane(const Tensor<double>& a, const Tensor<double>& b, int window = 11,
                         double sigma = 1.5) {
  const int H = a.dim(0), W = a.dim(1);
  int k = std::min({window, H, W});
  if (k % 2 == 0) k -= 1;
  if (k < 1) throw std::invalid_argument("ssim: degenerate plane");
  const auto win = detail::ssim_window(k, sigma);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // (K L)^2 with L = 1

  Tensor<double> aa(a.shape()), bb(a.shape()), ab(a.shape());
  for (int64_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto mu_a = detail::gauss_valid(a, win);
  auto mu_b = detail::gauss_valid(b, win);
  auto m_aa = detail::gauss_valid(aa, win);
  auto m_bb = detail::gauss_valid(bb, win);
  auto m_ab = detail::gauss_valid(ab, win);
  double total = 0;
  for (int64_t i = 0; i < mu_a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

// Metrics of one (C, H, W) frame pair with pixel values in [0, 1].
template <typename T>
FrameMetrics frame_metrics(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.rank() != 3 || !pred.same_shape(target))
    throw std::invalid_argument("frame_metrics: expected matching (C, H, W) frames, got " +
                                shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  const int C = pred.dim(0), H = pred.dim(1), W = pred.dim(2);
  FrameMetrics m;
  for (int64_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], t = target[i];
    if (p < 0 || p > 1 || t < 0 || t > 1)
      throw std::invalid_argument("frame_metrics: pixel values outside [0, 1]");
    const double d = p - t;
    m.mse_sum += d * d;
    m.mae_sum += std::abs(d);
    const double pc = std::min(1.0 - 1e-7, std::max(1e-7, p));
    m.bce_sum -= t * std::log(pc) + (1 - t) * std::log(1 - pc);
  }
  m.mse_mean = m.mse_sum / pred.size();
  m.psnr = m.mse_mean > 0 ? 10.0 * std::log10(1.0 / m.mse_mean)
                          : std::numeric_limits<double>::infinity();
  for (int c = 0; c < C; ++c) {
    Tensor<double> a(Shape{H, W}), b(Shape{H, W});
    for (int i = 0; i < H * W; ++i) {
      a[i] = static_cast<double>(pred[int64_t(c) * H * W + i]);
      b[i] = static_cast<double>(target[int64_t(c) * H * W + i]);
    }
    m.ssim += ssim_plane(a, b);
  }
  m.ssim /= C;
  return m;
}

}  // namespace taylornet
