// Adaptive-moment optimizer over named parameter tensors.
#pragma once

#include <cmath>
#include <map>
#include <string>

#include "taylornet/tensor.hpp"

namespace taylornet {

template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  void step(const std::string& name, Tensor<T>& param, const Tensor<T>& grad) {
    State& st = states_[name];
    if (st.m.empty()) {
      st.m = Tensor<T>(param.shape());
      st.v = Tensor<T>(param.shape());
    }
    check_same_shape(param, grad, "adam step");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, st.t);
    const double bc2 = 1.0 - std::pow(beta2_, st.t);
    for (int64_t i = 0; i < param.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      st.m[i] = static_cast<T>(beta1_ * st.m[i] + (1 - beta1_) * g);
      st.v[i] = static_cast<T>(beta2_ * st.v[i] + (1 - beta2_) * g * g);
      const double mh = st.m[i] / bc1;
      const double vh = st.v[i] / bc2;
      param[i] = static_cast<T>(param[i] - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }

 private:
  struct State {
    Tensor<T> m, v;
    int64_t t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::map<std::string, State> states_;
};

}  // namespace taylornet
