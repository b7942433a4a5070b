// Combined training objective: mean-squared image reconstruction over the
// predicted frames plus the lambda-weighted moment penalty on the PDE
// derivative bank. total = image + lambda * moment, computed as a single
// fused expression so the logged decomposition holds bitwise.
#pragma once

#include "taylornet/model.hpp"

namespace taylornet {

template <typename T>
struct LossVars {
  Var total, image, moment;
};

template <typename T>
LossVars<T> compute_loss(Tape<T>& tp, const ModelVars<T>& v, const std::vector<Var>& predictions,
                         const std::vector<Var>& targets, T lambda_moment) {
  if (predictions.size() != targets.size() || predictions.empty())
    throw std::invalid_argument("compute_loss: predictions/targets length mismatch");
  Var image = mse_all(tp, predictions[0], targets[0]);
  for (size_t i = 1; i < predictions.size(); ++i)
    image = add(tp, image, mse_all(tp, predictions[i], targets[i]));
  image = affine(tp, image, T(1) / static_cast<T>(predictions.size()), T(0));
  Var moment = moment_penalty(tp, v.cell.pde.bank);
  Var total = add_scaled(tp, image, moment, lambda_moment);
  return {total, image, moment};
}

}  // namespace taylornet
