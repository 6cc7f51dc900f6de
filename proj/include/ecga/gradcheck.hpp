#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ecga/ensemble.hpp"
#include "ecga/training.hpp"

namespace ecga {

struct GradCheckEntry {
  std::string tensor;
  double max_rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckEntry> tensors;  // every parameter tensor exactly once
  double max_rel_error = 0.0;
  double tolerance = 1e-3;
  bool pass = false;
  bool finite = true;
};

// |a - b| relative to the larger magnitude, floored so finite-difference
// noise on near-zero gradients does not dominate.
inline double grad_rel_error(double analytic, double numeric) {
  double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-4);
  return std::abs(analytic - numeric) / denom;
}

// Central finite differences of the ensemble loss against tape gradients,
// elementwise over every parameter tensor.  Dropout is off so each loss
// evaluation is a pure function of the parameters.  `corrupt_tensor`, when
// set, scales that tensor's analytic gradient (detector self-test fixture).
inline GradCheckResult gradcheck_ensemble(EnsembleModel& model, const EncodedBatch& batch,
                                          TrainingMode mode = TrainingMode::joint,
                                          double step = 1e-4, double tolerance = 1e-3,
                                          const std::string& corrupt_tensor = {},
                                          double corrupt_scale = 2.0) {
  GradCheckResult result;
  result.tolerance = tolerance;

  ForwardConfig cfg{0.0, model.conv_relu, false};
  std::vector<std::string> names;
  std::vector<Tensor*> params;
  model.for_each_param([&](const std::string& n, Tensor& t) {
    names.push_back(n);
    params.push_back(&t);
  });

  // analytic gradients, one tape over the whole batch
  std::vector<Tensor> analytic;
  {
    GradTape tape;
    EnsembleVars vars = lift_ensemble(tape, model);
    Rng rng(0);
    Var loss = ensemble_loss(tape, vars, batch, model.classes, cfg, rng, mode);
    tape.backward(loss);
    for (const auto& lv : vars.learners)
      for (const auto& [name, var] : lv.named) analytic.push_back(tape.grad(var));
  }
  if (!corrupt_tensor.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == corrupt_tensor) {
        for (std::size_t j = 0; j < analytic[i].size(); ++j) analytic[i][j] *= corrupt_scale;
      }
    }
  }

  auto loss_at = [&]() { return ensemble_loss_value(model, batch, mode); };

  for (std::size_t i = 0; i < params.size(); ++i) {
    GradCheckEntry entry;
    entry.tensor = names[i];
    Tensor& p = *params[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      double saved = p[j];
      p[j] = saved + step;
      double up = loss_at();
      p[j] = saved - step;
      double down = loss_at();
      p[j] = saved;
      double numeric = (up - down) / (2.0 * step);
      double rel = grad_rel_error(analytic[i][j], numeric);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i][j])) result.finite = false;
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    result.max_rel_error = std::max(result.max_rel_error, entry.max_rel_error);
    result.tensors.push_back(entry);
  }
  result.pass = result.finite && result.max_rel_error < tolerance;
  return result;
}

}  // namespace ecga
