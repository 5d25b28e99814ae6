#pragma once

// Central finite-difference gradient oracle for scalar tape functions.

#include <functional>
#include <map>
#include <string>

#include "snigl/autodiff.hpp"
#include "snigl/model.hpp"

namespace snigl::testing {

using Inputs = std::map<std::string, ad::Matrix>;
/// Builds a 1x1 output from leaves bound to `inputs`.
using ScalarFn = std::function<ad::Var(ad::Tape&, const std::map<std::string, ad::Var>&)>;

struct GradientCheck {
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||, floor) over all entries.
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

GradientCheck check_gradients(const Inputs& inputs, const ScalarFn& fn, double step = 1e-6, double floor = 1e-8);

/// Same check over every tensor of `params`, with `fn` reading them through a Bound.
using ModelFn = std::function<ad::Var(const model::Bound&)>;
GradientCheck check_model_gradients(const model::ModelParams& params, const ModelFn& fn, double step = 1e-6,
                                    double floor = 1e-8);

}  // namespace snigl::testing
