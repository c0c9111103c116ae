#pragma once

#include <functional>
#include <span>
#include <vector>

#include "restok/params.hpp"
#include "restok/tensor.hpp"

RESTOK_BEGIN_NAMESPACE

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2eps per coordinate.
Tensor finite_difference_gradient(const std::function<Real(const Tensor&)>& fn, const Tensor& x,
                                  Real eps);

struct GradientComparison {
  std::size_t checked = 0;
  double max_relative_error = 0;
  double max_abs_error = 0;
  std::size_t worst_index = 0;
};

// Per-coordinate |a - n| / max(|a|, |n|, floor). The floor keeps coordinates
// whose true gradient is ~0 from dominating through rounding noise.
GradientComparison compare_gradients(std::span<const Real> analytic, std::span<const Real> numeric,
                                     double floor = 1e-6);

// Finite differences of a scalar loss with respect to the coordinates of a
// parameter, perturbing it in place and restoring it afterwards. An empty
// index list checks every coordinate.
std::vector<Real> parameter_finite_difference(Parameter& p, const std::function<Real()>& loss,
                                              Real eps, std::span<const std::size_t> indices = {});

RESTOK_END_NAMESPACE
