#include "restok/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

Tensor finite_difference_gradient(const std::function<Real(const Tensor&)>& fn, const Tensor& x,
                                  Real eps) {
  Tensor probe = x;
  Tensor grad = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + eps;
    const Real up = fn(probe);
    probe[i] = orig - eps;
    const Real down = fn(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (Real(2) * eps);
  }
  return grad;
}

GradientComparison compare_gradients(std::span<const Real> analytic, std::span<const Real> numeric,
                                     double floor) {
  if (analytic.size() != numeric.size()) {
    throw DimensionError("compare_gradients: length mismatch");
  }
  GradientComparison cmp;
  cmp.checked = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double err = std::abs(a - n);
    const double rel = err / std::max({std::abs(a), std::abs(n), floor});
    cmp.max_abs_error = std::max(cmp.max_abs_error, err);
    if (rel > cmp.max_relative_error) {
      cmp.max_relative_error = rel;
      cmp.worst_index = i;
    }
  }
  return cmp;
}

std::vector<Real> parameter_finite_difference(Parameter& p, const std::function<Real()>& loss,
                                              Real eps, std::span<const std::size_t> indices) {
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(p.value.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    indices = all;
  }
  std::vector<Real> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const Real orig = p.value[i];
    p.value[i] = orig + eps;
    const Real up = loss();
    p.value[i] = orig - eps;
    const Real down = loss();
    p.value[i] = orig;
    out.push_back((up - down) / (Real(2) * eps));
  }
  return out;
}

RESTOK_END_NAMESPACE
