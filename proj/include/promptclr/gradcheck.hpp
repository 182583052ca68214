#pragma once

#include <functional>

#include "promptclr/encoder.hpp"

namespace promptclr {

// Norm-wise relative error |a - n| / max(|a| + |n|, floor).
inline double relative_error(const Eigen::Ref<const Eigen::VectorXd>& analytic,
                             const Eigen::Ref<const Eigen::VectorXd>& numeric, double floor = 1e-12) {
  const double denom = std::max(analytic.norm() + numeric.norm(), floor);
  return (analytic - numeric).norm() / denom;
}

// Error floor for gradient checks: below this gradient norm the comparison is
// effectively absolute (|a - n| < 1e-8 passes a 1e-4 threshold), which is where
// central differences at h = 1e-5 stop resolving anything but round-off.
inline constexpr double kGradientFloor = 1e-4;

// Central differences of f with respect to every entry of x.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

struct TensorCheck {
  std::string name;
  double error = 0.0;
};

// Central differences of loss(params) for every parameter tensor, compared
// with `analytic` tensor by tensor. Some tensors have an exactly zero gradient
// (the key bias cancels inside the attention softmax); `floor` keeps their
// error from being a ratio of two finite-difference noise terms.
inline std::vector<TensorCheck> check_parameter_gradients(Parameters params, const Parameters& analytic,
                                                          const std::function<double(const Parameters&)>& loss,
                                                          double h = 1e-5, double floor = kGradientFloor) {
  std::vector<TensorCheck> out;
  auto mine = params.tensors();
  const auto theirs = analytic.tensors();
  std::vector<std::string> names;
  params.for_each([&](const std::string& n, const Matrix&) { names.push_back(n); });
  for (std::size_t t = 0; t < mine.size(); ++t) {
    Matrix& m = *mine[t];
    Vector numeric(m.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double keep = m.data()[i];
      m.data()[i] = keep + h;
      const double up = loss(params);
      m.data()[i] = keep - h;
      const double down = loss(params);
      m.data()[i] = keep;
      numeric(i) = (up - down) / (2.0 * h);
    }
    const Eigen::Map<const Vector> a(theirs[t]->data(), theirs[t]->size());
    out.push_back({names[t], relative_error(a, numeric, floor)});
  }
  return out;
}

}  // namespace promptclr
