#pragma once

#include <cmath>

#include "promptclr/encoder.hpp"

namespace promptclr {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One Adam state shared by every update applied to a parameter set; moments
// are kept per tensor (same layout as Parameters).
class Adam {
 public:
  explicit Adam(const Parameters& like, AdamOptions opts = {})
      : opts_(opts), m_(like.zeros_like()), v_(like.zeros_like()) {}

  // lr == 0 leaves both parameters and moment state untouched.
  void step(Parameters& params, const Parameters& grads, double lr) {
    if (!grads.all_finite()) throw DivergenceError("non-finite gradient", static_cast<long>(t_ + 1));
    if (lr == 0.0) return;
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    auto p = params.tensors();
    const auto g = grads.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i]->array() = opts_.beta1 * m[i]->array() + (1.0 - opts_.beta1) * g[i]->array();
      v[i]->array() = opts_.beta2 * v[i]->array() + (1.0 - opts_.beta2) * g[i]->array().square();
      p[i]->array() -= lr * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + opts_.epsilon);
    }
  }

  long steps_taken() const { return t_; }

 private:
  AdamOptions opts_;
  Parameters m_, v_;
  long t_ = 0;
};

}  // namespace promptclr
