#ifndef SCL_CORE_OPTIM_HPP
#define SCL_CORE_OPTIM_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "scl/core/autograd.hpp"

namespace scl {

/// Adaptive-moment gradient descent over an explicit parameter list.
template <class T>
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(std::vector<Parameter<T>*> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  const Options& options() const noexcept { return opts_; }
  long steps() const noexcept { return step_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  /// Applies one update from the accumulated gradients. Frozen parameters are skipped.
  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    const T lr = static_cast<T>(opts_.learning_rate);
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2), eps = static_cast<T>(opts_.epsilon);
    const T c1 = static_cast<T>(bc1), c2 = static_cast<T>(std::sqrt(bc2));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter<T>& p = *params_[k];
      if (p.frozen || p.grad.shape() != p.value.shape()) continue;
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const T g = p.grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i]) / c2 + eps);
      }
    }
  }

 private:
  std::vector<Parameter<T>*> params_;
  Options opts_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  long step_ = 0;
};

}  // namespace scl

#endif  // SCL_CORE_OPTIM_HPP
