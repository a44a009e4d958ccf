#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tinyalign/errors.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign {

struct SgdOptions {
  double learning_rate = 1e-2;
  double momentum = 0.9;
};

// SGD with classical momentum:
//   v <- momentum * v + grad
//   w <- w - lr * v
// after which the grads are zeroed.
template <class T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, SgdOptions options) : params_(std::move(params)), options_(options) {
    if (!(options_.learning_rate >= 0.0)) fail(ErrorKind::config, "sgd: learning rate must be non-negative");
    if (options_.momentum < 0.0 || options_.momentum >= 1.0) fail(ErrorKind::config, "sgd: momentum must be in [0,1)");
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.numel(), T(0));
  }

  void step() {
    const T lr = static_cast<T>(options_.learning_rate);
    const T mu = static_cast<T>(options_.momentum);
    for (auto& p : params_)
      if (!p.has_grad()) fail(ErrorKind::invalid_argument, "sgd: parameter without gradient buffer");
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].data();
      auto g = params_[k].grad();
      auto& v = velocity_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= lr * v[i];
      }
      params_[k].zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const SgdOptions& options() const { return options_; }

  std::vector<std::vector<T>>& velocity() { return velocity_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

  void set_velocity(std::vector<std::vector<T>> v) {
    if (v.size() != params_.size()) fail(ErrorKind::invalid_argument, "sgd: velocity count mismatch");
    for (std::size_t k = 0; k < v.size(); ++k)
      if (v[k].size() != params_[k].numel()) fail(ErrorKind::invalid_argument, "sgd: velocity size mismatch");
    velocity_ = std::move(v);
  }

 private:
  std::vector<Tensor<T>> params_;
  SgdOptions options_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace tinyalign
