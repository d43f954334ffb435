#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cteinv/nn.hpp"

namespace cteinv {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay applied to every parameter.
template <typename T>
class AdamW {
 public:
  AdamW(nn::ParamList<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto* p : params_) {
      m_.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T lr = static_cast<T>(cfg_.learning_rate);
    const T decay = static_cast<T>(1.0 - cfg_.learning_rate * cfg_.weight_decay);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(cfg_.learning_rate / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      if (lr == T(0)) continue;
      p.value *= decay;
      m_[i] = b1 * m_[i] + (T(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_bc2 + eps);
    }
  }

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  // State access for checkpoint/resume.
  std::vector<nn::Matrix<T>>& first_moments() { return m_; }
  std::vector<nn::Matrix<T>>& second_moments() { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

 private:
  nn::ParamList<T> params_;
  AdamWConfig cfg_;
  std::vector<nn::Matrix<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace cteinv
