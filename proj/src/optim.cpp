#include "gatecrush/optim.hpp"

#include <cmath>

namespace gatecrush {

template <typename T>
Sgd<T>::Sgd(std::vector<NamedParam<T>> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_)
    velocity_.emplace_back(p.tensor.data_vec().size(), T(0));
}

template <typename T>
void Sgd<T>::step() {
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.tensor.has_grad()) continue;
    auto& data = p.tensor.data_vec();
    auto grad = p.tensor.grad();
    auto& vel = velocity_[pi];
    check(vel.size() == grad.size(), "sgd_step: gradient/momentum shape mismatch");
    const T wd = p.weight_decay ? static_cast<T>(weight_decay_) : T(0);
    const T m = static_cast<T>(momentum_);
    const T lr = static_cast<T>(lr_);
    for (size_t i = 0; i < data.size(); ++i) {
      const T g = grad[i] + wd * data[i];
      vel[i] = m * vel[i] + g;
      data[i] -= lr * vel[i];
    }
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
Adam<T>::Adam(std::vector<NamedParam<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.data_vec().size(), T(0));
    v_.emplace_back(p.tensor.data_vec().size(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = params_[pi];
    if (!p.tensor.has_grad()) continue;
    auto& data = p.tensor.data_vec();
    auto grad = p.tensor.grad();
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = static_cast<double>(grad[i]);
      m_[pi][i] = static_cast<T>(beta1_ * m_[pi][i] + (1.0 - beta1_) * g);
      v_[pi][i] = static_cast<T>(beta2_ * v_[pi][i] + (1.0 - beta2_) * g * g);
      const double mhat = static_cast<double>(m_[pi][i]) / bc1;
      const double vhat = static_cast<double>(v_[pi][i]) / bc2;
      data[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template class Sgd<float>;
template class Sgd<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace gatecrush
