#pragma once

#include <string>
#include <vector>

#include "gatecrush/tensor.hpp"

namespace gatecrush {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool weight_decay = true;  // gate scorer params opt out
};

// Classic (non-Nesterov) momentum: v <- m*v + g; p <- p - lr*v.
// Weight decay is added to the gradient before the momentum update.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<NamedParam<T>> params, double lr, double momentum, double weight_decay);

  void step();
  void zero_grad();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

// Adam with bias correction; used for LPNet training.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedParam<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

extern template class Sgd<float>;
extern template class Sgd<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace gatecrush
