#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gatecrush/common.hpp"

namespace gatecrush {

template <typename T>
class Tensor;

namespace detail {

// One node of the tape. Leaves have no grad_fn; op outputs keep strong
// references to their inputs so the graph stays alive until backward frees it.
template <typename T>
struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, same length as data when present
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or any input needs it

  std::string op;  // empty for leaves
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void()> grad_fn;  // accumulates into inputs' grads
  bool backward_done = false;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

// Value-semantics handle to a shared tensor payload.
template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, T value, bool requires_grad = false);
  static Tensor ones(std::vector<int64_t> shape, bool requires_grad = false) {
    return full(std::move(shape), T(1), requires_grad);
  }
  static Tensor from_vector(std::vector<T> values, std::vector<int64_t> shape,
                            bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) {
    return from_vector({value}, {1}, requires_grad);
  }
  static Tensor randn(std::vector<int64_t> shape, Rng& rng, T stddev = T(1),
                      bool requires_grad = false);
  static Tensor rand_uniform(std::vector<int64_t> shape, Rng& rng, T lo, T hi,
                             bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return impl_->numel(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T>& data_vec() { return impl_->data; }
  const std::vector<T>& data_vec() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) {
    impl_->requires_grad = v;
    impl_->needs_grad = impl_->needs_grad || v;
  }

  T item() const {
    check(numel() == 1, "Tensor::item: tensor is not scalar");
    return impl_->data[0];
  }

  const std::string& op() const { return impl_->op; }

  // Leaf copy of the same values; cut from the graph.
  Tensor detach() const {
    auto impl = std::make_shared<Impl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(impl);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return Tensor<U>::from_vector(std::move(out), impl_->shape, impl_->requires_grad);
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

// Reverse-mode sweep from a scalar loss. Visits the tape in exact reverse
// topological order, then releases the closures (a second call on the same
// graph is an error).
template <typename T>
void backward(Tensor<T> loss);

// Finiteness guard used after every op forward/backward; throws naming the op.
template <typename T>
void check_finite(const detail::TensorImpl<T>& impl, const char* where);

bool finite_checks_enabled();
void set_finite_checks(bool enabled);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward<float>(Tensor<float>);
extern template void backward<double>(Tensor<double>);

}  // namespace gatecrush
