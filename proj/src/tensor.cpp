#include "gatecrush/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_set>

namespace gatecrush {

namespace {
std::atomic<bool> g_finite_checks{true};
}

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }
void set_finite_checks(bool enabled) { g_finite_checks.store(enabled, std::memory_order_relaxed); }

int thread_count() {
  static int cached = [] {
    const char* env = std::getenv("GATECRUSH_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    if (n < 1) n = 1;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw > 0 && n > hw) n = hw;
    return n;
  }();
  return cached;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  int workers = thread_count();
  if (workers <= 1 || n < 2 * workers) {
    fn(0, n);
    return;
  }
  int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    int64_t begin = w * chunk;
    int64_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

std::string toolkit_version() { return "gatecrush 0.1.0"; }

template <typename T>
void check_finite(const detail::TensorImpl<T>& impl, const char* where) {
  if (!finite_checks_enabled()) return;
  for (const T& v : impl.data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw Error(std::string("non-finite value produced by node '") +
                  (impl.op.empty() ? "leaf" : impl.op) + "' during " + where);
    }
  }
  if (!impl.grad.empty()) {
    for (const T& v : impl.grad) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw Error(std::string("non-finite gradient at node '") +
                    (impl.op.empty() ? "leaf" : impl.op) + "' during " + where);
      }
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<int64_t> shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<int64_t> shape, T value, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(impl->numel()), value);
  impl->requires_grad = requires_grad;
  impl->needs_grad = requires_grad;
  return Tensor(impl);
}

template <typename T>
Tensor<T> Tensor<T>::from_vector(std::vector<T> values, std::vector<int64_t> shape,
                                 bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  check(static_cast<int64_t>(values.size()) == impl->numel(),
        "Tensor::from_vector: data length does not match shape");
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  impl->needs_grad = requires_grad;
  return Tensor(impl);
}

template <typename T>
Tensor<T> Tensor<T>::randn(std::vector<int64_t> shape, Rng& rng, T stddev, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (T& v : t.data_vec()) v = static_cast<T>(rng.normal()) * stddev;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::rand_uniform(std::vector<int64_t> shape, Rng& rng, T lo, T hi,
                                  bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (T& v : t.data_vec()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
void backward(Tensor<T> loss) {
  auto root = loss.impl();
  check(root != nullptr, "backward: undefined tensor");
  check(root->numel() == 1, "backward: loss must be scalar");
  check(!root->backward_done, "backward: graph already consumed; run a new forward first");
  check(root->grad_fn || root->requires_grad,
        "backward: dead graph (no grad function reachable from loss)");

  // Postorder DFS gives a topological order; reverse of it is the sweep order.
  std::vector<detail::TensorImpl<T>*> order;
  std::unordered_set<detail::TensorImpl<T>*> seen;
  struct Frame {
    detail::TensorImpl<T>* node;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      detail::TensorImpl<T>* child = f.node->inputs[f.next_input++].get();
      if (child->needs_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl<T>* node = *it;
    if (node->grad_fn) {
      node->ensure_grad();
      node->grad_fn();
      check_finite(*node, "backward");
    }
  }
  // Release closures: the graph is spent. Leaves stay reusable.
  for (detail::TensorImpl<T>* node : order) {
    if (node->grad_fn) {
      node->grad_fn = nullptr;
      node->backward_done = true;
    }
  }
  root->backward_done = true;
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(Tensor<float>);
template void backward<double>(Tensor<double>);
template void check_finite<float>(const detail::TensorImpl<float>&, const char*);
template void check_finite<double>(const detail::TensorImpl<double>&, const char*);

}  // namespace gatecrush
