#include "gatecrush/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace gatecrush {
namespace detail {

template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C) {
  parallel_for(M, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* a = A + i * K;
      T* c = C + i * N;
      for (int64_t k = 0; k < K; ++k) {
        const T av = a[k];
        const T* b = B + k * N;
        for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  });
}

template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C) {
  parallel_for(M, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* a = A + i * K;
      T* c = C + i * N;
      for (int64_t j = 0; j < N; ++j) {
        const T* b = B + j * K;
        T acc = T(0);
        for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
        c[j] += acc;
      }
    }
  });
}

template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C) {
  parallel_for(M, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* c = C + i * N;
      for (int64_t k = 0; k < K; ++k) {
        const T av = A[k * M + i];
        const T* b = B + k * N;
        for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  });
}

template <typename T>
Tensor<T> make_op(std::vector<int64_t> shape, const char* op,
                  std::initializer_list<Tensor<T>> inputs) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<size_t>(impl->numel()), T(0));
  impl->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.impl()->needs_grad;
  impl->needs_grad = needs;
  if (needs) {
    impl->inputs.reserve(inputs.size());
    for (const auto& in : inputs) impl->inputs.push_back(in.impl());
  }
  return Tensor<T>(impl);
}

template <typename T>
void accumulate(TensorImpl<T>* dst, const std::vector<T>& contrib) {
  if (!dst->needs_grad) return;
  dst->ensure_grad();
  for (size_t i = 0; i < contrib.size(); ++i) dst->grad[i] += contrib[i];
}

// im2col for one image: x[C,H,W] -> cols[C*KH*KW, Ho*Wo]
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* cols) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < KH; ++ki) {
      for (int64_t kj = 0; kj < KW; ++kj) {
        T* col = cols + ((c * KH + ki) * KW + kj) * (Ho * Wo);
        for (int64_t ho = 0; ho < Ho; ++ho) {
          const int64_t h = ho * stride - pad + ki;
          if (h < 0 || h >= H) {
            std::fill(col + ho * Wo, col + (ho + 1) * Wo, T(0));
            continue;
          }
          const T* row = x + (c * H + h) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const int64_t w = wo * stride - pad + kj;
            col[ho * Wo + wo] = (w >= 0 && w < W) ? row[w] : T(0);
          }
        }
      }
    }
  }
}

// scatter-add of cols gradient back to the image
template <typename T>
void col2im(const T* cols, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, T* dx) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ki = 0; ki < KH; ++ki) {
      for (int64_t kj = 0; kj < KW; ++kj) {
        const T* col = cols + ((c * KH + ki) * KW + kj) * (Ho * Wo);
        for (int64_t ho = 0; ho < Ho; ++ho) {
          const int64_t h = ho * stride - pad + ki;
          if (h < 0 || h >= H) continue;
          T* row = dx + (c * H + h) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const int64_t w = wo * stride - pad + kj;
            if (w >= 0 && w < W) row[w] += col[ho * Wo + wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

using detail::make_op;
using detail::TensorImpl;

namespace {

template <typename T>
void finite(const Tensor<T>& t) {
  check_finite(*t.impl(), "forward");
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch");
  auto out = make_op<T>(a.shape(), "add", {a, b});
  auto& o = out.data_vec();
  const auto& av = a.data_vec();
  const auto& bv = b.data_vec();
  for (size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    auto* bi = b.impl().get();
    out.impl()->grad_fn = [oi, ai, bi] {
      for (auto* in : {ai, bi}) {
        if (!in->needs_grad) continue;
        in->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) in->grad[i] += oi->grad[i];
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch");
  auto out = make_op<T>(a.shape(), "sub", {a, b});
  auto& o = out.data_vec();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a.data_vec()[i] - b.data_vec()[i];
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    auto* bi = b.impl().get();
    out.impl()->grad_fn = [oi, ai, bi] {
      if (ai->needs_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->needs_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch");
  auto out = make_op<T>(a.shape(), "mul", {a, b});
  auto& o = out.data_vec();
  for (size_t i = 0; i < o.size(); ++i) o[i] = a.data_vec()[i] * b.data_vec()[i];
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    auto* bi = b.impl().get();
    out.impl()->grad_fn = [oi, ai, bi] {
      if (ai->needs_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
      }
      if (bi->needs_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
  auto out = make_op<T>(a.shape(), "scale", {a});
  const T sv = static_cast<T>(s);
  for (size_t i = 0; i < out.data_vec().size(); ++i) out.data_vec()[i] = a.data_vec()[i] * sv;
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    out.impl()->grad_fn = [oi, ai, sv] {
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * sv;
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& a, double c) {
  auto out = make_op<T>(a.shape(), "add_const", {a});
  const T cv = static_cast<T>(c);
  for (size_t i = 0; i < out.data_vec().size(); ++i) out.data_vec()[i] = a.data_vec()[i] + cv;
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    out.impl()->grad_fn = [oi, ai] {
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> log1p_elem(const Tensor<T>& a) {
  auto out = make_op<T>(a.shape(), "log1p", {a});
  for (size_t i = 0; i < out.data_vec().size(); ++i) {
    check(a.data_vec()[i] >= T(0), "log1p: negative efficiency value");
    out.data_vec()[i] = std::log1p(a.data_vec()[i]);
  }
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    out.impl()->grad_fn = [oi, ai] {
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i)
        ai->grad[i] += oi->grad[i] / (T(1) + ai->data[i]);
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  check(n == a.numel(), "reshape: element count mismatch");
  auto out = make_op<T>(std::move(shape), "reshape", {a});
  out.data_vec() = a.data_vec();
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    out.impl()->grad_fn = [oi, ai] {
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> concat1d(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() == 1 && b.rank() == 1, "concat1d: rank-1 tensors required");
  auto out = make_op<T>({a.dim(0) + b.dim(0)}, "concat1d", {a, b});
  std::copy(a.data_vec().begin(), a.data_vec().end(), out.data_vec().begin());
  std::copy(b.data_vec().begin(), b.data_vec().end(),
            out.data_vec().begin() + static_cast<size_t>(a.dim(0)));
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    auto* bi = b.impl().get();
    const size_t na = a.data_vec().size();
    out.impl()->grad_fn = [oi, ai, bi, na] {
      if (ai->needs_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < na; ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->needs_grad) {
        bi->ensure_grad();
        for (size_t i = na; i < oi->grad.size(); ++i) bi->grad[i - na] += oi->grad[i];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> pack(const std::vector<Tensor<T>>& scalars) {
  check(!scalars.empty(), "pack: empty input");
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = {static_cast<int64_t>(scalars.size())};
  impl->data.resize(scalars.size());
  impl->op = "pack";
  bool needs = false;
  for (const auto& s : scalars) {
    check(s.numel() == 1, "pack: inputs must be scalars");
    needs = needs || s.impl()->needs_grad;
  }
  impl->needs_grad = needs;
  for (size_t i = 0; i < scalars.size(); ++i) impl->data[i] = scalars[i].item();
  if (needs) {
    for (const auto& s : scalars) impl->inputs.push_back(s.impl());
    auto* oi = impl.get();
    impl->grad_fn = [oi] {
      for (size_t i = 0; i < oi->inputs.size(); ++i) {
        auto& in = oi->inputs[i];
        if (!in->needs_grad) continue;
        in->ensure_grad();
        in->grad[0] += oi->grad[i];
      }
    };
  }
  auto out = Tensor<T>(impl);
  finite(out);
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  auto out = make_op<T>({1}, "sum", {a});
  T acc = T(0);
  for (const T& v : a.data_vec()) acc += v;
  out.data_vec()[0] = acc;
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    out.impl()->grad_fn = [oi, ai] {
      ai->ensure_grad();
      const T g = oi->grad[0];
      for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += g;
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> matvec(const Tensor<T>& a, const Tensor<T>& v) {
  check(a.rank() == 2 && v.rank() == 1, "matvec: need [C,D] and [D]");
  check(a.dim(1) == v.dim(0), "matvec: dimension mismatch");
  const int64_t C = a.dim(0), D = a.dim(1);
  auto out = make_op<T>({C}, "matvec", {a, v});
  for (int64_t i = 0; i < C; ++i) {
    T acc = T(0);
    const T* row = a.data().data() + i * D;
    for (int64_t d = 0; d < D; ++d) acc += row[d] * v.data()[d];
    out.data_vec()[static_cast<size_t>(i)] = acc;
  }
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* ai = a.impl().get();
    auto* vi = v.impl().get();
    out.impl()->grad_fn = [oi, ai, vi, C, D] {
      if (ai->needs_grad) {
        ai->ensure_grad();
        for (int64_t i = 0; i < C; ++i) {
          const T g = oi->grad[static_cast<size_t>(i)];
          for (int64_t d = 0; d < D; ++d) ai->grad[i * D + d] += g * vi->data[d];
        }
      }
      if (vi->needs_grad) {
        vi->ensure_grad();
        for (int64_t i = 0; i < C; ++i) {
          const T g = oi->grad[static_cast<size_t>(i)];
          for (int64_t d = 0; d < D; ++d) vi->grad[d] += g * ai->data[i * D + d];
        }
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> broadcast_add_scalar(const Tensor<T>& vec, const Tensor<T>& scalar) {
  check(scalar.numel() == 1, "broadcast_add_scalar: scalar tensor required");
  auto out = make_op<T>(vec.shape(), "broadcast_add_scalar", {vec, scalar});
  const T s = scalar.item();
  for (size_t i = 0; i < out.data_vec().size(); ++i) out.data_vec()[i] = vec.data_vec()[i] + s;
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* vi = vec.impl().get();
    auto* si = scalar.impl().get();
    out.impl()->grad_fn = [oi, vi, si] {
      if (vi->needs_grad) {
        vi->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) vi->grad[i] += oi->grad[i];
      }
      if (si->needs_grad) {
        si->ensure_grad();
        T acc = T(0);
        for (size_t i = 0; i < oi->grad.size(); ++i) acc += oi->grad[i];
        si->grad[0] += acc;
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto out = make_op<T>(x.shape(), "relu", {x});
  for (size_t i = 0; i < out.data_vec().size(); ++i)
    out.data_vec()[i] = x.data_vec()[i] > T(0) ? x.data_vec()[i] : T(0);
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* xi = x.impl().get();
    out.impl()->grad_fn = [oi, xi] {
      xi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i)
        if (oi->data[i] > T(0)) xi->grad[i] += oi->grad[i];
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding) {
  check(x.rank() == 4 && w.rank() == 4, "conv2d: NCHW input and OIHW weights required");
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(padding >= 0, "conv2d: padding must be >= 0");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  check(w.dim(1) == C, "conv2d: input channel count does not match weights");
  // floor semantics: k3/s2/p1 downsampling never divides evenly on even maps
  const int64_t Ho = (H + 2 * padding - KH) / stride + 1;
  const int64_t Wo = (W + 2 * padding - KW) / stride + 1;
  check(H + 2 * padding - KH >= 0 && W + 2 * padding - KW >= 0 && Ho >= 1 && Wo >= 1,
        "conv2d: non-integer or empty output size");

  const int64_t CKK = C * KH * KW;
  auto out = make_op<T>({N, O, Ho, Wo}, "conv2d", {x, w});
  std::vector<T> cols(static_cast<size_t>(CKK * Ho * Wo));
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col(x.data().data() + n * C * H * W, C, H, W, KH, KW, stride, padding, Ho, Wo,
                   cols.data());
    detail::gemm_nn(O, Ho * Wo, CKK, w.data().data(),
                    cols.data(), out.data().data() + n * O * Ho * Wo);
  }

  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* xi = x.impl().get();
    auto* wi = w.impl().get();
    const int s = stride, p = padding;
    out.impl()->grad_fn = [oi, xi, wi, N, C, H, W, O, KH, KW, Ho, Wo, CKK, s, p] {
      std::vector<T> cols(static_cast<size_t>(CKK * Ho * Wo));
      std::vector<T> dcols;
      if (xi->needs_grad) {
        xi->ensure_grad();
        dcols.resize(static_cast<size_t>(CKK * Ho * Wo));
      }
      if (wi->needs_grad) wi->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        const T* dy = oi->grad.data() + n * O * Ho * Wo;
        if (wi->needs_grad || xi->needs_grad) {
          detail::im2col(xi->data.data() + n * C * H * W, C, H, W, KH, KW, s, p, Ho, Wo,
                         cols.data());
        }
        if (wi->needs_grad) {
          detail::gemm_nt(O, CKK, Ho * Wo, dy, cols.data(), wi->grad.data());
        }
        if (xi->needs_grad) {
          std::fill(dcols.begin(), dcols.end(), T(0));
          detail::gemm_tn(CKK, Ho * Wo, O, wi->data.data(), dy, dcols.data());
          detail::col2im(dcols.data(), C, H, W, KH, KW, s, p, Ho, Wo,
                         xi->grad.data() + n * C * H * W);
        }
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check(x.rank() == 2 && w.rank() == 2 && b.rank() == 1, "linear: need x[N,D], w[D,O], b[O]");
  const int64_t N = x.dim(0), D = x.dim(1), O = w.dim(1);
  check(w.dim(0) == D, "linear: weight rows do not match input features");
  check(b.dim(0) == O, "linear: bias length does not match output features");
  auto out = make_op<T>({N, O}, "linear", {x, w, b});
  for (int64_t n = 0; n < N; ++n)
    std::copy(b.data_vec().begin(), b.data_vec().end(), out.data_vec().begin() + n * O);
  detail::gemm_nn(N, O, D, x.data().data(), w.data().data(), out.data().data());
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* xi = x.impl().get();
    auto* wi = w.impl().get();
    auto* bi = b.impl().get();
    out.impl()->grad_fn = [oi, xi, wi, bi, N, D, O] {
      if (xi->needs_grad) {
        xi->ensure_grad();
        detail::gemm_nt(N, D, O, oi->grad.data(), wi->data.data(), xi->grad.data());
      }
      if (wi->needs_grad) {
        wi->ensure_grad();
        detail::gemm_tn(D, O, N, xi->data.data(), oi->grad.data(), wi->grad.data());
      }
      if (bi->needs_grad) {
        bi->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < O; ++o) bi->grad[o] += oi->grad[n * O + o];
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride) {
  check(x.rank() == 4, "maxpool2d: NCHW input required");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check((H - k) % stride == 0 && (W - k) % stride == 0, "maxpool2d: non-integer output size");
  const int64_t Ho = (H - k) / stride + 1, Wo = (W - k) / stride + 1;
  auto out = make_op<T>({N, C, Ho, Wo}, "maxpool2d", {x});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(N * C * Ho * Wo));
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = x.data().data() + (n * C + c) * H * W;
      for (int64_t ho = 0; ho < Ho; ++ho) {
        for (int64_t wo = 0; wo < Wo; ++wo) {
          int64_t best = (ho * stride) * W + wo * stride;
          T bv = plane[best];
          for (int64_t ki = 0; ki < k; ++ki) {
            for (int64_t kj = 0; kj < k; ++kj) {
              const int64_t idx = (ho * stride + ki) * W + (wo * stride + kj);
              if (plane[idx] > bv) {
                bv = plane[idx];
                best = idx;
              }
            }
          }
          const int64_t oidx = ((n * C + c) * Ho + ho) * Wo + wo;
          out.data_vec()[static_cast<size_t>(oidx)] = bv;
          (*argmax)[static_cast<size_t>(oidx)] = (n * C + c) * H * W + best;
        }
      }
    }
  }
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* xi = x.impl().get();
    out.impl()->grad_fn = [oi, xi, argmax] {
      xi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i)
        xi->grad[static_cast<size_t>((*argmax)[i])] += oi->grad[i];
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& x) {
  check(x.rank() == 4, "global_avgpool: NCHW input required");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const T inv = T(1) / static_cast<T>(H * W);
  auto out = make_op<T>({N, C}, "global_avgpool", {x});
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = x.data().data() + (n * C + c) * H * W;
      T acc = T(0);
      for (int64_t i = 0; i < H * W; ++i) acc += plane[i];
      out.data_vec()[static_cast<size_t>(n * C + c)] = acc * inv;
    }
  }
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* xi = x.impl().get();
    out.impl()->grad_fn = [oi, xi, N, C, H, W, inv] {
      xi->ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < C; ++c) {
          const T g = oi->grad[static_cast<size_t>(n * C + c)] * inv;
          T* plane = xi->grad.data() + (n * C + c) * H * W;
          for (int64_t i = 0; i < H * W; ++i) plane[i] += g;
        }
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int32_t>& labels) {
  check(logits.rank() == 2, "cross_entropy: logits must be [N,K]");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  check(N > 0, "cross_entropy: empty batch");
  check(static_cast<int64_t>(labels.size()) == N, "cross_entropy: label count mismatch");
  for (int32_t y : labels) check(y >= 0 && y < K, "cross_entropy: label out of range");

  auto out = make_op<T>({1}, "cross_entropy", {logits});
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(N * K));
  T loss = T(0);
  for (int64_t n = 0; n < N; ++n) {
    const T* z = logits.data().data() + n * K;
    T zmax = z[0];
    for (int64_t j = 1; j < K; ++j) zmax = std::max(zmax, z[j]);
    T denom = T(0);
    for (int64_t j = 0; j < K; ++j) denom += std::exp(z[j] - zmax);
    const T logdenom = std::log(denom) + zmax;
    for (int64_t j = 0; j < K; ++j)
      (*probs)[static_cast<size_t>(n * K + j)] = std::exp(z[j] - logdenom);
    loss += logdenom - z[labels[static_cast<size_t>(n)]];
  }
  out.data_vec()[0] = loss / static_cast<T>(N);

  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* zi = logits.impl().get();
    auto lbl = std::make_shared<std::vector<int32_t>>(labels);
    out.impl()->grad_fn = [oi, zi, probs, lbl, N, K] {
      zi->ensure_grad();
      const T g = oi->grad[0] / static_cast<T>(N);
      for (int64_t n = 0; n < N; ++n) {
        const int64_t y = (*lbl)[static_cast<size_t>(n)];
        for (int64_t j = 0; j < K; ++j) {
          T p = (*probs)[static_cast<size_t>(n * K + j)];
          if (j == y) p -= T(1);
          zi->grad[n * K + j] += g * p;
        }
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& g) {
  check(x.rank() == 4 && g.rank() == 1, "channel_scale: NCHW input and [C] gates required");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(g.dim(0) == C, "channel_scale: gate length does not match channels");
  auto out = make_op<T>(x.shape(), "channel_scale", {x, g});
  const int64_t plane = H * W;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T gc = g.data()[static_cast<size_t>(c)];
      const T* src = x.data().data() + (n * C + c) * plane;
      T* dst = out.data().data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] * gc;
    }
  }
  if (out.impl()->needs_grad) {
    auto* oi = out.impl().get();
    auto* xi = x.impl().get();
    auto* gi = g.impl().get();
    out.impl()->grad_fn = [oi, xi, gi, N, C, plane] {
      if (xi->needs_grad) {
        xi->ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t c = 0; c < C; ++c) {
            const T gc = gi->data[static_cast<size_t>(c)];
            const T* dy = oi->grad.data() + (n * C + c) * plane;
            T* dx = xi->grad.data() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) dx[i] += dy[i] * gc;
          }
        }
      }
      if (gi->needs_grad) {
        gi->ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t c = 0; c < C; ++c) {
            const T* dy = oi->grad.data() + (n * C + c) * plane;
            const T* xv = xi->data.data() + (n * C + c) * plane;
            T acc = T(0);
            for (int64_t i = 0; i < plane; ++i) acc += dy[i] * xv[i];
            gi->grad[static_cast<size_t>(c)] += acc;
          }
        }
      }
    };
  }
  finite(out);
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, bool train,
                      double momentum, double eps) {
  check(x.rank() == 4, "batchnorm2d: NCHW input required");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(N > 0, "batchnorm2d: zero batch size");
  check(gamma.dim(0) == C && beta.dim(0) == C, "batchnorm2d: parameter channel mismatch");
  check(running_mean.dim(0) == C && running_var.dim(0) == C,
        "batchnorm2d: running stat channel mismatch");
  const int64_t plane = H * W;
  const int64_t m = N * plane;

  auto out = make_op<T>(x.shape(), "batchnorm2d", {x, gamma, beta});
  auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
  // normalized pre-affine values, saved for backward
  auto xhat = std::make_shared<std::vector<T>>();

  if (train) {
    for (int64_t c = 0; c < C; ++c) {
      T acc = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* src = x.data().data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += src[i];
      }
      (*mean)[static_cast<size_t>(c)] = acc / static_cast<T>(m);
    }
    for (int64_t c = 0; c < C; ++c) {
      const T mu = (*mean)[static_cast<size_t>(c)];
      T acc = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* src = x.data().data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const T d = src[i] - mu;
          acc += d * d;
        }
      }
      const T var = acc / static_cast<T>(m);  // population variance throughout
      (*inv_std)[static_cast<size_t>(c)] = T(1) / std::sqrt(var + static_cast<T>(eps));
      running_mean.data_vec()[static_cast<size_t>(c)] =
          static_cast<T>(1.0 - momentum) * running_mean.data_vec()[static_cast<size_t>(c)] +
          static_cast<T>(momentum) * mu;
      running_var.data_vec()[static_cast<size_t>(c)] =
          static_cast<T>(1.0 - momentum) * running_var.data_vec()[static_cast<size_t>(c)] +
          static_cast<T>(momentum) * var;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      (*mean)[static_cast<size_t>(c)] = running_mean.data_vec()[static_cast<size_t>(c)];
      (*inv_std)[static_cast<size_t>(c)] =
          T(1) / std::sqrt(running_var.data_vec()[static_cast<size_t>(c)] + static_cast<T>(eps));
    }
  }

  const bool needs = out.impl()->needs_grad;
  if (needs) xhat->resize(static_cast<size_t>(N * C * plane));
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const T mu = (*mean)[static_cast<size_t>(c)];
      const T is = (*inv_std)[static_cast<size_t>(c)];
      const T gc = gamma.data()[static_cast<size_t>(c)];
      const T bc = beta.data()[static_cast<size_t>(c)];
      const T* src = x.data().data() + (n * C + c) * plane;
      T* dst = out.data().data() + (n * C + c) * plane;
      if (needs) {
        T* xh = xhat->data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          xh[i] = (src[i] - mu) * is;
          dst[i] = gc * xh[i] + bc;
        }
      } else {
        for (int64_t i = 0; i < plane; ++i) dst[i] = gc * (src[i] - mu) * is + bc;
      }
    }
  }

  if (needs) {
    auto* oi = out.impl().get();
    auto* xi = x.impl().get();
    auto* gi = gamma.impl().get();
    auto* bi = beta.impl().get();
    out.impl()->grad_fn = [oi, xi, gi, bi, xhat, inv_std, N, C, plane, m, train] {
      for (int64_t c = 0; c < C; ++c) {
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int64_t n = 0; n < N; ++n) {
          const T* dy = oi->grad.data() + (n * C + c) * plane;
          const T* xh = xhat->data() + (n * C + c) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * xh[i];
          }
        }
        if (gi->needs_grad) {
          gi->ensure_grad();
          gi->grad[static_cast<size_t>(c)] += sum_dy_xhat;
        }
        if (bi->needs_grad) {
          bi->ensure_grad();
          bi->grad[static_cast<size_t>(c)] += sum_dy;
        }
        if (xi->needs_grad) {
          xi->ensure_grad();
          const T gc = gi->data[static_cast<size_t>(c)];
          const T is = (*inv_std)[static_cast<size_t>(c)];
          if (train) {
            const T inv_m = T(1) / static_cast<T>(m);
            for (int64_t n = 0; n < N; ++n) {
              const T* dy = oi->grad.data() + (n * C + c) * plane;
              const T* xh = xhat->data() + (n * C + c) * plane;
              T* dx = xi->grad.data() + (n * C + c) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                dx[i] += gc * is * (dy[i] - inv_m * sum_dy - xh[i] * inv_m * sum_dy_xhat);
              }
            }
          } else {
            for (int64_t n = 0; n < N; ++n) {
              const T* dy = oi->grad.data() + (n * C + c) * plane;
              T* dx = xi->grad.data() + (n * C + c) * plane;
              for (int64_t i = 0; i < plane; ++i) dx[i] += gc * is * dy[i];
            }
          }
        }
      }
    };
  }
  finite(out);
  return out;
}

#define GATECRUSH_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, double);                                         \
  template Tensor<T> add_const(const Tensor<T>&, double);                                     \
  template Tensor<T> log1p_elem(const Tensor<T>&);                                            \
  template Tensor<T> reshape(const Tensor<T>&, std::vector<int64_t>);                         \
  template Tensor<T> concat1d(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> pack(const std::vector<Tensor<T>>&);                                     \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> matvec(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> broadcast_add_scalar(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, int, int);                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> maxpool2d(const Tensor<T>&, int, int);                                   \
  template Tensor<T> global_avgpool(const Tensor<T>&);                                        \
  template Tensor<T> cross_entropy(const Tensor<T>&, const std::vector<int32_t>&);            \
  template Tensor<T> channel_scale(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                 Tensor<T>&, Tensor<T>&, bool, double, double);               \
  namespace detail {                                                                          \
  template void gemm_nn(int64_t, int64_t, int64_t, const T*, const T*, T*);                   \
  template void gemm_nt(int64_t, int64_t, int64_t, const T*, const T*, T*);                   \
  template void gemm_tn(int64_t, int64_t, int64_t, const T*, const T*, T*);                   \
  template Tensor<T> make_op(std::vector<int64_t>, const char*, std::initializer_list<Tensor<T>>); \
  }

GATECRUSH_INSTANTIATE_OPS(float)
GATECRUSH_INSTANTIATE_OPS(double)

}  // namespace gatecrush
