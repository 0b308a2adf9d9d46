#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "duomodal/errors.hpp"

namespace duomodal {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

// Gradient recording is on by default; NoGradGuard turns it off for a scope.
inline thread_local int no_grad_depth = 0;

// C[m x n] (+)= A[m x k] * B[k x n], row-major. ikj order so the inner loop
// is a contiguous axpy that the compiler vectorizes.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A^T * B where A is [k x m], B is [k x n].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] (+)= A * B^T where A is [m x k], B is [n x k]. B is transposed
// into scratch first so the hot loop stays the contiguous nn kernel.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  thread_local std::vector<T> scratch;
  scratch.resize(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, scratch.data(), c, accumulate);
}

}  // namespace detail

class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <typename T>
struct TensorImplT {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // allocated lazily, same numel as data
  std::string name;     // set for parameters; used in diagnostics

  // graph edges (present only on op outputs that need grad)
  std::vector<std::shared_ptr<TensorImplT>> parents;
  std::function<void(TensorImplT&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

// Dense row-major tensor with reverse-mode autodiff. Value-semantic handle
// over shared storage; ops are free functions that record the graph.
template <typename T>
class TensorT {
 public:
  using Impl = TensorImplT<T>;

  TensorT() = default;
  explicit TensorT(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static TensorT filled(Shape shape, T value, bool requires_grad = false) {
    auto impl = std::make_shared<Impl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return TensorT(impl);
  }

  static TensorT from_vector(Shape shape, std::vector<T> values,
                             bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw_contract("tensor data size " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return TensorT(impl);
  }

  static TensorT scalar(T value) {
    return from_vector({}, std::vector<T>{value});
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const { return rank() == 2 ? impl_->shape[0] : 1; }
  std::size_t cols() const {
    return rank() == 0 ? 1 : impl_->shape[rank() - 1];
  }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& vec() { return impl_->data; }
  const std::vector<T>& vec() const { return impl_->data; }

  T item() const {
    if (numel() != 1)
      throw_contract("item() requires a scalar, got " + shape_str(shape()));
    return impl_->data[0];
  }

  T& at(std::size_t i, std::size_t j) {
    return impl_->data[i * cols() + j];
  }
  T at(std::size_t i, std::size_t j) const {
    return impl_->data[i * cols() + j];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  const std::string& name() const { return impl_->name; }
  TensorT& set_name(std::string n) {
    impl_->name = std::move(n);
    return *this;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::vector<T>& grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  const std::vector<T>& grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }

  void zero_grad() {
    impl_->ensure_grad();
    std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  // Reverse-mode pass from a scalar. Seeds d(self)/d(self) = seed; every
  // reachable requires_grad leaf accumulates into its grad buffer.
  void backward(T seed = T(1)) const {
    if (numel() != 1)
      throw_contract("backward() requires a scalar loss, got " +
                     shape_str(shape()));
    // iterative post-order DFS -> topological order
    std::vector<Impl*> order;
    std::unordered_set<Impl*> seen;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Impl* parent = node->parents[idx++].get();
        if (parent->backward_fn || parent->requires_grad) {
          if (seen.insert(parent).second) stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    impl_->ensure_grad();
    impl_->grad[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Impl* node = *it;
      if (node->backward_fn) node->backward_fn(*node);
    }
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

using Tensor = TensorT<float>;

namespace detail {

template <typename T>
TensorT<T> make_op_result(
    Shape shape, std::vector<T> data,
    std::vector<std::shared_ptr<TensorImplT<T>>> parents,
    std::function<void(TensorImplT<T>&)> backward_fn) {
  auto impl = std::make_shared<TensorImplT<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  if (grad_enabled())
    for (const auto& p : parents)
      if (p->requires_grad || p->backward_fn) needs = true;
  if (needs) {
    impl->requires_grad = true;
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return TensorT<T>(impl);
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                      const char* op) {
  if (a.shape() != b.shape())
    throw_contract(std::string(op) + ": shape mismatch " +
                   shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void check_matrix(const TensorT<T>& t, const char* op) {
  if (t.rank() != 2)
    throw_contract(std::string(op) + ": expected a matrix, got " +
                   shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast ops

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorImplT<T>& o) {
        if (pa->requires_grad || pa->backward_fn) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            pa->grad[i] += o.grad[i];
        }
        if (pb->requires_grad || pb->backward_fn) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            pb->grad[i] += o.grad[i];
        }
      });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorImplT<T>& o) {
        if (pa->requires_grad || pa->backward_fn) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            pa->grad[i] += o.grad[i] * pb->data[i];
        }
        if (pb->requires_grad || pb->backward_fn) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            pb->grad[i] += o.grad[i] * pa->data[i];
        }
      });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto pa = a.impl();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {pa}, [pa, c](TensorImplT<T>& o) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          pa->grad[i] += o.grad[i] * c;
      });
}

// a is [L x n]; v has n elements (rank 1 or [1 x n]) broadcast over rows.
template <typename T>
TensorT<T> add_row_vector(const TensorT<T>& a, const TensorT<T>& v) {
  detail::check_matrix(a, "add_row_vector");
  const std::size_t L = a.rows(), n = a.cols();
  if (v.numel() != n)
    throw_contract("add_row_vector: vector size " + shape_str(v.shape()) +
                   " does not match row width " + std::to_string(n));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = a.data()[i * n + j] + v.data()[j];
  auto pa = a.impl(), pv = v.impl();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {pa, pv}, [pa, pv, L, n](TensorImplT<T>& o) {
        if (pa->requires_grad || pa->backward_fn) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < o.grad.size(); ++i)
            pa->grad[i] += o.grad[i];
        }
        if (pv->requires_grad || pv->backward_fn) {
          pv->ensure_grad();
          for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < n; ++j)
              pv->grad[j] += o.grad[i * n + j];
        }
      });
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
  std::vector<T> out(a.numel());
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.data()[i];
    out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  auto pa = a.impl();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {pa}, [pa, inv_sqrt2](TensorImplT<T>& o) {
        pa->ensure_grad();
        const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const T x = pa->data[i];
          const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
          pa->grad[i] += o.grad[i] * (cdf + x * pdf);
        }
      });
}

// ---------------------------------------------------------------------------
// matrix products

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_matrix(a, "matmul");
  detail::check_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw_contract("matmul: inner dimensions disagree " +
                   shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<T> out(m * n);
  detail::gemm_nn(m, n, k, a.data(), b.data(), out.data(), false);
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op_result<T>(
      {m, n}, std::move(out), {pa, pb}, [pa, pb, m, n, k](TensorImplT<T>& o) {
        if (pa->requires_grad || pa->backward_fn) {
          pa->ensure_grad();
          detail::gemm_nt(m, k, n, o.grad.data(), pb->data.data(),
                          pa->grad.data(), true);
        }
        if (pb->requires_grad || pb->backward_fn) {
          pb->ensure_grad();
          detail::gemm_tn(k, n, m, pa->data.data(), o.grad.data(),
                          pb->grad.data(), true);
        }
      });
}

// a[m x k] * b[n x k]^T -> [m x n]
template <typename T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_matrix(a, "matmul_nt");
  detail::check_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw_contract("matmul_nt: inner dimensions disagree " +
                   shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  std::vector<T> out(m * n);
  detail::gemm_nt(m, n, k, a.data(), b.data(), out.data(), false);
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op_result<T>(
      {m, n}, std::move(out), {pa, pb}, [pa, pb, m, n, k](TensorImplT<T>& o) {
        if (pa->requires_grad || pa->backward_fn) {
          pa->ensure_grad();
          detail::gemm_nn(m, k, n, o.grad.data(), pb->data.data(),
                          pa->grad.data(), true);
        }
        if (pb->requires_grad || pb->backward_fn) {
          pb->ensure_grad();
          detail::gemm_tn(n, k, m, o.grad.data(), pa->data.data(),
                          pb->grad.data(), true);
        }
      });
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
  detail::check_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  auto pa = a.impl();
  return detail::make_op_result<T>(
      {n, m}, std::move(out), {pa}, [pa, m, n](TensorImplT<T>& o) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            pa->grad[i * n + j] += o.grad[j * m + i];
      });
}

// ---------------------------------------------------------------------------
// normalization and softmax

// Softmax along the last axis; numerically stabilized by max subtraction.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& a) {
  if (a.rank() < 1)
    throw_contract("softmax_rows: rank >= 1 required, got " +
                   shape_str(a.shape()));
  const std::size_t n = a.shape().back();
  const std::size_t L = a.numel() / n;
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < L; ++i) {
    const T* row = a.data() + i * n;
    T* orow = out.data() + i * n;
    T mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
  }
  auto pa = a.impl();
  std::vector<T> y = out;  // cached softmax values for the backward rule
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {pa},
      [pa, y = std::move(y), L, n](TensorImplT<T>& o) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < L; ++i) {
          const T* yr = y.data() + i * n;
          const T* gr = o.grad.data() + i * n;
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
          T* pr = pa->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j)
            pr[j] += yr[j] * (gr[j] - dot);
        }
      });
}

// Softmax along an arbitrary axis of a rank <= 2 tensor (last axis for any
// rank). Axis 0 of a matrix goes through a transpose round trip.
template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
  const int r = static_cast<int>(a.rank());
  if (axis < 0) axis += r;
  if (axis == r - 1 || r <= 1) return softmax_rows(a);
  if (r == 2 && axis == 0) return transpose(softmax_rows(transpose(a)));
  throw_contract("softmax: unsupported axis " + std::to_string(axis) +
                 " for shape " + shape_str(a.shape()));
}

// Per-row standardization followed by an affine map: gain * x_hat + bias.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps = T(1e-5)) {
  detail::check_matrix(x, "layer_norm");
  const std::size_t L = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d)
    throw_contract("layer_norm: gain/bias width mismatch with " +
                   shape_str(x.shape()));
  std::vector<T> out(L * d), xhat(L * d), inv_std(L);
  for (std::size_t i = 0; i < L; ++i) {
    const T* row = x.data() + i * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (row[j] - mean) * inv;
      xhat[i * d + j] = xh;
      out[i * d + j] = gain.data()[j] * xh + bias.data()[j];
    }
  }
  auto px = x.impl(), pg = gain.impl(), pb = bias.impl();
  return detail::make_op_result<T>(
      x.shape(), std::move(out), {px, pg, pb},
      [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), L,
       d](TensorImplT<T>& o) {
        const bool want_g = pg->requires_grad || pg->backward_fn;
        const bool want_b = pb->requires_grad || pb->backward_fn;
        const bool want_x = px->requires_grad || px->backward_fn;
        if (want_g) pg->ensure_grad();
        if (want_b) pb->ensure_grad();
        if (want_x) px->ensure_grad();
        for (std::size_t i = 0; i < L; ++i) {
          const T* gr = o.grad.data() + i * d;
          const T* xh = xhat.data() + i * d;
          if (want_g || want_b) {
            for (std::size_t j = 0; j < d; ++j) {
              if (want_g) pg->grad[j] += gr[j] * xh[j];
              if (want_b) pb->grad[j] += gr[j];
            }
          }
          if (want_x) {
            // dxhat = dy * gain; dx = inv_std*(dxhat - mean(dxhat)
            //                                  - xhat*mean(dxhat*xhat))
            T mean_dxh = T(0), mean_dxh_xh = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = gr[j] * pg->data[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= T(d);
            mean_dxh_xh /= T(d);
            T* pxr = px->grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = gr[j] * pg->data[j];
              pxr[j] += inv_std[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// structural ops

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& a, std::size_t start,
                      std::size_t len) {
  detail::check_matrix(a, "slice_cols");
  const std::size_t L = a.rows(), n = a.cols();
  if (start + len > n)
    throw_contract("slice_cols: range [" + std::to_string(start) + ", " +
                   std::to_string(start + len) + ") exceeds width " +
                   std::to_string(n));
  std::vector<T> out(L * len);
  for (std::size_t i = 0; i < L; ++i)
    std::copy(a.data() + i * n + start, a.data() + i * n + start + len,
              out.data() + i * len);
  auto pa = a.impl();
  return detail::make_op_result<T>(
      {L, len}, std::move(out), {pa}, [pa, start, len, L, n](TensorImplT<T>& o) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j < len; ++j)
            pa->grad[i * n + start + j] += o.grad[i * len + j];
      });
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
  check_contract(!parts.empty(), "concat_cols: no inputs");
  const std::size_t L = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_matrix(p, "concat_cols");
    if (p.rows() != L)
      throw_contract("concat_cols: row count mismatch " +
                     shape_str(parts[0].shape()) + " vs " +
                     shape_str(p.shape()));
    total += p.cols();
  }
  std::vector<T> out(L * total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < L; ++i)
      std::copy(p.data() + i * w, p.data() + (i + 1) * w,
                out.data() + i * total + off);
    off += w;
  }
  std::vector<std::shared_ptr<TensorImplT<T>>> impls;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    widths.push_back(p.cols());
  }
  return detail::make_op_result<T>(
      {L, total}, std::move(out), impls,
      [impls, widths, L, total](TensorImplT<T>& o) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < impls.size(); ++pi) {
          auto& p = impls[pi];
          const std::size_t w = widths[pi];
          if (p->requires_grad || p->backward_fn) {
            p->ensure_grad();
            for (std::size_t i = 0; i < L; ++i)
              for (std::size_t j = 0; j < w; ++j)
                p->grad[i * w + j] += o.grad[i * total + off + j];
          }
          off += w;
        }
      });
}

template <typename T>
TensorT<T> concat_rows(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_matrix(a, "concat_rows");
  detail::check_matrix(b, "concat_rows");
  if (a.cols() != b.cols())
    throw_contract("concat_rows: width mismatch " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
  const std::size_t la = a.rows(), lb = b.rows(), n = a.cols();
  std::vector<T> out(a.numel() + b.numel());
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op_result<T>(
      {la + lb, n}, std::move(out), {pa, pb}, [pa, pb, la, lb, n](TensorImplT<T>& o) {
        if (pa->requires_grad || pa->backward_fn) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < la * n; ++i) pa->grad[i] += o.grad[i];
        }
        if (pb->requires_grad || pb->backward_fn) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < lb * n; ++i)
            pb->grad[i] += o.grad[la * n + i];
        }
      });
}

// Row-wise select: rows where take_b is true come from b, the rest from a.
template <typename T>
TensorT<T> blend_rows(const TensorT<T>& a, const TensorT<T>& b,
                      const std::vector<std::uint8_t>& take_b) {
  detail::check_same_shape(a, b, "blend_rows");
  detail::check_matrix(a, "blend_rows");
  const std::size_t L = a.rows(), n = a.cols();
  if (take_b.size() != L)
    throw_contract("blend_rows: mask length " + std::to_string(take_b.size()) +
                   " does not match row count " + std::to_string(L));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < L; ++i) {
    const T* src = (take_b[i] ? b.data() : a.data()) + i * n;
    std::copy(src, src + n, out.data() + i * n);
  }
  auto pa = a.impl(), pb = b.impl();
  return detail::make_op_result<T>(
      a.shape(), std::move(out), {pa, pb},
      [pa, pb, take_b, L, n](TensorImplT<T>& o) {
        for (std::size_t i = 0; i < L; ++i) {
          auto& p = take_b[i] ? pb : pa;
          if (p->requires_grad || p->backward_fn) {
            p->ensure_grad();
            for (std::size_t j = 0; j < n; ++j)
              p->grad[i * n + j] += o.grad[i * n + j];
          }
        }
      });
}

// Mean over rows where include[i] is true -> [1 x d].
template <typename T>
TensorT<T> mean_rows_masked(const TensorT<T>& x,
                            const std::vector<std::uint8_t>& include) {
  detail::check_matrix(x, "mean_rows_masked");
  const std::size_t L = x.rows(), d = x.cols();
  if (include.size() != L)
    throw_contract("mean_rows_masked: mask length mismatch");
  std::size_t count = 0;
  for (auto v : include) count += v ? 1 : 0;
  check_contract(count > 0, "mean_rows_masked: no rows included");
  std::vector<T> out(d, T(0));
  for (std::size_t i = 0; i < L; ++i)
    if (include[i])
      for (std::size_t j = 0; j < d; ++j) out[j] += x.data()[i * d + j];
  const T inv = T(1) / T(count);
  for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
  auto px = x.impl();
  return detail::make_op_result<T>(
      {1, d}, std::move(out), {px}, [px, include, L, d, inv](TensorImplT<T>& o) {
        px->ensure_grad();
        for (std::size_t i = 0; i < L; ++i)
          if (include[i])
            for (std::size_t j = 0; j < d; ++j)
              px->grad[i * d + j] += o.grad[j] * inv;
      });
}

// Rows of `table` gathered by id -> [ids.size() x d].
template <typename T>
TensorT<T> embedding_lookup(const TensorT<T>& table,
                            const std::vector<std::int64_t>& ids) {
  detail::check_matrix(table, "embedding_lookup");
  const std::size_t V = table.rows(), d = table.cols();
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V)
      throw_contract("embedding_lookup: id " + std::to_string(ids[i]) +
                     " out of range [0, " + std::to_string(V) + ")");
    std::copy(table.data() + ids[i] * d, table.data() + (ids[i] + 1) * d,
              out.data() + i * d);
  }
  auto pt = table.impl();
  return detail::make_op_result<T>(
      {ids.size(), d}, std::move(out), {pt}, [pt, ids, d](TensorImplT<T>& o) {
        pt->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < d; ++j)
            pt->grad[ids[i] * d + j] += o.grad[i * d + j];
      });
}

// ---------------------------------------------------------------------------
// reductions and losses

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
  T s = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  auto pa = a.impl();
  return detail::make_op_result<T>(
      {}, std::vector<T>{s}, {pa}, [pa](TensorImplT<T>& o) {
        pa->ensure_grad();
        for (auto& g : pa->grad) g += o.grad[0];
      });
}

// Mean negative log-likelihood over positions where position_mask is true.
// Empty mask argument means all positions count.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits,
                         const std::vector<std::int64_t>& targets,
                         const std::vector<std::uint8_t>& position_mask = {}) {
  detail::check_matrix(logits, "cross_entropy");
  const std::size_t L = logits.rows(), V = logits.cols();
  if (targets.size() != L)
    throw_contract("cross_entropy: " + std::to_string(targets.size()) +
                   " targets for " + std::to_string(L) + " positions");
  if (!position_mask.empty() && position_mask.size() != L)
    throw_contract("cross_entropy: mask length mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < L; ++i)
    if (position_mask.empty() || position_mask[i]) ++count;
  check_contract(count > 0, "cross_entropy: no positions selected by mask");

  std::vector<T> probs(L * V);  // softmax rows cached for backward
  T loss = T(0);
  for (std::size_t i = 0; i < L; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= V)
      throw_contract("cross_entropy: target " + std::to_string(targets[i]) +
                     " out of vocabulary range [0, " + std::to_string(V) +
                     ")");
    const bool active = position_mask.empty() || position_mask[i];
    const T* row = logits.data() + i * V;
    T mx = row[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    T sum_exp = T(0);
    T* pr = probs.data() + i * V;
    for (std::size_t j = 0; j < V; ++j) {
      pr[j] = std::exp(row[j] - mx);
      sum_exp += pr[j];
    }
    const T inv = T(1) / sum_exp;
    for (std::size_t j = 0; j < V; ++j) pr[j] *= inv;
    if (active) loss += std::log(sum_exp) + mx - row[targets[i]];
  }
  loss /= T(count);
  auto pl = logits.impl();
  return detail::make_op_result<T>(
      {}, std::vector<T>{loss}, {pl},
      [pl, targets, position_mask, probs = std::move(probs), L, V,
       count](TensorImplT<T>& o) {
        pl->ensure_grad();
        const T g = o.grad[0] / T(count);
        for (std::size_t i = 0; i < L; ++i) {
          if (!position_mask.empty() && !position_mask[i]) continue;
          const T* pr = probs.data() + i * V;
          T* gr = pl->grad.data() + i * V;
          for (std::size_t j = 0; j < V; ++j) gr[j] += g * pr[j];
          gr[targets[i]] -= g;
        }
      });
}

// Mean absolute difference over rows where position_mask is true, averaged
// over features. Empty mask means all rows count.
template <typename T>
TensorT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& target,
                   const std::vector<std::uint8_t>& position_mask = {}) {
  detail::check_same_shape(pred, target, "l1_loss");
  detail::check_matrix(pred, "l1_loss");
  const std::size_t L = pred.rows(), F = pred.cols();
  if (!position_mask.empty() && position_mask.size() != L)
    throw_contract("l1_loss: mask length mismatch");
  std::size_t count = 0;
  for (std::size_t i = 0; i < L; ++i)
    if (position_mask.empty() || position_mask[i]) ++count;
  check_contract(count > 0, "l1_loss: no positions selected by mask");
  T loss = T(0);
  for (std::size_t i = 0; i < L; ++i) {
    if (!position_mask.empty() && !position_mask[i]) continue;
    for (std::size_t j = 0; j < F; ++j)
      loss += std::abs(pred.data()[i * F + j] - target.data()[i * F + j]);
  }
  const T denom = T(count) * T(F);
  loss /= denom;
  auto pp = pred.impl(), pt = target.impl();
  return detail::make_op_result<T>(
      {}, std::vector<T>{loss}, {pp, pt},
      [pp, pt, position_mask, L, F, denom](TensorImplT<T>& o) {
        const T g = o.grad[0] / denom;
        const bool want_p = pp->requires_grad || pp->backward_fn;
        const bool want_t = pt->requires_grad || pt->backward_fn;
        if (want_p) pp->ensure_grad();
        if (want_t) pt->ensure_grad();
        for (std::size_t i = 0; i < L; ++i) {
          if (!position_mask.empty() && !position_mask[i]) continue;
          for (std::size_t j = 0; j < F; ++j) {
            const T diff = pp->data[i * F + j] - pt->data[i * F + j];
            const T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
            if (want_p) pp->grad[i * F + j] += g * s;
            if (want_t) pt->grad[i * F + j] -= g * s;
          }
        }
      });
}

template <typename T>
bool all_finite(const TensorT<T>& t) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t.data()[i])) return false;
  return true;
}

}  // namespace duomodal
