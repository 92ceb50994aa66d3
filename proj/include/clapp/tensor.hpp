// Copyright 2026 The CLAPP Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors and the handful of kernels the encoder needs:
// matrix products, 2D cross-correlation, max-pooling, ReLU, and the adjoints
// of each. Every kernel accumulates in a fixed row-major order so results are
// bit-stable across runs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "clapp/errors.hpp"

namespace clapp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T{1};
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  T& operator()(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  const T& operator()(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  T& operator()(std::size_t o, std::size_t c, std::size_t i, std::size_t j) {
    return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }
  const T& operator()(std::size_t o, std::size_t c, std::size_t i,
                      std::size_t j) const {
    return data_[((o * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " +
                           shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  Tensor flattened() const { return Tensor({size()}, data_); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator-=(const Tensor& other) {
    require_same_shape(other, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  /// this += alpha * other
  void axpy(T alpha, const Tensor& other) {
    require_same_shape(other, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
  }

  bool operator==(const Tensor& other) const = default;

  void require_same_shape(const Tensor& other, const char* op) const {
    if (shape_ != other.shape_) {
      throw DimensionError(std::string(op) + ": shape " + shape_str(shape_) +
                           " vs " + shape_str(other.shape_));
    }
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  a -= b;
  return a;
}

template <typename T>
Tensor<T> operator*(Tensor<T> a, T s) {
  a *= s;
  return a;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape(b, "hadamard");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  T s{0};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T l2_norm(const Tensor<T>& a) {
  T s{0};
  for (T v : a.data()) s += v * v;
  return std::sqrt(s);
}

template <typename T>
T max_abs(const Tensor<T>& a) {
  T m{0};
  for (T v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.data().begin(), a.data().end(),
                     [](T v) { return std::isfinite(v); });
}

/// ||a - b|| / ||b||; zero when both are zero, ||a|| when only b is zero.
template <typename T>
T relative_l2_error(const Tensor<T>& a, const Tensor<T>& b) {
  a.require_same_shape(b, "relative_l2_error");
  T diff{0}, ref{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  if (ref == T{0}) return std::sqrt(diff);
  return std::sqrt(diff / ref);
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T s{0};
      for (std::size_t l = 0; l < k; ++l) s += a(i, l) * b(l, j);
      c(i, j) = s;
    }
  }
  return c;
}

/// y = A x for A[m x n] and a length-n vector x (any shape with n elements).
template <typename T>
Tensor<T> matvec(const Tensor<T>& a, const Tensor<T>& x) {
  if (a.rank() != 2 || a.dim(1) != x.size()) {
    throw DimensionError("matvec " + shape_str(a.shape()) + " x " +
                         shape_str(x.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> y({m});
  for (std::size_t i = 0; i < m; ++i) {
    T s{0};
    for (std::size_t j = 0; j < n; ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

/// y = A^T x
template <typename T>
Tensor<T> matvec_transposed(const Tensor<T>& a, const Tensor<T>& x) {
  if (a.rank() != 2 || a.dim(0) != x.size()) {
    throw DimensionError("matvec_transposed " + shape_str(a.shape()) + " x " +
                         shape_str(x.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> y({n});
  for (std::size_t j = 0; j < n; ++j) {
    T s{0};
    for (std::size_t i = 0; i < m; ++i) s += a(i, j) * x[i];
    y[j] = s;
  }
  return y;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs a matrix");
  Tensor<T> t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
  return t;
}

/// out[i][j] = scale * u[i] * v[j]
template <typename T>
Tensor<T> outer(const Tensor<T>& u, const Tensor<T>& v, T scale = T{1}) {
  Tensor<T> out({u.size(), v.size()});
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) out(i, j) = scale * u[i] * v[j];
  return out;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T{0} ? a[i] : T{0};
  return out;
}

/// Subgradient with rho'(0) = 0.
template <typename T>
Tensor<T> relu_prime(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > T{0} ? T{1} : T{0};
  return out;
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k,
                                   std::size_t stride, std::size_t pad) {
  if (stride == 0) throw DimensionError("conv stride must be positive");
  const std::size_t padded = in + 2 * pad;
  if (padded < k || (padded - k) % stride != 0) {
    throw DimensionError("non-integral conv output extent: in=" +
                         std::to_string(in) + " k=" + std::to_string(k) +
                         " stride=" + std::to_string(stride) +
                         " pad=" + std::to_string(pad));
  }
  return (padded - k) / stride + 1;
}

/// Cross-correlation of x[Cin x H x W] with w[Cout x Cin x kh x kw]. Bias is
/// added by the caller.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, Conv2dGeometry g) {
  if (x.rank() != 3 || w.rank() != 4 || x.dim(0) != w.dim(1)) {
    throw DimensionError("conv2d input " + shape_str(x.shape()) + " kernel " +
                         shape_str(w.shape()));
  }
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = conv_out_extent(h, kh, g.stride, g.pad);
  const std::size_t ow = conv_out_extent(wd, kw, g.stride, g.pad);
  Tensor<T> out({cout, oh, ow});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        T s{0};
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t p = 0; p < kh; ++p) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + p) -
                                     static_cast<std::ptrdiff_t>(g.pad);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t q = 0; q < kw; ++q) {
              const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(j * g.stride + q) -
                                         static_cast<std::ptrdiff_t>(g.pad);
              if (col < 0 || col >= static_cast<std::ptrdiff_t>(wd)) continue;
              s += w(o, c, p, q) * x(c, static_cast<std::size_t>(r),
                                     static_cast<std::size_t>(col));
            }
          }
        }
        out(o, i, j) = s;
      }
    }
  }
  return out;
}

/// d<grad_out, conv2d(x, w)>/dw.
template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& grad_out,
                             std::size_t kh, std::size_t kw, Conv2dGeometry g) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2);
  if (oh != conv_out_extent(h, kh, g.stride, g.pad) ||
      ow != conv_out_extent(wd, kw, g.stride, g.pad)) {
    throw DimensionError("conv2d_weight_grad: upstream " +
                         shape_str(grad_out.shape()) + " does not match input " +
                         shape_str(x.shape()));
  }
  Tensor<T> gw({cout, cin, kh, kw});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t p = 0; p < kh; ++p) {
        for (std::size_t q = 0; q < kw; ++q) {
          T s{0};
          for (std::size_t i = 0; i < oh; ++i) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + p) -
                                     static_cast<std::ptrdiff_t>(g.pad);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t j = 0; j < ow; ++j) {
              const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(j * g.stride + q) -
                                         static_cast<std::ptrdiff_t>(g.pad);
              if (col < 0 || col >= static_cast<std::ptrdiff_t>(wd)) continue;
              s += grad_out(o, i, j) *
                   x(c, static_cast<std::size_t>(r), static_cast<std::size_t>(col));
            }
          }
          gw(o, c, p, q) = s;
        }
      }
    }
  }
  return gw;
}

/// d<grad_out, conv2d(x, w)>/dx for an input of extent h x wd.
template <typename T>
Tensor<T> conv2d_input_grad(const Tensor<T>& grad_out, const Tensor<T>& w,
                            std::size_t h, std::size_t wd, Conv2dGeometry g) {
  const std::size_t cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);
  if (grad_out.dim(0) != cout) throw DimensionError("conv2d_input_grad channels");
  Tensor<T> gx({cin, h, wd});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const T up = grad_out(o, i, j);
        if (up == T{0}) continue;
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t p = 0; p < kh; ++p) {
            const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * g.stride + p) -
                                     static_cast<std::ptrdiff_t>(g.pad);
            if (r < 0 || r >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t q = 0; q < kw; ++q) {
              const std::ptrdiff_t col = static_cast<std::ptrdiff_t>(j * g.stride + q) -
                                         static_cast<std::ptrdiff_t>(g.pad);
              if (col < 0 || col >= static_cast<std::ptrdiff_t>(wd)) continue;
              gx(c, static_cast<std::size_t>(r), static_cast<std::size_t>(col)) +=
                  up * w(o, c, p, q);
            }
          }
        }
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Max-pooling

/// Winning flat spatial index (row * W + col) of the pooled input, per output
/// cell, laid out like the pooled output [C x H' x W'].
struct PoolRecord {
  Shape input_shape;
  Shape output_shape;
  std::size_t window = 0;
  std::size_t stride = 0;
  std::vector<std::size_t> argmax;
};

template <typename T>
std::pair<Tensor<T>, PoolRecord> maxpool2d(const Tensor<T>& x, std::size_t window,
                                           std::size_t stride) {
  if (x.rank() != 3) throw DimensionError("maxpool2d needs C x H x W input");
  if (window == 0 || stride == 0) throw DimensionError("maxpool2d window/stride");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window > h || window > w) {
    throw DimensionError("pool window " + std::to_string(window) +
                         " larger than input " + shape_str(x.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  PoolRecord rec{x.shape(), {c, oh, ow}, window, stride, {}};
  rec.argmax.resize(c * oh * ow);
  Tensor<T> out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best_r = i * stride, best_c = j * stride;
        T best = x(ch, best_r, best_c);
        for (std::size_t p = 0; p < window; ++p) {
          for (std::size_t q = 0; q < window; ++q) {
            const std::size_t r = i * stride + p, col = j * stride + q;
            // Strict comparison keeps the first maximum in row-major order.
            if (x(ch, r, col) > best) {
              best = x(ch, r, col);
              best_r = r;
              best_c = col;
            }
          }
        }
        out(ch, i, j) = best;
        rec.argmax[(ch * oh + i) * ow + j] = best_r * w + best_c;
      }
    }
  }
  return {std::move(out), std::move(rec)};
}

/// Routes grad_out back to the winning input cells.
template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const PoolRecord& rec) {
  if (grad_out.shape() != rec.output_shape) {
    throw DimensionError("maxpool2d_backward: upstream " +
                         shape_str(grad_out.shape()) + " vs pooled " +
                         shape_str(rec.output_shape));
  }
  Tensor<T> gx(rec.input_shape);
  const std::size_t plane = rec.input_shape[1] * rec.input_shape[2];
  const std::size_t out_plane = rec.output_shape[1] * rec.output_shape[2];
  for (std::size_t k = 0; k < grad_out.size(); ++k) {
    const std::size_t ch = k / out_plane;
    gx[ch * plane + rec.argmax[k]] += grad_out[k];
  }
  return gx;
}

}  // namespace clapp
