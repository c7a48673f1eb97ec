#pragma once

// Differentiable tensor operations used by the networks and losses.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "pseudosr/autograd.hpp"
#include "pseudosr/dihedral.hpp"

namespace pseudosr::ops {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int in_c, in_h, in_w;
  int out_c, out_h, out_w;
  int kernel, stride, pad;

  int rows() const { return in_c * kernel * kernel; }
  int cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

/// Output columns [lo, hi) whose input column ox * stride - pad + kx is in range.
inline std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
  const int off = kx - g.pad;
  int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  int hi = g.in_w - off <= 0 ? 0 : (g.in_w - off - 1) / g.stride + 1;
  hi = std::min(hi, g.out_w);
  return {std::min(lo, hi), hi};
}

template <class T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const int k = g.kernel;
  for (int c = 0; c < g.in_c; ++c) {
    const T* plane = image + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * g.cols();
        const auto [lo, hi] = valid_columns(g, kx);
        const int off = kx - g.pad;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.in_w + off;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          std::fill(dst + hi, dst + g.out_w, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* image) {
  const int k = g.kernel;
  for (int c = 0; c < g.in_c; ++c) {
    T* plane = image + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * g.cols();
        const auto [lo, hi] = valid_columns(g, kx);
        const int off = kx - g.pad;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.out_w;
          T* dst = plane + static_cast<std::size_t>(iy) * g.in_w + off;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
    }
  }
}

template <class T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>(Shape{1, 1, 1, 1}, v);
}

}  // namespace detail

/// 2-D cross-correlation. `weight` is (out_c, in_c, k, k); `bias` is (1, out_c, 1, 1) or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.h != ws.w) throw ShapeError("conv2d: square kernels only");
  if (ws.c != xs.c)
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " + std::to_string(ws.c));
  detail::ConvGeometry g{xs.c, xs.h, xs.w, ws.n, 0, 0, ws.h, stride, pad};
  g.out_h = (xs.h + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (xs.w + 2 * pad - g.kernel) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError("conv2d: input " + to_string(xs) + " too small for kernel");
  if (bias.defined() && bias.shape().size() != static_cast<std::size_t>(g.out_c))
    throw ShapeError("conv2d: bias size mismatch");

  const int rows = g.rows();
  const int cols = g.cols();
  const bool pointwise = g.is_pointwise();
  const bool keep_cols = weight.requires_grad() && !pointwise;

  Tensor<T> out(Shape{xs.n, g.out_c, g.out_h, g.out_w});
  auto saved_cols = std::make_shared<AlignedVector<T>>();
  AlignedVector<T> scratch;
  if (!pointwise) {
    if (keep_cols)
      saved_cols->resize(static_cast<std::size_t>(xs.n) * rows * cols);
    else
      scratch.resize(static_cast<std::size_t>(rows) * cols);
  }
  detail::ConstMapMatrix<T> W(weight.value().data(), g.out_c, rows);
  for (int n = 0; n < xs.n; ++n) {
    const T* src = x.value().plane(n, 0);
    const T* col_ptr = src;
    if (!pointwise) {
      T* buf = keep_cols ? saved_cols->data() + static_cast<std::size_t>(n) * rows * cols : scratch.data();
      detail::im2col(src, g, buf);
      col_ptr = buf;
    }
    detail::MapMatrix<T> O(out.plane(n, 0), g.out_c, cols);
    O.noalias() = W * detail::ConstMapMatrix<T>(col_ptr, rows, cols);
    if (bias.defined()) O.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.value().data(), g.out_c);
  }

  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [g, saved_cols, pointwise](Node<T>& self) {
    const Node<T>& xin = *self.inputs[0];
    const Node<T>& win = *self.inputs[1];
    const int rows = g.rows();
    const int cols = g.cols();
    const int batch = xin.value.shape().n;
    detail::ConstMapMatrix<T> W(win.value.data(), g.out_c, rows);
    AlignedVector<T> scratch;
    if (win.requires_grad) {
      detail::MapMatrix<T> dW(self.inputs[1]->grad_buffer().data(), g.out_c, rows);
      for (int n = 0; n < batch; ++n) {
        detail::ConstMapMatrix<T> G(self.grad.plane(n, 0), g.out_c, cols);
        const T* col_ptr = pointwise ? xin.value.plane(n, 0) : saved_cols->data() + static_cast<std::size_t>(n) * rows * cols;
        dW.noalias() += G * detail::ConstMapMatrix<T>(col_ptr, rows, cols).transpose();
      }
    }
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      T* db = self.inputs[2]->grad_buffer().data();
      for (int n = 0; n < batch; ++n) {
        detail::ConstMapMatrix<T> G(self.grad.plane(n, 0), g.out_c, cols);
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(db, g.out_c) += G.rowwise().sum();
      }
    }
    if (xin.requires_grad) {
      Tensor<T>& dx = self.inputs[0]->grad_buffer();
      if (!pointwise) scratch.resize(static_cast<std::size_t>(rows) * cols);
      for (int n = 0; n < batch; ++n) {
        detail::ConstMapMatrix<T> G(self.grad.plane(n, 0), g.out_c, cols);
        if (pointwise) {
          detail::MapMatrix<T>(dx.plane(n, 0), rows, cols).noalias() += W.transpose() * G;
        } else {
          detail::MapMatrix<T> D(scratch.data(), rows, cols);
          D.noalias() = W.transpose() * G;
          detail::col2im_add(scratch.data(), g, dx.plane(n, 0));
        }
      }
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      accumulate_into(self, k, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate_into(self, 1, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
  });
}

/// Elementwise mean of equally shaped variables.
template <class T>
Var<T> average(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ShapeError("average of zero tensors");
  Tensor<T> out(xs.front().shape());
  for (const auto& x : xs) {
    require_same_shape(x.shape(), out.shape(), "average");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.value()[i];
  }
  const T inv = T(1) / static_cast<T>(xs.size());
  for (auto& v : out.storage()) v *= inv;
  return make_result<T>(std::move(out), xs, [inv](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k)
      accumulate_into(self, k, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * self.grad[i];
      });
  });
}

/// Elementwise weighted sum of same-shaped tensors.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const std::vector<T>& weights) {
  if (xs.empty()) throw ShapeError("weighted_sum of zero tensors");
  if (xs.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  Tensor<T> out(xs.front().shape());
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same_shape(xs[k].shape(), out.shape(), "weighted_sum");
    const T* v = xs[k].value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[k] * v[i];
  }
  return make_result<T>(std::move(out), xs, [weights](Node<T>& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k)
      accumulate_into(self, k, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += weights[k] * self.grad[i];
      });
  });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x.value();
  T* o = out.data();
  for (std::size_t i = 0, n = out.size(); i < n; ++i) o[i] = o[i] < 0 ? o[i] * slope : o[i];
  return make_result<T>(std::move(out), {x}, [slope](Node<T>& self) {
    const T* in = self.inputs[0]->value.data();
    const T* up = self.grad.data();
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      T* d = g.data();
      for (std::size_t i = 0, n = g.size(); i < n; ++i) d[i] += in[i] < 0 ? slope * up[i] : up[i];
    });
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = T(1) / (T(1) + std::exp(-v));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T s = self.value[i];
        g[i] += self.grad[i] * s * (T(1) - s);
      }
    });
  });
}

/// Mean over the spatial plane: (n, c, h, w) -> (n, c, 1, 1).
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const T inv = T(1) / static_cast<T>(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      out.at(n, c, 0, 0) = std::accumulate(p, p + s.plane(), T(0)) * inv;
    }
  return make_result<T>(std::move(out), {x}, [s, inv](Node<T>& self) {
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const T d = self.grad.at(n, c, 0, 0) * inv;
          T* p = g.plane(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) p[i] += d;
        }
    });
  });
}

/// Multiplies every (n, c) plane of `x` by `s(n, c)`.
template <class T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const Shape xs = x.shape();
  if (!(s.shape() == Shape{xs.n, xs.c, 1, 1})) throw ShapeError("scale_channels: bad scale shape " + to_string(s.shape()));
  Tensor<T> out = x.value();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T f = s.value().at(n, c, 0, 0);
      T* p = out.plane(n, c);
      for (std::size_t i = 0; i < xs.plane(); ++i) p[i] *= f;
    }
  return make_result<T>(std::move(out), {x, s}, [xs](Node<T>& self) {
    const Tensor<T>& xv = self.inputs[0]->value;
    const Tensor<T>& sv = self.inputs[1]->value;
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          const T f = sv.at(n, c, 0, 0);
          const T* d = self.grad.plane(n, c);
          T* p = g.plane(n, c);
          for (std::size_t i = 0; i < xs.plane(); ++i) p[i] += f * d[i];
        }
    });
    accumulate_into(self, 1, [&](Tensor<T>& g) {
      for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
          const T* d = self.grad.plane(n, c);
          const T* v = xv.plane(n, c);
          T acc = 0;
          for (std::size_t i = 0; i < xs.plane(); ++i) acc += d[i] * v[i];
          g.at(n, c, 0, 0) += acc;
        }
    });
  });
}

/// Sub-pixel rearrangement (n, c*r*r, h, w) -> (n, c, h*r, w*r).
template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  const Shape s = x.shape();
  if (s.c % (r * r) != 0) throw ShapeError("pixel_shuffle: channels not divisible by r^2");
  const Shape os{s.n, s.c / (r * r), s.h * r, s.w * r};
  // out(n, c, y*r+i, x*r+j) = in(n, c*r*r + i*r + j, y, x)
  auto index = [s, os, r](int n, int c, int y, int xx, int i, int j, const Tensor<T>& in, const Tensor<T>& out) {
    return std::pair{in.offset(n, c * r * r + i * r + j, y, xx), out.offset(n, c, y * r + i, xx * r + j)};
  };
  Tensor<T> out(os);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx) {
              auto [src, dst] = index(n, c, y, xx, i, j, x.value(), out);
              out[dst] = x.value()[src];
            }
  return make_result<T>(std::move(out), {x}, [s, os, r, index](Node<T>& self) {
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < os.c; ++c)
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j)
              for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                  auto [src, dst] = index(n, c, y, xx, i, j, g, self.grad);
                  g[src] += self.grad[dst];
                }
    });
  });
}

/// Channel concatenation of two tensors with equal batch and spatial extent.
template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw ShapeError("concat_channels: " + to_string(as) + " vs " + to_string(bs));
  Tensor<T> out(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t na = static_cast<std::size_t>(as.c) * as.plane();
  const std::size_t nb = static_cast<std::size_t>(bs.c) * bs.plane();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a.value().plane(n, 0), na, out.plane(n, 0));
    std::copy_n(b.value().plane(n, 0), nb, out.plane(n, as.c));
  }
  return make_result<T>(std::move(out), {a, b}, [as, na, nb](Node<T>& self) {
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (int n = 0; n < as.n; ++n) {
        const T* src = self.grad.plane(n, 0);
        T* dst = g.plane(n, 0);
        for (std::size_t i = 0; i < na; ++i) dst[i] += src[i];
      }
    });
    accumulate_into(self, 1, [&](Tensor<T>& g) {
      for (int n = 0; n < as.n; ++n) {
        const T* src = self.grad.plane(n, as.c);
        T* dst = g.plane(n, 0);
        for (std::size_t i = 0; i < nb; ++i) dst[i] += src[i];
      }
    });
  });
}

/// Applies a dihedral operator to every spatial plane.
template <class T>
Var<T> dihedral(const Var<T>& x, DihedralIndex op) {
  const Shape s = x.shape();
  const auto [oh, ow] = op.output_extent(s.h, s.w);
  const std::vector<std::size_t> src = op.source_indices(s.h, s.w);
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) o[i] = in[src[i]];
    }
  if (!x.requires_grad()) return Var<T>::constant(std::move(out));
  return make_result<T>(std::move(out), {x}, [s, src](Node<T>& self) {
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const T* d = self.grad.plane(n, c);
          T* p = g.plane(n, c);
          for (std::size_t i = 0; i < src.size(); ++i) p[src[i]] += d[i];
        }
    });
  });
}

/// Training-mode batch normalization with per-channel affine parameters.
/// Updates the running statistics in place when `running_mean` is non-null.
template <class T>
Var<T> batch_norm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>* running_mean,
                        Tensor<T>* running_var, T momentum, T eps) {
  const Shape s = x.shape();
  const std::size_t count = static_cast<std::size_t>(s.n) * s.plane();
  std::vector<T> mean(s.c, 0), inv_std(s.c, 0);
  for (int c = 0; c < s.c; ++c) {
    T sum = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
    }
    const T mu = sum / static_cast<T>(count);
    T sq = 0;
    for (int n = 0; n < s.n; ++n) {
      const T* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mu) * (p[i] - mu);
    }
    const T var = sq / static_cast<T>(count);
    mean[c] = mu;
    inv_std[c] = T(1) / std::sqrt(var + eps);
    if (running_mean) {
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      (*running_mean)[c] = (T(1) - momentum) * (*running_mean)[c] + momentum * mu;
      (*running_var)[c] = (T(1) - momentum) * (*running_var)[c] + momentum * unbiased;
    }
  }
  Tensor<T> xhat(s);
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      T* h = xhat.plane(n, c);
      T* o = out.plane(n, c);
      const T gm = gamma.value()[c];
      const T bt = beta.value()[c];
      for (std::size_t i = 0; i < s.plane(); ++i) {
        h[i] = (p[i] - mean[c]) * inv_std[c];
        o[i] = gm * h[i] + bt;
      }
    }
  auto saved = std::make_shared<Tensor<T>>(std::move(xhat));
  return make_result<T>(std::move(out), {x, gamma, beta}, [s, count, saved, inv_std](Node<T>& self) {
    const Tensor<T>& xh = *saved;
    const Tensor<T>& gv = self.inputs[1]->value;
    std::vector<T> sum_dy(s.c, 0), sum_dy_xhat(s.c, 0);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* d = self.grad.plane(n, c);
        const T* h = xh.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          sum_dy[c] += d[i];
          sum_dy_xhat[c] += d[i] * h[i];
        }
      }
    accumulate_into(self, 1, [&](Tensor<T>& g) {
      for (int c = 0; c < s.c; ++c) g[c] += sum_dy_xhat[c];
    });
    accumulate_into(self, 2, [&](Tensor<T>& g) {
      for (int c = 0; c < s.c; ++c) g[c] += sum_dy[c];
    });
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      const T m = static_cast<T>(count);
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const T k = gv[c] * inv_std[c] / m;
          const T* d = self.grad.plane(n, c);
          const T* h = xh.plane(n, c);
          T* p = g.plane(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) p[i] += k * (m * d[i] - sum_dy[c] - h[i] * sum_dy_xhat[c]);
        }
    });
  });
}

/// Inference-mode batch normalization using stored statistics.
template <class T>
Var<T> batch_norm_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const Tensor<T>& running_mean,
                       const Tensor<T>& running_var, T eps) {
  const Shape s = x.shape();
  std::vector<T> mul(s.c), add_(s.c);
  for (int c = 0; c < s.c; ++c) {
    mul[c] = gamma.value()[c] / std::sqrt(running_var[c] + eps);
    add_[c] = beta.value()[c] - mul[c] * running_mean[c];
  }
  Tensor<T> out = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = mul[c] * o[i] + add_[c];
    }
  return make_result<T>(std::move(out), {x, gamma, beta}, [s, mul, running_mean, running_var, eps](Node<T>& self) {
    const Tensor<T>& xv = self.inputs[0]->value;
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const T* d = self.grad.plane(n, c);
          T* p = g.plane(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) p[i] += mul[c] * d[i];
        }
    });
    accumulate_into(self, 1, [&](Tensor<T>& g) {
      for (int c = 0; c < s.c; ++c) {
        const T inv = T(1) / std::sqrt(running_var[c] + eps);
        T acc = 0;
        for (int n = 0; n < s.n; ++n) {
          const T* d = self.grad.plane(n, c);
          const T* v = xv.plane(n, c);
          for (std::size_t i = 0; i < s.plane(); ++i) acc += d[i] * (v[i] - running_mean[c]) * inv;
        }
        g[c] += acc;
      }
    });
    accumulate_into(self, 2, [&](Tensor<T>& g) {
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          const T* d = self.grad.plane(n, c);
          g[c] += std::accumulate(d, d + s.plane(), T(0));
        }
    });
  });
}

// ---- scalar reductions ----------------------------------------------------

template <class T>
Var<T> mean(const Var<T>& x) {
  const std::size_t m = x.value().size();
  if (m == 0) throw ShapeError("mean of empty tensor");
  const T v = std::accumulate(x.value().storage().begin(), x.value().storage().end(), T(0)) / static_cast<T>(m);
  return make_result<T>(detail::scalar_tensor(v), {x}, [m](Node<T>& self) {
    const T d = self.grad[0] / static_cast<T>(m);
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (auto& e : g.storage()) e += d;
    });
  });
}

/// mean |a - b|
template <class T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "l1");
  const std::size_t m = a.value().size();
  if (m == 0) throw ShapeError("l1 of empty tensor");
  T acc = 0;
  for (std::size_t i = 0; i < m; ++i) acc += std::abs(a.value()[i] - b.value()[i]);
  return make_result<T>(detail::scalar_tensor(acc / static_cast<T>(m)), {a, b}, [m](Node<T>& self) {
    const T d = self.grad[0] / static_cast<T>(m);
    const Tensor<T>& av = self.inputs[0]->value;
    const Tensor<T>& bv = self.inputs[1]->value;
    auto sign = [](T v) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); };
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < m; ++i) g[i] += d * sign(av[i] - bv[i]);
    });
    accumulate_into(self, 1, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < m; ++i) g[i] -= d * sign(av[i] - bv[i]);
    });
  });
}

/// mean (x - target)^2 for a constant target.
template <class T>
Var<T> squared_error_mean(const Var<T>& x, T target) {
  const std::size_t m = x.value().size();
  if (m == 0) throw ShapeError("squared error of empty tensor");
  T acc = 0;
  for (std::size_t i = 0; i < m; ++i) acc += (x.value()[i] - target) * (x.value()[i] - target);
  return make_result<T>(detail::scalar_tensor(acc / static_cast<T>(m)), {x}, [m, target](Node<T>& self) {
    const T d = T(2) * self.grad[0] / static_cast<T>(m);
    const Tensor<T>& xv = self.inputs[0]->value;
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < m; ++i) g[i] += d * (xv[i] - target);
    });
  });
}

/// Numerically stable log(1 + exp(z)).
template <class T>
T softplus(T z) {
  return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

/// mean softplus(sign * x). With sign = -1 this is -mean log sigmoid(x);
/// with sign = +1 it is -mean log(1 - sigmoid(x)).
template <class T>
Var<T> softplus_mean(const Var<T>& x, T sign) {
  const std::size_t m = x.value().size();
  if (m == 0) throw ShapeError("softplus mean of empty tensor");
  T acc = 0;
  for (std::size_t i = 0; i < m; ++i) acc += softplus(sign * x.value()[i]);
  return make_result<T>(detail::scalar_tensor(acc / static_cast<T>(m)), {x}, [m, sign](Node<T>& self) {
    const T d = self.grad[0] / static_cast<T>(m);
    const Tensor<T>& xv = self.inputs[0]->value;
    accumulate_into(self, 0, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < m; ++i) {
        const T z = sign * xv[i];
        g[i] += d * sign / (T(1) + std::exp(-z));
      }
    });
  });
}

}  // namespace pseudosr::ops
