#include "ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"

namespace trust {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ImplPtr = std::shared_ptr<TensorImpl>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) {
    return false;
  }
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) {
      return true;
    }
  }
  return false;
}

bool recording(const std::vector<Tensor>& inputs) {
  if (active_tape() == nullptr) {
    return false;
  }
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

void record(Tensor& out, Tape::BackwardFn fn) {
  out.set_requires_grad(true);
  active_tape()->record(out.impl(), std::move(fn));
}

// Gradient buffer of an input, or nullptr when it does not take gradients.
double* grad_of(const ImplPtr& t) {
  return t->requires_grad ? t->ensure_grad().data() : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(a.shape()));
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(in[i]);
  }
  Tensor y(x.shape(), std::move(out));
  if (recording({&x})) {
    record(y, [xi = x.impl(), deriv](const TensorImpl& o) {
      double* gx = grad_of(xi);
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        gx[i] += o.grad[i] * deriv(xi->data[i], o.data[i]);
      }
    });
  }
  return y;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  Tensor c({m, n}, std::move(out));
  if (recording({&a, &b})) {
    record(c, [ai = a.impl(), bi = b.impl(), m, k, n](const TensorImpl& o) {
      ConstMapMat dc(o.grad.data(), m, n);
      if (double* ga = grad_of(ai)) {
        MapMat(ga, m, k).noalias() += dc * ConstMapMat(bi->data.data(), k, n).transpose();
      }
      if (double* gb = grad_of(bi)) {
        MapMat(gb, k, n).noalias() += ConstMapMat(ai->data.data(), m, k).transpose() * dc;
      }
    });
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for tensor " +
                         shape_string(a.shape()));
  }
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) {
      throw ParameterError("permute: invalid axis list");
    }
    seen[ax] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.dim(i);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.dim(axes[i]);
  // source offset for each destination element
  const std::size_t total = a.size();
  std::vector<std::size_t> src(total);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(total);
  const auto in = a.data();
  for (std::size_t i = 0; i < total; ++i) out[i] = in[src[i]];
  Tensor y(std::move(out_shape), std::move(out));
  if (recording({&a})) {
    record(y, [ai = a.impl(), src = std::move(src)](const TensorImpl& o) {
      double* ga = grad_of(ai);
      for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += o.grad[i];
    });
  }
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                         shape_string(shape));
  }
  Tensor y(std::move(shape), a.values());
  if (recording({&a})) {
    record(y, [ai = a.impl()](const TensorImpl& o) {
      double* ga = grad_of(ai);
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor y(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    record(y, [ai = a.impl(), bi = b.impl()](const TensorImpl& o) {
      if (double* ga = grad_of(ai))
        for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
      if (double* gb = grad_of(bi))
        for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tensor y(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    record(y, [ai = a.impl(), bi = b.impl()](const TensorImpl& o) {
      if (double* ga = grad_of(ai))
        for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
      if (double* gb = grad_of(bi))
        for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i];
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tensor y(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    record(y, [ai = a.impl(), bi = b.impl()](const TensorImpl& o) {
      if (double* ga = grad_of(ai))
        for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * bi->data[i];
      if (double* gb = grad_of(bi))
        for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * ai->data[i];
    });
  }
  return y;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  Tensor y(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    record(y, [ai = a.impl(), bi = b.impl()](const TensorImpl& o) {
      if (double* ga = grad_of(ai))
        for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] / bi->data[i];
      if (double* gb = grad_of(bi))
        for (std::size_t i = 0; i < o.grad.size(); ++i)
          gb[i] -= o.grad[i] * o.data[i] / bi->data[i];
    });
  }
  return y;
}

Tensor scalar_mul(const Tensor& a, double s) {
  return unary(a, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  if (bias.rank() != 1 || a.rank() == 0 || a.shape().back() != bias.dim(0)) {
    throw DimensionError("add_rowwise: bias " + shape_string(bias.shape()) +
                         " does not match " + shape_string(a.shape()));
  }
  const std::size_t n = bias.dim(0);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + bias[i % n];
  Tensor y(a.shape(), std::move(out));
  if (recording({&a, &bias})) {
    record(y, [ai = a.impl(), bi = bias.impl(), n](const TensorImpl& o) {
      if (double* ga = grad_of(ai))
        for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
      if (double* gb = grad_of(bi))
        for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % n] += o.grad[i];
    });
  }
  return y;
}

Tensor add_channel(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 3 || bias.rank() != 1 || bias.dim(0) != a.dim(0)) {
    throw DimensionError("add_channel: bias " + shape_string(bias.shape()) +
                         " does not match " + shape_string(a.shape()));
  }
  const std::size_t plane = a.dim(1) * a.dim(2);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + bias[i / plane];
  Tensor y(a.shape(), std::move(out));
  if (recording({&a, &bias})) {
    record(y, [ai = a.impl(), bi = bias.impl(), plane](const TensorImpl& o) {
      if (double* ga = grad_of(ai))
        for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
      if (double* gb = grad_of(bi))
        for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i / plane] += o.grad[i];
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double a = 0.044715;
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + a * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double s) { return s * (1.0 - s); });
}

Tensor absolute(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ParameterError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = in[base];
      for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double sum = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(in[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= sum;
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (recording({&x})) {
    record(y, [xi = x.impl(), s](const TensorImpl& o) {
      double* gx = grad_of(xi);
      for (std::size_t a = 0; a < s.outer; ++a) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = a * s.len * s.inner + i;
          double dot = 0.0;
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t k = base + j * s.inner;
            dot += o.grad[k] * o.data[k];
          }
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t k = base + j * s.inner;
            gx[k] += o.data[k] * (o.grad[k] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() == 0 || gamma.rank() != 1 || beta.shape() != gamma.shape() ||
      gamma.dim(0) != x.shape().back()) {
    throw DimensionError("layernorm: scale " + shape_string(gamma.shape()) + " / shift " +
                         shape_string(beta.shape()) + " do not match input " +
                         shape_string(x.shape()));
  }
  const std::size_t d = gamma.dim(0);
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size()), xhat(x.size()), rstd(rows);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gamma[j] + beta[j];
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (recording({&x, &gamma, &beta})) {
    record(y, [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat = std::move(xhat),
               rstd = std::move(rstd), d, rows](const TensorImpl& o) {
      double* gx = grad_of(xi);
      double* gg = grad_of(gi);
      double* gb = grad_of(bi);
      std::vector<double> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dy = o.grad.data() + r * d;
        const double* h = xhat.data() + r * d;
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += dy[j] * h[j];
          if (gb) gb[j] += dy[j];
          dxhat[j] = dy[j] * gi->data[j];
          mean_dh += dxhat[j];
          mean_dh_h += dxhat[j] * h[j];
        }
        if (!gx) continue;
        mean_dh /= static_cast<double>(d);
        mean_dh_h /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          gx[r * d + j] += rstd[r] * (dxhat[j] - mean_dh - h[j] * mean_dh_h);
        }
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t count) {
  if (axis >= x.rank() || count == 0 || start + count > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") on axis " + std::to_string(axis) +
                         " of " + shape_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = count;
  std::vector<double> out(s.outer * count * s.inner);
  const auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(in.data() + (o * s.len + start) * s.inner, count * s.inner,
                out.data() + o * count * s.inner);
  }
  Tensor y(std::move(out_shape), std::move(out));
  if (recording({&x})) {
    record(y, [xi = x.impl(), s, start, count](const TensorImpl& o) {
      double* gx = grad_of(xi);
      for (std::size_t a = 0; a < s.outer; ++a) {
        const double* src = o.grad.data() + a * count * s.inner;
        double* dst = gx + (a * s.len + start) * s.inner;
        for (std::size_t i = 0; i < count * s.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) {
    throw ParameterError("concat: no inputs");
  }
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) {
    throw ParameterError("concat: axis out of range for " + shape_string(ref));
  }
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = ref;
    if (a.size() != b.size()) {
      throw DimensionError("concat: rank mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
    a[axis] = b[axis] = 0;
    if (a != b) {
      throw DimensionError("concat: shape mismatch " + shape_string(p.shape()) + " vs " +
                           shape_string(ref));
    }
    total += p.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    offsets.push_back(offset);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().data() + o * len * s.inner, len * s.inner,
                  out.data() + (o * total + offset) * s.inner);
    }
    offset += len;
  }
  Tensor y(std::move(out_shape), std::move(out));
  if (recording(parts)) {
    std::vector<ImplPtr> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    record(y, [impls = std::move(impls), offsets = std::move(offsets), s, axis,
               total](const TensorImpl& o) {
      for (std::size_t k = 0; k < impls.size(); ++k) {
        double* g = grad_of(impls[k]);
        if (!g) continue;
        const std::size_t len = impls[k]->shape[axis];
        for (std::size_t a = 0; a < s.outer; ++a) {
          const double* src = o.grad.data() + (a * total + offsets[k]) * s.inner;
          double* dst = g + a * len * s.inner;
          for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return y;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) {
    throw ParameterError("conv2d: stride must be >= 1");
  }
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                         " expects different input channels than " +
                         shape_string(input.shape()));
  }
  const std::size_t hp = h + 2 * padding, wp = w + 2 * padding;
  if (kh > hp || kw > wp) {
    throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                         " larger than padded input " + shape_string(input.shape()));
  }
  const std::size_t ho = (hp - kh) / stride + 1, wo = (wp - kw) / stride + 1;
  const std::size_t patch = cin * kh * kw, npos = ho * wo;
  // im2col: row = (c, i, j) tap, column = output position
  std::vector<double> cols(patch * npos, 0.0);
  const auto in = input.data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = cols.data() + ((c * kh + i) * kw + j) * npos;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            row[oy * wo + ox] = in[(c * h + iy) * w + ix];
          }
        }
      }
    }
  }
  std::vector<double> out(cout * npos);
  MapMat(out.data(), cout, npos).noalias() =
      ConstMapMat(kernel.data().data(), cout, patch) * ConstMapMat(cols.data(), patch, npos);
  Tensor y({cout, ho, wo}, std::move(out));
  if (recording({&input, &kernel})) {
    record(y, [ii = input.impl(), ki = kernel.impl(), cols = std::move(cols), cin, h, w, kh,
               kw, ho, wo, cout, patch, npos, stride, padding](const TensorImpl& o) {
      ConstMapMat dy(o.grad.data(), cout, npos);
      if (double* gk = grad_of(ki)) {
        MapMat(gk, cout, patch).noalias() += dy * ConstMapMat(cols.data(), patch, npos).transpose();
      }
      if (double* gi = grad_of(ii)) {
        RowMat dcols = ConstMapMat(ki->data.data(), cout, patch).transpose() * dy;
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
              const double* row = dcols.data() + ((c * kh + i) * kw + j) * npos;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                            static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  gi[(c * h + iy) * w + ix] += row[oy * wo + ox];
                }
              }
            }
          }
        }
      }
    });
  }
  return y;
}

Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
  if (factor == 0) {
    throw ParameterError("upsample_nearest: factor must be >= 1");
  }
  require_rank(input, 3, "upsample_nearest");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        out[(ch * oh + y) * ow + x] = input[(ch * h + y / factor) * w + x / factor];
  Tensor r({c, oh, ow}, std::move(out));
  if (recording({&input})) {
    record(r, [ii = input.impl(), c, h, w, oh, ow, factor](const TensorImpl& o) {
      double* g = grad_of(ii);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t x = 0; x < ow; ++x)
            g[(ch * h + y / factor) * w + x / factor] += o.grad[(ch * oh + y) * ow + x];
    });
  }
  return r;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double whi;  // weight of hi; lo gets 1 - whi
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = Tap{lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 3, "resize_bilinear");
  if (out_h == 0 || out_w == 0) {
    throw ParameterError("resize_bilinear: output extents must be positive");
  }
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = input.data().data() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double top = p[a.lo * w + b.lo] * (1 - b.whi) + p[a.lo * w + b.hi] * b.whi;
        const double bot = p[a.hi * w + b.lo] * (1 - b.whi) + p[a.hi * w + b.hi] * b.whi;
        out[(ch * out_h + y) * out_w + x] = top * (1 - a.whi) + bot * a.whi;
      }
    }
  }
  Tensor r({c, out_h, out_w}, std::move(out));
  if (recording({&input})) {
    record(r, [ii = input.impl(), ty = std::move(ty), tx = std::move(tx), c, h, w, out_h,
               out_w](const TensorImpl& o) {
      double* g = grad_of(ii);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* p = g + ch * h * w;
        for (std::size_t y = 0; y < out_h; ++y) {
          const Tap& a = ty[y];
          for (std::size_t x = 0; x < out_w; ++x) {
            const Tap& b = tx[x];
            const double d = o.grad[(ch * out_h + y) * out_w + x];
            p[a.lo * w + b.lo] += d * (1 - a.whi) * (1 - b.whi);
            p[a.lo * w + b.hi] += d * (1 - a.whi) * b.whi;
            p[a.hi * w + b.lo] += d * a.whi * (1 - b.whi);
            p[a.hi * w + b.hi] += d * a.whi * b.whi;
          }
        }
      }
    });
  }
  return r;
}

Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 3, "adaptive_avg_pool");
  if (out_h == 0 || out_w == 0) {
    throw ParameterError("adaptive_avg_pool: output extents must be positive");
  }
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (out_h > h || out_w > w) {
    throw ParameterError("adaptive_avg_pool: output " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " exceeds input " + shape_string(input.shape()));
  }
  auto bounds = [](std::size_t i, std::size_t in, std::size_t out) {
    return std::pair{i * in / out, (i + 1) * in / out};
  };
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto [y0, y1] = bounds(i, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto [x0, x1] = bounds(j, w, out_w);
        double sum = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) sum += input[(ch * h + y) * w + x];
        out[(ch * out_h + i) * out_w + j] = sum / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  Tensor r({c, out_h, out_w}, std::move(out));
  if (recording({&input})) {
    record(r, [ii = input.impl(), c, h, w, out_h, out_w, bounds](const TensorImpl& o) {
      double* g = grad_of(ii);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < out_h; ++i) {
          const auto [y0, y1] = bounds(i, h, out_h);
          for (std::size_t j = 0; j < out_w; ++j) {
            const auto [x0, x1] = bounds(j, w, out_w);
            const double d = o.grad[(ch * out_h + i) * out_w + j] /
                             static_cast<double>((y1 - y0) * (x1 - x0));
            for (std::size_t y = y0; y < y1; ++y)
              for (std::size_t x = x0; x < x1; ++x) g[(ch * h + y) * w + x] += d;
          }
        }
      }
    });
  }
  return r;
}

Tensor max_pool2d(const Tensor& input, std::size_t size) {
  require_rank(input, 3, "max_pool2d");
  if (size == 0) {
    throw ParameterError("max_pool2d: window must be >= 1");
  }
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % size != 0 || w % size != 0) {
    throw DimensionError("max_pool2d: window " + std::to_string(size) + " does not tile " +
                         shape_string(input.shape()));
  }
  const std::size_t oh = h / size, ow = w / size;
  std::vector<double> out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (ch * h + i * size) * w + j * size;
        for (std::size_t y = i * size; y < (i + 1) * size; ++y)
          for (std::size_t x = j * size; x < (j + 1) * size; ++x) {
            const std::size_t k = (ch * h + y) * w + x;
            if (input[k] > input[best]) best = k;
          }
        const std::size_t o = (ch * oh + i) * ow + j;
        out[o] = input[best];
        argmax[o] = best;
      }
    }
  }
  Tensor r({c, oh, ow}, std::move(out));
  if (recording({&input})) {
    record(r, [ii = input.impl(), argmax = std::move(argmax)](const TensorImpl& o) {
      double* g = grad_of(ii);
      for (std::size_t k = 0; k < argmax.size(); ++k) g[argmax[k]] += o.grad[k];
    });
  }
  return r;
}

Tensor reduce_sum(const Tensor& x) {
  const double total = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  Tensor y = Tensor::scalar(total);
  if (recording({&x})) {
    record(y, [xi = x.impl()](const TensorImpl& o) {
      double* g = grad_of(xi);
      for (std::size_t i = 0; i < xi->data.size(); ++i) g[i] += o.grad[0];
    });
  }
  return y;
}

Tensor reduce_mean(const Tensor& x) {
  return scalar_mul(reduce_sum(x), 1.0 / static_cast<double>(x.size()));
}

}  // namespace trust
