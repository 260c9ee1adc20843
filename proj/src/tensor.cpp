#include "haru/tensor.hpp"

// Small products otherwise take Eigen's coefficient-based path, whose vectorised dot products
// peel by buffer alignment; the packed GEMM kernel sums in an order fixed by the sizes alone.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace haru {

namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// dst (+)= a·b. Eigen dispatches single-row or single-column results to its matrix-vector kernel,
// which is alignment dependent too, so those are summed here in plain index order.
template <typename Dst, typename A, typename B>
void product(Dst&& dst, const A& a, const B& b, bool accumulate) {
  if (dst.rows() > 1 && dst.cols() > 1) {
    if (accumulate) {
      dst.noalias() += a * b;
    } else {
      dst.noalias() = a * b;
    }
    return;
  }
  for (Eigen::Index i = 0; i < dst.rows(); ++i)
    for (Eigen::Index j = 0; j < dst.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      dst(i, j) = accumulate ? dst(i, j) + s : s;
    }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (!x.defined()) throw UsageError(std::string(op) + ": undefined tensor");
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

bool wants_grad(const std::shared_ptr<TensorData>& t) { return t->requires_grad; }

struct ConvGeometry {
  std::size_t cin, h, w, k, stride, pad, dilation, out_h, out_w;
};

// cols: [cin*k*k, out_h*out_w]
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((c * g.k + ki) * g.k + kj) * spatial;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki * g.dilation) - static_cast<long>(g.pad);
          double* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(ih) * g.w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj * g.dilation) - static_cast<long>(g.pad);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.w)) ? 0.0 : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
  const std::size_t spatial = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((c * g.k + ki) * g.k + kj) * spatial;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki * g.dilation) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(ih) * g.w;
          const double* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj * g.dilation) - static_cast<long>(g.pad);
            if (iw >= 0 && iw < static_cast<long>(g.w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Per-axis bilinear taps with half-pixel centers.
struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = Tap{i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) : data_(std::make_shared<TensorData>()) {
  const std::size_t n = shape_numel(shape);
  data_->shape = std::move(shape);
  data_->values.assign(n, fill);
  data_->grad.assign(n, 0.0);
  data_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) : data_(std::make_shared<TensorData>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  data_->shape = std::move(shape);
  data_->grad.assign(values.size(), 0.0);
  data_->values = std::move(values);
  data_->requires_grad = requires_grad;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  return data_->values[0];
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  const Shape& s = data_->shape;
  return data_->values[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const Shape& s = data_->shape;
  return data_->values[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

void Tensor::zero_grad() { std::fill(data_->grad.begin(), data_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(data_->shape, data_->values, false); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward_fn,
                   const char* op) {
#ifndef NDEBUG
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in forward output");
  }
#endif
  Tensor out(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->op = op;
  for (auto& t : inputs) {
    if (t.defined()) node->inputs.push_back(t.data());
  }
  node->backward = std::move(backward_fn);
  out.data()->node = std::move(node);
  out.data()->requires_grad = true;
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward: root must be a scalar, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorData*> order;
  std::unordered_set<TensorData*> visited;
  std::vector<std::pair<TensorData*, std::size_t>> stack;
  stack.emplace_back(loss.data().get(), 0);
  visited.insert(loss.data().get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      TensorData* child = t->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }
  for (TensorData* t : order) {
    if (t->node) std::fill(t->grad.begin(), t->grad.end(), 0.0);
  }
  loss.data()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorData* t = *it;
    if (t->node && t->node->backward) t->node->backward(*t);
  }
}

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad,
              std::size_t dilation) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin) {
    throw DimensionError("conv2d: weight in-channels (axis 1) = " + std::to_string(w.dim(1)) +
                         " but input channels (axis 1) = " + std::to_string(cin));
  }
  if (w.dim(3) != k || k < 1) throw DimensionError("conv2d: kernel must be square, got " + shape_string(w.shape()));
  if (stride < 1 || dilation < 1) throw DimensionError("conv2d: stride and dilation must be >= 1");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) {
    throw DimensionError("conv2d: bias shape " + shape_string(b.shape()) + " does not match out-channels " +
                         std::to_string(cout));
  }
  const long span = static_cast<long>(dilation * (k - 1) + 1);
  const long eff_h = static_cast<long>(h + 2 * pad) - span;
  const long eff_w = static_cast<long>(wd + 2 * pad) - span;
  if (eff_h < 0 || eff_w < 0) {
    throw DimensionError("conv2d: kernel extent " + std::to_string(span) + " exceeds padded input " +
                         std::to_string(h + 2 * pad) + "x" + std::to_string(wd + 2 * pad) + " (axes 2,3)");
  }
  const ConvGeometry g{cin, h, wd, k, stride, pad, dilation, static_cast<std::size_t>(eff_h) / stride + 1,
                       static_cast<std::size_t>(eff_w) / stride + 1};
  const std::size_t spatial = g.out_h * g.out_w;
  const std::size_t rows = cin * k * k;

  std::vector<double> out(n * cout * spatial);
  std::vector<double> cols(rows * spatial);
  ConstMatrixMap wm(w.values().data(), cout, rows);
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.values().data() + i * cin * h * wd, g, cols.data());
    MatrixMap om(out.data() + i * cout * spatial, cout, spatial);
    product(om, wm, ConstMatrixMap(cols.data(), rows, spatial), false);
    if (b.defined()) {
      for (std::size_t c = 0; c < cout; ++c) om.row(c).array() += b.values()[c];
    }
  }

  auto xd = x.data();
  auto wdd = w.data();
  auto bd = b.defined() ? b.data() : nullptr;
  return make_result(
      {n, cout, g.out_h, g.out_w}, std::move(out), {x, w, b},
      [xd, wdd, bd, g, n, cout, rows, spatial](const TensorData& o) {
        std::vector<double> cols(rows * spatial);
        ConstMatrixMap wm(wdd->values.data(), cout, rows);
        MatrixMap gw(wdd->grad.data(), cout, rows);
        const std::size_t in_size = g.cin * g.h * g.w;
        for (std::size_t i = 0; i < n; ++i) {
          ConstMatrixMap go(o.grad.data() + i * cout * spatial, cout, spatial);
          if (bd && bd->requires_grad) {
            for (std::size_t c = 0; c < cout; ++c) {
              const double* row = o.grad.data() + (i * cout + c) * spatial;
              bd->grad[c] += std::accumulate(row, row + spatial, 0.0);
            }
          }
          if (wdd->requires_grad) {
            im2col(xd->values.data() + i * in_size, g, cols.data());
            product(gw, go, ConstMatrixMap(cols.data(), rows, spatial).transpose(), true);
          }
          if (xd->requires_grad) {
            MatrixMap cm(cols.data(), rows, spatial);
            product(cm, wm.transpose(), go, false);
            col2im_add(cols.data(), g, xd->grad.data() + i * in_size);
          }
        }
      },
      "conv2d");
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "max_pool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel < 1 || stride < 1) throw DimensionError("max_pool2d: kernel and stride must be >= 1");
  if (kernel > h || kernel > w) {
    throw DimensionError("max_pool2d: window " + std::to_string(kernel) + " larger than input " + std::to_string(h) +
                         "x" + std::to_string(w));
  }
  auto out_extent = [&](std::size_t in) {
    std::size_t o = (in - kernel + stride - 1) / stride + 1;
    if ((o - 1) * stride >= in) --o;
    return o;
  };
  const std::size_t oh = out_extent(h), ow = out_extent(w);
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto xs = x.values();
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = base + i * stride * w + j * stride;
        for (std::size_t di = 0; di < kernel && i * stride + di < h; ++di) {
          for (std::size_t dj = 0; dj < kernel && j * stride + dj < w; ++dj) {
            const std::size_t idx = base + (i * stride + di) * w + j * stride + dj;
            if (xs[idx] > best || std::isnan(xs[idx])) {
              best = xs[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (p * oh + i) * ow + j;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  auto xd = x.data();
  return make_result(
      {n, c, oh, ow}, std::move(out), {x},
      [xd, argmax = std::move(argmax)](const TensorData& o) {
        for (std::size_t i = 0; i < argmax.size(); ++i) xd->grad[argmax[i]] += o.grad[i];
      },
      "max_pool2d");
}

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "upsample_bilinear");
  if (out_h < 1 || out_w < 1) throw DimensionError("upsample_bilinear: output size must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  std::vector<double> out(n * c * out_h * out_w);
  const auto xs = x.values();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xs.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Tap& a = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& b = tx[j];
        const double top = src[a.i0 * w + b.i0] * (1.0 - b.frac) + src[a.i0 * w + b.i1] * b.frac;
        const double bot = src[a.i1 * w + b.i0] * (1.0 - b.frac) + src[a.i1 * w + b.i1] * b.frac;
        dst[i * out_w + j] = top * (1.0 - a.frac) + bot * a.frac;
      }
    }
  }
  auto xd = x.data();
  return make_result(
      {n, c, out_h, out_w}, std::move(out), {x},
      [xd, ty = std::move(ty), tx = std::move(tx), n, c, h, w, out_h, out_w](const TensorData& o) {
        for (std::size_t p = 0; p < n * c; ++p) {
          double* gsrc = xd->grad.data() + p * h * w;
          const double* gdst = o.grad.data() + p * out_h * out_w;
          for (std::size_t i = 0; i < out_h; ++i) {
            const Tap& a = ty[i];
            for (std::size_t j = 0; j < out_w; ++j) {
              const Tap& b = tx[j];
              const double g = gdst[i * out_w + j];
              gsrc[a.i0 * w + b.i0] += g * (1.0 - a.frac) * (1.0 - b.frac);
              gsrc[a.i0 * w + b.i1] += g * (1.0 - a.frac) * b.frac;
              gsrc[a.i1 * w + b.i0] += g * a.frac * (1.0 - b.frac);
              gsrc[a.i1 * w + b.i1] += g * a.frac * b.frac;
            }
          }
        }
      },
      "upsample_bilinear");
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xs = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xs[i]));
  auto xd = x.data();
  return make_result(
      x.shape(), std::move(out), {x},
      [xd](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const double s = o.values[i];
          xd->grad[i] += o.grad[i] * s * (1.0 - s);
        }
      },
      "sigmoid");
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xs = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] < 0.0 ? 0.0 : xs[i];  // NaN passes through
  auto xd = x.data();
  return make_result(
      x.shape(), std::move(out), {x},
      [xd](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          if (xd->values[i] > 0.0) xd->grad[i] += o.grad[i];
        }
      },
      "relu");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto ad = a.data(), bd = b.data();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [ad, bd](const TensorData& o) {
        if (wants_grad(ad)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) ad->grad[i] += o.grad[i];
        }
        if (wants_grad(bd)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) bd->grad[i] += o.grad[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  auto ad = a.data(), bd = b.data();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [ad, bd](const TensorData& o) {
        if (wants_grad(ad)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) ad->grad[i] += o.grad[i];
        }
        if (wants_grad(bd)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) bd->grad[i] -= o.grad[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto ad = a.data(), bd = b.data();
  return make_result(
      a.shape(), std::move(out), {a, b},
      [ad, bd](const TensorData& o) {
        if (wants_grad(ad)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) ad->grad[i] += o.grad[i] * bd->values[i];
        }
        if (wants_grad(bd)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) bd->grad[i] += o.grad[i] * ad->values[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor;
  auto xd = x.data();
  return make_result(
      x.shape(), std::move(out), {x},
      [xd, factor](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) xd->grad[i] += o.grad[i] * factor;
      },
      "scale");
}

Tensor mul_broadcast(const Tensor& x, const Tensor& s) {
  require_rank(x, 4, "mul_broadcast");
  require_rank(s, 4, "mul_broadcast");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const bool per_channel = s.dim(0) == n && s.dim(1) == c && s.dim(2) == 1 && s.dim(3) == 1;
  const bool per_pixel = s.dim(0) == n && s.dim(1) == 1 && s.dim(2) == h && s.dim(3) == w;
  if (!per_channel && !per_pixel) {
    throw DimensionError("mul_broadcast: cannot broadcast " + shape_string(s.shape()) + " onto " +
                         shape_string(x.shape()));
  }
  const std::size_t hw = h * w;
  // Maps a flat index of x to the index of its weight in s.
  auto weight_index = [=](std::size_t i) {
    const std::size_t ni = i / (c * hw);
    return per_channel ? i / hw : ni * hw + i % hw;
  };
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * s.values()[weight_index(i)];
  auto xd = x.data(), sd = s.data();
  return make_result(
      x.shape(), std::move(out), {x, s},
      [xd, sd, weight_index](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const std::size_t k = weight_index(i);
          if (xd->requires_grad) xd->grad[i] += o.grad[i] * sd->values[k];
          if (sd->requires_grad) sd->grad[k] += o.grad[i] * xd->values[i];
        }
      },
      "mul_broadcast");
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw UsageError("concat_channels: no inputs");
  for (const auto& t : xs) require_rank(t, 4, "concat_channels");
  const std::size_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  std::size_t total = 0;
  for (const auto& t : xs) {
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
      throw DimensionError("concat_channels: mismatch on axes 0,2,3: " + shape_string(xs[0].shape()) + " vs " +
                           shape_string(t.shape()));
    }
    total += t.dim(1);
  }
  const std::size_t hw = h * w;
  std::vector<double> out(n * total * hw);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const std::size_t ci = t.dim(1);
    for (std::size_t b = 0; b < n; ++b) {
      std::copy_n(t.values().data() + b * ci * hw, ci * hw, out.data() + (b * total + off) * hw);
    }
    off += ci;
  }
  std::vector<std::shared_ptr<TensorData>> parts;
  for (const auto& t : xs) parts.push_back(t.data());
  return make_result(
      {n, total, h, w}, std::move(out), xs,
      [parts, offsets, n, total, hw](const TensorData& o) {
        for (std::size_t p = 0; p < parts.size(); ++p) {
          if (!parts[p]->requires_grad) continue;
          const std::size_t ci = parts[p]->shape[1];
          for (std::size_t b = 0; b < n; ++b) {
            const double* src = o.grad.data() + (b * total + offsets[p]) * hw;
            double* dst = parts[p]->grad.data() + b * ci * hw;
            for (std::size_t i = 0; i < ci * hw; ++i) dst[i] += src[i];
          }
        }
      },
      "concat_channels");
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 4, "slice_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (begin + count > c || count == 0) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") outside axis 1 of extent " + std::to_string(c));
  }
  std::vector<double> out(n * count * hw);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy_n(x.values().data() + (b * c + begin) * hw, count * hw, out.data() + b * count * hw);
  }
  auto xd = x.data();
  return make_result(
      {n, count, x.dim(2), x.dim(3)}, std::move(out), {x},
      [xd, n, c, begin, count, hw](const TensorData& o) {
        for (std::size_t b = 0; b < n; ++b) {
          const double* src = o.grad.data() + b * count * hw;
          double* dst = xd->grad.data() + (b * c + begin) * hw;
          for (std::size_t i = 0; i < count * hw; ++i) dst[i] += src[i];
        }
      },
      "slice_channels");
}

Tensor global_pool(const Tensor& x, PoolMode mode) {
  require_rank(x, 4, "global_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw DimensionError("global_pool: empty spatial extent");
  std::vector<double> out(n * c);
  std::vector<std::size_t> argmax(mode == PoolMode::Max ? n * c : 0);
  const auto xs = x.values();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xs.data() + p * hw;
    if (mode == PoolMode::Avg) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      out[p] = acc / static_cast<double>(hw);
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < hw; ++i) {
        if (src[i] > src[best]) best = i;
      }
      out[p] = src[best];
      argmax[p] = p * hw + best;
    }
  }
  auto xd = x.data();
  return make_result(
      {n, c, 1, 1}, std::move(out), {x},
      [xd, mode, hw, argmax = std::move(argmax)](const TensorData& o) {
        if (mode == PoolMode::Avg) {
          const double inv = 1.0 / static_cast<double>(hw);
          for (std::size_t p = 0; p < o.grad.size(); ++p) {
            double* dst = xd->grad.data() + p * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] += o.grad[p] * inv;
          }
        } else {
          for (std::size_t p = 0; p < o.grad.size(); ++p) xd->grad[argmax[p]] += o.grad[p];
        }
      },
      "global_pool");
}

Tensor reduce_channels(const Tensor& x, PoolMode mode) {
  require_rank(x, 4, "reduce_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> out(n * hw);
  std::vector<std::size_t> argmax(mode == PoolMode::Max ? n * hw : 0);
  const auto xs = x.values();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      const double* src = xs.data() + b * c * hw + i;
      if (mode == PoolMode::Avg) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) acc += src[ch * hw];
        out[b * hw + i] = acc / static_cast<double>(c);
      } else {
        std::size_t best = 0;
        for (std::size_t ch = 1; ch < c; ++ch) {
          if (src[ch * hw] > src[best * hw]) best = ch;
        }
        out[b * hw + i] = src[best * hw];
        argmax[b * hw + i] = (b * c + best) * hw + i;
      }
    }
  }
  auto xd = x.data();
  return make_result(
      {n, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
      [xd, mode, n, c, hw, argmax = std::move(argmax)](const TensorData& o) {
        if (mode == PoolMode::Avg) {
          const double inv = 1.0 / static_cast<double>(c);
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              for (std::size_t i = 0; i < hw; ++i) xd->grad[(b * c + ch) * hw + i] += o.grad[b * hw + i] * inv;
            }
          }
        } else {
          for (std::size_t i = 0; i < argmax.size(); ++i) xd->grad[argmax[i]] += o.grad[i];
        }
      },
      "reduce_channels");
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t n = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  if (w.dim(1) != cin) {
    throw DimensionError("linear: weight shape " + shape_string(w.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != cout)) {
    throw DimensionError("linear: bias shape " + shape_string(b.shape()) + " does not match " + std::to_string(cout));
  }
  std::vector<double> out(n * cout);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = b.defined() ? b.values()[o] : 0.0;
      for (std::size_t k = 0; k < cin; ++k) acc += w.values()[o * cin + k] * x.values()[i * cin + k];
      out[i * cout + o] = acc;
    }
  }
  auto xd = x.data(), wdd = w.data();
  auto bd = b.defined() ? b.data() : nullptr;
  return make_result(
      {n, cout}, std::move(out), {x, w, b},
      [xd, wdd, bd, n, cin, cout](const TensorData& o) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < cout; ++c) {
            const double g = o.grad[i * cout + c];
            if (bd && bd->requires_grad) bd->grad[c] += g;
            for (std::size_t k = 0; k < cin; ++k) {
              if (wdd->requires_grad) wdd->grad[c * cin + k] += g * xd->values[i * cin + k];
              if (xd->requires_grad) xd->grad[i * cin + k] += g * wdd->values[c * cin + k];
            }
          }
        }
      },
      "linear");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto xd = x.data();
  return make_result(
      std::move(shape), std::move(out), {x},
      [xd](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) xd->grad[i] += o.grad[i];
      },
      "reshape");
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  auto xd = x.data();
  return make_result(
      {1}, {acc}, {x},
      [xd](const TensorData& o) {
        for (double& g : xd->grad) g += o.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training) {
  require_rank(x, 4, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c ||
      state.running_var.numel() != c) {
    throw DimensionError("batch_norm: parameter size does not match channel axis of " + shape_string(x.shape()));
  }
  const std::size_t count = n * hw;
  std::vector<double> mu(c), inv_std(c);
  const auto xs = x.values();
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* src = xs.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      }
      const double m = acc / static_cast<double>(count);
      double var = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* src = xs.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) var += (src[i] - m) * (src[i] - m);
      }
      var /= static_cast<double>(count);
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      auto rm = state.running_mean.values();
      auto rv = state.running_var.values();
      rm[ch] = (1.0 - state.momentum) * rm[ch] + state.momentum * m;
      rv[ch] = (1.0 - state.momentum) * rv[ch] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean.values()[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var.values()[ch] + state.eps);
    }
  }
  std::vector<double> xhat(x.numel()), out(x.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * hw;
      const double gm = gamma.values()[ch], bt = beta.values()[ch];
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[base + i] = (xs[base + i] - mu[ch]) * inv_std[ch];
        out[base + i] = gm * xhat[base + i] + bt;
      }
    }
  }
  auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [xd, gd, bd, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, count,
       training](const TensorData& o) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_g += o.grad[base + i];
              sum_gx += o.grad[base + i] * xhat[base + i];
            }
          }
          if (gd->requires_grad) gd->grad[ch] += sum_gx;
          if (bd->requires_grad) bd->grad[ch] += sum_g;
          if (!xd->requires_grad) continue;
          const double k = gd->values[ch] * inv_std[ch];
          const double inv_count = 1.0 / static_cast<double>(count);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double g = o.grad[base + i];
              xd->grad[base + i] += training ? k * (g - sum_g * inv_count - xhat[base + i] * sum_gx * inv_count)
                                             : k * g;
            }
          }
        }
      },
      "batch_norm");
}

void kaiming_uniform(Tensor& w, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : w.values()) v = dist(rng);
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

FiniteDiffReport finite_diff_report(const std::function<Tensor()>& f, Tensor x, const FiniteDiffOptions& options) {
  x.zero_grad();
  Tensor y = f();
  backward(y);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (coords.size() > options.max_coords) {
    Rng rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coords);
  }
  NoGradGuard no_grad;
  auto central = [&](double& v, double original, double eps) {
    v = original + eps;
    const double plus = f().item();
    v = original - eps;
    const double minus = f().item();
    v = original;
    return (plus - minus) / (2.0 * eps);
  };
  FiniteDiffReport report;
  for (std::size_t idx : coords) {
    double& v = x.values()[idx];
    const double original = v;
    const double numeric = central(v, original, options.eps);
    if (options.skip_kinks) {
      const double half = central(v, original, options.eps / 2.0);
      const double scale = std::max({std::abs(numeric), std::abs(half), options.abs_floor});
      if (std::abs(numeric - half) > options.kink_tolerance * scale) {
        ++report.skipped;
        continue;
      }
    }
    const double denom = std::max({std::abs(analytic[idx]), std::abs(numeric), options.abs_floor});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[idx] - numeric) / denom);
    ++report.checked;
  }
  return report;
}

double finite_diff_check(const std::function<Tensor()>& f, Tensor x, const FiniteDiffOptions& options) {
  return finite_diff_report(f, x, options).max_rel_error;
}

}  // namespace haru
