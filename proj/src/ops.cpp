#include <cblas.h>

#include <algorithm>
#include <cmath>

#include "dcsw/errors.hpp"
#include "dcsw/tensor.hpp"

namespace dcsw {

namespace {

using detail::BackwardFn;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op, const char* what) {
  if (a.rank() != rank) {
    throw ConfigError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                      ", got shape " + shape_str(a.shape()));
  }
}

template <typename F>
std::vector<double> map_values(std::span<const double> a, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
std::vector<double> zip_values(std::span<const double> a, std::span<const double> b, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Convolution kernels. Output rows are processed in chunks so the column
// buffer stays bounded for large images.

constexpr std::size_t kMaxColumnDoubles = std::size_t{1} << 22;

std::size_t rows_per_chunk(const ConvGeometry& g, std::size_t cin) {
  const std::size_t per_row = cin * g.kernel * g.kernel * g.out_w;
  return std::clamp<std::size_t>(kMaxColumnDoubles / std::max<std::size_t>(per_row, 1), 1,
                                 g.out_h);
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0;
}

// col[(c*k + p)*k + q][(r - r0)*out_w + j] = x[c, r*s + p - pad_top, j*s + q - pad_left]
void im2col(const double* x, std::size_t cin, const ConvGeometry& g, std::size_t r0,
            std::size_t r1, double* col) {
  const std::size_t k = g.kernel;
  const std::size_t ncols = (r1 - r0) * g.out_w;
  for (std::size_t c = 0; c < cin; ++c) {
    const double* xc = x + c * g.in_h * g.in_w;
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t q = 0; q < k; ++q) {
        double* dst = col + ((c * k + p) * k + q) * ncols;
        for (std::size_t r = r0; r < r1; ++r) {
          const std::ptrdiff_t u = static_cast<std::ptrdiff_t>(r * g.stride + p) -
                                   static_cast<std::ptrdiff_t>(g.pad_top);
          double* drow = dst + (r - r0) * g.out_w;
          if (u < 0 || u >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(drow, drow + g.out_w, 0.0);
            continue;
          }
          const double* xrow = xc + static_cast<std::size_t>(u) * g.in_w;
          for (std::size_t j = 0; j < g.out_w; ++j) {
            const std::ptrdiff_t v = static_cast<std::ptrdiff_t>(j * g.stride + q) -
                                     static_cast<std::ptrdiff_t>(g.pad_left);
            drow[j] = (v < 0 || v >= static_cast<std::ptrdiff_t>(g.in_w)) ? 0.0 : xrow[v];
          }
        }
      }
    }
  }
}

// Scatter-add of a column buffer back into image layout (adjoint of im2col).
void col2im_add(const double* col, std::size_t cin, const ConvGeometry& g, std::size_t r0,
                std::size_t r1, double* x) {
  const std::size_t k = g.kernel;
  const std::size_t ncols = (r1 - r0) * g.out_w;
  for (std::size_t c = 0; c < cin; ++c) {
    double* xc = x + c * g.in_h * g.in_w;
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t q = 0; q < k; ++q) {
        const double* src = col + ((c * k + p) * k + q) * ncols;
        for (std::size_t r = r0; r < r1; ++r) {
          const std::ptrdiff_t u = static_cast<std::ptrdiff_t>(r * g.stride + p) -
                                   static_cast<std::ptrdiff_t>(g.pad_top);
          if (u < 0 || u >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          double* xrow = xc + static_cast<std::size_t>(u) * g.in_w;
          const double* srow = src + (r - r0) * g.out_w;
          for (std::size_t j = 0; j < g.out_w; ++j) {
            const std::ptrdiff_t v = static_cast<std::ptrdiff_t>(j * g.stride + q) -
                                     static_cast<std::ptrdiff_t>(g.pad_left);
            if (v >= 0 && v < static_cast<std::ptrdiff_t>(g.in_w)) xrow[v] += srow[j];
          }
        }
      }
    }
  }
}

void check_conv_operands(const Shape& xs, const Shape& ws, const ConvGeometry& g,
                         const char* op) {
  if (xs.size() != 4) {
    throw ConfigError(std::string(op) + ": input must be [B,C,H,W], got " + shape_str(xs));
  }
  if (ws.size() != 4 || ws[2] != g.kernel || ws[3] != g.kernel) {
    throw ConfigError(std::string(op) + ": weights must be [Cout,Cin," +
                      std::to_string(g.kernel) + "," + std::to_string(g.kernel) + "], got " +
                      shape_str(ws));
  }
  if (xs[1] != ws[1]) {
    throw ConfigError(std::string(op) + ": input channel dimension Cin=" + std::to_string(xs[1]) +
                      " does not match weight Cin=" + std::to_string(ws[1]));
  }
  if (xs[2] != g.in_h || xs[3] != g.in_w) {
    throw ConfigError(std::string(op) + ": input spatial size " + shape_str(xs) +
                      " does not match geometry " + std::to_string(g.in_h) + "x" +
                      std::to_string(g.in_w));
  }
}

std::vector<double> conv_forward_values(const Tensor& x, const Tensor& w, const ConvGeometry& g) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), cout = w.dim(0);
  const std::size_t in_plane = cin * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t ckk = cin * g.kernel * g.kernel;
  std::vector<double> y(batch * cout * out_plane);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  if (is_pointwise(g)) {
    for (std::size_t b = 0; b < batch; ++b) {
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, cout, out_plane, cin, 1.0, wv, cin,
                  xv + b * in_plane, out_plane, 0.0, y.data() + b * cout * out_plane, out_plane);
    }
    return y;
  }
  const std::size_t chunk = rows_per_chunk(g, cin);
  std::vector<double> col(ckk * chunk * g.out_w);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r0 = 0; r0 < g.out_h; r0 += chunk) {
      const std::size_t r1 = std::min(g.out_h, r0 + chunk);
      const std::size_t ncols = (r1 - r0) * g.out_w;
      im2col(xv + b * in_plane, cin, g, r0, r1, col.data());
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, cout, ncols, ckk, 1.0, wv, ckk,
                  col.data(), ncols, 0.0, y.data() + b * cout * out_plane + r0 * g.out_w,
                  out_plane);
    }
  }
  return y;
}

std::vector<double> conv_input_grad_values(const Tensor& gy, const Tensor& w,
                                           const ConvGeometry& g) {
  const std::size_t batch = gy.dim(0), cout = w.dim(0), cin = w.dim(1);
  const std::size_t in_plane = cin * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t ckk = cin * g.kernel * g.kernel;
  std::vector<double> gx(batch * in_plane, 0.0);
  const double* gv = gy.values().data();
  const double* wv = w.values().data();
  if (is_pointwise(g)) {
    for (std::size_t b = 0; b < batch; ++b) {
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, cin, out_plane, cout, 1.0, wv, cin,
                  gv + b * cout * out_plane, out_plane, 0.0, gx.data() + b * in_plane, out_plane);
    }
    return gx;
  }
  const std::size_t chunk = rows_per_chunk(g, cin);
  std::vector<double> col(ckk * chunk * g.out_w);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r0 = 0; r0 < g.out_h; r0 += chunk) {
      const std::size_t r1 = std::min(g.out_h, r0 + chunk);
      const std::size_t ncols = (r1 - r0) * g.out_w;
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, ckk, ncols, cout, 1.0, wv, ckk,
                  gv + b * cout * out_plane + r0 * g.out_w, out_plane, 0.0, col.data(), ncols);
      col2im_add(col.data(), cin, g, r0, r1, gx.data() + b * in_plane);
    }
  }
  return gx;
}

std::vector<double> conv_weight_grad_values(const Tensor& x, const Tensor& gy,
                                            const ConvGeometry& g) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), cout = gy.dim(1);
  const std::size_t in_plane = cin * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t ckk = cin * g.kernel * g.kernel;
  std::vector<double> gw(cout * ckk, 0.0);
  const double* xv = x.values().data();
  const double* gv = gy.values().data();
  if (is_pointwise(g)) {
    for (std::size_t b = 0; b < batch; ++b) {
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, cout, cin, out_plane, 1.0,
                  gv + b * cout * out_plane, out_plane, xv + b * in_plane, out_plane, 1.0,
                  gw.data(), cin);
    }
    return gw;
  }
  const std::size_t chunk = rows_per_chunk(g, cin);
  std::vector<double> col(ckk * chunk * g.out_w);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r0 = 0; r0 < g.out_h; r0 += chunk) {
      const std::size_t r1 = std::min(g.out_h, r0 + chunk);
      const std::size_t ncols = (r1 - r0) * g.out_w;
      im2col(xv + b * in_plane, cin, g, r0, r1, col.data());
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, cout, ckk, ncols, 1.0,
                  gv + b * cout * out_plane + r0 * g.out_w, out_plane, col.data(), ncols, 1.0,
                  gw.data(), ckk);
    }
  }
  return gw;
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel,
                           std::size_t stride, Padding padding) {
  if (kernel < 1) throw ConfigError("conv2d: kernel size must be >= 1");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  ConvGeometry g;
  g.kernel = kernel;
  g.stride = stride;
  g.in_h = in_h;
  g.in_w = in_w;
  if (padding == Padding::same) {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const auto total = [&](std::size_t in, std::size_t out) -> std::size_t {
      const std::size_t need = (out - 1) * stride + kernel;
      return need > in ? need - in : 0;
    };
    g.pad_top = total(in_h, g.out_h) / 2;
    g.pad_left = total(in_w, g.out_w) / 2;
  } else {
    if (in_h < kernel || in_w < kernel) {
      throw ConfigError("conv2d: valid convolution with kernel " + std::to_string(kernel) +
                        " on input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    }
    g.out_h = (in_h - kernel) / stride + 1;
    g.out_w = (in_w - kernel) / stride + 1;
  }
  return g;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const ConvGeometry& g) {
  check_conv_operands(x.shape(), w.shape(), g, "conv2d");
  Shape out{x.dim(0), w.dim(0), g.out_h, g.out_w};
  BackwardFn back = [x, w, g](const Tensor& gy, const std::vector<bool>& needed) {
    std::vector<Tensor> grads(2);
    if (needed[0]) grads[0] = conv2d_input_grad(gy, w, g);
    if (needed[1]) grads[1] = conv2d_weight_grad(x, gy, g);
    return grads;
  };
  return Tensor::make_result(std::move(out), conv_forward_values(x, w, g), "conv2d", {x, w},
                             std::move(back));
}

Tensor conv2d_input_grad(const Tensor& gy, const Tensor& w, const ConvGeometry& g) {
  if (gy.rank() != 4 || gy.dim(1) != w.dim(0) || gy.dim(2) != g.out_h || gy.dim(3) != g.out_w) {
    throw ConfigError("conv2d_input_grad: gradient shape " + shape_str(gy.shape()) +
                      " inconsistent with weights " + shape_str(w.shape()));
  }
  Shape out{gy.dim(0), w.dim(1), g.in_h, g.in_w};
  BackwardFn back = [gy, w, g](const Tensor& h, const std::vector<bool>& needed) {
    std::vector<Tensor> grads(2);
    if (needed[0]) grads[0] = conv2d_forward(h, w, g);
    if (needed[1]) grads[1] = conv2d_weight_grad(h, gy, g);
    return grads;
  };
  return Tensor::make_result(std::move(out), conv_input_grad_values(gy, w, g), "conv2d_input_grad",
                             {gy, w}, std::move(back));
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& gy, const ConvGeometry& g) {
  if (x.rank() != 4 || gy.rank() != 4 || x.dim(0) != gy.dim(0) || x.dim(2) != g.in_h ||
      x.dim(3) != g.in_w || gy.dim(2) != g.out_h || gy.dim(3) != g.out_w) {
    throw ConfigError("conv2d_weight_grad: input " + shape_str(x.shape()) + " and gradient " +
                      shape_str(gy.shape()) + " inconsistent");
  }
  Shape out{gy.dim(1), x.dim(1), g.kernel, g.kernel};
  BackwardFn back = [x, gy, g](const Tensor& k, const std::vector<bool>& needed) {
    std::vector<Tensor> grads(2);
    if (needed[0]) grads[0] = conv2d_input_grad(gy, k, g);
    if (needed[1]) grads[1] = conv2d_forward(x, k, g);
    return grads;
  };
  return Tensor::make_result(std::move(out), conv_weight_grad_values(x, gy, g),
                             "conv2d_weight_grad", {x, gy}, std::move(back));
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              Padding padding) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weights");
  if (w.dim(2) != w.dim(3)) {
    throw ConfigError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  }
  const ConvGeometry g = conv_geometry(x.dim(2), x.dim(3), w.dim(2), stride, padding);
  Tensor y = conv2d_forward(x, w, g);
  if (!b.defined()) return y;
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) {
    throw ConfigError("conv2d: bias shape " + shape_str(b.shape()) + " does not match Cout=" +
                      std::to_string(w.dim(0)));
  }
  return add(y, broadcast_channels(b, y.shape()));
}

// ---------------------------------------------------------------------------
// Activations

Tensor prelu(const Tensor& x, const Tensor& slope) {
  require_rank(x, 4, "prelu", "input");
  if (slope.rank() != 1 || slope.dim(0) != x.dim(1)) {
    throw ConfigError("prelu: slope shape " + shape_str(slope.shape()) + " does not match C=" +
                      std::to_string(x.dim(1)));
  }
  if (!all_finite(slope.values())) throw ConfigError("prelu: non-finite slope");
  const std::size_t channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(x.numel());
  auto xv = x.values();
  auto av = slope.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = av[(i / plane) % channels];
    out[i] = xv[i] > 0.0 ? xv[i] : a * xv[i];
  }
  BackwardFn back = [x, slope](const Tensor& g, const std::vector<bool>& needed) {
    std::vector<double> pos(x.numel()), negm(x.numel());
    auto xv = x.values();
    for (std::size_t i = 0; i < pos.size(); ++i) {
      pos[i] = xv[i] > 0.0 ? 1.0 : 0.0;
      negm[i] = 1.0 - pos[i];
    }
    Tensor pos_mask(x.shape(), std::move(pos));
    Tensor neg_mask(x.shape(), std::move(negm));
    std::vector<Tensor> grads(2);
    if (needed[0]) {
      Tensor local = add(pos_mask, mul(neg_mask, broadcast_channels(slope, x.shape())));
      grads[0] = mul(g, local);
    }
    if (needed[1]) grads[1] = sum_channels(mul(g, mul(x, neg_mask)));
    return grads;
  };
  return Tensor::make_result(x.shape(), std::move(out), "prelu", {x, slope}, std::move(back));
}

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!std::isfinite(slope)) throw ConfigError("leaky_relu: non-finite slope");
  auto out = map_values(x.values(), [slope](double v) { return v > 0.0 ? v : slope * v; });
  BackwardFn back = [x, slope](const Tensor& g, const std::vector<bool>&) {
    Tensor local(x.shape(),
                 map_values(x.values(), [slope](double v) { return v > 0.0 ? 1.0 : slope; }));
    return std::vector<Tensor>{mul(g, local)};
  };
  return Tensor::make_result(x.shape(), std::move(out), "leaky_relu", {x}, std::move(back));
}

// ---------------------------------------------------------------------------
// Channel concatenation

Tensor concat_channels(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ConfigError("concat_channels: no inputs");
  const Tensor& first = inputs.front();
  require_rank(first, 4, "concat_channels", "input 0");
  std::size_t total = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& t = inputs[i];
    require_rank(t, 4, "concat_channels", "every input");
    if (t.dim(0) != first.dim(0) || t.dim(2) != first.dim(2) || t.dim(3) != first.dim(3)) {
      throw ConfigError("concat_channels: input " + std::to_string(i) + " shape " +
                        shape_str(t.shape()) + " disagrees with " + shape_str(first.shape()) +
                        " outside the channel axis");
    }
    total += t.dim(1);
  }
  if (inputs.size() == 1) return first;
  const std::size_t batch = first.dim(0), plane = first.dim(2) * first.dim(3);
  std::vector<double> out(batch * total * plane);
  std::size_t offset = 0;
  std::vector<std::size_t> starts;
  for (const auto& t : inputs) {
    starts.push_back(offset);
    const std::size_t c = t.dim(1);
    auto v = t.values();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(v.data() + b * c * plane, c * plane,
                  out.data() + (b * total + offset) * plane);
    }
    offset += c;
  }
  BackwardFn back = [inputs, starts](const Tensor& g, const std::vector<bool>& needed) {
    std::vector<Tensor> grads(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (needed[i]) grads[i] = slice_channels(g, starts[i], inputs[i].dim(1));
    }
    return grads;
  };
  return Tensor::make_result(Shape{batch, total, first.dim(2), first.dim(3)}, std::move(out),
                             "concat_channels", inputs, std::move(back));
}

Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 4, "slice_channels", "input");
  const std::size_t channels = x.dim(1);
  if (count == 0 || start + count > channels) {
    throw ConfigError("slice_channels: range [" + std::to_string(start) + "," +
                      std::to_string(start + count) + ") outside " + std::to_string(channels) +
                      " channels");
  }
  const std::size_t batch = x.dim(0), plane = x.dim(2) * x.dim(3);
  std::vector<double> out(batch * count * plane);
  auto v = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(v.data() + (b * channels + start) * plane, count * plane,
                out.data() + b * count * plane);
  }
  Shape xs = x.shape();
  BackwardFn back = [xs, start, count](const Tensor& g, const std::vector<bool>&) {
    std::vector<Tensor> parts;
    if (start > 0) parts.push_back(Tensor::zeros({xs[0], start, xs[2], xs[3]}));
    parts.push_back(g);
    if (start + count < xs[1]) {
      parts.push_back(Tensor::zeros({xs[0], xs[1] - start - count, xs[2], xs[3]}));
    }
    return std::vector<Tensor>{concat_channels(parts)};
  };
  return Tensor::make_result(Shape{batch, count, x.dim(2), x.dim(3)}, std::move(out),
                             "slice_channels", {x}, std::move(back));
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  BackwardFn back = [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{g, g};
  };
  return Tensor::make_result(a.shape(), zip_values(a.values(), b.values(), std::plus<>{}), "add",
                             {a, b}, std::move(back));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  BackwardFn back = [](const Tensor& g, const std::vector<bool>& needed) {
    return std::vector<Tensor>{g, needed[1] ? neg(g) : Tensor()};
  };
  return Tensor::make_result(a.shape(), zip_values(a.values(), b.values(), std::minus<>{}), "sub",
                             {a, b}, std::move(back));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  BackwardFn back = [a, b](const Tensor& g, const std::vector<bool>& needed) {
    std::vector<Tensor> grads(2);
    if (needed[0]) grads[0] = mul(g, b);
    if (needed[1]) grads[1] = mul(g, a);
    return grads;
  };
  return Tensor::make_result(a.shape(), zip_values(a.values(), b.values(), std::multiplies<>{}),
                             "mul", {a, b}, std::move(back));
}

Tensor add_scalar(const Tensor& a, double s) {
  BackwardFn back = [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{g};
  };
  return Tensor::make_result(a.shape(), map_values(a.values(), [s](double v) { return v + s; }),
                             "add_scalar", {a}, std::move(back));
}

Tensor scale(const Tensor& a, double s) {
  BackwardFn back = [s](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{scale(g, s)};
  };
  return Tensor::make_result(a.shape(), map_values(a.values(), [s](double v) { return v * s; }),
                             "scale", {a}, std::move(back));
}

Tensor neg(const Tensor& a) {
  BackwardFn back = [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{neg(g)};
  };
  return Tensor::make_result(a.shape(), map_values(a.values(), [](double v) { return -v; }), "neg",
                             {a}, std::move(back));
}

Tensor abs(const Tensor& a) {
  BackwardFn back = [a](const Tensor& g, const std::vector<bool>&) {
    Tensor sign(a.shape(), map_values(a.values(), [](double v) {
                  return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                }));
    return std::vector<Tensor>{mul(g, sign)};
  };
  return Tensor::make_result(a.shape(),
                             map_values(a.values(), [](double v) { return std::fabs(v); }), "abs",
                             {a}, std::move(back));
}

Tensor safe_reciprocal(const Tensor& a) {
  BackwardFn back = [a](const Tensor& g, const std::vector<bool>&) {
    Tensor r = safe_reciprocal(a);
    return std::vector<Tensor>{mul(g, neg(mul(r, r)))};
  };
  return Tensor::make_result(
      a.shape(), map_values(a.values(), [](double v) { return v == 0.0 ? 0.0 : 1.0 / v; }),
      "safe_reciprocal", {a}, std::move(back));
}

// ---------------------------------------------------------------------------
// Reductions and their broadcasting adjoints

Tensor sum(const Tensor& a) {
  if (a.numel() == 0) throw UsageError("sum of an empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  Shape as = a.shape();
  BackwardFn back = [as](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_scalar(g, as)};
  };
  return Tensor::make_result(Shape{}, {s}, "sum", {a}, std::move(back));
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw UsageError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_per_sample(const Tensor& a) {
  if (a.rank() < 1 || a.numel() == 0) throw UsageError("sum_per_sample of an empty tensor");
  const std::size_t batch = a.dim(0), per = a.numel() / batch;
  std::vector<double> out(batch, 0.0);
  auto v = a.values();
  for (std::size_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += v[b * per + i];
    out[b] = s;
  }
  Shape as = a.shape();
  BackwardFn back = [as](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_per_sample(g, as)};
  };
  return Tensor::make_result(Shape{batch}, std::move(out), "sum_per_sample", {a}, std::move(back));
}

Tensor l2_norm_per_sample(const Tensor& a) {
  if (a.rank() < 1 || a.numel() == 0) throw UsageError("l2_norm_per_sample of an empty tensor");
  const std::size_t batch = a.dim(0), per = a.numel() / batch;
  std::vector<double> out(batch, 0.0);
  auto v = a.values();
  for (std::size_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += v[b * per + i] * v[b * per + i];
    out[b] = std::sqrt(s);
  }
  BackwardFn back = [a](const Tensor& g, const std::vector<bool>&) {
    Tensor inv_norm = safe_reciprocal(l2_norm_per_sample(a));
    return std::vector<Tensor>{scale_per_sample(a, mul(g, inv_norm))};
  };
  return Tensor::make_result(Shape{batch}, std::move(out), "l2_norm_per_sample", {a},
                             std::move(back));
}

Tensor sum_channels(const Tensor& a) {
  require_rank(a, 4, "sum_channels", "input");
  const std::size_t batch = a.dim(0), channels = a.dim(1), plane = a.dim(2) * a.dim(3);
  std::vector<double> out(channels, 0.0);
  auto v = a.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = v.data() + (b * channels + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out[c] += s;
    }
  }
  Shape as = a.shape();
  BackwardFn back = [as](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{broadcast_channels(g, as)};
  };
  return Tensor::make_result(Shape{channels}, std::move(out), "sum_channels", {a},
                             std::move(back));
}

Tensor broadcast_scalar(const Tensor& s, const Shape& shape) {
  if (s.numel() != 1) throw ConfigError("broadcast_scalar: input is not a scalar");
  BackwardFn back = [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{sum(g)};
  };
  return Tensor::make_result(shape, std::vector<double>(shape_numel(shape), s.values()[0]),
                             "broadcast_scalar", {s}, std::move(back));
}

Tensor broadcast_per_sample(const Tensor& v, const Shape& shape) {
  if (v.rank() != 1 || shape.empty() || shape[0] != v.dim(0)) {
    throw ConfigError("broadcast_per_sample: " + shape_str(v.shape()) + " cannot expand to " +
                      shape_str(shape));
  }
  const std::size_t batch = shape[0], per = shape_numel(shape) / batch;
  std::vector<double> out(batch * per);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill_n(out.data() + b * per, per, v.values()[b]);
  }
  BackwardFn back = [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{sum_per_sample(g)};
  };
  return Tensor::make_result(shape, std::move(out), "broadcast_per_sample", {v}, std::move(back));
}

Tensor broadcast_channels(const Tensor& v, const Shape& shape) {
  if (v.rank() != 1 || shape.size() != 4 || shape[1] != v.dim(0)) {
    throw ConfigError("broadcast_channels: " + shape_str(v.shape()) + " cannot expand to " +
                      shape_str(shape));
  }
  const std::size_t batch = shape[0], channels = shape[1], plane = shape[2] * shape[3];
  std::vector<double> out(batch * channels * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::fill_n(out.data() + (b * channels + c) * plane, plane, v.values()[c]);
    }
  }
  BackwardFn back = [](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{sum_channels(g)};
  };
  return Tensor::make_result(shape, std::move(out), "broadcast_channels", {v}, std::move(back));
}

Tensor scale_per_sample(const Tensor& x, const Tensor& s) {
  if (s.rank() != 1 || x.rank() < 1 || x.dim(0) != s.dim(0)) {
    throw ConfigError("scale_per_sample: " + shape_str(s.shape()) + " vs " +
                      shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), per = x.numel() / batch;
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const double f = s.values()[b];
    for (std::size_t i = 0; i < per; ++i) out[b * per + i] = f * xv[b * per + i];
  }
  BackwardFn back = [x, s](const Tensor& g, const std::vector<bool>& needed) {
    std::vector<Tensor> grads(2);
    if (needed[0]) grads[0] = scale_per_sample(g, s);
    if (needed[1]) grads[1] = sum_per_sample(mul(g, x));
    return grads;
  };
  return Tensor::make_result(x.shape(), std::move(out), "scale_per_sample", {x, s},
                             std::move(back));
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ConfigError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Shape as = a.shape();
  BackwardFn back = [as](const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{reshape(g, as)};
  };
  return Tensor::make_result(shape, std::vector<double>(a.values().begin(), a.values().end()),
                             "reshape", {a}, std::move(back));
}

Tensor map_unary(const Tensor& a, const std::function<double(double)>& f,
                 const std::function<double(double)>& df, const std::string& name) {
  BackwardFn back = [a, df](const Tensor& g, const std::vector<bool>&) {
    auto av = a.values();
    auto gv = g.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = gv[i] * df(av[i]);
    return std::vector<Tensor>{Tensor(a.shape(), std::move(out))};
  };
  return Tensor::make_result(a.shape(), map_values(a.values(), f), name, {a}, std::move(back),
                             /*differentiable_backward=*/false);
}

}  // namespace dcsw
