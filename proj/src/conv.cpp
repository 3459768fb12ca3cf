#include "deeplung/conv.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "deeplung/errors.hpp"

namespace deeplung {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

namespace {

// Column buffers are capped at this many doubles; larger outputs are processed
// in slabs of whole output depth planes.
constexpr Index kColumnBudget = Index{1} << 22;

/// Convolution geometry in forward-conv terms: X is the conv input, Y the
/// conv output. Transposed convolution reuses it with the roles swapped.
struct Geometry {
  Index n = 0, cin = 0, cout = 0;
  Index d = 0, h = 0, w = 0;     // X spatial
  Index od = 0, oh = 0, ow = 0;  // Y spatial
  Int3 k, s, p;

  Index x_plane() const { return d * h * w; }
  Index y_plane() const { return od * oh * ow; }
  Index kvol() const { return Index{k.d} * k.h * k.w; }
  Index krows() const { return cin * kvol(); }
  bool pointwise() const {
    return k == Int3{1} && s == Int3{1} && p == Int3{0};
  }
};

// Output index range [lo, hi) for which o*stride - pad + koff lands in [0, extent).
inline void valid_range(Index out_extent, Index extent, int stride, int pad, int koff, Index& lo,
                        Index& hi) {
  // o*stride >= pad - koff
  const Index a = pad - koff;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  // o*stride <= extent - 1 + pad - koff
  const Index b = extent - 1 + pad - koff;
  hi = b < 0 ? 0 : b / stride + 1;
  lo = std::min(lo, out_extent);
  hi = std::clamp(hi, lo, out_extent);
}

void im2col(const Geometry& g, const double* x, Index oz0, Index oz1, double* col) {
  const Index cols = (oz1 - oz0) * g.oh * g.ow;
  Index row = 0;
  for (Index c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.x_plane();
    for (int kz = 0; kz < g.k.d; ++kz)
      for (int ky = 0; ky < g.k.h; ++ky)
        for (int kx = 0; kx < g.k.w; ++kx, ++row) {
          double* dst = col + row * cols;
          Index xlo, xhi;
          valid_range(g.ow, g.w, g.s.w, g.p.w, kx, xlo, xhi);
          for (Index oz = oz0; oz < oz1; ++oz) {
            const Index iz = oz * g.s.d - g.p.d + kz;
            double* dz = dst + (oz - oz0) * g.oh * g.ow;
            if (iz < 0 || iz >= g.d) {
              std::fill_n(dz, g.oh * g.ow, 0.0);
              continue;
            }
            for (Index oy = 0; oy < g.oh; ++oy) {
              const Index iy = oy * g.s.h - g.p.h + ky;
              double* dr = dz + oy * g.ow;
              if (iy < 0 || iy >= g.h) {
                std::fill_n(dr, g.ow, 0.0);
                continue;
              }
              const double* src = xc + (iz * g.h + iy) * g.w;
              std::fill(dr, dr + xlo, 0.0);
              if (g.s.w == 1) {
                std::copy(src + xlo - g.p.w + kx, src + xhi - g.p.w + kx, dr + xlo);
              } else {
                for (Index ox = xlo; ox < xhi; ++ox) dr[ox] = src[ox * g.s.w - g.p.w + kx];
              }
              std::fill(dr + xhi, dr + g.ow, 0.0);
            }
          }
        }
  }
}

void col2im(const Geometry& g, const double* col, Index oz0, Index oz1, double* gx) {
  const Index cols = (oz1 - oz0) * g.oh * g.ow;
  Index row = 0;
  for (Index c = 0; c < g.cin; ++c) {
    double* xc = gx + c * g.x_plane();
    for (int kz = 0; kz < g.k.d; ++kz)
      for (int ky = 0; ky < g.k.h; ++ky)
        for (int kx = 0; kx < g.k.w; ++kx, ++row) {
          const double* src = col + row * cols;
          Index xlo, xhi;
          valid_range(g.ow, g.w, g.s.w, g.p.w, kx, xlo, xhi);
          for (Index oz = oz0; oz < oz1; ++oz) {
            const Index iz = oz * g.s.d - g.p.d + kz;
            if (iz < 0 || iz >= g.d) continue;
            const double* sz = src + (oz - oz0) * g.oh * g.ow;
            for (Index oy = 0; oy < g.oh; ++oy) {
              const Index iy = oy * g.s.h - g.p.h + ky;
              if (iy < 0 || iy >= g.h) continue;
              const double* sr = sz + oy * g.ow;
              double* dst = xc + (iz * g.h + iy) * g.w;
              for (Index ox = xlo; ox < xhi; ++ox) dst[ox * g.s.w - g.p.w + kx] += sr[ox];
            }
          }
        }
  }
}

Index slab_planes(const Geometry& g) {
  const Index per_plane = g.krows() * g.oh * g.ow;
  return std::clamp<Index>(kColumnBudget / std::max<Index>(per_plane, 1), 1, g.od);
}

// ---- im2col + GEMM kernels; all accumulate into their output ----

void gemm_forward(const Geometry& g, const double* x, const double* w, double* y) {
  Eigen::Map<const RowMatrix> wm(w, g.cout, g.krows());
  const Index plane = g.oh * g.ow;
  if (g.pointwise()) {
    for (Index n = 0; n < g.n; ++n) {
      Eigen::Map<const RowMatrix> xm(x + n * g.cin * g.x_plane(), g.cin, g.y_plane());
      Eigen::Map<RowMatrix> ym(y + n * g.cout * g.y_plane(), g.cout, g.y_plane());
      ym.noalias() += wm * xm;
    }
    return;
  }
  const Index slab = slab_planes(g);
  std::vector<double> col(static_cast<std::size_t>(g.krows() * slab * plane));
  for (Index n = 0; n < g.n; ++n) {
    const double* xn = x + n * g.cin * g.x_plane();
    double* yn = y + n * g.cout * g.y_plane();
    for (Index oz0 = 0; oz0 < g.od; oz0 += slab) {
      const Index oz1 = std::min(g.od, oz0 + slab);
      const Index cols = (oz1 - oz0) * plane;
      im2col(g, xn, oz0, oz1, col.data());
      Eigen::Map<const RowMatrix> cm(col.data(), g.krows(), cols);
      StridedMap ym(yn + oz0 * plane, g.cout, cols, Eigen::OuterStride<>(g.y_plane()));
      ym.noalias() += wm * cm;
    }
  }
}

void gemm_backward_data(const Geometry& g, const double* gy, const double* w, double* gx) {
  Eigen::Map<const RowMatrix> wm(w, g.cout, g.krows());
  const Index plane = g.oh * g.ow;
  if (g.pointwise()) {
    for (Index n = 0; n < g.n; ++n) {
      Eigen::Map<const RowMatrix> gym(gy + n * g.cout * g.y_plane(), g.cout, g.y_plane());
      Eigen::Map<RowMatrix> gxm(gx + n * g.cin * g.x_plane(), g.cin, g.x_plane());
      gxm.noalias() += wm.transpose() * gym;
    }
    return;
  }
  const Index slab = slab_planes(g);
  std::vector<double> col(static_cast<std::size_t>(g.krows() * slab * plane));
  for (Index n = 0; n < g.n; ++n) {
    const double* gyn = gy + n * g.cout * g.y_plane();
    double* gxn = gx + n * g.cin * g.x_plane();
    for (Index oz0 = 0; oz0 < g.od; oz0 += slab) {
      const Index oz1 = std::min(g.od, oz0 + slab);
      const Index cols = (oz1 - oz0) * plane;
      Eigen::Map<RowMatrix> cm(col.data(), g.krows(), cols);
      ConstStridedMap gym(gyn + oz0 * plane, g.cout, cols, Eigen::OuterStride<>(g.y_plane()));
      cm.noalias() = wm.transpose() * gym;
      col2im(g, col.data(), oz0, oz1, gxn);
    }
  }
}

void gemm_backward_weight(const Geometry& g, const double* x, const double* gy, double* gw) {
  Eigen::Map<RowMatrix> gwm(gw, g.cout, g.krows());
  const Index plane = g.oh * g.ow;
  if (g.pointwise()) {
    for (Index n = 0; n < g.n; ++n) {
      Eigen::Map<const RowMatrix> xm(x + n * g.cin * g.x_plane(), g.cin, g.y_plane());
      Eigen::Map<const RowMatrix> gym(gy + n * g.cout * g.y_plane(), g.cout, g.y_plane());
      gwm.noalias() += gym * xm.transpose();
    }
    return;
  }
  const Index slab = slab_planes(g);
  std::vector<double> col(static_cast<std::size_t>(g.krows() * slab * plane));
  for (Index n = 0; n < g.n; ++n) {
    const double* xn = x + n * g.cin * g.x_plane();
    const double* gyn = gy + n * g.cout * g.y_plane();
    for (Index oz0 = 0; oz0 < g.od; oz0 += slab) {
      const Index oz1 = std::min(g.od, oz0 + slab);
      const Index cols = (oz1 - oz0) * plane;
      im2col(g, xn, oz0, oz1, col.data());
      Eigen::Map<const RowMatrix> cm(col.data(), g.krows(), cols);
      ConstStridedMap gym(gyn + oz0 * plane, g.cout, cols, Eigen::OuterStride<>(g.y_plane()));
      gwm.noalias() += gym * cm.transpose();
    }
  }
}

// ---- direct loop kernels ----

template <typename Body>
void direct_loop(const Geometry& g, Body&& body) {
  for (Index n = 0; n < g.n; ++n)
    for (Index co = 0; co < g.cout; ++co)
      for (Index ci = 0; ci < g.cin; ++ci)
        for (int kz = 0; kz < g.k.d; ++kz)
          for (int ky = 0; ky < g.k.h; ++ky)
            for (int kx = 0; kx < g.k.w; ++kx) {
              const Index widx = ((co * g.cin + ci) * g.k.d + kz) * g.k.h * g.k.w + ky * g.k.w + kx;
              Index zlo, zhi, ylo, yhi, xlo, xhi;
              valid_range(g.od, g.d, g.s.d, g.p.d, kz, zlo, zhi);
              valid_range(g.oh, g.h, g.s.h, g.p.h, ky, ylo, yhi);
              valid_range(g.ow, g.w, g.s.w, g.p.w, kx, xlo, xhi);
              const Index xbase = (n * g.cin + ci) * g.x_plane();
              const Index ybase = (n * g.cout + co) * g.y_plane();
              for (Index oz = zlo; oz < zhi; ++oz) {
                const Index iz = oz * g.s.d - g.p.d + kz;
                for (Index oy = ylo; oy < yhi; ++oy) {
                  const Index iy = oy * g.s.h - g.p.h + ky;
                  const Index yrow = ybase + (oz * g.oh + oy) * g.ow;
                  const Index xrow = xbase + (iz * g.h + iy) * g.w - g.p.w + kx;
                  body(widx, xrow, yrow, xlo, xhi);
                }
              }
            }
}

void direct_forward(const Geometry& g, const double* x, const double* w, double* y) {
  const int sw = g.s.w;
  direct_loop(g, [&](Index widx, Index xrow, Index yrow, Index xlo, Index xhi) {
    const double wv = w[widx];
    for (Index ox = xlo; ox < xhi; ++ox) y[yrow + ox] += wv * x[xrow + ox * sw];
  });
}

void direct_backward_data(const Geometry& g, const double* gy, const double* w, double* gx) {
  const int sw = g.s.w;
  direct_loop(g, [&](Index widx, Index xrow, Index yrow, Index xlo, Index xhi) {
    const double wv = w[widx];
    for (Index ox = xlo; ox < xhi; ++ox) gx[xrow + ox * sw] += wv * gy[yrow + ox];
  });
}

void direct_backward_weight(const Geometry& g, const double* x, const double* gy, double* gw) {
  const int sw = g.s.w;
  direct_loop(g, [&](Index widx, Index xrow, Index yrow, Index xlo, Index xhi) {
    double acc = 0.0;
    for (Index ox = xlo; ox < xhi; ++ox) acc += gy[yrow + ox] * x[xrow + ox * sw];
    gw[widx] += acc;
  });
}

void kernel_forward(ConvAlgo algo, const Geometry& g, const double* x, const double* w, double* y) {
  if (algo == ConvAlgo::kDirect) {
    direct_forward(g, x, w, y);
  } else {
    gemm_forward(g, x, w, y);
  }
}

void kernel_backward_data(ConvAlgo algo, const Geometry& g, const double* gy, const double* w,
                          double* gx) {
  if (algo == ConvAlgo::kDirect) {
    direct_backward_data(g, gy, w, gx);
  } else {
    gemm_backward_data(g, gy, w, gx);
  }
}

void kernel_backward_weight(ConvAlgo algo, const Geometry& g, const double* x, const double* gy,
                            double* gw) {
  if (algo == ConvAlgo::kDirect) {
    direct_backward_weight(g, x, gy, gw);
  } else {
    gemm_backward_weight(g, x, gy, gw);
  }
}

void check_options(const ConvOptions& opt) {
  for (int v : {opt.stride.d, opt.stride.h, opt.stride.w}) {
    if (v < 1) throw DimensionError("stride must be >= 1");
  }
  for (int v : {opt.padding.d, opt.padding.h, opt.padding.w}) {
    if (v < 0) throw DimensionError("padding must be >= 0");
  }
}

void add_bias(const Tensor& bias, Index batch, Index channels, Index plane, std::vector<double>& y) {
  if (!bias.defined()) return;
  if (bias.numel() != channels) throw DimensionError("bias length does not match output channels");
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < channels; ++c) {
      double* row = y.data() + (n * channels + c) * plane;
      const double b = bias[c];
      for (Index i = 0; i < plane; ++i) row[i] += b;
    }
}

void accumulate_bias_grad(const Impl& bias, const std::vector<double>& gy, Index batch,
                          Index channels, Index plane) {
  if (!bias || !bias->requires_grad) return;
  auto& gb = bias->ensure_grad();
  for (Index n = 0; n < batch; ++n)
    for (Index c = 0; c < channels; ++c) {
      const double* row = gy.data() + (n * channels + c) * plane;
      double acc = 0.0;
      for (Index i = 0; i < plane; ++i) acc += row[i];
      gb[c] += acc;
    }
}

ConvAlgo resolve(ConvAlgo algo) { return algo == ConvAlgo::kAuto ? ConvAlgo::kIm2col : algo; }

}  // namespace

Index conv_output_extent(Index in, int kernel, int stride, int padding) {
  if (in + 2 * padding < kernel) {
    throw DimensionError("kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                         std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Index deconv_output_extent(Index in, int kernel, int stride, int padding) {
  const Index out = (in - 1) * stride - 2 * padding + kernel;
  if (out <= 0) {
    throw DimensionError("transposed convolution output extent " + std::to_string(out) +
                         " is not positive");
  }
  return out;
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvOptions& opt) {
  check_options(opt);
  if (x.rank() != 5 || weight.rank() != 5) {
    throw DimensionError("conv3d expects rank-5 input and weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(weight.shape()));
  }
  if (x.dim(1) != weight.dim(1)) {
    throw DimensionError("conv3d: input has " + std::to_string(x.dim(1)) +
                         " channels, kernel expects " + std::to_string(weight.dim(1)));
  }
  Geometry g;
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.cout = weight.dim(0);
  g.d = x.dim(2);
  g.h = x.dim(3);
  g.w = x.dim(4);
  g.k = Int3(static_cast<int>(weight.dim(2)), static_cast<int>(weight.dim(3)),
             static_cast<int>(weight.dim(4)));
  g.s = opt.stride;
  g.p = opt.padding;
  g.od = conv_output_extent(g.d, g.k.d, g.s.d, g.p.d);
  g.oh = conv_output_extent(g.h, g.k.h, g.s.h, g.p.h);
  g.ow = conv_output_extent(g.w, g.k.w, g.s.w, g.p.w);
  const ConvAlgo algo = resolve(opt.algo);

  std::vector<double> y(static_cast<std::size_t>(g.n * g.cout * g.y_plane()), 0.0);
  kernel_forward(algo, g, x.data().data(), weight.data().data(), y.data());
  add_bias(bias, g.n, g.cout, g.y_plane(), y);

  Impl xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(Shape{g.n, g.cout, g.od, g.oh, g.ow}, std::move(y), inputs,
                             [xi, wi, bi, g, algo](TensorImpl& self) {
                               if (xi->requires_grad) {
                                 kernel_backward_data(algo, g, self.grad.data(), wi->data.data(),
                                                      xi->ensure_grad().data());
                               }
                               if (wi->requires_grad) {
                                 kernel_backward_weight(algo, g, xi->data.data(), self.grad.data(),
                                                        wi->ensure_grad().data());
                               }
                               accumulate_bias_grad(bi, self.grad, g.n, g.cout, g.y_plane());
                             });
}

Tensor deconv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvOptions& opt) {
  check_options(opt);
  if (x.rank() != 5 || weight.rank() != 5) {
    throw DimensionError("deconv3d expects rank-5 input and weight");
  }
  if (x.dim(1) != weight.dim(0)) {
    throw DimensionError("deconv3d: input has " + std::to_string(x.dim(1)) +
                         " channels, kernel expects " + std::to_string(weight.dim(0)));
  }
  // Conv geometry whose output is our input.
  Geometry g;
  g.n = x.dim(0);
  g.cout = weight.dim(0);
  g.cin = weight.dim(1);
  g.k = Int3(static_cast<int>(weight.dim(2)), static_cast<int>(weight.dim(3)),
             static_cast<int>(weight.dim(4)));
  g.s = opt.stride;
  g.p = opt.padding;
  g.od = x.dim(2);
  g.oh = x.dim(3);
  g.ow = x.dim(4);
  g.d = deconv_output_extent(g.od, g.k.d, g.s.d, g.p.d);
  g.h = deconv_output_extent(g.oh, g.k.h, g.s.h, g.p.h);
  g.w = deconv_output_extent(g.ow, g.k.w, g.s.w, g.p.w);
  const ConvAlgo algo = resolve(opt.algo);

  std::vector<double> out(static_cast<std::size_t>(g.n * g.cin * g.x_plane()), 0.0);
  kernel_backward_data(algo, g, x.data().data(), weight.data().data(), out.data());
  add_bias(bias, g.n, g.cin, g.x_plane(), out);

  Impl xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(Shape{g.n, g.cin, g.d, g.h, g.w}, std::move(out), inputs,
                             [xi, wi, bi, g, algo](TensorImpl& self) {
                               if (xi->requires_grad) {
                                 kernel_forward(algo, g, self.grad.data(), wi->data.data(),
                                                xi->ensure_grad().data());
                               }
                               if (wi->requires_grad) {
                                 kernel_backward_weight(algo, g, self.grad.data(), xi->data.data(),
                                                        wi->ensure_grad().data());
                               }
                               accumulate_bias_grad(bi, self.grad, g.n, g.cin, g.x_plane());
                             });
}

Tensor pool3d(const Tensor& x, PoolMode mode, Int3 window, Int3 stride) {
  if (x.rank() != 5) throw DimensionError("pool3d expects rank-5 input, got " + shape_str(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  if (window.d > d || window.h > h || window.w > w) {
    throw DimensionError("pool window exceeds input extent " + shape_str(x.shape()));
  }
  if (window.d < 1 || window.h < 1 || window.w < 1 || stride.d < 1 || stride.h < 1 || stride.w < 1) {
    throw DimensionError("pool window and stride must be >= 1");
  }
  const Index od = (d - window.d) / stride.d + 1;
  const Index oh = (h - window.h) / stride.h + 1;
  const Index ow = (w - window.w) / stride.w + 1;
  const Index out_plane = od * oh * ow, in_plane = d * h * w;
  std::vector<double> y(static_cast<std::size_t>(n * c * out_plane));
  std::vector<Index> argmax;
  if (mode == PoolMode::kMax) argmax.resize(y.size());
  const double inv = 1.0 / static_cast<double>(Index{window.d} * window.h * window.w);
  auto src = x.data();
  for (Index nc = 0; nc < n * c; ++nc) {
    const Index ibase = nc * in_plane;
    for (Index oz = 0; oz < od; ++oz)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          const Index oidx = nc * out_plane + (oz * oh + oy) * ow + ox;
          double best = -std::numeric_limits<double>::infinity();
          Index best_idx = -1;
          double acc = 0.0;
          for (int kz = 0; kz < window.d; ++kz)
            for (int ky = 0; ky < window.h; ++ky)
              for (int kx = 0; kx < window.w; ++kx) {
                const Index iidx = ibase + ((oz * stride.d + kz) * h + oy * stride.h + ky) * w +
                                   ox * stride.w + kx;
                const double v = src[static_cast<std::size_t>(iidx)];
                if (mode == PoolMode::kMax) {
                  if (best_idx < 0 || v > best) {
                    best = v;
                    best_idx = iidx;
                  }
                } else {
                  acc += v;
                }
              }
          if (mode == PoolMode::kMax) {
            y[oidx] = best;
            argmax[oidx] = best_idx;
          } else {
            y[oidx] = acc * inv;
          }
        }
  }
  Impl xi = x.impl();
  return detail::make_result(
      Shape{n, c, od, oh, ow}, std::move(y), {x},
      [xi, mode, argmax = std::move(argmax), window, stride, n, c, h, w, od, oh, ow, in_plane,
       out_plane, inv](TensorImpl& self) {
        auto& g = xi->ensure_grad();
        if (mode == PoolMode::kMax) {
          for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
          return;
        }
        for (Index nc = 0; nc < n * c; ++nc)
          for (Index oz = 0; oz < od; ++oz)
            for (Index oy = 0; oy < oh; ++oy)
              for (Index ox = 0; ox < ow; ++ox) {
                const double gv = self.grad[nc * out_plane + (oz * oh + oy) * ow + ox] * inv;
                for (int kz = 0; kz < window.d; ++kz)
                  for (int ky = 0; ky < window.h; ++ky)
                    for (int kx = 0; kx < window.w; ++kx) {
                      g[nc * in_plane + ((oz * stride.d + kz) * h + oy * stride.h + ky) * w +
                        ox * stride.w + kx] += gv;
                    }
              }
      });
}

Tensor global_avg_pool3d(const Tensor& x) {
  if (x.rank() != 5) throw DimensionError("global_avg_pool3d expects rank-5 input");
  const Index n = x.dim(0), c = x.dim(1);
  const Index plane = x.dim(2) * x.dim(3) * x.dim(4);
  std::vector<double> y(static_cast<std::size_t>(n * c));
  auto src = x.data();
  const double inv = 1.0 / static_cast<double>(plane);
  for (Index i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (Index j = 0; j < plane; ++j) acc += src[i * plane + j];
    y[i] = acc * inv;
  }
  Impl xi = x.impl();
  return detail::make_result(Shape{n, c}, std::move(y), {x}, [xi, plane, inv](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double gv = self.grad[i] * inv;
      for (Index j = 0; j < plane; ++j) g[i * plane + j] += gv;
    }
  });
}

Tensor batch_norm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats stats,
                    bool training, double eps, double momentum) {
  if (x.rank() != 5) throw DimensionError("batch_norm3d expects rank-5 input");
  const Index n = x.dim(0), c = x.dim(1);
  const Index plane = x.dim(2) * x.dim(3) * x.dim(4);
  const Index count = n * plane;
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("batch_norm3d: affine parameters do not match channel count");
  }
  if (static_cast<Index>(stats.running_mean.size()) != c ||
      static_cast<Index>(stats.running_var.size()) != c) {
    throw DimensionError("batch_norm3d: running statistics do not match channel count");
  }
  if (training && count < 2) {
    throw DimensionError("batch_norm3d: training mode needs at least 2 values per channel");
  }
  auto src = x.data();
  std::vector<double> mu(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  for (Index ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0;
      for (Index b = 0; b < n; ++b) {
        const double* p = src.data() + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (Index b = 0; b < n; ++b) {
        const double* p = src.data() + (b * c + ch) * plane;
        for (Index i = 0; i < plane; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= static_cast<double>(count);
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(v + eps);
      const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
      stats.running_mean[ch] = (1.0 - momentum) * stats.running_mean[ch] + momentum * m;
      stats.running_var[ch] = (1.0 - momentum) * stats.running_var[ch] + momentum * unbiased;
    } else {
      mu[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + eps);
    }
  }
  std::vector<double> xhat(src.size());
  std::vector<double> y(src.size());
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch) {
      const Index base = (b * c + ch) * plane;
      const double gm = gamma[ch], bt = beta[ch];
      for (Index i = 0; i < plane; ++i) {
        const double h = (src[base + i] - mu[ch]) * inv_std[ch];
        xhat[base + i] = h;
        y[base + i] = gm * h + bt;
      }
    }
  Impl xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return detail::make_result(
      x.shape(), std::move(y), {x, gamma, beta},
      [xi, gi, bi, xhat = std::move(xhat), inv_std, n, c, plane, count, training](TensorImpl& self) {
        const auto& gy = self.grad;
        for (Index ch = 0; ch < c; ++ch) {
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (Index b = 0; b < n; ++b) {
            const Index base = (b * c + ch) * plane;
            for (Index i = 0; i < plane; ++i) {
              sum_gy += gy[base + i];
              sum_gy_xhat += gy[base + i] * xhat[base + i];
            }
          }
          if (bi->requires_grad) bi->ensure_grad()[ch] += sum_gy;
          if (gi->requires_grad) gi->ensure_grad()[ch] += sum_gy_xhat;
          if (!xi->requires_grad) continue;
          auto& gx = xi->ensure_grad();
          const double k = gi->data[ch] * inv_std[ch];
          const double mean_gy = sum_gy / static_cast<double>(count);
          const double mean_gy_xhat = sum_gy_xhat / static_cast<double>(count);
          for (Index b = 0; b < n; ++b) {
            const Index base = (b * c + ch) * plane;
            for (Index i = 0; i < plane; ++i) {
              gx[base + i] += training
                                  ? k * (gy[base + i] - mean_gy - xhat[base + i] * mean_gy_xhat)
                                  : k * gy[base + i];
            }
          }
        }
      });
}

}  // namespace deeplung
