#include "deeplung/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "deeplung/errors.hpp"

namespace deeplung {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::vector<double> copy_data(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out = copy_data(a);
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  Impl ai = a.impl(), bi = b.impl();
  return detail::make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
    for (const Impl& p : {ai, bi}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out = copy_data(a);
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  Impl ai = a.impl(), bi = b.impl();
  return detail::make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
    if (ai->requires_grad) {
      auto& g = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out = copy_data(a);
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  Impl ai = a.impl(), bi = b.impl();
  return detail::make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
    if (ai->requires_grad) {
      auto& g = ai->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out = copy_data(a);
  for (double& v : out) v *= factor;
  Impl ai = a.impl();
  return detail::make_result(a.shape(), std::move(out), {a}, [ai, factor](TensorImpl& self) {
    auto& g = ai->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Impl ai = a.impl();
  return detail::make_result(Shape{1}, {s}, {a}, [ai](TensorImpl& self) {
    auto& g = ai->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double relu(double z) { return z > 0 ? z : 0.0; }

Tensor relu(const Tensor& a) {
  std::vector<double> out = copy_data(a);
  for (double& v : out) v = relu(v);
  Impl ai = a.impl();
  return detail::make_result(a.shape(), std::move(out), {a}, [ai](TensorImpl& self) {
    auto& g = ai->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (ai->data[i] > 0) g[i] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out = copy_data(a);
  for (double& v : out) v = sigmoid(v);
  Impl ai = a.impl();
  return detail::make_result(a.shape(), std::move(out), {a}, [ai](TensorImpl& self) {
    auto& g = ai->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.data[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& ref = parts.front().shape();
  if (ref.size() < 2) throw DimensionError("concat_channels: rank < 2");
  Index inner = 1;
  for (std::size_t i = 2; i < ref.size(); ++i) inner *= ref[i];
  Index channels = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size() && s[0] == ref[0];
    for (std::size_t i = 2; ok && i < s.size(); ++i) ok = s[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat_channels: incompatible " + shape_str(s) + " vs " + shape_str(ref));
    }
    channels += s[1];
  }
  const Index batch = ref[0];
  Shape out_shape = ref;
  out_shape[1] = channels;
  std::vector<double> out(static_cast<std::size_t>(batch * channels * inner));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const Index c = p.dim(1);
    auto src = p.data();
    for (Index n = 0; n < batch; ++n) {
      std::copy_n(src.begin() + n * c * inner, c * inner,
                  out.begin() + (n * channels + offset) * inner);
    }
    offset += c;
  }
  std::vector<Impl> impls;
  for (const Tensor& p : parts) impls.push_back(p.impl());
  return detail::make_result(
      std::move(out_shape), std::move(out), parts,
      [impls, offsets, batch, channels, inner](TensorImpl& self) {
        for (std::size_t k = 0; k < impls.size(); ++k) {
          const Impl& p = impls[k];
          if (!p->requires_grad) continue;
          auto& g = p->ensure_grad();
          const Index c = p->shape[1];
          for (Index n = 0; n < batch; ++n) {
            const double* src = self.grad.data() + (n * channels + offsets[k]) * inner;
            double* dst = g.data() + n * c * inner;
            for (Index i = 0; i < c * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor slice_channels(const Tensor& x, Index begin, Index end) {
  const Shape& s = x.shape();
  if (s.size() < 2 || begin < 0 || end < begin || end > s[1]) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for " + shape_str(s));
  }
  Index inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  const Index batch = s[0], channels = s[1], width = end - begin;
  Shape out_shape = s;
  out_shape[1] = width;
  std::vector<double> out(static_cast<std::size_t>(batch * width * inner));
  auto src = x.data();
  for (Index n = 0; n < batch; ++n) {
    std::copy_n(src.begin() + (n * channels + begin) * inner, width * inner,
                out.begin() + n * width * inner);
  }
  Impl xi = x.impl();
  return detail::make_result(std::move(out_shape), std::move(out), {x},
                             [xi, batch, channels, begin, width, inner](TensorImpl& self) {
                               auto& g = xi->ensure_grad();
                               for (Index n = 0; n < batch; ++n) {
                                 const double* src = self.grad.data() + n * width * inner;
                                 double* dst = g.data() + (n * channels + begin) * inner;
                                 for (Index i = 0; i < width * inner; ++i) dst[i] += src[i];
                               }
                             });
}

Tensor gather(const Tensor& x, std::span<const Index> indices) {
  std::vector<double> out;
  out.reserve(indices.size());
  auto src = x.data();
  for (Index i : indices) {
    if (i < 0 || i >= x.numel()) throw DimensionError("gather: index out of range");
    out.push_back(src[static_cast<std::size_t>(i)]);
  }
  std::vector<Index> idx(indices.begin(), indices.end());
  Impl xi = x.impl();
  return detail::make_result(Shape{static_cast<Index>(idx.size())}, std::move(out), {x},
                             [xi, idx](TensorImpl& self) {
                               auto& g = xi->ensure_grad();
                               for (std::size_t k = 0; k < idx.size(); ++k) {
                                 g[static_cast<std::size_t>(idx[k])] += self.grad[k];
                               }
                             });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("linear: incompatible " + shape_str(x.shape()) + " and weight " +
                         shape_str(weight.shape()));
  }
  const Index n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  if (bias.defined() && bias.numel() != o) throw DimensionError("linear: bias length mismatch");
  std::vector<double> out(static_cast<std::size_t>(n * o));
  Eigen::Map<const RowMatrix> xm(x.data().data(), n, f);
  Eigen::Map<const RowMatrix> wm(weight.data().data(), o, f);
  Eigen::Map<RowMatrix> ym(out.data(), n, o);
  ym.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < o; ++j) ym(i, j) += bias[j];
  }
  Impl xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(Shape{n, o}, std::move(out), inputs,
                             [xi, wi, bi, n, f, o](TensorImpl& self) {
                               Eigen::Map<const RowMatrix> gy(self.grad.data(), n, o);
                               if (xi->requires_grad) {
                                 Eigen::Map<RowMatrix> gx(xi->ensure_grad().data(), n, f);
                                 Eigen::Map<const RowMatrix> wm(wi->data.data(), o, f);
                                 gx.noalias() += gy * wm;
                               }
                               if (wi->requires_grad) {
                                 Eigen::Map<RowMatrix> gw(wi->ensure_grad().data(), o, f);
                                 Eigen::Map<const RowMatrix> xm(xi->data.data(), n, f);
                                 gw.noalias() += gy.transpose() * xm;
                               }
                               if (bi && bi->requires_grad) {
                                 auto& gb = bi->ensure_grad();
                                 for (Index i = 0; i < n; ++i)
                                   for (Index j = 0; j < o; ++j) gb[j] += gy(i, j);
                               }
                             });
}

double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels) {
  if (static_cast<Index>(labels.size()) != logits.numel()) {
    throw DimensionError("bce_with_logits: label count mismatch");
  }
  if (labels.empty()) throw DimensionError("bce_with_logits: empty input");
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  double total = 0.0;
  auto z = logits.data();
  for (std::size_t i = 0; i < labels.size(); ++i) total += bce_with_logits(z[i], labels[i]);
  std::vector<double> y(labels.begin(), labels.end());
  Impl li = logits.impl();
  return detail::make_result(Shape{1}, {total * inv_n}, {logits}, [li, y, inv_n](TensorImpl& self) {
    auto& g = li->ensure_grad();
    for (std::size_t i = 0; i < y.size(); ++i) {
      g[i] += self.grad[0] * inv_n * (sigmoid(li->data[i]) - y[i]);
    }
  });
}

double smooth_l1(double pred, double target) {
  const double e = pred - target;
  return std::abs(e) < 1.0 ? 0.5 * e * e : std::abs(e) - 0.5;
}

Tensor smooth_l1(const Tensor& pred, std::span<const double> target) {
  if (static_cast<Index>(target.size()) != pred.numel()) {
    throw DimensionError("smooth_l1: target length mismatch");
  }
  double total = 0.0;
  auto p = pred.data();
  for (std::size_t i = 0; i < target.size(); ++i) total += smooth_l1(p[i], target[i]);
  std::vector<double> t(target.begin(), target.end());
  Impl pi = pred.impl();
  return detail::make_result(Shape{1}, {total}, {pred}, [pi, t](TensorImpl& self) {
    auto& g = pi->ensure_grad();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double e = pi->data[i] - t[i];
      const double d = std::abs(e) < 1.0 ? e : (e > 0 ? 1.0 : -1.0);
      g[i] += self.grad[0] * d;
    }
  });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(static_cast<std::size_t>(x.numel()));
  for (double& m : mask) m = keep(rng) ? keep_scale : 0.0;
  std::vector<double> out(mask.size());
  auto src = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] * mask[i];
  Impl xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {x}, [xi, mask](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor dropout_channels(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw DomainError("dropout rate must lie in [0, 1)");
  if (x.rank() < 2) throw DimensionError("channel dropout needs an [N, C, ...] tensor");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  const Index maps = x.dim(0) * x.dim(1);
  const Index inner = x.numel() / maps;
  std::vector<double> mask(static_cast<std::size_t>(maps));
  for (double& m : mask) m = keep(rng) ? keep_scale : 0.0;
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  auto src = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] * mask[i / static_cast<std::size_t>(inner)];
  Impl xi = x.impl();
  return detail::make_result(x.shape(), std::move(out), {x}, [xi, mask, inner](TensorImpl& self) {
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i / static_cast<std::size_t>(inner)];
  });
}

}  // namespace deeplung
