#include "deeplung/layers.hpp"

#include <cmath>

#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"

namespace deeplung {

void TensorRegistry::add(std::string name, const Tensor& t) {
  if (find(name) != nullptr) throw UsageError("duplicate tensor name " + name);
  items_.push_back({std::move(name), t});
}

std::vector<Tensor> TensorRegistry::trainable() const {
  std::vector<Tensor> out;
  for (const auto& item : items_) {
    if (item.tensor.requires_grad()) out.push_back(item.tensor);
  }
  return out;
}

Index TensorRegistry::trainable_count() const {
  Index n = 0;
  for (const auto& item : items_) {
    if (item.tensor.requires_grad()) n += item.tensor.numel();
  }
  return n;
}

const Tensor* TensorRegistry::find(const std::string& name) const {
  for (const auto& item : items_) {
    if (item.name == name) return &item.tensor;
  }
  return nullptr;
}

Conv3dLayer::Conv3dLayer(Index in_channels, Index out_channels, Int3 kernel, std::mt19937_64& rng,
                         ConvOptions opts, bool with_bias)
    : options(opts) {
  if (kernel.d < 1 || kernel.h < 1 || kernel.w < 1) throw SpecError("kernel extents must be >= 1");
  const double fan_in = static_cast<double>(in_channels * kernel.d * kernel.h * kernel.w);
  weight = Tensor::randn({out_channels, in_channels, kernel.d, kernel.h, kernel.w}, rng,
                         std::sqrt(2.0 / fan_in));
  weight.set_requires_grad(true);
  if (with_bias) bias = Tensor(Shape{out_channels}, 0.0, true);
}

void Conv3dLayer::register_tensors(TensorRegistry& reg, const std::string& prefix) const {
  reg.add(join_name(prefix, "weight"), weight);
  if (bias.defined()) reg.add(join_name(prefix, "bias"), bias);
}

Deconv3dLayer::Deconv3dLayer(Index in_channels, Index out_channels, Int3 kernel,
                             std::mt19937_64& rng, ConvOptions opts, bool with_bias)
    : options(opts) {
  const double fan_in = static_cast<double>(in_channels * kernel.d * kernel.h * kernel.w);
  weight = Tensor::randn({in_channels, out_channels, kernel.d, kernel.h, kernel.w}, rng,
                         std::sqrt(2.0 / fan_in));
  weight.set_requires_grad(true);
  if (with_bias) bias = Tensor(Shape{out_channels}, 0.0, true);
}

void Deconv3dLayer::register_tensors(TensorRegistry& reg, const std::string& prefix) const {
  reg.add(join_name(prefix, "weight"), weight);
  if (bias.defined()) reg.add(join_name(prefix, "bias"), bias);
}

BatchNorm3dLayer::BatchNorm3dLayer(Index channels, double eps_, double momentum_)
    : gamma(Shape{channels}, 1.0, true),
      beta(Shape{channels}, 0.0, true),
      running_mean(Shape{channels}, 0.0),
      running_var(Shape{channels}, 1.0),
      eps(eps_),
      momentum(momentum_) {}

Tensor BatchNorm3dLayer::operator()(const Tensor& x, bool training) const {
  // Running statistics are buffers shared through the tensor handle.
  Tensor mean_buf = running_mean, var_buf = running_var;
  return batch_norm3d(x, gamma, beta, BatchNormStats{mean_buf.data(), var_buf.data()}, training, eps,
                      momentum);
}

void BatchNorm3dLayer::register_tensors(TensorRegistry& reg, const std::string& prefix) const {
  reg.add(join_name(prefix, "gamma"), gamma);
  reg.add(join_name(prefix, "beta"), beta);
  reg.add(join_name(prefix, "running_mean"), running_mean);
  reg.add(join_name(prefix, "running_var"), running_var);
}

LinearLayer::LinearLayer(Index in_features, Index out_features, std::mt19937_64& rng) {
  weight = Tensor::randn({out_features, in_features}, rng, std::sqrt(1.0 / static_cast<double>(in_features)));
  weight.set_requires_grad(true);
  bias = Tensor(Shape{out_features}, 0.0, true);
}

void LinearLayer::register_tensors(TensorRegistry& reg, const std::string& prefix) const {
  reg.add(join_name(prefix, "weight"), weight);
  reg.add(join_name(prefix, "bias"), bias);
}

ConvBnRelu::ConvBnRelu(Index in_channels, Index out_channels, Int3 kernel, std::mt19937_64& rng,
                       ConvOptions options)
    : conv(in_channels, out_channels, kernel, rng, options, false), bn(out_channels) {}

Tensor ConvBnRelu::operator()(const Tensor& x, bool training) const {
  return relu(bn(conv(x), training));
}

void ConvBnRelu::register_tensors(TensorRegistry& reg, const std::string& prefix) const {
  conv.register_tensors(reg, join_name(prefix, "conv"));
  bn.register_tensors(reg, join_name(prefix, "bn"));
}

}  // namespace deeplung
