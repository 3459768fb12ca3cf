#pragma once

#include <random>
#include <string>
#include <vector>

#include "deeplung/conv.hpp"
#include "deeplung/ops.hpp"
#include "deeplung/tensor.hpp"

namespace deeplung {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered name -> tensor handles for a network. Trainable parameters have
/// requires_grad set; running statistics are registered without it.
class TensorRegistry {
 public:
  void add(std::string name, const Tensor& t);
  const std::vector<NamedTensor>& items() const { return items_; }
  std::vector<Tensor> trainable() const;
  Index trainable_count() const;
  const Tensor* find(const std::string& name) const;

 private:
  std::vector<NamedTensor> items_;
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

class Conv3dLayer {
 public:
  Conv3dLayer() = default;
  /// He-normal weights, zero bias.
  Conv3dLayer(Index in_channels, Index out_channels, Int3 kernel, std::mt19937_64& rng,
              ConvOptions options = {}, bool with_bias = true);

  Tensor operator()(const Tensor& x) const { return conv3d(x, weight, bias, options); }
  void register_tensors(TensorRegistry& reg, const std::string& prefix) const;
  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }

  Tensor weight;
  Tensor bias;
  ConvOptions options;
};

class Deconv3dLayer {
 public:
  Deconv3dLayer() = default;
  Deconv3dLayer(Index in_channels, Index out_channels, Int3 kernel, std::mt19937_64& rng,
                ConvOptions options = {}, bool with_bias = true);

  Tensor operator()(const Tensor& x) const { return deconv3d(x, weight, bias, options); }
  void register_tensors(TensorRegistry& reg, const std::string& prefix) const;

  Tensor weight;
  Tensor bias;
  ConvOptions options;
};

class BatchNorm3dLayer {
 public:
  BatchNorm3dLayer() = default;
  explicit BatchNorm3dLayer(Index channels, double eps = 1e-5, double momentum = 0.1);

  Tensor operator()(const Tensor& x, bool training) const;
  void register_tensors(TensorRegistry& reg, const std::string& prefix) const;

  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(Index in_features, Index out_features, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void register_tensors(TensorRegistry& reg, const std::string& prefix) const;

  Tensor weight, bias;
};

/// conv -> batch norm -> relu
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(Index in_channels, Index out_channels, Int3 kernel, std::mt19937_64& rng,
             ConvOptions options = {});

  Tensor operator()(const Tensor& x, bool training) const;
  void register_tensors(TensorRegistry& reg, const std::string& prefix) const;

  Conv3dLayer conv;
  BatchNorm3dLayer bn;
};

}  // namespace deeplung
