#pragma once

#include <random>
#include <string>
#include <vector>

#include "deeplung/layers.hpp"

namespace deeplung {

/// Channel bookkeeping for one dual path block. The first `dense_increment`
/// input channels feed the dense path, the remaining `residual_width` the
/// additive path; the block emits in_channels + dense_increment channels.
struct DualPathBlockSpec {
  Index in_channels = 0;
  Index residual_width = 0;
  Index dense_increment = 0;
  Index bottleneck_width = 0;
  int stride = 1;

  Index out_channels() const { return in_channels + dense_increment; }
  /// Throws SpecError when the split does not close or widths are invalid.
  void validate() const;

  static DualPathBlockSpec make(Index in_channels, Index dense_increment, Index bottleneck_width,
                                int stride = 1);
};

/// y = [x[:d], F(x)[:d], F(x)[d:] + x[d:]] along channels (before G).
Tensor dual_path_combine(const Tensor& x, const Tensor& fx, Index d);

enum class BlockActivation { kRelu, kIdentity };

/// F is a 1^3 -> 3^3 -> 1^3 bottleneck (conv/bn/relu, conv/bn/relu, conv/bn).
/// A stride-2 block projects x through a strided 1^3 conv so the split and
/// sum stay shape-valid.
class DualPathBlock {
 public:
  DualPathBlock() = default;
  DualPathBlock(const DualPathBlockSpec& spec, std::mt19937_64& rng);

  Tensor operator()(const Tensor& x, bool training) const;
  Tensor residual_function(const Tensor& x, bool training) const;
  Tensor shortcut(const Tensor& x, bool training) const;

  const DualPathBlockSpec& spec() const { return spec_; }
  void register_tensors(TensorRegistry& reg, const std::string& prefix) const;
  /// Zeroes the last conv of F, making F(x) == 0 for any input in eval or
  /// training mode (batch norm of a constant channel is beta == 0).
  void zero_residual_function();

  /// G of the connection. Identity exists for structural tests.
  BlockActivation activation = BlockActivation::kRelu;

 private:
  DualPathBlockSpec spec_;
  ConvBnRelu reduce_;
  ConvBnRelu spatial_;
  Conv3dLayer expand_;
  BatchNorm3dLayer expand_bn_;
  bool has_projection_ = false;
  Conv3dLayer projection_;
  BatchNorm3dLayer projection_bn_;
};

Tensor dual_path_forward(const Tensor& x, const DualPathBlock& block, bool training);

/// Sequence of dual path blocks sharing one dense increment.
class DpnStack {
 public:
  Tensor operator()(const Tensor& x, bool training) const;
  void register_tensors(TensorRegistry& reg, const std::string& prefix) const;
  Index in_channels() const { return blocks.front().spec().in_channels; }
  Index out_channels() const { return blocks.back().spec().out_channels(); }
  int total_stride() const;

  std::vector<DualPathBlock> blocks;
};

/// Block i takes base.in_channels + i*d channels. `block_strides[i]` sets the
/// stride of block i (missing entries mean 1).
DpnStack build_dpn_stack(int n_blocks, const DualPathBlockSpec& base,
                         const std::vector<int>& block_strides, std::mt19937_64& rng);

}  // namespace deeplung
