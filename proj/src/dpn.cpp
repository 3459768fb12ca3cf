#include "deeplung/dpn.hpp"

#include <string>

#include "deeplung/errors.hpp"
#include "deeplung/ops.hpp"

namespace deeplung {

void DualPathBlockSpec::validate() const {
  if (dense_increment < 0) throw SpecError("dense increment must be >= 0");
  if (in_channels <= 0 || bottleneck_width <= 0) throw SpecError("channel widths must be positive");
  if (residual_width + dense_increment != in_channels) {
    throw SpecError("in_channels " + std::to_string(in_channels) + " != dense " +
                    std::to_string(dense_increment) + " + residual " + std::to_string(residual_width));
  }
  if (stride != 1 && stride != 2) throw SpecError("dual path block stride must be 1 or 2");
}

DualPathBlockSpec DualPathBlockSpec::make(Index in_channels, Index dense_increment,
                                          Index bottleneck_width, int stride) {
  DualPathBlockSpec s;
  s.in_channels = in_channels;
  s.dense_increment = dense_increment;
  s.residual_width = in_channels - dense_increment;
  s.bottleneck_width = bottleneck_width;
  s.stride = stride;
  s.validate();
  return s;
}

Tensor dual_path_combine(const Tensor& x, const Tensor& fx, Index d) {
  if (fx.dim(1) != x.dim(1)) {
    throw SpecError("F(x) has " + std::to_string(fx.dim(1)) + " channels, block input has " +
                    std::to_string(x.dim(1)));
  }
  const Index c = x.dim(1);
  if (d < 0 || d > c) throw SpecError("dense increment exceeds channel count");
  if (d == 0) return add(fx, x);
  std::vector<Tensor> parts{slice_channels(x, 0, d), slice_channels(fx, 0, d)};
  if (d < c) parts.push_back(add(slice_channels(fx, d, c), slice_channels(x, d, c)));
  return concat_channels(parts);
}

DualPathBlock::DualPathBlock(const DualPathBlockSpec& spec, std::mt19937_64& rng) : spec_(spec) {
  spec_.validate();
  const Index c = spec_.in_channels, b = spec_.bottleneck_width;
  reduce_ = ConvBnRelu(c, b, 1, rng);
  spatial_ = ConvBnRelu(b, b, 3, rng, {spec_.stride, 1});
  expand_ = Conv3dLayer(b, c, 1, rng, {}, false);
  expand_bn_ = BatchNorm3dLayer(c);
  if (spec_.stride != 1) {
    has_projection_ = true;
    projection_ = Conv3dLayer(c, c, 1, rng, {spec_.stride, 0}, false);
    projection_bn_ = BatchNorm3dLayer(c);
  }
}

Tensor DualPathBlock::residual_function(const Tensor& x, bool training) const {
  return expand_bn_(expand_(spatial_(reduce_(x, training), training)), training);
}

Tensor DualPathBlock::shortcut(const Tensor& x, bool training) const {
  return has_projection_ ? projection_bn_(projection_(x), training) : x;
}

Tensor DualPathBlock::operator()(const Tensor& x, bool training) const {
  if (x.dim(1) != spec_.in_channels) {
    throw SpecError("block expects " + std::to_string(spec_.in_channels) + " channels, got " +
                    std::to_string(x.dim(1)));
  }
  Tensor y = dual_path_combine(shortcut(x, training), residual_function(x, training),
                               spec_.dense_increment);
  return activation == BlockActivation::kRelu ? relu(y) : y;
}

void DualPathBlock::register_tensors(TensorRegistry& reg, const std::string& prefix) const {
  reduce_.register_tensors(reg, join_name(prefix, "reduce"));
  spatial_.register_tensors(reg, join_name(prefix, "spatial"));
  expand_.register_tensors(reg, join_name(prefix, "expand"));
  expand_bn_.register_tensors(reg, join_name(prefix, "expand_bn"));
  if (has_projection_) {
    projection_.register_tensors(reg, join_name(prefix, "projection"));
    projection_bn_.register_tensors(reg, join_name(prefix, "projection_bn"));
  }
}

void DualPathBlock::zero_residual_function() {
  for (double& v : expand_.weight.data()) v = 0.0;
  for (double& v : expand_bn_.beta.data()) v = 0.0;
  for (double& v : expand_bn_.running_mean.data()) v = 0.0;
}

Tensor dual_path_forward(const Tensor& x, const DualPathBlock& block, bool training) {
  return block(x, training);
}

Tensor DpnStack::operator()(const Tensor& x, bool training) const {
  Tensor y = x;
  for (const auto& block : blocks) y = block(y, training);
  return y;
}

void DpnStack::register_tensors(TensorRegistry& reg, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].register_tensors(reg, join_name(prefix, "block" + std::to_string(i)));
  }
}

int DpnStack::total_stride() const {
  int s = 1;
  for (const auto& b : blocks) s *= b.spec().stride;
  return s;
}

DpnStack build_dpn_stack(int n_blocks, const DualPathBlockSpec& base,
                         const std::vector<int>& block_strides, std::mt19937_64& rng) {
  if (n_blocks < 1) throw SpecError("a dual path stack needs at least one block");
  DpnStack stack;
  Index channels = base.in_channels;
  for (int i = 0; i < n_blocks; ++i) {
    const int stride = i < static_cast<int>(block_strides.size()) ? block_strides[i] : 1;
    stack.blocks.emplace_back(
        DualPathBlockSpec::make(channels, base.dense_increment, base.bottleneck_width, stride), rng);
    channels += base.dense_increment;
  }
  return stack;
}

}  // namespace deeplung
