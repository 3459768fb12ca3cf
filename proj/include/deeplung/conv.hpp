#pragma once

#include <span>
#include <vector>

#include "deeplung/tensor.hpp"

namespace deeplung {

/// Per-axis integer triple in (depth, height, width) order.
struct Int3 {
  int d = 1, h = 1, w = 1;
  constexpr Int3() = default;
  constexpr Int3(int v) : d(v), h(v), w(v) {}  // NOLINT: implicit isotropic form
  constexpr Int3(int d_, int h_, int w_) : d(d_), h(h_), w(w_) {}
  friend bool operator==(const Int3&, const Int3&) = default;
};

enum class ConvAlgo {
  kDirect,  ///< nested direct loops, reference path
  kIm2col,  ///< column expansion + Eigen GEMM
  kAuto,
};

struct ConvOptions {
  Int3 stride{1};
  Int3 padding{0};
  ConvAlgo algo = ConvAlgo::kAuto;
};

/// 3D cross-correlation. x[N,C,D,H,W], weight[C',C,kd,kh,kw], bias[C'] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvOptions& opt = {});

/// Transposed convolution, the adjoint of conv3d with the same weight tensor.
/// weight is laid out [C_in, C_out, kd, kh, kw]; output extent per axis is
/// (in - 1) * stride - 2 * padding + k.
Tensor deconv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvOptions& opt = {});

Index conv_output_extent(Index in, int kernel, int stride, int padding);
Index deconv_output_extent(Index in, int kernel, int stride, int padding);

enum class PoolMode { kMax, kAvg };

/// Unpadded pooling. Max mode routes gradient to the first maximal element
/// in window scan order.
Tensor pool3d(const Tensor& x, PoolMode mode, Int3 window, Int3 stride);
inline Tensor max_pool3d(const Tensor& x, Int3 window, Int3 stride) {
  return pool3d(x, PoolMode::kMax, window, stride);
}
inline Tensor avg_pool3d(const Tensor& x, Int3 window, Int3 stride) {
  return pool3d(x, PoolMode::kAvg, window, stride);
}
/// [N,C,D,H,W] -> [N,C]
Tensor global_avg_pool3d(const Tensor& x);

/// Views into per-channel running statistics owned by the caller.
struct BatchNormStats {
  std::span<double> running_mean;
  std::span<double> running_var;
};

/// Per-channel normalization over (N, D, H, W). Training mode uses batch
/// statistics (biased variance) and updates `stats` with `momentum`; eval mode
/// uses `stats` as-is.
Tensor batch_norm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats stats,
                    bool training, double eps = 1e-5, double momentum = 0.1);

}  // namespace deeplung
