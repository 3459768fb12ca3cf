#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "deeplung/tensor.hpp"

namespace deeplung {

// Elementwise arithmetic. Operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

double sigmoid(double z);
double relu(double z);

/// Concatenate along axis 1 (channels). All other extents must match.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Channels [begin, end) of a tensor of rank >= 2.
Tensor slice_channels(const Tensor& x, Index begin, Index end);
/// Flat-index gather into a rank-1 tensor.
Tensor gather(const Tensor& x, std::span<const Index> indices);

/// Fully connected layer: x[N,F], weight[O,F], bias[O] (bias may be undefined).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Mean binary cross-entropy on logits, in the log-sum-exp form
/// max(z,0) - z*y + log(1 + exp(-|z|)).
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);
double bce_with_logits(double logit, double label);

/// Smooth-L1 summed over all elements of (pred - target).
Tensor smooth_l1(const Tensor& pred, std::span<const double> target);
double smooth_l1(double pred, double target);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);
/// Inverted dropout over whole (n, c) feature maps of an [N, C, ...] tensor.
Tensor dropout_channels(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace deeplung
