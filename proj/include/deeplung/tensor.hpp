#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace deeplung {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorImpl&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense N-d array of doubles in row-major order with optional reverse-mode
/// gradient tracking. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{1}, value, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  Index dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  Index numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double& operator[](Index i) { return data()[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return data()[static_cast<std::size_t>(i)]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient buffer, allocated (zero) on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Gradients accumulate into every
  /// reachable tensor that requires grad; intermediate buffers are reset on
  /// each call, leaf buffers are not.
  void backward() const;

  /// Same values, no graph history, no gradient tracking.
  Tensor detach() const;
  Tensor clone() const;
  /// Shares nothing with this tensor; data is copied into the new shape.
  Tensor reshape(Shape shape) const;

  bool is_leaf() const;
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Thread-local switch for graph recording; inference runs under NoGradGuard.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Builds an op result. When recording is on and any input requires grad the
/// result joins the graph with `backward` as its local adjoint; otherwise the
/// closure is dropped.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(TensorImpl& self)> backward);
Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   std::function<void(TensorImpl& self)> backward);

}  // namespace detail

}  // namespace deeplung
