#include "deeplung/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "deeplung/errors.hpp"

namespace deeplung {

namespace {
thread_local bool g_grad_mode = true;
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  const Index n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  const Index n = shape_numel(shape);
  if (static_cast<Index>(data.size()) != n) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.impl_->data) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.impl_->data) v = dist(rng);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("shape() on undefined tensor");
  return impl_->shape;
}

Index Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

Index Tensor::numel() const { return impl_ ? static_cast<Index>(impl_->data.size()) : 0; }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<double> Tensor::grad() { return impl_->ensure_grad(); }

std::span<const double> Tensor::grad() const { return impl_->ensure_grad(); }

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::is_leaf() const { return impl_ && !impl_->backward_fn; }

void Tensor::backward() const {
  if (!impl_) throw UsageError("backward() on undefined tensor");
  if (impl_->data.size() != 1) {
    throw UsageError("backward() requires a scalar, got shape " + shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) return;

  // Post-order DFS gives a topological order with parents before children.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::TensorImpl* node : order) {
    if (node->backward_fn) {
      auto& g = node->ensure_grad();
      std::fill(g.begin(), g.end(), 0.0);
    }
  }
  impl_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

Tensor Tensor::detach() const {
  Tensor t(impl_->shape, impl_->data);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data, impl_->requires_grad);
  return t;
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  auto self = impl_;
  return detail::make_result(std::move(shape), impl_->data, {*this}, [self](detail::TensorImpl& out) {
    if (!self->requires_grad) return;
    auto& g = self->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

namespace detail {

namespace {

template <typename Range>
Tensor make_result_impl(Shape shape, std::vector<double> data, const Range& inputs,
                        std::function<void(TensorImpl&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_mode) return out;
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto& impl = *out.impl();
  impl.requires_grad = true;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) impl.parents.push_back(t.impl());
  }
  impl.backward_fn = std::move(backward);
  return out;
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward) {
  return make_result_impl(std::move(shape), std::move(data), inputs, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   std::function<void(TensorImpl&)> backward) {
  return make_result_impl(std::move(shape), std::move(data), inputs, std::move(backward));
}

}  // namespace detail

}  // namespace deeplung
