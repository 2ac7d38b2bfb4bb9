#include "tased/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "tased/error.hpp"

namespace tased {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError(fmt::format("tensor shape {} has a zero extent", shape_str(shape)));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", what, shape_str(a.shape()),
                                 shape_str(b.shape())));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError(fmt::format("tensor data length {} does not match shape {}", data_.size(),
                                 shape_str(shape_)));
  }
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::flatten(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError(fmt::format("index of rank {} into tensor of shape {}", index.size(),
                                 shape_str(shape_)));
  }
  std::size_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) {
      throw ShapeError(fmt::format("index {} out of range on axis {} of shape {}", index[i], i,
                                   shape_str(shape_)));
    }
    flat = flat * shape_[i] + index[i];
  }
  return flat;
}

std::vector<std::size_t> Tensor::unflatten(std::size_t flat) const {
  if (flat >= data_.size()) {
    throw ShapeError(fmt::format("flat index {} out of range for shape {}", flat, shape_str(shape_)));
  }
  std::vector<std::size_t> index(shape_.size());
  for (std::size_t i = shape_.size(); i-- > 0;) {
    index[i] = flat % shape_[i];
    flat /= shape_[i];
  }
  return index;
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[flatten(std::span<const std::size_t>(index.begin(), index.size()))];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[flatten(std::span<const std::size_t>(index.begin(), index.size()))];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  check_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError(fmt::format("cannot reshape {} to {}", shape_str(shape_), shape_str(shape)));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(data_);
  return out;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_inplace(const Tensor& other, double scale) {
  require_same_shape(*this, other, "add_inplace");
  const double* src = other.raw();
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * src[i];
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elementwise");
  Tensor out(a.shape());
  const double* x = a.raw();
  const double* y = b.raw();
  double* z = out.raw();
  const std::size_t n = a.numel();
  switch (op) {
    case ElementwiseOp::add:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
      break;
    case ElementwiseOp::sub:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
      break;
    case ElementwiseOp::mul:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
      break;
    case ElementwiseOp::div:
      for (std::size_t i = 0; i < n; ++i) z[i] = x[i] / y[i];
      break;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::div, a, b); }

Tensor scale(const Tensor& a, double factor) {
  Tensor out = a;
  for (double& v : out.data()) v *= factor;
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.rank() != shape.size()) {
    throw ShapeError(fmt::format("broadcast_to: rank mismatch {} vs {}", shape_str(x.shape()),
                                 shape_str(shape)));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (x.dim(i) != shape[i] && x.dim(i) != 1) {
      throw ShapeError(fmt::format("broadcast_to: cannot expand {} to {}", shape_str(x.shape()),
                                   shape_str(shape)));
    }
  }
  Tensor out(shape);
  std::vector<std::size_t> index(shape.size(), 0);
  std::vector<std::size_t> src(shape.size(), 0);
  for (std::size_t flat = 0; flat < out.numel(); ++flat) {
    for (std::size_t i = 0; i < shape.size(); ++i) src[i] = x.dim(i) == 1 ? 0 : index[i];
    out[flat] = x[x.flatten(src)];
    for (std::size_t i = shape.size(); i-- > 0;) {
      if (++index[i] < shape[i]) break;
      index[i] = 0;
    }
  }
  return out;
}

Tensor reduce(ReduceOp op, const Tensor& x, std::vector<std::size_t> axes, bool keep_dims) {
  if (axes.empty()) return x;
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t a : axes) {
    if (a >= x.rank()) {
      throw ShapeError(fmt::format("reduce: axis {} invalid for shape {}", a, shape_str(x.shape())));
    }
  }
  std::vector<bool> reduced(x.rank(), false);
  for (std::size_t a : axes) reduced[a] = true;

  Shape kept_shape(x.rank());
  for (std::size_t i = 0; i < x.rank(); ++i) kept_shape[i] = reduced[i] ? 1 : x.dim(i);

  const double init = op == ReduceOp::max ? -std::numeric_limits<double>::infinity() : 0.0;
  Tensor acc(kept_shape, init);
  std::vector<std::size_t> index(x.rank(), 0);
  std::vector<std::size_t> dst(x.rank(), 0);
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    for (std::size_t i = 0; i < x.rank(); ++i) dst[i] = reduced[i] ? 0 : index[i];
    double& slot = acc[acc.flatten(dst)];
    slot = op == ReduceOp::max ? std::max(slot, x[flat]) : slot + x[flat];
    for (std::size_t i = x.rank(); i-- > 0;) {
      if (++index[i] < x.dim(i)) break;
      index[i] = 0;
    }
  }
  if (op == ReduceOp::mean) {
    const double count = static_cast<double>(x.numel() / acc.numel());
    for (double& v : acc.data()) v /= count;
  }
  if (keep_dims) return acc;

  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (!reduced[i]) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  return std::move(acc).reshaped(out_shape);
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return s;
}

double max_value(const Tensor& x) { return *std::max_element(x.data().begin(), x.data().end()); }
double min_value(const Tensor& x) { return *std::min_element(x.data().begin(), x.data().end()); }

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); });
}

namespace {

double central_difference(const std::function<double(const Tensor&)>& f, Tensor& probe,
                          std::size_t index, double eps) {
  const double original = probe[index];
  probe[index] = original + eps;
  const double plus = f(probe);
  probe[index] = original - eps;
  const double minus = f(probe);
  probe[index] = original;
  if (!std::isfinite(plus) || !std::isfinite(minus)) {
    throw NumericError(fmt::format("finite difference: non-finite function value when perturbing "
                                   "element {}",
                                   index));
  }
  return (plus - minus) / (2.0 * eps);
}

}  // namespace

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_grad: eps must be > 0");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) grad[i] = central_difference(f, probe, i, eps);
  return grad;
}

std::vector<double> finite_difference_grad_at(const std::function<double(const Tensor&)>& f,
                                              const Tensor& x, std::span<const std::size_t> indices,
                                              double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_grad_at: eps must be > 0");
  Tensor probe = x;
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= x.numel()) throw ShapeError(fmt::format("finite difference index {} out of range", i));
    out.push_back(central_difference(f, probe, i, eps));
  }
  return out;
}

GradientComparison compare_gradients(std::span<const double> analytic,
                                     std::span<const double> numeric, GradientTolerance tol) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError(fmt::format("compare_gradients: {} analytic vs {} numeric values",
                                 analytic.size(), numeric.size()));
  }
  GradientComparison result;
  result.excess = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double excess =
        std::abs(analytic[i] - numeric[i]) - (tol.atol + tol.rtol * std::abs(numeric[i]));
    if (excess > result.excess || std::isnan(excess)) {
      result.excess = std::isnan(excess) ? std::numeric_limits<double>::infinity() : excess;
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric[i];
    }
  }
  result.ok = analytic.empty() || result.excess <= 0.0;
  return result;
}

}  // namespace tased
