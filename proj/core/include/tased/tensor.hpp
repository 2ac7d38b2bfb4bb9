#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tased {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Feature maps are rank 5 (B, C, T, H, W); convolution kernels are rank 5
/// (out, in, kT, kH, kW); biases and per-channel statistics are rank 1.
/// Every shape entry is >= 1 and numel() == product(shape). A
/// default-constructed Tensor is empty (rank 0, no data) and only serves as a
/// placeholder.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, 0.0); }
  static Tensor ones_like(const Tensor& other) { return Tensor(other.shape_, 1.0); }
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  std::size_t flatten(std::span<const std::size_t> index) const;
  std::vector<std::size_t> unflatten(std::size_t flat) const;

  /// Same data viewed with a new shape of equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double value);
  /// this += other (shapes must match). The named in-place update used by
  /// gradient accumulation and the optimizer.
  void add_inplace(const Tensor& other, double scale = 1.0);

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class ElementwiseOp { add, sub, mul, div };
enum class ReduceOp { sum, mean, max };

/// Componentwise a op b. Shapes must be identical; there is no implicit
/// broadcasting. Division follows IEEE semantics.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// Expands size-1 axes of `x` to `shape`. Ranks must match.
Tensor broadcast_to(const Tensor& x, const Shape& shape);

/// Reduces over `axes`. Reduced axes are dropped unless keep_dims is set. An
/// empty axis set returns a copy. Reducing every axis without keep_dims yields
/// a shape-{1} tensor.
Tensor reduce(ReduceOp op, const Tensor& x, std::vector<std::size_t> axes,
              bool keep_dims = false);

double sum(const Tensor& x);
double max_value(const Tensor& x);
double min_value(const Tensor& x);
double dot(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

/// Central finite differences of a scalar function:
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every element i.
/// Throws NumericError naming the perturbed index if f is not finite.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double eps = 1e-5);

/// As finite_difference_grad, restricted to the listed flat indices.
std::vector<double> finite_difference_grad_at(
    const std::function<double(const Tensor&)>& f, const Tensor& x,
    std::span<const std::size_t> indices, double eps = 1e-5);

/// Tolerance test used by every gradient check: |a - n| <= atol + rtol |n|.
struct GradientTolerance {
  double rtol = 1e-3;
  double atol = 1e-4;
};

struct GradientComparison {
  bool ok = true;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double excess = 0.0;  // largest |a - n| - (atol + rtol |n|)
};

GradientComparison compare_gradients(std::span<const double> analytic,
                                     std::span<const double> numeric,
                                     GradientTolerance tol = {});

}  // namespace tased
