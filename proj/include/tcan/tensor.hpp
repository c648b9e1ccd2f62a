#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tcan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major array of doubles. Copies of a Tensor share storage, the
// same way torch::Tensor handles do; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, double value);
  // Uniform(-bound, bound); the values depend only on (seed, shape).
  static Tensor uniform(Shape shape, double bound, std::uint64_t seed);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct writes bypass the tape; only optimizers and tests should use this.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  // Allocates a zero gradient buffer on first use.
  std::span<double> grad_accumulator() const;
  void zero_grad();

  Tensor clone() const;  // deep copy of data, no grad, no tape history
  Tensor detach() const { return clone(); }

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<Tensor>,
                            const char*, bool);
  std::shared_ptr<detail::TensorNode> node_;
};

// Receives (output values, output gradient) and accumulates into the inputs
// captured by the closure.
using BackwardFn = std::function<void(std::span<const double>, std::span<const double>)>;

// Ordered record of differentiable operations executed on this thread.
class GradTape {
 public:
  static GradTape& current();

  void record(std::shared_ptr<detail::TensorNode> output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  // Seeds d(loss)/d(loss) = 1, replays the tape in reverse, then clears it.
  void backward(const Tensor& loss);

 private:
  struct Entry {
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool flag);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

void backward(const Tensor& loss);

// Builds an op result. The output requires grad iff grad mode is on and any
// input requires grad; callers then attach a backward rule with record_backward.
// When `allow_non_finite` is false a NaN/Inf in `data` raises NumericError.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* op_name, bool allow_non_finite = false);
void record_backward(const Tensor& output, BackwardFn fn);

}  // namespace tcan
