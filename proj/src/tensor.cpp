#include "tcan/tensor.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "tcan/errors.hpp"
#include "tcan/random.hpp"

namespace tcan {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) return;  // rank-0 scalar
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be >= 1, got " + shape_str(shape));
  }
}

std::shared_ptr<detail::TensorNode> new_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

thread_local bool g_grad_enabled = true;

}  // namespace

Tensor Tensor::zeros(Shape shape) { return constant(std::move(shape), 0.0); }

Tensor Tensor::constant(Shape shape, double value) {
  validate_shape(shape);
  std::vector<double> data(shape_numel(shape), value);
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::uniform(Shape shape, double bound, std::uint64_t seed) {
  validate_shape(shape);
  if (!(bound > 0.0)) throw ShapeError("uniform init requires bound > 0");
  std::uint64_t shape_key = shape.size();
  for (std::size_t d : shape) shape_key = mix_seed(shape_key, d);
  std::mt19937_64 gen(mix_seed(seed, shape_key));
  std::vector<double> data(shape_numel(shape));
  for (double& x : data) x = bound * (2.0 * unit_uniform(gen) - 1.0);
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  validate_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  return Tensor(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis out of range for shape " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) needs a rank-2 tensor");
  return node_->data[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

std::span<double> Tensor::grad_accumulator() const {
  if (!node_) throw ContractError("use of undefined tensor");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::clone() const {
  return Tensor(new_node(shape(), node_->data));
}

GradTape& GradTape::current() {
  thread_local GradTape tape;
  return tape;
}

void GradTape::record(std::shared_ptr<detail::TensorNode> output, BackwardFn fn) {
  entries_.push_back({std::move(output), std::move(fn)});
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that was not produced under an active tape");
  }
  auto& seed = loss.node()->grad;
  seed.assign(1, 0.0);
  seed[0] += 1.0;
  // Entries are cleared as they are consumed so captured inputs are released.
  std::vector<Entry> entries = std::move(entries_);
  entries_.clear();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    const auto& out = *it->output;
    if (!out.grad.empty()) it->backward(out.data, out.grad);
    it->backward = nullptr;
  }
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool flag) { g_grad_enabled = flag; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) { GradTape::current().backward(loss); }

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* op_name, bool allow_non_finite) {
  if (!allow_non_finite) {
    for (double x : data) {
      if (!std::isfinite(x)) {
        throw NumericError(std::string(op_name) + " produced a non-finite value");
      }
    }
  }
  Tensor out(new_node(std::move(shape), std::move(data)));
  if (GradMode::enabled()) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) {
        out.node_->requires_grad = true;
        break;
      }
    }
  }
  return out;
}

void record_backward(const Tensor& output, BackwardFn fn) {
  if (!output.requires_grad()) return;
  GradTape::current().record(output.node(), std::move(fn));
}

}  // namespace tcan
