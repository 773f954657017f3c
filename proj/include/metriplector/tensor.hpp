#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtpl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Dense row-major array of doubles. Values are immutable once built; a tensor
/// produced while a Tape is watching carries the id of its tape node.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}, {}) {}
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// [n, 1] column from values.
  static Tensor column(std::vector<double> values);
  /// [rows, cols] from values.
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_->size(); }
  /// Leading extent (1 for rank 0).
  std::size_t rows() const noexcept;
  /// Product of the trailing extents (1 for rank <= 1).
  std::size_t cols() const noexcept;

  // Views into the buffer; deleted on temporaries, which would leave them dangling.
  std::span<const double> values() const& noexcept { return *data_; }
  std::span<const double> values() const&& = delete;
  const std::vector<double>& storage() const& noexcept { return *data_; }
  const std::vector<double>& storage() const&& = delete;
  std::vector<double> to_vector() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  double item() const;

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  int node() const noexcept { return node_; }
  /// Same values, no tape.
  Tensor detach() const;
  /// Same values viewed under a new shape with equal element count.
  Tensor reshape(Shape shape) const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Append-only record of one forward pass. Nodes are stored in creation
/// order, so reverse index order is a valid topological order for backward.
class Tape {
 public:
  /// Gradient buffers of the inputs of a node, nullptr for untracked inputs.
  /// Backward closures accumulate into them.
  using GradRefs = std::vector<std::vector<double>*>;
  using Backward = std::function<void(std::span<const double> upstream, GradRefs& grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf whose gradient is wanted.
  Tensor watch(const Tensor& value);

  /// Records an op result. When no input is tracked the value is returned
  /// untracked and nothing is appended.
  static Tensor record(Tensor value, std::span<const Tensor> inputs, Backward fn);

  /// Seeds d(output)/d(output) = 1 (output must hold one element) and runs the
  /// reverse sweep. Previous gradients are cleared first.
  void backward(const Tensor& output);
  /// Same with an explicit upstream seed of output's size.
  void backward(const Tensor& output, std::span<const double> seed);

  /// Gradient accumulated for t (zeros if t received none).
  Tensor grad(const Tensor& t) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<int> inputs;
    Backward fn;
    std::vector<double> grad;
  };

  std::vector<Node> nodes_;
};

/// Backward rule for custom_grad: maps the upstream gradient of the result to
/// one gradient per declared input, each with that input's shape.
using GradRule = std::function<std::vector<Tensor>(const Tensor& upstream)>;

/// Attaches a hand-written backward rule to a value computed outside the tape.
/// The tape replays `rule` in place of whatever produced `result`.
Tensor custom_grad(const Tensor& result, std::vector<Tensor> inputs, GradRule rule);

}  // namespace mtpl
