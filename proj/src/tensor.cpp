#include "metriplector/tensor.hpp"

#include <numeric>
#include <sstream>

#include "metriplector/errors.hpp"

namespace mtpl {

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

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::make_shared<const std::vector<double>>(std::move(values))) {
  if (shape_numel(shape_) != data_->size())
    throw DimensionError("tensor of shape " + shape_str(shape_) + " given " +
                         std::to_string(data_->size()) + " values");
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

Tensor Tensor::column(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n, 1}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const noexcept { return shape_.empty() ? 1 : shape_[0]; }

std::size_t Tensor::cols() const noexcept {
  std::size_t c = 1;
  for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
  return c;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  Tensor out = detach();
  out.shape_ = std::move(shape);
  if (!tracked()) return out;
  return Tape::record(out, std::span<const Tensor>(this, 1),
                      [](std::span<const double> g, Tape::GradRefs& grads) {
                        auto& gi = *grads[0];
                        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                      });
}

Tensor Tape::watch(const Tensor& value) {
  Tensor t = value.detach();
  nodes_.push_back(Node{t.shape_, {}, nullptr, {}});
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size()) - 1;
  return t;
}

Tensor Tape::record(Tensor value, std::span<const Tensor> inputs, Backward fn) {
  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.tracked()) continue;
    if (tape && tape != in.tape_) throw ContractError("op mixes tensors from different tapes");
    tape = in.tape_;
  }
  value.tape_ = nullptr;
  value.node_ = -1;
  if (!tape) return value;

  Node node{value.shape_, {}, std::move(fn), {}};
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.tracked() ? in.node_ : -1);
  tape->nodes_.push_back(std::move(node));
  value.tape_ = tape;
  value.node_ = static_cast<int>(tape->nodes_.size()) - 1;
  return value;
}

void Tape::backward(const Tensor& output) {
  if (output.numel() != 1)
    throw DimensionError("backward() without seed needs a single-element output, got " +
                         shape_str(output.shape()));
  const double one = 1.0;
  backward(output, std::span<const double>(&one, 1));
}

void Tape::backward(const Tensor& output, std::span<const double> seed) {
  if (output.tape_ != this) throw ContractError("backward() on a tensor from another tape");
  if (seed.size() != output.numel()) throw DimensionError("backward seed size mismatch");
  for (auto& n : nodes_) n.grad.clear();

  const auto start = static_cast<std::size_t>(output.node_);
  nodes_[start].grad.assign(seed.begin(), seed.end());

  GradRefs refs;
  for (std::size_t k = start + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (node.grad.empty() || !node.fn) continue;
    refs.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const int id = node.inputs[i];
      if (id < 0) continue;
      auto& g = nodes_[static_cast<std::size_t>(id)].grad;
      if (g.empty()) g.assign(shape_numel(nodes_[static_cast<std::size_t>(id)].shape), 0.0);
      refs[i] = &g;
    }
    node.fn(node.grad, refs);
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (t.tape_ != this) throw ContractError("grad() of a tensor not recorded on this tape");
  const auto& node = nodes_[static_cast<std::size_t>(t.node_)];
  if (node.grad.empty()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), node.grad);
}

Tensor custom_grad(const Tensor& result, std::vector<Tensor> inputs, GradRule rule) {
  std::vector<Shape> shapes;
  shapes.reserve(inputs.size());
  for (const auto& in : inputs) shapes.push_back(in.shape());
  const Shape out_shape = result.shape();
  auto fn = [rule = std::move(rule), shapes, out_shape](std::span<const double> g,
                                                        Tape::GradRefs& grads) {
    const Tensor upstream(out_shape, std::vector<double>(g.begin(), g.end()));
    const std::vector<Tensor> parts = rule(upstream);
    if (parts.size() != shapes.size())
      throw ContractError("custom_grad rule returned " + std::to_string(parts.size()) +
                          " gradients for " + std::to_string(shapes.size()) + " inputs");
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i].numel() != shape_numel(shapes[i]))
        throw ContractError("custom_grad rule gradient " + std::to_string(i) + " has shape " +
                            shape_str(parts[i].shape()) + ", input has " + shape_str(shapes[i]));
      if (!grads[i]) continue;
      auto& gi = *grads[i];
      const auto v = parts[i].values();
      for (std::size_t k = 0; k < v.size(); ++k) gi[k] += v[k];
    }
  };
  return Tape::record(result.detach(), inputs, std::move(fn));
}

}  // namespace mtpl
