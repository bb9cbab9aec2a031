#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "topoformer/errors.hpp"

namespace topoformer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;     // persistent accumulated gradient, lazily sized
  std::vector<double> adjoint;  // scratch buffer owned by the running backward pass
  std::uint64_t reg_mark = 0;   // tape-registration stamp
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats. Value-semantic handle over a
/// shared node: copies alias the same storage, which is what lets layer
/// parameter lists, optimizers and checkpoints all refer to one buffer.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
  }

  /// 2-D convenience for tests and fixtures.
  static Tensor from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
    if (rows.empty()) throw DimensionError("from_rows needs at least one row");
    const std::size_t cols = rows[0].size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(flat), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }

  double& at(std::size_t i) { return node_->data[i]; }
  double at(std::size_t i) const { return node_->data[i]; }
  double& at(std::size_t i, std::size_t j) { return node_->data[i * node_->shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return node_->data[i * node_->shape[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return node_->data[(i * node_->shape[1] + j) * node_->shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return node_->data[(i * node_->shape[1] + j) * node_->shape[2] + k];
  }

  /// Value of a scalar (size-1) tensor.
  double value() const {
    if (size() != 1) {
      throw ContractError("value() requires a scalar tensor, shape is " + shape_str(shape()));
    }
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }

  /// Accumulated gradient buffer; allocated to zeros on first access.
  std::vector<double>& grad() {
    if (!node_->requires_grad) {
      throw ContractError("grad() on tensor without requires_grad");
    }
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
  }

  const std::vector<double>& grad() const {
    if (node_->grad.empty()) {
      throw ContractError("grad() before any backward pass");
    }
    return node_->grad;
  }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
  }

  /// Identity of the underlying storage; two handles alias iff equal.
  const void* id() const { return node_.get(); }

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

inline void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace topoformer
