#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pvf::ad {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Eigen::VectorXd value;
  /// Empty until a gradient reaches this node.
  Eigen::VectorXd grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  /// Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  Eigen::VectorXd& ensure_grad() {
    if (grad.size() != value.size()) grad = Eigen::VectorXd::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

/// Dense row-major N-d array with an optional accumulated gradient.
///
/// Tensor is a shared handle: copies alias the same storage. Operations in
/// ops.hpp record a graph when any input requires a gradient, and
/// `backward()` on a scalar result accumulates into every leaf.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, Eigen::VectorXd values, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  /// Size of dimension `i`; negative counts from the end.
  Index dim(int i) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index size() const { return node_->value.size(); }

  const Eigen::VectorXd& value() const { return node_->value; }
  Eigen::VectorXd& mutable_value() { return node_->value; }
  /// Zero-length when no gradient has been accumulated.
  const Eigen::VectorXd& grad() const { return node_->grad; }
  Eigen::VectorXd& mutable_grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  /// View as (size / last_dim) x last_dim.
  ConstMatrixMap matrix() const;

  /// Reverse-mode sweep from this scalar.
  void backward() const;
  void zero_grad();
  /// Same values, no graph history.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  friend Tensor make_result(Shape, Eigen::VectorXd, std::initializer_list<Tensor>, std::function<void(detail::Node&)>);
  friend Tensor make_result(Shape, Eigen::VectorXd, const std::vector<Tensor>&, std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op output; the backward closure and parents are only kept when
/// some parent requires a gradient.
Tensor make_result(Shape shape, Eigen::VectorXd value, std::initializer_list<Tensor> parents,
                   std::function<void(detail::Node&)> backward);
Tensor make_result(Shape shape, Eigen::VectorXd value, const std::vector<Tensor>& parents,
                   std::function<void(detail::Node&)> backward);

/// Gradient accumulator of parent `i`, or nullptr when it does not need one.
inline Eigen::VectorXd* parent_grad(detail::Node& node, std::size_t i) {
  auto& p = node.parents[i];
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

}  // namespace pvf::ad
