#include "pvf/ad/tensor.hpp"

#include <numeric>
#include <unordered_set>

#include "pvf/error.hpp"

namespace pvf::ad {

Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const Index n = numel(shape);
  return from(std::move(shape), Eigen::VectorXd::Zero(n), requires_grad);
}

Tensor Tensor::from(Shape shape, Eigen::VectorXd values, bool requires_grad) {
  require(numel(shape) == values.size(),
          "tensor: shape " + to_string(shape) + " does not match " + std::to_string(values.size()) + " values");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({}, Eigen::VectorXd::Constant(1, v)); }

Index Tensor::dim(int i) const {
  const int r = rank();
  const int k = i < 0 ? r + i : i;
  require(k >= 0 && k < r, "tensor: dimension index out of range for shape " + to_string(shape()));
  return node_->shape[static_cast<std::size_t>(k)];
}

double Tensor::item() const {
  require(size() == 1, "tensor: item() on shape " + to_string(shape()));
  return node_->value[0];
}

ConstMatrixMap Tensor::matrix() const {
  const Index cols = rank() == 0 ? 1 : dim(-1);
  return {node_->value.data(), cols == 0 ? 0 : size() / cols, cols};
}

void Tensor::zero_grad() { node_->grad.resize(0); }

Tensor Tensor::detach() const { return from(shape(), value(), false); }

void Tensor::backward() const {
  require(size() == 1, "backward: root must be a scalar, got shape " + to_string(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad().array() += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

namespace {

template <typename Parents>
Tensor build(Shape shape, Eigen::VectorXd value, const Parents& parents, std::function<void(detail::Node&)> backward,
             Tensor (*make)(Shape, Eigen::VectorXd, bool)) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  Tensor out = make(std::move(shape), std::move(value), needs);
  if (needs) {
    for (const auto& p : parents) out.node()->parents.push_back(p.ptr());
    out.node()->backward = std::move(backward);
  }
  return out;
}

}  // namespace

Tensor make_result(Shape shape, Eigen::VectorXd value, std::initializer_list<Tensor> parents,
                   std::function<void(detail::Node&)> backward) {
  return build(std::move(shape), std::move(value), parents, std::move(backward), &Tensor::from);
}

Tensor make_result(Shape shape, Eigen::VectorXd value, const std::vector<Tensor>& parents,
                   std::function<void(detail::Node&)> backward) {
  return build(std::move(shape), std::move(value), parents, std::move(backward), &Tensor::from);
}

}  // namespace pvf::ad
