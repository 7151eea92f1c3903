#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtpbias/errors.hpp"

namespace mtpbias {

template <typename S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<MatrixRM<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const MatrixRM<S>>;
template <typename S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

namespace detail {

template <typename S>
struct TensorNode {
  std::vector<int> shape;
  std::vector<S> data;
  std::vector<S> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  std::function<void()> backward_fn;  // empty for leaves
  std::vector<std::shared_ptr<TensorNode<S>>> parents;

  int64_t size() const { return static_cast<int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

}  // namespace detail

// Dense row-major tensor of rank 1 or 2 with optional tape-based reverse-mode
// differentiation. Copies are shallow: two Tensor values may share one node.
template <typename S>
class Tensor {
 public:
  using Node = detail::TensorNode<S>;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(std::vector<int> shape, S value, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data.assign(count(node->shape), value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from_data(std::vector<int> shape, std::vector<S> data,
                          bool requires_grad = false) {
    if (count(shape) != static_cast<int64_t>(data.size()))
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not match data length " +
                           std::to_string(data.size()));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return node_->size(); }

  // Row/col view treating rank-1 tensors as a single row.
  int rows() const { return rank() == 1 ? 1 : dim(0); }
  int cols() const { return rank() == 1 ? dim(0) : dim(1); }

  S* data() { return node_->data.data(); }
  const S* data() const { return node_->data.data(); }
  S item() const {
    if (size() != 1) throw DimensionError("item(): tensor has " + std::to_string(size()) + " elements");
    return node_->data[0];
  }
  S operator()(int r, int c) const { return node_->data[static_cast<size_t>(r) * cols() + c]; }
  S& operator()(int r, int c) { return node_->data[static_cast<size_t>(r) * cols() + c]; }
  S operator[](int i) const { return node_->data[static_cast<size_t>(i)]; }
  S& operator[](int i) { return node_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  S* grad() {
    node_->ensure_grad();
    return node_->grad.data();
  }
  const std::vector<S>& grad_vec() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  MatMap<S> mat() { return MatMap<S>(data(), rows(), cols()); }
  ConstMatMap<S> mat() const { return ConstMatMap<S>(data(), rows(), cols()); }
  MatMap<S> grad_mat() { return MatMap<S>(grad(), rows(), cols()); }
  ArrMap<S> arr() { return ArrMap<S>(data(), size()); }
  ConstArrMap<S> arr() const { return ConstArrMap<S>(data(), size()); }
  ArrMap<S> grad_arr() { return ArrMap<S>(grad(), size()); }

  std::shared_ptr<Node> node() const { return node_; }

  // Runs reverse-mode accumulation from this scalar.
  void backward() {
    if (size() != 1) throw DimensionError("backward(): root must be a scalar");
    if (!node_->requires_grad) return;
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    topo_sort(node_, seen, order);
    node_->ensure_grad();
    node_->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_fn) (*it)->backward_fn();
  }

  // Builds an op result node. requires_grad is inherited from parents; the
  // backward closure and parent links are only attached when a parent needs
  // gradients, so inference builds no tape.
  template <typename BackwardFn>
  static Tensor make_op(std::vector<int> shape, std::vector<S> data,
                        std::vector<Tensor> parents, BackwardFn&& backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    node->requires_grad = needs;
    if (needs) {
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      Node* raw = node.get();
      node->backward_fn = [raw, fn = std::forward<BackwardFn>(backward)]() { fn(*raw); };
    }
    return Tensor(std::move(node));
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw DimensionError("tensor: negative dimension in " + shape_str(shape));
      n *= d;
    }
    return n;
  }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static void topo_sort(const std::shared_ptr<Node>& node, std::unordered_set<Node*>& seen,
                        std::vector<std::shared_ptr<Node>>& order) {
    if (!node->requires_grad || seen.count(node.get())) return;
    seen.insert(node.get());
    // Iterative DFS; graphs are a few hundred nodes but can chain deeply.
    std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
    stack.emplace_back(node, 0);
    while (!stack.empty()) {
      auto& [cur, idx] = stack.back();
      if (idx < cur->parents.size()) {
        auto parent = cur->parents[idx++];
        if (parent->requires_grad && !seen.count(parent.get())) {
          seen.insert(parent.get());
          stack.emplace_back(std::move(parent), 0);
        }
      } else {
        order.push_back(cur);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace mtpbias
