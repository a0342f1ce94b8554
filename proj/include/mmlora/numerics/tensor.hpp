// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmlora {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One record of the autodiff graph. Leaves have no parents and no backward
// closure. Interior nodes keep their parents alive until the graph is dropped.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// Copies are shallow: two Tensor handles copied from one another share
/// storage and gradient. Use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// 2-D convenience constructor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the values. Intended for leaves (optimizer updates,
  /// initialization); mutating an interior node does not re-run the graph.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  /// Accumulated gradient; all zeros if nothing flowed here.
  std::vector<double> grad() const;
  bool has_grad() const;
  void zero_grad();

  /// Runs reverse-mode accumulation from this scalar.
  void backward() const;

  /// Detached leaf copy with its own storage.
  Tensor clone(bool requires_grad = false) const;
  /// Same values, no graph history, shared storage is NOT kept.
  Tensor detach() const { return clone(false); }

  /// Identity of the underlying storage (used for aliasing checks).
  const void* storage_id() const { return node_.get(); }

  // Internal: op implementations build nodes directly.
  static Tensor from_node(std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Number of nodes visited by the last backward() on this thread. Each node
/// is visited at most once per pass.
std::size_t last_backward_visit_count();

}  // namespace mmlora
