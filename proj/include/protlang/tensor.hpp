#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "protlang/errors.hpp"
#include "protlang/rng.hpp"

namespace protlang {

namespace detail {

// One value in the computation graph.  Ops fill data eagerly; when a graph is
// wanted they also record parents plus forward/backward closures.
template <class S>
struct Node {
  std::vector<std::size_t> shape;
  std::vector<S> data;
  std::vector<S> grad;  // sized on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> forward_fn;   // recompute data from parents
  std::function<void(Node&)> backward_fn;  // scatter grad into parents

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
  }
};

}  // namespace detail

std::string shape_str(const std::vector<std::size_t>& shape);

// Dense row-major tensor handle.  Copies share the underlying node, so a
// Tensor behaves like a reference into the graph.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, S value, bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<S> data,
                          bool requires_grad = false);
  static Tensor scalar(S value);
  // Normal(0, stddev^2) entries drawn from rng.
  static Tensor randn(std::vector<std::size_t> shape, double stddev, Rng& rng,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const S> data() const { return node_->data; }
  // Mutable view for initialization and optimizer updates on leaves.
  std::span<S> raw() { return node_->data; }
  S item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  std::span<const S> grad() const;
  void zero_grad();

  // Deep copy of the values, detached from any graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node<S>>& impl() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node<S>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node<S>> node_;
};

// Reverse sweep bookkeeping.  Built once per loss; backward() may run once.
template <class S>
class Tape {
 public:
  explicit Tape(const Tensor<S>& root);
  // Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
  void backward();
  // Recomputes every non-leaf value in topological order from current leaves.
  void replay_forward();
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<detail::Node<S>*> order_;  // parents before children
  std::shared_ptr<detail::Node<S>> root_;
  bool consumed_ = false;
};

// Convenience: build a tape over loss and run it.
template <class S>
void backward(const Tensor<S>& loss);

// A parameter (or any tensor) with a stable name, as used by optimizers,
// checkpoints, and freezing hashes.
template <class S>
struct NamedTensor {
  std::string name;
  Tensor<S> tensor;
};

// ---------------------------------------------------------------------------
// Ops.  Every op validates shapes, computes eagerly, checks the result is
// finite, and records the graph when any input requires grad.

template <class S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> scale(const Tensor<S>& a, double c);
// Adds a [1 x n] vector to every row of a [m x n] matrix.
template <class S> Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& v);
template <class S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
template <class S> Tensor<S> transpose(const Tensor<S>& a);
template <class S> Tensor<S> slice_rows(const Tensor<S>& a, std::size_t row0, std::size_t nrows);
template <class S> Tensor<S> slice_cols(const Tensor<S>& a, std::size_t col0, std::size_t ncols);
template <class S> Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts);
template <class S> Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts);
// Gathers rows of table by id; grad accumulates per row (repeats allowed).
template <class S> Tensor<S> embed_rows(const Tensor<S>& table, std::span<const int> ids);
template <class S> Tensor<S> softmax_rows(const Tensor<S>& x);
// allowed is row-major m*n; disallowed entries come out exactly 0 and stay 0
// under any change to their logits.  A fully masked row is a contract error.
template <class S> Tensor<S> masked_softmax_rows(const Tensor<S>& x,
                                                 const std::vector<std::uint8_t>& allowed);
template <class S> Tensor<S> sigmoid(const Tensor<S>& x);
// tanh form, smooth everywhere.
template <class S> Tensor<S> gelu(const Tensor<S>& x);
// Per-row normalization with learned gain/bias [1 x n]; eps = 1e-5.
template <class S> Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                                        const Tensor<S>& bias);
template <class S> Tensor<S> l2_normalize_rows(const Tensor<S>& x);
// weights [m x k] combine rows of v [k x c] -> [m x c].  Entries with an
// exact-zero weight are skipped outright, so the corresponding rows of v
// cannot influence the output even at the bit level.
template <class S> Tensor<S> weighted_sum_rows(const Tensor<S>& weights, const Tensor<S>& v);
// [m x n] -> [m x 1]; backward routes to the first maximal entry per row.
template <class S> Tensor<S> row_max(const Tensor<S>& x);
template <class S> Tensor<S> mean_rows(const Tensor<S>& x);  // [m x n] -> [1 x n]
template <class S> Tensor<S> sum_all(const Tensor<S>& x);    // -> [1]
template <class S> Tensor<S> mean_all(const Tensor<S>& x);   // -> [1]
// Mean negative log-likelihood over rows whose target != ignore_index.
template <class S> Tensor<S> cross_entropy_logits(const Tensor<S>& logits,
                                                  std::span<const int> targets,
                                                  int ignore_index = -1);
// Mean binary cross entropy; targets in [0,1], one per element of logits.
template <class S> Tensor<S> bce_with_logits(const Tensor<S>& logits,
                                             const std::vector<S>& targets);
// im2col over the row axis with zero "same" padding, odd k: [n x c] -> [n x c*k].
template <class S> Tensor<S> unfold_rows(const Tensor<S>& x, std::size_t k);
// PyTorch-style window averaging over rows: [n x c] -> [out x c].
template <class S> Tensor<S> adaptive_avg_pool_rows(const Tensor<S>& x, std::size_t out_rows);

}  // namespace protlang
