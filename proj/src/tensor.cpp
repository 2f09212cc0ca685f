#include "protlang/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace protlang {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

template <class S>
using Node = detail::Node<S>;

template <class S>
using NodePtr = std::shared_ptr<detail::Node<S>>;

template <class S>
using CMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using MMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

template <class S>
NodePtr<S> make_node(std::vector<std::size_t> shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
  for (std::size_t d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->data.assign(shape_numel(n->shape), S(0));
  return n;
}

template <class S>
void check_finite(const std::vector<S>& v, const char* op) {
  for (S x : v)
    if (!std::isfinite(static_cast<double>(x)))
      throw NumericError(std::string(op) + " produced a non-finite value");
}

// Records graph edges when any parent participates in autodiff.
template <class S>
Tensor<S> finish(NodePtr<S> out, std::vector<NodePtr<S>> parents,
                 std::function<void(Node<S>&)> fwd, std::function<void(Node<S>&)> bwd) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->forward_fn = std::move(fwd);
    out->backward_fn = std::move(bwd);
  }
  return Tensor<S>(std::move(out));
}

template <class S>
void require_rank2(const Tensor<S>& t, const char* op) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + " needs a rank-2 tensor, got " + shape_str(t.shape()));
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <class S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <class S>
Tensor<S> Tensor<S>::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  auto n = make_node<S>(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor<S>(std::move(n));
}

template <class S>
Tensor<S> Tensor<S>::full(std::vector<std::size_t> shape, S value, bool requires_grad) {
  auto n = make_node<S>(std::move(shape));
  std::fill(n->data.begin(), n->data.end(), value);
  n->requires_grad = requires_grad;
  return Tensor<S>(std::move(n));
}

template <class S>
Tensor<S> Tensor<S>::from_data(std::vector<std::size_t> shape, std::vector<S> data,
                               bool requires_grad) {
  auto n = make_node<S>(std::move(shape));
  if (data.size() != n->data.size())
    throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                     shape_str(n->shape));
  n->data = std::move(data);
  check_finite(n->data, "from_data");
  n->requires_grad = requires_grad;
  return Tensor<S>(std::move(n));
}

template <class S>
Tensor<S> Tensor<S>::scalar(S value) {
  return from_data({1}, {value});
}

template <class S>
Tensor<S> Tensor<S>::randn(std::vector<std::size_t> shape, double stddev, Rng& rng,
                           bool requires_grad) {
  auto n = make_node<S>(std::move(shape));
  for (auto& x : n->data) x = static_cast<S>(stddev * rng.normal());
  n->requires_grad = requires_grad;
  return Tensor<S>(std::move(n));
}

template <class S>
std::size_t Tensor<S>::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

template <class S>
std::size_t Tensor<S>::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

template <class S>
S Tensor<S>::item() const {
  if (numel() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <class S>
std::span<const S> Tensor<S>::grad() const {
  return node_->grad;
}

template <class S>
void Tensor<S>::zero_grad() {
  node_->grad.clear();
}

template <class S>
Tensor<S> Tensor<S>::detach() const {
  auto n = std::make_shared<detail::Node<S>>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// Tape

template <class S>
Tape<S>::Tape(const Tensor<S>& root) : root_(root.impl()) {
  if (!root.defined()) throw ContractError("tape root is undefined");
  struct Frame {
    detail::Node<S>* n;
    std::size_t next;
  };
  std::unordered_set<detail::Node<S>*> visited;
  std::vector<Frame> stack;
  stack.push_back({root_.get(), 0});
  visited.insert(root_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      detail::Node<S>* p = f.n->parents[f.next++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order_.push_back(f.n);
      stack.pop_back();
    }
  }
}

template <class S>
void Tape<S>::backward() {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  consumed_ = true;
  if (root_->data.size() != 1)
    throw ContractError("backward() root must be scalar, got " + shape_str(root_->shape));
  root_->ensure_grad();
  root_->grad[0] = S(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node<S>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template <class S>
void Tape<S>::replay_forward() {
  for (detail::Node<S>* n : order_)
    if (n->forward_fn) n->forward_fn(*n);
}

template <class S>
void backward(const Tensor<S>& loss) {
  Tape<S> tape(loss);
  tape.backward();
}

// ---------------------------------------------------------------------------
// Elementwise / linear ops

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  auto out = make_node<S>(a.shape());
  auto fwd = [](Node<S>& n) {
    const auto& x = n.parents[0]->data;
    const auto& y = n.parents[1]->data;
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = x[i] + y[i];
  };
  out->parents = {a.impl(), b.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "add");
  auto bwd = [](Node<S>& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *n.parents[k];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  };
  return finish<S>(std::move(out), {a.impl(), b.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  auto out = make_node<S>(a.shape());
  auto fwd = [](Node<S>& n) {
    const auto& x = n.parents[0]->data;
    const auto& y = n.parents[1]->data;
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = x[i] - y[i];
  };
  out->parents = {a.impl(), b.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "sub");
  auto bwd = [](Node<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
    }
  };
  return finish<S>(std::move(out), {a.impl(), b.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  auto out = make_node<S>(a.shape());
  auto fwd = [](Node<S>& n) {
    const auto& x = n.parents[0]->data;
    const auto& y = n.parents[1]->data;
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = x[i] * y[i];
  };
  out->parents = {a.impl(), b.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "mul");
  auto bwd = [](Node<S>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.data[i];
    }
  };
  return finish<S>(std::move(out), {a.impl(), b.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  const S k = static_cast<S>(c);
  auto out = make_node<S>(a.shape());
  auto fwd = [k](Node<S>& n) {
    const auto& x = n.parents[0]->data;
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = k * x[i];
  };
  out->parents = {a.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "scale");
  auto bwd = [k](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += k * n.grad[i];
  };
  return finish<S>(std::move(out), {a.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> add_rowvec(const Tensor<S>& a, const Tensor<S>& v) {
  require_rank2(a, "add_rowvec");
  require_rank2(v, "add_rowvec");
  if (v.rows() != 1 || v.cols() != a.cols())
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) + " does not fit " +
                     shape_str(a.shape()));
  const std::size_t m = a.rows(), c = a.cols();
  auto out = make_node<S>(a.shape());
  auto fwd = [m, c](Node<S>& n) {
    const auto& x = n.parents[0]->data;
    const auto& b = n.parents[1]->data;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) n.data[i * c + j] = x[i * c + j] + b[j];
  };
  out->parents = {a.impl(), v.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "add_rowvec");
  auto bwd = [m, c](Node<S>& n) {
    auto& pa = *n.parents[0];
    auto& pv = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
    }
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) pv.grad[j] += n.grad[i * c + j];
    }
  };
  return finish<S>(std::move(out), {a.impl(), v.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_node<S>({m, n});
  auto fwd = [m, k, n](Node<S>& nd) {
    CMap<S> A(nd.parents[0]->data.data(), m, k);
    CMap<S> B(nd.parents[1]->data.data(), k, n);
    MMap<S> C(nd.data.data(), m, n);
    C.noalias() = A * B;
  };
  out->parents = {a.impl(), b.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "matmul");
  auto bwd = [m, k, n](Node<S>& nd) {
    CMap<S> G(nd.grad.data(), m, n);
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      CMap<S> B(pb.data.data(), k, n);
      MMap<S> GA(pa.grad.data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      CMap<S> A(pa.data.data(), m, k);
      MMap<S> GB(pb.grad.data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  };
  return finish<S>(std::move(out), {a.impl(), b.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), c = a.cols();
  auto out = make_node<S>({c, m});
  auto fwd = [m, c](Node<S>& n) {
    const auto& x = n.parents[0]->data;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) n.data[j * m + i] = x[i * c + j];
  };
  out->parents = {a.impl()};
  fwd(*out);
  out->parents.clear();
  auto bwd = [m, c](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += n.grad[j * m + i];
  };
  return finish<S>(std::move(out), {a.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, std::size_t row0, std::size_t nrows) {
  require_rank2(a, "slice_rows");
  if (nrows == 0 || row0 + nrows > a.rows())
    throw ShapeError("slice_rows: rows [" + std::to_string(row0) + ", " +
                     std::to_string(row0 + nrows) + ") out of " + std::to_string(a.rows()));
  const std::size_t c = a.cols();
  auto out = make_node<S>({nrows, c});
  auto fwd = [row0, nrows, c](Node<S>& n) {
    const auto& x = n.parents[0]->data;
    std::copy(x.begin() + row0 * c, x.begin() + (row0 + nrows) * c, n.data.begin());
  };
  out->parents = {a.impl()};
  fwd(*out);
  out->parents.clear();
  auto bwd = [row0, c](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[row0 * c + i] += n.grad[i];
  };
  return finish<S>(std::move(out), {a.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, std::size_t col0, std::size_t ncols) {
  require_rank2(a, "slice_cols");
  if (ncols == 0 || col0 + ncols > a.cols())
    throw ShapeError("slice_cols: cols [" + std::to_string(col0) + ", " +
                     std::to_string(col0 + ncols) + ") out of " + std::to_string(a.cols()));
  const std::size_t m = a.rows(), c = a.cols();
  auto out = make_node<S>({m, ncols});
  auto fwd = [m, c, col0, ncols](Node<S>& n) {
    const auto& x = n.parents[0]->data;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < ncols; ++j) n.data[i * ncols + j] = x[i * c + col0 + j];
  };
  out->parents = {a.impl()};
  fwd(*out);
  out->parents.clear();
  auto bwd = [m, c, col0, ncols](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < ncols; ++j) p.grad[i * c + col0 + j] += n.grad[i * ncols + j];
  };
  return finish<S>(std::move(out), {a.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const std::size_t c = parts[0].cols();
  std::size_t m = 0;
  std::vector<NodePtr<S>> parents;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != c)
      throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
    m += p.rows();
    parents.push_back(p.impl());
  }
  auto out = make_node<S>({m, c});
  auto fwd = [](Node<S>& n) {
    std::size_t off = 0;
    for (const auto& p : n.parents) {
      std::copy(p->data.begin(), p->data.end(), n.data.begin() + off);
      off += p->data.size();
    }
  };
  out->parents = parents;
  fwd(*out);
  out->parents.clear();
  auto bwd = [](Node<S>& n) {
    std::size_t off = 0;
    for (const auto& pp : n.parents) {
      auto& p = *pp;
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += n.grad[off + i];
      }
      off += p.data.size();
    }
  };
  return finish<S>(std::move(out), std::move(parents), fwd, bwd);
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t c = 0;
  std::vector<NodePtr<S>> parents;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    c += p.cols();
    parents.push_back(p.impl());
  }
  auto out = make_node<S>({m, c});
  auto fwd = [m, c](Node<S>& n) {
    std::size_t off = 0;
    for (const auto& p : n.parents) {
      const std::size_t pc = p->shape[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < pc; ++j) n.data[i * c + off + j] = p->data[i * pc + j];
      off += pc;
    }
  };
  out->parents = parents;
  fwd(*out);
  out->parents.clear();
  auto bwd = [m, c](Node<S>& n) {
    std::size_t off = 0;
    for (const auto& pp : n.parents) {
      auto& p = *pp;
      const std::size_t pc = p.shape[1];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < pc; ++j) p.grad[i * pc + j] += n.grad[i * c + off + j];
      }
      off += pc;
    }
  };
  return finish<S>(std::move(out), std::move(parents), fwd, bwd);
}

template <class S>
Tensor<S> embed_rows(const Tensor<S>& table, std::span<const int> ids) {
  require_rank2(table, "embed_rows");
  if (ids.empty()) throw ContractError("embed_rows: empty id list");
  const std::size_t v = table.rows(), c = table.cols();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ContractError("embed_rows: id " + std::to_string(id) + " out of vocab " +
                          std::to_string(v));
  std::vector<int> idv(ids.begin(), ids.end());
  auto out = make_node<S>({idv.size(), c});
  auto fwd = [idv, c](Node<S>& n) {
    const auto& t = n.parents[0]->data;
    for (std::size_t i = 0; i < idv.size(); ++i)
      std::copy(t.begin() + idv[i] * c, t.begin() + (idv[i] + 1) * c, n.data.begin() + i * c);
  };
  out->parents = {table.impl()};
  fwd(*out);
  out->parents.clear();
  auto bwd = [idv, c](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[idv[i] * c + j] += n.grad[i * c + j];
  };
  return finish<S>(std::move(out), {table.impl()}, fwd, bwd);
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalizations

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  require_rank2(x, "softmax_rows");
  const std::size_t m = x.rows(), c = x.cols();
  auto out = make_node<S>(x.shape());
  auto fwd = [m, c](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t i = 0; i < m; ++i) {
      S mx = in[i * c];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[i * c + j]);
      S sum = S(0);
      for (std::size_t j = 0; j < c; ++j) {
        S e = std::exp(in[i * c + j] - mx);
        n.data[i * c + j] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < c; ++j) n.data[i * c + j] /= sum;
    }
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "softmax_rows");
  auto bwd = [m, c](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      S dot = S(0);
      for (std::size_t j = 0; j < c; ++j) dot += n.grad[i * c + j] * n.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        p.grad[i * c + j] += n.data[i * c + j] * (n.grad[i * c + j] - dot);
    }
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> masked_softmax_rows(const Tensor<S>& x, const std::vector<std::uint8_t>& allowed) {
  require_rank2(x, "masked_softmax_rows");
  const std::size_t m = x.rows(), c = x.cols();
  if (allowed.size() != m * c)
    throw ShapeError("masked_softmax_rows: mask has " + std::to_string(allowed.size()) +
                     " entries for " + shape_str(x.shape()));
  for (std::size_t i = 0; i < m; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) any = any || (allowed[i * c + j] != 0);
    if (!any)
      throw ContractError("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
  }
  auto out = make_node<S>(x.shape());
  // Disallowed entries are written as exact zeros, never exp(-large): a
  // masked-out logit cannot influence the row by construction.
  auto fwd = [m, c, allowed](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t i = 0; i < m; ++i) {
      S mx = S(0);
      bool first = true;
      for (std::size_t j = 0; j < c; ++j)
        if (allowed[i * c + j]) {
          mx = first ? in[i * c + j] : std::max(mx, in[i * c + j]);
          first = false;
        }
      S sum = S(0);
      for (std::size_t j = 0; j < c; ++j) {
        if (allowed[i * c + j]) {
          S e = std::exp(in[i * c + j] - mx);
          n.data[i * c + j] = e;
          sum += e;
        } else {
          n.data[i * c + j] = S(0);
        }
      }
      for (std::size_t j = 0; j < c; ++j)
        if (allowed[i * c + j]) n.data[i * c + j] /= sum;
    }
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "masked_softmax_rows");
  auto bwd = [m, c, allowed](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      S dot = S(0);
      for (std::size_t j = 0; j < c; ++j)
        if (allowed[i * c + j]) dot += n.grad[i * c + j] * n.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        if (allowed[i * c + j])
          p.grad[i * c + j] += n.data[i * c + j] * (n.grad[i * c + j] - dot);
    }
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  auto out = make_node<S>(x.shape());
  auto fwd = [](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t i = 0; i < n.data.size(); ++i) n.data[i] = stable_sigmoid(in[i]);
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "sigmoid");
  auto bwd = [](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      S s = n.data[i];
      p.grad[i] += n.grad[i] * s * (S(1) - s);
    }
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  auto out = make_node<S>(x.shape());
  auto fwd = [](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t i = 0; i < n.data.size(); ++i) {
      double v = static_cast<double>(in[i]);
      double u = kC * (v + kA * v * v * v);
      n.data[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(u)));
    }
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "gelu");
  auto bwd = [](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const auto& in = p.data;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double v = static_cast<double>(in[i]);
      double u = kC * (v + kA * v * v * v);
      double t = std::tanh(u);
      double du = kC * (1.0 + 3.0 * kA * v * v);
      double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      p.grad[i] += n.grad[i] * static_cast<S>(d);
    }
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), c = x.cols();
  if (gain.rank() != 2 || gain.rows() != 1 || gain.cols() != c || bias.rank() != 2 ||
      bias.rows() != 1 || bias.cols() != c)
    throw ShapeError("layer_norm: gain/bias must be [1 x " + std::to_string(c) + "]");
  constexpr double kEps = 1e-5;
  auto out = make_node<S>(x.shape());
  // A constant row yields mu == x exactly, so x-hat is exactly zero and the
  // output is just the bias.
  auto row_stats = [c](const std::vector<S>& in, std::size_t i, double& mu, double& inv) {
    bool constant = true;
    for (std::size_t j = 1; j < c && constant; ++j) constant = (in[i * c + j] == in[i * c]);
    if (constant) {
      mu = static_cast<double>(in[i * c]);
      inv = 1.0 / std::sqrt(kEps);
      return;
    }
    mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += in[i * c + j];
    mu /= static_cast<double>(c);
    double var = 0;
    for (std::size_t j = 0; j < c; ++j) {
      double d = in[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv = 1.0 / std::sqrt(var + kEps);
  };
  auto fwd = [m, c, row_stats](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    const auto& g = n.parents[1]->data;
    const auto& b = n.parents[2]->data;
    for (std::size_t i = 0; i < m; ++i) {
      double mu, inv;
      row_stats(in, i, mu, inv);
      for (std::size_t j = 0; j < c; ++j) {
        double xh = (in[i * c + j] - mu) * inv;
        n.data[i * c + j] = static_cast<S>(xh * g[j] + b[j]);
      }
    }
  };
  out->parents = {x.impl(), gain.impl(), bias.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "layer_norm");
  auto bwd = [m, c, row_stats](Node<S>& n) {
    auto& px = *n.parents[0];
    auto& pg = *n.parents[1];
    auto& pb = *n.parents[2];
    if (px.requires_grad) px.ensure_grad();
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    const auto& in = px.data;
    const auto& g = pg.data;
    for (std::size_t i = 0; i < m; ++i) {
      double mu, inv;
      row_stats(in, i, mu, inv);
      double mean_dxh = 0, mean_dxh_xh = 0;
      for (std::size_t j = 0; j < c; ++j) {
        double xh = (in[i * c + j] - mu) * inv;
        double gy = n.grad[i * c + j];
        if (pg.requires_grad) pg.grad[j] += static_cast<S>(gy * xh);
        if (pb.requires_grad) pb.grad[j] += static_cast<S>(gy);
        double dxh = gy * g[j];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * xh;
      }
      if (!px.requires_grad) continue;
      mean_dxh /= static_cast<double>(c);
      mean_dxh_xh /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) {
        double xh = (in[i * c + j] - mu) * inv;
        double dxh = static_cast<double>(n.grad[i * c + j]) * g[j];
        px.grad[i * c + j] += static_cast<S>(inv * (dxh - mean_dxh - xh * mean_dxh_xh));
      }
    }
  };
  return finish<S>(std::move(out), {x.impl(), gain.impl(), bias.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> l2_normalize_rows(const Tensor<S>& x) {
  require_rank2(x, "l2_normalize_rows");
  const std::size_t m = x.rows(), c = x.cols();
  constexpr double kEps = 1e-12;
  auto out = make_node<S>(x.shape());
  // Rows with norm below eps come out as zeros instead of NaN; their
  // backward contribution is likewise zero.
  auto fwd = [m, c](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < c; ++j) s += static_cast<double>(in[i * c + j]) * in[i * c + j];
      double nrm = std::sqrt(s);
      if (nrm < kEps) {
        for (std::size_t j = 0; j < c; ++j) n.data[i * c + j] = S(0);
      } else {
        for (std::size_t j = 0; j < c; ++j)
          n.data[i * c + j] = static_cast<S>(in[i * c + j] / nrm);
      }
    }
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "l2_normalize_rows");
  auto bwd = [m, c](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const auto& in = p.data;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < c; ++j) s += static_cast<double>(in[i * c + j]) * in[i * c + j];
      double nrm = std::sqrt(s);
      if (nrm < kEps) continue;
      double dot = 0;
      for (std::size_t j = 0; j < c; ++j)
        dot += static_cast<double>(n.grad[i * c + j]) * n.data[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        p.grad[i * c + j] +=
            static_cast<S>((n.grad[i * c + j] - dot * n.data[i * c + j]) / nrm);
    }
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> weighted_sum_rows(const Tensor<S>& weights, const Tensor<S>& v) {
  require_rank2(weights, "weighted_sum_rows");
  require_rank2(v, "weighted_sum_rows");
  if (weights.cols() != v.rows())
    throw ShapeError("weighted_sum_rows: " + shape_str(weights.shape()) + " against " +
                     shape_str(v.shape()));
  const std::size_t m = weights.rows(), k = weights.cols(), c = v.cols();
  auto out = make_node<S>({m, c});
  auto fwd = [m, k, c](Node<S>& n) {
    const auto& w = n.parents[0]->data;
    const auto& val = n.parents[1]->data;
    std::fill(n.data.begin(), n.data.end(), S(0));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const S wij = w[i * k + j];
        if (wij == S(0)) continue;
        for (std::size_t x = 0; x < c; ++x) n.data[i * c + x] += wij * val[j * c + x];
      }
  };
  out->parents = {weights.impl(), v.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "weighted_sum_rows");
  auto bwd = [m, k, c](Node<S>& n) {
    auto& pw = *n.parents[0];
    auto& pv = *n.parents[1];
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          S dot = S(0);
          for (std::size_t x = 0; x < c; ++x) dot += n.grad[i * c + x] * pv.data[j * c + x];
          pw.grad[i * k + j] += dot;
        }
    }
    if (pv.requires_grad) {
      pv.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const S wij = pw.data[i * k + j];
          if (wij == S(0)) continue;
          for (std::size_t x = 0; x < c; ++x)
            pv.grad[j * c + x] += wij * n.grad[i * c + x];
        }
    }
  };
  return finish<S>(std::move(out), {weights.impl(), v.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> row_max(const Tensor<S>& x) {
  require_rank2(x, "row_max");
  const std::size_t m = x.rows(), c = x.cols();
  auto out = make_node<S>({m, 1});
  auto fwd = [m, c](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t i = 0; i < m; ++i) {
      S mx = in[i * c];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[i * c + j]);
      n.data[i] = mx;
    }
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  auto bwd = [m, c](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const auto& in = p.data;
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < c; ++j)
        if (in[i * c + j] > in[i * c + arg]) arg = j;
      p.grad[i * c + arg] += n.grad[i];
    }
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> mean_rows(const Tensor<S>& x) {
  require_rank2(x, "mean_rows");
  const std::size_t m = x.rows(), c = x.cols();
  auto out = make_node<S>({1, c});
  auto fwd = [m, c](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += in[i * c + j];
      n.data[j] = static_cast<S>(s / static_cast<double>(m));
    }
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "mean_rows");
  auto bwd = [m, c](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const S inv = S(1) / static_cast<S>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += n.grad[j] * inv;
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  auto out = make_node<S>({1});
  auto fwd = [](Node<S>& n) {
    double s = 0;
    for (S v : n.parents[0]->data) s += v;
    n.data[0] = static_cast<S>(s);
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "sum_all");
  auto bwd = [](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (auto& g : p.grad) g += n.grad[0];
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
  const std::size_t total = x.numel();
  auto out = make_node<S>({1});
  auto fwd = [total](Node<S>& n) {
    double s = 0;
    for (S v : n.parents[0]->data) s += v;
    n.data[0] = static_cast<S>(s / static_cast<double>(total));
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "mean_all");
  auto bwd = [total](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const S inv = S(1) / static_cast<S>(total);
    for (auto& g : p.grad) g += n.grad[0] * inv;
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> cross_entropy_logits(const Tensor<S>& logits, std::span<const int> targets,
                               int ignore_index) {
  require_rank2(logits, "cross_entropy_logits");
  const std::size_t m = logits.rows(), v = logits.cols();
  if (targets.size() != m)
    throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(m) + " rows");
  std::size_t count = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw ContractError("cross_entropy_logits: target " + std::to_string(t) +
                          " out of range for " + std::to_string(v) + " classes");
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy_logits: every target is ignored");
  std::vector<int> tv(targets.begin(), targets.end());
  auto out = make_node<S>({1});
  auto fwd = [m, v, tv, ignore_index, count](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    double total = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (tv[i] == ignore_index) continue;
      S mx = in[i * v];
      for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, in[i * v + j]);
      double sum = 0;
      for (std::size_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(in[i * v + j] - mx));
      total += std::log(sum) + static_cast<double>(mx) - static_cast<double>(in[i * v + tv[i]]);
    }
    n.data[0] = static_cast<S>(total / static_cast<double>(count));
  };
  out->parents = {logits.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "cross_entropy_logits");
  auto bwd = [m, v, tv, ignore_index, count](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const auto& in = p.data;
    const double gscale = static_cast<double>(n.grad[0]) / static_cast<double>(count);
    for (std::size_t i = 0; i < m; ++i) {
      if (tv[i] == ignore_index) continue;
      S mx = in[i * v];
      for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, in[i * v + j]);
      double sum = 0;
      for (std::size_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(in[i * v + j] - mx));
      for (std::size_t j = 0; j < v; ++j) {
        double pj = std::exp(static_cast<double>(in[i * v + j] - mx)) / sum;
        double d = pj - (static_cast<int>(j) == tv[i] ? 1.0 : 0.0);
        p.grad[i * v + j] += static_cast<S>(d * gscale);
      }
    }
  };
  return finish<S>(std::move(out), {logits.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const std::vector<S>& targets) {
  if (targets.size() != logits.numel())
    throw ShapeError("bce_with_logits: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.numel()) + " logits");
  for (S t : targets)
    if (t < S(0) || t > S(1)) throw ContractError("bce_with_logits: target outside [0, 1]");
  const std::size_t total = logits.numel();
  std::vector<S> tv = targets;
  auto out = make_node<S>({1});
  auto fwd = [tv, total](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    double s = 0;
    for (std::size_t i = 0; i < total; ++i) {
      double z = in[i], t = tv[i];
      s += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    }
    n.data[0] = static_cast<S>(s / static_cast<double>(total));
  };
  out->parents = {logits.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "bce_with_logits");
  auto bwd = [tv, total](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double gscale = static_cast<double>(n.grad[0]) / static_cast<double>(total);
    for (std::size_t i = 0; i < total; ++i) {
      double sg = stable_sigmoid(static_cast<double>(p.data[i]));
      p.grad[i] += static_cast<S>((sg - static_cast<double>(tv[i])) * gscale);
    }
  };
  return finish<S>(std::move(out), {logits.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> unfold_rows(const Tensor<S>& x, std::size_t k) {
  require_rank2(x, "unfold_rows");
  if (k == 0 || k % 2 == 0)
    throw ContractError("unfold_rows: kernel size must be odd, got " + std::to_string(k));
  const std::size_t m = x.rows(), c = x.cols();
  const std::size_t pad = k / 2;
  auto out = make_node<S>({m, c * k});
  auto fwd = [m, c, k, pad](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t o = 0; o < k; ++o) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + o) - static_cast<std::ptrdiff_t>(pad);
        for (std::size_t j = 0; j < c; ++j)
          n.data[i * c * k + o * c + j] =
              (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) ? S(0) : in[src * c + j];
      }
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  auto bwd = [m, c, k, pad](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t o = 0; o < k; ++o) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i + o) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
        for (std::size_t j = 0; j < c; ++j)
          p.grad[src * c + j] += n.grad[i * c * k + o * c + j];
      }
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

template <class S>
Tensor<S> adaptive_avg_pool_rows(const Tensor<S>& x, std::size_t out_rows) {
  require_rank2(x, "adaptive_avg_pool_rows");
  if (out_rows == 0) throw ContractError("adaptive_avg_pool_rows: out_rows must be positive");
  const std::size_t m = x.rows(), c = x.cols();
  auto window = [m, out_rows](std::size_t i) {
    const std::size_t lo = (i * m) / out_rows;
    const std::size_t hi = ((i + 1) * m + out_rows - 1) / out_rows;
    return std::pair<std::size_t, std::size_t>(lo, hi);
  };
  auto out = make_node<S>({out_rows, c});
  auto fwd = [c, out_rows, window](Node<S>& n) {
    const auto& in = n.parents[0]->data;
    for (std::size_t i = 0; i < out_rows; ++i) {
      auto [lo, hi] = window(i);
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0;
        for (std::size_t r = lo; r < hi; ++r) s += in[r * c + j];
        n.data[i * c + j] = static_cast<S>(s * inv);
      }
    }
  };
  out->parents = {x.impl()};
  fwd(*out);
  out->parents.clear();
  check_finite(out->data, "adaptive_avg_pool_rows");
  auto bwd = [c, out_rows, window](Node<S>& n) {
    auto& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < out_rows; ++i) {
      auto [lo, hi] = window(i);
      const S inv = S(1) / static_cast<S>(hi - lo);
      for (std::size_t j = 0; j < c; ++j)
        for (std::size_t r = lo; r < hi; ++r) p.grad[r * c + j] += n.grad[i * c + j] * inv;
    }
  };
  return finish<S>(std::move(out), {x.impl()}, fwd, bwd);
}

// ---------------------------------------------------------------------------

#define PROTLANG_INSTANTIATE(S)                                                              \
  template class Tensor<S>;                                                                  \
  template class Tape<S>;                                                                    \
  template void backward<S>(const Tensor<S>&);                                               \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> scale<S>(const Tensor<S>&, double);                                     \
  template Tensor<S> add_rowvec<S>(const Tensor<S>&, const Tensor<S>&);                      \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> transpose<S>(const Tensor<S>&);                                         \
  template Tensor<S> slice_rows<S>(const Tensor<S>&, std::size_t, std::size_t);              \
  template Tensor<S> slice_cols<S>(const Tensor<S>&, std::size_t, std::size_t);              \
  template Tensor<S> concat_rows<S>(const std::vector<Tensor<S>>&);                          \
  template Tensor<S> concat_cols<S>(const std::vector<Tensor<S>>&);                          \
  template Tensor<S> embed_rows<S>(const Tensor<S>&, std::span<const int>);                  \
  template Tensor<S> softmax_rows<S>(const Tensor<S>&);                                      \
  template Tensor<S> masked_softmax_rows<S>(const Tensor<S>&,                                \
                                            const std::vector<std::uint8_t>&);               \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);                                           \
  template Tensor<S> gelu<S>(const Tensor<S>&);                                              \
  template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);    \
  template Tensor<S> l2_normalize_rows<S>(const Tensor<S>&);                                 \
  template Tensor<S> weighted_sum_rows<S>(const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> row_max<S>(const Tensor<S>&);                                           \
  template Tensor<S> mean_rows<S>(const Tensor<S>&);                                         \
  template Tensor<S> sum_all<S>(const Tensor<S>&);                                           \
  template Tensor<S> mean_all<S>(const Tensor<S>&);                                          \
  template Tensor<S> cross_entropy_logits<S>(const Tensor<S>&, std::span<const int>, int);   \
  template Tensor<S> bce_with_logits<S>(const Tensor<S>&, const std::vector<S>&);            \
  template Tensor<S> unfold_rows<S>(const Tensor<S>&, std::size_t);                          \
  template Tensor<S> adaptive_avg_pool_rows<S>(const Tensor<S>&, std::size_t);

PROTLANG_INSTANTIATE(float)
PROTLANG_INSTANTIATE(double)

#undef PROTLANG_INSTANTIATE

}  // namespace protlang
