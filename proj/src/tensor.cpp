#include "pcet/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pcet/errors.hpp"

namespace pcet::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---- Tensor ------------------------------------------------------------

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("Tensor::constant: shape " + ad::to_string(shape) + " needs " +
                     std::to_string(ad::numel(shape)) + " values, got " + std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = ad::numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows(): expected rank-2 tensor, got " + to_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols(): expected rank-2 tensor, got " + to_string(shape()));
  return node_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor of shape " + to_string(shape()) + " is not scalar");
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return std::vector<double>(node_->value.size(), 0.0);
}

// ---- Graph -------------------------------------------------------------

Tensor Graph::param(Parameter& p) {
  if (p.frozen) return Tensor::constant(p.shape, p.value);
  auto n = std::make_shared<Node>();
  n->shape = p.shape;
  n->value = p.value;
  n->graph = this;
  n->param = &p;
  tape_.push_back(n);
  return Tensor(std::move(n));
}

Tensor Graph::variable(Shape shape, std::vector<double> values) {
  auto t = Tensor::constant(std::move(shape), std::move(values));
  t.node()->graph = this;
  tape_.push_back(t.node());
  return t;
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.graph() != this) {
    throw std::invalid_argument("backward: loss is not recorded in this graph");
  }
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  if (backward_done_) throw std::logic_error("backward: graph already differentiated");
  backward_done_ = true;

  loss.node()->grad_buffer()[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node& n = **it;
    if (n.param != nullptr) {
      auto& pg = n.param->grad;
      if (pg.size() != n.param->value.size()) pg.assign(n.param->value.size(), 0.0);
      if (!n.grad.empty())
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
      continue;
    }
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
}

// ---- recording ---------------------------------------------------------

Tensor record(const char* op, Shape shape, std::vector<double> value,
              std::span<const Tensor> inputs, std::function<void(Node&)> backward) {
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in result");
  }
  Graph* g = nullptr;
  for (const auto& in : inputs) {
    if (!in.recorded()) continue;
    if (g != nullptr && g != in.graph()) {
      throw std::invalid_argument(std::string(op) + ": inputs belong to different graphs");
    }
    g = in.graph();
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g != nullptr) {
    n->graph = g;
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
    g->tape_.push_back(n);
  }
  return Tensor(std::move(n));
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + to_string(t.shape()));
  }
}

// Convenience accessors inside backward closures.
inline Node& parent(Node& out, std::size_t i) { return *out.parents[i]; }
inline bool wants(const Node& n) { return n.recorded(); }

}  // namespace

// ---- elementwise -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return record("add", a.shape(), std::move(out), {a, b}, [](Node& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(o, k);
      if (!wants(p)) continue;
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return record("sub", a.shape(), std::move(out), {a, b}, [](Node& o) {
    if (Node& p = parent(o, 0); wants(p)) {
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (Node& p = parent(o, 1); wants(p)) {
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return record("mul", a.shape(), std::move(out), {a, b}, [](Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    if (wants(pa)) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb.value[i];
    }
    if (wants(pb)) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  return record("scale", a.shape(), std::move(out), {a}, [s](Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o.grad[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  require_rank2("add_row", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (b.numel() != n || b.rank() > 2 || (b.rank() == 2 && b.dim(0) != 1)) {
    shape_error("add_row", a.shape(), b.shape());
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return record("add_row", a.shape(), std::move(out), {a, b}, [m, n](Node& o) {
    if (Node& p = parent(o, 0); wants(p)) {
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (Node& p = parent(o, 1); wants(p)) {
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
    }
  });
}

Tensor mul_col(const Tensor& a, const Tensor& w) {
  require_rank2("mul_col", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (w.numel() != m) shape_error("mul_col", a.shape(), w.shape());
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto wv = w.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= wv[i];
  return record("mul_col", a.shape(), std::move(out), {a, w}, [m, n](Node& o) {
    Node& pa = parent(o, 0);
    Node& pw = parent(o, 1);
    if (wants(pa)) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[i * n + j] * pw.value[i];
    }
    if (wants(pw)) {
      auto& g = pw.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += o.grad[i * n + j] * pa.value[i * n + j];
        g[i] += acc;
      }
    }
  });
}

// ---- linear algebra ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) shape_error("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return record("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& o) {
    Node& pa = parent(o, 0);
    Node& pb = parent(o, 1);
    const double* G = o.grad.data();
    if (wants(pa)) {
      auto& ga = pa.grad_buffer();
      const double* B = pb.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (wants(pb)) {
      auto& gb = pb.grad_buffer();
      const double* A = pa.value.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return record("transpose", {n, m}, std::move(out), {a}, [m, n](Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[j * m + i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis > 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank2("concat", p);
  const std::size_t fixed = parts[0].dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != fixed) shape_error("concat", parts[0].shape(), p.shape());
    total += p.dim(axis);
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto v = p.values();
    const std::size_t w = p.dim(axis);
    if (axis == 0) {
      std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(offset * cols));
    } else {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * cols + offset + j] = v[i * w + j];
    }
    widths.push_back(w);
    offset += w;
  }

  return record("concat", {rows, cols}, std::move(out), parts,
                [axis, rows, cols, widths](Node& o) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < o.parents.size(); ++k) {
                    Node& p = *o.parents[k];
                    const std::size_t w = widths[k];
                    if (wants(p)) {
                      auto& gp = p.grad_buffer();
                      if (axis == 0) {
                        for (std::size_t i = 0; i < w * cols; ++i) gp[i] += o.grad[off * cols + i];
                      } else {
                        for (std::size_t i = 0; i < rows; ++i)
                          for (std::size_t j = 0; j < w; ++j)
                            gp[i * w + j] += o.grad[i * cols + off + j];
                      }
                    }
                    off += w;
                  }
                });
}


Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  std::vector<double> out(a.values().begin(), a.values().end());
  return record("reshape", std::move(shape), std::move(out), {a}, [](Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx) {
  require_rank2("gather_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(idx.size() * n);
  const auto av = a.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[r]) + " >= " + std::to_string(m));
    }
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return record("gather_rows", {idx.size(), n}, std::move(out), {a},
                [rows = std::move(rows), n](Node& o) {
                  auto& g = parent(o, 0).grad_buffer();
                  for (std::size_t r = 0; r < rows.size(); ++r) {
                    double* dst = g.data() + rows[r] * n;
                    const double* src = o.grad.data() + r * n;
                    for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                  }
                });
}

Tensor broadcast_rows(const Tensor& row, std::size_t m) {
  if (row.rank() > 2 || (row.rank() == 2 && row.dim(0) != 1) || row.rank() == 0) {
    throw ShapeError("broadcast_rows: expected a single row, got " + to_string(row.shape()));
  }
  const std::size_t n = row.numel();
  std::vector<double> out(m * n);
  const auto rv = row.values();
  for (std::size_t i = 0; i < m; ++i) std::copy(rv.begin(), rv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * n));
  return record("broadcast_rows", {m, n}, std::move(out), {row}, [m, n](Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return record("relu", a.shape(), std::move(out), {a}, [](Node& o) {
    Node& p = parent(o, 0);
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > 0.0) g[i] += o.grad[i];
  });
}

Tensor row_l2_normalize(const Tensor& a, double eps) {
  require_rank2("row_l2_normalize", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n, 0.0);
  std::vector<double> norms(m);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += av[i * n + j] * av[i * n + j];
    norms[i] = std::sqrt(ss);
    if (norms[i] < eps) continue;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] / norms[i];
  }
  return record("row_l2_normalize", a.shape(), std::move(out), {a},
                [m, n, eps, norms = std::move(norms)](Node& o) {
                  auto& g = parent(o, 0).grad_buffer();
                  for (std::size_t i = 0; i < m; ++i) {
                    if (norms[i] < eps) continue;
                    const double* y = o.value.data() + i * n;
                    const double* dy = o.grad.data() + i * n;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
                    for (std::size_t j = 0; j < n; ++j) g[i * n + j] += (dy[j] - y[j] * dot) / norms[i];
                  }
                });
}

Tensor row_softmax(const Tensor& a) {
  require_rank2("row_softmax", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto av = a.values();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, av[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(av[i * n + j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return record("row_softmax", a.shape(), std::move(out), {a}, [m, n](Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = o.value.data() + i * n;
      const double* dy = o.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor max_pool_rows(const Tensor& a, std::size_t group) {
  require_rank2("max_pool_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (group == 0 || m % group != 0) {
    throw ShapeError("max_pool_rows: " + std::to_string(m) + " rows not divisible into groups of " +
                     std::to_string(group));
  }
  const std::size_t groups = m / group;
  std::vector<double> out(groups * n);
  std::vector<std::size_t> arg(groups * n);
  const auto av = a.values();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = gi * group;
      for (std::size_t r = gi * group + 1; r < (gi + 1) * group; ++r)
        if (av[r * n + j] > av[best * n + j]) best = r;
      out[gi * n + j] = av[best * n + j];
      arg[gi * n + j] = best;
    }
  }
  return record("max_pool_rows", {groups, n}, std::move(out), {a},
                [n, arg = std::move(arg)](Node& o) {
                  auto& g = parent(o, 0).grad_buffer();
                  for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k] * n + k % n] += o.grad[k];
                });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return record("sum", {}, {s}, {a}, [](Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (double& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.values()) s += v;
  return record("mean", {}, {s * inv}, {a}, [inv](Node& o) {
    auto& g = parent(o, 0).grad_buffer();
    for (double& v : g) v += o.grad[0] * inv;
  });
}

Tensor detach(const Tensor& a) {
  return Tensor::constant(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

// ---- losses ------------------------------------------------------------

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.numel() != targets.numel()) shape_error("bce_with_logits", logits.shape(), targets.shape());
  if (logits.numel() == 0) throw ShapeError("bce_with_logits: empty input");
  const auto x = logits.values(), y = targets.values();
  const double inv = 1.0 / static_cast<double>(x.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    loss += std::max(x[i], 0.0) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
  return record("bce_with_logits", {}, {loss * inv}, {logits, targets}, [inv](Node& o) {
    Node& px = parent(o, 0);
    Node& py = parent(o, 1);
    const double up = o.grad[0] * inv;
    if (wants(px)) {
      auto& g = px.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-px.value[i]));
        g[i] += up * (sig - py.value[i]);
      }
    }
    if (wants(py)) {
      auto& g = py.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= up * px.value[i];
    }
  });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) shape_error("mse", pred.shape(), target.shape());
  if (pred.numel() == 0) throw ShapeError("mse: empty input");
  const auto p = pred.values(), t = target.values();
  const double inv = 1.0 / static_cast<double>(p.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) loss += (p[i] - t[i]) * (p[i] - t[i]);
  return record("mse", {}, {loss * inv}, {pred, target}, [inv](Node& o) {
    Node& pp = parent(o, 0);
    Node& pt = parent(o, 1);
    const double up = 2.0 * o.grad[0] * inv;
    for (std::size_t i = 0; i < pp.value.size(); ++i) {
      const double d = up * (pp.value[i] - pt.value[i]);
      if (wants(pp)) pp.grad_buffer()[i] += d;
      if (wants(pt)) pt.grad_buffer()[i] -= d;
    }
  });
}

Tensor kl_rows(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape()) shape_error("kl_rows", p.shape(), q.shape());
  const std::size_t n = p.rank() == 2 ? p.cols() : p.numel();
  const std::size_t m = p.rank() == 2 ? p.rows() : 1;
  if (m == 0 || n == 0) throw ShapeError("kl_rows: empty input");
  for (const Tensor* t : {&p, &q}) {
    const auto v = t->values();
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (v[i * n + j] < 0.0) throw std::invalid_argument("kl_rows: negative probability");
        s += v[i * n + j];
      }
      if (std::abs(s - 1.0) > 1e-6) {
        throw std::invalid_argument("kl_rows: row " + std::to_string(i) + " sums to " + std::to_string(s));
      }
    }
  }
  const auto pv = p.values(), qv = q.values();
  const double inv = 1.0 / static_cast<double>(m);
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i)
    loss += pv[i] * (std::log(std::max(pv[i], kLogClamp)) - std::log(std::max(qv[i], kLogClamp)));
  return record("kl_rows", {}, {loss * inv}, {p, q}, [inv](Node& o) {
    Node& pp = parent(o, 0);
    Node& pq = parent(o, 1);
    const double up = o.grad[0] * inv;
    if (wants(pp)) {
      auto& g = pp.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double pi = pp.value[i];
        const double lp = std::log(std::max(pi, kLogClamp)) + (pi > kLogClamp ? 1.0 : 0.0);
        g[i] += up * (lp - std::log(std::max(pq.value[i], kLogClamp)));
      }
    }
    if (wants(pq)) {
      auto& g = pq.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (pq.value[i] > kLogClamp) g[i] -= up * pp.value[i] / pq.value[i];
    }
  });
}

// ---- Adam --------------------------------------------------------------

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.frozen || p.grad.size() != p.value.size()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

// ---- checkpoints -------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'C', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError(path_ + ": truncated checkpoint");
  }
  const std::string& data_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out += ckpt.metadata;
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (numel(t.shape) != t.values.size()) throw ShapeError("save_checkpoint: inconsistent tensor " + t.name);
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, d);
    for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("checkpoint not found: " + path);
  const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(data, path);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw FormatError(path + ": bad magic");
  if (const auto v = r.uint(4); v != kVersion) throw FormatError(path + ": unsupported version " + std::to_string(v));
  Checkpoint ckpt;
  ckpt.metadata = r.bytes(r.uint(4));
  const auto count = r.uint(4);
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.bytes(r.uint(4));
    const auto rank = r.uint(4);
    for (std::uint64_t d = 0; d < rank; ++d) t.shape.push_back(r.uint(8));
    const std::size_t n = numel(t.shape);
    t.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) t.values.push_back(std::bit_cast<double>(r.uint(8)));
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError(path + ": trailing bytes after last tensor");
  return ckpt;
}

Checkpoint snapshot(std::span<Parameter* const> params, std::string metadata) {
  Checkpoint ckpt;
  ckpt.metadata = std::move(metadata);
  for (const Parameter* p : params) ckpt.tensors.push_back({p->name, p->shape, p->value});
  return ckpt;
}

void restore(std::span<Parameter* const> params, const Checkpoint& ckpt, bool require_all) {
  for (Parameter* p : params) {
    const NamedTensor* t = ckpt.find(p->name);
    if (t == nullptr) {
      if (require_all) throw FormatError("checkpoint is missing tensor '" + p->name + "'");
      continue;
    }
    if (t->shape != p->shape) {
      throw FormatError("checkpoint tensor '" + p->name + "' has shape " + to_string(t->shape) +
                        ", expected " + to_string(p->shape));
    }
    p->value = t->values;
  }
}

}  // namespace pcet::ad
