#include "latinv/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_set>

#include "latinv/errors.hpp"

namespace latinv::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

thread_local bool g_grad_enabled = true;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw DimensionError(std::string(op) + ": " + detail);
}

void require_same(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Var& a, int rank, const char* op) {
  require(a.rank() == rank, op, "expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
}

// Builds an output node. Parents and the backward closure are kept only when
// recording is on and some parent needs a gradient.
Var make(Shape shape, std::vector<double> value, std::vector<Var> parents,
         std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) track = track || p.requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

double Var::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Var::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Var constant(Shape shape, std::vector<double> value) {
  require(numel(shape) == value.size(), "constant", "value count does not match " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return Var(std::move(node));
}

Var zeros(Shape shape) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Var full(Shape shape, double fill) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, fill));
}

Var parameter(Shape shape, std::vector<double> value) {
  Var v = constant(std::move(shape), std::move(value));
  v.set_requires_grad(true);
  return v;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Var& root) {
  if (root.size() != 1) throw DimensionError("backward() needs a scalar root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
  // Interior grads are scratch; release them so repeated backward passes
  // over shared subgraphs do not double count.
  for (Node* node : order) {
    if (node->backward_fn) std::vector<double>().swap(node->grad);
  }
}

// --- elementwise --------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  std::vector<double> out(a.size());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& p = parent(self, k);
      if (!p.requires_grad) continue;
      auto& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  std::vector<double> out(a.size());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  std::vector<double> out(a.size());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same(a, b, "div");
  std::vector<double> out(a.size());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  std::vector<double> out(a.size());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make(a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Var add_scalar(const Var& a, double offset) {
  std::vector<double> out(a.size());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + offset;
  return make(a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var mul_scalar(const Var& x, const Var& s) {
  require(s.size() == 1, "mul_scalar", "scale must hold one element");
  const double k = s.value()[0];
  std::vector<double> out(x.size());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * k;
  return make(x.shape(), std::move(out), {x, s}, [](Node& self) {
    Node& px = parent(self, 0);
    Node& ps = parent(self, 1);
    const double k = ps.value[0];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k;
    }
    if (ps.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.value[i];
      ps.ensure_grad()[0] += acc;
    }
  });
}

Var add_n(std::span<const Var> terms) {
  require(!terms.empty(), "add_n", "no terms");
  std::vector<double> out = terms[0].value();
  for (std::size_t t = 1; t < terms.size(); ++t) {
    require_same(terms[0], terms[t], "add_n");
    const auto& v = terms[t].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  return make(terms[0].shape(), std::move(out), std::vector<Var>(terms.begin(), terms.end()), [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

namespace {

// Elementwise map with derivative expressed through input and output values.
template <typename Fwd, typename Deriv>
Var pointwise(const Var& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.size());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    Node& p = parent(self, 0);
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

}  // namespace

Var square(const Var& a) {
  return pointwise(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(const Var& a) {
  return pointwise(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var tanh(const Var& a) {
  return pointwise(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(const Var& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return pointwise(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Var relu(const Var& a) {
  return pointwise(a, [](double x) { return x > 0.0 ? x : 0.0; },
                   [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return pointwise(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                   [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

// --- reductions ---------------------------------------------------------------

Var sum(const Var& a) {
  const auto& av = a.value();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  return make({1}, {total}, {a}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (double& x : g) x += self.grad[0];
  });
}

Var mean(const Var& a) {
  require(a.size() > 0, "mean", "empty tensor");
  const auto& av = a.value();
  const double n = static_cast<double>(av.size());
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  return make({1}, {total / n}, {a}, [n](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (double& x : g) x += self.grad[0] / n;
  });
}

Var row_sum(const Var& a) {
  require_rank(a, 2, "row_sum");
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(rows, 0.0);
  const auto& av = a.value();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[i] += av[static_cast<std::size_t>(i) * cols + j];
  return make({rows}, std::move(out), {a}, [rows, cols](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) g[static_cast<std::size_t>(i) * cols + j] += self.grad[i];
  });
}

// --- matrix ops ---------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  require(b.dim(0) == k, "matmul", "inner dimensions " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  if (n > 0 && m > 0) {
    MapMatrix(out.data(), n, m).noalias() =
        ConstMapMatrix(a.value().data(), n, k) * ConstMapMatrix(b.value().data(), k, m);
  }
  return make({n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    ConstMapMatrix g(self.grad.data(), n, m);
    if (pa.requires_grad) {
      MapMatrix(pa.ensure_grad().data(), n, k).noalias() += g * ConstMapMatrix(pb.value.data(), k, m).transpose();
    }
    if (pb.requires_grad) {
      MapMatrix(pb.ensure_grad().data(), k, m).noalias() += ConstMapMatrix(pa.value.data(), n, k).transpose() * g;
    }
  });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<double> out(a.size());
  MapMatrix(out.data(), c, r) = ConstMapMatrix(a.value().data(), r, c).transpose();
  return make({c, r}, std::move(out), {a}, [r, c](Node& self) {
    MapMatrix(parent(self, 0).ensure_grad().data(), r, c) += ConstMapMatrix(self.grad.data(), c, r).transpose();
  });
}

Var add_row_bias(const Var& x, const Var& b) {
  require_rank(x, 2, "add_row_bias");
  const int n = x.dim(0), c = x.dim(1);
  require(b.size() == static_cast<std::size_t>(c), "add_row_bias",
          "bias " + shape_str(b.shape()) + " vs " + shape_str(x.shape()));
  std::vector<double> out = x.value();
  const auto& bv = b.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] += bv[j];
  return make(x.shape(), std::move(out), {x, b}, [n, c](Node& self) {
    Node& px = parent(self, 0);
    Node& pb = parent(self, 1);
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) g[j] += self.grad[static_cast<std::size_t>(i) * c + j];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b ? add_row_bias(y, b) : y;
}

Var scale_rows(const Var& x, const Var& s) {
  require_rank(x, 2, "scale_rows");
  const int n = x.dim(0), c = x.dim(1);
  require(s.size() == static_cast<std::size_t>(n), "scale_rows", "scale count must equal row count");
  std::vector<double> out(x.size());
  const auto& xv = x.value();
  const auto& sv = s.value();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      const auto idx = static_cast<std::size_t>(i) * c + j;
      out[idx] = xv[idx] * sv[i];
    }
  return make(x.shape(), std::move(out), {x, s}, [n, c](Node& self) {
    Node& px = parent(self, 0);
    Node& ps = parent(self, 1);
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          const auto idx = static_cast<std::size_t>(i) * c + j;
          g[idx] += self.grad[idx] * ps.value[i];
        }
    }
    if (ps.requires_grad) {
      auto& g = ps.ensure_grad();
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) {
          const auto idx = static_cast<std::size_t>(i) * c + j;
          acc += self.grad[idx] * px.value[idx];
        }
        g[i] += acc;
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const int n = x.dim(0), c = x.dim(1);
  require(gamma.size() == static_cast<std::size_t>(c) && beta.size() == static_cast<std::size_t>(c),
          "layer_norm", "affine parameters must match channel width " + std::to_string(c));
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(n);
  std::vector<double> out(x.size());
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<std::size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      const auto idx = static_cast<std::size_t>(i) * c + j;
      xhat[idx] = (row[j] - mu) * inv_std[i];
      out[idx] = xhat[idx] * gv[j] + bv[j];
    }
  }
  return make(x.shape(), std::move(out), {x, gamma, beta},
              [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                Node& px = parent(self, 0);
                Node& pg = parent(self, 1);
                Node& pb = parent(self, 2);
                if (pg.requires_grad || pb.requires_grad) {
                  auto& gg = pg.ensure_grad();
                  auto& gb = pb.ensure_grad();
                  for (int i = 0; i < n; ++i)
                    for (int j = 0; j < c; ++j) {
                      const auto idx = static_cast<std::size_t>(i) * c + j;
                      if (pg.requires_grad) gg[j] += self.grad[idx] * xhat[idx];
                      if (pb.requires_grad) gb[j] += self.grad[idx];
                    }
                }
                if (px.requires_grad) {
                  auto& gx = px.ensure_grad();
                  for (int i = 0; i < n; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < c; ++j) {
                      const auto idx = static_cast<std::size_t>(i) * c + j;
                      const double dxh = self.grad[idx] * pg.value[j];
                      m1 += dxh;
                      m2 += dxh * xhat[idx];
                    }
                    m1 /= c;
                    m2 /= c;
                    for (int j = 0; j < c; ++j) {
                      const auto idx = static_cast<std::size_t>(i) * c + j;
                      const double dxh = self.grad[idx] * pg.value[j];
                      gx[idx] += inv_std[i] * (dxh - m1 - xhat[idx] * m2);
                    }
                  }
                }
              });
}

Var softmax_rows(const Var& x) {
  require_rank(x, 2, "softmax_rows");
  const int n = x.dim(0), c = x.dim(1);
  std::vector<double> out(x.size());
  const auto& xv = x.value();
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<std::size_t>(i) * c;
    double* dst = out.data() + static_cast<std::size_t>(i) * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (int j = 0; j < c; ++j) total += (dst[j] = std::exp(row[j] - mx));
    for (int j = 0; j < c; ++j) dst[j] /= total;
  }
  return make(x.shape(), std::move(out), {x}, [n, c](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int i = 0; i < n; ++i) {
      const auto base = static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += self.grad[base + j] * self.value[base + j];
      for (int j = 0; j < c; ++j) g[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
    }
  });
}

Var segment_sum(const Var& x, const std::vector<int>& segment, int segments) {
  require_rank(x, 2, "segment_sum");
  const int n = x.dim(0), c = x.dim(1);
  require(segment.size() == static_cast<std::size_t>(n), "segment_sum", "one segment id per row required");
  std::vector<double> out(static_cast<std::size_t>(segments) * c, 0.0);
  const auto& xv = x.value();
  for (int i = 0; i < n; ++i) {
    const int s = segment[i];
    require(s >= 0 && s < segments, "segment_sum", "segment id out of range");
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(s) * c + j] += xv[static_cast<std::size_t>(i) * c + j];
  }
  return make({segments, c}, std::move(out), {x}, [segment, n, c](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j)
        g[static_cast<std::size_t>(i) * c + j] += self.grad[static_cast<std::size_t>(segment[i]) * c + j];
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no parts");
  const int c = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    require(p.dim(1) == c, "concat_rows", "column count mismatch");
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows) * c);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  return make({rows, c}, std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const auto n = p->value.size();
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no parts");
  const int rows = parts[0].dim(0);
  int cols = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.dim(0) == rows, "concat_cols", "row count mismatch");
    widths.push_back(p.dim(1));
    cols += p.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  int offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < widths[k]; ++j)
        out[static_cast<std::size_t>(i) * cols + offset + j] = v[static_cast<std::size_t>(i) * widths[k] + j];
    offset += widths[k];
  }
  return make({rows, cols}, std::move(out), std::vector<Var>(parts.begin(), parts.end()),
              [rows, cols, widths](Node& self) {
                int offset = 0;
                for (std::size_t k = 0; k < self.parents.size(); ++k) {
                  auto& p = self.parents[k];
                  if (p->requires_grad) {
                    auto& g = p->ensure_grad();
                    for (int i = 0; i < rows; ++i)
                      for (int j = 0; j < widths[k]; ++j)
                        g[static_cast<std::size_t>(i) * widths[k] + j] +=
                            self.grad[static_cast<std::size_t>(i) * cols + offset + j];
                  }
                  offset += widths[k];
                }
              });
}

// --- indexing -----------------------------------------------------------------

Var gather(const Var& x, std::vector<int> index, Shape out_shape) {
  require(numel(out_shape) == index.size(), "gather", "index count does not match " + shape_str(out_shape));
  const auto& xv = x.value();
  const int limit = static_cast<int>(xv.size());
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const int src = index[i];
    require(src < limit, "gather", "index out of range");
    out[i] = src < 0 ? 0.0 : xv[src];
  }
  return make(std::move(out_shape), std::move(out), {x}, [index = std::move(index)](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) g[index[i]] += self.grad[i];
  });
}

Var gather_rows(const Var& x, const std::vector<int>& rows) {
  require_rank(x, 2, "gather_rows");
  const int c = x.dim(1);
  std::vector<int> index(rows.size() * static_cast<std::size_t>(c));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < x.dim(0), "gather_rows", "row out of range");
    for (int j = 0; j < c; ++j) index[r * c + j] = rows[r] < 0 ? -1 : rows[r] * c + j;
  }
  return gather(x, std::move(index), {static_cast<int>(rows.size()), c});
}

Var slice_cols(const Var& x, int begin, int end) {
  require_rank(x, 2, "slice_cols");
  const int n = x.dim(0), c = x.dim(1);
  require(0 <= begin && begin <= end && end <= c, "slice_cols", "column range out of bounds");
  const int w = end - begin;
  std::vector<int> index(static_cast<std::size_t>(n) * w);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) index[static_cast<std::size_t>(i) * w + j] = i * c + begin + j;
  return gather(x, std::move(index), {n, w});
}

Var reshape(const Var& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  return make(std::move(shape), x.value(), {x}, [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// --- image ops ----------------------------------------------------------------

namespace {

void im2col(const double* x, int channels, int height, int width, int k, double* cols) {
  const int pad = k / 2;
  const int hw = height * width;
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        double* dst = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * hw;
        const double* src = x + static_cast<std::size_t>(c) * hw;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ki - pad;
          for (int xx = 0; xx < width; ++xx) {
            const int sx = xx + kj - pad;
            dst[y * width + xx] = (sy >= 0 && sy < height && sx >= 0 && sx < width) ? src[sy * width + sx] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, int channels, int height, int width, int k, double* x) {
  const int pad = k / 2;
  const int hw = height * width;
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const double* src = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * hw;
        double* dst = x + static_cast<std::size_t>(c) * hw;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ki - pad;
          if (sy < 0 || sy >= height) continue;
          for (int xx = 0; xx < width; ++xx) {
            const int sx = xx + kj - pad;
            if (sx >= 0 && sx < width) dst[sy * width + sx] += src[y * width + xx];
          }
        }
      }
}

struct Lerp1d {
  std::vector<int> lo, hi;
  std::vector<double> wlo, whi;
};

Lerp1d upsample_table(int n) {
  Lerp1d t;
  const int m = 2 * n;
  t.lo.resize(m);
  t.hi.resize(m);
  t.wlo.resize(m);
  t.whi.resize(m);
  for (int o = 0; o < m; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    const int i1 = std::min(i0 + 1, n - 1);
    const double frac = src - i0;
    t.lo[o] = i0;
    t.hi[o] = i1;
    t.wlo[o] = 1.0 - frac;
    t.whi[o] = frac;
  }
  return t;
}

}  // namespace

Var conv2d(const Var& x, const Var& w) {
  require_rank(x, 3, "conv2d");
  require(w.rank() == 4, "conv2d", "weight must be [O, C, k, k]");
  const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int o = w.dim(0), k = w.dim(2);
  require(w.dim(1) == c, "conv2d", "input channels " + std::to_string(c) + " vs weight " + shape_str(w.shape()));
  require(w.dim(3) == k && k % 2 == 1, "conv2d", "kernel must be square and odd");
  const int hw = h * wd;
  const int ckk = c * k * k;
  std::vector<double> cols(static_cast<std::size_t>(ckk) * hw);
  im2col(x.value().data(), c, h, wd, k, cols.data());
  std::vector<double> out(static_cast<std::size_t>(o) * hw);
  MapMatrix(out.data(), o, hw).noalias() =
      ConstMapMatrix(w.value().data(), o, ckk) * ConstMapMatrix(cols.data(), ckk, hw);
  return make({o, h, wd}, std::move(out), {x, w}, [c, h, wd, o, k, hw, ckk, cols = std::move(cols)](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    ConstMapMatrix g(self.grad.data(), o, hw);
    if (pw.requires_grad) {
      MapMatrix(pw.ensure_grad().data(), o, ckk).noalias() += g * ConstMapMatrix(cols.data(), ckk, hw).transpose();
    }
    if (px.requires_grad) {
      std::vector<double> dcols(static_cast<std::size_t>(ckk) * hw);
      MapMatrix(dcols.data(), ckk, hw).noalias() = ConstMapMatrix(pw.value.data(), o, ckk).transpose() * g;
      col2im(dcols.data(), c, h, wd, k, px.ensure_grad().data());
    }
  });
}

Var modulate_weight(const Var& w, const Var& style, bool demodulate, double gain) {
  require(w.rank() >= 2, "modulate_weight", "weight must be at least [O, I]");
  const int o = w.dim(0), in = w.dim(1);
  require(style.size() == static_cast<std::size_t>(in), "modulate_weight",
          "style width " + std::to_string(style.size()) + " vs input channels " + std::to_string(in));
  const std::size_t per_out = w.size() / static_cast<std::size_t>(o);
  const std::size_t per_in = per_out / static_cast<std::size_t>(in);
  const auto& wv = w.value();
  const auto& sv = style.value();
  std::vector<double> mod(w.size());
  for (int a = 0; a < o; ++a)
    for (int i = 0; i < in; ++i)
      for (std::size_t r = 0; r < per_in; ++r) {
        const auto idx = a * per_out + i * per_in + r;
        mod[idx] = wv[idx] * gain * sv[i];
      }
  std::vector<double> demod(o, 1.0);
  std::vector<double> out = mod;
  if (demodulate) {
    for (int a = 0; a < o; ++a) {
      double ss = 0.0;
      for (std::size_t r = 0; r < per_out; ++r) ss += mod[a * per_out + r] * mod[a * per_out + r];
      demod[a] = 1.0 / std::sqrt(ss + 1e-8);
      for (std::size_t r = 0; r < per_out; ++r) out[a * per_out + r] *= demod[a];
    }
  }
  return make(w.shape(), std::move(out), {w, style},
              [o, in, per_out, per_in, gain, demodulate, mod = std::move(mod), demod = std::move(demod)](Node& self) {
                Node& pw = parent(self, 0);
                Node& ps = parent(self, 1);
                // Gradient w.r.t. the modulated (pre-demodulation) weight.
                std::vector<double> dmod(self.grad.size());
                for (int a = 0; a < o; ++a) {
                  const double d = demod[a];
                  double dot = 0.0;
                  if (demodulate)
                    for (std::size_t r = 0; r < per_out; ++r) dot += self.grad[a * per_out + r] * mod[a * per_out + r];
                  for (std::size_t r = 0; r < per_out; ++r) {
                    const auto idx = a * per_out + r;
                    dmod[idx] = demodulate ? self.grad[idx] * d - mod[idx] * d * d * d * dot : self.grad[idx];
                  }
                }
                if (pw.requires_grad) {
                  auto& g = pw.ensure_grad();
                  for (int a = 0; a < o; ++a)
                    for (int i = 0; i < in; ++i)
                      for (std::size_t r = 0; r < per_in; ++r) {
                        const auto idx = a * per_out + i * per_in + r;
                        g[idx] += dmod[idx] * gain * ps.value[i];
                      }
                }
                if (ps.requires_grad) {
                  auto& g = ps.ensure_grad();
                  for (int a = 0; a < o; ++a)
                    for (int i = 0; i < in; ++i)
                      for (std::size_t r = 0; r < per_in; ++r) {
                        const auto idx = a * per_out + i * per_in + r;
                        g[i] += dmod[idx] * gain * pw.value[idx];
                      }
                }
              });
}

Var add_channel_bias(const Var& x, const Var& b) {
  require_rank(x, 3, "add_channel_bias");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  require(b.size() == static_cast<std::size_t>(c), "add_channel_bias", "bias must have one entry per channel");
  std::vector<double> out = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] += b.value()[ch];
  return make(x.shape(), std::move(out), {x, b}, [c, hw](Node& self) {
    Node& px = parent(self, 0);
    Node& pb = parent(self, 1);
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) g[ch] += self.grad[ch * hw + p];
    }
  });
}

Var upsample_bilinear2x(const Var& x) {
  require_rank(x, 3, "upsample_bilinear2x");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = 2 * h, ow = 2 * w;
  auto ty = upsample_table(h);
  auto tx = upsample_table(w);
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + static_cast<std::size_t>(ch) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int yo = 0; yo < oh; ++yo)
      for (int xo = 0; xo < ow; ++xo) {
        const double top = tx.wlo[xo] * src[ty.lo[yo] * w + tx.lo[xo]] + tx.whi[xo] * src[ty.lo[yo] * w + tx.hi[xo]];
        const double bot = tx.wlo[xo] * src[ty.hi[yo] * w + tx.lo[xo]] + tx.whi[xo] * src[ty.hi[yo] * w + tx.hi[xo]];
        dst[yo * ow + xo] = ty.wlo[yo] * top + ty.whi[yo] * bot;
      }
  }
  return make({c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow, ty, tx](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const double* go = self.grad.data() + static_cast<std::size_t>(ch) * oh * ow;
      double* gi = g.data() + static_cast<std::size_t>(ch) * h * w;
      for (int yo = 0; yo < oh; ++yo)
        for (int xo = 0; xo < ow; ++xo) {
          const double v = go[yo * ow + xo];
          gi[ty.lo[yo] * w + tx.lo[xo]] += v * ty.wlo[yo] * tx.wlo[xo];
          gi[ty.lo[yo] * w + tx.hi[xo]] += v * ty.wlo[yo] * tx.whi[xo];
          gi[ty.hi[yo] * w + tx.lo[xo]] += v * ty.whi[yo] * tx.wlo[xo];
          gi[ty.hi[yo] * w + tx.hi[xo]] += v * ty.whi[yo] * tx.whi[xo];
        }
    }
  });
}

Var avg_pool2x(const Var& x) {
  require_rank(x, 3, "avg_pool2x");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2x", "spatial size must be even");
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double* s = xv.data() + static_cast<std::size_t>(ch) * h * w;
        out[(static_cast<std::size_t>(ch) * oh + y) * ow + xx] =
            0.25 * (s[2 * y * w + 2 * xx] + s[2 * y * w + 2 * xx + 1] + s[(2 * y + 1) * w + 2 * xx] +
                    s[(2 * y + 1) * w + 2 * xx + 1]);
      }
  return make({c, oh, ow}, std::move(out), {x}, [c, h, w, oh, ow](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * self.grad[(static_cast<std::size_t>(ch) * oh + y) * ow + xx];
          double* s = g.data() + static_cast<std::size_t>(ch) * h * w;
          s[2 * y * w + 2 * xx] += v;
          s[2 * y * w + 2 * xx + 1] += v;
          s[(2 * y + 1) * w + 2 * xx] += v;
          s[(2 * y + 1) * w + 2 * xx + 1] += v;
        }
  });
}

Var spatial_mean(const Var& x) {
  require_rank(x, 3, "spatial_mean");
  const int c = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) out[ch] += x.value()[ch * hw + p];
    out[ch] /= static_cast<double>(hw);
  }
  return make({c}, std::move(out), {x}, [c, hw](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < hw; ++p) g[ch * hw + p] += self.grad[ch] / static_cast<double>(hw);
  });
}

Var chw_to_tokens(const Var& x) {
  require_rank(x, 3, "chw_to_tokens");
  const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<int> index(static_cast<std::size_t>(c) * hw);
  for (int p = 0; p < hw; ++p)
    for (int ch = 0; ch < c; ++ch) index[static_cast<std::size_t>(p) * c + ch] = ch * hw + p;
  return gather(x, std::move(index), {hw, c});
}

Var tokens_to_chw(const Var& x, int height, int width) {
  require_rank(x, 2, "tokens_to_chw");
  const int hw = x.dim(0), c = x.dim(1);
  require(hw == height * width, "tokens_to_chw", "token count does not match grid");
  std::vector<int> index(static_cast<std::size_t>(c) * hw);
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < hw; ++p) index[static_cast<std::size_t>(ch) * hw + p] = p * c + ch;
  return gather(x, std::move(index), {c, height, width});
}

// --- norms ----------------------------------------------------------------------

Var row_norm(const Var& x) {
  require_rank(x, 2, "row_norm");
  const int n = x.dim(0), c = x.dim(1);
  std::vector<double> out(n, 0.0);
  const auto& xv = x.value();
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += xv[static_cast<std::size_t>(i) * c + j] * xv[static_cast<std::size_t>(i) * c + j];
    out[i] = std::sqrt(acc);
  }
  return make({n}, std::move(out), {x}, [n, c](Node& self) {
    Node& p = parent(self, 0);
    auto& g = p.ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double norm = self.value[i];
      if (norm == 0.0) continue;  // subgradient 0 at the origin
      for (int j = 0; j < c; ++j) {
        const auto idx = static_cast<std::size_t>(i) * c + j;
        g[idx] += self.grad[i] * p.value[idx] / norm;
      }
    }
  });
}

Var unit_normalize(const Var& x) {
  const auto& xv = x.value();
  double acc = 0.0;
  for (double v : xv) acc += v * v;
  const double norm = std::sqrt(acc);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw NumericError("unit_normalize: zero or non-finite norm");
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] / norm;
  return make(x.shape(), std::move(out), {x}, [norm](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += self.grad[i] * self.value[i];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (self.grad[i] - self.value[i] * dot) / norm;
  });
}

}  // namespace latinv::ad
