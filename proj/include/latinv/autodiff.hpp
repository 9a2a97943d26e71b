#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double tensors. Every model in the library is expressed with these ops so
// that training and finite-difference verification share one code path.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace latinv::ad {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

/// Shared handle to a graph node. Copies alias the same storage.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t axis) const { return node_->shape.at(axis); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->value.size(); }

  const std::vector<double>& value() const { return node_->value; }
  /// Only meaningful on leaves; mutating an interior node does not
  /// re-run the graph.
  std::vector<double>& mutable_value() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// --- construction -----------------------------------------------------------

Var constant(Shape shape, std::vector<double> value);
Var zeros(Shape shape);
Var full(Shape shape, double fill);
/// Trainable leaf.
Var parameter(Shape shape, std::vector<double> value);

/// Back-propagates d(root)/d(leaf) into every reachable leaf that requires
/// grad. `root` must hold a single element.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// --- elementwise --------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
/// x * s where s holds one element.
Var mul_scalar(const Var& x, const Var& s);
Var add_n(std::span<const Var> terms);
Var square(const Var& a);
Var sqrt(const Var& a);
Var tanh(const Var& a);
Var gelu(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);

// --- reductions ---------------------------------------------------------------

Var sum(const Var& a);
Var mean(const Var& a);
/// [n, c] -> [n]
Var row_sum(const Var& a);

// --- matrix ops (rank 2) ------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// x[n, in] * w[in, out] + b[out]; `b` may be empty.
Var linear(const Var& x, const Var& w, const Var& b);
/// x[n, c] + b[c] broadcast over rows.
Var add_row_bias(const Var& x, const Var& b);
/// out[i, j] = x[i, j] * s[i]
Var scale_rows(const Var& x, const Var& s);
/// Row-wise layer normalization with population variance.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& x);
/// out[k, :] = sum of x[i, :] over rows i with segment[i] == k.
Var segment_sum(const Var& x, const std::vector<int>& segment, int segments);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

// --- indexing -----------------------------------------------------------------

/// out.flat[i] = x.flat[index[i]], or 0 when index[i] < 0.
Var gather(const Var& x, std::vector<int> index, Shape out_shape);
Var gather_rows(const Var& x, const std::vector<int>& rows);
/// Columns [begin, end) of a rank-2 tensor.
Var slice_cols(const Var& x, int begin, int end);
Var reshape(const Var& x, Shape shape);

// --- image ops (CHW, single sample) -------------------------------------------

/// Stride-1 "same" convolution, x[C, H, W] * w[O, C, k, k], odd k.
Var conv2d(const Var& x, const Var& w);
/// Per-sample weight modulation w[o, i, ...] * gain * s[i], optionally
/// demodulated so each output filter has unit L2 norm.
Var modulate_weight(const Var& w, const Var& style, bool demodulate, double gain);
/// x[C, H, W] + b[C]
Var add_channel_bias(const Var& x, const Var& b);
/// 2x bilinear upsampling with half-pixel centers and edge clamping.
Var upsample_bilinear2x(const Var& x);
Var avg_pool2x(const Var& x);
/// [C, H, W] -> [C]
Var spatial_mean(const Var& x);

// --- layout helpers -----------------------------------------------------------

/// [C, H, W] -> [H*W, C]
Var chw_to_tokens(const Var& x);
/// [H*W, C] -> [C, H, W]
Var tokens_to_chw(const Var& x, int height, int width);

// --- norms ----------------------------------------------------------------------

/// [n, c] -> [n] Euclidean row norms; the gradient at a zero row is zero.
Var row_norm(const Var& x);
/// x / ||x|| over all elements. Throws NumericError on a zero norm.
Var unit_normalize(const Var& x);

}  // namespace latinv::ad
