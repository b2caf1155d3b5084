#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace bse::ad {

/// Dense row-major tensor; for feature maps the layout is (channel, freq,
/// time) with time contiguous, for matrices (rows, cols).
struct Tensor {
  std::vector<double> v;
  std::vector<int> shape;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  static Tensor scalar(double x);
  static Tensor from(std::vector<double> data, std::vector<int> s);

  std::size_t numel() const { return v.size(); }
  int dim(int i) const { return shape[i]; }
  double item() const { return v.at(0); }
};

struct Node {
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  std::function<void(Node&)> back;  // accumulates into parents' grads
};

using Var = Node*;

/// Owns the computation tape for one forward/backward pass.
class Graph {
 public:
  Var leaf(Tensor t, bool requires_grad = true);
  Var constant(Tensor t) { return leaf(std::move(t), false); }

  /// Reverse sweep from a scalar output.
  void backward(Var loss);

  Var make(Tensor val, bool requires_grad, std::function<void(Node&)> back);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

void ensure_grad(Node& n);

// ---- elementwise ----
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double c);
Var add_scalar(Graph& g, Var a, double c);
Var square(Graph& g, Var a);
Var sqrt_floor(Graph& g, Var a, double eps);
Var log_floor(Graph& g, Var a, double eps);
Var recip_floor(Graph& g, Var a, double eps);  // 1 / max(a, eps)
Var abs_val(Graph& g, Var a);
Var tanh_op(Graph& g, Var a);
Var clamp(Graph& g, Var a, double lo, double hi);
Var atan2_op(Graph& g, Var y, Var x);
/// |wrap(a)| with wrap into (-pi, pi]; subgradient sign(wrap(a)).
Var wrapped_abs(Graph& g, Var a);

// ---- reductions ----
Var sum(Graph& g, Var a);
Var mean(Graph& g, Var a);
/// sum(a * w) for a fixed weight tensor (same numel).
Var weighted_sum(Graph& g, Var a, const Tensor& w);

// ---- shape ----
Var concat0(Graph& g, Var a, Var b);           // concatenate along dim 0
Var slice0(Graph& g, Var a, int start, int len);
Var reshape(Graph& g, Var a, std::vector<int> shape);

// ---- linear algebra / NN ----
Var matmul(Graph& g, Var w, Var x);            // (m,k)x(k,n) -> (m,n)
Var add_row_bias(Graph& g, Var x, Var b);      // x(r, n) + b(r) per row
Var prelu(Graph& g, Var x, Var slopes);        // slopes indexed by dim 0
Var softmax_rows(Graph& g, Var x);

/// 2-D convolution over (freq, time) with stride on the frequency axis only
/// and causal padding on the time axis. x: (Ci,F,T), w: (Co,Ci,Kf,Kt).
Var conv_freq(Graph& g, Var x, Var w, int stride, int pad_freq);
/// Transposed counterpart inverting the frequency downsampling; Kt must be 1.
Var tconv_freq(Graph& g, Var x, Var w, int stride, int pad_freq);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
/// Per-channel batch normalization over (freq, time); statistics are taken
/// from the current tensor in training mode and from `state` in eval mode.
Var batchnorm(Graph& g, Var x, Var gamma, Var beta, BatchNormState& state, bool train);

/// Scaled-dot-product multi-head attention. q,k,v: (d, T) with d divisible
/// by heads; optional causal mask on the key index.
Var attention(Graph& g, Var q, Var k, Var v, int heads, bool causal);

/// Arbitrary fixed linear map with user-supplied forward and adjoint.
Var linear_map(Graph& g, Var x,
               std::function<Tensor(const Tensor&)> fwd,
               std::function<Tensor(const Tensor&)> adj);

/// Mean clipped band-envelope correlation between a fixed clean band matrix
/// and a variable processed band matrix (bands x frames). Segments of
/// `seg_len` frames; soft clipping via scaled tanh at `clip_db` when smooth,
/// hard min otherwise. Short inputs fall back to one full-length segment.
Var band_correlation(Graph& g, Var proc_bands, const Tensor& clean_bands,
                     int seg_len, double clip_db, bool smooth);

/// Central finite difference of eval_loss with respect to storage.v[i];
/// eval_loss must rebuild its forward pass from `storage`.
double finite_diff(Tensor& storage, std::size_t i, const std::function<double()>& eval_loss,
                   double step = 1e-4);

}  // namespace bse::ad
