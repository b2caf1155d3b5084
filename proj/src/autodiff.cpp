#include "bse/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bse::ad {

namespace {
constexpr double kPi = 3.14159265358979323846;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

void check_same_numel(const Node* a, const Node* b, const char* op) {
  if (a->val.numel() != b->val.numel())
    throw std::invalid_argument(std::string(op) + ": operand size mismatch");
}

double wrap_pi(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill)
    : v(shape_numel(s), fill), shape(std::move(s)) {}

Tensor Tensor::scalar(double x) {
  Tensor t({1});
  t.v[0] = x;
  return t;
}

Tensor Tensor::from(std::vector<double> data, std::vector<int> s) {
  if (data.size() != shape_numel(s)) throw std::invalid_argument("Tensor::from: size mismatch");
  Tensor t;
  t.v = std::move(data);
  t.shape = std::move(s);
  return t;
}

void ensure_grad(Node& n) {
  if (n.grad.v.size() != n.val.v.size()) {
    n.grad.shape = n.val.shape;
    n.grad.v.assign(n.val.v.size(), 0.0);
  }
}

Var Graph::leaf(Tensor t, bool requires_grad) {
  auto n = std::make_unique<Node>();
  n->val = std::move(t);
  n->requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return nodes_.back().get();
}

Var Graph::make(Tensor val, bool requires_grad, std::function<void(Node&)> back) {
  auto n = std::make_unique<Node>();
  n->val = std::move(val);
  n->requires_grad = requires_grad;
  n->back = std::move(back);
  nodes_.push_back(std::move(n));
  return nodes_.back().get();
}

void Graph::backward(Var loss) {
  if (loss->val.numel() != 1)
    throw std::invalid_argument("backward: output must be scalar");
  // The tape is already in topological order.
  ensure_grad(*loss);
  loss->grad.v[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.requires_grad && n.back && n.grad.v.size() == n.val.v.size()) n.back(n);
  }
}

// ---------------------------------------------------------------- elementwise

namespace {

Var unary(Graph& g, Var a, Tensor out,
          std::function<void(const Node&, Node&)> accum) {
  const bool rg = a->requires_grad;
  return g.make(std::move(out), rg, [a, accum](Node& self) {
    if (!a->requires_grad) return;
    ensure_grad(*a);
    accum(self, *a);
  });
}

}  // namespace

Var add(Graph& g, Var a, Var b) {
  check_same_numel(a, b, "add");
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b->val.v[i];
  return g.make(std::move(out), a->requires_grad || b->requires_grad, [a, b](Node& self) {
    if (a->requires_grad) {
      ensure_grad(*a);
      for (std::size_t i = 0; i < self.grad.v.size(); ++i) a->grad.v[i] += self.grad.v[i];
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (std::size_t i = 0; i < self.grad.v.size(); ++i) b->grad.v[i] += self.grad.v[i];
    }
  });
}

Var sub(Graph& g, Var a, Var b) {
  check_same_numel(a, b, "sub");
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b->val.v[i];
  return g.make(std::move(out), a->requires_grad || b->requires_grad, [a, b](Node& self) {
    if (a->requires_grad) {
      ensure_grad(*a);
      for (std::size_t i = 0; i < self.grad.v.size(); ++i) a->grad.v[i] += self.grad.v[i];
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (std::size_t i = 0; i < self.grad.v.size(); ++i) b->grad.v[i] -= self.grad.v[i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  check_same_numel(a, b, "mul");
  Tensor out = a->val;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b->val.v[i];
  return g.make(std::move(out), a->requires_grad || b->requires_grad, [a, b](Node& self) {
    if (a->requires_grad) {
      ensure_grad(*a);
      for (std::size_t i = 0; i < self.grad.v.size(); ++i)
        a->grad.v[i] += self.grad.v[i] * b->val.v[i];
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (std::size_t i = 0; i < self.grad.v.size(); ++i)
        b->grad.v[i] += self.grad.v[i] * a->val.v[i];
    }
  });
}

Var scale(Graph& g, Var a, double c) {
  Tensor out = a->val;
  for (double& x : out.v) x *= c;
  return unary(g, a, std::move(out), [c](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) pa.grad.v[i] += c * self.grad.v[i];
  });
}

Var add_scalar(Graph& g, Var a, double c) {
  Tensor out = a->val;
  for (double& x : out.v) x += c;
  return unary(g, a, std::move(out), [](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) pa.grad.v[i] += self.grad.v[i];
  });
}

Var square(Graph& g, Var a) {
  Tensor out = a->val;
  for (double& x : out.v) x *= x;
  return unary(g, a, std::move(out), [a](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i)
      pa.grad.v[i] += 2.0 * a->val.v[i] * self.grad.v[i];
  });
}

Var sqrt_floor(Graph& g, Var a, double eps) {
  Tensor out = a->val;
  for (double& x : out.v) x = std::sqrt(std::max(x, eps));
  return unary(g, a, std::move(out), [a, eps](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      if (a->val.v[i] > eps)
        pa.grad.v[i] += self.grad.v[i] * 0.5 / self.val.v[i];
    }
  });
}

Var log_floor(Graph& g, Var a, double eps) {
  Tensor out = a->val;
  for (double& x : out.v) x = std::log(std::max(x, eps));
  return unary(g, a, std::move(out), [a, eps](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      if (a->val.v[i] > eps) pa.grad.v[i] += self.grad.v[i] / a->val.v[i];
    }
  });
}

Var recip_floor(Graph& g, Var a, double eps) {
  Tensor out = a->val;
  for (double& x : out.v) x = 1.0 / std::max(x, eps);
  return unary(g, a, std::move(out), [a, eps](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      if (a->val.v[i] > eps)
        pa.grad.v[i] -= self.grad.v[i] * self.val.v[i] * self.val.v[i];
    }
  });
}

Var abs_val(Graph& g, Var a) {
  Tensor out = a->val;
  for (double& x : out.v) x = std::abs(x);
  return unary(g, a, std::move(out), [a](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      const double s = a->val.v[i] > 0 ? 1.0 : (a->val.v[i] < 0 ? -1.0 : 0.0);
      pa.grad.v[i] += s * self.grad.v[i];
    }
  });
}

Var tanh_op(Graph& g, Var a) {
  Tensor out = a->val;
  for (double& x : out.v) x = std::tanh(x);
  return unary(g, a, std::move(out), [](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i)
      pa.grad.v[i] += (1.0 - self.val.v[i] * self.val.v[i]) * self.grad.v[i];
  });
}

Var clamp(Graph& g, Var a, double lo, double hi) {
  Tensor out = a->val;
  for (double& x : out.v) x = std::clamp(x, lo, hi);
  return unary(g, a, std::move(out), [a, lo, hi](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      if (a->val.v[i] > lo && a->val.v[i] < hi) pa.grad.v[i] += self.grad.v[i];
    }
  });
}

Var atan2_op(Graph& g, Var y, Var x) {
  check_same_numel(y, x, "atan2");
  Tensor out = y->val;
  for (std::size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = std::atan2(y->val.v[i], x->val.v[i]);
  return g.make(std::move(out), y->requires_grad || x->requires_grad, [y, x](Node& self) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      const double yy = y->val.v[i], xx = x->val.v[i];
      const double d = std::max(xx * xx + yy * yy, 1e-300);
      if (y->requires_grad) {
        ensure_grad(*y);
        y->grad.v[i] += self.grad.v[i] * xx / d;
      }
      if (x->requires_grad) {
        ensure_grad(*x);
        x->grad.v[i] += self.grad.v[i] * -yy / d;
      }
    }
  });
}

Var wrapped_abs(Graph& g, Var a) {
  Tensor out = a->val;
  for (double& x : out.v) x = std::abs(wrap_pi(x));
  return unary(g, a, std::move(out), [a](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) {
      const double w = wrap_pi(a->val.v[i]);
      const double s = w > 0 ? 1.0 : (w < 0 ? -1.0 : 0.0);
      pa.grad.v[i] += s * self.grad.v[i];
    }
  });
}

// ---------------------------------------------------------------- reductions

Var sum(Graph& g, Var a) {
  double acc = 0.0;
  for (double x : a->val.v) acc += x;
  return unary(g, a, Tensor::scalar(acc), [](const Node& self, Node& pa) {
    const double gv = self.grad.v[0];
    for (double& x : pa.grad.v) x += gv;
  });
}

Var mean(Graph& g, Var a) {
  const double inv = 1.0 / static_cast<double>(a->val.numel());
  double acc = 0.0;
  for (double x : a->val.v) acc += x;
  return unary(g, a, Tensor::scalar(acc * inv), [inv](const Node& self, Node& pa) {
    const double gv = self.grad.v[0] * inv;
    for (double& x : pa.grad.v) x += gv;
  });
}

Var weighted_sum(Graph& g, Var a, const Tensor& w) {
  if (a->val.numel() != w.numel())
    throw std::invalid_argument("weighted_sum: weight size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < w.v.size(); ++i) acc += a->val.v[i] * w.v[i];
  Tensor weights = w;
  return unary(g, a, Tensor::scalar(acc),
               [weights = std::move(weights)](const Node& self, Node& pa) {
                 const double gv = self.grad.v[0];
                 for (std::size_t i = 0; i < weights.v.size(); ++i)
                   pa.grad.v[i] += gv * weights.v[i];
               });
}

// ---------------------------------------------------------------- shape

Var concat0(Graph& g, Var a, Var b) {
  if (a->val.shape.size() != b->val.shape.size())
    throw std::invalid_argument("concat0: rank mismatch");
  for (std::size_t i = 1; i < a->val.shape.size(); ++i)
    if (a->val.shape[i] != b->val.shape[i])
      throw std::invalid_argument("concat0: trailing shape mismatch");
  std::vector<int> shape = a->val.shape;
  shape[0] += b->val.shape[0];
  Tensor out(shape);
  std::copy(a->val.v.begin(), a->val.v.end(), out.v.begin());
  std::copy(b->val.v.begin(), b->val.v.end(), out.v.begin() + a->val.v.size());
  return g.make(std::move(out), a->requires_grad || b->requires_grad, [a, b](Node& self) {
    const std::size_t na = a->val.numel();
    if (a->requires_grad) {
      ensure_grad(*a);
      for (std::size_t i = 0; i < na; ++i) a->grad.v[i] += self.grad.v[i];
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (std::size_t i = 0; i < b->val.numel(); ++i) b->grad.v[i] += self.grad.v[na + i];
    }
  });
}

Var slice0(Graph& g, Var a, int start, int len) {
  if (a->val.shape.empty()) throw std::invalid_argument("slice0: scalar input");
  std::size_t inner = 1;
  for (std::size_t i = 1; i < a->val.shape.size(); ++i) inner *= a->val.shape[i];
  if (start < 0 || start + len > a->val.shape[0])
    throw std::invalid_argument("slice0: range out of bounds");
  std::vector<int> shape = a->val.shape;
  shape[0] = len;
  Tensor out(shape);
  std::copy(a->val.v.begin() + start * inner, a->val.v.begin() + (start + len) * inner,
            out.v.begin());
  return unary(g, a, std::move(out), [start, inner](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i)
      pa.grad.v[start * inner + i] += self.grad.v[i];
  });
}

Var reshape(Graph& g, Var a, std::vector<int> shape) {
  if (shape_numel(shape) != a->val.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out;
  out.v = a->val.v;
  out.shape = std::move(shape);
  return unary(g, a, std::move(out), [](const Node& self, Node& pa) {
    for (std::size_t i = 0; i < self.grad.v.size(); ++i) pa.grad.v[i] += self.grad.v[i];
  });
}

// ------------------------------------------------------- linear algebra / NN

Var matmul(Graph& g, Var w, Var x) {
  if (w->val.shape.size() != 2 || x->val.shape.size() != 2 ||
      w->val.shape[1] != x->val.shape[0])
    throw std::invalid_argument("matmul: incompatible shapes");
  const int m = w->val.shape[0], k = w->val.shape[1], n = x->val.shape[1];
  Tensor out({m, n});
  {
    CMapM W(w->val.v.data(), m, k), X(x->val.v.data(), k, n);
    MapM O(out.v.data(), m, n);
    O.noalias() = W * X;
  }
  return g.make(std::move(out), w->requires_grad || x->requires_grad,
                [w, x, m, k, n](Node& self) {
    CMapM G(self.grad.v.data(), m, n);
    if (w->requires_grad) {
      ensure_grad(*w);
      MapM GW(w->grad.v.data(), m, k);
      CMapM X(x->val.v.data(), k, n);
      GW.noalias() += G * X.transpose();
    }
    if (x->requires_grad) {
      ensure_grad(*x);
      MapM GX(x->grad.v.data(), k, n);
      CMapM W(w->val.v.data(), m, k);
      GX.noalias() += W.transpose() * G;
    }
  });
}

Var add_row_bias(Graph& g, Var x, Var b) {
  if (x->val.shape.empty() || b->val.numel() != static_cast<std::size_t>(x->val.shape[0]))
    throw std::invalid_argument("add_row_bias: bias size mismatch");
  std::size_t inner = x->val.numel() / x->val.shape[0];
  Tensor out = x->val;
  for (int r = 0; r < x->val.shape[0]; ++r)
    for (std::size_t i = 0; i < inner; ++i) out.v[r * inner + i] += b->val.v[r];
  return g.make(std::move(out), x->requires_grad || b->requires_grad,
                [x, b, inner](Node& self) {
    if (x->requires_grad) {
      ensure_grad(*x);
      for (std::size_t i = 0; i < self.grad.v.size(); ++i) x->grad.v[i] += self.grad.v[i];
    }
    if (b->requires_grad) {
      ensure_grad(*b);
      for (int r = 0; r < x->val.shape[0]; ++r) {
        double acc = 0.0;
        for (std::size_t i = 0; i < inner; ++i) acc += self.grad.v[r * inner + i];
        b->grad.v[r] += acc;
      }
    }
  });
}

Var prelu(Graph& g, Var x, Var slopes) {
  if (x->val.shape.empty() || slopes->val.numel() != static_cast<std::size_t>(x->val.shape[0]))
    throw std::invalid_argument("prelu: slope count must match dim 0");
  const std::size_t inner = x->val.numel() / x->val.shape[0];
  Tensor out = x->val;
  for (int c = 0; c < x->val.shape[0]; ++c) {
    const double a = slopes->val.v[c];
    for (std::size_t i = 0; i < inner; ++i) {
      double& v = out.v[c * inner + i];
      if (v < 0) v *= a;
    }
  }
  return g.make(std::move(out), x->requires_grad || slopes->requires_grad,
                [x, slopes, inner](Node& self) {
    for (int c = 0; c < x->val.shape[0]; ++c) {
      const double a = slopes->val.v[c];
      double slope_acc = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = c * inner + i;
        const double xi = x->val.v[idx];
        const double gv = self.grad.v[idx];
        if (x->requires_grad) {
          ensure_grad(*x);
          x->grad.v[idx] += (xi >= 0 ? 1.0 : a) * gv;
        }
        if (xi < 0) slope_acc += xi * gv;
      }
      if (slopes->requires_grad) {
        ensure_grad(*slopes);
        slopes->grad.v[c] += slope_acc;
      }
    }
  });
}

Var softmax_rows(Graph& g, Var x) {
  if (x->val.shape.size() != 2) throw std::invalid_argument("softmax_rows: need 2-D input");
  const int r = x->val.shape[0], c = x->val.shape[1];
  Tensor out = x->val;
  for (int i = 0; i < r; ++i) {
    double mx = -1e300;
    for (int j = 0; j < c; ++j) mx = std::max(mx, out.v[i * c + j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      double& v = out.v[i * c + j];
      v = std::exp(v - mx);
      s += v;
    }
    for (int j = 0; j < c; ++j) out.v[i * c + j] /= s;
  }
  return unary(g, x, std::move(out), [r, c](const Node& self, Node& pa) {
    for (int i = 0; i < r; ++i) {
      double dot = 0.0;
      for (int j = 0; j < c; ++j)
        dot += self.grad.v[i * c + j] * self.val.v[i * c + j];
      for (int j = 0; j < c; ++j)
        pa.grad.v[i * c + j] +=
            self.val.v[i * c + j] * (self.grad.v[i * c + j] - dot);
    }
  });
}

// -------------------------------------------------------------- convolutions

Var conv_freq(Graph& g, Var x, Var w, int stride, int pad_freq) {
  if (x->val.shape.size() != 3 || w->val.shape.size() != 4)
    throw std::invalid_argument("conv_freq: expect x(C,F,T), w(Co,Ci,Kf,Kt)");
  const int ci = x->val.shape[0], F = x->val.shape[1], T = x->val.shape[2];
  const int co = w->val.shape[0], kf = w->val.shape[2], kt = w->val.shape[3];
  if (w->val.shape[1] != ci) throw std::invalid_argument("conv_freq: channel mismatch");
  const int fo = (F + 2 * pad_freq - kf) / stride + 1;
  if (fo <= 0) throw std::invalid_argument("conv_freq: output frequency size <= 0");

  Tensor out({co, fo, T});
  auto xat = [&](int c, int f) { return x->val.v.data() + (static_cast<std::size_t>(c) * F + f) * T; };
  for (int oc = 0; oc < co; ++oc) {
    for (int f = 0; f < fo; ++f) {
      double* orow = out.v.data() + (static_cast<std::size_t>(oc) * fo + f) * T;
      for (int c = 0; c < ci; ++c)
        for (int j = 0; j < kf; ++j) {
          const int fi = f * stride - pad_freq + j;
          if (fi < 0 || fi >= F) continue;
          const double* xrow = xat(c, fi);
          for (int u = 0; u < kt; ++u) {
            const double wv =
                w->val.v[((static_cast<std::size_t>(oc) * ci + c) * kf + j) * kt + u];
            if (wv == 0.0 && !w->requires_grad) continue;
            const int d = kt - 1 - u;  // causal: output t uses input t-d
            Eigen::Map<Eigen::VectorXd> ov(orow + d, T - d);
            Eigen::Map<const Eigen::VectorXd> xv(xrow, T - d);
            ov.noalias() += wv * xv;
          }
        }
    }
  }
  return g.make(std::move(out), x->requires_grad || w->requires_grad,
                [x, w, stride, pad_freq, ci, F, T, co, kf, kt, fo](Node& self) {
    if (x->requires_grad) ensure_grad(*x);
    if (w->requires_grad) ensure_grad(*w);
    for (int oc = 0; oc < co; ++oc) {
      for (int f = 0; f < fo; ++f) {
        const double* grow = self.grad.v.data() + (static_cast<std::size_t>(oc) * fo + f) * T;
        for (int c = 0; c < ci; ++c)
          for (int j = 0; j < kf; ++j) {
            const int fi = f * stride - pad_freq + j;
            if (fi < 0 || fi >= F) continue;
            const std::size_t xoff = (static_cast<std::size_t>(c) * F + fi) * T;
            for (int u = 0; u < kt; ++u) {
              const std::size_t widx =
                  ((static_cast<std::size_t>(oc) * ci + c) * kf + j) * kt + u;
              const int d = kt - 1 - u;
              Eigen::Map<const Eigen::VectorXd> gv(grow + d, T - d);
              if (x->requires_grad) {
                Eigen::Map<Eigen::VectorXd> gx(x->grad.v.data() + xoff, T - d);
                gx.noalias() += w->val.v[widx] * gv;
              }
              if (w->requires_grad) {
                Eigen::Map<const Eigen::VectorXd> xv(x->val.v.data() + xoff, T - d);
                w->grad.v[widx] += gv.dot(xv);
              }
            }
          }
      }
    }
  });
}

Var tconv_freq(Graph& g, Var x, Var w, int stride, int pad_freq) {
  if (x->val.shape.size() != 3 || w->val.shape.size() != 4)
    throw std::invalid_argument("tconv_freq: expect x(C,F,T), w(Co,Ci,Kf,Kt)");
  if (w->val.shape[3] != 1)
    throw std::invalid_argument("tconv_freq: time kernel must be 1");
  const int ci = x->val.shape[0], F = x->val.shape[1], T = x->val.shape[2];
  const int co = w->val.shape[0], kf = w->val.shape[2];
  if (w->val.shape[1] != ci) throw std::invalid_argument("tconv_freq: channel mismatch");
  const int fo = (F - 1) * stride - 2 * pad_freq + kf;
  if (fo <= 0) throw std::invalid_argument("tconv_freq: output frequency size <= 0");

  Tensor out({co, fo, T});
  for (int oc = 0; oc < co; ++oc)
    for (int c = 0; c < ci; ++c)
      for (int fi = 0; fi < F; ++fi) {
        const double* xrow = x->val.v.data() + (static_cast<std::size_t>(c) * F + fi) * T;
        for (int j = 0; j < kf; ++j) {
          const int f = fi * stride - pad_freq + j;
          if (f < 0 || f >= fo) continue;
          const double wv = w->val.v[((static_cast<std::size_t>(oc) * ci + c) * kf + j)];
          double* orow = out.v.data() + (static_cast<std::size_t>(oc) * fo + f) * T;
          Eigen::Map<Eigen::VectorXd>(orow, T).noalias() +=
              wv * Eigen::Map<const Eigen::VectorXd>(xrow, T);
        }
      }
  return g.make(std::move(out), x->requires_grad || w->requires_grad,
                [x, w, stride, pad_freq, ci, F, T, co, kf, fo](Node& self) {
    if (x->requires_grad) ensure_grad(*x);
    if (w->requires_grad) ensure_grad(*w);
    for (int oc = 0; oc < co; ++oc)
      for (int c = 0; c < ci; ++c)
        for (int fi = 0; fi < F; ++fi) {
          const std::size_t xoff = (static_cast<std::size_t>(c) * F + fi) * T;
          for (int j = 0; j < kf; ++j) {
            const int f = fi * stride - pad_freq + j;
            if (f < 0 || f >= fo) continue;
            const std::size_t widx = (static_cast<std::size_t>(oc) * ci + c) * kf + j;
            Eigen::Map<const Eigen::VectorXd> gv(
                self.grad.v.data() + (static_cast<std::size_t>(oc) * fo + f) * T, T);
            if (x->requires_grad) {
              Eigen::Map<Eigen::VectorXd> gx(x->grad.v.data() + xoff, T);
              gx.noalias() += w->val.v[widx] * gv;
            }
            if (w->requires_grad) {
              Eigen::Map<const Eigen::VectorXd> xv(x->val.v.data() + xoff, T);
              w->grad.v[widx] += gv.dot(xv);
            }
          }
        }
  });
}

// ---------------------------------------------------------------- batch norm

Var batchnorm(Graph& g, Var x, Var gamma, Var beta, BatchNormState& state, bool train) {
  if (x->val.shape.size() != 3) throw std::invalid_argument("batchnorm: expect (C,F,T)");
  const int C = x->val.shape[0];
  const std::size_t inner = x->val.numel() / C;
  if (gamma->val.numel() != static_cast<std::size_t>(C) ||
      beta->val.numel() != static_cast<std::size_t>(C))
    throw std::invalid_argument("batchnorm: parameter size mismatch");
  if (state.running_mean.size() != static_cast<std::size_t>(C)) {
    state.running_mean.assign(C, 0.0);
    state.running_var.assign(C, 1.0);
  }

  auto mean_c = std::make_shared<std::vector<double>>(C);
  auto inv_std_c = std::make_shared<std::vector<double>>(C);
  Tensor out = x->val;
  for (int c = 0; c < C; ++c) {
    double m, v;
    if (train) {
      m = 0.0;
      for (std::size_t i = 0; i < inner; ++i) m += x->val.v[c * inner + i];
      m /= static_cast<double>(inner);
      v = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = x->val.v[c * inner + i] - m;
        v += d * d;
      }
      v /= static_cast<double>(inner);
      state.running_mean[c] = (1 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1 - state.momentum) * state.running_var[c] + state.momentum * v;
    } else {
      m = state.running_mean[c];
      v = state.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(v + state.eps);
    (*mean_c)[c] = m;
    (*inv_std_c)[c] = inv_std;
    const double gmm = gamma->val.v[c], bt = beta->val.v[c];
    for (std::size_t i = 0; i < inner; ++i) {
      double& o = out.v[c * inner + i];
      o = (o - m) * inv_std * gmm + bt;
    }
  }
  return g.make(std::move(out),
                x->requires_grad || gamma->requires_grad || beta->requires_grad,
                [x, gamma, beta, mean_c, inv_std_c, train, C, inner](Node& self) {
    for (int c = 0; c < C; ++c) {
      const double m = (*mean_c)[c], is = (*inv_std_c)[c];
      const double gmm = gamma->val.v[c];
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const double gv = self.grad.v[c * inner + i];
        sum_g += gv;
        sum_gx += gv * (x->val.v[c * inner + i] - m) * is;
      }
      if (gamma->requires_grad) {
        ensure_grad(*gamma);
        gamma->grad.v[c] += sum_gx;
      }
      if (beta->requires_grad) {
        ensure_grad(*beta);
        beta->grad.v[c] += sum_g;
      }
      if (x->requires_grad) {
        ensure_grad(*x);
        const double n = static_cast<double>(inner);
        for (std::size_t i = 0; i < inner; ++i) {
          const double gv = self.grad.v[c * inner + i];
          const double xh = (x->val.v[c * inner + i] - m) * is;
          double gx;
          if (train) {
            gx = gmm * is * (gv - sum_g / n - xh * sum_gx / n);
          } else {
            gx = gmm * is * gv;
          }
          x->grad.v[c * inner + i] += gx;
        }
      }
    }
  });
}

// ----------------------------------------------------------------- attention

Var attention(Graph& g, Var q, Var k, Var v, int heads, bool causal) {
  if (q->val.shape.size() != 2 || k->val.shape.size() != 2 || v->val.shape.size() != 2)
    throw std::invalid_argument("attention: expect (d, T) operands");
  const int d = q->val.shape[0], T = q->val.shape[1];
  if (k->val.shape[0] != d || v->val.shape[0] != d || k->val.shape[1] != T ||
      v->val.shape[1] != T)
    throw std::invalid_argument("attention: operand shape mismatch");
  if (d % heads != 0) throw std::invalid_argument("attention: heads must divide dim");
  const int dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out({d, T});
  // Keep per-head softmax weights for the backward pass.
  auto probs = std::make_shared<std::vector<Mat>>();
  probs->reserve(heads);
  for (int h = 0; h < heads; ++h) {
    CMapM Q(q->val.v.data() + static_cast<std::size_t>(h) * dh * T, dh, T);
    CMapM K(k->val.v.data() + static_cast<std::size_t>(h) * dh * T, dh, T);
    CMapM V(v->val.v.data() + static_cast<std::size_t>(h) * dh * T, dh, T);
    Mat S = sc * (Q.transpose() * K);  // (T, T): query row, key col
    if (causal) {
      for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) S(i, j) = -1e30;
    }
    for (int i = 0; i < T; ++i) {
      const double mx = S.row(i).maxCoeff();
      S.row(i) = (S.row(i).array() - mx).exp();
      S.row(i) /= S.row(i).sum();
    }
    MapM O(out.v.data() + static_cast<std::size_t>(h) * dh * T, dh, T);
    O.noalias() = V * S.transpose();
    probs->push_back(std::move(S));
  }
  return g.make(std::move(out),
                q->requires_grad || k->requires_grad || v->requires_grad,
                [q, k, v, probs, heads, dh, T, sc, causal](Node& self) {
    if (q->requires_grad) ensure_grad(*q);
    if (k->requires_grad) ensure_grad(*k);
    if (v->requires_grad) ensure_grad(*v);
    for (int h = 0; h < heads; ++h) {
      const std::size_t off = static_cast<std::size_t>(h) * dh * T;
      CMapM GO(self.grad.v.data() + off, dh, T);
      CMapM Q(q->val.v.data() + off, dh, T);
      CMapM K(k->val.v.data() + off, dh, T);
      CMapM V(v->val.v.data() + off, dh, T);
      const Mat& P = (*probs)[h];
      Mat GP = GO.transpose() * V;  // (T, T)
      if (v->requires_grad) {
        MapM GV(v->grad.v.data() + off, dh, T);
        GV.noalias() += GO * P;
      }
      // softmax backward, row-wise
      Mat GS(T, T);
      for (int i = 0; i < T; ++i) {
        const double dot = GP.row(i).dot(P.row(i));
        GS.row(i) = P.row(i).array() * (GP.row(i).array() - dot);
      }
      if (causal) {
        for (int i = 0; i < T; ++i)
          for (int j = i + 1; j < T; ++j) GS(i, j) = 0.0;
      }
      if (q->requires_grad) {
        MapM GQ(q->grad.v.data() + off, dh, T);
        GQ.noalias() += sc * (K * GS.transpose());
      }
      if (k->requires_grad) {
        MapM GK(k->grad.v.data() + off, dh, T);
        GK.noalias() += sc * (Q * GS);
      }
    }
  });
}

// ---------------------------------------------------------- fixed linear map

Var linear_map(Graph& g, Var x,
               std::function<Tensor(const Tensor&)> fwd,
               std::function<Tensor(const Tensor&)> adj) {
  Tensor out = fwd(x->val);
  return g.make(std::move(out), x->requires_grad, [x, adj = std::move(adj)](Node& self) {
    if (!x->requires_grad) return;
    ensure_grad(*x);
    Tensor gx = adj(self.grad);
    if (gx.numel() != x->val.numel())
      throw std::logic_error("linear_map: adjoint returned wrong size");
    for (std::size_t i = 0; i < gx.v.size(); ++i) x->grad.v[i] += gx.v[i];
  });
}

// ----------------------------------------------------- band correlation

Var band_correlation(Graph& g, Var proc_bands, const Tensor& clean_bands,
                     int seg_len, double clip_db, bool smooth) {
  if (proc_bands->val.shape.size() != 2)
    throw std::invalid_argument("band_correlation: expect (bands, frames)");
  if (proc_bands->val.shape != clean_bands.shape)
    throw std::invalid_argument("band_correlation: clean/processed shape mismatch");
  const int B = proc_bands->val.shape[0];
  const int M = proc_bands->val.shape[1];
  const int N = std::min(seg_len, M);
  const int first_seg = N - 1;
  // clip_db is a lower SDR bound; the envelope may exceed the reference by
  // 1 + 10^(-clip_db/20) before clipping engages.
  const double clip_gain = 1.0 + std::pow(10.0, -clip_db / 20.0);
  constexpr double kEps = 1e-12;

  struct SegGrad {
    int b, m0;
    std::vector<double> gy;  // gradient wrt the processed segment
  };
  auto seg_grads = std::make_shared<std::vector<SegGrad>>();
  double acc = 0.0;
  int count = 0;

  const auto& pv = proc_bands->val.v;
  const auto& cv = clean_bands.v;
  std::vector<double> x(N), y(N), z(N), w(N);
  for (int m = first_seg; m < M; ++m) {
    const int m0 = m - N + 1;
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < N; ++i) {
        x[i] = cv[static_cast<std::size_t>(b) * M + m0 + i];
        y[i] = pv[static_cast<std::size_t>(b) * M + m0 + i];
      }
      double nx2 = 0.0, ny2 = 0.0;
      for (int i = 0; i < N; ++i) {
        nx2 += x[i] * x[i];
        ny2 += y[i] * y[i];
      }
      const double ny = std::sqrt(ny2) + kEps;
      const double a = std::sqrt(nx2) / ny;  // normalize processed to clean energy
      std::vector<double> dz(N);             // dw/dz
      for (int i = 0; i < N; ++i) {
        z[i] = a * y[i];
        const double L = clip_gain * std::max(x[i], kEps);
        if (smooth) {
          const double t = std::tanh(z[i] / L);
          w[i] = L * t;
          dz[i] = 1.0 - t * t;
        } else {
          w[i] = std::min(z[i], L);
          dz[i] = z[i] < L ? 1.0 : 0.0;
        }
      }
      double mw = 0.0, mx = 0.0;
      for (int i = 0; i < N; ++i) {
        mw += w[i] / N;
        mx += x[i] / N;
      }
      double sww = 0.0, sxx = 0.0, swx = 0.0;
      for (int i = 0; i < N; ++i) {
        const double dw = w[i] - mw, dx = x[i] - mx;
        sww += dw * dw;
        sxx += dx * dx;
        swx += dw * dx;
      }
      const double den = std::sqrt(sww * sxx) + kEps;
      const double d = swx / den;
      acc += d;
      ++count;

      if (proc_bands->requires_grad) {
        // dd/dw, then through the clip, scaling and normalization.
        SegGrad sg;
        sg.b = b;
        sg.m0 = m0;
        sg.gy.assign(N, 0.0);
        std::vector<double> gw(N);
        double gw_mean = 0.0;
        for (int i = 0; i < N; ++i) {
          const double dw = w[i] - mw, dx = x[i] - mx;
          gw[i] = dx / den - swx * sxx * dw / (den * den * (std::sqrt(sww * sxx) + kEps));
          gw_mean += gw[i] / N;
        }
        // remove the mean (w enters via w - mean(w))
        std::vector<double> gz(N);
        double y_dot_gz = 0.0;
        for (int i = 0; i < N; ++i) {
          const double gwc = gw[i] - gw_mean;
          gz[i] = gwc * dz[i];
          y_dot_gz += y[i] * gz[i];
        }
        // z = a*y with a = |x| / (|y| + eps)
        const double ny_raw = std::sqrt(ny2);
        for (int i = 0; i < N; ++i) {
          double gyi = a * gz[i];
          if (ny_raw > kEps) gyi -= a * y_dot_gz * y[i] / (ny * ny_raw);
          sg.gy[i] = gyi;
        }
        seg_grads->push_back(std::move(sg));
      }
    }
  }
  const double inv_count = count > 0 ? 1.0 / count : 0.0;
  return g.make(Tensor::scalar(acc * inv_count), proc_bands->requires_grad,
                [proc_bands, seg_grads, M, inv_count](Node& self) {
    ensure_grad(*proc_bands);
    const double gs = self.grad.v[0] * inv_count;
    for (const auto& sg : *seg_grads) {
      double* row = proc_bands->grad.v.data() + static_cast<std::size_t>(sg.b) * M + sg.m0;
      for (std::size_t i = 0; i < sg.gy.size(); ++i) row[i] += gs * sg.gy[i];
    }
  });
}

double finite_diff(Tensor& storage, std::size_t i, const std::function<double()>& eval_loss,
                   double step) {
  const double saved = storage.v[i];
  storage.v[i] = saved + step;
  const double hi = eval_loss();
  storage.v[i] = saved - step;
  const double lo = eval_loss();
  storage.v[i] = saved;
  return (hi - lo) / (2.0 * step);
}

}  // namespace bse::ad
