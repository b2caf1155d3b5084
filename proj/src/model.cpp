#include "bse/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "bse/losses.hpp"
#include "bse/rng.hpp"

namespace bse {

std::vector<int> ModelConfig::freq_plan() const {
  const int pad = (kernel_freq - 1) / 2;
  std::vector<int> plan{bins};
  int f = bins;
  for (int i = 0; i < layers(); ++i) {
    const int num = f + 2 * pad - kernel_freq;
    if (num < 0 || num % stride_freq != 0)
      throw std::invalid_argument("ModelConfig: frequency plan does not divide");
    const int fo = num / stride_freq + 1;
    // the transposed decoder layer must invert this size exactly
    if ((fo - 1) * stride_freq - 2 * pad + kernel_freq != f)
      throw std::invalid_argument("ModelConfig: frequency plan is not invertible");
    plan.push_back(fo);
    f = fo;
  }
  return plan;
}

void ModelConfig::validate() const {
  if (layers() < 2) throw std::invalid_argument("ModelConfig: need at least 2 layers");
  if (kernel_time != 1)
    throw std::invalid_argument("ModelConfig: time kernel must be 1");
  if (kernel_freq < 1 || kernel_freq % 2 == 0)
    throw std::invalid_argument("ModelConfig: frequency kernel must be odd");
  if (input_context < 1)
    throw std::invalid_argument("ModelConfig: input_context must be >= 1");
  if (embed_dim % 2 != 0) throw std::invalid_argument("ModelConfig: embed_dim must be even");
  if (attn_hidden % attn_heads != 0)
    throw std::invalid_argument("ModelConfig: heads must divide attn_hidden");
  freq_plan();  // throws on a bad plan
}

std::size_t ParamStore::add(std::string name, ad::Tensor t) {
  if (index.count(name)) throw std::logic_error("ParamStore: duplicate " + name);
  index[name] = items.size();
  items.emplace_back(std::move(name), std::move(t));
  return items.size() - 1;
}

ad::Tensor& ParamStore::at(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw std::out_of_range("ParamStore: missing " + name);
  return items[it->second].second;
}

const ad::Tensor& ParamStore::at(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw std::out_of_range("ParamStore: missing " + name);
  return items[it->second].second;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items) n += t.numel();
  return n;
}

CVar complex_conv(ad::Graph& g, CVar x, CVar w, int stride, int pad_freq) {
  auto rr = ad::conv_freq(g, x.re, w.re, stride, pad_freq);
  auto ii = ad::conv_freq(g, x.im, w.im, stride, pad_freq);
  auto ri = ad::conv_freq(g, x.re, w.im, stride, pad_freq);
  auto ir = ad::conv_freq(g, x.im, w.re, stride, pad_freq);
  return {ad::sub(g, rr, ii), ad::add(g, ri, ir)};
}

CVar complex_tconv(ad::Graph& g, CVar x, CVar w, int stride, int pad_freq) {
  auto rr = ad::tconv_freq(g, x.re, w.re, stride, pad_freq);
  auto ii = ad::tconv_freq(g, x.im, w.im, stride, pad_freq);
  auto ri = ad::tconv_freq(g, x.re, w.im, stride, pad_freq);
  auto ir = ad::tconv_freq(g, x.im, w.re, stride, pad_freq);
  return {ad::sub(g, rr, ii), ad::add(g, ri, ir)};
}

CVar complex_prelu(ad::Graph& g, CVar x, ad::Var slopes_re, ad::Var slopes_im) {
  return {ad::prelu(g, x.re, slopes_re), ad::prelu(g, x.im, slopes_im)};
}

CVar complex_batchnorm(ad::Graph& g, CVar x, ad::Var gamma_re, ad::Var beta_re,
                       ad::Var gamma_im, ad::Var beta_im, ad::BatchNormState& state_re,
                       ad::BatchNormState& state_im, bool train) {
  return {ad::batchnorm(g, x.re, gamma_re, beta_re, state_re, train),
          ad::batchnorm(g, x.im, gamma_im, beta_im, state_im, train)};
}

ad::Var mha(ad::Graph& g, ad::Var a, ad::Var b, const AttnParams& p) {
  auto q = ad::add_row_bias(g, ad::matmul(g, p.wq, a), p.bq);
  auto k = ad::add_row_bias(g, ad::matmul(g, p.wk, b), p.bk);
  auto v = ad::add_row_bias(g, ad::matmul(g, p.wv, b), p.bv);
  auto att = ad::attention(g, q, k, v, p.heads, p.causal);
  return ad::add_row_bias(g, ad::matmul(g, p.wo, att), p.bo);
}

CVar complex_transformer_step(ad::Graph& g, CVar h, const AttnParams& p) {
  auto rr = mha(g, h.re, h.re, p);
  auto ii = mha(g, h.im, h.im, p);
  auto ri = mha(g, h.re, h.im, p);
  auto ir = mha(g, h.im, h.re, p);
  return {ad::sub(g, rr, ii), ad::add(g, ri, ir)};
}

ad::Var complex_apply_mask(ad::Graph& g, ad::Var mask, const ComplexSpectrogram& noisy) {
  if (mask->val.shape.size() != 3 || mask->val.shape[0] != 2 ||
      mask->val.shape[1] != noisy.bins || mask->val.shape[2] != noisy.frames)
    throw std::invalid_argument("complex_apply_mask: shape mismatch");
  const int K = noisy.bins, T = noisy.frames;
  ad::Tensor y = spec_to_tensor(noisy);
  const std::size_t plane = static_cast<std::size_t>(K) * T;
  auto yr = g.constant(ad::Tensor::from({y.v.begin(), y.v.begin() + plane}, {1, K, T}));
  auto yi = g.constant(ad::Tensor::from({y.v.begin() + plane, y.v.end()}, {1, K, T}));
  auto mr = ad::slice0(g, mask, 0, 1);
  auto mi = ad::slice0(g, mask, 1, 1);
  auto er = ad::sub(g, ad::mul(g, mr, yr), ad::mul(g, mi, yi));
  auto ei = ad::add(g, ad::mul(g, mr, yi), ad::mul(g, mi, yr));
  return ad::concat0(g, er, ei);
}

namespace {

const char* kEars[2] = {"l", "r"};

}  // namespace

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const auto plan = cfg_.freq_plan();
  const int n = cfg_.layers();
  const int half = cfg_.embed_dim / 2;
  const int cf = cfg_.encoder_channels.back() * plan.back();

  auto normal = [&rng](std::vector<int> shape, double stddev) {
    ad::Tensor t(shape);
    for (double& x : t.v) x = stddev * rng.normal();
    return t;
  };
  auto filled = [](std::vector<int> shape, double v) { return ad::Tensor(shape, v); };

  for (const char* ear : kEars) {
    const std::string e = ear;
    int ci = cfg_.input_context;
    for (int i = 0; i < n; ++i) {
      const int co = cfg_.encoder_channels[i];
      const double sd = 1.0 / std::sqrt(2.0 * ci * cfg_.kernel_freq);
      params_.add(e + ".enc" + std::to_string(i) + ".w.re",
                  normal({co, ci, cfg_.kernel_freq, 1}, sd));
      params_.add(e + ".enc" + std::to_string(i) + ".w.im",
                  normal({co, ci, cfg_.kernel_freq, 1}, sd));
      for (const char* part : {"re", "im"}) {
        const std::string p = std::string(".") + part;
        params_.add(e + ".enc" + std::to_string(i) + ".bn.gamma" + p, filled({co}, 1.0));
        params_.add(e + ".enc" + std::to_string(i) + ".bn.beta" + p, filled({co}, 0.0));
        params_.add(e + ".enc" + std::to_string(i) + ".prelu" + p, filled({co}, 0.25));
      }
      ci = co;
    }
    params_.add(e + ".proj_in.w", normal({half, cf}, 1.0 / std::sqrt(double(cf))));
    params_.add(e + ".proj_in.b", filled({half}, 0.0));
    params_.add(e + ".proj_out.w",
                normal({cf, cfg_.post_linear_features},
                       1.0 / std::sqrt(double(cfg_.post_linear_features))));
    params_.add(e + ".proj_out.b", filled({cf}, 0.0));
    // decoder: channel plan mirrors the encoder, final layer emits the mask
    for (int i = 0; i < n; ++i) {
      const int cin = 2 * cfg_.encoder_channels[n - 1 - i];  // skip concat doubles it
      const int co = i + 1 < n ? cfg_.encoder_channels[n - 2 - i] : 1;
      const double sd = 1.0 / std::sqrt(2.0 * cin * cfg_.kernel_freq);
      params_.add(e + ".dec" + std::to_string(i) + ".w.re",
                  normal({co, cin, cfg_.kernel_freq, 1}, sd));
      params_.add(e + ".dec" + std::to_string(i) + ".w.im",
                  normal({co, cin, cfg_.kernel_freq, 1}, sd));
      if (i + 1 < n) {
        for (const char* part : {"re", "im"}) {
          const std::string p = std::string(".") + part;
          params_.add(e + ".dec" + std::to_string(i) + ".bn.gamma" + p, filled({co}, 1.0));
          params_.add(e + ".dec" + std::to_string(i) + ".bn.beta" + p, filled({co}, 0.0));
          params_.add(e + ".dec" + std::to_string(i) + ".prelu" + p, filled({co}, 0.25));
        }
      } else {
        // Bias starts at 1 + 0j so the initial mask is near the identity and
        // optimization departs from pass-through rather than a random mask.
        params_.add(e + ".dec" + std::to_string(i) + ".b.re", filled({1}, 1.0));
        params_.add(e + ".dec" + std::to_string(i) + ".b.im", filled({1}, 0.0));
      }
    }
  }
  const int d = cfg_.embed_dim, h = cfg_.attn_hidden;
  for (const char* name : {"wq", "wk", "wv"}) {
    params_.add(std::string("attn.") + name, normal({h, d}, 1.0 / std::sqrt(double(d))));
    params_.add(std::string("attn.b") + (name + 1), filled({h}, 0.0));
  }
  params_.add("attn.wo", normal({d, h}, 1.0 / std::sqrt(double(h))));
  params_.add("attn.bo", filled({d}, 0.0));
  params_.add("post.w", normal({cfg_.post_linear_features, d}, 1.0 / std::sqrt(double(d))));
  params_.add("post.b", filled({cfg_.post_linear_features}, 0.0));
  params_.add("post.prelu.re", filled({cfg_.post_linear_features}, 0.25));
  params_.add("post.prelu.im", filled({cfg_.post_linear_features}, 0.25));

  // one pair of running-stat slots per normalized complex layer
  bn_states_.assign(2ull * 2 * (n + (n - 1)), {});
}

std::string Model::summary() const {
  std::ostringstream os;
  os << "parameter tensors\n";
  for (const auto& [name, t] : params_.items) {
    os << "  " << name << " (";
    for (std::size_t i = 0; i < t.shape.size(); ++i)
      os << (i ? "x" : "") << t.shape[i];
    os << ") = " << t.numel() << "\n";
  }
  os << "total parameters: " << param_count() << "\n";
  return os.str();
}

Model::Output Model::forward(ad::Graph& g, const ad::Tensor& noisy_l,
                             const ad::Tensor& noisy_r, bool train) {
  const int n = cfg_.layers();
  const auto plan = cfg_.freq_plan();
  const int K = cfg_.bins;
  if (noisy_l.shape.size() != 3 || noisy_l.shape[0] != 2 || noisy_l.shape[1] != K ||
      noisy_r.shape != noisy_l.shape)
    throw std::invalid_argument("forward: expect (2, bins, T) inputs");
  const int T = noisy_l.shape[2];
  const int pad = (cfg_.kernel_freq - 1) / 2;

  Output out;
  out.leaves.resize(params_.items.size(), nullptr);
  auto P = [&](const std::string& name) -> ad::Var {
    const std::size_t i = params_.index.at(name);
    if (!out.leaves[i]) out.leaves[i] = g.leaf(params_.items[i].second);
    return out.leaves[i];
  };

  std::size_t bn_cursor = 0;
  auto next_bn = [&]() -> ad::BatchNormState& { return bn_states_.at(bn_cursor++); };

  CVar trans_in[2];  // per-ear flattened encodings feeding the transformer
  std::vector<CVar> skips[2];

  for (int ei = 0; ei < 2; ++ei) {
    const std::string e = kEars[ei];
    const ad::Tensor& in = ei == 0 ? noisy_l : noisy_r;
    const std::size_t plane = static_cast<std::size_t>(K) * T;
    // Stack the current frame and input_context-1 past frames as channels so
    // the frequency-only convolutions see short-term temporal modulation.
    // Only past frames are used, preserving causality.
    const int C = cfg_.input_context;
    ad::Tensor cre({C, K, T}, 0.0), cim({C, K, T}, 0.0);
    for (int c = 0; c < C; ++c) {
      for (int k = 0; k < K; ++k) {
        for (int t = c; t < T; ++t) {
          const std::size_t src = static_cast<std::size_t>(k) * T + (t - c);
          const std::size_t dst = static_cast<std::size_t>(c) * plane +
                                  static_cast<std::size_t>(k) * T + t;
          cre.v[dst] = in.v[src];
          cim.v[dst] = in.v[plane + src];
        }
      }
    }
    CVar x{g.leaf(std::move(cre), false), g.leaf(std::move(cim), false)};
    for (int i = 0; i < n; ++i) {
      const std::string l = e + ".enc" + std::to_string(i);
      x = complex_conv(g, x, {P(l + ".w.re"), P(l + ".w.im")}, cfg_.stride_freq, pad);
      auto& sre = next_bn();
      auto& sim = next_bn();
      x = complex_batchnorm(g, x, P(l + ".bn.gamma.re"), P(l + ".bn.beta.re"),
                            P(l + ".bn.gamma.im"), P(l + ".bn.beta.im"), sre, sim, train);
      x = complex_prelu(g, x, P(l + ".prelu.re"), P(l + ".prelu.im"));
      skips[ei].push_back(x);
    }
    const int cf = cfg_.encoder_channels.back() * plan.back();
    auto flat_re = ad::reshape(g, x.re, {cf, T});
    auto flat_im = ad::reshape(g, x.im, {cf, T});
    auto w = P(e + ".proj_in.w");
    auto b = P(e + ".proj_in.b");
    trans_in[ei] = {ad::add_row_bias(g, ad::matmul(g, w, flat_re), b),
                    ad::add_row_bias(g, ad::matmul(g, w, flat_im), b)};
  }

  CVar h{ad::concat0(g, trans_in[0].re, trans_in[1].re),
         ad::concat0(g, trans_in[0].im, trans_in[1].im)};
  AttnParams ap{P("attn.wq"), P("attn.bq"), P("attn.wk"), P("attn.bk"),
                P("attn.wv"), P("attn.bv"), P("attn.wo"), P("attn.bo"),
                cfg_.attn_heads, cfg_.causal};
  h = complex_transformer_step(g, h, ap);
  {
    auto w = P("post.w");
    auto b = P("post.b");
    h = {ad::prelu(g, ad::add_row_bias(g, ad::matmul(g, w, h.re), b), P("post.prelu.re")),
         ad::prelu(g, ad::add_row_bias(g, ad::matmul(g, w, h.im), b), P("post.prelu.im"))};
  }

  ad::Var masks[2];
  for (int ei = 0; ei < 2; ++ei) {
    const std::string e = kEars[ei];
    const int cf = cfg_.encoder_channels.back() * plan.back();
    auto w = P(e + ".proj_out.w");
    auto b = P(e + ".proj_out.b");
    CVar d{ad::reshape(g, ad::add_row_bias(g, ad::matmul(g, w, h.re), b),
                       {cfg_.encoder_channels.back(), plan.back(), T}),
           ad::reshape(g, ad::add_row_bias(g, ad::matmul(g, w, h.im), b),
                       {cfg_.encoder_channels.back(), plan.back(), T})};
    for (int i = 0; i < n; ++i) {
      const CVar& skip = skips[ei][n - 1 - i];
      CVar in{ad::concat0(g, d.re, skip.re), ad::concat0(g, d.im, skip.im)};
      const std::string l = e + ".dec" + std::to_string(i);
      d = complex_tconv(g, in, {P(l + ".w.re"), P(l + ".w.im")}, cfg_.stride_freq, pad);
      if (i + 1 < n) {
        auto& sre = next_bn();
        auto& sim = next_bn();
        d = complex_batchnorm(g, d, P(l + ".bn.gamma.re"), P(l + ".bn.beta.re"),
                              P(l + ".bn.gamma.im"), P(l + ".bn.beta.im"), sre, sim, train);
        d = complex_prelu(g, d, P(l + ".prelu.re"), P(l + ".prelu.im"));
      } else {
        d = {ad::add_row_bias(g, d.re, P(l + ".b.re")),
             ad::add_row_bias(g, d.im, P(l + ".b.im"))};
      }
    }
    if (cfg_.mask_magnitude_clamp > 0.0) {
      const double c = cfg_.mask_magnitude_clamp;
      auto mag = ad::sqrt_floor(g, ad::add(g, ad::square(g, d.re), ad::square(g, d.im)),
                                1e-24);
      // min(1, c/|m|) as a differentiable radial clamp
      auto factor =
          ad::scale(g, ad::recip_floor(g, ad::clamp(g, mag, c, 1e300), 1e-300), c);
      d = {ad::mul(g, d.re, factor), ad::mul(g, d.im, factor)};
    }
    masks[ei] = ad::concat0(g, ad::reshape(g, d.re, {1, K, T}),
                            ad::reshape(g, d.im, {1, K, T}));
  }
  if (bn_cursor != bn_states_.size())
    throw std::logic_error("forward: batchnorm slot bookkeeping is off");
  out.mask_l = masks[0];
  out.mask_r = masks[1];
  return out;
}

}  // namespace bse
