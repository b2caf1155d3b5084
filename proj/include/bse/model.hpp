#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bse/autodiff.hpp"
#include "bse/stft.hpp"
#include "bse/types.hpp"

namespace bse {

struct ModelConfig {
  std::vector<int> encoder_channels = {16, 32, 64, 128, 256, 256};
  int kernel_freq = 5;
  int kernel_time = 1;
  int stride_freq = 2;
  int embed_dim = 512;
  int attn_hidden = 128;
  int attn_heads = 32;
  int post_linear_features = 1024;
  bool causal = true;
  // Number of consecutive frames (current plus past) stacked as input
  // channels, giving the frequency-only convolutions short-term temporal
  // context without breaking causality.
  int input_context = 3;
  double mask_magnitude_clamp = 0.0;  // <= 0 leaves the mask unbounded
  int bins = 257;

  int layers() const { return static_cast<int>(encoder_channels.size()); }
  /// Frequency sizes after each encoder layer, starting at bins.
  std::vector<int> freq_plan() const;
  void validate() const;
};

/// Named, ordered parameter tensors; order is the optimizer's flat layout.
struct ParamStore {
  std::vector<std::pair<std::string, ad::Tensor>> items;
  std::map<std::string, std::size_t> index;

  std::size_t add(std::string name, ad::Tensor t);
  ad::Tensor& at(const std::string& name);
  const ad::Tensor& at(const std::string& name) const;
  std::size_t total_values() const;
};

/// Complex tensor as a pair of equally shaped real graph nodes.
struct CVar {
  ad::Var re = nullptr;
  ad::Var im = nullptr;
};

CVar complex_conv(ad::Graph& g, CVar x, CVar w, int stride, int pad_freq);
CVar complex_tconv(ad::Graph& g, CVar x, CVar w, int stride, int pad_freq);
CVar complex_prelu(ad::Graph& g, CVar x, ad::Var slopes_re, ad::Var slopes_im);
CVar complex_batchnorm(ad::Graph& g, CVar x, ad::Var gamma_re, ad::Var beta_re,
                       ad::Var gamma_im, ad::Var beta_im, ad::BatchNormState& state_re,
                       ad::BatchNormState& state_im, bool train);

struct AttnParams {
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;
  bool causal = true;
};

/// Projected multi-head attention with query from `a`, key and value from `b`.
ad::Var mha(ad::Graph& g, ad::Var a, ad::Var b, const AttnParams& p);

/// One complex transformer evaluation from four shared-weight attention
/// calls: re' = (re(*)re) - (im(*)im), im' = (re(*)im) + (im(*)re).
CVar complex_transformer_step(ad::Graph& g, CVar h, const AttnParams& p);

/// Complex mask applied to a fixed noisy spectrogram; mask and result use the
/// (2, bins, frames) stacked-plane layout.
ad::Var complex_apply_mask(ad::Graph& g, ad::Var mask, const ComplexSpectrogram& noisy);

/// Mask-estimating network: per-ear complex conv encoders, a complex
/// attention transformer over the concatenated ears, per-ear transposed-conv
/// decoders with skip connections.
class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t seed = 1234);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::vector<ad::BatchNormState>& bn_states() { return bn_states_; }
  const std::vector<ad::BatchNormState>& bn_states() const { return bn_states_; }
  std::size_t param_count() const { return params_.total_values(); }
  std::string summary() const;

  struct Output {
    ad::Var mask_l = nullptr;  // (2, bins, frames)
    ad::Var mask_r = nullptr;
    std::vector<ad::Var> leaves;  // parallel to params().items
  };
  /// noisy_l/noisy_r use the (2, bins, frames) stacked-plane layout.
  Output forward(ad::Graph& g, const ad::Tensor& noisy_l, const ad::Tensor& noisy_r,
                 bool train);

 private:
  ModelConfig cfg_;
  ParamStore params_;
  std::vector<ad::BatchNormState> bn_states_;
};

}  // namespace bse
