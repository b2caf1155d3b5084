#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bse/checkpoint.hpp"
#include "bse/dataset.hpp"
#include "bse/losses.hpp"
#include "bse/model.hpp"
#include "bse/stft.hpp"

namespace bse {

struct TrainConfig {
  int epochs = 100;
  double initial_lr = 0.001;
  double scheduler_factor = 0.5;  // reduce-on-plateau
  int scheduler_patience = 1;     // epochs without improvement before reducing
  int early_stop_patience = 3;
  double min_improvement = 0.0;  // validation must beat the best by this much
  int batch_size = 8;
  std::uint64_t seed = 0;
  LossWeights weights;
  double grad_clip_norm = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

struct EpochStats {
  LossBreakdown train;
  LossBreakdown val;
  double lr = 0.0;
};

struct TrainHistory {
  LossBreakdown initial_val;  // validation pass before any update
  std::vector<EpochStats> epochs;
  std::string stop_reason;  // "completed" | "early_stop" | "diverged"
  int best_epoch = -1;
  double best_val_loss = 0.0;

  std::string to_json() const;
};

/// One Adam update over the flat parameter vector; clips the global gradient
/// norm first.
void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               OptimizerState& opt, const TrainConfig& cfg, double lr);

struct TrainResult {
  TrainHistory history;
  std::string best_checkpoint;  // path of the retained best-validation model
};

/// Full optimization loop over the manifest's train/val splits. Writes
/// best.ckpt and last.ckpt plus history.json and a per-step metrics log
/// (JSON Lines) into out_dir. Resumes from last.ckpt when `resume` is set.
TrainResult train(const DatasetManifest& manifest, const SceneRenderer& renderer,
                  Model& model, const TrainConfig& cfg, const StftConfig& stft_cfg,
                  const std::string& out_dir, bool resume = false);

/// STFT -> mask estimation -> mask application -> ISTFT, both ears; output
/// length equals input length.
BinauralWaveform enhance(const BinauralWaveform& noisy, Model& model,
                         const StftConfig& cfg);

}  // namespace bse
