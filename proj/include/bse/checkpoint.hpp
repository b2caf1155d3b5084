#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bse/model.hpp"

namespace bse {

/// Flat Adam moment buffers laid out like the model's parameter order.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

struct Checkpoint {
  int version = 1;
  ModelConfig config;
  int epoch = 0;
  double best_val_loss = 0.0;
  double lr = 0.0;
  int epochs_since_best = 0;
};

/// Binary container: magic, JSON header (config, tensor directory, metadata),
/// then raw little-endian doubles. Written atomically (temp file + rename).
void save_checkpoint(const std::string& path, const Model& model,
                     const OptimizerState* opt, const Checkpoint& meta);

/// Rebuilds the model (parameters and batchnorm running statistics) exactly
/// as saved. `opt` is filled when the file carries optimizer state.
Checkpoint load_checkpoint(const std::string& path, std::optional<Model>& model,
                           OptimizerState* opt = nullptr);

}  // namespace bse
