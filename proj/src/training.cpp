#include "bse/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "bse/rng.hpp"

namespace bse {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (initial_lr <= 0) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (scheduler_patience < 1 || early_stop_patience < 1)
    throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (scheduler_factor <= 0 || scheduler_factor >= 1)
    throw std::invalid_argument("TrainConfig: scheduler_factor must be in (0, 1)");
  if (weights.alpha < 0 || weights.beta < 0 || weights.gamma < 0 || weights.kappa < 0 ||
      weights.alpha + weights.beta + weights.gamma + weights.kappa <= 0)
    throw std::invalid_argument("TrainConfig: weights must be nonnegative, one positive");
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads,
               OptimizerState& opt, const TrainConfig& cfg, double lr) {
  const std::size_t n = params.size();
  if (grads.size() != n) throw std::invalid_argument("adam_step: size mismatch");
  if (opt.m.size() != n) {
    opt.m.assign(n, 0.0);
    opt.v.assign(n, 0.0);
    opt.step = 0;
  }

  double norm2 = 0.0;
  for (double g : grads) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  const double clip =
      norm > cfg.grad_clip_norm && norm > 0.0 ? cfg.grad_clip_norm / norm : 1.0;

  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = clip * grads[i];
    opt.m[i] = cfg.adam_beta1 * opt.m[i] + (1.0 - cfg.adam_beta1) * g;
    opt.v[i] = cfg.adam_beta2 * opt.v[i] + (1.0 - cfg.adam_beta2) * g * g;
    params[i] -= lr * (opt.m[i] / bc1) / (std::sqrt(opt.v[i] / bc2) + cfg.adam_eps);
  }
}

namespace {

/// Scene rendered once per run; spectrograms are recomputed per step, which
/// keeps the cache at audio size (the 200-scene corpus would not fit in
/// memory as cached spectrogram tensors).
struct Prepared {
  BinauralWaveform clean;
  BinauralWaveform noisy;
};

Prepared prepare(const SceneSpec& spec, const SceneRenderer& renderer,
                 const StftConfig&) {
  RenderedScene scene = renderer.render(spec);
  return {std::move(scene.clean), std::move(scene.noisy)};
}

struct SceneEval {
  LossTerms terms;
  Model::Output net;
};

SceneEval scene_loss(ad::Graph& g, Model& model, const Prepared& p,
                     const LossWeights& w, const StftConfig& cfg, bool train) {
  const int rate = p.clean.sample_rate;
  const auto clean_l = stft(p.clean.left, cfg, rate);
  const auto clean_r = stft(p.clean.right, cfg, rate);
  const auto noisy_l = stft(p.noisy.left, cfg, rate);
  const auto noisy_r = stft(p.noisy.right, cfg, rate);
  SceneEval out;
  out.net = model.forward(g, spec_to_tensor(noisy_l), spec_to_tensor(noisy_r), train);
  auto enh_l = complex_apply_mask(g, out.net.mask_l, noisy_l);
  auto enh_r = complex_apply_mask(g, out.net.mask_r, noisy_r);
  // training steps skip zero-weighted terms; validation measures all of them
  out.terms = composite_loss_graph(g, enh_l, enh_r, clean_l, clean_r, p.clean, w, cfg,
                                   /*only_weighted=*/train);
  return out;
}

LossBreakdown to_breakdown(const LossTerms& t) {
  LossBreakdown b;
  b.snr_term = t.snr_term->val.item();
  b.stoi_term = t.stoi_term->val.item();
  b.ild_term = t.ild_term->val.item();
  b.ipd_term = t.ipd_term->val.item();
  b.total = t.total->val.item();
  b.empty_mask = t.empty_mask;
  return b;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.snr_term += b.snr_term;
  acc.stoi_term += b.stoi_term;
  acc.ild_term += b.ild_term;
  acc.ipd_term += b.ipd_term;
  acc.total += b.total;
  acc.empty_mask = acc.empty_mask || b.empty_mask;
}

void divide(LossBreakdown& acc, double n) {
  acc.snr_term /= n;
  acc.stoi_term /= n;
  acc.ild_term /= n;
  acc.ipd_term /= n;
  acc.total /= n;
}

json breakdown_json(const LossBreakdown& b) {
  return json{{"snr", b.snr_term}, {"stoi", b.stoi_term},   {"ild", b.ild_term},
              {"ipd", b.ipd_term}, {"total", b.total},      {"empty_mask", b.empty_mask}};
}

}  // namespace

std::string TrainHistory::to_json() const {
  json j;
  j["initial_val"] = breakdown_json(initial_val);
  j["stop_reason"] = stop_reason;
  j["best_epoch"] = best_epoch;
  j["best_val_loss"] = best_val_loss;
  j["epochs"] = json::array();
  for (const auto& e : epochs)
    j["epochs"].push_back({{"train", breakdown_json(e.train)},
                           {"val", breakdown_json(e.val)},
                           {"lr", e.lr}});
  return j.dump(2);
}

BinauralWaveform enhance(const BinauralWaveform& noisy, Model& model,
                         const StftConfig& cfg) {
  noisy.validate();
  if (model.config().bins != cfg.bins())
    throw std::invalid_argument("enhance: model and STFT bin counts disagree");
  const auto nl = stft(noisy.left, cfg, noisy.sample_rate);
  const auto nr = stft(noisy.right, cfg, noisy.sample_rate);
  ad::Graph g;
  auto out = model.forward(g, spec_to_tensor(nl), spec_to_tensor(nr), false);

  auto apply = [&](const ad::Tensor& mask, const ComplexSpectrogram& spec) {
    ComplexRatioMask m(spec.bins, spec.frames);
    const std::size_t plane = mask.numel() / 2;
    for (int l = 0; l < spec.frames; ++l)
      for (int k = 0; k < spec.bins; ++k) {
        const std::size_t i = static_cast<std::size_t>(k) * spec.frames + l;
        m(k, l) = {mask.v[i], mask.v[plane + i]};
      }
    return istft(apply_mask(spec, m), cfg, noisy.length());
  };
  BinauralWaveform enhanced;
  enhanced.sample_rate = noisy.sample_rate;
  enhanced.left = apply(out.mask_l->val, nl);
  enhanced.right = apply(out.mask_r->val, nr);
  return enhanced;
}

TrainResult train(const DatasetManifest& manifest, const SceneRenderer& renderer,
                  Model& model, const TrainConfig& cfg, const StftConfig& stft_cfg,
                  const std::string& out_dir, bool resume) {
  cfg.validate();
  stft_cfg.validate();
  const auto train_specs = manifest.split("train");
  const auto val_specs = manifest.split("val");
  if (train_specs.empty() || val_specs.empty())
    throw std::invalid_argument("train: manifest needs nonempty train and val splits");
  std::filesystem::create_directories(out_dir);
  const std::string best_path = out_dir + "/best.ckpt";
  const std::string last_path = out_dir + "/last.ckpt";

  std::vector<Prepared> train_scenes, val_scenes;
  train_scenes.reserve(train_specs.size());
  for (const SceneSpec* s : train_specs)
    train_scenes.push_back(prepare(*s, renderer, stft_cfg));
  val_scenes.reserve(val_specs.size());
  for (const SceneSpec* s : val_specs) val_scenes.push_back(prepare(*s, renderer, stft_cfg));

  auto validate_pass = [&]() {
    LossBreakdown acc;
    for (const Prepared& p : val_scenes) {
      ad::Graph g;
      accumulate(acc,
                 to_breakdown(scene_loss(g, model, p, cfg.weights, stft_cfg, false).terms));
    }
    divide(acc, static_cast<double>(val_scenes.size()));
    return acc;
  };

  OptimizerState opt;
  double lr = cfg.initial_lr;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0, plateau = 0, start_epoch = 0;
  long step = 0;

  TrainResult result;
  result.best_checkpoint = best_path;
  TrainHistory& hist = result.history;
  hist.stop_reason = "completed";

  if (resume) {
    std::optional<Model> loaded;
    Checkpoint meta = load_checkpoint(last_path, loaded, &opt);
    if (loaded->param_count() != model.param_count())
      throw std::runtime_error("train: resume checkpoint does not match the model");
    for (std::size_t i = 0; i < model.params().items.size(); ++i)
      model.params().items[i].second = loaded->params().items[i].second;
    model.bn_states() = loaded->bn_states();
    lr = meta.lr;
    best_val = meta.best_val_loss;
    since_best = meta.epochs_since_best;
    start_epoch = meta.epoch + 1;
    step = opt.step;
    hist.best_val_loss = best_val;
  }

  if (start_epoch == 0) hist.initial_val = validate_pass();

  std::ofstream log(out_dir + "/steps.jsonl", resume ? std::ios::app : std::ios::trunc);

  const std::size_t n_params = model.param_count();
  std::vector<double> flat_grad(n_params, 0.0);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_scenes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.below(i)]);

    LossBreakdown train_acc;
    for (std::size_t pos = 0; pos < order.size();) {
      std::fill(flat_grad.begin(), flat_grad.end(), 0.0);
      const std::size_t batch_end =
          std::min(pos + static_cast<std::size_t>(cfg.batch_size), order.size());
      const double batch_n = static_cast<double>(batch_end - pos);
      LossBreakdown batch_acc;
      for (; pos < batch_end; ++pos) {
        ad::Graph g;
        SceneEval ev = scene_loss(g, model, train_scenes[order[pos]], cfg.weights,
                                  stft_cfg, true);
        const LossBreakdown b = to_breakdown(ev.terms);
        if (!std::isfinite(b.total)) {
          hist.stop_reason = "diverged";
          throw std::runtime_error("train: non-finite loss at epoch " +
                                   std::to_string(epoch));
        }
        accumulate(batch_acc, b);
        g.backward(ev.terms.total);
        std::size_t off = 0;
        for (const ad::Var leaf : ev.net.leaves) {
          for (double gv : leaf->grad.v) flat_grad[off++] += gv / batch_n;
        }
      }

      // One flat vector view over the parameter tensors, in store order.
      std::vector<double> flat_params(n_params);
      std::size_t off = 0;
      for (const auto& [name, t] : model.params().items)
        for (double v : t.v) flat_params[off++] = v;
      adam_step(flat_params, flat_grad, opt, cfg, lr);
      off = 0;
      for (auto& [name, t] : model.params().items)
        for (double& v : t.v) v = flat_params[off++];

      accumulate(train_acc, batch_acc);
      divide(batch_acc, batch_n);
      ++step;
      log << json{{"step", step},
                  {"epoch", epoch},
                  {"lr", lr},
                  {"loss", breakdown_json(batch_acc)}}
              .dump()
          << '\n';
    }
    divide(train_acc, static_cast<double>(train_scenes.size()));

    EpochStats stats;
    stats.train = train_acc;
    stats.val = validate_pass();
    stats.lr = lr;
    hist.epochs.push_back(stats);

    Checkpoint meta;
    meta.epoch = epoch;
    meta.lr = lr;

    if (stats.val.total < best_val - cfg.min_improvement) {
      best_val = stats.val.total;
      hist.best_epoch = epoch;
      hist.best_val_loss = best_val;
      since_best = 0;
      plateau = 0;
      meta.best_val_loss = best_val;
      meta.epochs_since_best = 0;
      save_checkpoint(best_path, model, nullptr, meta);
    } else {
      ++since_best;
      ++plateau;
      if (plateau >= cfg.scheduler_patience) {
        lr *= cfg.scheduler_factor;
        plateau = 0;
      }
    }
    meta.best_val_loss = best_val;
    meta.epochs_since_best = since_best;
    meta.lr = lr;
    save_checkpoint(last_path, model, &opt, meta);

    if (since_best >= cfg.early_stop_patience) {
      hist.stop_reason = "early_stop";
      break;
    }
  }

  std::ofstream hf(out_dir + "/history.json", std::ios::trunc);
  hf << hist.to_json() << '\n';
  return result;
}

}  // namespace bse
