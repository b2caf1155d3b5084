#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bse/checkpoint.hpp"
#include "bse/corpus.hpp"
#include "bse/dataset.hpp"
#include "bse/metrics.hpp"
#include "bse/model.hpp"
#include "bse/rng.hpp"
#include "bse/training.hpp"
#include "bse/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Flat dotted-key JSON config; flags override file values, so the file is
/// applied before CLI11 parses the command line.
json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CLI::ValidationError("--config", "cannot open " + path);
  json j;
  f >> j;
  if (!j.is_object()) throw CLI::ValidationError("--config", "expected a JSON object");
  return j;
}

template <typename T>
void from_config(const json& cfg, const std::string& key, T& value) {
  if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

ModelConfig preset_model(const std::string& name) {
  ModelConfig c;
  if (name == "default") return c;
  if (name == "tiny") {
    c.encoder_channels = {4, 8, 8};
    c.embed_dim = 32;
    c.attn_hidden = 16;
    c.attn_heads = 4;
    c.post_linear_features = 64;
    return c;
  }
  throw CLI::ValidationError("--model-preset", "unknown preset " + name);
}

LossWeights parse_weights(const std::string& csv) {
  std::vector<double> v;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
  if (v.size() != 4)
    throw CLI::ValidationError("--loss-weights", "expected alpha,beta,gamma,kappa");
  return LossWeights{v[0], v[1], v[2], v[3]};
}

std::vector<double> parse_csv(const std::string& csv) {
  std::vector<double> v;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
  return v;
}

void echo_config(const std::string& out_dir, const json& effective) {
  std::ofstream f(out_dir + "/config.json", std::ios::trunc);
  f << effective.dump(2) << '\n';
}

std::vector<std::string> corpus_wavs(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav")
      files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

int cmd_corpus(const std::string& out_dir, int count, double seconds, std::uint64_t seed) {
  fs::create_directories(out_dir);
  for (int i = 0; i < count; ++i) {
    const Waveform w = synth_utterance(seconds, 16000, Rng::mix(seed, i));
    char name[32];
    std::snprintf(name, sizeof(name), "utt%04d.wav", i);
    write_wav_mono(out_dir + "/" + name, w, 16000);
  }
  std::cout << "wrote " << count << " utterances to " << out_dir << "\n";
  return kExitOk;
}

int cmd_spatialize(const std::string& corpus_dir, int synth_count, const std::string& out_dir,
                   const BuildConfig& build, std::uint64_t seed, double seconds,
                   bool write_audio, const json& effective) {
  std::vector<std::string> files;
  if (!corpus_dir.empty()) {
    files = corpus_wavs(corpus_dir);
    if (files.empty()) {
      std::cerr << "error: no WAV files in corpus dir " << corpus_dir << "\n";
      return kExitUsage;
    }
  } else {
    for (int i = 0; i < synth_count; ++i)
      files.push_back("synth:" + std::to_string(Rng::mix(seed, 50000 + i)));
  }

  fs::create_directories(out_dir);
  echo_config(out_dir, effective);
  DatasetManifest manifest = build_dataset(files, build, seed);
  save_manifest(out_dir + "/manifest.jsonl", manifest);

  SceneRenderer renderer(make_synthetic_hrirs(HeadModelConfig{}, 16000), seconds, 16000);
  std::ofstream scenes(out_dir + "/scenes.jsonl", std::ios::trunc);
  for (const SceneSpec& spec : manifest.records) {
    const RenderedScene scene = renderer.render(spec);
    if (write_audio) {
      write_wav_stereo(out_dir + "/" + spec.id + "_clean.wav", scene.clean);
      write_wav_stereo(out_dir + "/" + spec.id + "_noise.wav", scene.noise);
      write_wav_stereo(out_dir + "/" + spec.id + "_noisy.wav", scene.noisy);
    }
    scenes << json{{"id", spec.id},
                   {"target_snr_db", spec.target_snr_db},
                   {"snr_left_db", scene.snr_left_db},
                   {"snr_right_db", scene.snr_right_db}}
                  .dump()
           << '\n';
  }
  std::cout << "rendered " << manifest.records.size() << " scenes to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& manifest_path, const std::string& out_dir,
              const ModelConfig& mc, const TrainConfig& tc, const StftConfig& sc,
              double seconds, bool resume, const json& effective) {
  if (!fs::exists(manifest_path)) {
    std::cerr << "error: manifest not found: " << manifest_path << "\n";
    return kExitUsage;
  }
  if (!resume && fs::exists(out_dir + "/history.json")) {
    std::cerr << "error: " << out_dir
              << " already holds a finished run; pick a new directory or --resume\n";
    return kExitUsage;
  }
  const DatasetManifest manifest = load_manifest(manifest_path);
  SceneRenderer renderer(make_synthetic_hrirs(HeadModelConfig{}, 16000), seconds, 16000);
  Model model(mc, tc.seed + 1);
  fs::create_directories(out_dir);
  echo_config(out_dir, effective);
  TrainResult res = train(manifest, renderer, model, tc, sc, out_dir, resume);
  std::cout << "stop reason: " << res.history.stop_reason
            << ", best val loss: " << res.history.best_val_loss << "\n"
            << "best checkpoint: " << res.best_checkpoint << "\n";
  return kExitOk;
}

int cmd_enhance(const std::string& in_path, const std::string& ckpt_path,
                const std::string& out_path, const StftConfig& sc) {
  const WavData in = read_wav(in_path);
  if (in.channels.size() != 2) {
    std::cerr << "error: enhance needs a stereo input WAV (left and right ears)\n";
    return kExitUsage;
  }
  BinauralWaveform noisy{in.channels[0], in.channels[1], in.sample_rate};
  const bool resampled = in.sample_rate != 16000;
  if (resampled) {
    std::cerr << "warning: resampling " << in.sample_rate << " Hz input to 16000 Hz\n";
    noisy.left = resample(noisy.left, in.sample_rate, 16000);
    noisy.right = resample(noisy.right, in.sample_rate, 16000);
    noisy.sample_rate = 16000;
  }
  std::optional<Model> model;
  load_checkpoint(ckpt_path, model);
  BinauralWaveform out = enhance(noisy, *model, sc);
  if (resampled) {
    out.left = resample(out.left, 16000, in.sample_rate);
    out.right = resample(out.right, 16000, in.sample_rate);
    out.left.resize(in.channels[0].size());
    out.right.resize(in.channels[0].size());
    out.sample_rate = in.sample_rate;
  }
  write_wav_stereo(out_path, out);
  return kExitOk;
}

int cmd_evaluate(const std::string& manifest_path, const std::string& ckpt_path,
                 const std::string& out_dir, const std::string& split,
                 const std::vector<double>& buckets, double seconds, const StftConfig& sc,
                 const json& effective) {
  if (!fs::exists(manifest_path)) {
    std::cerr << "error: manifest not found: " << manifest_path << "\n";
    return kExitUsage;
  }
  const DatasetManifest manifest = load_manifest(manifest_path);
  std::optional<Model> model;
  load_checkpoint(ckpt_path, model);
  SceneRenderer renderer(make_synthetic_hrirs(HeadModelConfig{}, 16000), seconds, 16000);
  EvalReport report = evaluate_manifest(manifest, split, renderer, *model, sc, buckets);
  if (report.records.empty())
    std::cerr << "warning: no scenes in split '" << split << "'\n";
  fs::create_directories(out_dir);
  echo_config(out_dir, effective);
  std::ofstream(out_dir + "/report.json", std::ios::trunc) << report.to_json() << '\n';
  std::ofstream(out_dir + "/report.txt", std::ios::trunc) << report.to_table();
  std::cout << report.to_table();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binaural speech enhancement toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file with flat dotted keys")
      ->envname("BSE_CONFIG");

  // Parsed lazily so --config can seed the defaults that flags override.
  json cfg = json::object();
  for (int i = 1; i < argc - 1; ++i)
    if (std::string(argv[i]) == "--config") cfg = load_config(argv[i + 1]);
  if (cfg.empty())
    if (const char* env = std::getenv("BSE_CONFIG")) cfg = load_config(env);

  std::uint64_t seed = 0;
  from_config(cfg, "seed", seed);
  app.add_option("--seed", seed, "global random seed")->envname("BSE_SEED");

  StftConfig stft_cfg;
  from_config(cfg, "stft.fft_length", stft_cfg.fft_length);
  from_config(cfg, "stft.window_length", stft_cfg.window_length);
  from_config(cfg, "stft.hop_length", stft_cfg.hop_length);

  double seconds = 2.0;
  from_config(cfg, "scene.seconds", seconds);

  // corpus
  auto* corpus = app.add_subcommand("corpus", "generate a synthetic utterance corpus");
  std::string corpus_out;
  int corpus_count = 20;
  double corpus_seconds = 4.0;
  corpus->add_option("--out", corpus_out, "output directory")->required();
  corpus->add_option("--count", corpus_count, "number of utterances");
  corpus->add_option("--seconds", corpus_seconds, "utterance length");

  // spatialize
  auto* spat = app.add_subcommand("spatialize", "synthesize binaural scenes");
  std::string spat_corpus, spat_out;
  int spat_synth = 0;
  bool spat_no_audio = false;
  BuildConfig build;
  from_config(cfg, "dataset.snr_lo_db", build.snr_lo_db);
  from_config(cfg, "dataset.snr_hi_db", build.snr_hi_db);
  from_config(cfg, "dataset.train_ratio", build.train_ratio);
  from_config(cfg, "dataset.val_ratio", build.val_ratio);
  std::string noise_csv = "wgn,ssn";
  from_config(cfg, "dataset.noise_types", noise_csv);
  spat->add_option("--corpus", spat_corpus, "directory of mono WAV utterances");
  spat->add_option("--synth-count", spat_synth,
                   "generate this many synthetic utterances instead of a corpus");
  spat->add_option("--out", spat_out, "output directory")->required();
  spat->add_option("--count", build.count, "number of scenes");
  spat->add_option("--snr-lo", build.snr_lo_db, "lowest target SNR (dB)");
  spat->add_option("--snr-hi", build.snr_hi_db, "highest target SNR (dB)");
  spat->add_option("--noise", noise_csv, "comma-separated noise types (wgn,ssn)");
  spat->add_flag("--no-audio", spat_no_audio, "write only the manifest and scene log");

  // train
  auto* tr = app.add_subcommand("train", "train a mask-estimation model");
  std::string tr_manifest, tr_out, tr_preset = "default", tr_weights_csv;
  bool tr_resume = false;
  TrainConfig tc;
  from_config(cfg, "train.epochs", tc.epochs);
  from_config(cfg, "train.initial_lr", tc.initial_lr);
  from_config(cfg, "train.batch_size", tc.batch_size);
  from_config(cfg, "train.early_stop_patience", tc.early_stop_patience);
  from_config(cfg, "model.preset", tr_preset);
  tr->add_option("--manifest", tr_manifest, "scene manifest (JSON Lines)")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--epochs", tc.epochs, "training epochs");
  tr->add_option("--lr", tc.initial_lr, "initial learning rate");
  tr->add_option("--batch-size", tc.batch_size, "scenes per optimizer step");
  tr->add_option("--loss-weights", tr_weights_csv, "alpha,beta,gamma,kappa");
  tr->add_option("--model-preset", tr_preset, "default | tiny");
  tr->add_flag("--resume", tr_resume, "continue from last.ckpt in the run directory");

  // enhance
  auto* enh = app.add_subcommand("enhance", "denoise a stereo WAV");
  std::string enh_in, enh_ckpt, enh_out;
  enh->add_option("--in", enh_in, "noisy stereo WAV")->required();
  enh->add_option("--checkpoint", enh_ckpt, "model checkpoint")->required();
  enh->add_option("--out", enh_out, "output WAV")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a model over a manifest split");
  std::string ev_manifest, ev_ckpt, ev_out, ev_split = "test", ev_buckets = "-6,0,6";
  ev->add_option("--manifest", ev_manifest, "scene manifest")->required();
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--out", ev_out, "report directory")->required();
  ev->add_option("--split", ev_split, "manifest split to score");
  ev->add_option("--buckets", ev_buckets, "comma-separated SNR bucket centers (dB)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    json effective = cfg;
    effective["seed"] = seed;
    effective["scene.seconds"] = seconds;
    effective["stft.fft_length"] = stft_cfg.fft_length;
    effective["stft.window_length"] = stft_cfg.window_length;
    effective["stft.hop_length"] = stft_cfg.hop_length;

    if (*corpus) return cmd_corpus(corpus_out, corpus_count, corpus_seconds, seed);
    if (*spat) {
      if (spat_corpus.empty() && spat_synth <= 0) {
        std::cerr << "error: pass --corpus or --synth-count\n";
        return kExitUsage;
      }
      build.noise_types.clear();
      std::stringstream ss(noise_csv);
      std::string tok;
      while (std::getline(ss, tok, ',')) build.noise_types.push_back(noise_type_from_string(tok));
      effective["dataset.count"] = build.count;
      effective["dataset.snr_lo_db"] = build.snr_lo_db;
      effective["dataset.snr_hi_db"] = build.snr_hi_db;
      effective["dataset.noise_types"] = noise_csv;
      return cmd_spatialize(spat_corpus, spat_synth, spat_out, build, seed, seconds,
                            !spat_no_audio, effective);
    }
    if (*tr) {
      tc.seed = seed;
      if (!tr_weights_csv.empty()) tc.weights = parse_weights(tr_weights_csv);
      const ModelConfig mc = preset_model(tr_preset);
      effective["train.epochs"] = tc.epochs;
      effective["train.initial_lr"] = tc.initial_lr;
      effective["train.batch_size"] = tc.batch_size;
      effective["model.preset"] = tr_preset;
      effective["loss.weights"] = {tc.weights.alpha, tc.weights.beta, tc.weights.gamma,
                                   tc.weights.kappa};
      return cmd_train(tr_manifest, tr_out, mc, tc, stft_cfg, seconds, tr_resume, effective);
    }
    if (*enh) return cmd_enhance(enh_in, enh_ckpt, enh_out, stft_cfg);
    if (*ev)
      return cmd_evaluate(ev_manifest, ev_ckpt, ev_out, ev_split, parse_csv(ev_buckets),
                          seconds, stft_cfg, effective);
    return kExitUsage;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
