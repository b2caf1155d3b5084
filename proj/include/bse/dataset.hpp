#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bse/spatial.hpp"
#include "bse/types.hpp"

namespace bse {

/// One synthetic listening scene: a clean utterance placed at an azimuth in
/// diffuse noise at a target average SNR.
struct SceneSpec {
  std::string id;
  std::string clean_file;
  double azimuth_deg = 0.0;
  NoiseType noise = NoiseType::Wgn;
  std::uint64_t seed = 0;
  double target_snr_db = 0.0;
  std::string split = "train";
};

struct DatasetManifest {
  std::vector<SceneSpec> records;

  std::vector<const SceneSpec*> split(const std::string& name) const;
};

/// JSON Lines, one record per scene.
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

struct BuildConfig {
  int count = 200;
  double train_ratio = 0.8;
  double val_ratio = 0.1;  // remainder is test
  double snr_lo_db = -7.0;
  double snr_hi_db = 16.0;
  double azimuth_lo_deg = -90.0;
  double azimuth_hi_deg = 90.0;
  double azimuth_step_deg = 5.0;
  std::vector<NoiseType> noise_types = {NoiseType::Wgn, NoiseType::Ssn};
};

/// Deterministic scene assignment over the corpus files; splits are disjoint
/// by source utterance.
DatasetManifest build_dataset(const std::vector<std::string>& corpus_files,
                              const BuildConfig& cfg, std::uint64_t seed);

struct RenderedScene {
  BinauralWaveform clean;
  BinauralWaveform noise;
  BinauralWaveform noisy;
  double snr_left_db = 0.0;
  double snr_right_db = 0.0;
};

/// Renders scenes to fixed-length binaural audio: crop, spatialize, add
/// isotropic noise at the target SNR. Caches corpus files and the
/// speech-shaped-noise filter; rendering itself is deterministic per spec.
class SceneRenderer {
 public:
  SceneRenderer(HrirSet hrirs, double seconds = 2.0, int sample_rate = 16000);

  RenderedScene render(const SceneSpec& spec) const;
  int sample_rate() const { return sample_rate_; }
  double seconds() const { return seconds_; }

 private:
  const Waveform& utterance(const std::string& path) const;

  HrirSet hrirs_;
  double seconds_;
  int sample_rate_;
  mutable std::map<std::string, Waveform> cache_;
};

}  // namespace bse
