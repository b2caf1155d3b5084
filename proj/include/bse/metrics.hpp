#pragma once

#include <string>
#include <vector>

#include "bse/dataset.hpp"
#include "bse/model.hpp"
#include "bse/stft.hpp"
#include "bse/types.hpp"

namespace bse {

/// Frequency-weighted segmental SNR in dB: per-frame mel-band SNRs clamped
/// to [-10, 35], weighted by clean band energy, averaged over frames within
/// 40 dB of the loudest frame.
double fw_segsnr(const Waveform& clean, const Waveform& test, int sample_rate);

/// Mean over ears of fw_segsnr(clean, enhanced) - fw_segsnr(clean, noisy).
double delta_fw_segsnr(const BinauralWaveform& clean, const BinauralWaveform& noisy,
                       const BinauralWaveform& enhanced);

/// max(STOI_L, STOI_R) in eval mode.
double better_ear_stoi(const BinauralWaveform& clean, const BinauralWaveform& test);

struct CueErrors {
  double ild_db = 0.0;
  double ipd_deg = 0.0;
  bool empty_mask = false;
};

/// Level and phase difference errors against the clean-signal joint speech
/// mask; identical arithmetic to the corresponding loss terms.
CueErrors cue_errors(const BinauralWaveform& clean, const BinauralWaveform& enhanced,
                     const StftConfig& cfg);

struct UtteranceRecord {
  std::string id;
  double input_snr_db = 0.0;
  double stoi_noisy = 0.0;
  double stoi_enhanced = 0.0;
  double delta_fw_segsnr_db = 0.0;
  double ild_err_db = 0.0;
  double ipd_err_deg = 0.0;
};

struct BucketAggregate {
  double center_snr_db = 0.0;
  int count = 0;
  double stoi_noisy = 0.0;
  double stoi_enhanced = 0.0;
  double delta_fw_segsnr_db = 0.0;
  double ild_err_db = 0.0;
  double ipd_err_deg = 0.0;
};

struct EvalReport {
  std::vector<UtteranceRecord> records;
  std::vector<BucketAggregate> buckets;

  std::string to_json() const;
  /// Aligned table, one row per metric, one column per SNR bucket.
  std::string to_table() const;
};

/// Nearest-center bucket means over the records.
std::vector<BucketAggregate> aggregate(const std::vector<UtteranceRecord>& records,
                                       const std::vector<double>& bucket_centers);

/// Runs the model over one manifest split and scores every scene.
EvalReport evaluate_manifest(const DatasetManifest& manifest, const std::string& split,
                             const SceneRenderer& renderer, Model& model,
                             const StftConfig& cfg,
                             const std::vector<double>& bucket_centers);

}  // namespace bse
