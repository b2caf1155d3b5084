// Python bindings for the core DSP, metric, and enhancement entry points.
#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>
#include <optional>
#include <stdexcept>

#include "bse/checkpoint.hpp"
#include "bse/corpus.hpp"
#include "bse/metrics.hpp"
#include "bse/model.hpp"
#include "bse/stft.hpp"
#include "bse/stoi.hpp"
#include "bse/training.hpp"
#include "bse/types.hpp"

namespace py = pybind11;
using namespace bse;

namespace {

py::array_t<double> to_array(const Waveform& w) {
  // Shape, strides, and source pointer spelled out; the constructor copies.
  return py::array_t<double>({static_cast<py::ssize_t>(w.size())},
                             {static_cast<py::ssize_t>(sizeof(double))}, w.data());
}

Waveform to_waveform(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D float array");
  return Waveform(a.data(), a.data() + a.size());
}

using ComplexArray =
    py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;

py::array_t<std::complex<double>> spec_to_array(const ComplexSpectrogram& s) {
  std::vector<std::complex<double>> buf(s.v.size());
  for (int k = 0; k < s.bins; ++k)
    for (int l = 0; l < s.frames; ++l)
      buf[static_cast<std::size_t>(k) * s.frames + l] =
          s.v[static_cast<std::size_t>(l) * s.bins + k];
  const auto c = static_cast<py::ssize_t>(sizeof(std::complex<double>));
  return py::array_t<std::complex<double>>({py::ssize_t(s.bins), py::ssize_t(s.frames)},
                                           {c * s.frames, c}, buf.data());
}

ComplexSpectrogram array_to_spec(const ComplexArray& a, const StftConfig& cfg,
                                 int sample_rate) {
  if (a.ndim() != 2 || a.shape(0) != cfg.bins())
    throw std::invalid_argument("expected a (bins, frames) complex array with " +
                                std::to_string(cfg.bins()) + " bins");
  const int bins = static_cast<int>(a.shape(0));
  const int frames = static_cast<int>(a.shape(1));
  ComplexSpectrogram s(bins, frames);
  s.sample_rate = sample_rate;
  s.config = cfg;
  const auto* d = a.data();
  for (int k = 0; k < bins; ++k)
    for (int l = 0; l < frames; ++l)
      s.v[static_cast<std::size_t>(l) * bins + k] =
          d[static_cast<std::size_t>(k) * frames + l];
  return s;
}

/// Loads a trained checkpoint once and enhances stereo signals with it.
class Enhancer {
 public:
  explicit Enhancer(const std::string& checkpoint_path) {
    load_checkpoint(checkpoint_path, model_);
  }

  py::tuple enhance_stereo(const py::array_t<double>& left,
                           const py::array_t<double>& right, int sample_rate) {
    BinauralWaveform noisy{to_waveform(left), to_waveform(right), sample_rate};
    const bool resampled = sample_rate != 16000;
    const std::size_t in_len = noisy.left.size();
    if (resampled) {
      noisy.left = resample(noisy.left, sample_rate, 16000);
      noisy.right = resample(noisy.right, sample_rate, 16000);
      noisy.sample_rate = 16000;
    }
    BinauralWaveform out = bse::enhance(noisy, *model_, StftConfig{});
    if (resampled) {
      out.left = resample(out.left, 16000, sample_rate);
      out.right = resample(out.right, 16000, sample_rate);
      out.left.resize(in_len);
      out.right.resize(in_len);
    }
    return py::make_tuple(to_array(out.left), to_array(out.right));
  }

  std::size_t parameter_count() const { return model_->param_count(); }

 private:
  std::optional<Model> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "binaural speech enhancement core";

  m.def(
      "synth_utterance",
      [](double seconds, int sample_rate, std::uint64_t seed) {
        return to_array(synth_utterance(seconds, sample_rate, seed));
      },
      py::arg("seconds"), py::arg("sample_rate") = 16000, py::arg("seed") = 0,
      "Deterministic synthetic speech-like utterance.");

  m.def(
      "stft",
      [](const py::array_t<double>& x, int sample_rate) {
        return spec_to_array(stft(to_waveform(x), StftConfig{}, sample_rate));
      },
      py::arg("x"), py::arg("sample_rate") = 16000,
      "STFT with the toolkit's analysis settings; returns (bins, frames) complex.");

  m.def(
      "istft",
      [](const ComplexArray& spec, std::size_t out_length, int sample_rate) {
        return to_array(istft(array_to_spec(spec, StftConfig{}, sample_rate),
                              StftConfig{}, out_length));
      },
      py::arg("spec"), py::arg("out_length"), py::arg("sample_rate") = 16000,
      "Inverse STFT back to a waveform of the given length.");

  m.def(
      "stoi",
      [](const py::array_t<double>& clean, const py::array_t<double>& processed,
         int sample_rate, bool smooth) {
        return stoi(to_waveform(clean), to_waveform(processed), sample_rate,
                    smooth ? StoiMode::Smooth : StoiMode::Eval);
      },
      py::arg("clean"), py::arg("processed"), py::arg("sample_rate") = 16000,
      py::arg("smooth") = false, "Short-time intelligibility score in [0, 1].");

  m.def(
      "fw_segsnr",
      [](const py::array_t<double>& clean, const py::array_t<double>& test,
         int sample_rate) {
        return fw_segsnr(to_waveform(clean), to_waveform(test), sample_rate);
      },
      py::arg("clean"), py::arg("test"), py::arg("sample_rate") = 16000,
      "Frequency-weighted segmental SNR in dB.");

  m.def(
      "better_ear_stoi",
      [](const py::array_t<double>& clean_l, const py::array_t<double>& clean_r,
         const py::array_t<double>& test_l, const py::array_t<double>& test_r,
         int sample_rate) {
        return better_ear_stoi(
            {to_waveform(clean_l), to_waveform(clean_r), sample_rate},
            {to_waveform(test_l), to_waveform(test_r), sample_rate});
      },
      py::arg("clean_l"), py::arg("clean_r"), py::arg("test_l"), py::arg("test_r"),
      py::arg("sample_rate") = 16000, "max(STOI_L, STOI_R) in eval mode.");

  py::class_<Enhancer>(m, "Enhancer",
                       "Loads a trained checkpoint and enhances stereo audio.")
      .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
      .def("enhance", &Enhancer::enhance_stereo, py::arg("left"), py::arg("right"),
           py::arg("sample_rate") = 16000,
           "Returns the enhanced (left, right) pair at the input rate.")
      .def_property_readonly("parameter_count", &Enhancer::parameter_count);
}
