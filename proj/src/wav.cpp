#include "bse/wav.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace bse {
namespace {

std::uint32_t rd_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}
std::uint16_t rd_u16(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

void wr_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void wr_u16(std::ostream& os, std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open WAV file: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (data.size() < 44 || data.compare(0, 4, "RIFF") != 0 || data.compare(8, 4, "WAVE") != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* samples = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const std::string id = data.substr(pos, 4);
    const std::uint32_t len = rd_u32(data.data() + pos + 4);
    if (id == "fmt ") {
      if (len < 16) throw std::runtime_error("malformed fmt chunk: " + path);
      format = rd_u16(data.data() + pos + 8);
      channels = rd_u16(data.data() + pos + 10);
      rate = rd_u32(data.data() + pos + 12);
      bits = rd_u16(data.data() + pos + 22);
    } else if (id == "data") {
      samples = data.data() + pos + 8;
      data_len = std::min<std::uint32_t>(len, static_cast<std::uint32_t>(data.size() - pos - 8));
    }
    pos += 8 + len + (len & 1);
  }
  if (!samples || channels == 0) throw std::runtime_error("WAV file has no data chunk: " + path);
  const bool pcm16 = (format == 1 && bits == 16);
  const bool f32 = (format == 3 && bits == 32);
  if (!pcm16 && !f32)
    throw std::runtime_error("unsupported WAV format (need 16-bit PCM or 32-bit float): " + path);

  const int bytes_per = bits / 8;
  const std::size_t n_frames = data_len / (bytes_per * channels);
  WavData out;
  out.sample_rate = static_cast<int>(rate);
  out.channels.assign(channels, Waveform(n_frames));
  for (std::size_t i = 0; i < n_frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const char* p = samples + (i * channels + c) * bytes_per;
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        out.channels[c][i] = s / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        out.channels[c][i] = s;
      }
    }
  }
  return out;
}

Waveform read_wav_mono(const std::string& path, int* sample_rate) {
  WavData d = read_wav(path);
  if (sample_rate) *sample_rate = d.sample_rate;
  if (d.channels.size() == 1) return d.channels[0];
  // Downmix by averaging if a multichannel file is passed where mono is expected.
  Waveform out(d.channels[0].size(), 0.0);
  for (const auto& ch : d.channels)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += ch[i] / d.channels.size();
  return out;
}

BinauralWaveform read_wav_stereo(const std::string& path) {
  WavData d = read_wav(path);
  if (d.channels.size() != 2)
    throw std::runtime_error("expected a 2-channel WAV file: " + path);
  return {std::move(d.channels[0]), std::move(d.channels[1]), d.sample_rate};
}

void write_wav(const std::string& path, const std::vector<const Waveform*>& channels,
               int sample_rate, WavFormat fmt) {
  if (channels.empty()) throw std::invalid_argument("write_wav: no channels");
  const std::size_t n = channels[0]->size();
  for (const auto* c : channels)
    if (c->size() != n) throw std::invalid_argument("write_wav: channel length mismatch");

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write WAV file: " + path);
  const int nch = static_cast<int>(channels.size());
  const int bytes_per = fmt == WavFormat::Pcm16 ? 2 : 4;
  const std::uint32_t data_len = static_cast<std::uint32_t>(n * nch * bytes_per);

  f.write("RIFF", 4);
  wr_u32(f, 36 + data_len);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  wr_u32(f, 16);
  wr_u16(f, fmt == WavFormat::Pcm16 ? 1 : 3);
  wr_u16(f, static_cast<std::uint16_t>(nch));
  wr_u32(f, static_cast<std::uint32_t>(sample_rate));
  wr_u32(f, static_cast<std::uint32_t>(sample_rate * nch * bytes_per));
  wr_u16(f, static_cast<std::uint16_t>(nch * bytes_per));
  wr_u16(f, static_cast<std::uint16_t>(bytes_per * 8));
  f.write("data", 4);
  wr_u32(f, data_len);

  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < nch; ++c) {
      const double v = (*channels[c])[i];
      if (fmt == WavFormat::Pcm16) {
        const double clamped = std::clamp(v, -1.0, 1.0);
        const std::int16_t s = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
        f.write(reinterpret_cast<const char*>(&s), 2);
      } else {
        const float s = static_cast<float>(v);
        f.write(reinterpret_cast<const char*>(&s), 4);
      }
    }
  }
}

void write_wav_mono(const std::string& path, const Waveform& w, int sample_rate, WavFormat fmt) {
  write_wav(path, {&w}, sample_rate, fmt);
}

void write_wav_stereo(const std::string& path, const BinauralWaveform& w, WavFormat fmt) {
  write_wav(path, {&w.left, &w.right}, w.sample_rate, fmt);
}

}  // namespace bse
