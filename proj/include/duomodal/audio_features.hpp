#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "duomodal/errors.hpp"
#include "duomodal/serial.hpp"

namespace duomodal {

// 80 log-mel bins plus their first-order deltas, 160 columns per frame.
struct AudioFeatureMatrix {
  static constexpr std::size_t kNumMels = 80;
  static constexpr std::size_t kFeatureDim = 160;
  static constexpr double kFrameWidthMs = 50.0;
  static constexpr double kFrameStepMs = 12.5;

  std::size_t frames = 0;
  std::uint32_t sample_rate_hz = 16000;
  std::vector<float> data;  // frames x kFeatureDim, row-major

  static AudioFeatureMatrix zeros(std::size_t n_frames) {
    AudioFeatureMatrix m;
    m.frames = n_frames;
    m.data.assign(n_frames * kFeatureDim, 0.f);
    return m;
  }

  float* row(std::size_t t) { return data.data() + t * kFeatureDim; }
  const float* row(std::size_t t) const {
    return data.data() + t * kFeatureDim;
  }
  float& at(std::size_t t, std::size_t f) { return data[t * kFeatureDim + f]; }
  float at(std::size_t t, std::size_t f) const {
    return data[t * kFeatureDim + f];
  }
};

namespace dsp {

inline std::size_t frame_width_samples(std::uint32_t sample_rate) {
  return static_cast<std::size_t>(
      std::llround(AudioFeatureMatrix::kFrameWidthMs * sample_rate / 1000.0));
}

inline std::size_t frame_step_samples(std::uint32_t sample_rate) {
  return static_cast<std::size_t>(
      std::llround(AudioFeatureMatrix::kFrameStepMs * sample_rate / 1000.0));
}

inline std::size_t frame_count(std::size_t num_samples,
                               std::uint32_t sample_rate) {
  const std::size_t w = frame_width_samples(sample_rate);
  const std::size_t s = frame_step_samples(sample_rate);
  if (num_samples < w) return 0;
  return (num_samples - w) / s + 1;
}

// In-place iterative radix-2 FFT; n must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);  // HTK scale
}

inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Triangular mel filterbank over one-sided FFT bins, 0 Hz to Nyquist.
// weights[m * n_bins + k].
inline std::vector<double> mel_filterbank(std::uint32_t sample_rate,
                                          std::size_t n_fft,
                                          std::size_t n_mels) {
  const std::size_t n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1.0));
  std::vector<double> weights(n_mels * n_bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double f_left = edges[m], f_center = edges[m + 1],
                 f_right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      double w = 0.0;
      if (f > f_left && f < f_center)
        w = (f - f_left) / (f_center - f_left);
      else if (f >= f_center && f < f_right)
        w = (f_right - f) / (f_right - f_center);
      weights[m * n_bins + k] = w;
    }
  }
  return weights;
}

inline double mel_filter_center_hz(std::uint32_t sample_rate,
                                   std::size_t n_mels, std::size_t m) {
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  return mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (n_mels + 1.0));
}

}  // namespace dsp

// Overlapping frames of width 50 ms and hop 12.5 ms with a periodic Hann
// window applied.
inline std::vector<std::vector<double>> frame_signal(
    const std::vector<double>& samples, std::uint32_t sample_rate) {
  check_data(sample_rate > 0, "frame_signal: sample rate must be positive");
  const std::size_t w = dsp::frame_width_samples(sample_rate);
  const std::size_t s = dsp::frame_step_samples(sample_rate);
  if (samples.size() < w)
    throw_data("frame_signal: signal of " + std::to_string(samples.size()) +
               " samples is shorter than one " + std::to_string(w) +
               "-sample frame");
  const std::size_t n_frames = dsp::frame_count(samples.size(), sample_rate);
  std::vector<double> window(w);
  for (std::size_t i = 0; i < w; ++i)
    window[i] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(w));
  std::vector<std::vector<double>> frames(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    frames[t].resize(w);
    const double* src = samples.data() + t * s;
    for (std::size_t i = 0; i < w; ++i) frames[t][i] = src[i] * window[i];
  }
  return frames;
}

// Power spectrum of a windowed frame -> 80 triangular mel filters -> natural
// log with floor 1e-10.
inline std::vector<double> log_mel(const std::vector<double>& frame,
                                   std::uint32_t sample_rate,
                                   std::size_t n_mels = 80) {
  const std::size_t n_fft = dsp::next_pow2(frame.size());
  const std::size_t n_bins = n_fft / 2 + 1;
  std::vector<std::complex<double>> buf(n_fft, {0.0, 0.0});
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = {frame[i], 0.0};
  dsp::fft(buf);
  std::vector<double> power(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
  struct FbKey {
    std::uint32_t rate;
    std::size_t n_fft, n_mels;
    bool operator==(const FbKey&) const = default;
  };
  thread_local FbKey cached_key{0, 0, 0};
  thread_local std::vector<double> cached_fb;
  if (!(cached_key == FbKey{sample_rate, n_fft, n_mels})) {
    cached_fb = dsp::mel_filterbank(sample_rate, n_fft, n_mels);
    cached_key = {sample_rate, n_fft, n_mels};
  }
  const auto& weights = cached_fb;
  std::vector<double> out(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m) {
    double e = 0.0;
    const double* wr = weights.data() + m * n_bins;
    for (std::size_t k = 0; k < n_bins; ++k) e += wr[k] * power[k];
    out[m] = std::log(std::max(e, 1e-10));
  }
  return out;
}

// delta[t] = (mel[t+1] - mel[t-1]) / 2 with edge replication, concatenated
// to the right of the mel block.
inline AudioFeatureMatrix add_deltas(
    const std::vector<std::vector<double>>& mel, std::uint32_t sample_rate) {
  constexpr std::size_t M = AudioFeatureMatrix::kNumMels;
  check_contract(!mel.empty(), "add_deltas: need at least one frame");
  AudioFeatureMatrix out = AudioFeatureMatrix::zeros(mel.size());
  out.sample_rate_hz = sample_rate;
  const std::size_t T = mel.size();
  for (std::size_t t = 0; t < T; ++t) {
    check_contract(mel[t].size() == M, "add_deltas: expected 80 mel bins");
    const auto& prev = mel[t == 0 ? 0 : t - 1];
    const auto& next = mel[t + 1 >= T ? T - 1 : t + 1];
    for (std::size_t j = 0; j < M; ++j) {
      out.at(t, j) = static_cast<float>(mel[t][j]);
      out.at(t, M + j) = static_cast<float>((next[j] - prev[j]) / 2.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV (RIFF, PCM 16-bit LE)

struct WavData {
  std::uint32_t sample_rate = 0;
  std::vector<double> samples;  // mono, scaled to [-1, 1)
};

inline WavData read_wav(const std::string& path) {
  auto is = open_in(path);
  char riff[4];
  read_bytes(is, riff, 4, path);
  if (std::memcmp(riff, "RIFF", 4) != 0)
    throw_data(path + ": not a RIFF file");
  (void)read_le<std::uint32_t>(is, path);
  char wave[4];
  read_bytes(is, wave, 4, path);
  if (std::memcmp(wave, "WAVE", 4) != 0)
    throw_data(path + ": not a WAVE file");

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  std::vector<std::int16_t> pcm;
  while (is.peek() != EOF) {
    char id[4];
    is.read(id, 4);
    if (is.gcount() != 4) break;
    const auto size = read_le<std::uint32_t>(is, path + " chunk size");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_le<std::uint16_t>(is, path);
      channels = read_le<std::uint16_t>(is, path);
      rate = read_le<std::uint32_t>(is, path);
      (void)read_le<std::uint32_t>(is, path);  // byte rate
      (void)read_le<std::uint16_t>(is, path);  // block align
      bits = read_le<std::uint16_t>(is, path);
      if (size > 16) is.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      check_data(have_fmt, path + ": data chunk before fmt chunk");
      const std::size_t n = size / 2;
      pcm.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        pcm[i] = read_le<std::int16_t>(is, path + " pcm data");
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
      continue;
    }
    if (size & 1) is.seekg(1, std::ios::cur);
  }
  check_data(have_fmt, path + ": missing fmt chunk");
  if (format != 1)
    throw_data(path + ": unsupported WAV format tag " + std::to_string(format) +
               " (PCM required)");
  if (channels != 1)
    throw_data(path + ": expected mono audio, got " + std::to_string(channels) +
               " channels");
  if (bits != 16)
    throw_data(path + ": expected 16-bit samples, got " + std::to_string(bits));
  WavData out;
  out.sample_rate = rate;
  out.samples.resize(pcm.size());
  for (std::size_t i = 0; i < pcm.size(); ++i)
    out.samples[i] = pcm[i] / 32768.0;
  return out;
}

inline void write_wav(const std::string& path,
                      const std::vector<std::int16_t>& pcm,
                      std::uint32_t sample_rate) {
  auto os = open_out(path);
  const std::uint32_t data_size = static_cast<std::uint32_t>(pcm.size() * 2);
  write_bytes(os, "RIFF", 4);
  write_le<std::uint32_t>(os, 36 + data_size);
  write_bytes(os, "WAVE", 4);
  write_bytes(os, "fmt ", 4);
  write_le<std::uint32_t>(os, 16);
  write_le<std::uint16_t>(os, 1);  // PCM
  write_le<std::uint16_t>(os, 1);  // mono
  write_le<std::uint32_t>(os, sample_rate);
  write_le<std::uint32_t>(os, sample_rate * 2);
  write_le<std::uint16_t>(os, 2);
  write_le<std::uint16_t>(os, 16);
  write_bytes(os, "data", 4);
  write_le<std::uint32_t>(os, data_size);
  for (auto s : pcm) write_le<std::int16_t>(os, s);
}

// ---------------------------------------------------------------------------
// featurize + DMF1 feature file format

// WAV -> frames -> log-mel -> deltas. 16 kHz input only; resampling is out
// of scope, so anything else is rejected.
inline AudioFeatureMatrix featurize_samples(const std::vector<double>& samples,
                                            std::uint32_t sample_rate) {
  auto frames = frame_signal(samples, sample_rate);
  std::vector<std::vector<double>> mel(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t)
    mel[t] = log_mel(frames[t], sample_rate);
  return add_deltas(mel, sample_rate);
}

inline AudioFeatureMatrix featurize_wav(const std::string& path) {
  WavData wav = read_wav(path);
  if (wav.sample_rate != 16000)
    throw_data(path + ": sample rate " + std::to_string(wav.sample_rate) +
               " Hz not supported (expected 16000; resample upstream)");
  return featurize_samples(wav.samples, wav.sample_rate);
}

// DMF1: magic "DMF1", u32 LE frame count, u32 LE width (160), then
// frames x 160 f32 LE row-major.
inline void write_dmf(const std::string& path, const AudioFeatureMatrix& m) {
  auto os = open_out(path);
  write_bytes(os, "DMF1", 4);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.frames));
  write_le<std::uint32_t>(os,
                          static_cast<std::uint32_t>(m.kFeatureDim));
  write_f32_array(os, m.data.data(), m.data.size());
}

inline AudioFeatureMatrix read_dmf(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "DMF1", path);
  const auto frames = read_le<std::uint32_t>(is, path + " frame count");
  const auto width = read_le<std::uint32_t>(is, path + " width");
  if (width != AudioFeatureMatrix::kFeatureDim)
    throw_data(path + ": feature width " + std::to_string(width) +
               " (expected 160)");
  AudioFeatureMatrix m = AudioFeatureMatrix::zeros(frames);
  read_f32_array(is, m.data.data(), m.data.size(), path + " features");
  return m;
}

}  // namespace duomodal
