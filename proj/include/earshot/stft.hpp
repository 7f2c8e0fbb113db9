// stft.hpp: short-time Fourier analysis/synthesis with exact overlap-add.
#pragma once

#include <vector>

#include "earshot/common.hpp"
#include "earshot/fft.hpp"
#include "earshot/wav.hpp"

namespace earshot {

/// Periodic Hann window, a(n) = 0.5 (1 - cos(2 pi n / L)).
inline std::vector<double> periodic_hann(int length) {
  std::vector<double> w(length);
  for (int n = 0; n < length; ++n) w[n] = 0.5 * (1.0 - std::cos(2.0 * kPi * n / length));
  return w;
}

/// Synthesis window s(n) = a(n) / D(n) with D(n) = sum_m a^2(n - m hop).
/// Overlap-adding s * a then reconstructs unity gain exactly at every sample
/// with full overlap coverage, for any window and any hop dividing its length.
inline std::vector<double> synthesis_window(const std::vector<double>& analysis, int hop) {
  const int length = static_cast<int>(analysis.size());
  std::vector<double> denom(hop, 0.0);
  for (int n = 0; n < length; ++n) denom[n % hop] += analysis[n] * analysis[n];
  std::vector<double> s(length);
  for (int n = 0; n < length; ++n) s[n] = analysis[n] / denom[n % hop];
  return s;
}

inline int num_stft_frames(size_t num_samples, int frame_length, int hop) {
  if (num_samples < static_cast<size_t>(frame_length)) return 0;
  return static_cast<int>((num_samples - frame_length) / hop) + 1;
}

/// Window one frame starting at x and transform it; returns all L complex bins.
inline std::vector<cplx> analyze_frame(const double* x, const std::vector<double>& window) {
  const int length = static_cast<int>(window.size());
  std::vector<cplx> in(length);
  for (int n = 0; n < length; ++n) in[n] = cplx(x[n] * window[n], 0.0);
  return fft_forward(in);
}

/// Spectra for all channels and frames; frame f covers samples [f*hop, f*hop+L).
struct SpectralFrames {
  int frame_length = 0;
  int hop = 0;
  double sample_rate = 0.0;
  // spectra[channel][frame] holds frame_length complex bins (conjugate
  // symmetric for real input; all bins are kept).
  std::vector<std::vector<std::vector<cplx>>> spectra;

  int num_channels() const { return static_cast<int>(spectra.size()); }
  int num_frames() const { return spectra.empty() ? 0 : static_cast<int>(spectra[0].size()); }
};

inline SpectralFrames stft_analyze(const AudioBuffer& buf, int frame_length, int hop) {
  SpectralFrames out;
  out.frame_length = frame_length;
  out.hop = hop;
  out.sample_rate = buf.sample_rate;
  const int num_frames = num_stft_frames(buf.num_samples(), frame_length, hop);
  const std::vector<double> window = periodic_hann(frame_length);
  out.spectra.resize(buf.num_channels());
  for (int c = 0; c < buf.num_channels(); ++c) {
    out.spectra[c].reserve(num_frames);
    for (int f = 0; f < num_frames; ++f)
      out.spectra[c].push_back(analyze_frame(buf.channels[c].data() + size_t(f) * hop, window));
  }
  return out;
}

/// Inverse of stft_analyze. Output has (F-1)*hop + L samples; samples with
/// full window overlap reproduce the input exactly (edges are attenuated by
/// the missing neighbour frames).
inline AudioBuffer istft_synthesize(const SpectralFrames& frames) {
  AudioBuffer out;
  out.sample_rate = frames.sample_rate;
  const int length = frames.frame_length;
  const int hop = frames.hop;
  const int num_frames = frames.num_frames();
  const size_t total = num_frames > 0 ? size_t(num_frames - 1) * hop + length : 0;
  const std::vector<double> swin = synthesis_window(periodic_hann(length), hop);
  out.channels.assign(frames.num_channels(), std::vector<double>(total, 0.0));
  for (int c = 0; c < frames.num_channels(); ++c) {
    for (int f = 0; f < num_frames; ++f) {
      std::vector<double> grain = fft_inverse_real(frames.spectra[c][f]);
      double* dst = out.channels[c].data() + size_t(f) * hop;
      for (int n = 0; n < length; ++n) dst[n] += swin[n] * grain[n];
    }
  }
  return out;
}

}  // namespace earshot
