// metrics.hpp: quantitative evaluation of separated/enhanced audio against
// reference stems: telephone-band SNR, log-spectral distortion, and noise
// attenuation measured over known silence segments.
#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "earshot/fft.hpp"
#include "earshot/stft.hpp"

namespace earshot {

/// dB values are capped here so "perfect" results stay finite.
inline constexpr double kMetricCapDb = 99.0;

/// Brickwall band-pass by spectral zeroing: bins whose frequency falls
/// outside [lo_hz, hi_hz] are removed entirely.
inline std::vector<double> bandlimit(const std::vector<double>& x,
                                     double sample_rate, double lo_hz,
                                     double hi_hz) {
  if (x.empty()) return {};
  const int n = static_cast<int>(x.size());
  auto spectrum = fft_forward_real(x);
  for (int k = 0; k <= n / 2; ++k) {
    const double f = k * sample_rate / n;
    if (f >= lo_hz && f <= hi_hz) continue;
    spectrum[k] = 0.0;
    if (k > 0 && k < n - k) spectrum[n - k] = 0.0;
  }
  return fft_inverse_real(spectrum);
}

/// Signal-to-noise ratio of an estimate against a reference, both band-
/// limited to the telephone band first: 10 log10(sum ref^2 / sum err^2).
/// Capped at kMetricCapDb; throws if the reference has no in-band energy.
inline double snr_db(const std::vector<double>& estimate,
                     const std::vector<double>& reference, double sample_rate,
                     double lo_hz = 300.0, double hi_hz = 3400.0) {
  if (estimate.size() != reference.size() || reference.empty())
    throw std::invalid_argument("snr: signals must be equal-length, non-empty");
  const auto est = bandlimit(estimate, sample_rate, lo_hz, hi_hz);
  const auto ref = bandlimit(reference, sample_rate, lo_hz, hi_hz);
  double p_ref = 0.0, p_err = 0.0;
  for (size_t t = 0; t < ref.size(); ++t) {
    p_ref += ref[t] * ref[t];
    const double e = est[t] - ref[t];
    p_err += e * e;
  }
  if (p_ref <= 0.0)
    throw std::invalid_argument("snr: reference has no in-band energy");
  if (p_err <= 0.0) return kMetricCapDb;
  return std::min(kMetricCapDb, 10.0 * std::log10(p_ref / p_err));
}

/// Log-spectral distortion: per-frame RMS over bins of
/// 10 log10(max(|S|^2, eps) / max(|S_hat|^2, eps)), averaged over frames.
/// eps defaults to epsilon_rel times the mean reference bin power; pass
/// epsilon_abs > 0 to fix it instead.
inline double lsd_db(const std::vector<double>& estimate,
                     const std::vector<double>& reference, int fft_size = 1024,
                     int hop = 512, double epsilon_rel = 1e-5,
                     double epsilon_abs = 0.0) {
  if (estimate.size() != reference.size())
    throw std::invalid_argument("lsd: signals must be equal length");
  const int frames = num_stft_frames(reference.size(), fft_size, hop);
  if (frames < 1)
    throw std::invalid_argument("lsd: signals shorter than one frame");
  const auto window = periodic_hann(fft_size);
  const int bins = fft_size / 2 + 1;

  std::vector<std::vector<double>> p_ref(frames), p_est(frames);
  double mean_ref = 0.0;
  for (int f = 0; f < frames; ++f) {
    const auto sr = analyze_frame(reference.data() + size_t(f) * hop, window);
    const auto se = analyze_frame(estimate.data() + size_t(f) * hop, window);
    p_ref[f].resize(bins);
    p_est[f].resize(bins);
    for (int k = 0; k < bins; ++k) {
      p_ref[f][k] = std::norm(sr[k]);
      p_est[f][k] = std::norm(se[k]);
      mean_ref += p_ref[f][k];
    }
  }
  mean_ref /= double(frames) * bins;
  const double eps =
      epsilon_abs > 0.0 ? epsilon_abs : std::max(epsilon_rel * mean_ref, 1e-300);

  double total = 0.0;
  for (int f = 0; f < frames; ++f) {
    double sq = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double d = 10.0 * std::log10(std::max(p_ref[f][k], eps) /
                                         std::max(p_est[f][k], eps));
      sq += d * d;
    }
    total += std::sqrt(sq / bins);
  }
  return total / frames;
}

/// Attenuation over the union of [start_s, end_s) silence segments:
/// 10 log10(unprocessed power / processed power), capped at kMetricCapDb.
/// Throws if the segment union is empty or carries no input energy.
inline double attenuation_db(
    const std::vector<double>& processed,
    const std::vector<double>& unprocessed,
    const std::vector<std::pair<double, double>>& silence_segments,
    double sample_rate) {
  if (processed.size() != unprocessed.size())
    throw std::invalid_argument("attenuation: signals must be equal length");
  const int64_t n = static_cast<int64_t>(processed.size());
  std::vector<char> in_union(n, 0);
  for (const auto& [t0, t1] : silence_segments) {
    const int64_t a = std::clamp<int64_t>(std::llround(t0 * sample_rate), 0, n);
    const int64_t b = std::clamp<int64_t>(std::llround(t1 * sample_rate), 0, n);
    std::fill(in_union.begin() + a, in_union.begin() + b, char(1));
  }
  double p_in = 0.0, p_out = 0.0;
  int64_t count = 0;
  for (int64_t t = 0; t < n; ++t) {
    if (!in_union[t]) continue;
    ++count;
    p_in += unprocessed[t] * unprocessed[t];
    p_out += processed[t] * processed[t];
  }
  if (count == 0)
    throw std::invalid_argument("attenuation: empty silence segment union");
  if (p_in <= 0.0)
    throw std::invalid_argument("attenuation: no input energy in silence");
  if (p_out <= 0.0) return kMetricCapDb;
  return std::min(kMetricCapDb, 10.0 * std::log10(p_in / p_out));
}

/// Per-source evaluation summary.
struct EvalReport {
  std::vector<std::string> source_ids;
  std::vector<double> snr_db;
  std::vector<double> lsd_db;
  std::vector<double> attenuation_db;  // NaN when no silence was available
  double band_lo_hz = 300.0;
  double band_hi_hz = 3400.0;
};

inline std::string report_csv_string(const EvalReport& report) {
  std::ostringstream out;
  out << "source_id,snr_db,lsd_db,attenuation_db\n";
  out.setf(std::ios::fixed);
  out.precision(3);
  for (size_t s = 0; s < report.source_ids.size(); ++s) {
    out << report.source_ids[s] << ',' << report.snr_db[s] << ','
        << report.lsd_db[s] << ',';
    if (std::isnan(report.attenuation_db[s]))
      out << "n/a";
    else
      out << report.attenuation_db[s];
    out << '\n';
  }
  return out.str();
}

}  // namespace earshot
