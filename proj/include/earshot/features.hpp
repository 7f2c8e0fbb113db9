// features.hpp: recognition front end — Mel-band spectral features, their
// time derivatives, reliability masks derived from post-filter behaviour,
// and a diagonal-covariance GMM scorer that marginalises unreliable bands.
//
// Features are log Mel-band energies smoothed by cepstral truncation (not
// raw MFCCs) so that band-level reliability masks apply directly: a cosine
// transform would smear each band's reliability over all coefficients.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "earshot/common.hpp"
#include "earshot/fft.hpp"
#include "earshot/postfilter.hpp"
#include "earshot/stft.hpp"
#include "earshot/wav.hpp"

namespace earshot {

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Triangular filters with break frequencies equally spaced on the Mel scale.
/// The shape is defined in continuous frequency so the same bank can weight
/// FFT bins of any resolution (feature frames and post-filter diagnostics).
struct MelFilterBank {
  std::vector<double> break_hz;  // num_filters + 2 ascending edge frequencies

  static MelFilterBank make(int num_filters, double fmin_hz, double fmax_hz) {
    if (num_filters < 1 || fmax_hz <= fmin_hz)
      throw std::invalid_argument("bad mel filter bank parameters");
    MelFilterBank bank;
    const double lo = hz_to_mel(fmin_hz), hi = hz_to_mel(fmax_hz);
    bank.break_hz.resize(num_filters + 2);
    for (int i = 0; i < num_filters + 2; ++i)
      bank.break_hz[i] = mel_to_hz(lo + (hi - lo) * i / (num_filters + 1));
    return bank;
  }

  int num_filters() const { return static_cast<int>(break_hz.size()) - 2; }

  /// Response of filter i (0-based) at an arbitrary frequency: a unit-peak
  /// triangle between break_hz[i] and break_hz[i+2].
  double weight(int filter, double freq_hz) const {
    const double lo = break_hz[filter], mid = break_hz[filter + 1],
                 hi = break_hz[filter + 2];
    if (freq_hz <= lo || freq_hz >= hi) return 0.0;
    return freq_hz <= mid ? (freq_hz - lo) / (mid - lo)
                          : (hi - freq_hz) / (hi - mid);
  }

  /// Precomputed weights over the non-negative bins of an fft_size transform
  /// at the given sample rate: [filter][bin], bin count fft_size/2 + 1.
  std::vector<std::vector<double>> bin_weights(int fft_size,
                                               double sample_rate) const {
    const int bins = fft_size / 2 + 1;
    std::vector<std::vector<double>> w(num_filters(),
                                       std::vector<double>(bins, 0.0));
    for (int i = 0; i < num_filters(); ++i)
      for (int k = 0; k < bins; ++k)
        w[i][k] = weight(i, k * sample_rate / fft_size);
    return w;
  }
};

struct FeatureConfig {
  double sample_rate = 16000.0;
  int frame_length = 400;
  int hop = 160;
  int num_bands = 24;
  int kept_cepstra = 13;   // coefficients 0..12 computed; 0 is zeroed with 13..
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double energy_floor = 1e-10;
};

/// One frame of recognition features: 24 smoothed log Mel energies and their
/// first-order time derivatives.
struct MelFeatureFrame {
  int frame = 0;
  std::vector<double> log_mel;
  std::vector<double> delta;
};

/// Linear Mel-band energies per frame (no log/smoothing), [frame][band].
inline std::vector<std::vector<double>> mel_spectrogram(
    const std::vector<double>& audio, const FeatureConfig& cfg) {
  if (static_cast<int>(audio.size()) < cfg.frame_length)
    throw std::invalid_argument("audio shorter than one analysis frame");
  const auto window = periodic_hann(cfg.frame_length);
  const auto bank = MelFilterBank::make(cfg.num_bands, cfg.fmin_hz, cfg.fmax_hz);
  const auto weights = bank.bin_weights(cfg.frame_length, cfg.sample_rate);
  const int bins = cfg.frame_length / 2 + 1;
  const int frames = num_stft_frames(audio.size(), cfg.frame_length, cfg.hop);
  std::vector<std::vector<double>> out(frames,
                                       std::vector<double>(cfg.num_bands, 0.0));
  for (int f = 0; f < frames; ++f) {
    const auto spec = analyze_frame(audio.data() + size_t(f) * cfg.hop, window);
    for (int i = 0; i < cfg.num_bands; ++i) {
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += weights[i][k] * std::norm(spec[k]);
      out[f][i] = e;
    }
  }
  return out;
}

/// Cepstral-truncation smoothing of one log Mel vector: cosine transform,
/// zero coefficient 0 and everything from `kept` up, transform back.  An
/// orthogonal projection, hence idempotent.
inline std::vector<double> cepstral_smooth(const std::vector<double>& log_mel,
                                           int kept) {
  std::vector<double> c = dct2_orthonormal(log_mel);
  c[0] = 0.0;
  for (size_t i = kept; i < c.size(); ++i) c[i] = 0.0;
  return dct3_orthonormal(c);
}

/// Full front end on mono audio at the configured rate:
/// windowed FFT -> Mel bank -> log -> DCT -> lifter (zero c0 and c13..) ->
/// cepstral mean subtraction over the utterance -> inverse DCT -> deltas.
inline std::vector<MelFeatureFrame> mel_features(
    const std::vector<double>& audio, const FeatureConfig& cfg = {}) {
  const auto energies = mel_spectrogram(audio, cfg);
  const int frames = static_cast<int>(energies.size());
  const int bands = cfg.num_bands;

  // Liftered cepstra per frame, then the utterance mean for CMS.
  std::vector<std::vector<double>> cepstra(frames);
  std::vector<double> mean(bands, 0.0);
  for (int f = 0; f < frames; ++f) {
    std::vector<double> log_mel(bands);
    for (int i = 0; i < bands; ++i)
      log_mel[i] = std::log(std::max(energies[f][i], cfg.energy_floor));
    cepstra[f] = dct2_orthonormal(log_mel);
    cepstra[f][0] = 0.0;
    for (int i = cfg.kept_cepstra; i < bands; ++i) cepstra[f][i] = 0.0;
    for (int i = 0; i < bands; ++i) mean[i] += cepstra[f][i];
  }
  for (auto& v : mean) v /= frames;

  std::vector<MelFeatureFrame> out(frames);
  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < bands; ++i) cepstra[f][i] -= mean[i];
    out[f].frame = f;
    out[f].log_mel = dct3_orthonormal(cepstra[f]);
  }

  // Standard +-2 regression deltas, clamping indices at the utterance edges:
  // (x[f+1] - x[f-1] + 2 (x[f+2] - x[f-2])) / 10.
  auto at = [&](int f) -> const std::vector<double>& {
    return out[std::clamp(f, 0, frames - 1)].log_mel;
  };
  for (int f = 0; f < frames; ++f) {
    out[f].delta.resize(bands);
    for (int i = 0; i < bands; ++i)
      out[f].delta[i] = (at(f + 1)[i] - at(f - 1)[i] +
                         2.0 * (at(f + 2)[i] - at(f - 2)[i])) /
                        10.0;
  }
  return out;
}

/// Reliability of each Mel band for one frame: the continuous mask is the
/// ratio of post-filter output energy plus background noise to input energy,
/// and the binary mask keeps bands strictly above the threshold.  A band
/// with no input energy is fully reliable by convention (pure silence).
struct FeatureMask {
  std::vector<double> continuous;
  std::vector<int> reliable;  // 0/1
};

inline FeatureMask compute_mask(const std::vector<double>& s_in,
                                const std::vector<double>& s_out,
                                const std::vector<double>& noise,
                                double threshold = 0.25) {
  if (s_in.size() != s_out.size() || s_in.size() != noise.size())
    throw std::invalid_argument("mask inputs differ in size");
  FeatureMask mask;
  mask.continuous.resize(s_in.size());
  mask.reliable.resize(s_in.size());
  for (size_t i = 0; i < s_in.size(); ++i) {
    const double m =
        s_in[i] > 0.0 ? (s_out[i] + noise[i]) / s_in[i] : 1.0;
    mask.continuous[i] = m;
    mask.reliable[i] = m > threshold ? 1 : 0;
  }
  return mask;
}

/// Delta-feature masks: reliable only when every frame feeding the delta
/// regression (two frames each side) is reliable; frames without the full
/// context are unreliable.
inline std::vector<std::vector<int>> delta_masks(
    const std::vector<std::vector<int>>& static_masks) {
  const int frames = static_cast<int>(static_masks.size());
  std::vector<std::vector<int>> out(frames);
  for (int f = 0; f < frames; ++f) {
    const size_t bands = static_masks[f].size();
    out[f].assign(bands, 0);
    if (f < 2 || f > frames - 3) continue;
    for (size_t i = 0; i < bands; ++i) {
      int all = 1;
      for (int k = -2; k <= 2; ++k) all &= static_masks[f + k][i];
      out[f][i] = all;
    }
  }
  return out;
}

/// Post-filter spectral diagnostics of one source, re-binned onto the
/// feature grid: Mel-band input/output/background-noise energies per feature
/// frame.  Frequencies are aggregated with the same triangular bank as the
/// features; time is aggregated by overlap-weighted averaging of the
/// post-filter frame spans against each feature frame span.
struct BandEnergies {
  std::vector<std::vector<double>> s_in, s_out, noise;  // [frame][band]
  int num_frames() const { return static_cast<int>(s_in.size()); }
};

inline BandEnergies rebin_diagnostics(
    const std::vector<PostfilterDiagnostics>& frames, double pf_sample_rate,
    int pf_fft_size, int pf_hop, const FeatureConfig& cfg = {}) {
  const auto bank = MelFilterBank::make(cfg.num_bands, cfg.fmin_hz, cfg.fmax_hz);
  const auto weights = bank.bin_weights(pf_fft_size, pf_sample_rate);
  const int pf_frames = static_cast<int>(frames.size());
  const int bands = cfg.num_bands;

  // Mel-band energies per post-filter frame.
  std::vector<std::array<std::vector<double>, 3>> band(pf_frames);
  for (int f = 0; f < pf_frames; ++f) {
    for (auto& v : band[f]) v.assign(bands, 0.0);
    const int bins = static_cast<int>(frames[f].input_power.size());
    for (int i = 0; i < bands; ++i) {
      for (int k = 0; k < bins; ++k) {
        const double w = weights[i][k];
        if (w == 0.0) continue;
        band[f][0][i] += w * frames[f].input_power[k];
        band[f][1][i] += w * frames[f].output_power[k];
        band[f][2][i] += w * frames[f].lambda_stat[k];
      }
    }
  }

  // Overlap-weighted time aggregation onto the feature frame grid.
  const double pf_span = pf_fft_size / pf_sample_rate;
  const double pf_step = pf_hop / pf_sample_rate;
  const double ft_span = cfg.frame_length / cfg.sample_rate;
  const double ft_step = cfg.hop / cfg.sample_rate;
  const double total = (pf_frames - 1) * pf_step + pf_span;
  const int ft_frames =
      std::max(0, static_cast<int>(std::floor((total - ft_span) / ft_step)) + 1);

  BandEnergies out;
  out.s_in.assign(ft_frames, std::vector<double>(bands, 0.0));
  out.s_out.assign(ft_frames, std::vector<double>(bands, 0.0));
  out.noise.assign(ft_frames, std::vector<double>(bands, 0.0));
  for (int g = 0; g < ft_frames; ++g) {
    const double t0 = g * ft_step, t1 = t0 + ft_span;
    double wsum = 0.0;
    const int f_lo = std::max(0, static_cast<int>((t0 - pf_span) / pf_step));
    for (int f = f_lo; f < pf_frames; ++f) {
      const double s0 = f * pf_step, s1 = s0 + pf_span;
      if (s0 >= t1) break;
      const double ov = std::min(t1, s1) - std::max(t0, s0);
      if (ov <= 0.0) continue;
      wsum += ov;
      for (int i = 0; i < bands; ++i) {
        out.s_in[g][i] += ov * band[f][0][i];
        out.s_out[g][i] += ov * band[f][1][i];
        out.noise[g][i] += ov * band[f][2][i];
      }
    }
    if (wsum > 0.0)
      for (int i = 0; i < bands; ++i) {
        out.s_in[g][i] /= wsum;
        out.s_out[g][i] /= wsum;
        out.noise[g][i] /= wsum;
      }
  }
  return out;
}

/// Mixture of diagonal-covariance Gaussians with a JSON on-disk format:
/// { "weights": [...], "means": [[...]], "variances": [[...]] }.
struct DiagonalGmm {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> variances;

  int num_components() const { return static_cast<int>(weights.size()); }
  int num_dims() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

  void validate() const {
    if (weights.empty() || means.size() != weights.size() ||
        variances.size() != weights.size())
      throw config_error("gmm: component counts disagree");
    double sum = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw config_error("gmm: negative weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw config_error("gmm: weights must sum to 1");
    const size_t d = means[0].size();
    if (d == 0) throw config_error("gmm: zero dimensions");
    for (size_t j = 0; j < weights.size(); ++j) {
      if (means[j].size() != d || variances[j].size() != d)
        throw config_error("gmm: dimension mismatch");
      for (double v : variances[j])
        if (!(v > 0.0)) throw config_error("gmm: variances must be positive");
    }
  }

  static DiagonalGmm from_json(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const nlohmann::json::exception& e) {
      throw config_error(std::string("gmm: invalid JSON: ") + e.what());
    }
    DiagonalGmm g;
    try {
      g.weights = j.at("weights").get<std::vector<double>>();
      g.means = j.at("means").get<std::vector<std::vector<double>>>();
      g.variances = j.at("variances").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw config_error(std::string("gmm: missing or malformed field: ") + e.what());
    }
    g.validate();
    return g;
  }

  std::string to_json() const {
    nlohmann::json j;
    j["weights"] = weights;
    j["means"] = means;
    j["variances"] = variances;
    return j.dump(2);
  }

  static DiagonalGmm load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << to_json() << "\n";
    if (!out) throw io_error("short write to " + path);
  }
};

/// Mixture log-likelihood over the reliable dimensions only.  Equivalent to
/// scoring a GMM with the masked dimensions removed.  When nothing is
/// reliable the score is 0 (an empty product) and `all_marginalised`, if
/// given, is set so callers can react.
inline double mft_log_likelihood(const DiagonalGmm& gmm,
                                 const std::vector<double>& x,
                                 const std::vector<int>& reliable,
                                 bool* all_marginalised = nullptr) {
  if (static_cast<int>(x.size()) != gmm.num_dims() ||
      reliable.size() != x.size())
    throw std::invalid_argument("gmm score: dimension mismatch");
  if (all_marginalised) *all_marginalised = false;
  bool any = false;
  for (int r : reliable) any = any || (r != 0);
  if (!any) {
    if (all_marginalised) *all_marginalised = true;
    return 0.0;
  }
  constexpr double kLog2Pi = 1.8378770664093454836;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> comp(gmm.num_components());
  for (int j = 0; j < gmm.num_components(); ++j) {
    double acc = std::log(gmm.weights[j]);
    for (size_t i = 0; i < x.size(); ++i) {
      if (!reliable[i]) continue;
      const double d = x[i] - gmm.means[j][i];
      acc -= 0.5 * (kLog2Pi + std::log(gmm.variances[j][i]) +
                    d * d / gmm.variances[j][i]);
    }
    comp[j] = acc;
    best = std::max(best, acc);
  }
  double sum = 0.0;
  for (double c : comp) sum += std::exp(c - best);
  return best + std::log(sum);
}

/// Ordinary full-dimension log-likelihood (all bands reliable).
inline double gmm_log_likelihood(const DiagonalGmm& gmm,
                                 const std::vector<double>& x) {
  return mft_log_likelihood(gmm, x, std::vector<int>(x.size(), 1));
}

}  // namespace earshot
