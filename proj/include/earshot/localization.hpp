// localization.hpp: steered-beamformer direction search over a spherical
// grid, driven by noise/reverberation-weighted whitened cross-correlations.
#pragma once

#include <algorithm>
#include <deque>
#include <vector>

#include "earshot/common.hpp"
#include "earshot/fft.hpp"
#include "earshot/geometry.hpp"
#include "earshot/grid.hpp"
#include "earshot/mcra.hpp"

namespace earshot {

inline constexpr double kMagnitudeFloor = 1e-10;  // amplitude
inline constexpr double kNoiseFloorMin = 1e-12;   // power

/// Reverberation decay per frame for a given T60 (seconds) and STFT frame
/// rate: the tail loses 60 dB over T60, i.e. 6 dB per tenth.
inline double reverb_decay_per_frame(double t60_seconds, double frame_rate) {
  return std::pow(10.0, -6.0 / (t60_seconds * frame_rate));
}

struct WeightingConfig {
  double alpha_d = 0.1;        // decision-directed adaptation rate
  bool reverb_term = true;     // include reverberation tail in the noise floor
  double reverb_decay = 0.65;  // gamma, per frame
  double srr = 3.3;            // delta, signal-to-reverberant power ratio
  int mcra_window = 140;       // frames
  double mcra_smoothing = 0.95;
};

/// Decision-directed prior SNR for one bin: a blend of the previous frame's
/// filtered power and the current instantaneous power, over the noise floor.
inline double decision_directed_snr(double prev_weighted_power, double power,
                                    double noise, double alpha_d) {
  return ((1.0 - alpha_d) * prev_weighted_power + alpha_d * power) / noise;
}

/// Wiener-style weight in [0, 1] from a prior SNR.
inline double snr_weight(double xi) { return xi / (xi + 1.0); }

/// Per-channel spectral weighting state: a noise floor (stationary via
/// minima tracking, plus a decaying reverberation estimate) feeds a
/// decision-directed prior SNR whose Wiener gain weights each bin in the
/// cross-correlations.
class NoiseWeightState {
 public:
  NoiseWeightState(int num_bins, const WeightingConfig& cfg)
      : cfg_(cfg),
        mcra_(num_bins, cfg.mcra_window, cfg.mcra_smoothing),
        weight_(num_bins, 0.0),
        prev_weighted_power_(num_bins, 0.0),
        prev_power_(num_bins, 0.0),
        lambda_rev_(num_bins, 0.0) {}

  /// Advance one frame given the half-spectrum (bins 0..L/2) of this channel.
  void update(const std::vector<cplx>& spectrum) {
    const int bins = static_cast<int>(weight_.size());
    std::vector<double> power(bins);
    for (int k = 0; k < bins; ++k) power[k] = std::norm(spectrum[k]);
    mcra_.update(power);
    const std::vector<double>& sigma2 = mcra_.noise();
    for (int k = 0; k < bins; ++k) {
      double noise = std::max(sigma2[k], kNoiseFloorMin);
      if (cfg_.reverb_term) noise += lambda_rev_[k];
      const double xi =
          decision_directed_snr(prev_weighted_power_[k], power[k], noise, cfg_.alpha_d);
      const double zeta = snr_weight(xi);
      weight_[k] = zeta;
      // The reverberation tail is driven by the previous frame's filtered
      // output; the weight just computed uses the floor from before this
      // update, so the two never chase each other within a frame.
      lambda_rev_[k] = cfg_.reverb_decay * lambda_rev_[k] +
                       (1.0 - cfg_.reverb_decay) / cfg_.srr * zeta * zeta * prev_power_[k];
      prev_weighted_power_[k] = zeta * zeta * power[k];
      prev_power_[k] = power[k];
    }
  }

  const std::vector<double>& weights() const { return weight_; }
  const std::vector<double>& noise_floor() const { return mcra_.noise(); }
  const std::vector<double>& reverb_floor() const { return lambda_rev_; }

 private:
  WeightingConfig cfg_;
  McraEstimator mcra_;
  std::vector<double> weight_;
  std::vector<double> prev_weighted_power_;  // (zeta |X|)^2 of previous frame
  std::vector<double> prev_power_;           // |X|^2 of previous frame
  std::vector<double> lambda_rev_;
};

/// Whitened, weighted per-pair cross-correlations averaged over a short
/// window of frames. Arrays are circular in the lag: negative lags live at
/// tau mod L.
class CrossCorrelationBank {
 public:
  CrossCorrelationBank(int num_channels, int frame_length, int window_frames = 4)
      : num_channels_(num_channels),
        frame_length_(frame_length),
        window_frames_(window_frames) {}

  /// Push one frame: full-length spectra (all L bins) and per-channel weights
  /// on the half spectrum (L/2 + 1 bins, mirrored internally).
  void push(const std::vector<std::vector<cplx>>& spectra,
            const std::vector<std::vector<double>>& weights) {
    const int L = frame_length_;
    std::vector<std::vector<cplx>> u(num_channels_, std::vector<cplx>(L));
    for (int c = 0; c < num_channels_; ++c) {
      for (int k = 0; k < L; ++k) {
        const int kh = k <= L / 2 ? k : L - k;  // conjugate-symmetric mirror
        const double mag = std::max(std::abs(spectra[c][k]), kMagnitudeFloor);
        u[c][k] = weights[c][kh] / mag * spectra[c][k];
      }
    }
    ring_.push_back(std::move(u));
    if (static_cast<int>(ring_.size()) > window_frames_) ring_.pop_front();
  }

  bool ready() const { return !ring_.empty(); }
  int frame_length() const { return frame_length_; }

  /// Correlation arrays for every pair (i<j), R[pair][tau], tau in [0, L).
  /// R_ij(tau) peaks at the delay of channel j relative to channel i.
  std::vector<std::vector<double>> correlations() const {
    const int L = frame_length_;
    const int pairs = num_channels_ * (num_channels_ - 1) / 2;
    std::vector<std::vector<double>> out(pairs);
    std::vector<cplx> cross(L);
    int idx = 0;
    for (int i = 0; i < num_channels_; ++i)
      for (int j = i + 1; j < num_channels_; ++j, ++idx) {
        std::fill(cross.begin(), cross.end(), cplx(0.0, 0.0));
        for (const auto& frame : ring_)
          for (int k = 0; k < L; ++k) cross[k] += std::conj(frame[i][k]) * frame[j][k];
        const double scale = 1.0 / static_cast<double>(ring_.size());
        for (auto& v : cross) v *= scale;
        // R(tau) = sum_k C(k) e^{+j 2 pi k tau / L} = L * IDFT(C).
        std::vector<cplx> r = fft_inverse(cross);
        out[idx].resize(L);
        for (int t = 0; t < L; ++t) out[idx][t] = L * r[t].real();
      }
    return out;
  }

 private:
  int num_channels_;
  int frame_length_;
  int window_frames_;
  std::deque<std::vector<std::vector<cplx>>> ring_;  // [frame][channel][bin]
};

/// One steered-beamformer detection.
struct PotentialSource {
  Vec3 direction = Vec3::UnitX();
  double energy = 0.0;       // summed correlation at the best direction
  double probability = 0.0;  // confidence this is a real source
  int grid_index = 0;
};

/// Confidence that detection number q (0-based, by decreasing energy) is a
/// real source; nu is the loudest detection's energy over the threshold.
inline double potential_source_probability(int q, double nu) {
  switch (q) {
    case 0:
      return nu <= 1.0 ? nu * nu / 2.0 : 1.0 - 0.5 / (nu * nu);
    case 1:
      return 0.3;
    case 2:
      return 0.16;
    default:
      return 0.03;
  }
}

/// Argmax of summed pair correlations over the grid; ties break toward the
/// lowest direction index. Returns (index, energy).
inline std::pair<int, double> direction_search(
    const std::vector<std::vector<double>>& corr, const TdoaTable& table) {
  const int L = static_cast<int>(corr.empty() ? 0 : corr[0].size());
  int best = 0;
  double best_energy = -1e300;
  for (size_t d = 0; d < table.delays.size(); ++d) {
    double e = 0.0;
    for (int p = 0; p < table.num_pairs; ++p) {
      int tau = table.delays[d][p];
      if (tau < 0) tau += L;
      e += corr[p][tau];
    }
    if (e > best_energy) {
      best_energy = e;
      best = static_cast<int>(d);
    }
  }
  return {best, best_energy};
}

/// Iterative multi-source search: find the best direction, zero the
/// correlations at its lookup delays (and one sample either side, to kill
/// the peak's shoulders) so the same source cannot dominate again, then
/// repeat. Confidences use nu = E_0 / threshold, where the threshold is
/// calibrated for 28 pairs and scaled with the pair count.
inline std::vector<PotentialSource> multi_source_search(
    std::vector<std::vector<double>> corr, const TdoaTable& table,
    const SphericalGrid& grid, int max_sources, double energy_threshold) {
  if (max_sources < 1) throw std::invalid_argument("multi_source_search: need Q >= 1");
  const int L = static_cast<int>(corr.empty() ? 0 : corr[0].size());
  const double threshold = energy_threshold * table.num_pairs / 28.0;
  std::vector<PotentialSource> found;
  double nu = 0.0;
  for (int q = 0; q < max_sources; ++q) {
    auto [idx, energy] = direction_search(corr, table);
    if (q == 0) nu = energy / threshold;
    PotentialSource s;
    s.direction = grid.directions[idx];
    s.energy = energy;
    s.grid_index = idx;
    s.probability = std::max(0.0, potential_source_probability(q, std::max(nu, 0.0)));
    found.push_back(s);
    for (int p = 0; p < table.num_pairs; ++p) {
      for (int off = -1; off <= 1; ++off) {
        int tau = (table.delays[idx][p] + off) % L;
        if (tau < 0) tau += L;
        corr[p][tau] = 0.0;
      }
    }
  }
  return found;
}

/// Local 5 x 5 x 5 refinement around a coarse direction: two tangential
/// angular offsets and five candidate distances, scored with point-source
/// delays. The distance is searched only to stabilise the angles and is
/// discarded; the returned value is the best direction.
inline Vec3 refine_direction(const std::vector<std::vector<double>>& corr,
                             const Vec3& coarse, const ArrayGeometry& geom,
                             double sample_rate, double speed_of_sound,
                             double step_deg = 1.25) {
  const int L = static_cast<int>(corr.empty() ? 0 : corr[0].size());
  static const double distances[5] = {0.5, 0.85, 1.45, 2.5, 5.0};
  Vec3 t1 = std::abs(coarse.z()) < 0.9 ? coarse.cross(Vec3::UnitZ()).normalized()
                                       : coarse.cross(Vec3::UnitX()).normalized();
  Vec3 t2 = coarse.cross(t1).normalized();
  Vec3 best_dir = coarse;
  double best_energy = -1e300;
  for (int a = -2; a <= 2; ++a)
    for (int b = -2; b <= 2; ++b) {
      const Vec3 dir =
          (coarse + std::tan(deg2rad(a * step_deg)) * t1 + std::tan(deg2rad(b * step_deg)) * t2)
              .normalized();
      for (double d : distances) {
        const Vec3 r = d * dir;
        double e = 0.0;
        int idx = 0;
        for (int i = 0; i < geom.num_mics(); ++i)
          for (int j = i + 1; j < geom.num_mics(); ++j, ++idx) {
            int tau = static_cast<int>(
                std::lround(near_field_delay(geom.mics[i], geom.mics[j], r, sample_rate,
                                             speed_of_sound)));
            tau %= L;
            if (tau < 0) tau += L;
            e += corr[idx][tau];
          }
        if (e > best_energy) {
          best_energy = e;
          best_dir = dir;
        }
      }
    }
  return best_dir;
}

struct LocalizerConfig {
  int frame_length = 1024;
  double sample_rate = 48000.0;
  double speed_of_sound = 343.0;
  int grid_levels = 4;
  int averaging_frames = 4;  // cross-power averaging window
  int max_sources = 4;
  double energy_threshold = 150.0;  // for 28 pairs, scaled with pair count
  bool refine = true;
  WeightingConfig weighting;
};

/// Streaming front end: feed STFT frames, ask for detections. Owns the grid,
/// the delay table, the per-channel weighting states and the correlation bank.
class Localizer {
 public:
  Localizer(const ArrayGeometry& geom, const LocalizerConfig& cfg,
            const TdoaTable* cached_table = nullptr)
      : geom_(geom),
        cfg_(cfg),
        grid_(SphericalGrid::build(cfg.grid_levels)),
        bank_(geom.num_mics(), cfg.frame_length, cfg.averaging_frames) {
    if (cached_table != nullptr)
      table_ = *cached_table;
    else
      table_ = build_tdoa_table(grid_, geom_, cfg.sample_rate, cfg.speed_of_sound);
    const int bins = cfg.frame_length / 2 + 1;
    for (int c = 0; c < geom.num_mics(); ++c)
      weights_.emplace_back(bins, cfg.weighting);
  }

  /// Feed one frame of full-length spectra, one per channel.
  void push_frame(const std::vector<std::vector<cplx>>& spectra) {
    if (static_cast<int>(spectra.size()) != geom_.num_mics())
      throw std::invalid_argument("push_frame: channel count mismatch");
    const int bins = cfg_.frame_length / 2 + 1;
    std::vector<std::vector<double>> w(geom_.num_mics());
    for (int c = 0; c < geom_.num_mics(); ++c) {
      std::vector<cplx> half(spectra[c].begin(), spectra[c].begin() + bins);
      weights_[c].update(half);
      w[c] = weights_[c].weights();
    }
    bank_.push(spectra, w);
  }

  /// Run the multi-source search (with optional local refinement) on the
  /// currently averaged correlations.
  std::vector<PotentialSource> search() const {
    std::vector<std::vector<double>> corr = bank_.correlations();
    std::vector<PotentialSource> found = multi_source_search(
        corr, table_, grid_, cfg_.max_sources, cfg_.energy_threshold);
    if (cfg_.refine)
      for (auto& s : found)
        s.direction = refine_direction(corr, s.direction, geom_, cfg_.sample_rate,
                                       cfg_.speed_of_sound);
    return found;
  }

  bool ready() const { return bank_.ready(); }
  const SphericalGrid& grid() const { return grid_; }
  const TdoaTable& tdoa_table() const { return table_; }
  const ArrayGeometry& geometry() const { return geom_; }

 private:
  ArrayGeometry geom_;
  LocalizerConfig cfg_;
  SphericalGrid grid_;
  TdoaTable table_;
  CrossCorrelationBank bank_;
  std::vector<NoiseWeightState> weights_;
};

}  // namespace earshot
