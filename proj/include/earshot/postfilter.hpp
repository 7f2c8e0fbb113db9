// postfilter.hpp: multi-source log-spectral MMSE post-filter.
//
// Each separated stream is enhanced by a spectral gain computed under speech
// presence uncertainty.  The noise estimate against which the gain is formed
// has three parts: a stationary floor tracked per stream by minima-controlled
// recursive averaging, a leakage term assuming interfering streams bleed into
// this one attenuated by a fixed factor, and (optionally) a reverberant tail
// predicted from the previous frame's outputs with an exponential decay.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "earshot/common.hpp"
#include "earshot/mcra.hpp"

namespace earshot {

/// Exponential integral E1(x) = int_x^inf e^-t / t dt for x > 0.
/// Power series below 1, modified Lentz continued fraction above.
inline double expint_e1(double x) {
  if (!(x > 0.0)) throw std::domain_error("expint_e1 requires x > 0");
  constexpr double kEulerGamma = 0.57721566490153286061;
  if (x < 1.0) {
    double sum = 0.0, term = 1.0;
    for (int n = 1; n < 64; ++n) {
      term *= -x / n;
      const double add = -term / n;
      sum += add;
      if (std::abs(add) < 1e-18 * (std::abs(sum) + 1e-300)) break;
    }
    return -kEulerGamma - std::log(x) + sum;
  }
  constexpr double kTiny = 1e-300;
  double b = x + 1.0;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 200; ++i) {
    const double a = -static_cast<double>(i) * i;
    b += 2.0;
    d = a * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + a / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x);
}

/// Log-spectral MMSE gain under the speech-present hypothesis:
/// G = xi/(1+xi) * exp(E1(upsilon)/2).  May exceed 1 at high SNR; callers
/// clamp before applying it but keep the raw value for the SNR recursion.
inline double gain_log_mmse(double xi, double upsilon) {
  return xi / (1.0 + xi) * std::exp(0.5 * expint_e1(upsilon));
}

/// Short-time spectral amplitude MMSE gain (amplitude-domain alternative):
/// G = sqrt(pi u)/(2 gamma) e^{-u/2} [(1+u) I0(u/2) + u I1(u/2)].
/// Switches to its asymptotic form (1+2u)/(2 gamma) once the Bessel terms
/// would overflow; by then the gain is within a fraction of a percent of it.
inline double gain_stsa(double xi, double gamma_post, double upsilon) {
  (void)xi;
  if (upsilon > 600.0) return (1.0 + 2.0 * upsilon) / (2.0 * gamma_post);
  const double half = 0.5 * upsilon;
  const double bessel =
      (1.0 + upsilon) * std::cyl_bessel_i(0.0, half) +
      upsilon * std::cyl_bessel_i(1.0, half);
  return std::sqrt(kPi * upsilon) / (2.0 * gamma_post) * std::exp(-half) *
         bessel;
}

/// Initial stationary noise floor for a freshly separated stream, derived
/// from per-microphone noise floors under delay-and-sum weighting:
/// lambda = (1/N^2) sum_n sigma_n^2.
inline std::vector<double> init_noise(
    const std::vector<std::vector<double>>& mic_floors) {
  if (mic_floors.empty()) throw std::invalid_argument("no mic noise floors");
  const size_t bins = mic_floors.front().size();
  const double n = static_cast<double>(mic_floors.size());
  std::vector<double> out(bins, 0.0);
  for (const auto& f : mic_floors) {
    if (f.size() != bins) throw std::invalid_argument("mismatched floor sizes");
    for (size_t k = 0; k < bins; ++k) out[k] += f[k];
  }
  for (auto& v : out) v /= n * n;
  return out;
}

/// Normalised Hanning-shaped taps of half-width `half` (2*half+1 taps) used
/// to aggregate the a-priori SNR over a frequency neighbourhood.
inline std::vector<double> presence_window(int half) {
  std::vector<double> w(2 * half + 1);
  double sum = 0.0;
  for (int j = -half; j <= half; ++j) {
    const double v = 0.5 * (1.0 + std::cos(kPi * j / (half + 1.0)));
    w[j + half] = v;
    sum += v;
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// Soft speech-presence decision from an averaged a-priori SNR:
/// P = 1 / (1 + (theta/zeta)^2), with the zeta -> 0 limit mapped to 0.
inline double speech_presence_probability(double zeta, double theta) {
  if (zeta <= 0.0) return 0.0;
  const double r = theta / zeta;
  return 1.0 / (1.0 + r * r);
}

/// A-priori probability of speech absence, combining the local, global and
/// frame-level presence estimates, capped so the gain never locks shut.
inline double speech_absence_prior(double p_local, double p_global,
                                   double p_frame, double q_max = 0.9) {
  return std::min(1.0 - p_local * p_global * p_frame, q_max);
}

/// Posterior speech presence given the absence prior q and the SNR pair:
/// p = { 1 + q/(1-q) (1+xi) e^-upsilon }^-1.
inline double speech_presence(double q, double xi, double upsilon) {
  const double odds = q / (1.0 - q) * (1.0 + xi) * std::exp(-upsilon);
  return 1.0 / (1.0 + odds);
}

/// Final gain under speech-presence uncertainty: the geometric interpolation
/// G_H1^p * G_min^(1-p), kept within [g_min, 1].
inline double modified_gain(double g_h1, double p, double g_min = 0.1) {
  const double g_speech = std::min(g_h1, 1.0);
  const double g = std::pow(g_speech, p) * std::pow(g_min, 1.0 - p);
  return std::clamp(g, g_min, 1.0);
}

struct PostfilterConfig {
  double eta = 0.1;                // leakage attenuation assumed of the separator (-10 dB)
  double alpha_s = 0.2;            // smoothing of stream power for the leakage term
  double alpha_p_min = 0.07;       // minimum a-priori SNR update rate
  double g_min = 0.1;              // gain floor when speech is absent (-20 dB)
  double theta = 0.31622776601683794;  // soft presence decision threshold (-5 dB)
  double alpha_zeta = 0.3;         // recursive averaging of SNR aggregates
  double q_max = 0.9;              // cap on a-priori speech absence
  double noise_floor = 1e-12;      // lower bound on the noise estimate
  double local_bandwidth_hz = 140.0;
  double global_bandwidth_hz = 1400.0;
  bool reverb_enabled = false;
  double reverb_decay = 0.0;       // per-frame energy decay of the tail
  double srr = 3.3;                // source-to-reverberant energy ratio
  bool stsa = false;               // amplitude-domain gain instead of log-domain
  int mcra_window_frames = 140;
  double mcra_smoothing = 0.95;
};

/// Per-source per-frame internals, exposed for diagnostics, evaluation and
/// the downstream feature-mask computation.  All vectors hold the half
/// spectrum (fft_size/2 + 1 bins).
struct PostfilterDiagnostics {
  std::vector<double> lambda_stat;   // stationary noise power
  std::vector<double> lambda_leak;   // leakage noise power
  std::vector<double> lambda_rev;    // reverberant noise power
  std::vector<double> xi;            // a-priori SNR
  std::vector<double> p;             // speech presence probability
  std::vector<double> gain;          // final applied gain (amplitude)
  std::vector<double> input_power;   // |Y|^2 at the filter input
  std::vector<double> output_power;  // |S_hat|^2 at the filter output
};

/// Streaming multi-source post-filter.  Sources are identified by caller ids
/// (typically track ids, matching the separator); spectra passed to process()
/// follow the insertion order reported by source_ids().
class MultiSourcePostfilter {
 public:
  MultiSourcePostfilter(int fft_size, double sample_rate,
                        const PostfilterConfig& config = PostfilterConfig())
      : fft_size_(fft_size),
        num_bins_(fft_size / 2 + 1),
        sample_rate_(sample_rate),
        config_(config) {
    if (fft_size < 4) throw std::invalid_argument("fft size too small");
    const double bin_hz = sample_rate / fft_size;
    const int max_half = num_bins_ - 1;
    local_window_ = presence_window(std::min(
        max_half,
        std::max(1, static_cast<int>(std::lround(
                        config.local_bandwidth_hz / (2.0 * bin_hz))))));
    global_window_ = presence_window(std::min(
        max_half,
        std::max(1, static_cast<int>(std::lround(
                        config.global_bandwidth_hz / (2.0 * bin_hz))))));
    // Full-band Hanning taps for the frame-level aggregate.
    frame_window_.resize(num_bins_);
    double sum = 0.0;
    for (int k = 0; k < num_bins_; ++k) {
      frame_window_[k] = 0.5 * (1.0 - std::cos(2.0 * kPi * k / (num_bins_ - 1)));
      sum += frame_window_[k];
    }
    for (auto& v : frame_window_) v /= sum;
  }

  int num_bins() const { return num_bins_; }
  int num_sources() const { return static_cast<int>(sources_.size()); }

  bool has_source(int id) const { return find_slot(id) >= 0; }

  std::vector<int> source_ids() const {
    std::vector<int> ids;
    ids.reserve(sources_.size());
    for (const auto& s : sources_) ids.push_back(s.id);
    return ids;
  }

  /// Register a new stream.  `initial_stat_floor`, when non-empty, primes the
  /// stationary noise tracker (see init_noise); everything else starts at
  /// zero and adapts.
  void add_source(int id, const std::vector<double>& initial_stat_floor = {}) {
    if (has_source(id)) throw std::invalid_argument("duplicate source id");
    Source s;
    s.id = id;
    s.mcra = McraEstimator(num_bins_, config_.mcra_window_frames,
                           config_.mcra_smoothing);
    if (!initial_stat_floor.empty()) {
      if (static_cast<int>(initial_stat_floor.size()) != num_bins_)
        throw std::invalid_argument("initial noise floor has wrong size");
      s.mcra.seed(initial_stat_floor);
    }
    s.z.assign(num_bins_, 0.0);
    s.lambda_rev.assign(num_bins_, 0.0);
    s.prev_out_power.assign(num_bins_, 0.0);
    s.xi_prev.assign(num_bins_, 0.0);
    s.gain_prev.assign(num_bins_, 0.0);
    s.gamma_prev.assign(num_bins_, 0.0);
    s.zeta_local.assign(num_bins_, 0.0);
    s.zeta_global.assign(num_bins_, 0.0);
    s.zeta_frame = 0.0;
    sources_.push_back(std::move(s));
  }

  void remove_source(int id) {
    const int s = find_slot(id);
    if (s < 0) throw std::invalid_argument("unknown source id");
    sources_.erase(sources_.begin() + s);
  }

  /// Filter one frame.  `spectra[m]` is the full fft_size-bin spectrum of
  /// source m (order of source_ids()); the return value has the same shape,
  /// conjugate-symmetric.  Diagnostics for the frame are retained and can be
  /// read via diagnostics().
  std::vector<std::vector<cplx>> process(
      const std::vector<std::vector<cplx>>& spectra) {
    const int m = num_sources();
    if (static_cast<int>(spectra.size()) != m)
      throw std::invalid_argument("wrong number of source spectra");
    for (const auto& s : spectra)
      if (static_cast<int>(s.size()) != fft_size_)
        throw std::invalid_argument("wrong spectrum length");

    diag_.assign(m, PostfilterDiagnostics{});
    std::vector<std::vector<double>> power(m);
    for (int j = 0; j < m; ++j) {
      power[j].resize(num_bins_);
      for (int k = 0; k < num_bins_; ++k) power[j][k] = std::norm(spectra[j][k]);
    }

    // Frame barrier, stage 1: reverberant tails predicted from the previous
    // frame's outputs, then smoothed stream powers, for all sources, before
    // any noise estimate reads them.
    for (int j = 0; j < m; ++j) {
      auto& s = sources_[j];
      if (config_.reverb_enabled) {
        const double g = config_.reverb_decay;
        for (int k = 0; k < num_bins_; ++k)
          s.lambda_rev[k] = g * s.lambda_rev[k] +
                            (1.0 - g) / config_.srr * s.prev_out_power[k];
      }
      for (int k = 0; k < num_bins_; ++k)
        s.z[k] = config_.alpha_s * s.z[k] + (1.0 - config_.alpha_s) * power[j][k];
    }

    // Stage 2: per-source noise estimates (stationary + leakage + reverb).
    std::vector<std::vector<double>> lambda(m);
    for (int j = 0; j < m; ++j) {
      auto& s = sources_[j];
      s.mcra.update(power[j]);
      const auto& stat = s.mcra.noise();
      auto& d = diag_[j];
      d.lambda_stat = stat;
      d.lambda_leak.assign(num_bins_, 0.0);
      d.lambda_rev = s.lambda_rev;
      d.input_power = power[j];
      lambda[j].resize(num_bins_);
      for (int k = 0; k < num_bins_; ++k) {
        double leak = 0.0;
        for (int i = 0; i < m; ++i)
          if (i != j) leak += sources_[i].z[k];
        leak *= config_.eta;
        d.lambda_leak[k] = leak;
        double rev = 0.0;
        if (config_.reverb_enabled)
          for (int i = 0; i < m; ++i) rev += sources_[i].lambda_rev[k];
        lambda[j][k] = std::max(stat[k] + leak + rev, config_.noise_floor);
      }
    }

    // Stage 3: gains.
    std::vector<std::vector<cplx>> out(
        m, std::vector<cplx>(fft_size_, cplx(0.0, 0.0)));
    std::vector<double> gamma_now(num_bins_), xi_hat(num_bins_),
        upsilon(num_bins_), g_h1(num_bins_);
    for (int j = 0; j < m; ++j) {
      auto& s = sources_[j];
      auto& d = diag_[j];
      for (int k = 0; k < num_bins_; ++k) {
        gamma_now[k] = power[j][k] / lambda[j][k];
        const double trust = s.xi_prev[k] / (1.0 + s.xi_prev[k]);
        const double alpha_p =
            std::min(1.0, trust * trust + config_.alpha_p_min);
        xi_hat[k] = (1.0 - alpha_p) * s.gain_prev[k] * s.gain_prev[k] *
                        s.gamma_prev[k] +
                    alpha_p * std::max(gamma_now[k] - 1.0, 0.0);
        upsilon[k] =
            std::max(gamma_now[k] * xi_hat[k] / (1.0 + xi_hat[k]), 1e-6);
        g_h1[k] = config_.stsa
                      ? gain_stsa(xi_hat[k], gamma_now[k], upsilon[k])
                      : gain_log_mmse(xi_hat[k], upsilon[k]);
      }

      // Speech-presence aggregates of the a-priori SNR at three scales.
      update_zeta(s.zeta_local, xi_hat, local_window_);
      update_zeta(s.zeta_global, xi_hat, global_window_);
      double frame_avg = 0.0;
      for (int k = 0; k < num_bins_; ++k) frame_avg += frame_window_[k] * xi_hat[k];
      s.zeta_frame = (1.0 - config_.alpha_zeta) * s.zeta_frame +
                     config_.alpha_zeta * frame_avg;
      const double p_frame = presence_probability(s.zeta_frame);

      d.xi = xi_hat;
      d.p.resize(num_bins_);
      d.gain.resize(num_bins_);
      d.output_power.resize(num_bins_);
      for (int k = 0; k < num_bins_; ++k) {
        const double p_local = presence_probability(s.zeta_local[k]);
        const double p_global = presence_probability(s.zeta_global[k]);
        const double q =
            speech_absence_prior(p_local, p_global, p_frame, config_.q_max);
        const double p = speech_presence(q, xi_hat[k], upsilon[k]);
        const double g = modified_gain(g_h1[k], p, config_.g_min);
        d.p[k] = p;
        d.gain[k] = g;
        out[j][k] = g * spectra[j][k];
        d.output_power[k] = std::norm(out[j][k]);
        s.prev_out_power[k] = d.output_power[k];
        s.xi_prev[k] = xi_hat[k];
        s.gain_prev[k] = g_h1[k];  // raw value feeds the SNR recursion
        s.gamma_prev[k] = gamma_now[k];
      }

      out[j][0] = cplx(out[j][0].real(), 0.0);
      if (fft_size_ % 2 == 0)
        out[j][fft_size_ / 2] = cplx(out[j][fft_size_ / 2].real(), 0.0);
      for (int k = 1; k < (fft_size_ + 1) / 2; ++k)
        out[j][fft_size_ - k] = std::conj(out[j][k]);
    }
    return out;
  }

  /// Internals of the most recent frame for source index `slot` (the index
  /// into source_ids(), not the id).
  const PostfilterDiagnostics& diagnostics(int slot) const {
    return diag_.at(slot);
  }

 private:
  struct Source {
    int id = 0;
    McraEstimator mcra{1};
    std::vector<double> z;
    std::vector<double> lambda_rev;
    std::vector<double> prev_out_power;
    std::vector<double> xi_prev;
    std::vector<double> gain_prev;
    std::vector<double> gamma_prev;
    std::vector<double> zeta_local;
    std::vector<double> zeta_global;
    double zeta_frame = 0.0;
  };

  int find_slot(int id) const {
    for (size_t i = 0; i < sources_.size(); ++i)
      if (sources_[i].id == id) return static_cast<int>(i);
    return -1;
  }

  double presence_probability(double zeta) const {
    return speech_presence_probability(zeta, config_.theta);
  }

  /// zeta <- (1 - a) zeta + a * (window (*) xi); out-of-range bins read as 0.
  void update_zeta(std::vector<double>& zeta, const std::vector<double>& xi,
                   const std::vector<double>& window) const {
    const int half = (static_cast<int>(window.size()) - 1) / 2;
    for (int k = 0; k < num_bins_; ++k) {
      double acc = 0.0;
      for (int j = -half; j <= half; ++j) {
        const int kk = k + j;
        if (kk >= 0 && kk < num_bins_) acc += window[j + half] * xi[kk];
      }
      zeta[k] = (1.0 - config_.alpha_zeta) * zeta[k] + config_.alpha_zeta * acc;
    }
  }

  int fft_size_;
  int num_bins_;
  double sample_rate_;
  PostfilterConfig config_;
  std::vector<double> local_window_, global_window_, frame_window_;
  std::vector<Source> sources_;
  std::vector<PostfilterDiagnostics> diag_;
};

}  // namespace earshot
