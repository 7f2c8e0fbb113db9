// simulator.hpp: ground-truth scene synthesis. Renders moving or static
// sources to an N-microphone array with fractional delays and distance
// gains, adds exponentially-decaying diffuse reverberation and per-mic
// noise, and exports exact per-source stems, trajectories, and silence
// segments so downstream stages can be scored against known answers.
//
// Sources are rendered with delays relative to the array centroid (the
// common propagation delay is removed), so source timelines stay aligned
// with the output while inter-mic delays are physically exact.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "earshot/common.hpp"
#include "earshot/csv.hpp"
#include "earshot/fft.hpp"
#include "earshot/geometry.hpp"
#include "earshot/grid.hpp"
#include "earshot/stft.hpp"
#include "earshot/wav.hpp"

namespace earshot {

// ---------------------------------------------------------------------------
// Scene description
// ---------------------------------------------------------------------------

/// One knot of a piecewise-linear source trajectory. `direction` is a unit
/// vector from the array centroid; `distance_m` scales it to a position.
struct TrajectoryPoint {
  double time_s = 0.0;
  Vec3 direction = Vec3(1.0, 0.0, 0.0);
  double distance_m = 1.0;
};

enum class DelayMode {
  fractional,  // frequency-domain phase shift, sub-sample accurate
  nearest      // delays rounded to whole samples (exact-TDOA tests)
};

struct ReverbSpec {
  double t60_s = 0.0;  // 60 dB decay time; 0 disables reverberation
  double srr = 3.3;    // direct-to-reverberant power ratio (linear)
};

struct SceneSource {
  std::string id;
  std::vector<double> signal;  // mono, at the scene sample rate
  std::vector<TrajectoryPoint> trajectory;
  double level_db = 0.0;  // RMS level of the source as heard at the centroid
};

struct SceneSpec {
  ArrayGeometry geometry = cube_array();
  double sample_rate = 48000.0;
  double duration_s = 1.0;
  std::vector<SceneSource> sources;
  std::optional<double> noise_level_db;  // diffuse per-mic noise RMS, dB
  ReverbSpec reverb;
  DelayMode delay_mode = DelayMode::fractional;
  double speed_of_sound = kSpeedOfSound;
};

struct TruthSample {
  double time_s = 0.0;
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double distance_m = 0.0;
};

/// Everything the renderer knows that a consumer may score against.
struct GroundTruth {
  std::vector<std::string> source_ids;
  /// Per-source image at the array: direct path plus reverberant tail.
  /// Together with `noise` these sum to the mixture, sample-exact.
  std::vector<AudioBuffer> stems;
  /// Direct path only; filled only when reverberation is enabled
  /// (otherwise identical to `stems`, see direct_stem()).
  std::vector<AudioBuffer> direct;
  /// Level-scaled mono source signals on the centroid timeline: the clean
  /// references that separation outputs should reproduce.
  std::vector<std::vector<double>> source_signals;
  AudioBuffer noise;
  std::vector<std::vector<TruthSample>> trajectories;  // [source][frame]
  /// Per-source [start_s, end_s) intervals where the source signal is
  /// exactly zero for at least 50 ms.
  std::vector<std::vector<std::pair<double, double>>> silence;
  std::vector<std::string> warnings;

  const AudioBuffer& direct_stem(int source) const {
    return direct.empty() ? stems[source] : direct[source];
  }
};

struct SceneRender {
  AudioBuffer mixture;
  GroundTruth truth;
};

// ---------------------------------------------------------------------------
// Deterministic signal generators (unit RMS over their active samples)
// ---------------------------------------------------------------------------

namespace detail {

inline uint32_t mix_seed(uint32_t seed, uint32_t tag) {
  uint64_t z = (uint64_t(seed) << 32) | (tag + 0x9e3779b9u);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return static_cast<uint32_t>(z ^ (z >> 31));
}

inline void normalize_rms(std::vector<double>& x, bool active_only) {
  double power = 0.0;
  size_t count = 0;
  for (double v : x) {
    if (active_only && v == 0.0) continue;
    power += v * v;
    ++count;
  }
  if (count == 0 || power == 0.0) return;
  const double s = 1.0 / std::sqrt(power / count);
  for (auto& v : x) v *= s;
}

/// 0/1 burst gate with raised-cosine ramps inside the active part; gaps are
/// exactly zero.
inline double burst_gate(double t, double burst_s, double gap_s, double ramp_s) {
  const double period = burst_s + gap_s;
  const double u = t - std::floor(t / period) * period;
  if (u >= burst_s) return 0.0;
  if (u < ramp_s) return 0.5 * (1.0 - std::cos(kPi * u / ramp_s));
  if (u > burst_s - ramp_s)
    return 0.5 * (1.0 - std::cos(kPi * (burst_s - u) / ramp_s));
  return 1.0;
}

}  // namespace detail

/// Fraction of the squared modulation sine treated as an inter-word gap.
constexpr double kGapLevel = 0.12;

/// Gaussian noise shaped toward a speech-like spectrum (differenced, then
/// low-passed) with optional slow amplitude modulation so level varies the
/// way running speech does.
inline std::vector<double> speech_shaped_noise(size_t num_samples,
                                               double sample_rate,
                                               uint32_t seed,
                                               double mod_hz = 0.0,
                                               double mod_phase = 0.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(num_samples);
  double prev_white = 0.0, lp = 0.0;
  for (size_t t = 0; t < num_samples; ++t) {
    const double w = n(rng);
    lp = 0.9 * lp + 0.1 * (w - prev_white);
    prev_white = w;
    double v = lp;
    if (mod_hz > 0.0) {
      // Speech-like energy contour: smooth utterance bursts separated by true
      // silence gaps (like inter-word pauses).  The gaps matter: noise-floor
      // trackers calibrate on them, exactly as they do on real speech pauses.
      const double s = std::sin(kPi * mod_hz * t / sample_rate + mod_phase);
      v *= std::clamp((s * s - kGapLevel) / (1.0 - kGapLevel), 0.0, 1.0);
    }
    x[t] = v;
  }
  detail::normalize_rms(x, false);
  return x;
}

/// Exponential (log) frequency sweep from f0 to f1 over the whole length.
inline std::vector<double> chirp_signal(size_t num_samples, double sample_rate,
                                        double f0_hz, double f1_hz) {
  if (f0_hz <= 0.0 || f1_hz <= f0_hz)
    throw std::invalid_argument("chirp needs 0 < f0 < f1");
  const double T = num_samples / sample_rate;
  const double k = std::log(f1_hz / f0_hz);
  std::vector<double> x(num_samples);
  for (size_t t = 0; t < num_samples; ++t) {
    const double tt = t / sample_rate;
    const double phase = 2.0 * kPi * f0_hz * T / k * (std::exp(k * tt / T) - 1.0);
    x[t] = std::sin(phase);
  }
  detail::normalize_rms(x, false);
  return x;
}

/// Sine bursts separated by exact-zero gaps (hand-clap-like test tones).
inline std::vector<double> tone_bursts(size_t num_samples, double sample_rate,
                                       double freq_hz, double burst_s = 0.4,
                                       double gap_s = 0.4,
                                       double ramp_s = 0.005) {
  std::vector<double> x(num_samples);
  for (size_t t = 0; t < num_samples; ++t) {
    const double tt = t / sample_rate;
    const double g = detail::burst_gate(tt, burst_s, gap_s, ramp_s);
    x[t] = g == 0.0 ? 0.0 : g * std::sin(2.0 * kPi * freq_hz * tt);
  }
  detail::normalize_rms(x, true);
  return x;
}

/// White-noise bursts separated by exact-zero gaps.
inline std::vector<double> white_noise_bursts(size_t num_samples,
                                              double sample_rate,
                                              uint32_t seed,
                                              double burst_s = 0.3,
                                              double gap_s = 0.5,
                                              double ramp_s = 0.005) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(num_samples);
  for (size_t t = 0; t < num_samples; ++t) {
    const double w = n(rng);  // always draw, so gating doesn't shift the RNG
    const double g = detail::burst_gate(t / sample_rate, burst_s, gap_s, ramp_s);
    x[t] = g == 0.0 ? 0.0 : g * w;
  }
  detail::normalize_rms(x, true);
  return x;
}

/// Force the given [start_s, end_s) intervals of a signal to exact zero,
/// with short raised-cosine fades on the live side of each boundary.
inline void apply_silence(std::vector<double>& signal, double sample_rate,
                          const std::vector<std::pair<double, double>>& segments,
                          double fade_s = 0.005) {
  const int64_t n = static_cast<int64_t>(signal.size());
  const int64_t fade = std::llround(fade_s * sample_rate);
  for (const auto& [t0, t1] : segments) {
    const int64_t a = std::clamp<int64_t>(std::llround(t0 * sample_rate), 0, n);
    const int64_t b = std::clamp<int64_t>(std::llround(t1 * sample_rate), 0, n);
    for (int64_t t = a; t < b; ++t) signal[t] = 0.0;
    // Raised-cosine ramp from ~0 beside the segment up to ~1 a fade away.
    for (int64_t k = 0; k < fade; ++k) {
      const double g = 0.5 * (1.0 - std::cos(kPi * (k + 1.0) / (fade + 1.0)));
      if (a - 1 - k >= 0) signal[a - 1 - k] *= g;
      if (b + k < n) signal[b + k] *= g;
    }
  }
}

// ---------------------------------------------------------------------------
// Trajectory evaluation
// ---------------------------------------------------------------------------

/// Piecewise-linear interpolation of (direction, distance) at time t, with
/// constant extrapolation outside the knot range. Directions are chord-
/// interpolated and re-normalised.
inline std::pair<Vec3, double> interpolate_trajectory(
    const std::vector<TrajectoryPoint>& traj, double t) {
  if (traj.empty()) throw std::invalid_argument("empty trajectory");
  if (t <= traj.front().time_s)
    return {traj.front().direction, traj.front().distance_m};
  if (t >= traj.back().time_s)
    return {traj.back().direction, traj.back().distance_m};
  size_t hi = 1;
  while (traj[hi].time_s < t) ++hi;
  const auto& a = traj[hi - 1];
  const auto& b = traj[hi];
  const double span = b.time_s - a.time_s;
  const double w = span > 0.0 ? (t - a.time_s) / span : 1.0;
  Vec3 dir = (1.0 - w) * a.direction + w * b.direction;
  const double norm = dir.norm();
  if (norm < 1e-9) dir = a.direction; else dir /= norm;
  return {dir, (1.0 - w) * a.distance_m + w * b.distance_m};
}

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

namespace detail {

// Rendering block geometry: 1024-sample Hann windows hopped by 512 overlap-
// add to unity; each block is centred in a 2048-sample buffer so delays up
// to +-512 samples shift it without wrapping.
constexpr int kRenderBlock = 1024;
constexpr int kRenderHop = 512;
constexpr int kRenderPad = 2048;
constexpr int kRenderOffset = 512;

inline void validate_scene(SceneSpec& spec, std::vector<std::string>& warnings) {
  if (spec.geometry.num_mics() < 1)
    throw std::invalid_argument("scene needs at least one microphone");
  if (!(spec.sample_rate > 0.0) || !(spec.duration_s > 0.0))
    throw std::invalid_argument("sample rate and duration must be positive");
  if (!(spec.reverb.t60_s >= 0.0))
    throw std::invalid_argument("T60 must be non-negative");
  if (spec.reverb.t60_s > 0.0 && !(spec.reverb.srr > 0.0))
    throw std::invalid_argument("direct-to-reverberant ratio must be positive");
  if (spec.noise_level_db && !std::isfinite(*spec.noise_level_db))
    throw std::invalid_argument("noise level must be finite");

  const Vec3 c = spec.geometry.centroid();
  double max_reach = 0.0;
  for (const auto& m : spec.geometry.mics)
    max_reach = std::max(max_reach, (m - c).norm());
  if (spec.sample_rate / spec.speed_of_sound * max_reach >= kRenderOffset - 8)
    throw std::invalid_argument("array too large for the block renderer");

  for (auto& src : spec.sources) {
    if (!std::isfinite(src.level_db))
      throw std::invalid_argument("source level must be finite: " + src.id);
    if (src.trajectory.empty())
      throw std::invalid_argument("source has no trajectory: " + src.id);
    double prev = -std::numeric_limits<double>::infinity();
    for (auto& p : src.trajectory) {
      if (p.time_s < prev)
        throw std::invalid_argument("trajectory not time-sorted: " + src.id);
      prev = p.time_s;
      if (!(p.distance_m > 0.0))
        throw std::invalid_argument("trajectory distance must be positive: " +
                                    src.id);
      const double norm = p.direction.norm();
      if (norm < 1e-9)
        throw std::invalid_argument("trajectory direction is null: " + src.id);
      if (std::abs(norm - 1.0) > 1e-6) {
        warnings.push_back("normalised non-unit trajectory direction for '" +
                           src.id + "'");
        p.direction /= norm;
      } else if (std::abs(norm - 1.0) > 0.0) {
        p.direction /= norm;
      }
    }
  }
}

/// Direct-path image of one source at every mic (block OLA with per-block
/// delay and gain), written into `out` ([mic][sample], pre-sized).
inline void render_direct(const SceneSpec& spec, const SceneSource& src,
                          const std::vector<double>& signal,
                          std::vector<std::vector<double>>& out) {
  const int64_t n = static_cast<int64_t>(signal.size());
  const int num_mics = spec.geometry.num_mics();
  const Vec3 centroid = spec.geometry.centroid();
  const auto window = periodic_hann(kRenderBlock);
  const double fs = spec.sample_rate;

  std::vector<cplx> block(kRenderPad);
  std::vector<cplx> shifted(kRenderPad);
  for (int64_t start = -kRenderHop; start < n; start += kRenderHop) {
    std::fill(block.begin(), block.end(), cplx(0.0, 0.0));
    bool active = false;
    for (int k = 0; k < kRenderBlock; ++k) {
      const int64_t t = start + k;
      if (t < 0 || t >= n) continue;
      const double v = signal[t] * window[k];
      block[kRenderOffset + k] = v;
      active = active || v != 0.0;
    }
    if (!active) continue;
    const auto spectrum = fft_forward(block);

    const double tc =
        std::clamp((start + kRenderBlock / 2) / fs, 0.0, spec.duration_s);
    const auto [dir, dist] = interpolate_trajectory(src.trajectory, tc);
    const Vec3 r = centroid + dir * dist;
    const double d_ref = std::max((r - centroid).norm(), 1e-6);

    for (int m = 0; m < num_mics; ++m) {
      const double d_m = std::max((r - spec.geometry.mics[m]).norm(), 1e-6);
      double delay = fs / spec.speed_of_sound * (d_m - d_ref);
      if (spec.delay_mode == DelayMode::nearest) delay = std::round(delay);
      const double gain = d_ref / d_m;

      shifted[0] = spectrum[0];
      for (int k = 1; k < kRenderPad / 2; ++k) {
        const double phase = -2.0 * kPi * k * delay / kRenderPad;
        shifted[k] = spectrum[k] * cplx(std::cos(phase), std::sin(phase));
        shifted[kRenderPad - k] = std::conj(shifted[k]);
      }
      shifted[kRenderPad / 2] =
          spectrum[kRenderPad / 2] * std::cos(kPi * delay);
      const auto y = fft_inverse(shifted);

      const int64_t base = start - kRenderOffset;
      const int64_t lo = std::max<int64_t>(0, -base);
      const int64_t hi = std::min<int64_t>(kRenderPad, n - base);
      for (int64_t p = lo; p < hi; ++p)
        out[m][base + p] += gain * y[p].real();
    }
  }
}

/// Linear convolution head: first `out_len` samples of x * h, via FFT.
inline std::vector<double> convolve_head(const std::vector<cplx>& x_spectrum,
                                         const std::vector<double>& h,
                                         size_t out_len) {
  const size_t fft_len = x_spectrum.size();
  std::vector<cplx> hp(fft_len, cplx(0.0, 0.0));
  for (size_t i = 0; i < h.size(); ++i) hp[i] = h[i];
  auto hs = fft_forward(hp);
  for (size_t i = 0; i < fft_len; ++i) hs[i] *= x_spectrum[i];
  const auto y = fft_inverse(hs);
  std::vector<double> out(out_len);
  for (size_t i = 0; i < out_len; ++i) out[i] = y[i].real();
  return out;
}

inline std::vector<std::pair<double, double>> find_silence(
    const std::vector<double>& signal, double fs, double min_run_s = 0.05) {
  std::vector<std::pair<double, double>> out;
  const int64_t min_run = std::llround(min_run_s * fs);
  const int64_t n = static_cast<int64_t>(signal.size());
  int64_t run_start = -1;
  for (int64_t t = 0; t <= n; ++t) {
    const bool zero = t < n && signal[t] == 0.0;
    if (zero && run_start < 0) run_start = t;
    if (!zero && run_start >= 0) {
      if (t - run_start >= min_run)
        out.emplace_back(run_start / fs, t / fs);
      run_start = -1;
    }
  }
  return out;
}

}  // namespace detail

/// Render a scene deterministically from (spec, seed). See SceneRender and
/// GroundTruth for the outputs; directions that are not unit vectors are
/// normalised and reported in truth.warnings.
inline SceneRender synthesize_scene(SceneSpec spec, uint32_t seed) {
  SceneRender render;
  detail::validate_scene(spec, render.truth.warnings);

  const double fs = spec.sample_rate;
  const size_t n = static_cast<size_t>(std::llround(spec.duration_s * fs));
  const int num_mics = spec.geometry.num_mics();
  const int num_sources = static_cast<int>(spec.sources.size());
  const bool reverb = spec.reverb.t60_s > 0.0;

  auto& truth = render.truth;
  truth.stems.resize(num_sources);
  if (reverb) truth.direct.resize(num_sources);
  truth.trajectories.resize(num_sources);
  truth.silence.resize(num_sources);

  const int frames = num_stft_frames(n, detail::kRenderBlock, detail::kRenderHop);

  for (int s = 0; s < num_sources; ++s) {
    const auto& src = spec.sources[s];
    truth.source_ids.push_back(src.id);

    // Signal at the nominal centroid level.
    std::vector<double> sig(n, 0.0);
    const size_t copy = std::min(n, src.signal.size());
    std::copy_n(src.signal.begin(), copy, sig.begin());
    double power = 0.0;
    for (double v : sig) power += v * v;
    if (power > 0.0) {
      const double target = std::pow(10.0, src.level_db / 20.0);
      const double scale = target / std::sqrt(power / n);
      for (auto& v : sig) v *= scale;
    }
    truth.silence[s] = detail::find_silence(sig, fs);
    truth.source_signals.push_back(sig);

    AudioBuffer image;
    image.sample_rate = fs;
    image.channels.assign(num_mics, std::vector<double>(n, 0.0));
    detail::render_direct(spec, src, sig, image.channels);

    if (reverb) {
      truth.direct[s] = image;
      double p_direct = 0.0;
      for (const auto& ch : image.channels)
        for (double v : ch) p_direct += v * v;

      // Incoherent exponential tails: an independent decaying-noise kernel
      // per mic, convolved with the source signal and scaled afterwards so
      // the direct-to-reverberant power ratio equals the requested value.
      const size_t kernel_len =
          static_cast<size_t>(std::ceil(1.25 * spec.reverb.t60_s * fs));
      size_t fft_len = 1;
      while (fft_len < n + kernel_len) fft_len <<= 1;
      std::vector<cplx> padded(fft_len, cplx(0.0, 0.0));
      for (size_t t = 0; t < n; ++t) padded[t] = sig[t];
      const auto sig_spectrum = fft_forward(padded);

      std::vector<std::vector<double>> tails(num_mics);
      double p_tail = 0.0;
      for (int m = 0; m < num_mics; ++m) {
        std::mt19937 rng(detail::mix_seed(seed, 0x7001u + 64u * s + m));
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<double> kernel(kernel_len);
        for (size_t t = 0; t < kernel_len; ++t)
          kernel[t] =
              g(rng) * std::pow(10.0, -3.0 * t / (spec.reverb.t60_s * fs));
        tails[m] = detail::convolve_head(sig_spectrum, kernel, n);
        for (double v : tails[m]) p_tail += v * v;
      }
      const double kappa = (p_direct > 0.0 && p_tail > 0.0)
                               ? std::sqrt(p_direct / (spec.reverb.srr * p_tail))
                               : 0.0;
      for (int m = 0; m < num_mics; ++m)
        for (size_t t = 0; t < n; ++t)
          image.channels[m][t] += kappa * tails[m][t];
    }
    truth.stems[s] = std::move(image);

    truth.trajectories[s].resize(frames);
    for (int f = 0; f < frames; ++f) {
      const double t =
          (f * detail::kRenderHop + detail::kRenderBlock / 2) / fs;
      const auto [dir, dist] = interpolate_trajectory(src.trajectory, t);
      truth.trajectories[s][f] = {t, azimuth_deg_of(dir), elevation_deg_of(dir),
                                  dist};
    }
  }

  // Independent coloured noise per mic.
  truth.noise.sample_rate = fs;
  if (spec.noise_level_db) {
    truth.noise.channels.assign(num_mics, std::vector<double>(n, 0.0));
    const double target = std::pow(10.0, *spec.noise_level_db / 20.0);
    for (int m = 0; m < num_mics; ++m) {
      std::mt19937 rng(detail::mix_seed(seed, 0x9101u + m));
      std::normal_distribution<double> g(0.0, 1.0);
      auto& ch = truth.noise.channels[m];
      double lp = 0.0;
      for (size_t t = 0; t < n; ++t) {
        lp = 0.9 * lp + 0.1 * g(rng);
        ch[t] = lp;
      }
      detail::normalize_rms(ch, false);
      for (auto& v : ch) v *= target;
    }
  }

  render.mixture.sample_rate = fs;
  render.mixture.channels.assign(num_mics, std::vector<double>(n, 0.0));
  for (int m = 0; m < num_mics; ++m) {
    auto& mix = render.mixture.channels[m];
    for (int s = 0; s < num_sources; ++s) {
      const auto& stem = truth.stems[s].channels[m];
      for (size_t t = 0; t < n; ++t) mix[t] += stem[t];
    }
    if (!truth.noise.channels.empty()) {
      const auto& nz = truth.noise.channels[m];
      for (size_t t = 0; t < n; ++t) mix[t] += nz[t];
    }
  }
  return render;
}

// ---------------------------------------------------------------------------
// Ground-truth CSV export
// ---------------------------------------------------------------------------

inline std::string truth_csv_string(const GroundTruth& truth) {
  std::ostringstream out;
  out << "time_s,source_id,azimuth_deg,elevation_deg,distance_m\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  const int frames = truth.trajectories.empty()
                         ? 0
                         : static_cast<int>(truth.trajectories[0].size());
  for (int f = 0; f < frames; ++f)
    for (size_t s = 0; s < truth.trajectories.size(); ++s) {
      const auto& t = truth.trajectories[s][f];
      out << t.time_s << ',' << truth.source_ids[s] << ',' << t.azimuth_deg
          << ',' << t.elevation_deg << ',' << t.distance_m << '\n';
    }
  return out.str();
}

inline void write_truth_csv(const std::string& path, const GroundTruth& truth) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << truth_csv_string(truth);
  if (!out) throw io_error("short write to " + path);
}

/// Trajectories read back from a truth CSV, ids in first-seen order.
struct TruthTable {
  std::vector<std::string> source_ids;
  std::vector<std::vector<TruthSample>> trajectories;  // [source][frame]

  int find(const std::string& id) const {
    for (size_t s = 0; s < source_ids.size(); ++s)
      if (source_ids[s] == id) return static_cast<int>(s);
    return -1;
  }

  /// (time, unit direction) pairs for one source, for steering a reference.
  std::vector<std::pair<double, Vec3>> direction_samples(int source) const {
    std::vector<std::pair<double, Vec3>> out;
    out.reserve(trajectories[source].size());
    for (const auto& t : trajectories[source])
      out.emplace_back(t.time_s,
                       direction_from_angles(t.azimuth_deg, t.elevation_deg));
    return out;
  }
};

inline TruthTable parse_truth_csv(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) ||
      line != "time_s,source_id,azimuth_deg,elevation_deg,distance_m")
    throw io_error("truth CSV: missing or wrong header");
  TruthTable table;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 5) throw io_error("truth CSV: expected 5 fields");
    TruthSample s;
    s.time_s = detail::parse_double(f[0], "truth CSV");
    s.azimuth_deg = detail::parse_double(f[2], "truth CSV");
    s.elevation_deg = detail::parse_double(f[3], "truth CSV");
    s.distance_m = detail::parse_double(f[4], "truth CSV");
    int idx = table.find(f[1]);
    if (idx < 0) {
      idx = static_cast<int>(table.source_ids.size());
      table.source_ids.push_back(f[1]);
      table.trajectories.emplace_back();
    }
    table.trajectories[idx].push_back(s);
  }
  return table;
}

inline TruthTable read_truth_csv(const std::string& path) {
  return parse_truth_csv(detail::read_text_file(path));
}

// ---------------------------------------------------------------------------
// Standard fixtures
// ---------------------------------------------------------------------------

inline std::vector<std::string> standard_fixture_names() {
  return {"single-static",        "three-static",        "four-moving",
          "two-crossing",         "single-static-reverb", "three-static-reverb",
          "four-moving-reverb",   "two-crossing-reverb"};
}

/// Deterministic named test scenes. The "-reverb" variants add a 0.35 s
/// T60 tail at a direct-to-reverberant ratio of 3.3; all include -30 dB
/// diffuse noise and sources at -10 dB.
inline SceneSpec make_fixture(const std::string& name, uint32_t seed) {
  std::string base = name;
  bool reverb = false;
  const std::string suffix = "-reverb";
  if (base.size() > suffix.size() &&
      base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
    reverb = true;
    base = base.substr(0, base.size() - suffix.size());
  }

  SceneSpec spec;
  spec.geometry = cube_array();
  spec.sample_rate = 48000.0;
  spec.noise_level_db = -30.0;
  if (reverb) spec.reverb = {0.35, 3.3};

  const double fs = spec.sample_rate;
  auto static_point = [](double az_deg, double dist) {
    return std::vector<TrajectoryPoint>{
        {0.0, direction_from_angles(az_deg, 0.0), dist}};
  };
  auto arc = [&](double az0_deg, double az1_deg, double dist,
                 double duration) {
    std::vector<TrajectoryPoint> traj;
    for (double t = 0.0; t <= duration + 1e-9; t += 0.5) {
      const double az = az0_deg + (az1_deg - az0_deg) * t / duration;
      traj.push_back({t, direction_from_angles(az, 0.0), dist});
    }
    return traj;
  };
  auto speech = [&](size_t samples, int idx, double mod_hz) {
    return speech_shaped_noise(samples, fs, detail::mix_seed(seed, 17u * idx),
                               mod_hz, 0.4 * idx);
  };

  if (base == "single-static") {
    spec.duration_s = 4.0;
    const size_t n = static_cast<size_t>(spec.duration_s * fs);
    spec.sources.push_back(
        {"s0", speech(n, 0, 0.9), static_point(40.0, 3.0), -10.0});
  } else if (base == "three-static") {
    spec.duration_s = 10.0;
    const size_t n = static_cast<size_t>(spec.duration_s * fs);
    const double az[3] = {-90.0, 0.0, 135.0};
    const double mods[3] = {0.7, 1.1, 1.7};
    for (int i = 0; i < 3; ++i) {
      auto sig = speech(n, i, mods[i]);
      // Each speaker pauses once so silence attenuation can be scored.
      apply_silence(sig, fs, {{1.0 + 3.0 * i, 2.0 + 3.0 * i}});
      spec.sources.push_back({"s" + std::to_string(i), std::move(sig),
                              static_point(az[i], 1.5), -10.0});
    }
  } else if (base == "four-moving") {
    spec.duration_s = 6.0;
    const size_t n = static_cast<size_t>(spec.duration_s * fs);
    for (int i = 0; i < 4; ++i) {
      const double az0 = -150.0 + 80.0 * i;
      spec.sources.push_back({"s" + std::to_string(i),
                              speech(n, i, 0.6 + 0.4 * i),
                              arc(az0, az0 + 120.0, 1.5, spec.duration_s),
                              -10.0});
    }
  } else if (base == "two-crossing") {
    spec.duration_s = 6.0;
    const size_t n = static_cast<size_t>(spec.duration_s * fs);
    spec.sources.push_back({"s0", speech(n, 0, 0.8),
                            arc(-60.0, 60.0, 1.5, spec.duration_s), -10.0});
    spec.sources.push_back({"s1", speech(n, 1, 1.3),
                            arc(60.0, -60.0, 1.5, spec.duration_s), -10.0});
  } else {
    throw std::invalid_argument("unknown fixture: " + name);
  }
  return spec;
}

inline std::vector<std::pair<std::string, SceneSpec>> standard_fixtures(
    uint32_t seed) {
  std::vector<std::pair<std::string, SceneSpec>> out;
  for (const auto& name : standard_fixture_names())
    out.emplace_back(name, make_fixture(name, seed));
  return out;
}

}  // namespace earshot
