// tracking.hpp: multi-source particle-filter tracker. Converts noisy
// per-frame beamformer detections into identity-stable trajectories with
// probabilistic observation-to-track assignment and birth/death management.
#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "earshot/common.hpp"
#include "earshot/localization.hpp"

namespace earshot {

enum class MotionRegime { stationary = 0, constant_velocity = 1, accelerated = 2 };

struct Particle {
  Vec3 position = Vec3::UnitX();  // unit vector
  Vec3 velocity = Vec3::Zero();   // tangent to the sphere, 1/s
  MotionRegime regime = MotionRegime::stationary;
};

struct TrackerConfig {
  int num_particles = 1000;
  double delta_t = 0.04;          // s between tracker steps (25 Hz)
  double obs_sigma = 0.05;        // beamformer error, Euclidean units (~3 deg RMS)
  double p_not_observed = 0.2;    // P_o: chance an existing source goes undetected
  double p_new = 0.005;           // prior for a brand-new source per detection
  double p_false = 0.05;          // prior for a false detection
  double birth_threshold = 0.3;   // on P_q(H2)
  double confirm_threshold = 0.98;  // existence freeze
  double observed_threshold = 0.5;  // P_j below this counts as unobserved
  double death_time = 2.0;          // s unobserved before removal
  double estimate_delay = 0.5;      // s of smoothing lag for delayed estimates
  double resample_ratio = 0.7;      // resample when N_eff < ratio * N_p
  int max_tracks = 8;               // assignment enumeration guard
  double merge_distance_deg = 4.0;  // closer than this counts as shadowing
  double merge_time = 1.0;          // s of shadowing before tracks merge
  // Per-regime damping/excitation and the mixture drawn at (re)sampling.
  double regime_alpha[3] = {2.0, 0.05, 0.5};
  double regime_beta[3] = {0.04, 0.2, 0.2};
  double regime_prob[3] = {0.4, 0.4, 0.2};
};

/// First-order damping over one step: velocity keeps this fraction.
inline double damping_factor(double alpha, double delta_t) {
  return std::exp(-alpha * delta_t);
}

/// Excitation scale paired with a damping factor so the stationary speed
/// variance stays beta^2.
inline double excitation_factor(double beta, double damping) {
  return beta * std::sqrt(1.0 - damping * damping);
}

/// Isotropic Gaussian observation density (three Euclidean coordinates).
inline double observation_likelihood(const Vec3& particle, const Vec3& observation,
                                     double sigma) {
  const double d2 = (particle - observation).squaredNorm();
  const double norm = std::pow(2.0 * kPi * sigma * sigma, -1.5);
  return norm * std::exp(-0.5 * d2 / (sigma * sigma));
}

inline constexpr double kUniformSphereDensity = 1.0 / (4.0 * kPi);

struct SourceTrack {
  int id = -1;
  std::vector<Particle> particles;
  std::vector<double> weights;
  double existence = 0.0;  // P(E_j | O)
  double activity = 0.5;   // P(A_j | O)
  bool confirmed = false;
  long born_frame = 0;
  long last_observed = 0;             // last frame with P_j >= observed_threshold
  bool degenerate_update = false;     // all-zero likelihood seen this step
  // history[h][i]: position of particle i, h steps ago (h = 0 is current).
  std::deque<std::vector<Vec3>> history;

  /// Weighted particle mean pulled back to the sphere; delay_steps reaches
  /// into history (clamped to what is available).
  Vec3 estimate(int delay_steps = 0) const {
    const int h = std::min<int>(delay_steps, static_cast<int>(history.size()) - 1);
    const std::vector<Vec3>& pos = history[std::max(h, 0)];
    Vec3 mean = Vec3::Zero();
    for (size_t i = 0; i < pos.size(); ++i) mean += weights[i] * pos[i];
    const double n = mean.norm();
    return n > 1e-12 ? Vec3(mean / n) : pos[0];
  }
};

/// Marginal posteriors of the observation-to-track assignment.
struct AssignmentDistribution {
  // track_posterior[q][j]: P that observation q belongs to track j (H1).
  std::vector<std::vector<double>> track_posterior;
  std::vector<double> false_posterior;  // P_q(H0)
  std::vector<double> new_posterior;    // P_q(H2)
};

/// Enumerate every injective assignment of observations to {false, new,
/// track j} and marginalise. Likelihoods: uniform over the sphere for
/// false/new, particle mixture for tracks. Priors follow the per-detection
/// confidence P_q and each track's probability of being observable.
inline AssignmentDistribution assignment_posteriors(
    const std::vector<PotentialSource>& observations,
    const std::vector<SourceTrack>& tracks, const TrackerConfig& cfg) {
  const int q_count = static_cast<int>(observations.size());
  const int m = static_cast<int>(tracks.size());
  if (m > cfg.max_tracks)
    throw std::invalid_argument("assignment_posteriors: too many tracks to enumerate");

  AssignmentDistribution dist;
  dist.track_posterior.assign(q_count, std::vector<double>(m, 0.0));
  dist.false_posterior.assign(q_count, 0.0);
  dist.new_posterior.assign(q_count, 0.0);
  if (q_count == 0) return dist;

  // Pre-compute the particle-mixture likelihood of each (q, j).
  std::vector<std::vector<double>> track_like(q_count, std::vector<double>(m, 0.0));
  for (int q = 0; q < q_count; ++q)
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (size_t i = 0; i < tracks[j].particles.size(); ++i)
        acc += tracks[j].weights[i] *
               observation_likelihood(tracks[j].particles[i].position,
                                      observations[q].direction, cfg.obs_sigma);
      track_like[q][j] = acc;
    }

  std::vector<int> assign(q_count, -2);
  std::vector<bool> used(m, false);
  double total = 0.0;

  // Depth-first enumeration of injective assignments; "weight" carries the
  // running product of prior * likelihood over the already-assigned q.
  auto recurse = [&](auto&& self, int q, double weight) -> void {
    if (q == q_count) {
      total += weight;
      for (int k = 0; k < q_count; ++k) {
        if (assign[k] == -2)
          dist.false_posterior[k] += weight;
        else if (assign[k] == -1)
          dist.new_posterior[k] += weight;
        else
          dist.track_posterior[k][assign[k]] += weight;
      }
      return;
    }
    const double pq = observations[q].probability;
    assign[q] = -2;
    self(self, q + 1, weight * (1.0 - pq) * cfg.p_false * kUniformSphereDensity);
    assign[q] = -1;
    self(self, q + 1, weight * pq * cfg.p_new * kUniformSphereDensity);
    for (int j = 0; j < m; ++j) {
      if (used[j]) continue;
      const double observable = tracks[j].existence * tracks[j].activity;
      used[j] = true;
      assign[q] = j;
      self(self, q + 1, weight * pq * observable * track_like[q][j]);
      used[j] = false;
    }
    assign[q] = -2;
  };
  recurse(recurse, 0, 1.0);

  if (total > 0.0) {
    for (int q = 0; q < q_count; ++q) {
      dist.false_posterior[q] /= total;
      dist.new_posterior[q] /= total;
      for (int j = 0; j < m; ++j) dist.track_posterior[q][j] /= total;
    }
  } else {
    // No assignment carries any mass (e.g. all priors zero): call
    // everything a false detection.
    for (int q = 0; q < q_count; ++q) dist.false_posterior[q] = 1.0;
  }
  return dist;
}

/// Recursive existence update: observation evidence P_j plus the decayed
/// prior, with P_o the chance an existing source is missed this frame.
inline double update_existence(double p_j, double prior, double p_not_observed) {
  const double carried = p_not_observed * prior / (1.0 - (1.0 - p_not_observed) * prior);
  return p_j + (1.0 - p_j) * carried;
}

/// Temporal prior for activity under the stay/switch Markov chain.
inline double activity_prior(double previous_posterior) {
  return 0.95 * previous_posterior + 0.05 * (1.0 - previous_posterior);
}

/// Fuse the temporal prior with instantaneous evidence (both in [0,1]).
inline double fuse_activity(double prior, double instantaneous) {
  const double on = prior * instantaneous;
  const double off = (1.0 - prior) * (1.0 - instantaneous);
  if (on + off <= 0.0) return 0.5;
  return on / (on + off);
}

/// Multi-target tracker over unit-sphere directions.
class Tracker {
 public:
  Tracker(const TrackerConfig& cfg, uint64_t seed) : cfg_(cfg), rng_(seed) {
    history_depth_ =
        static_cast<int>(std::lround(cfg.estimate_delay / cfg.delta_t)) + 1;
  }

  /// Advance one step (ΔT) with the current frame's detections.
  void step(const std::vector<PotentialSource>& observations) {
    ++frame_;
    for (auto& t : tracks_) predict(t);
    const AssignmentDistribution dist = assignment_posteriors(observations, tracks_, cfg_);

    for (size_t j = 0; j < tracks_.size(); ++j) {
      SourceTrack& t = tracks_[j];
      double p_j = 0.0;
      for (size_t q = 0; q < observations.size(); ++q)
        p_j += dist.track_posterior[q][j];
      p_j = std::min(p_j, 1.0);

      update_weights(t, observations, dist, static_cast<int>(j), p_j);

      t.existence = update_existence(p_j, t.existence, cfg_.p_not_observed);
      if (t.existence >= cfg_.confirm_threshold) t.confirmed = true;
      if (t.confirmed) t.existence = 1.0;

      t.activity = fuse_activity(activity_prior(t.activity), instantaneous_activity(p_j));

      if (p_j >= cfg_.observed_threshold) t.last_observed = frame_;

      maybe_resample(t);
      push_history(t);
    }

    // Births: a detection that looks like a brand-new source spawns a track,
    // which only participates in assignment from the next frame on. Its
    // existence starts from the evidence that triggered the birth.
    for (size_t q = 0; q < observations.size(); ++q) {
      if (dist.new_posterior[q] > cfg_.birth_threshold &&
          static_cast<int>(tracks_.size()) < cfg_.max_tracks)
        tracks_.push_back(spawn(observations[q].direction, dist.new_posterior[q]));
    }

    // Deaths: unobserved for longer than the limit.
    const long death_frames = std::lround(cfg_.death_time / cfg_.delta_t);
    std::erase_if(tracks_, [&](const SourceTrack& t) {
      return frame_ - t.last_observed > death_frames;
    });

    merge_shadowing_tracks();
  }

  const std::vector<SourceTrack>& tracks() const { return tracks_; }
  long frame() const { return frame_; }
  int delayed_steps() const { return history_depth_ - 1; }

  /// Exposed for tests: one prediction pass over a track.
  void predict(SourceTrack& t) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& p : t.particles) {
      const int r = static_cast<int>(p.regime);
      const double a = damping_factor(cfg_.regime_alpha[r], cfg_.delta_t);
      const double b = excitation_factor(cfg_.regime_beta[r], a);
      const Vec3 excitation(n(rng_), n(rng_), n(rng_));
      p.velocity = a * p.velocity + b * excitation;
      p.position += cfg_.delta_t * p.velocity;
      p.position.normalize();
      p.velocity -= p.velocity.dot(p.position) * p.position;  // keep tangent
    }
  }

  /// Exposed for tests: blend uniform survival with observation evidence.
  void update_weights(SourceTrack& t, const std::vector<PotentialSource>& observations,
                      const AssignmentDistribution& dist, int j, double p_j) {
    const int n = static_cast<int>(t.particles.size());
    t.degenerate_update = false;
    if (observations.empty() || p_j <= 0.0) return;  // uniform posterior

    std::vector<double> instant(n, 0.0);
    double norm = 0.0;
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (size_t q = 0; q < observations.size(); ++q) {
        const double pqj = dist.track_posterior[q][j];
        if (pqj <= 0.0) continue;
        acc += pqj * observation_likelihood(t.particles[i].position,
                                            observations[q].direction, cfg_.obs_sigma);
      }
      instant[i] = acc;
      norm += acc;
    }
    if (norm <= 0.0) {
      t.degenerate_update = true;  // evidence vanished everywhere; keep weights
      return;
    }
    double wsum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double posterior = (1.0 - p_j) / n + p_j * instant[i] / norm;
      t.weights[i] *= posterior;
      wsum += t.weights[i];
    }
    for (auto& w : t.weights) w /= wsum;
  }

  /// Exposed for tests: systematic resampling when N_eff drops too low.
  bool maybe_resample(SourceTrack& t) {
    const int n = static_cast<int>(t.particles.size());
    double sum_sq = 0.0;
    for (double w : t.weights) sum_sq += w * w;
    const double n_eff = 1.0 / sum_sq;
    if (n_eff >= cfg_.resample_ratio * n) return false;

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double start = u01(rng_) / n;
    std::vector<Particle> next(n);
    std::vector<std::vector<Vec3>> next_history(t.history.size(),
                                                std::vector<Vec3>(n));
    double cumulative = t.weights[0];
    int src = 0;
    for (int k = 0; k < n; ++k) {
      const double target = start + static_cast<double>(k) / n;
      while (cumulative < target && src + 1 < n) cumulative += t.weights[++src];
      next[k] = t.particles[src];
      next[k].regime = sample_regime();
      for (size_t h = 0; h < t.history.size(); ++h)
        next_history[h][k] = t.history[h][src];
    }
    t.particles = std::move(next);
    for (size_t h = 0; h < t.history.size(); ++h) t.history[h] = std::move(next_history[h]);
    std::fill(t.weights.begin(), t.weights.end(), 1.0 / n);
    return true;
  }

  SourceTrack spawn(const Vec3& direction, double initial_existence = 0.5) {
    SourceTrack t;
    t.id = next_id_++;
    t.born_frame = frame_;
    t.last_observed = frame_;
    // A single detection, however loud, is never enough to confirm a track:
    // cap the birth existence just below the confirmation level so at least
    // one corroborating update is required.
    t.existence = std::min(initial_existence, 0.97 * cfg_.confirm_threshold);
    t.activity = 0.5;
    std::normal_distribution<double> n(0.0, cfg_.obs_sigma);
    t.particles.resize(cfg_.num_particles);
    t.weights.assign(cfg_.num_particles, 1.0 / cfg_.num_particles);
    for (auto& p : t.particles) {
      p.position = (direction + Vec3(n(rng_), n(rng_), n(rng_))).normalized();
      p.velocity = Vec3::Zero();
      p.regime = sample_regime();
    }
    push_history(t);
    return t;
  }

 private:
  // Instantaneous activity evidence: the frame's observation mass for the
  // track, clamped away from 0 and 1. A single missed frame is weak evidence
  // (the detector itself is fallible), and an exact zero would make the
  // Bayesian fuse absorbing: activity gates observability, so a track whose
  // activity ever hit 0 could never claim a detection again.
  static double instantaneous_activity(double p_j) {
    return std::clamp(p_j, 0.05, 0.95);
  }

  // Two tracks sitting on top of each other for a sustained stretch are
  // duplicate hypotheses for one physical source (typically a replacement
  // born while the original coasted through a detection dropout).  Drop the
  // younger one: the elder carries the source's history, so identity through
  // crossings stays with the original track.
  void merge_shadowing_tracks() {
    if (tracks_.size() < 2) return;
    const double cos_merge =
        std::cos(cfg_.merge_distance_deg * kPi / 180.0);
    const long merge_steps = std::lround(cfg_.merge_time / cfg_.delta_t);

    std::vector<Vec3> centers(tracks_.size());
    for (size_t i = 0; i < tracks_.size(); ++i) centers[i] = tracks_[i].estimate(0);

    std::set<std::pair<int, int>> close;
    for (size_t i = 0; i < tracks_.size(); ++i)
      for (size_t j = i + 1; j < tracks_.size(); ++j)
        if (centers[i].dot(centers[j]) > cos_merge)
          close.insert({std::min(tracks_[i].id, tracks_[j].id),
                        std::max(tracks_[i].id, tracks_[j].id)});

    // Separated (or dead) pairs lose their streak.
    for (auto it = shadow_steps_.begin(); it != shadow_steps_.end();)
      it = close.count(it->first) ? std::next(it) : shadow_steps_.erase(it);

    std::set<int> doomed;
    for (const auto& key : close) {
      if (++shadow_steps_[key] < merge_steps) continue;
      const SourceTrack* a = nullptr;
      const SourceTrack* b = nullptr;
      for (const auto& t : tracks_) {
        if (t.id == key.first) a = &t;
        if (t.id == key.second) b = &t;
      }
      const bool keep_first = a->born_frame != b->born_frame
                                  ? a->born_frame < b->born_frame
                                  : a->id < b->id;
      doomed.insert(keep_first ? b->id : a->id);
    }
    if (!doomed.empty())
      std::erase_if(tracks_,
                    [&](const SourceTrack& t) { return doomed.count(t.id) > 0; });
  }

  MotionRegime sample_regime() {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double r = u01(rng_);
    if (r < cfg_.regime_prob[0]) return MotionRegime::stationary;
    if (r < cfg_.regime_prob[0] + cfg_.regime_prob[1])
      return MotionRegime::constant_velocity;
    return MotionRegime::accelerated;
  }

  void push_history(SourceTrack& t) {
    std::vector<Vec3> snapshot(t.particles.size());
    for (size_t i = 0; i < t.particles.size(); ++i) snapshot[i] = t.particles[i].position;
    t.history.push_front(std::move(snapshot));
    while (static_cast<int>(t.history.size()) > history_depth_) t.history.pop_back();
  }

  TrackerConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<SourceTrack> tracks_;
  // Consecutive steps each live track pair has spent within merge range,
  // keyed by (smaller id, larger id).
  std::map<std::pair<int, int>, long> shadow_steps_;
  long frame_ = 0;
  int next_id_ = 0;
  int history_depth_ = 1;
};

}  // namespace earshot
