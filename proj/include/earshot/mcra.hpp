// mcra.hpp: minima-controlled recursive averaging noise floor estimator.
#pragma once

#include <algorithm>
#include <vector>

#include "earshot/common.hpp"

namespace earshot {

/// Per-bin stationary noise power estimate. The floor follows slow power
/// changes but freezes whenever the smoothed power rises well above the
/// tracked minimum, so short high-energy bursts (speech) barely move it.
class McraEstimator {
 public:
  McraEstimator(int num_bins, int minima_window_frames = 140, double smoothing = 0.95)
      : num_bins_(num_bins),
        window_(std::max(2, minima_window_frames)),
        alpha_d_(smoothing),
        noise_(num_bins, 0.0),
        smoothed_(num_bins, 0.0),
        minimum_(num_bins, 0.0),
        min_candidate_(num_bins, 0.0),
        presence_(num_bins, 0.0) {}

  /// Prime the floor with an externally supplied power estimate, as if a
  /// first frame of exactly that power had been observed.  Used when a new
  /// stream starts with a borrowed noise estimate instead of real data.
  void seed(const std::vector<double>& power) {
    noise_ = power;
    smoothed_ = power;
    minimum_ = power;
    min_candidate_ = power;
    initialized_ = true;
    frame_ = 1;
  }

  /// Advance one frame given the instantaneous per-bin power |X[k]|^2.
  void update(const std::vector<double>& power) {
    if (!initialized_) {
      noise_ = power;
      smoothed_ = power;
      minimum_ = power;
      min_candidate_ = power;
      initialized_ = true;
      frame_ = 1;
      return;
    }
    for (int k = 0; k < num_bins_; ++k) {
      // Lightly smoothed power drives minima tracking and presence detection.
      smoothed_[k] = kAlphaS * smoothed_[k] + (1.0 - kAlphaS) * power[k];
      minimum_[k] = std::min(minimum_[k], smoothed_[k]);
      min_candidate_[k] = std::min(min_candidate_[k], smoothed_[k]);
      const bool present = smoothed_[k] > kRatioThreshold * minimum_[k];
      presence_[k] = kAlphaP * presence_[k] + (1.0 - kAlphaP) * (present ? 1.0 : 0.0);
      // Hard-freeze the floor while presence is detected; otherwise recurse
      // with an effective constant pulled toward 1 by lingering presence.
      const double alpha =
          present ? 1.0 : alpha_d_ + (1.0 - alpha_d_) * presence_[k];
      noise_[k] = alpha * noise_[k] + (1.0 - alpha) * power[k];
      // A stationary floor can never exceed the tracked minimum by more than
      // the estimator's statistical bias.  Without this cap a floor seeded
      // during loud audio stays frozen high (presence keeps alpha at 1) and
      // over-suppresses everything for several seconds.
      noise_[k] = std::min(noise_[k], kMinBias * minimum_[k]);
    }
    if (++frame_ % window_ == 0) {
      // Two-buffer minimum: restart the candidate so the tracked minimum
      // never looks further back than two windows.
      minimum_ = min_candidate_;
      min_candidate_ = smoothed_;
    }
  }

  const std::vector<double>& noise() const { return noise_; }
  int num_bins() const { return num_bins_; }

 private:
  static constexpr double kAlphaS = 0.8;          // power smoothing
  static constexpr double kAlphaP = 0.2;          // presence smoothing
  static constexpr double kRatioThreshold = 5.0;  // smoothed/minimum => speech
  static constexpr double kMinBias = 2.5;         // floor cap over the minimum

  int num_bins_;
  int window_;
  double alpha_d_;
  bool initialized_ = false;
  long frame_ = 0;
  std::vector<double> noise_, smoothed_, minimum_, min_candidate_, presence_;
};

}  // namespace earshot
