// config.hpp: one aggregate settings object for the whole pipeline, loadable
// from JSON.  Unknown keys are rejected (catching typos), values are
// range-checked, and every field defaults to the module defaults so an empty
// object {} reproduces the stock pipeline.
#pragma once

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "earshot/common.hpp"
#include "earshot/features.hpp"
#include "earshot/geometry.hpp"
#include "earshot/localization.hpp"
#include "earshot/postfilter.hpp"
#include "earshot/separation.hpp"
#include "earshot/tracking.hpp"

namespace earshot {

/// All tunables for the pipeline stages.  The tracker period is derived:
/// one tracker step every `track_stride` STFT frames, so
/// delta_t = track_stride * hop / sample_rate (~42.7 ms at the defaults).
struct RunConfig {
  unsigned long seed = 1;
  int hop = 512;                 // STFT hop, samples
  int track_stride = 4;          // STFT frames per tracker step
  double mask_threshold = 0.25;  // feature-mask reliability cut
  double array_half_side = 0.08; // cube microphone array, metres

  LocalizerConfig localizer;  // includes the spectral weighting block
  TrackerConfig tracker;
  GssConfig gss;
  PostfilterConfig postfilter;
  FeatureConfig features;

  ArrayGeometry geometry() const { return cube_array(array_half_side); }
  double frame_period_s() const { return hop / localizer.sample_rate; }
  double tracker_period_s() const { return track_stride * frame_period_s(); }
};

namespace detail {

inline void check_keys(const nlohmann::json& j,
                       std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object())
    throw config_error("config: '" + where + "' must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items())
    if (!ok.count(item.key()))
      throw config_error("config: unknown key '" + item.key() + "' in " +
                         where);
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw config_error(std::string("config: key '") + key +
                         "' has the wrong type");
    }
  }
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw config_error("config: " + what);
}

}  // namespace detail

inline void validate_run_config(const RunConfig& c) {
  using detail::require;
  const auto& l = c.localizer;
  require(l.frame_length >= 64 && l.frame_length % 2 == 0,
          "frame_length must be even and >= 64");
  require(c.hop > 0 && c.hop <= l.frame_length,
          "hop must be in (0, frame_length]");
  require(c.track_stride >= 1, "track_stride must be >= 1");
  require(c.mask_threshold > 0.0 && c.mask_threshold < 1.0,
          "mask_threshold must be in (0, 1)");
  require(c.array_half_side > 0.0, "array_half_side must be positive");

  require(l.sample_rate > 0.0, "sample_rate must be positive");
  require(l.speed_of_sound > 0.0, "speed_of_sound must be positive");
  require(l.grid_levels >= 0 && l.grid_levels <= 6,
          "grid_levels must be in [0, 6]");
  require(l.averaging_frames >= 1, "averaging_frames must be >= 1");
  require(l.max_sources >= 1 && l.max_sources <= 8,
          "max_sources must be in [1, 8]");
  require(l.energy_threshold > 0.0, "energy_threshold must be positive");
  const auto& w = l.weighting;
  require(w.alpha_d > 0.0 && w.alpha_d <= 1.0, "alpha_d must be in (0, 1]");
  require(w.reverb_decay >= 0.0 && w.reverb_decay < 1.0,
          "reverb_decay must be in [0, 1)");
  require(w.srr > 0.0, "srr must be positive");
  require(w.mcra_window >= 2, "mcra_window must be >= 2");
  require(w.mcra_smoothing >= 0.0 && w.mcra_smoothing < 1.0,
          "mcra_smoothing must be in [0, 1)");

  const auto& t = c.tracker;
  require(t.num_particles >= 1, "num_particles must be >= 1");
  require(t.obs_sigma > 0.0, "obs_sigma must be positive");
  const std::pair<double, const char*> probs[] = {
      {t.p_not_observed, "p_not_observed"},
      {t.p_new, "p_new"},
      {t.p_false, "p_false"},
      {t.birth_threshold, "birth_threshold"},
      {t.confirm_threshold, "confirm_threshold"},
      {t.observed_threshold, "observed_threshold"}};
  for (const auto& [v, name] : probs)
    require(v >= 0.0 && v <= 1.0, std::string(name) + " must be in [0, 1]");
  require(t.death_time > 0.0, "death_time must be positive");
  require(t.estimate_delay >= 0.0, "estimate_delay must be >= 0");
  require(t.resample_ratio > 0.0 && t.resample_ratio <= 1.0,
          "resample_ratio must be in (0, 1]");
  require(t.max_tracks >= 1 && t.max_tracks <= 16,
          "max_tracks must be in [1, 16]");
  require(t.merge_distance_deg > 0.0, "merge_distance_deg must be positive");
  require(t.merge_time > 0.0, "merge_time must be positive");

  require(c.gss.mu > 0.0, "mu must be positive");
  require(c.gss.lambda >= 0.0, "lambda must be >= 0");
  require(c.gss.lambda * c.gss.mu < 1.0, "lambda * mu must be < 1");

  const auto& p = c.postfilter;
  require(p.eta >= 0.0 && p.eta <= 1.0, "eta must be in [0, 1]");
  require(p.alpha_s > 0.0 && p.alpha_s < 1.0, "alpha_s must be in (0, 1)");
  require(p.alpha_p_min > 0.0 && p.alpha_p_min <= 1.0,
          "alpha_p_min must be in (0, 1]");
  require(p.g_min > 0.0 && p.g_min <= 1.0, "g_min must be in (0, 1]");
  require(p.theta > 0.0, "theta must be positive");
  require(p.alpha_zeta > 0.0 && p.alpha_zeta <= 1.0,
          "alpha_zeta must be in (0, 1]");
  require(p.q_max >= 0.0 && p.q_max < 1.0, "q_max must be in [0, 1)");
  require(p.local_bandwidth_hz > 0.0, "local_bandwidth_hz must be positive");
  require(p.global_bandwidth_hz >= p.local_bandwidth_hz,
          "global_bandwidth_hz must be >= local_bandwidth_hz");
  require(p.srr > 0.0, "postfilter srr must be positive");

  const auto& f = c.features;
  require(f.sample_rate > 0.0, "feature sample_rate must be positive");
  require(f.frame_length > 0, "feature frame_length must be positive");
  require(f.hop > 0 && f.hop <= f.frame_length,
          "feature hop must be in (0, frame_length]");
  require(f.num_bands >= 2, "num_bands must be >= 2");
  require(f.kept_cepstra >= 1 && f.kept_cepstra <= f.num_bands,
          "kept_cepstra must be in [1, num_bands]");
  require(f.fmin_hz >= 0.0, "fmin_hz must be >= 0");
  require(f.fmax_hz > f.fmin_hz && f.fmax_hz <= f.sample_rate / 2.0,
          "fmax_hz must be in (fmin_hz, sample_rate/2]");
}

/// Build a RunConfig from parsed JSON.  Every key is optional; unknown keys
/// anywhere in the tree are an error.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::get_if;
  RunConfig c;
  check_keys(j,
             {"seed", "hop", "track_stride", "mask_threshold",
              "array_half_side", "localizer", "tracker", "gss", "postfilter",
              "features"},
             "top level");
  get_if(j, "seed", c.seed);
  get_if(j, "hop", c.hop);
  get_if(j, "track_stride", c.track_stride);
  get_if(j, "mask_threshold", c.mask_threshold);
  get_if(j, "array_half_side", c.array_half_side);

  if (j.contains("localizer")) {
    const auto& jl = j.at("localizer");
    check_keys(jl,
               {"frame_length", "sample_rate", "speed_of_sound", "grid_levels",
                "averaging_frames", "max_sources", "energy_threshold",
                "refine", "weighting"},
               "localizer");
    auto& l = c.localizer;
    get_if(jl, "frame_length", l.frame_length);
    get_if(jl, "sample_rate", l.sample_rate);
    get_if(jl, "speed_of_sound", l.speed_of_sound);
    get_if(jl, "grid_levels", l.grid_levels);
    get_if(jl, "averaging_frames", l.averaging_frames);
    get_if(jl, "max_sources", l.max_sources);
    get_if(jl, "energy_threshold", l.energy_threshold);
    get_if(jl, "refine", l.refine);
    if (jl.contains("weighting")) {
      const auto& jw = jl.at("weighting");
      check_keys(jw,
                 {"alpha_d", "reverb_term", "reverb_decay", "srr",
                  "mcra_window", "mcra_smoothing"},
                 "localizer.weighting");
      auto& w = l.weighting;
      get_if(jw, "alpha_d", w.alpha_d);
      get_if(jw, "reverb_term", w.reverb_term);
      get_if(jw, "reverb_decay", w.reverb_decay);
      get_if(jw, "srr", w.srr);
      get_if(jw, "mcra_window", w.mcra_window);
      get_if(jw, "mcra_smoothing", w.mcra_smoothing);
    }
  }

  if (j.contains("tracker")) {
    const auto& jt = j.at("tracker");
    check_keys(jt,
               {"num_particles", "obs_sigma", "p_not_observed", "p_new",
                "p_false", "birth_threshold", "confirm_threshold",
                "observed_threshold", "death_time", "estimate_delay",
                "resample_ratio", "max_tracks", "merge_distance_deg",
                "merge_time"},
               "tracker");
    auto& t = c.tracker;
    get_if(jt, "num_particles", t.num_particles);
    get_if(jt, "obs_sigma", t.obs_sigma);
    get_if(jt, "p_not_observed", t.p_not_observed);
    get_if(jt, "p_new", t.p_new);
    get_if(jt, "p_false", t.p_false);
    get_if(jt, "birth_threshold", t.birth_threshold);
    get_if(jt, "confirm_threshold", t.confirm_threshold);
    get_if(jt, "observed_threshold", t.observed_threshold);
    get_if(jt, "death_time", t.death_time);
    get_if(jt, "estimate_delay", t.estimate_delay);
    get_if(jt, "resample_ratio", t.resample_ratio);
    get_if(jt, "max_tracks", t.max_tracks);
    get_if(jt, "merge_distance_deg", t.merge_distance_deg);
    get_if(jt, "merge_time", t.merge_time);
  }

  if (j.contains("gss")) {
    const auto& jg = j.at("gss");
    check_keys(jg, {"mu", "lambda"}, "gss");
    get_if(jg, "mu", c.gss.mu);
    get_if(jg, "lambda", c.gss.lambda);
  }

  if (j.contains("postfilter")) {
    const auto& jp = j.at("postfilter");
    check_keys(jp,
               {"eta", "alpha_s", "alpha_p_min", "g_min", "theta",
                "alpha_zeta", "q_max", "local_bandwidth_hz",
                "global_bandwidth_hz", "srr", "stsa"},
               "postfilter");
    auto& p = c.postfilter;
    get_if(jp, "eta", p.eta);
    get_if(jp, "alpha_s", p.alpha_s);
    get_if(jp, "alpha_p_min", p.alpha_p_min);
    get_if(jp, "g_min", p.g_min);
    get_if(jp, "theta", p.theta);
    get_if(jp, "alpha_zeta", p.alpha_zeta);
    get_if(jp, "q_max", p.q_max);
    get_if(jp, "local_bandwidth_hz", p.local_bandwidth_hz);
    get_if(jp, "global_bandwidth_hz", p.global_bandwidth_hz);
    get_if(jp, "srr", p.srr);
    get_if(jp, "stsa", p.stsa);
  }

  if (j.contains("features")) {
    const auto& jf = j.at("features");
    check_keys(jf,
               {"sample_rate", "frame_length", "hop", "num_bands",
                "kept_cepstra", "fmin_hz", "fmax_hz"},
               "features");
    auto& f = c.features;
    get_if(jf, "sample_rate", f.sample_rate);
    get_if(jf, "frame_length", f.frame_length);
    get_if(jf, "hop", f.hop);
    get_if(jf, "num_bands", f.num_bands);
    get_if(jf, "kept_cepstra", f.kept_cepstra);
    get_if(jf, "fmin_hz", f.fmin_hz);
    get_if(jf, "fmax_hz", f.fmax_hz);
  }

  validate_run_config(c);
  // Keep derived quantities consistent with whatever was loaded.
  c.tracker.delta_t = c.tracker_period_s();
  // The postfilter shares the localizer's reverberation model.
  c.postfilter.mcra_window_frames = c.localizer.weighting.mcra_window;
  c.postfilter.mcra_smoothing = c.localizer.weighting.mcra_smoothing;
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: invalid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

inline RunConfig default_run_config() {
  RunConfig c;
  c.tracker.delta_t = c.tracker_period_s();
  return c;
}

}  // namespace earshot
