// pipeline.hpp: the batch stages the CLI exposes — localisation+tracking over
// a multichannel recording, track-driven separation with the post-filter,
// feature/mask extraction from a separated stream, and evaluation helpers.
// Every stage consumes and produces plain data (rows, buffers, matrices) so
// it can be re-run from files.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "earshot/config.hpp"
#include "earshot/csv.hpp"
#include "earshot/features.hpp"
#include "earshot/localization.hpp"
#include "earshot/metrics.hpp"
#include "earshot/postfilter.hpp"
#include "earshot/separation.hpp"
#include "earshot/stft.hpp"
#include "earshot/tracking.hpp"
#include "earshot/wav.hpp"

namespace earshot {

// ---------------------------------------------------------------------------
// Localisation + tracking
// ---------------------------------------------------------------------------

struct LocalizationResult {
  std::vector<DetectionRow> detections;
  std::vector<TrackRow> tracks;
  int num_frames = 0;
};

/// Run the steered-beamformer search and the particle-filter tracker over a
/// whole recording.  The beamformer ingests every STFT frame; a search +
/// tracker step happens every `track_stride` frames.  Each live track emits
/// two rows per step: the instantaneous estimate (delayed = 0, time_s = the
/// frame centre) and the smoothed one (delayed = 1, time_s = the earlier
/// instant the estimate refers to).
inline LocalizationResult run_localization(const AudioBuffer& mixture,
                                           const RunConfig& cfg,
                                           const TdoaTable* cached_table = nullptr) {
  const ArrayGeometry geom = cfg.geometry();
  if (mixture.num_channels() != geom.num_mics())
    throw config_error("localization: recording has " +
                       std::to_string(mixture.num_channels()) +
                       " channels but the array has " +
                       std::to_string(geom.num_mics()) + " microphones");
  if (mixture.sample_rate != cfg.localizer.sample_rate)
    throw config_error("localization: sample rate mismatch with config");

  const int length = cfg.localizer.frame_length;
  const int hop = cfg.hop;
  const double fs = cfg.localizer.sample_rate;

  Localizer localizer(geom, cfg.localizer, cached_table);
  TrackerConfig tcfg = cfg.tracker;
  tcfg.delta_t = cfg.tracker_period_s();
  Tracker tracker(tcfg, cfg.seed);

  const auto window = periodic_hann(length);
  const int frames = num_stft_frames(mixture.num_samples(), length, hop);

  LocalizationResult out;
  out.num_frames = frames;
  std::vector<std::vector<cplx>> spectra(geom.num_mics());
  for (int f = 0; f < frames; ++f) {
    for (int c = 0; c < geom.num_mics(); ++c)
      spectra[c] =
          analyze_frame(mixture.channels[c].data() + size_t(f) * hop, window);
    localizer.push_frame(spectra);
    if ((f + 1) % cfg.track_stride != 0 || !localizer.ready()) continue;

    const auto sources = localizer.search();
    for (size_t q = 0; q < sources.size(); ++q) {
      DetectionRow r;
      r.frame = f;
      r.q = static_cast<int>(q);
      r.azimuth_deg = azimuth_deg_of(sources[q].direction);
      r.elevation_deg = elevation_deg_of(sources[q].direction);
      r.energy = sources[q].energy;
      r.probability = sources[q].probability;
      out.detections.push_back(r);
    }

    tracker.step(sources);
    const double now = (double(f) * hop + length / 2) / fs;
    for (const auto& t : tracker.tracks()) {
      const Vec3 cur = t.estimate(0);
      out.tracks.push_back({f, now, t.id, azimuth_deg_of(cur),
                            elevation_deg_of(cur), t.existence, t.activity,
                            false});
      const int avail = std::min(tracker.delayed_steps(),
                                 static_cast<int>(t.history.size()) - 1);
      const Vec3 old = t.estimate(avail);
      out.tracks.push_back({f, now - avail * tcfg.delta_t, t.id,
                            azimuth_deg_of(old), elevation_deg_of(old),
                            t.existence, t.activity, true});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Separation + post-filter
// ---------------------------------------------------------------------------

struct SeparationOptions {
  bool postfilter = true;        // apply the multi-source post-filter
  bool single_source_pf = false; // baseline: no leakage term (eta = 0)
  bool delay_and_sum = false;    // freeze the demixing at its initialisation
  bool reverb = false;           // enable the reverberation noise term
  double t60 = 0.35;             // reverb decay driving the term, seconds
};

struct SourceSeparationData {
  int id = -1;                  // track id the stream followed
  std::vector<double> signal;   // mono output, same length as the mixture
  BandEnergies bands;           // feature-grid energies (empty w/o post-filter)
};

struct SeparationResult {
  std::vector<SourceSeparationData> sources;  // ordered by first appearance
  int num_frames = 0;
};

/// Separate the mixture along the tracker's estimates.  Non-delayed track
/// rows with existence at the confirmation level gate which sources are live;
/// the separator and post-filter are kept in sync with that set frame by
/// frame.  Returns one mono stream per track id plus the post-filter's
/// band-energy diagnostics needed by the mask stage.
inline SeparationResult run_separation(const AudioBuffer& mixture,
                                       const std::vector<TrackRow>& track_rows,
                                       const RunConfig& cfg,
                                       const SeparationOptions& opt = {}) {
  const ArrayGeometry geom = cfg.geometry();
  if (mixture.num_channels() != geom.num_mics())
    throw config_error("separation: channel count mismatch with the array");
  if (mixture.sample_rate != cfg.localizer.sample_rate)
    throw config_error("separation: sample rate mismatch with config");

  const int length = cfg.localizer.frame_length;
  const int hop = cfg.hop;
  const double fs = cfg.localizer.sample_rate;
  const int bins = length / 2 + 1;
  const int frames = num_stft_frames(mixture.num_samples(), length, hop);

  GssSeparator separator(geom, length, fs, cfg.localizer.speed_of_sound,
                         cfg.gss);
  PostfilterConfig pcfg = cfg.postfilter;
  if (opt.single_source_pf) pcfg.eta = 0.0;
  if (opt.reverb) {
    pcfg.reverb_enabled = true;
    // Energy decays 60 dB over t60 seconds; per post-filter frame that is
    // 10^(-6 / (t60 * frame_rate)).
    pcfg.reverb_decay = std::pow(10.0, -6.0 / (opt.t60 * fs / hop));
  }
  MultiSourcePostfilter postfilter(length, fs, pcfg);

  // Track rows that drive the source set, grouped by frame.
  std::map<long, std::vector<const TrackRow*>> updates;
  for (const auto& r : track_rows)
    if (!r.delayed) updates[r.frame].push_back(&r);

  struct Store {
    std::vector<std::vector<cplx>> spectra;      // [frame][bin], zeros when absent
    std::vector<PostfilterDiagnostics> diag;     // rebin inputs, zeros when absent
  };
  std::map<int, Store> store;
  std::vector<int> order;  // ids by first appearance

  PostfilterDiagnostics zero_diag;
  zero_diag.lambda_stat.assign(bins, 0.0);
  zero_diag.input_power.assign(bins, 0.0);
  zero_diag.output_power.assign(bins, 0.0);

  const auto window = periodic_hann(length);
  std::vector<std::vector<cplx>> spectra(geom.num_mics());
  for (int f = 0; f < frames; ++f) {
    const auto up = updates.find(f);
    if (up != updates.end()) {
      // Gate on confirmed existence and sync both stages to the live set.
      std::map<int, const TrackRow*> desired;
      for (const TrackRow* r : up->second)
        if (r->p_exist >= cfg.tracker.confirm_threshold &&
            static_cast<int>(desired.size()) < geom.num_mics())
          desired[r->track_id] = r;
      for (int id : separator.source_ids())
        if (!desired.count(id)) {
          separator.remove_source(id);
          if (opt.postfilter) postfilter.remove_source(id);
        }
      for (const auto& [id, row] : desired) {
        const Vec3 dir =
            direction_from_angles(row->azimuth_deg, row->elevation_deg);
        if (!separator.has_source(id)) {
          separator.add_source(id, dir);
          if (opt.postfilter) postfilter.add_source(id);
          if (!store.count(id)) {
            auto& s = store[id];
            s.spectra.assign(frames, std::vector<cplx>(length, cplx(0, 0)));
            if (opt.postfilter) s.diag.assign(frames, zero_diag);
            order.push_back(id);
          }
        } else {
          separator.set_direction(id, dir);
        }
        separator.set_activity(id, row->p_active);
      }
    }
    if (separator.num_sources() == 0) continue;

    for (int c = 0; c < geom.num_mics(); ++c)
      spectra[c] =
          analyze_frame(mixture.channels[c].data() + size_t(f) * hop, window);
    const auto ids = separator.source_ids();
    auto ys = separator.process(spectra, /*adapt=*/!opt.delay_and_sum);
    if (opt.postfilter) {
      auto outs = postfilter.process(ys);
      for (size_t i = 0; i < ids.size(); ++i) {
        const auto& diag = postfilter.diagnostics(static_cast<int>(i));
        auto& s = store[ids[i]];
        s.spectra[f] = std::move(outs[i]);
        s.diag[f].lambda_stat = diag.lambda_stat;
        s.diag[f].input_power = diag.input_power;
        s.diag[f].output_power = diag.output_power;
      }
    } else {
      for (size_t i = 0; i < ids.size(); ++i)
        store[ids[i]].spectra[f] = std::move(ys[i]);
    }
  }

  SeparationResult res;
  res.num_frames = frames;
  for (int id : order) {
    Store& s = store[id];
    SpectralFrames sf;
    sf.frame_length = length;
    sf.hop = hop;
    sf.sample_rate = fs;
    sf.spectra.push_back(std::move(s.spectra));
    AudioBuffer syn = istft_synthesize(sf);
    SourceSeparationData d;
    d.id = id;
    d.signal = std::move(syn.channels[0]);
    d.signal.resize(mixture.num_samples(), 0.0);
    if (opt.postfilter)
      d.bands = rebin_diagnostics(s.diag, fs, length, hop, cfg.features);
    res.sources.push_back(std::move(d));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Features + masks
// ---------------------------------------------------------------------------

/// Polyphase-free integer-factor decimation with a linear-phase Blackman
/// windowed-sinc lowpass (cutoff at 90% of the output Nyquist).  The filter
/// delay is compensated so y[n] lines up with x[n * factor].
inline std::vector<double> decimate_fir(const std::vector<double>& x,
                                        int factor) {
  if (factor < 1) throw std::invalid_argument("decimation factor must be >= 1");
  if (factor == 1) return x;
  const int taps = 40 * factor + 1;
  const int half = taps / 2;
  const double cutoff = 0.45 / factor;  // cycles per input sample
  std::vector<double> h(taps);
  double sum = 0.0;
  for (int i = 0; i < taps; ++i) {
    const int m = i - half;
    const double sinc = m == 0 ? 2.0 * kPi * cutoff
                               : std::sin(2.0 * kPi * cutoff * m) / m;
    const double w = 0.42 - 0.5 * std::cos(2.0 * kPi * i / (taps - 1)) +
                     0.08 * std::cos(4.0 * kPi * i / (taps - 1));
    h[i] = sinc * w;
    sum += h[i];
  }
  for (auto& v : h) v /= sum;  // exact unit gain at DC

  const size_t out_len = x.size() / factor;
  std::vector<double> y(out_len, 0.0);
  const long n_in = static_cast<long>(x.size());
  for (size_t n = 0; n < out_len; ++n) {
    const long center = static_cast<long>(n) * factor + half;
    double acc = 0.0;
    const int i0 = static_cast<int>(std::max<long>(0, center - n_in + 1));
    const int i1 = static_cast<int>(std::min<long>(taps - 1, center));
    for (int i = i0; i <= i1; ++i) acc += h[i] * x[center - i];
    y[n] = acc;
  }
  return y;
}

struct FeaturizeResult {
  // One row per feature frame: 24 smoothed log Mel energies then 24 deltas.
  std::vector<std::vector<double>> features;
  // Matching reliability mask (0/1), same 48-column layout.
  std::vector<std::vector<double>> mask;
};

/// Compute recognition features from a separated stream and the reliability
/// masks from the post-filter's band diagnostics.  `audio` is at the pipeline
/// rate (decimated internally to the feature rate); `bands` comes from
/// run_separation.  Frame counts are aligned by truncation to the shorter.
inline FeaturizeResult run_featurize(const std::vector<double>& audio,
                                     double audio_rate,
                                     const BandEnergies& bands,
                                     const RunConfig& cfg) {
  if (bands.s_in.empty())
    throw config_error("featurize: band diagnostics are empty");
  const double ratio_f = audio_rate / cfg.features.sample_rate;
  const int ratio = static_cast<int>(std::lround(ratio_f));
  if (ratio < 1 || std::abs(ratio_f - ratio) > 1e-9)
    throw config_error("featurize: audio rate must be an integer multiple of "
                       "the feature rate");
  const auto x = decimate_fir(audio, ratio);
  const auto feats = mel_features(x, cfg.features);

  const int bands_n = cfg.features.num_bands;
  const int nf = std::min(static_cast<int>(feats.size()),
                          bands.num_frames());
  std::vector<std::vector<int>> static_masks(nf);
  for (int f = 0; f < nf; ++f)
    static_masks[f] = compute_mask(bands.s_in[f], bands.s_out[f],
                                   bands.noise[f], cfg.mask_threshold)
                          .reliable;
  const auto delta = delta_masks(static_masks);

  FeaturizeResult out;
  out.features.resize(nf);
  out.mask.resize(nf);
  for (int f = 0; f < nf; ++f) {
    auto& fr = out.features[f];
    fr.reserve(2 * bands_n);
    fr.insert(fr.end(), feats[f].log_mel.begin(), feats[f].log_mel.end());
    fr.insert(fr.end(), feats[f].delta.begin(), feats[f].delta.end());
    auto& mr = out.mask[f];
    mr.reserve(2 * bands_n);
    for (int i = 0; i < bands_n; ++i) mr.push_back(static_masks[f][i]);
    for (int i = 0; i < bands_n; ++i) mr.push_back(delta[f][i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

/// Reference generator: steer the separator at a recording that contains only
/// one source, following its known trajectory (time, unit direction pairs).
/// The result is the source as the separation stage would ideally render it —
/// aligned to the array centre with unit gain toward the source.
inline std::vector<double> gss_reference(
    const AudioBuffer& solo,
    const std::vector<std::pair<double, Vec3>>& trajectory,
    const RunConfig& cfg) {
  if (trajectory.empty())
    throw std::invalid_argument("gss_reference: empty trajectory");
  const ArrayGeometry geom = cfg.geometry();
  const int length = cfg.localizer.frame_length;
  const int hop = cfg.hop;
  const double fs = cfg.localizer.sample_rate;
  GssSeparator separator(geom, length, fs, cfg.localizer.speed_of_sound,
                         cfg.gss);
  separator.add_source(0, trajectory.front().second);
  separator.set_activity(0, 1.0);

  const auto window = periodic_hann(length);
  const int frames = num_stft_frames(solo.num_samples(), length, hop);
  SpectralFrames sf;
  sf.frame_length = length;
  sf.hop = hop;
  sf.sample_rate = fs;
  sf.spectra.resize(1);
  sf.spectra[0].reserve(frames);
  std::vector<std::vector<cplx>> spectra(geom.num_mics());
  size_t cursor = 0;
  for (int f = 0; f < frames; ++f) {
    const double now = (double(f) * hop + length / 2) / fs;
    while (cursor + 1 < trajectory.size() &&
           std::abs(trajectory[cursor + 1].first - now) <=
               std::abs(trajectory[cursor].first - now))
      ++cursor;
    separator.set_direction(0, trajectory[cursor].second);
    for (int c = 0; c < geom.num_mics(); ++c)
      spectra[c] =
          analyze_frame(solo.channels[c].data() + size_t(f) * hop, window);
    sf.spectra[0].push_back(std::move(separator.process(spectra)[0]));
  }
  AudioBuffer syn = istft_synthesize(sf);
  std::vector<double> out = std::move(syn.channels[0]);
  out.resize(solo.num_samples(), 0.0);
  return out;
}

/// SNR of the best single microphone for one source: each channel of the
/// mixture scored against the source's image at that same microphone (which
/// is exactly the component of the mixture the source contributed).
inline double best_mic_snr_db(const AudioBuffer& mixture,
                              const AudioBuffer& stem, double sample_rate) {
  if (mixture.num_channels() != stem.num_channels())
    throw std::invalid_argument("best_mic_snr_db: channel count mismatch");
  double best = -1e300;
  for (int c = 0; c < mixture.num_channels(); ++c)
    best = std::max(best,
                    snr_db(mixture.channels[c], stem.channels[c], sample_rate));
  return best;
}

/// Ground-truth bundle for one source, as far as evaluation needs it.
struct EvalSource {
  std::string id;
  std::vector<double> reference;  // clean mono reference, mixture length
  std::vector<std::pair<double, double>> silence;  // [start_s, end_s)
};

/// Match separated streams to ground-truth sources (assignment maximising
/// total SNR) and score each source: SNR and LSD against its clean reference,
/// and attenuation of the stream during the source's own silent stretches
/// relative to the first mixture channel.  Unmatched sources score NaN.
inline EvalReport evaluate_separation(
    const std::vector<std::vector<double>>& estimates,
    const AudioBuffer& mixture, const std::vector<EvalSource>& sources,
    double sample_rate) {
  const int ne = static_cast<int>(estimates.size());
  const int ns = static_cast<int>(sources.size());
  std::vector<std::vector<double>> snr(ns, std::vector<double>(ne, 0.0));
  for (int s = 0; s < ns; ++s)
    for (int e = 0; e < ne; ++e)
      snr[s][e] = snr_db(estimates[e], sources[s].reference, sample_rate);

  // Injective source -> estimate assignment maximising total SNR.
  std::vector<int> assign(ns, -1), best_assign(ns, -1);
  std::vector<bool> used(ne, false);
  double best_total = -1e300;
  auto recurse = [&](auto&& self, int s, double total, int matched) -> void {
    if (s == ns) {
      // Prefer more matches, then higher total SNR.
      const double score = matched * 1e6 + total;
      if (score > best_total) {
        best_total = score;
        best_assign = assign;
      }
      return;
    }
    assign[s] = -1;
    self(self, s + 1, total, matched);
    for (int e = 0; e < ne; ++e) {
      if (used[e]) continue;
      used[e] = true;
      assign[s] = e;
      self(self, s + 1, total + snr[s][e], matched + 1);
      used[e] = false;
    }
    assign[s] = -1;
  };
  recurse(recurse, 0, 0.0, 0);

  EvalReport report;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int s = 0; s < ns; ++s) {
    report.source_ids.push_back(sources[s].id);
    const int e = best_assign[s];
    if (e < 0) {
      report.snr_db.push_back(nan);
      report.lsd_db.push_back(nan);
      report.attenuation_db.push_back(nan);
      continue;
    }
    report.snr_db.push_back(snr[s][e]);
    report.lsd_db.push_back(lsd_db(estimates[e], sources[s].reference));
    if (sources[s].silence.empty())
      report.attenuation_db.push_back(nan);
    else
      report.attenuation_db.push_back(attenuation_db(
          estimates[e], mixture.channels[0], sources[s].silence, sample_rate));
  }
  return report;
}

}  // namespace earshot
