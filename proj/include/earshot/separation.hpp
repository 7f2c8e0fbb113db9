// separation.hpp: frequency-domain geometric source separation.
//
// A demixing matrix W(k) per frequency bin is adapted by stochastic gradient
// descent under two soft constraints: decorrelation of the separated outputs
// (cross-power of distinct outputs driven to zero) and a geometric constraint
// W(k)A(k) = I, where A(k) is the steering matrix predicted from the tracked
// source directions.  Rows of W are initialised as delay-and-sum beamformers,
// so a freshly added source starts with sensible output and existing sources
// are untouched.
#pragma once

#include <complex>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "earshot/common.hpp"
#include "earshot/geometry.hpp"
#include "earshot/grid.hpp"

namespace earshot {

/// Unit-modulus steering phase for a pure delay of `delay_samples` at bin k of
/// an `fft_size`-point transform: exp(-j 2 pi k delay / L).
inline cplx steering_phase(int bin, double delay_samples, int fft_size) {
  const double angle = -2.0 * kPi * bin * delay_samples / fft_size;
  return cplx(std::cos(angle), std::sin(angle));
}

/// Anechoic far-field mixing model: per-bin steering matrix A(k) whose entry
/// (i, j) is the phase a mic i sees for source j, assuming unit gain.  Delays
/// are referenced to the array centroid so they are zero-mean across mics;
/// only delay differences affect separation.  Bins 0..L/2 are stored, the
/// upper half of the spectrum being determined by conjugate symmetry.
struct MixingModel {
  int fft_size = 0;
  int num_bins = 0;          // fft_size / 2 + 1
  Eigen::MatrixXd delays;    // num_mics x num_sources, in samples
  std::vector<Eigen::MatrixXcd> a;  // per bin, num_mics x num_sources

  int num_mics() const { return static_cast<int>(delays.rows()); }
  int num_sources() const { return static_cast<int>(delays.cols()); }
};

/// Build the steering matrix for far-field sources in the given unit-norm
/// directions.  Fractional delays are kept exactly (no rounding).
inline MixingModel build_mixing_matrix(const std::vector<Vec3>& directions,
                                       const ArrayGeometry& geometry,
                                       int fft_size, double sample_rate,
                                       double speed_of_sound = kSpeedOfSound) {
  if (directions.empty()) throw std::invalid_argument("no source directions");
  if (fft_size < 2) throw std::invalid_argument("fft size too small");
  const int n = geometry.num_mics();
  const int m = static_cast<int>(directions.size());
  MixingModel model;
  model.fft_size = fft_size;
  model.num_bins = fft_size / 2 + 1;
  model.delays.resize(n, m);
  const Vec3 centroid = geometry.centroid();
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i)
      model.delays(i, j) = far_field_delay(centroid, geometry.mics[i],
                                           directions[j], sample_rate,
                                           speed_of_sound);
  model.a.resize(model.num_bins);
  for (int k = 0; k < model.num_bins; ++k) {
    model.a[k].resize(n, m);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i)
        model.a[k](i, j) = steering_phase(k, model.delays(i, j), fft_size);
  }
  return model;
}

/// Delay-and-sum initialisation: row m of W(k) is the conjugate of column m
/// of A(k) divided by the number of microphones, i.e. W(k) = A(k)^H / N.
/// Prior to adaptation each output is therefore a plain beamformer aimed at
/// its source, and rows are independent of every other source.
inline std::vector<Eigen::MatrixXcd> init_demixing(const MixingModel& model) {
  std::vector<Eigen::MatrixXcd> w(model.a.size());
  const double inv_n = 1.0 / model.num_mics();
  for (size_t k = 0; k < model.a.size(); ++k) w[k] = model.a[k].adjoint() * inv_n;
  return w;
}

/// Delay-and-sum row for a single source (used when adding a source to an
/// existing demixing state without touching other rows).
inline Eigen::RowVectorXcd init_demixing_row(const MixingModel& model, int bin,
                                             int source) {
  return model.a[bin].col(source).adjoint() /
         static_cast<double>(model.num_mics());
}

/// Cross-power of distinct outputs for one frame: E = y y^H - diag(y y^H)
/// with y = W x.  Its squared Frobenius norm is the decorrelation cost.
inline double decorrelation_cost(const Eigen::MatrixXcd& w,
                                 const Eigen::VectorXcd& x) {
  const Eigen::VectorXcd y = w * x;
  Eigen::MatrixXcd e = y * y.adjoint();
  e.diagonal().setZero();
  return e.squaredNorm();
}

/// Squared Frobenius norm of W A - I: the geometric constraint penalty.
inline double geometric_cost(const Eigen::MatrixXcd& w,
                             const Eigen::MatrixXcd& a) {
  const Eigen::MatrixXcd r =
      w * a - Eigen::MatrixXcd::Identity(w.rows(), w.rows());
  return r.squaredNorm();
}

/// Gradient of the decorrelation cost with respect to W, in the convention
/// grad = dJ/d(Re W) + j dJ/d(Im W).  With instantaneous correlations this is
/// 4 (E W x) x^H, which needs only matrix-vector products.
inline Eigen::MatrixXcd decorrelation_gradient(const Eigen::MatrixXcd& w,
                                               const Eigen::VectorXcd& x) {
  const Eigen::VectorXcd y = w * x;
  Eigen::MatrixXcd e = y * y.adjoint();
  e.diagonal().setZero();
  return 4.0 * (e * y) * x.adjoint();
}

/// Gradient of the geometric constraint penalty: 2 (W A - I) A^H, same
/// convention as decorrelation_gradient.
inline Eigen::MatrixXcd geometric_gradient(const Eigen::MatrixXcd& w,
                                           const Eigen::MatrixXcd& a) {
  const Eigen::MatrixXcd r =
      w * a - Eigen::MatrixXcd::Identity(w.rows(), w.rows());
  return 2.0 * r * a.adjoint();
}

struct GssConfig {
  double mu = 0.01;      // adaptation rate
  double lambda = 0.5;   // regularisation weight; shrinkage factor 1 - lambda*mu
};

/// One stochastic-gradient step on a single frequency bin:
///   W <- (1 - lambda mu) W - mu [ alpha * gradJ1 + gradJ2 ],
/// alpha = (||x||^2)^-2.  A silent bin (||x|| = 0) leaves alpha undefined and
/// carries no information, so only the regularisation shrinkage is applied.
inline void gss_update(Eigen::MatrixXcd& w, const Eigen::MatrixXcd& a,
                       const Eigen::VectorXcd& x, const GssConfig& cfg) {
  const double shrink = 1.0 - cfg.lambda * cfg.mu;
  const double energy = x.squaredNorm();
  if (energy <= 0.0) {
    w *= shrink;
    return;
  }
  const double alpha = 1.0 / (energy * energy);
  w = shrink * w -
      cfg.mu * (alpha * decorrelation_gradient(w, x) + geometric_gradient(w, a));
}

/// Separated spectra for one frame: y(k) = W(k) x(k).
inline Eigen::VectorXcd apply_demixing(const Eigen::MatrixXcd& w,
                                       const Eigen::VectorXcd& x) {
  return w * x;
}

/// Streaming separator.  Holds the steering model and demixing matrices for a
/// live set of sources, identified by caller-chosen ids (typically track ids).
/// Each frame: y = W x is emitted, then W adapts one gradient step.  Sources
/// whose reported activity is below `activity_floor` keep their rows frozen so
/// the beamformer does not adapt to silence.
class GssSeparator {
 public:
  GssSeparator(const ArrayGeometry& geometry, int fft_size, double sample_rate,
               double speed_of_sound = kSpeedOfSound,
               const GssConfig& config = GssConfig())
      : geometry_(geometry),
        centroid_(geometry.centroid()),
        fft_size_(fft_size),
        num_bins_(fft_size / 2 + 1),
        sample_rate_(sample_rate),
        speed_of_sound_(speed_of_sound),
        config_(config) {
    if (fft_size < 2) throw std::invalid_argument("fft size too small");
    if (geometry.num_mics() < 1) throw std::invalid_argument("no microphones");
    model_.fft_size = fft_size_;
    model_.num_bins = num_bins_;
    model_.delays.resize(geometry.num_mics(), 0);
    model_.a.assign(num_bins_,
                    Eigen::MatrixXcd(geometry.num_mics(), 0));
    w_.assign(num_bins_, Eigen::MatrixXcd(0, geometry.num_mics()));
  }

  int num_sources() const { return static_cast<int>(sources_.size()); }
  int num_bins() const { return num_bins_; }
  int fft_size() const { return fft_size_; }

  bool has_source(int id) const { return find_slot(id) >= 0; }

  std::vector<int> source_ids() const {
    std::vector<int> ids;
    ids.reserve(sources_.size());
    for (const auto& s : sources_) ids.push_back(s.id);
    return ids;
  }

  /// Add a source: grows A by one column and W by one delay-and-sum row.
  /// Existing rows and columns are preserved bit-for-bit.
  void add_source(int id, const Vec3& direction) {
    if (has_source(id)) throw std::invalid_argument("duplicate source id");
    if (num_sources() + 1 > geometry_.num_mics())
      throw std::invalid_argument("more sources than microphones");
    Slot slot;
    slot.id = id;
    slot.direction = direction.normalized();
    slot.steering_direction = slot.direction;
    sources_.push_back(slot);
    const int n = geometry_.num_mics();
    const int m = num_sources();
    model_.delays.conservativeResize(n, m);
    fill_delays(m - 1);
    for (int k = 0; k < num_bins_; ++k) {
      model_.a[k].conservativeResize(n, m);
      fill_steering(k, m - 1);
      w_[k].conservativeResize(m, n);
      w_[k].row(m - 1) = init_demixing_row(model_, k, m - 1);
    }
  }

  /// Remove a source: drops its row/column; remaining entries keep their
  /// adapted values bit-for-bit.
  void remove_source(int id) {
    const int s = find_slot(id);
    if (s < 0) throw std::invalid_argument("unknown source id");
    const int n = geometry_.num_mics();
    const int m = num_sources();
    for (int k = 0; k < num_bins_; ++k) {
      Eigen::MatrixXcd a_new(n, m - 1);
      Eigen::MatrixXcd w_new(m - 1, n);
      int out = 0;
      for (int j = 0; j < m; ++j) {
        if (j == s) continue;
        a_new.col(out) = model_.a[k].col(j);
        w_new.row(out) = w_[k].row(j);
        ++out;
      }
      model_.a[k] = std::move(a_new);
      w_[k] = std::move(w_new);
    }
    Eigen::MatrixXd d_new(n, m - 1);
    int out = 0;
    for (int j = 0; j < m; ++j) {
      if (j == s) continue;
      d_new.col(out++) = model_.delays.col(j);
    }
    model_.delays = std::move(d_new);
    sources_.erase(sources_.begin() + s);
  }

  /// Update a source's direction.  The steering column is rebuilt only once
  /// the direction has drifted more than `steering_rebuild_deg` from the one
  /// the column was built with, avoiding needless recomputation.
  void set_direction(int id, const Vec3& direction) {
    const int s = find_slot(id);
    if (s < 0) throw std::invalid_argument("unknown source id");
    sources_[s].direction = direction.normalized();
    if (angle_between_deg(sources_[s].direction,
                          sources_[s].steering_direction) >
        steering_rebuild_deg_) {
      sources_[s].steering_direction = sources_[s].direction;
      fill_delays(s);
      for (int k = 0; k < num_bins_; ++k) fill_steering(k, s);
    }
  }

  /// Report the tracker's activity probability for a source; rows of sources
  /// below the floor are frozen during adaptation.
  void set_activity(int id, double p_active) {
    const int s = find_slot(id);
    if (s < 0) throw std::invalid_argument("unknown source id");
    sources_[s].activity = p_active;
  }

  /// Process one frame of full-length mic spectra (one vector of fft_size
  /// bins per microphone).  Returns one full-length spectrum per source, in
  /// source-id order as given by source_ids(); the upper half is filled by
  /// conjugate symmetry so the outputs invert to real signals.  The demixing
  /// matrices take one adaptation step after the outputs are computed.
  std::vector<std::vector<cplx>> process(
      const std::vector<std::vector<cplx>>& mic_spectra, bool adapt = true) {
    const int n = geometry_.num_mics();
    if (static_cast<int>(mic_spectra.size()) != n)
      throw std::invalid_argument("wrong number of mic spectra");
    for (const auto& s : mic_spectra)
      if (static_cast<int>(s.size()) != fft_size_)
        throw std::invalid_argument("wrong spectrum length");
    const int m = num_sources();
    std::vector<std::vector<cplx>> outputs(
        m, std::vector<cplx>(fft_size_, cplx(0.0, 0.0)));
    if (m == 0) return outputs;

    Eigen::VectorXcd x(n);
    for (int k = 0; k < num_bins_; ++k) {
      for (int i = 0; i < n; ++i) x[i] = mic_spectra[i][k];
      const Eigen::VectorXcd y = apply_demixing(w_[k], x);
      for (int j = 0; j < m; ++j) outputs[j][k] = y[j];
      if (adapt) {
        bool any_frozen = false;
        for (const auto& s : sources_)
          if (s.activity < activity_floor_) { any_frozen = true; break; }
        if (!any_frozen) {
          gss_update(w_[k], model_.a[k], x, config_);
        } else {
          Eigen::MatrixXcd updated = w_[k];
          gss_update(updated, model_.a[k], x, config_);
          for (int j = 0; j < m; ++j)
            if (sources_[j].activity >= activity_floor_)
              w_[k].row(j) = updated.row(j);
        }
      }
    }
    for (int j = 0; j < m; ++j) {
      auto& out = outputs[j];
      out[0] = cplx(out[0].real(), 0.0);
      if (fft_size_ % 2 == 0)
        out[fft_size_ / 2] = cplx(out[fft_size_ / 2].real(), 0.0);
      for (int k = 1; k < (fft_size_ + 1) / 2; ++k)
        out[fft_size_ - k] = std::conj(out[k]);
    }
    return outputs;
  }

  const MixingModel& steering() const { return model_; }
  const Eigen::MatrixXcd& demixing(int bin) const { return w_.at(bin); }

  /// Dump all demixing matrices to a small binary for offline inspection.
  void save_demixing(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    const uint32_t magic = kDemixMagic;
    const uint32_t bins = static_cast<uint32_t>(num_bins_);
    const uint32_t rows = static_cast<uint32_t>(num_sources());
    const uint32_t cols = static_cast<uint32_t>(geometry_.num_mics());
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&bins), 4);
    out.write(reinterpret_cast<const char*>(&rows), 4);
    out.write(reinterpret_cast<const char*>(&cols), 4);
    for (const auto& w : w_)
      out.write(reinterpret_cast<const char*>(w.data()),
                static_cast<std::streamsize>(sizeof(cplx) * w.size()));
    if (!out) throw io_error("short write to " + path);
  }

  /// Read back a dump produced by save_demixing.
  static std::vector<Eigen::MatrixXcd> load_demixing(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    uint32_t magic = 0, bins = 0, rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&magic), 4);
    in.read(reinterpret_cast<char*>(&bins), 4);
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in || magic != kDemixMagic) throw io_error("not a demixing dump: " + path);
    std::vector<Eigen::MatrixXcd> w(bins, Eigen::MatrixXcd(rows, cols));
    for (auto& m : w) {
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(sizeof(cplx) * m.size()));
      if (!in) throw io_error("truncated demixing dump: " + path);
    }
    return w;
  }

 private:
  struct Slot {
    int id = 0;
    Vec3 direction = Vec3::UnitX();
    Vec3 steering_direction = Vec3::UnitX();
    double activity = 1.0;
  };

  static constexpr uint32_t kDemixMagic = 0x31584d44;  // "DMX1"
  static constexpr double steering_rebuild_deg_ = 1.0;
  static constexpr double activity_floor_ = 0.1;

  int find_slot(int id) const {
    for (size_t i = 0; i < sources_.size(); ++i)
      if (sources_[i].id == id) return static_cast<int>(i);
    return -1;
  }

  void fill_delays(int source) {
    for (int i = 0; i < geometry_.num_mics(); ++i)
      model_.delays(i, source) =
          far_field_delay(centroid_, geometry_.mics[i],
                          sources_[source].steering_direction, sample_rate_,
                          speed_of_sound_);
  }

  void fill_steering(int bin, int source) {
    for (int i = 0; i < geometry_.num_mics(); ++i)
      model_.a[bin](i, source) =
          steering_phase(bin, model_.delays(i, source), fft_size_);
  }

  ArrayGeometry geometry_;
  Vec3 centroid_;
  int fft_size_;
  int num_bins_;
  double sample_rate_;
  double speed_of_sound_;
  GssConfig config_;
  MixingModel model_;
  std::vector<Eigen::MatrixXcd> w_;
  std::vector<Slot> sources_;
};

}  // namespace earshot
