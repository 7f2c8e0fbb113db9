// Tests for postfilter.hpp: exponential integral, spectral gains, noise
// decomposition (stationary + leakage + reverberant), speech presence and
// the full multi-source filter behaviour.
#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "earshot/postfilter.hpp"

using namespace earshot;

namespace {

// High-precision reference values for E1(x) (30-digit arithmetic).
constexpr struct { double x, e1; } kExpintTable[] = {
    {1e-6, 13.238295893062491244},
    {1e-4, 8.63322470457470543},
    {0.01, 4.0379295765381138318},
    {0.1, 1.8229239584193906661},
    {0.5, 0.55977359477616081175},
    {0.999, 0.21975218202294454081},
    {1.0, 0.21938393439552027368},
    {1.5, 0.1000195824066326519},
    {2.0, 0.048900510708061119567},
    {5.0, 0.0011482955912753257973},
    {10.0, 4.1569689296853242774e-6},
    {25.0, 5.3488997553402166403e-13},
    {50.0, 3.7832640295504590187e-24},
};

std::vector<cplx> random_half_spectrum(int bins, std::mt19937_64& rng,
                                       double scale) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<cplx> s(bins);
  for (auto& v : s) v = cplx(d(rng), d(rng));
  s[0] = cplx(s[0].real(), 0.0);
  s[bins - 1] = cplx(s[bins - 1].real(), 0.0);
  return s;
}

// Full-length conjugate-symmetric spectrum from a half spectrum.
std::vector<cplx> mirror(const std::vector<cplx>& half, int fft_size) {
  std::vector<cplx> full(fft_size);
  for (int k = 0; k <= fft_size / 2; ++k) full[k] = half[k];
  for (int k = 1; k < fft_size / 2; ++k)
    full[fft_size - k] = std::conj(half[k]);
  return full;
}

}  // namespace

TEST_CASE("exponential integral matches high-precision references",
          "[postfilter]") {
  for (const auto& row : kExpintTable) {
    const double got = expint_e1(row.x);
    CHECK(std::abs(got - row.e1) <= 1e-8 * row.e1);
  }
  // Continuity across the series / continued-fraction switch at x = 1.
  const double below = expint_e1(1.0 - 1e-12);
  const double above = expint_e1(1.0 + 1e-12);
  CHECK(std::abs(below - above) < 1e-10);
  CHECK_THROWS_AS(expint_e1(0.0), std::domain_error);
  CHECK_THROWS_AS(expint_e1(-1.0), std::domain_error);
}

TEST_CASE("log-MMSE gain: pinned value and limits", "[postfilter]") {
  // xi = 1, gamma = 2 => upsilon = 1; G = 0.5 exp(E1(1)/2).
  const double g = gain_log_mmse(1.0, 1.0);
  CHECK(g == Catch::Approx(0.55796713657494579649).epsilon(1e-12));
  // High SNR drives the gain to 1 from above-free territory.
  CHECK(gain_log_mmse(1e9, 1e9) == Catch::Approx(1.0).epsilon(1e-6));
  // Vanishing a-priori SNR kills the gain even though E1 blows up slowly.
  CHECK(gain_log_mmse(1e-12, 1e-6) < 1e-8);
}

TEST_CASE("amplitude-domain gain matches references", "[postfilter]") {
  auto eval = [](double xi, double gamma) {
    return gain_stsa(xi, gamma, gamma * xi / (1.0 + xi));
  };
  CHECK(eval(1.0, 2.0) == Catch::Approx(0.64095978828042843292).epsilon(1e-10));
  CHECK(eval(0.5, 1.0) == Catch::Approx(0.59357494210959465881).epsilon(1e-10));
  CHECK(eval(10.0, 8.0) == Catch::Approx(0.94095358837768997799).epsilon(1e-10));
  // The asymptotic branch continues the exact one smoothly.
  const double just_below = gain_stsa(1e9, 599.9, 599.9);
  const double just_above = gain_stsa(1e9, 600.1, 600.1);
  CHECK(std::abs(just_below - just_above) / just_below < 1e-3);
}

TEST_CASE("noise floor initialisation from mic floors", "[postfilter]") {
  // Equal floors p at N mics give p/N.
  const std::vector<std::vector<double>> floors(8, std::vector<double>(4, 0.32));
  const auto init = init_noise(floors);
  for (double v : init) CHECK(v == Catch::Approx(0.32 / 8.0).epsilon(1e-12));
  // Single mic passes its floor through.
  const auto one = init_noise({{1.5, 2.5}});
  CHECK(one[0] == Catch::Approx(1.5));
  CHECK(one[1] == Catch::Approx(2.5));
  // Zero floors stay zero.
  const auto zero = init_noise({{0.0, 0.0}, {0.0, 0.0}});
  CHECK(zero[0] == 0.0);
  CHECK_THROWS_AS(init_noise({}), std::invalid_argument);
  CHECK_THROWS_AS(init_noise({{1.0}, {1.0, 2.0}}), std::invalid_argument);
}

TEST_CASE("speech presence pieces", "[postfilter]") {
  const double theta = 0.31622776601683794;
  // Averaged SNR equal to the threshold sits exactly at 0.5.
  CHECK(speech_presence_probability(theta, theta) == Catch::Approx(0.5));
  CHECK(speech_presence_probability(0.0, theta) == 0.0);
  CHECK(speech_presence_probability(-1.0, theta) == 0.0);
  CHECK(speech_presence_probability(1e9, theta) == Catch::Approx(1.0));
  // All three presence estimates at 1 give zero absence prior...
  CHECK(speech_absence_prior(1.0, 1.0, 1.0) == 0.0);
  // ...and any collapse to 0 hits the 0.9 cap instead of locking shut.
  CHECK(speech_absence_prior(0.0, 1.0, 1.0) == Catch::Approx(0.9));
  // Zero absence prior forces presence probability 1.
  CHECK(speech_presence(0.0, 0.3, 0.2) == 1.0);
}

TEST_CASE("gain combination under presence uncertainty", "[postfilter]") {
  CHECK(modified_gain(0.7, 1.0) == Catch::Approx(0.7));
  CHECK(modified_gain(0.7, 0.0) == Catch::Approx(0.1));
  CHECK(modified_gain(0.4, 0.5) == Catch::Approx(0.2));  // sqrt(0.4 * 0.1)
  // Clamped into [g_min, 1] and monotone in p.
  CHECK(modified_gain(5.0, 1.0) == 1.0);
  CHECK(modified_gain(0.01, 0.5) == Catch::Approx(0.1));
  double prev = 0.0;
  for (int i = 0; i <= 20; ++i) {
    const double g = modified_gain(0.6, i / 20.0);
    CHECK(g >= prev - 1e-15);
    CHECK(g >= 0.1);
    CHECK(g <= 1.0);
    prev = g;
  }
}

TEST_CASE("leakage noise sums the other sources' smoothed spectra",
          "[postfilter]") {
  const int fft = 64, bins = 33;
  MultiSourcePostfilter pf(fft, 16000.0);
  pf.add_source(0);
  pf.add_source(1);
  // One frame: source 0 silent, source 1 at |Y|^2 = 12.5, so its smoothed
  // power is 0.8 * 12.5 = 10 and source 0 sees leakage 0.1 * 10 = 1.
  std::vector<std::vector<cplx>> frame(2, std::vector<cplx>(fft, cplx(0, 0)));
  for (int k = 0; k < fft; ++k) frame[1][k] = cplx(std::sqrt(12.5), 0.0);
  pf.process(frame);
  for (int k = 0; k < bins; ++k) {
    CHECK(pf.diagnostics(0).lambda_leak[k] == Catch::Approx(1.0).epsilon(1e-12));
    // A source's leakage excludes its own spectrum.
    CHECK(pf.diagnostics(1).lambda_leak[k] == 0.0);
    // Reverberation mode is off: that component is identically zero.
    CHECK(pf.diagnostics(0).lambda_rev[k] == 0.0);
  }
  // Single source: empty leakage sum.
  MultiSourcePostfilter solo(fft, 16000.0);
  solo.add_source(7);
  solo.process({frame[1]});
  for (int k = 0; k < bins; ++k) CHECK(solo.diagnostics(0).lambda_leak[k] == 0.0);
}

TEST_CASE("reverberant noise follows the decayed previous output",
          "[postfilter]") {
  const int fft = 64, bins = 33;
  PostfilterConfig cfg;
  cfg.reverb_enabled = true;
  cfg.reverb_decay = 0.5;
  cfg.srr = 3.3;
  MultiSourcePostfilter pf(fft, 16000.0, cfg);
  pf.add_source(0, std::vector<double>(bins, 0.01));
  std::mt19937_64 rng(5);
  std::vector<double> expected(bins, 0.0), prev_out(bins, 0.0);
  for (int f = 0; f < 6; ++f) {
    for (int k = 0; k < bins; ++k)
      expected[k] = 0.5 * expected[k] + (0.5 / 3.3) * prev_out[k];
    const auto half = random_half_spectrum(bins, rng, 0.5);
    pf.process({mirror(half, fft)});
    const auto& d = pf.diagnostics(0);
    for (int k = 0; k < bins; ++k)
      CHECK(d.lambda_rev[k] == Catch::Approx(expected[k]).margin(1e-15));
    prev_out = d.output_power;
  }
}

TEST_CASE("a-priori SNR recursion and its clamped update rate",
          "[postfilter]") {
  const int fft = 64, bins = 33;
  MultiSourcePostfilter pf(fft, 16000.0);
  pf.add_source(0, std::vector<double>(bins, 1.0));

  // Frame 1: all previous state is zero, so alpha_p = 0.07 and the estimate
  // is 0.07 * max(gamma - 1, 0).
  std::vector<cplx> half(bins, cplx(2.0, 0.0));  // |Y|^2 = 4
  pf.process({mirror(half, fft)});
  const auto d1 = pf.diagnostics(0);
  std::vector<double> gamma1(bins), xi1(bins);
  for (int k = 0; k < bins; ++k) {
    const double lambda = std::max(
        d1.lambda_stat[k] + d1.lambda_leak[k] + d1.lambda_rev[k], 1e-12);
    gamma1[k] = 4.0 / lambda;
    xi1[k] = 0.07 * std::max(gamma1[k] - 1.0, 0.0);
    CHECK(d1.xi[k] == Catch::Approx(xi1[k]).epsilon(1e-12));
  }

  // Frame 2: the decision-directed term uses last frame's raw gain.
  pf.process({mirror(half, fft)});
  const auto d2 = pf.diagnostics(0);
  for (int k = 0; k < bins; ++k) {
    const double lambda = std::max(
        d2.lambda_stat[k] + d2.lambda_leak[k] + d2.lambda_rev[k], 1e-12);
    const double gamma2 = 4.0 / lambda;
    const double trust = xi1[k] / (1.0 + xi1[k]);
    const double alpha_p = std::min(1.0, trust * trust + 0.07);
    const double upsilon1 =
        std::max(gamma1[k] * xi1[k] / (1.0 + xi1[k]), 1e-6);
    const double g1 = gain_log_mmse(xi1[k], upsilon1);
    const double expect = (1.0 - alpha_p) * g1 * g1 * gamma1[k] +
                          alpha_p * std::max(gamma2 - 1.0, 0.0);
    CHECK(d2.xi[k] == Catch::Approx(expect).epsilon(1e-10));
  }

  // Very high SNR: the update rate clamps at 1 and the estimate becomes the
  // instantaneous max(gamma - 1, 0) exactly.
  MultiSourcePostfilter loud(fft, 16000.0);
  loud.add_source(0, std::vector<double>(bins, 1.0));
  std::vector<cplx> strong(bins, cplx(std::sqrt(1000.0), 0.0));
  loud.process({mirror(strong, fft)});          // xi ~ 0.07 * 999 = 69.9 > 27
  loud.process({mirror(strong, fft)});
  const auto dl = loud.diagnostics(0);
  for (int k = 0; k < bins; ++k) {
    const double lambda = std::max(
        dl.lambda_stat[k] + dl.lambda_leak[k] + dl.lambda_rev[k], 1e-12);
    CHECK(dl.xi[k] ==
          Catch::Approx(std::max(1000.0 / lambda - 1.0, 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("single-source filter matches a straight-line reference enhancer",
          "[postfilter]") {
  const int fft = 256, bins = 129;
  const double fs = 16000.0;
  PostfilterConfig cfg;  // defaults, no reverb
  MultiSourcePostfilter pf(fft, fs, cfg);
  const std::vector<double> floor(bins, 1e-4);
  pf.add_source(0, floor);

  // Independent reference: same definitions, written as one flat loop.
  McraEstimator ref_mcra(bins, cfg.mcra_window_frames, cfg.mcra_smoothing);
  ref_mcra.seed(floor);
  std::vector<double> ref_xi(bins, 0.0), ref_gain(bins, 0.0),
      ref_gamma(bins, 0.0), ref_zl(bins, 0.0), ref_zg(bins, 0.0);
  double ref_zf = 0.0;
  const double bin_hz = fs / fft;
  const auto wl = presence_window(
      std::max(1, (int)std::lround(cfg.local_bandwidth_hz / (2.0 * bin_hz))));
  const auto wg = presence_window(
      std::max(1, (int)std::lround(cfg.global_bandwidth_hz / (2.0 * bin_hz))));
  std::vector<double> wf(bins);
  double wf_sum = 0.0;
  for (int k = 0; k < bins; ++k) {
    wf[k] = 0.5 * (1.0 - std::cos(2.0 * kPi * k / (bins - 1)));
    wf_sum += wf[k];
  }
  for (auto& v : wf) v /= wf_sum;
  auto smooth = [&](std::vector<double>& zeta, const std::vector<double>& xi,
                    const std::vector<double>& w) {
    const int half = ((int)w.size() - 1) / 2;
    for (int k = 0; k < bins; ++k) {
      double acc = 0.0;
      for (int j = -half; j <= half; ++j)
        if (k + j >= 0 && k + j < bins) acc += w[j + half] * xi[k + j];
      zeta[k] = 0.7 * zeta[k] + 0.3 * acc;
    }
  };

  std::mt19937_64 rng(77);
  for (int f = 0; f < 60; ++f) {
    auto half = random_half_spectrum(bins, rng, 0.01);
    if (f % 10 < 4)  // speech-like bursts on top of the noise
      for (int k = 10; k < 40; ++k) half[k] += cplx(0.3, 0.1);
    const auto full = mirror(half, fft);
    const auto out = pf.process({full});

    // Reference chain.
    std::vector<double> power(bins);
    for (int k = 0; k < bins; ++k) power[k] = std::norm(half[k]);
    ref_mcra.update(power);
    std::vector<double> xi(bins), ups(bins), g1(bins), gam(bins);
    for (int k = 0; k < bins; ++k) {
      const double lambda = std::max(ref_mcra.noise()[k], cfg.noise_floor);
      gam[k] = power[k] / lambda;
      const double trust = ref_xi[k] / (1.0 + ref_xi[k]);
      const double ap = std::min(1.0, trust * trust + cfg.alpha_p_min);
      xi[k] = (1.0 - ap) * ref_gain[k] * ref_gain[k] * ref_gamma[k] +
              ap * std::max(gam[k] - 1.0, 0.0);
      ups[k] = std::max(gam[k] * xi[k] / (1.0 + xi[k]), 1e-6);
      g1[k] = gain_log_mmse(xi[k], ups[k]);
    }
    smooth(ref_zl, xi, wl);
    smooth(ref_zg, xi, wg);
    double favg = 0.0;
    for (int k = 0; k < bins; ++k) favg += wf[k] * xi[k];
    ref_zf = 0.7 * ref_zf + 0.3 * favg;
    const double pframe = speech_presence_probability(ref_zf, cfg.theta);
    for (int k = 0; k < bins; ++k) {
      const double pl = speech_presence_probability(ref_zl[k], cfg.theta);
      const double pg = speech_presence_probability(ref_zg[k], cfg.theta);
      const double q = speech_absence_prior(pl, pg, pframe, cfg.q_max);
      const double p = speech_presence(q, xi[k], ups[k]);
      const double g = modified_gain(g1[k], p, cfg.g_min);
      const cplx expect = g * half[k];
      CHECK(std::abs(out[0][k] - expect) <= 1e-12 * (std::abs(expect) + 1e-12));
      ref_xi[k] = xi[k];
      ref_gain[k] = g1[k];
      ref_gamma[k] = gam[k];
    }
  }
}

TEST_CASE("gains stay within bounds and outputs stay conjugate-symmetric",
          "[postfilter]") {
  const int fft = 128, bins = 65;
  MultiSourcePostfilter pf(fft, 16000.0);
  pf.add_source(0, std::vector<double>(bins, 1e-4));
  pf.add_source(1, std::vector<double>(bins, 1e-4));
  std::mt19937_64 rng(9);
  for (int f = 0; f < 40; ++f) {
    std::vector<std::vector<cplx>> frame;
    frame.push_back(mirror(random_half_spectrum(bins, rng, 0.2), fft));
    frame.push_back(mirror(random_half_spectrum(bins, rng, 0.05), fft));
    const auto out = pf.process(frame);
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < bins; ++k) {
        const double g = pf.diagnostics(j).gain[k];
        CHECK(g >= 0.1);
        CHECK(g <= 1.0);
        CHECK(pf.diagnostics(j).p[k] >= 0.0);
        CHECK(pf.diagnostics(j).p[k] <= 1.0);
        CHECK(pf.diagnostics(j).lambda_stat[k] >= 0.0);
        CHECK(pf.diagnostics(j).lambda_leak[k] >= 0.0);
      }
      CHECK(out[j][0].imag() == 0.0);
      CHECK(out[j][64].imag() == 0.0);
      for (int k = 1; k < 64; ++k)
        CHECK(std::abs(out[j][fft - k] - std::conj(out[j][k])) < 1e-15);
    }
  }
}

TEST_CASE("leakage term strictly improves attenuation during silences",
          "[postfilter][integration]") {
  const int fft = 256, bins = 129;
  const double fs = 16000.0;
  const int frames = 300, silent_from = 150;
  std::mt19937_64 rng(123);

  // Synthetic separated streams: source 0 talks then goes silent while the
  // two interferers keep talking; its channel keeps a sensor noise floor plus
  // -10 dB-ish leakage of the interferers throughout.
  std::vector<std::vector<std::vector<cplx>>> inputs(frames);
  {
    std::normal_distribution<double> n(0.0, 1.0);
    for (int f = 0; f < frames; ++f) {
      auto noise = [&](double s) { return random_half_spectrum(bins, rng, s); };
      auto talk1 = noise(0.5), talk2 = noise(0.5);
      auto own = noise(0.01);  // sensor floor
      if (f < silent_from) {
        const auto speech = noise(0.5);
        for (int k = 0; k < bins; ++k) own[k] += speech[k];
      }
      for (int k = 0; k < bins; ++k)
        own[k] += 0.3 * (talk1[k] + talk2[k]);  // leakage into channel 0
      inputs[f] = {mirror(own, fft), mirror(talk1, fft), mirror(talk2, fft)};
    }
  }

  auto run = [&](double eta) {
    PostfilterConfig cfg;
    cfg.eta = eta;
    MultiSourcePostfilter pf(fft, fs, cfg);
    const std::vector<double> floor(bins, 1e-4);
    for (int id = 0; id < 3; ++id) pf.add_source(id, floor);
    double in_power = 0.0, out_power = 0.0;
    for (int f = 0; f < frames; ++f) {
      const auto out = pf.process(inputs[f]);
      if (f >= silent_from) {
        for (int k = 0; k < bins; ++k) {
          in_power += std::norm(inputs[f][0][k]);
          out_power += std::norm(out[0][k]);
        }
      }
    }
    return 10.0 * std::log10(in_power / out_power);
  };

  const double att_multi = run(0.1);   // leakage modelled
  const double att_single = run(0.0);  // leakage term forced to zero
  INFO("attenuation with leakage " << att_multi << " dB, without "
                                   << att_single << " dB");
  CHECK(att_multi > att_single);
  CHECK(att_multi > 0.0);
}

TEST_CASE("postfilter validates inputs", "[postfilter]") {
  MultiSourcePostfilter pf(64, 16000.0);
  pf.add_source(1);
  CHECK_THROWS_AS(pf.add_source(1), std::invalid_argument);
  CHECK_THROWS_AS(pf.remove_source(2), std::invalid_argument);
  CHECK_THROWS_AS(pf.add_source(2, std::vector<double>(5, 0.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(pf.process({}), std::invalid_argument);
  CHECK_THROWS_AS(pf.process({std::vector<cplx>(32)}), std::invalid_argument);
  pf.remove_source(1);
  CHECK(pf.num_sources() == 0);
}
