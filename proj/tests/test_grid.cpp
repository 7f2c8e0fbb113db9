// Tests for geometry.hpp, grid.hpp and mcra.hpp.
#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <random>
#include <set>

#include "earshot/geometry.hpp"
#include "earshot/grid.hpp"
#include "earshot/mcra.hpp"

using namespace earshot;

TEST_CASE("pair indexing enumerates upper triangle", "[geometry]") {
  ArrayGeometry g = cube_array();
  REQUIRE(g.num_mics() == 8);
  REQUIRE(g.num_pairs() == 28);
  int expected = 0;
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j) CHECK(g.pair_index(i, j) == expected++);
  CHECK(expected == 28);
  CHECK(g.centroid().norm() < 1e-12);
}

TEST_CASE("geometry hash keys on positions", "[geometry]") {
  ArrayGeometry a = cube_array();
  ArrayGeometry b = cube_array();
  CHECK(a.hash() == b.hash());
  b.mics[3].x() += 0.001;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("grid counts follow the subdivision law", "[grid]") {
  for (int levels = 0; levels <= 4; ++levels) {
    SphericalGrid g = SphericalGrid::build(levels);
    const int pow4 = 1 << (2 * levels);
    CHECK(g.num_directions() == 10 * pow4 + 2);
    CHECK(g.num_triangles() == 20 * pow4);
    for (const auto& d : g.directions) CHECK(std::abs(d.norm() - 1.0) < 1e-12);
    // Euler characteristic of a sphere triangulation: V - E + F = 2.
    std::set<std::pair<int, int>> edges;
    for (const auto& t : g.triangles) {
      edges.insert(std::minmax(t[0], t[1]));
      edges.insert(std::minmax(t[1], t[2]));
      edges.insert(std::minmax(t[2], t[0]));
    }
    CHECK(g.num_directions() - static_cast<int>(edges.size()) + g.num_triangles() == 2);
  }
}

TEST_CASE("grid covers the sphere densely at level 4", "[grid]") {
  SphericalGrid g = SphericalGrid::build(4);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    Vec3 u(n(rng), n(rng), n(rng));
    u.normalize();
    const int idx = g.nearest(u);
    worst = std::max(worst, angle_between_deg(u, g.directions[idx]));
  }
  CHECK(worst < 3.0);  // level-4 triangles have ~4 degree edges
  for (int i = 0; i < g.num_directions(); i += 97)
    CHECK(g.nearest(g.directions[i]) == i);
}

TEST_CASE("far field delays have the documented sign", "[grid]") {
  ArrayGeometry g = cube_array();
  // Wave from +x: mic 1 (x=+0.08) hears it before mic 0 (x=-0.08), so the
  // signal at mic 0 lags and the pair delay (0,1) is negative.
  const Vec3 u(1.0, 0.0, 0.0);
  const double tau = far_field_delay(g.mics[0], g.mics[1], u, 48000.0, 343.0);
  CHECK(tau == Catch::Approx(-0.16 * 48000.0 / 343.0).epsilon(1e-12));
  CHECK(tau == Catch::Approx(-22.39067055393586).epsilon(1e-12));
}

TEST_CASE("near field delay approaches far field with distance", "[grid]") {
  ArrayGeometry g = cube_array();
  const Vec3 u = direction_from_angles(37.0, 12.0);
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j) {
      const double far = far_field_delay(g.mics[i], g.mics[j], u, 48000.0, 343.0);
      const double near = near_field_delay(g.mics[i], g.mics[j], 1000.0 * u, 48000.0, 343.0);
      CHECK(std::abs(far - near) < 0.01);
      // At 0.5 m the field is noticeably curved but the sign must agree.
      const double close = near_field_delay(g.mics[i], g.mics[j], 0.5 * u, 48000.0, 343.0);
      if (std::abs(far) > 2.0) CHECK(far * close > 0.0);
    }
}

TEST_CASE("tdoa table bounds and spot values", "[grid]") {
  SphericalGrid grid = SphericalGrid::build(2);
  ArrayGeometry geom = cube_array();
  TdoaTable t = build_tdoa_table(grid, geom, 48000.0, 343.0);
  REQUIRE(t.delays.size() == size_t(grid.num_directions()));
  REQUIRE(t.num_pairs == 28);
  // Largest possible delay: cube diagonal 0.16 * sqrt(3) m => 38.8 samples.
  CHECK(t.max_abs_delay <= 39);
  CHECK(t.max_abs_delay >= 35);
  for (int d = 0; d < grid.num_directions(); ++d)
    for (int p = 0; p < 28; ++p) CHECK(std::abs(t.delays[d][p]) <= t.max_abs_delay);
  // Spot check one direction against the formula.
  const int dir = grid.nearest(Vec3(0.0, 0.0, 1.0));
  const int pair = geom.pair_index(0, 4);  // differs only in z: -0.08 vs +0.08
  const double expect = 48000.0 / 343.0 * (geom.mics[0] - geom.mics[4]).dot(grid.directions[dir]);
  CHECK(t.delays[dir][pair] == static_cast<int>(std::lround(expect)));
}

TEST_CASE("tdoa cache round trip and key mismatches", "[grid]") {
  SphericalGrid grid = SphericalGrid::build(1);
  ArrayGeometry geom = cube_array();
  TdoaTable t = build_tdoa_table(grid, geom, 48000.0, 343.0);
  const std::string path =
      (std::filesystem::temp_directory_path() / "earshot_tdoa_cache.bin").string();
  save_tdoa_cache(path, t);

  TdoaTable loaded;
  REQUIRE(load_tdoa_cache(path, geom.hash(), 48000.0, 343.0, 1, loaded));
  CHECK(loaded.delays == t.delays);
  CHECK(loaded.max_abs_delay == t.max_abs_delay);

  TdoaTable reject;
  CHECK_FALSE(load_tdoa_cache(path, geom.hash() + 1, 48000.0, 343.0, 1, reject));
  CHECK_FALSE(load_tdoa_cache(path, geom.hash(), 44100.0, 343.0, 1, reject));
  CHECK_FALSE(load_tdoa_cache(path, geom.hash(), 48000.0, 340.0, 1, reject));
  CHECK_FALSE(load_tdoa_cache(path, geom.hash(), 48000.0, 343.0, 2, reject));
  CHECK_FALSE(load_tdoa_cache(path + ".missing", geom.hash(), 48000.0, 343.0, 1, reject));

  // Truncated files must be rejected, not half-read.
  std::filesystem::resize_file(path, 64);
  CHECK_FALSE(load_tdoa_cache(path, geom.hash(), 48000.0, 343.0, 1, reject));
  std::filesystem::remove(path);
}

TEST_CASE("noise floor converges on stationary noise", "[mcra]") {
  const int bins = 64;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  McraEstimator est(bins);
  const double true_power = 2.0;
  std::vector<double> power(bins);
  for (int f = 0; f < 600; ++f) {
    for (auto& p : power) {
      // Exponentially distributed per-bin periodogram of white noise.
      const double re = n(rng), im = n(rng);
      p = true_power * 0.5 * (re * re + im * im);
    }
    est.update(power);
  }
  double mean = 0.0;
  for (double v : est.noise()) {
    mean += v;
    CHECK(v > 0.4 * true_power);
    CHECK(v < 1.8 * true_power);
  }
  mean /= bins;
  CHECK(mean == Catch::Approx(true_power).margin(0.1 * true_power));
}

TEST_CASE("short bursts barely move the floor", "[mcra]") {
  const int bins = 32;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  McraEstimator est(bins);
  std::vector<double> power(bins);
  auto noise_frame = [&](double scale) {
    for (auto& p : power) {
      const double re = n(rng), im = n(rng);
      p = scale * 0.5 * (re * re + im * im);
    }
  };
  for (int f = 0; f < 400; ++f) {
    noise_frame(1.0);
    est.update(power);
  }
  std::vector<double> before = est.noise();
  for (int f = 0; f < 8; ++f) {  // 20 dB burst
    noise_frame(100.0);
    est.update(power);
  }
  for (int k = 0; k < bins; ++k) {
    const double rise_db = 10.0 * std::log10(est.noise()[k] / before[k]);
    CHECK(rise_db < 1.0);
  }
}

TEST_CASE("floor decays to zero on silence and never chases a falling input up",
          "[mcra]") {
  const int bins = 8;
  McraEstimator est(bins);
  std::vector<double> power(bins, 1.0);
  est.update(power);
  // Monotone decreasing input => monotone nonincreasing floor.
  std::vector<double> prev = est.noise();
  for (int f = 0; f < 200; ++f) {
    for (auto& p : power) p *= 0.9;
    est.update(power);
    for (int k = 0; k < bins; ++k) CHECK(est.noise()[k] <= prev[k] + 1e-15);
    prev = est.noise();
  }
  // Hard silence drives the floor to zero.
  std::fill(power.begin(), power.end(), 0.0);
  for (int f = 0; f < 800; ++f) est.update(power);
  for (int k = 0; k < bins; ++k) CHECK(est.noise()[k] < 1e-10);
}
