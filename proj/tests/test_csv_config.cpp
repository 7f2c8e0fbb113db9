// Round-trip and validation tests for the CSV interchange formats and the
// JSON run configuration.
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "earshot/config.hpp"
#include "earshot/csv.hpp"

using namespace earshot;

TEST_CASE("detections CSV round-trips and pins its header") {
  std::vector<DetectionRow> rows;
  rows.push_back({12, 0, -90.0, 0.25, 321.5, 0.971253});
  rows.push_back({12, 1, 135.5, -10.0, 150.0, 0.5});
  rows.push_back({16, 0, 0.0, 0.0, 99.125, 0.03125});

  const std::string text = detections_csv_string(rows);
  REQUIRE(text.rfind("frame_index,q,azimuth_deg,elevation_deg,energy,P_q\n",
                     0) == 0);
  // Values are written with fixed six-decimal precision.
  REQUIRE(text.find("12,0,-90.000000,0.250000,321.500000,0.971253") !=
          std::string::npos);

  const auto back = parse_detections_csv(text);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].frame == rows[i].frame);
    CHECK(back[i].q == rows[i].q);
    CHECK(back[i].azimuth_deg == Catch::Approx(rows[i].azimuth_deg));
    CHECK(back[i].elevation_deg == Catch::Approx(rows[i].elevation_deg));
    CHECK(back[i].energy == Catch::Approx(rows[i].energy));
    CHECK(back[i].probability == Catch::Approx(rows[i].probability));
  }

  CHECK_THROWS_AS(parse_detections_csv("wrong,header\n1,2\n"), io_error);
  CHECK_THROWS_AS(
      parse_detections_csv(std::string(kDetectionsHeader) + "\n1,2,3\n"),
      io_error);
  CHECK_THROWS_AS(parse_detections_csv(std::string(kDetectionsHeader) +
                                       "\n1,0,abc,0,0,0\n"),
                  io_error);
}

TEST_CASE("tracks CSV round-trips including the delayed flag") {
  std::vector<TrackRow> rows;
  rows.push_back({40, 0.437333, 3, 12.5, -4.0, 0.999, 0.82, false});
  rows.push_back({40, 0.437333, 3, 12.25, -4.125, 0.999, 0.82, true});

  const std::string text = tracks_csv_string(rows);
  REQUIRE(
      text.rfind(
          "frame,time_s,track_id,azimuth_deg,elevation_deg,P_exist,P_active,"
          "delayed\n",
          0) == 0);
  CHECK(text.find(",0\n") != std::string::npos);
  CHECK(text.find(",1\n") != std::string::npos);

  const auto back = parse_tracks_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].delayed == false);
  CHECK(back[1].delayed == true);
  CHECK(back[0].track_id == 3);
  CHECK(back[0].time_s == Catch::Approx(0.437333));
  CHECK(back[1].azimuth_deg == Catch::Approx(12.25));

  CHECK_THROWS_AS(parse_tracks_csv(std::string(kTracksHeader) +
                                   "\n1,0.0,1,0,0,1,1,2\n"),
                  io_error);  // delayed must be 0/1
}

TEST_CASE("silence CSV groups intervals per source") {
  const std::vector<std::string> ids = {"s0", "s1"};
  std::vector<std::vector<std::pair<double, double>>> segs(2);
  segs[0] = {{1.0, 1.5}, {3.0, 3.25}};
  segs[1] = {{2.0, 2.5}};

  const std::string text = silence_csv_string(ids, segs);
  const auto back = parse_silence_csv(text);
  REQUIRE(back.size() == 2);
  REQUIRE(back.at("s0").size() == 2);
  REQUIRE(back.at("s1").size() == 1);
  CHECK(back.at("s0")[1].first == Catch::Approx(3.0));
  CHECK(back.at("s0")[1].second == Catch::Approx(3.25));
  CHECK(back.at("s1")[0].first == Catch::Approx(2.0));

  CHECK_THROWS_AS(parse_silence_csv("source_id,start_s,end_s\ns0,2.0,1.0\n"),
                  io_error);
}

TEST_CASE("numeric matrix files preserve the frames x columns shape") {
  std::vector<std::vector<double>> m(5, std::vector<double>(48, 0.0));
  for (int f = 0; f < 5; ++f)
    for (int c = 0; c < 48; ++c) m[f][c] = f + c * 0.015625;

  const auto text = matrix_string(m);
  const auto back = parse_matrix(text);
  REQUIRE(back.size() == 5);
  for (const auto& row : back) REQUIRE(row.size() == 48);
  for (int f = 0; f < 5; ++f)
    for (int c = 0; c < 48; ++c)
      CHECK(back[f][c] == Catch::Approx(m[f][c]).margin(1e-6));

  CHECK_THROWS_AS(parse_matrix("1 2 3\n1 2\n"), io_error);

  const std::string path = "test_matrix_tmp.txt";
  write_matrix(path, m);
  const auto from_disk = read_matrix(path);
  CHECK(from_disk == back);
  std::remove(path.c_str());
}

TEST_CASE("default config matches the module defaults and is valid") {
  const RunConfig c = default_run_config();
  CHECK(c.localizer.frame_length == 1024);
  CHECK(c.localizer.sample_rate == 48000.0);
  CHECK(c.hop == 512);
  CHECK(c.localizer.weighting.alpha_d == Catch::Approx(0.1));
  CHECK(c.localizer.energy_threshold == Catch::Approx(150.0));
  CHECK(c.tracker.obs_sigma == Catch::Approx(0.05));
  CHECK(c.tracker.num_particles == 1000);
  CHECK(c.gss.mu == Catch::Approx(0.01));
  CHECK(c.gss.lambda == Catch::Approx(0.5));
  CHECK(c.postfilter.eta == Catch::Approx(0.1));
  CHECK(c.postfilter.alpha_s == Catch::Approx(0.2));
  CHECK(c.postfilter.alpha_p_min == Catch::Approx(0.07));
  CHECK(c.postfilter.g_min == Catch::Approx(0.1));
  CHECK(c.postfilter.theta == Catch::Approx(0.31622776601683794));
  CHECK(c.postfilter.alpha_zeta == Catch::Approx(0.3));
  CHECK(c.mask_threshold == Catch::Approx(0.25));
  CHECK(c.tracker.estimate_delay == Catch::Approx(0.5));
  CHECK(c.tracker.p_not_observed == Catch::Approx(0.2));
  CHECK(c.tracker.birth_threshold == Catch::Approx(0.3));
  CHECK(c.tracker.confirm_threshold == Catch::Approx(0.98));
  // Derived tracker period: 4 frames * 512 samples / 48 kHz.
  CHECK(c.tracker.delta_t == Catch::Approx(4.0 * 512.0 / 48000.0));
  CHECK_NOTHROW(validate_run_config(c));

  // An empty JSON object reproduces the defaults.
  const RunConfig parsed = parse_run_config("{}");
  CHECK(parsed.localizer.frame_length == c.localizer.frame_length);
  CHECK(parsed.tracker.delta_t == Catch::Approx(c.tracker.delta_t));
  CHECK(parsed.postfilter.eta == Catch::Approx(c.postfilter.eta));
}

TEST_CASE("config JSON overrides selected keys and keeps the rest") {
  const std::string text = R"({
    // comments are tolerated
    "seed": 42,
    "track_stride": 2,
    "localizer": {"max_sources": 2, "weighting": {"alpha_d": 0.2}},
    "tracker": {"num_particles": 500},
    "gss": {"mu": 0.02},
    "postfilter": {"eta": 0.0},
    "features": {"num_bands": 20, "kept_cepstra": 10}
  })";
  const RunConfig c = parse_run_config(text);
  CHECK(c.seed == 42);
  CHECK(c.track_stride == 2);
  CHECK(c.localizer.max_sources == 2);
  CHECK(c.localizer.weighting.alpha_d == Catch::Approx(0.2));
  CHECK(c.localizer.weighting.srr == Catch::Approx(3.3));  // untouched
  CHECK(c.tracker.num_particles == 500);
  CHECK(c.gss.mu == Catch::Approx(0.02));
  CHECK(c.postfilter.eta == Catch::Approx(0.0));
  CHECK(c.features.num_bands == 20);
  CHECK(c.localizer.frame_length == 1024);  // untouched
  CHECK(c.tracker.delta_t == Catch::Approx(2.0 * 512.0 / 48000.0));
}

TEST_CASE("config rejects unknown keys, bad types and bad ranges") {
  CHECK_THROWS_AS(parse_run_config(R"({"sedd": 1})"), config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"localizer": {"frames": 4}})"),
                  config_error);
  CHECK_THROWS_AS(
      parse_run_config(R"({"localizer": {"weighting": {"alpha": 0.1}}})"),
      config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"tracker": {"sigma": 0.05}})"),
                  config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"hop": "big"})"), config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"hop": 0})"), config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"hop": 2048})"), config_error);
  CHECK_THROWS_AS(
      parse_run_config(R"({"tracker": {"p_not_observed": 1.5}})"),
      config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"postfilter": {"alpha_s": 1.0}})"),
                  config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"postfilter": {"g_min": 0.0}})"),
                  config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"gss": {"mu": -0.01}})"), config_error);
  CHECK_THROWS_AS(
      parse_run_config(R"({"features": {"fmax_hz": 9000.0}})"),
      config_error);
  CHECK_THROWS_AS(parse_run_config(R"({"mask_threshold": 0.0})"),
                  config_error);
  CHECK_THROWS_AS(parse_run_config("{not json"), config_error);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), io_error);
}
