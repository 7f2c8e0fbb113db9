// csv.hpp: the text formats exchanged between pipeline stages — per-frame
// detections, track trajectories, silence segments, and plain numeric
// matrices (features and masks, one row per frame).
#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "earshot/common.hpp"

namespace earshot {

/// One steered-beamformer detection as exported per frame.
struct DetectionRow {
  long frame = 0;  // STFT frame index
  int q = 0;       // detection rank within the frame (0 = strongest)
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double energy = 0.0;
  double probability = 0.0;  // P_q, confidence the detection is a real source
};

/// One tracker estimate. Each track emits two rows per step: the
/// low-latency estimate (delayed = false) and the smoothed one.
struct TrackRow {
  long frame = 0;  // STFT frame index
  double time_s = 0.0;
  int track_id = 0;
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double p_exist = 0.0;
  double p_active = 0.0;
  bool delayed = false;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw io_error("malformed number '" + s + "' in " + context);
  }
}

inline long parse_long(const std::string& s, const std::string& context) {
  try {
    size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw io_error("malformed integer '" + s + "' in " + context);
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw io_error("short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

inline constexpr const char* kDetectionsHeader =
    "frame_index,q,azimuth_deg,elevation_deg,energy,P_q";

inline std::string detections_csv_string(const std::vector<DetectionRow>& rows) {
  std::ostringstream out;
  out << kDetectionsHeader << '\n';
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& r : rows)
    out << r.frame << ',' << r.q << ',' << r.azimuth_deg << ','
        << r.elevation_deg << ',' << r.energy << ',' << r.probability << '\n';
  return out.str();
}

inline void write_detections_csv(const std::string& path,
                                 const std::vector<DetectionRow>& rows) {
  detail::write_text_file(path, detections_csv_string(rows));
}

inline std::vector<DetectionRow> parse_detections_csv(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) || line != kDetectionsHeader)
    throw io_error("detections CSV: missing or wrong header");
  std::vector<DetectionRow> rows;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 6) throw io_error("detections CSV: expected 6 fields");
    DetectionRow r;
    r.frame = detail::parse_long(f[0], "detections CSV");
    r.q = static_cast<int>(detail::parse_long(f[1], "detections CSV"));
    r.azimuth_deg = detail::parse_double(f[2], "detections CSV");
    r.elevation_deg = detail::parse_double(f[3], "detections CSV");
    r.energy = detail::parse_double(f[4], "detections CSV");
    r.probability = detail::parse_double(f[5], "detections CSV");
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<DetectionRow> read_detections_csv(const std::string& path) {
  return parse_detections_csv(detail::read_text_file(path));
}

// ---------------------------------------------------------------------------
// Tracks
// ---------------------------------------------------------------------------

inline constexpr const char* kTracksHeader =
    "frame,time_s,track_id,azimuth_deg,elevation_deg,P_exist,P_active,delayed";

inline std::string tracks_csv_string(const std::vector<TrackRow>& rows) {
  std::ostringstream out;
  out << kTracksHeader << '\n';
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& r : rows)
    out << r.frame << ',' << r.time_s << ',' << r.track_id << ','
        << r.azimuth_deg << ',' << r.elevation_deg << ',' << r.p_exist << ','
        << r.p_active << ',' << (r.delayed ? 1 : 0) << '\n';
  return out.str();
}

inline void write_tracks_csv(const std::string& path,
                             const std::vector<TrackRow>& rows) {
  detail::write_text_file(path, tracks_csv_string(rows));
}

inline std::vector<TrackRow> parse_tracks_csv(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) || line != kTracksHeader)
    throw io_error("tracks CSV: missing or wrong header");
  std::vector<TrackRow> rows;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 8) throw io_error("tracks CSV: expected 8 fields");
    TrackRow r;
    r.frame = detail::parse_long(f[0], "tracks CSV");
    r.time_s = detail::parse_double(f[1], "tracks CSV");
    r.track_id = static_cast<int>(detail::parse_long(f[2], "tracks CSV"));
    r.azimuth_deg = detail::parse_double(f[3], "tracks CSV");
    r.elevation_deg = detail::parse_double(f[4], "tracks CSV");
    r.p_exist = detail::parse_double(f[5], "tracks CSV");
    r.p_active = detail::parse_double(f[6], "tracks CSV");
    const long d = detail::parse_long(f[7], "tracks CSV");
    if (d != 0 && d != 1) throw io_error("tracks CSV: delayed must be 0 or 1");
    r.delayed = d == 1;
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<TrackRow> read_tracks_csv(const std::string& path) {
  return parse_tracks_csv(detail::read_text_file(path));
}

// ---------------------------------------------------------------------------
// Silence segments
// ---------------------------------------------------------------------------

inline constexpr const char* kSilenceHeader = "source_id,start_s,end_s";

inline std::string silence_csv_string(
    const std::vector<std::string>& source_ids,
    const std::vector<std::vector<std::pair<double, double>>>& segments) {
  if (source_ids.size() != segments.size())
    throw std::invalid_argument("silence CSV: id/segment count mismatch");
  std::ostringstream out;
  out << kSilenceHeader << '\n';
  out.setf(std::ios::fixed);
  out.precision(6);
  for (size_t s = 0; s < source_ids.size(); ++s)
    for (const auto& [t0, t1] : segments[s])
      out << source_ids[s] << ',' << t0 << ',' << t1 << '\n';
  return out.str();
}

inline void write_silence_csv(
    const std::string& path, const std::vector<std::string>& source_ids,
    const std::vector<std::vector<std::pair<double, double>>>& segments) {
  detail::write_text_file(path, silence_csv_string(source_ids, segments));
}

/// source id -> list of [start_s, end_s) intervals.
inline std::map<std::string, std::vector<std::pair<double, double>>>
parse_silence_csv(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) || line != kSilenceHeader)
    throw io_error("silence CSV: missing or wrong header");
  std::map<std::string, std::vector<std::pair<double, double>>> out;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 3) throw io_error("silence CSV: expected 3 fields");
    const double t0 = detail::parse_double(f[1], "silence CSV");
    const double t1 = detail::parse_double(f[2], "silence CSV");
    if (!(t1 > t0)) throw io_error("silence CSV: end must exceed start");
    out[f[0]].emplace_back(t0, t1);
  }
  return out;
}

inline std::map<std::string, std::vector<std::pair<double, double>>>
read_silence_csv(const std::string& path) {
  return parse_silence_csv(detail::read_text_file(path));
}

// ---------------------------------------------------------------------------
// Numeric matrices (features, masks): whitespace-separated, one row per
// frame, no header — the file shape is exactly frames x columns.
// ---------------------------------------------------------------------------

inline std::string matrix_string(const std::vector<std::vector<double>>& rows,
                                 int precision = 6) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(precision);
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out << ' ';
      out << row[i];
    }
    out << '\n';
  }
  return out.str();
}

inline void write_matrix(const std::string& path,
                         const std::vector<std::vector<double>>& rows,
                         int precision = 6) {
  detail::write_text_file(path, matrix_string(rows, precision));
}

inline std::vector<std::vector<double>> parse_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::string line;
  size_t width = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream fields(line);
    std::string tok;
    while (fields >> tok) row.push_back(detail::parse_double(tok, "matrix"));
    if (width == 0) width = row.size();
    if (row.size() != width) throw io_error("matrix: ragged rows");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<std::vector<double>> read_matrix(const std::string& path) {
  return parse_matrix(detail::read_text_file(path));
}

}  // namespace earshot
