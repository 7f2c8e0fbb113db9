// grid.hpp: subdivided icosahedral direction grid and per-direction delay
// tables, with a binary on-disk cache.
#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "earshot/common.hpp"
#include "earshot/geometry.hpp"

namespace earshot {

/// Quasi-uniform unit sphere sampling built by recursive triangle subdivision
/// of an icosahedron. levels = n gives 10 * 4^n + 2 vertices and 20 * 4^n
/// triangles.
struct SphericalGrid {
  int levels = 0;
  std::vector<Vec3> directions;                // unit vectors
  std::vector<std::array<int, 3>> triangles;   // vertex indices

  int num_directions() const { return static_cast<int>(directions.size()); }
  int num_triangles() const { return static_cast<int>(triangles.size()); }

  /// Index of the grid direction closest to u (max dot product, linear scan).
  int nearest(const Vec3& u) const {
    int best = 0;
    double best_dot = -2.0;
    for (int i = 0; i < num_directions(); ++i) {
      const double d = directions[i].dot(u);
      if (d > best_dot) {
        best_dot = d;
        best = i;
      }
    }
    return best;
  }

  static SphericalGrid build(int levels) {
    SphericalGrid g;
    g.levels = levels;
    const double p = (1.0 + std::sqrt(5.0)) / 2.0;
    const double v[12][3] = {{-1, p, 0}, {1, p, 0},   {-1, -p, 0}, {1, -p, 0},
                             {0, -1, p}, {0, 1, p},   {0, -1, -p}, {0, 1, -p},
                             {p, 0, -1}, {p, 0, 1},   {-p, 0, -1}, {-p, 0, 1}};
    for (const auto& q : v) g.directions.push_back(Vec3(q[0], q[1], q[2]).normalized());
    g.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                   {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                   {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                   {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};

    for (int l = 0; l < levels; ++l) {
      std::map<std::pair<int, int>, int> midpoint;
      auto mid = [&](int a, int b) {
        auto key = std::minmax(a, b);
        auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        const int idx = g.num_directions();
        g.directions.push_back((g.directions[a] + g.directions[b]).normalized());
        midpoint.emplace(key, idx);
        return idx;
      };
      std::vector<std::array<int, 3>> next;
      next.reserve(g.triangles.size() * 4);
      for (const auto& t : g.triangles) {
        const int ab = mid(t[0], t[1]);
        const int bc = mid(t[1], t[2]);
        const int ca = mid(t[2], t[0]);
        next.push_back({t[0], ab, ca});
        next.push_back({t[1], bc, ab});
        next.push_back({t[2], ca, bc});
        next.push_back({ab, bc, ca});
      }
      g.triangles = std::move(next);
    }
    return g;
  }
};

/// Far-field delay, in samples, of mic j relative to mic i for a plane wave
/// arriving from direction u. Positive when the wave reaches mic i first.
inline double far_field_delay(const Vec3& pi, const Vec3& pj, const Vec3& u,
                              double sample_rate, double speed_of_sound) {
  return sample_rate / speed_of_sound * (pi - pj).dot(u);
}

/// Point-source delay, in samples, of mic j relative to mic i for a source
/// at position r (reduces to far_field_delay as |r| grows).
inline double near_field_delay(const Vec3& pi, const Vec3& pj, const Vec3& r,
                               double sample_rate, double speed_of_sound) {
  return sample_rate / speed_of_sound * ((r - pj).norm() - (r - pi).norm());
}

/// Rounded per-pair delays for every grid direction.
struct TdoaTable {
  uint64_t geometry_hash = 0;
  double sample_rate = 0.0;
  double speed_of_sound = 0.0;
  int levels = 0;
  int num_pairs = 0;
  int max_abs_delay = 0;
  std::vector<std::vector<int>> delays;  // [direction][pair]
};

inline TdoaTable build_tdoa_table(const SphericalGrid& grid, const ArrayGeometry& geom,
                                  double sample_rate, double speed_of_sound) {
  TdoaTable t;
  t.geometry_hash = geom.hash();
  t.sample_rate = sample_rate;
  t.speed_of_sound = speed_of_sound;
  t.levels = grid.levels;
  t.num_pairs = geom.num_pairs();
  t.delays.assign(grid.num_directions(), std::vector<int>(t.num_pairs));
  for (int d = 0; d < grid.num_directions(); ++d) {
    int idx = 0;
    for (int i = 0; i < geom.num_mics(); ++i)
      for (int j = i + 1; j < geom.num_mics(); ++j, ++idx) {
        const double tau = far_field_delay(geom.mics[i], geom.mics[j],
                                           grid.directions[d], sample_rate, speed_of_sound);
        const int r = static_cast<int>(std::lround(tau));
        t.delays[d][idx] = r;
        t.max_abs_delay = std::max(t.max_abs_delay, std::abs(r));
      }
  }
  return t;
}

namespace detail {
inline constexpr uint32_t kTdoaCacheMagic = 0x45535444;  // "DTSE" little endian
inline constexpr uint32_t kTdoaCacheVersion = 1;
}  // namespace detail

inline void save_tdoa_cache(const std::string& path, const TdoaTable& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for writing: " + path);
  auto put = [&f](const void* p, size_t n) { f.write(static_cast<const char*>(p), n); };
  const uint32_t magic = detail::kTdoaCacheMagic, version = detail::kTdoaCacheVersion;
  put(&magic, 4);
  put(&version, 4);
  put(&t.geometry_hash, 8);
  put(&t.sample_rate, 8);
  put(&t.speed_of_sound, 8);
  const int32_t levels = t.levels, dirs = static_cast<int32_t>(t.delays.size()),
                pairs = t.num_pairs, max_abs = t.max_abs_delay;
  put(&levels, 4);
  put(&dirs, 4);
  put(&pairs, 4);
  put(&max_abs, 4);
  for (const auto& row : t.delays)
    for (int v : row) {
      const int32_t q = v;
      put(&q, 4);
    }
  if (!f) throw io_error("short write: " + path);
}

/// Load a cached table; returns false (leaving t untouched) when the file is
/// missing or was built for different geometry/rate/speed/resolution.
inline bool load_tdoa_cache(const std::string& path, uint64_t geometry_hash,
                            double sample_rate, double speed_of_sound, int levels,
                            TdoaTable& t) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return false;
  auto get = [&f](void* p, size_t n) { f.read(static_cast<char*>(p), n); };
  uint32_t magic = 0, version = 0;
  uint64_t hash = 0;
  double rate = 0, speed = 0;
  int32_t lv = 0, dirs = 0, pairs = 0, max_abs = 0;
  get(&magic, 4);
  get(&version, 4);
  get(&hash, 8);
  get(&rate, 8);
  get(&speed, 8);
  get(&lv, 4);
  get(&dirs, 4);
  get(&pairs, 4);
  get(&max_abs, 4);
  if (!f || magic != detail::kTdoaCacheMagic || version != detail::kTdoaCacheVersion)
    return false;
  if (hash != geometry_hash || rate != sample_rate || speed != speed_of_sound ||
      lv != levels)
    return false;
  TdoaTable loaded;
  loaded.geometry_hash = hash;
  loaded.sample_rate = rate;
  loaded.speed_of_sound = speed;
  loaded.levels = lv;
  loaded.num_pairs = pairs;
  loaded.max_abs_delay = max_abs;
  loaded.delays.assign(dirs, std::vector<int>(pairs));
  for (auto& row : loaded.delays)
    for (auto& v : row) {
      int32_t q = 0;
      get(&q, 4);
      v = q;
    }
  if (!f) return false;
  t = std::move(loaded);
  return true;
}

}  // namespace earshot
