// geometry.hpp: microphone array description and pair indexing.
#pragma once

#include <cstdint>
#include <vector>

#include "earshot/common.hpp"

namespace earshot {

/// Microphone positions in metres, array-local coordinates.
struct ArrayGeometry {
  std::vector<Vec3> mics;

  int num_mics() const { return static_cast<int>(mics.size()); }
  int num_pairs() const { return num_mics() * (num_mics() - 1) / 2; }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& m : mics) c += m;
    return c / static_cast<double>(mics.size());
  }

  /// Flat index of the unordered pair (i, j) with i < j, ordered
  /// (0,1), (0,2), ..., (0,N-1), (1,2), ...
  int pair_index(int i, int j) const {
    const int n = num_mics();
    return i * n - i * (i + 1) / 2 + (j - i - 1);
  }

  /// Hash of the quantised geometry (0.1 mm resolution), used to key caches.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&h](int64_t v) {
      for (int b = 0; b < 8; ++b) {
        h ^= static_cast<uint64_t>(v >> (8 * b)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    mix(num_mics());
    for (const auto& m : mics)
      for (int a = 0; a < 3; ++a) mix(static_cast<int64_t>(std::llround(m[a] * 1e4)));
    return h;
  }
};

/// Default capture rig: eight microphones on the vertices of a cube,
/// 16 cm on a side, centred on the origin.
inline ArrayGeometry cube_array(double half_side = 0.08) {
  ArrayGeometry g;
  for (int i = 0; i < 8; ++i) {
    const double x = (i & 1) ? half_side : -half_side;
    const double y = (i & 2) ? half_side : -half_side;
    const double z = (i & 4) ? half_side : -half_side;
    g.mics.push_back(Vec3(x, y, z));
  }
  return g;
}

}  // namespace earshot
