// common.hpp: shared aliases, angle conversions and small numeric helpers.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace earshot {

using Vec3 = Eigen::Vector3d;
using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfSound = 343.0;  // m/s, dry air ~20 C

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Unit vector from azimuth/elevation in degrees. Azimuth is measured in the
/// x-y plane from +x toward +y, elevation from the plane toward +z.
inline Vec3 direction_from_angles(double azimuth_deg, double elevation_deg) {
  const double az = deg2rad(azimuth_deg);
  const double el = deg2rad(elevation_deg);
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

inline double azimuth_deg_of(const Vec3& u) { return rad2deg(std::atan2(u.y(), u.x())); }

inline double elevation_deg_of(const Vec3& u) {
  const double z = std::max(-1.0, std::min(1.0, u.z() / u.norm()));
  return rad2deg(std::asin(z));
}

/// Great-circle angle between two directions, degrees.
inline double angle_between_deg(const Vec3& a, const Vec3& b) {
  const double c = a.normalized().dot(b.normalized());
  return rad2deg(std::acos(std::max(-1.0, std::min(1.0, c))));
}

/// Azimuth difference folded into (-180, 180], degrees.
inline double wrap_angle_deg(double d) {
  while (d > 180.0) d -= 360.0;
  while (d <= -180.0) d += 360.0;
  return d;
}

inline double db_to_power(double db) { return std::pow(10.0, db / 10.0); }
inline double power_to_db(double p) { return 10.0 * std::log10(p); }
inline double db_to_amplitude(double db) { return std::pow(10.0, db / 20.0); }

class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace earshot
