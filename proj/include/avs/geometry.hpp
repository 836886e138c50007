#pragma once
/**
 * @file geometry.hpp
 * @brief Planar agent pose, the three-part motion action, and their kinematics.
 *
 * Conventions: positions in centimeters, angles in degrees. Azimuth 0 faces +y
 * and positive angles turn right (clockwise seen from above), so a unit step
 * along azimuth phi moves by (sin phi, cos phi).
 */

#include <avs/error.hpp>

#include <cmath>
#include <numbers>
#include <string>

namespace avs {

inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

/// Wraps an angle in degrees into (-180, 180].
[[nodiscard]] inline double normalize_angle(double theta) {
  if (!std::isfinite(theta)) throw DomainError("normalize_angle: non-finite angle");
  double r = std::fmod(theta, 360.0);
  if (r <= -180.0) r += 360.0;
  else if (r > 180.0) r -= 360.0;
  return r;
}

[[nodiscard]] inline bool in_angle_range(double theta) noexcept { return theta > -180.0 && theta <= 180.0; }

/// Signed smallest difference a - b, in (-180, 180].
[[nodiscard]] inline double angle_difference(double a, double b) { return normalize_angle(a - b); }

struct AgentState {
  double x = 0.0;        ///< cm, east
  double y = 0.0;        ///< cm, north
  double azimuth = 0.0;  ///< degrees in (-180, 180]

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

/// Heading rotation, then forward translation along the new heading, then a
/// final view rotation.
struct Action {
  double heading = 0.0;   ///< degrees in (-180, 180]
  double distance = 0.0;  ///< cm, >= 0
  double view = 0.0;      ///< degrees in (-180, 180]

  friend bool operator==(const Action&, const Action&) = default;
};

[[nodiscard]] inline bool is_valid(const AgentState& s) noexcept {
  return std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.azimuth) && in_angle_range(s.azimuth);
}

[[nodiscard]] inline bool is_valid(const Action& a) noexcept {
  return std::isfinite(a.heading) && std::isfinite(a.distance) && std::isfinite(a.view) && a.distance >= 0.0 &&
         in_angle_range(a.heading) && in_angle_range(a.view);
}

inline void require_valid(const AgentState& s, const char* what) {
  if (!is_valid(s)) throw DomainError(std::string(what) + ": invalid agent state");
}

inline void require_valid(const Action& a, const char* what) {
  if (!is_valid(a)) throw DomainError(std::string(what) + ": invalid action");
}

/// Unit planar direction for an azimuth in degrees.
struct Direction {
  double dx;
  double dy;
};

[[nodiscard]] inline Direction direction_of(double azimuth_deg) noexcept {
  const double r = azimuth_deg * kDegToRad;
  return {std::sin(r), std::cos(r)};
}

/// Applies an action to a state.
///
/// The two rotations are summed before they touch the azimuth, so a pair of
/// opposite rotations leaves the azimuth bit-for-bit unchanged.
[[nodiscard]] inline AgentState transition(const AgentState& s, const Action& a) {
  require_valid(s, "transition");
  require_valid(a, "transition");
  const Direction dir = direction_of(s.azimuth + a.heading);
  return {s.x + a.distance * dir.dx, s.y + a.distance * dir.dy, normalize_angle(s.azimuth + (a.heading + a.view))};
}

/// Distance below which two positions are treated as coincident.
inline constexpr double kZeroDisplacement = 1e-9;

/// The unique action taking `from` to `to`. With zero displacement the heading
/// is 0 and the whole rotation goes into the view component.
[[nodiscard]] inline Action inverse_action(const AgentState& from, const AgentState& to) {
  require_valid(from, "inverse_action");
  require_valid(to, "inverse_action");
  const double dx = to.x - from.x;
  const double dy = to.y - from.y;
  const double distance = std::hypot(dx, dy);
  if (distance < kZeroDisplacement) return {0.0, 0.0, normalize_angle(to.azimuth - from.azimuth)};
  const double heading = normalize_angle(std::atan2(dx, dy) * kRadToDeg - from.azimuth);
  const double view = normalize_angle(to.azimuth - from.azimuth - heading);
  return {heading, distance, view};
}

/// Moves `d` cm opposite to the rotated heading, then applies the view
/// rotation. Used to back away from a target pose.
[[nodiscard]] inline AgentState backward_transition(const AgentState& s, double heading, double d, double view) {
  const Direction dir = direction_of(s.azimuth + heading);
  return {s.x - d * dir.dx, s.y - d * dir.dy, normalize_angle(s.azimuth + (heading + view))};
}

[[nodiscard]] inline double position_error(const AgentState& a, const AgentState& b) noexcept {
  return std::hypot(a.x - b.x, a.y - b.y);
}

[[nodiscard]] inline double azimuth_error(const AgentState& a, const AgentState& b) {
  return std::abs(angle_difference(a.azimuth, b.azimuth));
}

}  // namespace avs
