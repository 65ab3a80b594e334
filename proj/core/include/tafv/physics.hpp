#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "tafv/geometry.hpp"

namespace tafv {

// Scalar conservation law d/dt w + div F(w) = 0 with selectable flux:
//   advection: F(w) = a * w          wave speed |a|
//   burgers:   F(w) = b * w^2 / 2    wave speed |w|   (b a unit direction)
struct FluxModel {
  enum class Kind { advection, burgers };
  Kind kind = Kind::advection;
  Vec2 a{1.0, 0.0};

  Vec2 flux(double w) const {
    if (kind == Kind::advection) return {a.x * w, a.y * w};
    const double q = 0.5 * w * w;
    return {a.x * q, a.y * q};
  }

  double wave_speed(double w) const {
    return kind == Kind::advection ? norm(a) : std::abs(w);
  }
};

FluxModel parse_flux_model(const std::string& name, Vec2 a);

inline double minmod(double x, double y) {
  if (x > 0.0 && y > 0.0) return std::min(x, y);
  if (x < 0.0 && y < 0.0) return std::max(x, y);
  return 0.0;
}

// Rusanov (local Lax-Friedrichs) numerical flux through a unit normal.
// Exactly antisymmetric under (wL, wR, n) -> (wR, wL, -n): every term is an
// exact floating-point negation, which the periodic face pairs and the
// cross-rank duplicated faces rely on.
inline double rusanov(const FluxModel& model, double wL, double wR, Vec2 n) {
  const double fl = model.flux(wL).x * n.x + model.flux(wL).y * n.y;
  const double fr = model.flux(wR).x * n.x + model.flux(wR).y * n.y;
  const double s = std::max(model.wave_speed(wL), model.wave_speed(wR));
  return 0.5 * (fl + fr) - 0.5 * s * (wR - wL);
}

}  // namespace tafv
