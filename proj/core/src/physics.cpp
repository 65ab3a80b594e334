#include "tafv/physics.hpp"

#include "tafv/common.hpp"

namespace tafv {

FluxModel parse_flux_model(const std::string& name, Vec2 a) {
  FluxModel m;
  m.a = a;
  if (name == "advection") {
    m.kind = FluxModel::Kind::advection;
  } else if (name == "burgers") {
    m.kind = FluxModel::Kind::burgers;
    const double len = norm(a);
    require(len > 0.0, "physics: burgers direction must be nonzero");
    m.a = {a.x / len, a.y / len};
  } else {
    require(false, "physics: unknown model '" + name + "'");
  }
  return m;
}

}  // namespace tafv
