#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "tafv/physics.hpp"

using namespace tafv;

TEST_CASE("minmod") {
  CHECK(minmod(1.0, 2.0) == 1.0);
  CHECK(minmod(-1.0, 2.0) == 0.0);
  CHECK(minmod(-3.0, -2.0) == -2.0);
  CHECK(minmod(0.0, 5.0) == 0.0);
}

TEST_CASE("flux model parsing") {
  const FluxModel adv = parse_flux_model("advection", {2.0, 0.0});
  CHECK(adv.kind == FluxModel::Kind::advection);
  CHECK(adv.a.x == 2.0);

  const FluxModel burgers = parse_flux_model("burgers", {3.0, 4.0});
  CHECK(burgers.kind == FluxModel::Kind::burgers);
  CHECK(burgers.a.x == doctest::Approx(0.6));  // direction normalized
  CHECK(burgers.a.y == doctest::Approx(0.8));

  CHECK_THROWS_AS(parse_flux_model("burgers", {0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(parse_flux_model("euler", {1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("rusanov flux hand values") {
  const Vec2 nx{1.0, 0.0};

  const FluxModel burgers = parse_flux_model("burgers", {1.0, 0.0});
  CHECK(rusanov(burgers, 1.0, 0.0, nx) == doctest::Approx(0.75));

  FluxModel adv;
  adv.a = {1.0, 0.0};
  CHECK(rusanov(adv, 2.0, 0.0, nx) == doctest::Approx(2.0));
}

TEST_CASE("rusanov consistency f(u,u) = f(u)") {
  const Vec2 n{0.6, 0.8};
  for (double u : {-2.0, -0.5, 0.0, 1.0, 3.0}) {
    FluxModel adv;
    adv.a = {1.5, -0.25};
    CHECK(rusanov(adv, u, u, n) == doctest::Approx(dot(adv.flux(u), n)));

    const FluxModel burgers = parse_flux_model("burgers", {1.0, 2.0});
    CHECK(rusanov(burgers, u, u, n) == doctest::Approx(dot(burgers.flux(u), n)));
  }
}

TEST_CASE("rusanov is exactly antisymmetric under side swap") {
  // The bit-exact identity the duplicated face records (periodic pairs,
  // cross-rank copies) rely on.
  const FluxModel burgers = parse_flux_model("burgers", {0.6, 0.8});
  FluxModel adv;
  adv.a = {1.5, -0.25};
  const std::vector<double> samples{-2.25, -1.0, -0.1, 0.0, 0.3, 1.7, 5.5};
  const Vec2 n{0.28, -0.96};
  const Vec2 minus_n{-0.28, 0.96};
  for (double wl : samples) {
    for (double wr : samples) {
      CHECK(rusanov(adv, wr, wl, minus_n) == -rusanov(adv, wl, wr, n));
      CHECK(rusanov(burgers, wr, wl, minus_n) == -rusanov(burgers, wl, wr, n));
    }
  }
}
