// Parameter-estimate state shared by the kernel solver and the adaptive loop:
// the four coefficient estimate fields, the reflection estimate, the
// projection bounds, and the adaptation gains.
#pragma once

#include "hypctl/numerics.hpp"

namespace hypctl {

// Known a-priori bounds used by the projection operator.  The estimates are
// kept inside |c_i| <= ci_bar, |r| <= r_bar at all times.
struct AdaptBounds {
    double c1_bar = 1.0;
    double c2_bar = 1.0;
    double c3_bar = 1.0;
    double c4_bar = 1.0;
    double r_bar = 1.0;
};

// Adaptation gains: gamma weights the spatial exponential in the update-law
// integrands, g1..g4 scale the coefficient laws, g5 the reflection law, and
// rho is the identifier injection gain.
struct AdaptGains {
    double gamma = 1.0;
    double g1 = 1.0, g2 = 1.0, g3 = 1.0, g4 = 1.0, g5 = 1.0;
    double rho = 1.0;
};

// Estimate fields live on their own sampling grid (typically the plant grid);
// the kernel solver reads them by linear interpolation.
struct EstimateState {
    Grid1D grid;
    Field c1h, c2h, c3h, c4h;
    double rh = 0.0;
    AdaptBounds bounds;
    AdaptGains gains;

    static EstimateState zero(const Grid1D& g, const AdaptBounds& b,
                              const AdaptGains& gains) {
        EstimateState e;
        e.grid = g;
        const auto n = static_cast<std::size_t>(g.n_points);
        e.c1h = Field(n);
        e.c2h = Field(n);
        e.c3h = Field(n);
        e.c4h = Field(n);
        e.rh = 0.0;
        e.bounds = b;
        e.gains = gains;
        return e;
    }

    void check_shapes() const {
        require_on_grid(c1h, grid, "EstimateState.c1h");
        require_on_grid(c2h, grid, "EstimateState.c2h");
        require_on_grid(c3h, grid, "EstimateState.c3h");
        require_on_grid(c4h, grid, "EstimateState.c4h");
    }
};

} // namespace hypctl
