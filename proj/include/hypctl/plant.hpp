// First-order upwind simulator for the coupled 2x2 hyperbolic plant
//
//   u_t + lambda u_x = c1(x) u + c2(x) m
//   m_t -     mu m_x = c3(x) u + c4(x) m
//   u(0,t) = r m(0,t),   m(1,t) = U(t)
//
// u travels rightward (backward differences), m leftward (forward
// differences).  Sources are explicit at the old time level.  Each step ends
// with the boundary overwrite  m(1) <- U  then  u(0) <- r*m(0)  using the
// new m(0), so the reflection sees the same-time inlet value.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hypctl/numerics.hpp"

namespace hypctl {

struct PlantParams {
    double lambda = 1.0;  // speed of u, > 0
    double mu = 1.0;      // speed of m, > 0
    Field c1, c2, c3, c4; // true coefficients, sampled on the plant grid
    double r = 0.0;       // true boundary reflection u(0) = r m(0)
};

struct PlantState {
    Field u, m;
    double t = 0.0;
};

// One log row per completed step (plus the initial record).  The adaptive
// diagnostics are NaN for non-adaptive runs.
struct TrajectoryRecord {
    double t = 0.0;
    double norm_u = 0.0;
    double norm_m = 0.0;
    double U = 0.0;
    double v1 = std::nan("");
    double gamma_pert = std::nan("");
    double gamma_bound = std::nan("");
    double kernel_ms = std::nan("");
    std::vector<double> extra; // e.g. ARZ probe values; named in the log
};

struct TrajectoryLog {
    std::vector<TrajectoryRecord> rows;
    PlantState final_state;
    bool has_diagnostics = false;           // v1 / gamma / kernel_ms columns valid
    std::vector<std::string> extra_names;   // column names for TrajectoryRecord::extra

    // CSV with a schema comment line and a header row; diagnostics and extra
    // columns appear only when present.
    void write_csv(const std::string& path) const;
};

// One explicit upwind step.  dt must satisfy dt <= cfl_max_dt(lambda, mu, dx).
PlantState plant_step(const PlantState& state, const PlantParams& p, double U,
                      double dt, const Grid1D& g);

// Control source: maps (state, step index) to the boundary input U applied
// over that step.  Zero and fixed-signal controllers are lambdas; the
// adaptive loops live in adaptloop.hpp / arz.hpp.
using ControlSource = std::function<double(const PlantState&, int)>;

// Open-loop / scripted-control driver: steps from t=0 to T, logging norms and
// the applied control each step.  Throws on CFL violation or divergence.
TrajectoryLog simulate(const PlantParams& p, const Field& u0, const Field& m0,
                       const ControlSource& controller, double T, double dt,
                       const Grid1D& g);

// Shared guard: throws a divergence error naming the step if u or m contain
// non-finite entries.
void require_finite(const Field& u, const Field& m, int step);

} // namespace hypctl
