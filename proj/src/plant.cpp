#include "hypctl/plant.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace hypctl {

void require_finite(const Field& u, const Field& m, int step) {
    for (double x : u.v)
        if (!std::isfinite(x))
            throw std::runtime_error("plant diverged (non-finite u) at step " +
                                     std::to_string(step));
    for (double x : m.v)
        if (!std::isfinite(x))
            throw std::runtime_error("plant diverged (non-finite m) at step " +
                                     std::to_string(step));
}

PlantState plant_step(const PlantState& state, const PlantParams& p, double U,
                      double dt, const Grid1D& g) {
    require_on_grid(state.u, g, "plant_step u");
    require_on_grid(state.m, g, "plant_step m");
    require_on_grid(p.c1, g, "plant_step c1");
    require_on_grid(p.c2, g, "plant_step c2");
    require_on_grid(p.c3, g, "plant_step c3");
    require_on_grid(p.c4, g, "plant_step c4");
    if (dt > cfl_max_dt(p.lambda, p.mu, g.dx) * (1.0 + 1e-12))
        throw std::runtime_error("plant_step: dt=" + std::to_string(dt) +
                                 " violates CFL limit " +
                                 std::to_string(cfl_max_dt(p.lambda, p.mu, g.dx)));

    const int n = g.n_points;
    const double au = p.lambda * dt / g.dx;
    const double am = p.mu * dt / g.dx;
    const Field& u = state.u;
    const Field& m = state.m;
    PlantState next;
    next.u = u;
    next.m = m;
    // interior sweeps: u upwinds from the left, m from the right
    for (int j = 1; j < n; ++j)
        next.u[j] = u[j] - au * (u[j] - u[j - 1]) +
                    dt * (p.c1[j] * u[j] + p.c2[j] * m[j]);
    for (int j = 0; j < n - 1; ++j)
        next.m[j] = m[j] + am * (m[j + 1] - m[j]) +
                    dt * (p.c3[j] * u[j] + p.c4[j] * m[j]);
    // boundary overwrite: control inlet first, then the reflection reads the
    // new m(0)
    next.m[n - 1] = U;
    next.u[0] = p.r * next.m[0];
    next.t = state.t + dt;
    return next;
}

TrajectoryLog simulate(const PlantParams& p, const Field& u0, const Field& m0,
                       const ControlSource& controller, double T, double dt,
                       const Grid1D& g) {
    if (!(T >= 0.0))
        throw std::invalid_argument("simulate: horizon must be nonnegative");
    const int nsteps = static_cast<int>(std::lround(T / dt));
    PlantState s;
    s.u = u0;
    s.m = m0;
    s.t = 0.0;

    TrajectoryLog log;
    log.rows.reserve(static_cast<std::size_t>(nsteps) + 1);
    TrajectoryRecord rec;
    rec.t = 0.0;
    rec.norm_u = l2_norm(s.u, g);
    rec.norm_m = l2_norm(s.m, g);
    rec.U = 0.0;
    log.rows.push_back(rec);

    for (int k = 0; k < nsteps; ++k) {
        const double U = controller ? controller(s, k) : 0.0;
        s = plant_step(s, p, U, dt, g);
        require_finite(s.u, s.m, k);
        rec.t = s.t;
        rec.norm_u = l2_norm(s.u, g);
        rec.norm_m = l2_norm(s.m, g);
        rec.U = U;
        log.rows.push_back(rec);
    }
    log.final_state = std::move(s);
    return log;
}

void TrajectoryLog::write_csv(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f)
        throw std::runtime_error("write_csv: cannot open " + path);
    std::fprintf(f, "# schema: trajectory/1\n");
    std::fprintf(f, "t,norm_u,norm_m,U");
    if (has_diagnostics)
        std::fprintf(f, ",v1,gamma_pert,gamma_bound,kernel_ms");
    for (const auto& name : extra_names)
        std::fprintf(f, ",%s", name.c_str());
    std::fprintf(f, "\n");
    for (const auto& r : rows) {
        std::fprintf(f, "%.17g,%.17g,%.17g,%.17g", r.t, r.norm_u, r.norm_m, r.U);
        if (has_diagnostics)
            std::fprintf(f, ",%.17g,%.17g,%.17g,%.17g", r.v1, r.gamma_pert,
                         r.gamma_bound, r.kernel_ms);
        for (double x : r.extra)
            std::fprintf(f, ",%.17g", x);
        std::fprintf(f, "\n");
    }
    if (std::fclose(f) != 0)
        throw std::runtime_error("write_csv: failed to close " + path);
}

} // namespace hypctl
