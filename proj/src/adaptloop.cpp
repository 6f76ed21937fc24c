#include "hypctl/adaptloop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace hypctl {

namespace {

// trapezoid of the pointwise product a*b without a temporary field
double trap_prod(const Field& a, const Field& b, const Grid1D& g) {
    const std::size_t n = a.size();
    double s = 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]);
    for (std::size_t j = 1; j + 1 < n; ++j)
        s += a[j] * b[j];
    return s * g.dx;
}

double clamp_sym(double v, double bar) { return std::clamp(v, -bar, bar); }

double sup_abs(const Field& f) {
    double s = 0.0;
    for (double x : f.v)
        s = std::max(s, std::abs(x));
    return s;
}

} // namespace

double project(double tau, double omega_hat, double omega_bar) {
    if (std::abs(omega_hat) >= omega_bar && omega_hat * tau >= 0.0)
        return 0.0;
    return tau;
}

double varpi_norm_sq(const Field& u, const Field& m, const Grid1D& g) {
    require_on_grid(u, g, "varpi_norm_sq u");
    require_on_grid(m, g, "varpi_norm_sq m");
    return trap_prod(u, u, g) + trap_prod(m, m, g);
}

IdentifierState identifier_step(const IdentifierState& id,
                                const PlantState& plant_old,
                                const PlantState& plant_new,
                                const EstimateState& est, double lambda,
                                double mu, double U, double dt,
                                const Grid1D& g) {
    require_on_grid(id.uh, g, "identifier_step uh");
    require_on_grid(id.mh, g, "identifier_step mh");
    require_on_grid(plant_old.u, g, "identifier_step plant u");
    est.check_shapes();
    if (dt > cfl_max_dt(lambda, mu, g.dx) * (1.0 + 1e-12))
        throw std::runtime_error("identifier_step: dt=" + std::to_string(dt) +
                                 " violates CFL limit " +
                                 std::to_string(cfl_max_dt(lambda, mu, g.dx)));

    const int n = g.n_points;
    const double au = lambda * dt / g.dx;
    const double am = mu * dt / g.dx;
    const Field& u = plant_old.u;
    const Field& m = plant_old.m;
    const Field& uh = id.uh;
    const Field& mh = id.mh;
    const Field& un = plant_new.u;
    const Field& mn = plant_new.m;

    // Injection weight from the old plant state; the injection term
    // rho e ||varpi||^2 relaxes the identifier toward the new plant state and
    // is integrated implicitly:  e_new = e_candidate / (1 + dt rho ||.||^2).
    const double wn = varpi_norm_sq(u, m, g);
    const double fac = 1.0 / (1.0 + dt * est.gains.rho * wn);

    IdentifierState next = id;
    for (int j = 1; j < n; ++j) {
        const double cand = uh[j] - au * (uh[j] - uh[j - 1]) +
                            dt * (est.c1h[j] * u[j] + est.c2h[j] * m[j]);
        next.uh[j] = un[j] - fac * (un[j] - cand);
    }
    for (int j = 0; j < n - 1; ++j) {
        const double cand = mh[j] + am * (mh[j + 1] - mh[j]) +
                            dt * (est.c3h[j] * u[j] + est.c4h[j] * m[j]);
        next.mh[j] = mn[j] - fac * (mn[j] - cand);
    }
    next.mh[n - 1] = U;
    // corrected left boundary: r-hat multiplies m(0), which reproduces the
    // error identity e1(0) = (r - rh) m(0) / (1 + m(0)^2) exactly
    const double m0 = mn[0];
    next.uh[0] = (est.rh * m0 + un[0] * m0 * m0) / (1.0 + m0 * m0);
    return next;
}

EstimateState update_estimates(const EstimateState& est,
                               const PlantState& plant,
                               const IdentifierState& id, double dt,
                               const Grid1D& g) {
    est.check_shapes();
    require_on_grid(plant.u, g, "update_estimates plant u");
    require_on_grid(id.uh, g, "update_estimates uh");

    const int n = g.n_points;
    const AdaptGains& ga = est.gains;
    const AdaptBounds& b = est.bounds;
    EstimateState next = est;
    for (int j = 0; j < n; ++j) {
        const double x = g.x(j);
        const double wl = std::exp(-ga.gamma * x);
        const double wr = std::exp(ga.gamma * x);
        const double e1 = plant.u[j] - id.uh[j];
        const double e2 = plant.m[j] - id.mh[j];
        next.c1h[j] = clamp_sym(
            est.c1h[j] +
                dt * project(ga.g1 * wl * e1 * plant.u[j], est.c1h[j], b.c1_bar),
            b.c1_bar);
        next.c2h[j] = clamp_sym(
            est.c2h[j] +
                dt * project(ga.g2 * wl * e1 * plant.m[j], est.c2h[j], b.c2_bar),
            b.c2_bar);
        next.c3h[j] = clamp_sym(
            est.c3h[j] +
                dt * project(ga.g3 * wr * e2 * plant.u[j], est.c3h[j], b.c3_bar),
            b.c3_bar);
        next.c4h[j] = clamp_sym(
            est.c4h[j] +
                dt * project(ga.g4 * wr * e2 * plant.m[j], est.c4h[j], b.c4_bar),
            b.c4_bar);
    }
    const double e10 = plant.u[0] - id.uh[0];
    next.rh = clamp_sym(
        est.rh + dt * project(ga.g5 * e10 * plant.m[0], est.rh, b.r_bar),
        b.r_bar);
    return next;
}

double lyapunov_v1(const PlantState& plant, const IdentifierState& id,
                   const EstimateState& est, const PlantParams& truth,
                   const Grid1D& g) {
    const int n = g.n_points;
    const AdaptGains& ga = est.gains;

    // weighted identifier-error energies, trapezoid in x
    double se1 = 0.0, se2 = 0.0;
    for (int j = 0; j < n; ++j) {
        const double x = g.x(j);
        const double e1 = plant.u[j] - id.uh[j];
        const double e2 = plant.m[j] - id.mh[j];
        const double w = (j == 0 || j == n - 1) ? 0.5 : 1.0;
        se1 += w * std::exp(-ga.gamma * x) * e1 * e1;
        se2 += w * std::exp(ga.gamma * x) * e2 * e2;
    }
    double v = (se1 + se2) * g.dx;

    const Field* truths[4] = {&truth.c1, &truth.c2, &truth.c3, &truth.c4};
    const Field* hats[4] = {&est.c1h, &est.c2h, &est.c3h, &est.c4h};
    const double gains[4] = {ga.g1, ga.g2, ga.g3, ga.g4};
    for (int i = 0; i < 4; ++i) {
        if (!(gains[i] > 0.0))
            continue;
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = (*truths[i])[j] - (*hats[i])[j];
            const double w = (j == 0 || j == n - 1) ? 0.5 : 1.0;
            s += w * d * d;
        }
        v += s * g.dx / gains[i];
    }
    if (ga.g5 > 0.0) {
        const double rt = truth.r - est.rh;
        v += truth.lambda / (2.0 * ga.g5) * rt * rt;
    }
    return v;
}

Field kernel_row_u(const KernelPair& k) {
    const int n = k.grid.n_points;
    Field row(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
        row[j] = k.ku[k.grid.index(n - 1, j)];
    return row;
}

Field kernel_row_m(const KernelPair& k) {
    const int n = k.grid.n_points;
    Field row(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
        row[j] = k.km[k.grid.index(n - 1, j)];
    return row;
}

namespace {

// [1/4, 1/2, 1/4] smoothing: the conjugate filter for the kernel solver's
// parity-staggered coefficient sampling.  It annihilates the parity-
// alternating component of the boundary row exactly and is O(h^2) on the
// smooth part, so the control gains keep the solver's O(h) accuracy without
// the alternating sampling artifact.
Field parity_filter(const Field& r) {
    const std::size_t n = r.size();
    Field out = r;
    for (std::size_t j = 1; j + 1 < n; ++j)
        out[j] = 0.25 * r[j - 1] + 0.5 * r[j] + 0.25 * r[j + 1];
    out[0] = 0.75 * r[0] + 0.25 * r[1];
    out[n - 1] = 0.75 * r[n - 1] + 0.25 * r[n - 2];
    return out;
}

} // namespace

std::pair<Field, Field> control_rows(const KernelPair& k, const Grid1D& g) {
    const Grid1D kg(k.grid.n_points, 1.0);
    const Field ru = parity_filter(kernel_row_u(k));
    const Field rm = parity_filter(kernel_row_m(k));
    Field ou(static_cast<std::size_t>(g.n_points));
    Field om(static_cast<std::size_t>(g.n_points));
    for (int j = 0; j < g.n_points; ++j) {
        ou[j] = lerp_field(ru, kg, g.x(j));
        om[j] = lerp_field(rm, kg, g.x(j));
    }
    return {std::move(ou), std::move(om)};
}

GammaPerturbation gamma_perturbation(const KernelPair& exact,
                                     const KernelPair& approx,
                                     const IdentifierState& id,
                                     const Grid1D& g) {
    if (!exact.grid.same_as(approx.grid))
        throw std::runtime_error(
            "gamma_perturbation: kernel pairs live on different grids");
    const int nk = exact.grid.n_points;
    const Grid1D kg(nk, 1.0);

    // row deviations Kt = approx - exact at x = 1, and the identifier states
    // sampled onto the same row nodes so the bound is exact by construction
    Field du(static_cast<std::size_t>(nk)), dm(static_cast<std::size_t>(nk));
    Field uhk(static_cast<std::size_t>(nk)), mhk(static_cast<std::size_t>(nk));
    for (int j = 0; j < nk; ++j) {
        const int at = exact.grid.index(nk - 1, j);
        du[j] = approx.ku[at] - exact.ku[at];
        dm[j] = approx.km[at] - exact.km[at];
        uhk[j] = lerp_field(id.uh, g, kg.x(j));
        mhk[j] = lerp_field(id.mh, g, kg.x(j));
    }

    GammaPerturbation out;
    out.gamma = -trap_prod(du, uhk, kg) - trap_prod(dm, mhk, kg);
    const double eps = std::max(sup_abs(du), sup_abs(dm));
    Field auh = uhk, amh = mhk;
    for (auto& x : auh.v) x = std::abs(x);
    for (auto& x : amh.v) x = std::abs(x);
    Field ones(static_cast<std::size_t>(nk), 1.0);
    out.bound = eps * (trap_prod(auh, ones, kg) + trap_prod(amh, ones, kg));
    return out;
}

AdaptiveRunResult run_adaptive(const PlantParams& truth, const Field& u0,
                               const Field& m0, const EstimateState& est0,
                               const IdentifierState& id0,
                               const AdaptiveRunConfig& cfg, const Grid1D& g) {
    if (!(cfg.T > 0.0))
        throw std::invalid_argument("run_adaptive: horizon must be positive");
    if (cfg.recompute_every < 1)
        throw std::invalid_argument("run_adaptive: recompute_every must be >= 1");
    est0.check_shapes();
    const AdaptBounds& b = est0.bounds;
    if (sup_abs(est0.c1h) > b.c1_bar + 1e-12 ||
        sup_abs(est0.c2h) > b.c2_bar + 1e-12 ||
        sup_abs(est0.c3h) > b.c3_bar + 1e-12 ||
        sup_abs(est0.c4h) > b.c4_bar + 1e-12 ||
        std::abs(est0.rh) > b.r_bar + 1e-12)
        throw std::invalid_argument(
            "run_adaptive: initial estimates violate the projection bounds");

    const int nsteps = static_cast<int>(std::lround(cfg.T / cfg.dt));
    const double dt = cfg.dt;
    const bool neural = static_cast<bool>(cfg.approximate_kernels);
    const bool gamma_diag = neural && cfg.track_gamma;

    PlantState plant;
    plant.u = u0;
    plant.m = m0;
    plant.t = 0.0;
    IdentifierState id = id0;
    EstimateState est = est0;

    KernelSolver solver(cfg.kernel_grid, truth.lambda, truth.mu);
    KernelPair exact = (neural && !gamma_diag)
                           ? KernelPair{}
                           : solver.solve(est, cfg.kernel_opts);
    KernelPair ctrl = neural ? cfg.approximate_kernels(est) : exact;
    auto rows = control_rows(ctrl, g);

    AdaptiveRunResult res;
    res.log.has_diagnostics = true;
    res.log.extra_names = {"rhat", "bound_margin"};
    res.log.rows.reserve(static_cast<std::size_t>(nsteps) / cfg.log_every + 2);

    double v_prev = lyapunov_v1(plant, id, est, truth, g);

    auto bound_margin = [&]() {
        double mrg = sup_abs(est.c1h) - b.c1_bar;
        mrg = std::max(mrg, sup_abs(est.c2h) - b.c2_bar);
        mrg = std::max(mrg, sup_abs(est.c3h) - b.c3_bar);
        mrg = std::max(mrg, sup_abs(est.c4h) - b.c4_bar);
        mrg = std::max(mrg, std::abs(est.rh) - b.r_bar);
        return mrg;
    };

    TrajectoryRecord rec;
    rec.t = 0.0;
    rec.norm_u = l2_norm(plant.u, g);
    rec.norm_m = l2_norm(plant.m, g);
    rec.U = 0.0;
    rec.v1 = v_prev;
    rec.extra = {est.rh, bound_margin()};
    res.log.rows.push_back(rec);

    for (int k = 0; k < nsteps; ++k) {
        const double U =
            trap_prod(rows.first, id.uh, g) + trap_prod(rows.second, id.mh, g);

        PlantState plant_new = plant_step(plant, truth, U, dt, g);
        IdentifierState id_new = identifier_step(id, plant, plant_new, est,
                                                 truth.lambda, truth.mu, U, dt, g);
        EstimateState est_new = update_estimates(est, plant, id, dt, g);
        // the identifier's left boundary sees the freshly updated reflection
        // estimate (the update law used the pre-step states)
        {
            const double m0 = plant_new.m[0];
            id_new.uh[0] = (est_new.rh * m0 + plant_new.u[0] * m0 * m0) /
                           (1.0 + m0 * m0);
        }
        plant = std::move(plant_new);
        id = std::move(id_new);
        est = std::move(est_new);
        require_finite(plant.u, plant.m, k);
        require_finite(id.uh, id.mh, k);

        double kernel_ms = std::nan("");
        if ((k + 1) % cfg.recompute_every == 0) {
            const auto t0 = std::chrono::steady_clock::now();
            if (neural)
                ctrl = cfg.approximate_kernels(est);
            else
                ctrl = solver.solve_warm(est, ctrl, cfg.kernel_opts);
            const auto t1 = std::chrono::steady_clock::now();
            kernel_ms =
                std::chrono::duration<double, std::milli>(t1 - t0).count();
            if (gamma_diag)
                exact = solver.solve_warm(est, exact, cfg.kernel_opts);
            rows = control_rows(ctrl, g);
            if (cfg.on_kernel_update)
                cfg.on_kernel_update(k + 1, est, ctrl);
        }

        const double v = lyapunov_v1(plant, id, est, truth, g);
        if (v > v_prev + 1e-3 * (1.0 + v_prev))
            ++res.v1_violations;
        v_prev = v;
        const double mrg = bound_margin();
        if (mrg > 1e-12)
            res.bounds_ok = false;
        if (cfg.on_step)
            cfg.on_step(k + 1, plant, id);

        if ((k + 1) % cfg.log_every == 0 || k == nsteps - 1) {
            rec.t = plant.t;
            rec.norm_u = l2_norm(plant.u, g);
            rec.norm_m = l2_norm(plant.m, g);
            rec.U = U;
            rec.v1 = v;
            rec.kernel_ms = kernel_ms;
            if (gamma_diag) {
                const GammaPerturbation gp =
                    gamma_perturbation(exact, ctrl, id, g);
                rec.gamma_pert = gp.gamma;
                rec.gamma_bound = gp.bound;
            }
            rec.extra = {est.rh, mrg};
            res.log.rows.push_back(rec);
        }
    }

    res.log.final_state = plant;
    res.final_est = std::move(est);
    res.final_id = std::move(id);
    res.final_kernels = std::move(ctrl);
    return res;
}

} // namespace hypctl
