#include "hypctl/arz.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "hypctl/adaptloop.hpp"
#include "hypctl/rng.hpp"

namespace hypctl {

namespace {

double trap_prod(const Field& a, const Field& b, const Grid1D& g) {
    double acc = 0.5 * (a[0] * b[0] + a[g.n_points - 1] * b[g.n_points - 1]);
    for (int j = 1; j < g.n_points - 1; ++j)
        acc += a[j] * b[j];
    return acc * g.dx;
}

std::string probe_name(const char* what, double pos) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_at_%g", what, pos);
    return buf;
}

} // namespace

ArzDerived derive_equilibrium(const ArzParams& p) {
    if (!(p.rho_star > 0.0 && p.rho_star < p.rho_m))
        throw std::invalid_argument(
            "derive_equilibrium: need 0 < rho_star < rho_m, got rho_star = " +
            std::to_string(p.rho_star) + ", rho_m = " + std::to_string(p.rho_m));
    if (!(p.tau > 0.0))
        throw std::invalid_argument("derive_equilibrium: tau must be positive");
    if (!(p.L > 0.0) || p.n_points < 2)
        throw std::invalid_argument("derive_equilibrium: bad road geometry");

    ArzDerived d;
    const double c0 = p.pressure_coeff();
    d.p_star = c0 * std::pow(p.rho_star, p.gamma_exp);
    d.v_star = p.vf * (1.0 - std::pow(p.rho_star / p.rho_m, p.gamma_exp));
    if (!(d.v_star > 0.0))
        throw std::invalid_argument("derive_equilibrium: v* <= 0 at rho_star");
    d.q_star = p.rho_star * d.v_star;
    d.lambda = d.v_star;
    d.mu = p.gamma_exp * d.p_star - d.v_star;
    if (!(d.mu > 0.0))
        throw std::invalid_argument(
            "derive_equilibrium: free-flow regime unsupported (gamma p* - v* = " +
            std::to_string(d.mu) + " <= 0; need the congested regime)");
    d.r0 = (d.v_star - p.gamma_exp * d.p_star) / d.v_star;

    const Grid1D g = p.road_grid();
    d.c_field = Field(static_cast<std::size_t>(g.n_points));
    for (int j = 0; j < g.n_points; ++j)
        d.c_field[j] = -(1.0 / p.tau) * std::exp(-g.x(j) / (p.tau * d.v_star));
    return d;
}

std::pair<Field, Field> riemann_from_physical(const Field& rho_pert,
                                              const Field& v_pert,
                                              const ArzDerived& d,
                                              const ArzParams& p,
                                              const Grid1D& g) {
    require_on_grid(rho_pert, g, "riemann_from_physical.rho_pert");
    require_on_grid(v_pert, g, "riemann_from_physical.v_pert");
    const double gp = p.gamma_exp * d.p_star / p.rho_star;
    Field u1(static_cast<std::size_t>(g.n_points));
    Field m1(static_cast<std::size_t>(g.n_points));
    for (int j = 0; j < g.n_points; ++j) {
        m1[j] = v_pert[j];
        u1[j] = std::exp(g.x(j) / (p.tau * d.v_star)) *
                (v_pert[j] + gp * rho_pert[j]);
    }
    return {std::move(u1), std::move(m1)};
}

std::pair<Field, Field> physical_from_riemann(const Field& u1, const Field& m1,
                                              const ArzDerived& d,
                                              const ArzParams& p,
                                              const Grid1D& g) {
    require_on_grid(u1, g, "physical_from_riemann.u1");
    require_on_grid(m1, g, "physical_from_riemann.m1");
    const double gp = p.gamma_exp * d.p_star / p.rho_star;
    Field rho(static_cast<std::size_t>(g.n_points));
    Field v(static_cast<std::size_t>(g.n_points));
    for (int j = 0; j < g.n_points; ++j) {
        const double w = std::exp(-g.x(j) / (p.tau * d.v_star)) * u1[j] - m1[j];
        rho[j] = p.rho_star + w / gp;
        v[j] = d.v_star + m1[j];
    }
    return {std::move(rho), std::move(v)};
}

std::pair<Field, Field> arz_initial_perturbation(const ArzParams& p,
                                                 const Grid1D& g) {
    const ArzDerived d = derive_equilibrium(p);
    Field rho_pert(static_cast<std::size_t>(g.n_points));
    Field v_pert(static_cast<std::size_t>(g.n_points));
    for (int j = 0; j < g.n_points; ++j) {
        const double s = std::sin(3.0 * M_PI * g.x(j) / p.L);
        rho_pert[j] = 0.1 * s * p.rho_star;
        v_pert[j] = -0.01 * s * d.v_star;
    }
    return {std::move(rho_pert), std::move(v_pert)};
}

ArzRunResult run_arz(const ArzParams& p, const ArzRunConfig& cfg) {
    const ArzDerived d = derive_equilibrium(p);
    const Grid1D g(p.n_points, 1.0);       // nondimensional road
    const Grid1D g_road = p.road_grid();
    const double lam = d.lambda / p.L;
    const double mu = d.mu / p.L;
    if (!(cfg.T > 0.0) || !(cfg.dt > 0.0))
        throw std::invalid_argument("run_arz: bad horizon or step");
    if (cfg.dt > cfl_max_dt(lam, mu, g.dx))
        throw std::invalid_argument(
            "run_arz: dt = " + std::to_string(cfg.dt) + " violates CFL limit " +
            std::to_string(cfl_max_dt(lam, mu, g.dx)));
    if (cfg.controller == ArzController::neural_adaptive && !cfg.model)
        throw std::invalid_argument("run_arz: neural_adaptive requires a model");
    if (cfg.recompute_every < 1)
        throw std::invalid_argument("run_arz: recompute_every must be >= 1");

    PlantParams truth;
    truth.lambda = lam;
    truth.mu = mu;
    truth.c1 = Field(static_cast<std::size_t>(g.n_points));
    truth.c2 = Field(static_cast<std::size_t>(g.n_points));
    truth.c3 = d.c_field;  // same samples; node j sits at x = L x'_j
    truth.c4 = Field(static_cast<std::size_t>(g.n_points));
    truth.r = d.r0;

    const auto [rho0, v0] = arz_initial_perturbation(p, g_road);
    auto [u1, m1] = riemann_from_physical(rho0, v0, d, p, g_road);
    PlantState state;
    state.u = std::move(u1);
    state.m = std::move(m1);
    state.t = 0.0;

    const int nsteps = static_cast<int>(std::lround(cfg.T / cfg.dt));
    const bool adaptive = cfg.controller != ArzController::open_loop;
    const bool neural = cfg.controller == ArzController::neural_adaptive;

    // probe bookkeeping: physical position -> nearest node
    std::vector<int> probe_idx;
    for (double pos : cfg.probes) {
        const int idx = static_cast<int>(std::lround(pos / p.L * (p.n_points - 1)));
        probe_idx.push_back(std::clamp(idx, 0, p.n_points - 1));
    }
    const double gp = p.gamma_exp * d.p_star / p.rho_star;
    auto probe_values = [&](const PlantState& s) {
        std::vector<double> vals;
        vals.reserve(2 * probe_idx.size());
        for (int idx : probe_idx) {
            const double w =
                std::exp(-g_road.x(idx) / (p.tau * d.v_star)) * s.u[idx] - s.m[idx];
            vals.push_back(p.rho_star + w / gp);
            vals.push_back(d.v_star + s.m[idx]);
        }
        return vals;
    };

    ArzRunResult res;
    for (double pos : cfg.probes) {
        res.log.extra_names.push_back(probe_name("rho", pos));
        res.log.extra_names.push_back(probe_name("v", pos));
    }
    auto log_row = [&](double U) {
        TrajectoryRecord rec;
        rec.t = state.t;
        rec.norm_u = l2_norm(state.u, g);
        rec.norm_m = l2_norm(state.m, g);
        rec.U = U;
        rec.extra = probe_values(state);
        res.log.rows.push_back(rec);
    };
    log_row(0.0);

    if (!adaptive) {
        for (int k = 0; k < nsteps; ++k) {
            // unmetered outflow: zero-gradient boundary, m1(1) copies its
            // upstream neighbour at the old time
            const double U = state.m[p.n_points - 2];
            state = plant_step(state, truth, U, cfg.dt, g);
            require_finite(state.u, state.m, k);
            res.u10_consistency =
                std::max(res.u10_consistency,
                         std::abs(state.u[0] - d.r0 * state.m[0]));
            if ((k + 1) % cfg.log_every == 0 || k == nsteps - 1)
                log_row(U);
        }
    } else {
        AdaptBounds bounds;
        bounds.c1_bar = bounds.c2_bar = bounds.c4_bar = cfg.c_bar;
        bounds.c3_bar = cfg.c_bar;
        bounds.r_bar = std::abs(d.r0);
        AdaptGains gains;
        gains.gamma = cfg.gamma;
        gains.g3 = cfg.g3;
        gains.g1 = gains.g2 = gains.g4 = gains.g5 = 0.0;
        gains.rho = cfg.rho_gain;
        EstimateState est = EstimateState::zero(g, bounds, gains);
        est.rh = d.r0;  // known reflection; never adapted

        KernelSolver solver(cfg.kernel_grid, lam, mu);
        TrunkCache cache;
        if (neural)
            cache = build_trunk_cache(*cfg.model, cfg.kernel_grid);
        KernelPair ctrl = neural ? predict_kernels(*cfg.model, est, cache)
                                 : solver.solve(est, cfg.kernel_opts);
        auto rows = control_rows(ctrl, g);

        Field mh = state.m;  // identifier carries m1 only
        Field chat(static_cast<std::size_t>(g.n_points));
        const double am = mu * cfg.dt / g.dx;

        for (int k = 0; k < nsteps; ++k) {
            // Eq. 24 controller: integrates the plant states directly
            const double U =
                trap_prod(rows.first, state.u, g) + trap_prod(rows.second, state.m, g);

            PlantState next = plant_step(state, truth, U, cfg.dt, g);

            // m-only identifier with the implicitly damped error injection
            const double wnorm = varpi_norm_sq(state.u, state.m, g);
            const double fac = 1.0 / (1.0 + cfg.dt * cfg.rho_gain * wnorm);
            Field mh_new(static_cast<std::size_t>(g.n_points));
            for (int j = 0; j < p.n_points - 1; ++j) {
                const double cand = mh[j] + am * (mh[j + 1] - mh[j]) +
                                    cfg.dt * chat[j] * state.u[j];
                mh_new[j] = next.m[j] - fac * (next.m[j] - cand);
            }
            mh_new[p.n_points - 1] = U;

            // single update law, driven by the old-time error and plant state
            for (int j = 0; j < p.n_points; ++j) {
                const double eps1 = state.m[j] - mh[j];
                const double tau_j = cfg.g3 * std::exp(cfg.gamma * g.x(j)) *
                                     eps1 * state.u[j];
                chat[j] += cfg.dt * project(tau_j, chat[j], cfg.c_bar);
                chat[j] = std::clamp(chat[j], -cfg.c_bar, cfg.c_bar);
            }

            state = std::move(next);
            mh = std::move(mh_new);
            require_finite(state.u, state.m, k);
            require_finite(mh, mh, k);
            res.u10_consistency =
                std::max(res.u10_consistency,
                         std::abs(state.u[0] - d.r0 * state.m[0]));
            for (int j = 0; j < p.n_points; ++j)
                if (std::abs(chat[j]) > cfg.c_bar + 1e-12)
                    res.chat_in_bounds = false;

            if ((k + 1) % cfg.recompute_every == 0) {
                est.c3h = chat;
                ctrl = neural ? predict_kernels(*cfg.model, est, cache)
                              : solver.solve_warm(est, ctrl, cfg.kernel_opts);
                rows = control_rows(ctrl, g);
                if (cfg.on_kernel_update)
                    cfg.on_kernel_update(k + 1, est, ctrl);
            }

            if ((k + 1) % cfg.log_every == 0 || k == nsteps - 1)
                log_row(U);
        }
        res.chat = std::move(chat);
    }

    res.log.final_state = state;
    auto [rho, v] = physical_from_riemann(state.u, state.m, d, p, g_road);
    res.rho = std::move(rho);
    res.v = std::move(v);
    return res;
}

Dataset generate_arz_dataset(const ArzParams& base,
                             const ArzDatasetRanges& ranges,
                             const ArzRunConfig& sim) {
    if (ranges.n_traj < 1 || ranges.stride < 1)
        throw std::invalid_argument(
            "generate_arz_dataset: n_traj and stride must be >= 1");
    if (!(ranges.tau_lo > 0.0 && ranges.tau_hi >= ranges.tau_lo))
        throw std::invalid_argument("generate_arz_dataset: bad tau range");

    Dataset ds;
    ds.n_s = ranges.n_s;
    ds.kernel_grid = sim.kernel_grid;
    ds.seed = ranges.seed;
    // the coefficient-shape ranges of the generic protocol do not apply here
    ds.ranges.s1_lo = ds.ranges.s1_hi = 0.0;
    ds.ranges.s2_lo = ds.ranges.s2_hi = 0.0;
    ds.ranges.s3_lo = ds.ranges.s3_hi = 0.0;
    ds.ranges.s4_lo = ds.ranges.s4_hi = 0.0;
    ds.ranges.r_lo = ds.ranges.r_hi = 0.0;
    ds.ranges.n_traj = ranges.n_traj;
    ds.ranges.stride = ranges.stride;
    ds.ranges.seed = ranges.seed;

    for (int traj = 0; traj < ranges.n_traj; ++traj) {
        Rng rng(ranges.seed ^
                (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(traj + 1)));
        ArzParams pp = base;
        pp.tau = rng.uniform(ranges.tau_lo, ranges.tau_hi);

        ArzRunConfig cfg = sim;
        cfg.controller = ArzController::exact_adaptive;
        cfg.model = nullptr;
        cfg.probes.clear();
        cfg.log_every = 0x7fffffff;
        cfg.on_kernel_update = [&](int step, const EstimateState& est,
                                   const KernelPair& kernels) {
            if (step % ranges.stride != 0)
                return;
            DatasetRecord rec;
            rec.est_vector = estimate_vector(est, ranges.n_s);
            rec.ku = kernels.ku;
            rec.km = kernels.km;
            rec.t_snapshot = step * sim.dt;
            rec.traj_id = traj;
            ds.records.push_back(std::move(rec));
        };
        run_arz(pp, cfg);
    }
    return ds;
}

} // namespace hypctl
