#include "hypctl/numerics.hpp"

#include <cmath>

namespace hypctl {

void require_on_grid(const Field& f, const Grid1D& g, const char* what) {
    if (f.size() != static_cast<std::size_t>(g.n_points))
        throw std::invalid_argument(std::string(what) + ": field has " +
                                    std::to_string(f.size()) + " samples, grid has " +
                                    std::to_string(g.n_points) + " nodes");
}

double trapezoid(const Field& f, const Grid1D& g) {
    require_on_grid(f, g, "trapezoid");
    double s = 0.0;
    for (double x : f.v) s += x;
    s -= 0.5 * (f.v.front() + f.v.back());
    return s * g.dx;
}

double l2_norm(const Field& f, const Grid1D& g) {
    require_on_grid(f, g, "l2_norm");
    double s = 0.0;
    for (double x : f.v) s += x * x;
    s -= 0.5 * (f.v.front() * f.v.front() + f.v.back() * f.v.back());
    // guard against -0 from rounding on all-zero fields
    return std::sqrt(std::max(s * g.dx, 0.0));
}

double cfl_max_dt(double lambda, double mu, double dx) {
    if (!(lambda > 0.0) || !(mu > 0.0) || !(dx > 0.0))
        throw std::invalid_argument("cfl_max_dt: lambda, mu, dx must all be positive");
    return dx / std::max(lambda, mu);
}

Field sample_coeff(const CoeffSpec& spec, const Grid1D& g) {
    Field out(static_cast<std::size_t>(g.n_points));
    switch (spec.kind) {
        case CoeffKind::chebyshev:
            for (int j = 0; j < g.n_points; ++j) {
                const double x = g.x(j);
                if (x < -1.0 || x > 1.0 + 1e-12)
                    throw std::domain_error(
                        "sample_coeff: chebyshev family needs x in [-1,1], got x=" +
                        std::to_string(x));
                out[j] = std::cos(spec.shape * std::acos(std::min(x, 1.0)));
            }
            break;
        case CoeffKind::sin_shift:
            for (int j = 0; j < g.n_points; ++j)
                out[j] = std::sin(1.0 - spec.shape * g.x(j)) + 1.0;
            break;
        case CoeffKind::cos_scale:
            for (int j = 0; j < g.n_points; ++j)
                out[j] = std::cos(spec.shape * g.x(j));
            break;
        case CoeffKind::tabulated:
            require_on_grid(spec.table, g, "sample_coeff(tabulated)");
            out = spec.table;
            break;
    }
    return out;
}

double lerp_field(const Field& f, const Grid1D& g, double x) {
    require_on_grid(f, g, "lerp_field");
    if (x <= 0.0) return f[0];
    if (x >= g.length) return f[f.size() - 1];
    const double p = x / g.dx;
    const int j = std::min(static_cast<int>(p), g.n_points - 2);
    const double a = p - j;
    return (1.0 - a) * f[j] + a * f[j + 1];
}

} // namespace hypctl
