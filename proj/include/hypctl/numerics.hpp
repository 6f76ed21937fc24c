// Grids, field containers, quadrature, norms, CFL bookkeeping, and the
// coefficient-function families used by the hyperbolic control experiments.
//
// Conventions: all grids are node-centered on [0, length] including both
// endpoints; all storage and arithmetic is 64-bit; quadrature is composite
// trapezoid throughout (the plant discretization is first order, so higher
// order quadrature would buy nothing).
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hypctl {

// Uniform 1-D grid x_j = j*dx, j = 0..n_points-1, with x_{n-1} = length.
struct Grid1D {
    int n_points = 2;
    double length = 1.0;
    double dx = 1.0;

    Grid1D() = default;
    Grid1D(int n, double len = 1.0) : n_points(n), length(len) {
        if (n < 2)
            throw std::invalid_argument("Grid1D: need at least 2 points, got " +
                                        std::to_string(n));
        if (!(len > 0.0))
            throw std::invalid_argument("Grid1D: length must be positive");
        dx = len / (n - 1);
    }
    double x(int j) const { return j * dx; }
};

// Sampled scalar function: one value per grid node.
struct Field {
    std::vector<double> v;

    Field() = default;
    explicit Field(std::size_t n, double fill = 0.0) : v(n, fill) {}
    explicit Field(std::vector<double> vals) : v(std::move(vals)) {}

    std::size_t size() const { return v.size(); }
    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    bool operator==(const Field& o) const { return v == o.v; }
};

// Throws unless f has one sample per node of g.
void require_on_grid(const Field& f, const Grid1D& g, const char* what);

// Triangular grid for kernel functions: nodes (x_i, xi_j) = (i*h, j*h) with
// 0 <= j <= i <= n_points-1, i.e. the closed triangle 0 <= xi <= x <= 1.
// Flat storage is row-major by i with index i*(i+1)/2 + j.
struct TriGrid {
    int n_points = 2;
    double h = 1.0;

    TriGrid() = default;
    explicit TriGrid(int n) : n_points(n) {
        if (n < 2)
            throw std::invalid_argument("TriGrid: need at least 2 points");
        h = 1.0 / (n - 1);
    }
    int size() const { return n_points * (n_points + 1) / 2; }
    int index(int i, int j) const { return i * (i + 1) / 2 + j; }
    double x(int i) const { return i * h; }
    bool same_as(const TriGrid& o) const { return n_points == o.n_points; }
};

// The coefficient families of the benchmark plant:
//   chebyshev: c(x) = cos(sigma * arccos x)   (valid for x in [-1, 1] only)
//   sin_shift: c(x) = sin(1 - sigma*x) + 1
//   cos_scale: c(x) = cos(sigma*x)
//   tabulated: values supplied directly
enum class CoeffKind { chebyshev, sin_shift, cos_scale, tabulated };

struct CoeffSpec {
    CoeffKind kind = CoeffKind::tabulated;
    double shape = 0.0;   // sigma; unused for tabulated
    Field table;          // used by tabulated only

    static CoeffSpec chebyshev(double sigma) { return {CoeffKind::chebyshev, sigma, {}}; }
    static CoeffSpec sin_shift(double sigma) { return {CoeffKind::sin_shift, sigma, {}}; }
    static CoeffSpec cos_scale(double sigma) { return {CoeffKind::cos_scale, sigma, {}}; }
    static CoeffSpec tabulated(Field f) { return {CoeffKind::tabulated, 0.0, std::move(f)}; }
};

// Composite trapezoid rule over the grid.
double trapezoid(const Field& f, const Grid1D& g);

// sqrt(trapezoid(f^2)): the discrete L2 norm.
double l2_norm(const Field& f, const Grid1D& g);

// Largest stable explicit time step, dx / max(lambda, mu).
double cfl_max_dt(double lambda, double mu, double dx);

// Pointwise evaluation of the coefficient family on the grid.  Chebyshev
// evaluation outside [-1, 1] throws: silent clamping would mask config bugs.
Field sample_coeff(const CoeffSpec& spec, const Grid1D& g);

// Linear interpolation of a sampled field at x, clamped to the grid range.
double lerp_field(const Field& f, const Grid1D& g, double x);

} // namespace hypctl
