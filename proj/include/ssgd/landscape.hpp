#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ssgd/data.hpp"
#include "ssgd/errors.hpp"
#include "ssgd/nnet.hpp"

namespace ssgd {

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline void axpy(std::vector<double>& y, double c, const std::vector<double>& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * x[i];
}

inline std::vector<double> random_unit(std::size_t dim, RngState& rng) {
    const Tensor g = gaussian(rng, dim);
    std::vector<double> v(g.data(), g.data() + dim);
    const double n = norm(v);
    if (n == 0.0) throw NumericError("random_unit: degenerate gaussian draw");
    for (double& x : v) x /= n;
    return v;
}

/// Rebuilds a ParamSet shaped like `like` from a flat coefficient vector.
inline ParamSet unflattened(const ParamSet& like, const std::vector<double>& flat) {
    ParamSet out = like;
    out.unflatten(flat);
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// 1-D interpolation between two solutions
// ---------------------------------------------------------------------------

struct CurvePoint {
    double alpha;
    double train_loss;
    double train_mcr; // misclassification rate in [0, 1]
    double test_loss;
    double test_mcr;
};

struct Curve1D {
    std::vector<CurvePoint> points;
};

/// Evaluates w(alpha) = (1-alpha)*a + alpha*b on both splits for each alpha
/// (eval mode). Alphas must be strictly increasing and may extend past [0,1].
inline Curve1D interpolate_1d(const ParamSet& a, const ParamSet& b, const Model& model,
                              const Dataset& data, const std::vector<double>& alphas) {
    require_aligned(a, b, "interpolate_1d");
    if (alphas.empty()) throw InvalidArgument("interpolate_1d: no alphas");
    for (std::size_t i = 1; i < alphas.size(); ++i) {
        if (alphas[i] <= alphas[i - 1]) {
            throw InvalidArgument("interpolate_1d: alphas must be strictly increasing");
        }
    }
    Curve1D curve;
    ParamSet w = a;
    for (double alpha : alphas) {
        for (std::size_t g = 0; g < w.group_count(); ++g) {
            const Tensor& av = a.group(g).values;
            const Tensor& bv = b.group(g).values;
            Tensor& wv = w.group(g).values;
            for (size_t j = 0; j < wv.size(); ++j) {
                wv[j] = (1.0 - alpha) * av[j] + alpha * bv[j];
            }
        }
        const SplitMetrics train =
            evaluate_split(model, w, data.train_inputs, data.train_labels);
        const SplitMetrics test = evaluate_split(model, w, data.test_inputs, data.test_labels);
        curve.points.push_back(
            {alpha, train.loss, 1.0 - train.accuracy, test.loss, 1.0 - test.accuracy});
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Three-model plane
// ---------------------------------------------------------------------------

struct PlaneBasis {
    ParamSet origin;       // w1; plane points are origin + x*u_hat + y*v_hat
    std::vector<double> u; // w2 - w1, flattened
    std::vector<double> v; // (w3 - w1) orthogonalized against u
    double u_norm = 0.0;
    double v_norm = 0.0;
    std::array<std::array<double, 2>, 3> anchors{}; // (x, y) of w1, w2, w3
};

/// Gram-Schmidt plane through three models: u = w2-w1, v = (w3-w1) minus its
/// projection onto u. Collinear triples degenerate.
inline PlaneBasis plane_basis(const ParamSet& w1, const ParamSet& w2, const ParamSet& w3) {
    require_aligned(w1, w2, "plane_basis");
    require_aligned(w1, w3, "plane_basis");

    const std::vector<double> f1 = w1.flatten();
    const std::vector<double> f2 = w2.flatten();
    const std::vector<double> f3 = w3.flatten();

    PlaneBasis basis;
    basis.origin = w1;
    basis.u.resize(f1.size());
    basis.v.resize(f1.size());
    std::vector<double> r(f1.size());
    for (std::size_t i = 0; i < f1.size(); ++i) {
        basis.u[i] = f2[i] - f1[i];
        r[i] = f3[i] - f1[i];
    }
    basis.u_norm = detail::norm(basis.u);
    const double r_norm = detail::norm(r);
    if (basis.u_norm == 0.0) {
        throw DegenerateError("plane_basis: w1 and w2 coincide");
    }

    // Orthogonalize twice; a single pass can leave O(eps*kappa) residue.
    basis.v = r;
    for (int pass = 0; pass < 2; ++pass) {
        const double coeff = detail::dot(basis.v, basis.u) / (basis.u_norm * basis.u_norm);
        detail::axpy(basis.v, -coeff, basis.u);
    }
    basis.v_norm = detail::norm(basis.v);
    if (basis.v_norm < 1e-12 * r_norm || basis.v_norm == 0.0) {
        throw DegenerateError("plane_basis: w3 is collinear with w1 and w2");
    }

    basis.anchors[0] = {0.0, 0.0};
    basis.anchors[1] = {basis.u_norm, 0.0};
    basis.anchors[2] = {detail::dot(r, basis.u) / basis.u_norm, basis.v_norm};
    return basis;
}

/// Parameters at plane coordinates (x, y).
inline ParamSet plane_point(const PlaneBasis& basis, double x, double y) {
    std::vector<double> flat = basis.origin.flatten();
    detail::axpy(flat, x / basis.u_norm, basis.u);
    detail::axpy(flat, y / basis.v_norm, basis.v);
    return detail::unflattened(basis.origin, flat);
}

struct AxisRange {
    double lo = 0.0;
    double hi = 1.0;
    std::size_t n = 2; // grid points, endpoints included
};

struct SurfaceGrid {
    std::vector<double> xs, ys;
    // Row-major fields indexed [iy * xs.size() + ix].
    std::vector<double> train_loss, train_mcr, test_loss, test_mcr;
    std::array<std::array<double, 2>, 3> anchors{};

    std::size_t nx() const { return xs.size(); }
    std::size_t ny() const { return ys.size(); }
    double at(const std::vector<double>& field, std::size_t ix, std::size_t iy) const {
        return field[iy * xs.size() + ix];
    }
};

/// Loss/MCR of both splits over a regular grid in the (u, v) plane.
inline SurfaceGrid surface_eval(const PlaneBasis& basis, const Model& model,
                                const Dataset& data, AxisRange x_range, AxisRange y_range) {
    if (x_range.n < 2 || y_range.n < 2) {
        throw InvalidArgument("surface_eval: need at least 2 grid points per axis");
    }
    SurfaceGrid grid;
    grid.anchors = basis.anchors;
    auto fill_axis = [](const AxisRange& r) {
        std::vector<double> v(r.n);
        const double step = (r.hi - r.lo) / static_cast<double>(r.n - 1);
        for (std::size_t i = 0; i < r.n; ++i) v[i] = r.lo + step * static_cast<double>(i);
        return v;
    };
    grid.xs = fill_axis(x_range);
    grid.ys = fill_axis(y_range);

    const std::size_t cells = grid.nx() * grid.ny();
    grid.train_loss.resize(cells);
    grid.train_mcr.resize(cells);
    grid.test_loss.resize(cells);
    grid.test_mcr.resize(cells);
    for (std::size_t iy = 0; iy < grid.ny(); ++iy) {
        for (std::size_t ix = 0; ix < grid.nx(); ++ix) {
            const ParamSet w = plane_point(basis, grid.xs[ix], grid.ys[iy]);
            const SplitMetrics train =
                evaluate_split(model, w, data.train_inputs, data.train_labels);
            const SplitMetrics test =
                evaluate_split(model, w, data.test_inputs, data.test_labels);
            const std::size_t i = iy * grid.nx() + ix;
            grid.train_loss[i] = train.loss;
            grid.train_mcr[i] = 1.0 - train.accuracy;
            grid.test_loss[i] = test.loss;
            grid.test_mcr[i] = 1.0 - test.accuracy;
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Hessian-vector products and exact small Hessians
// ---------------------------------------------------------------------------

/// Finite-difference step scaled to the weight magnitude.
inline double default_fd_step(const ParamSet& params) {
    return 1e-4 * (1.0 + detail::norm(params.flatten()));
}

/// Central-difference HVP over an arbitrary flat gradient closure:
/// (g(w + h*v_hat) - g(w - h*v_hat)) / (2h) * ||v||.
template <typename GradFn>
std::vector<double> hvp_central(GradFn&& gradient, const std::vector<double>& w,
                                const std::vector<double>& v, double h) {
    if (h <= 0.0) throw InvalidArgument("hvp: step h must be > 0");
    const double v_norm = detail::norm(v);
    if (v_norm == 0.0) throw InvalidArgument("hvp: zero direction vector");

    std::vector<double> probe = w;
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] += h * v[i] / v_norm;
    std::vector<double> g_plus = gradient(probe);
    probe = w;
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] -= h * v[i] / v_norm;
    const std::vector<double> g_minus = gradient(probe);

    for (std::size_t i = 0; i < g_plus.size(); ++i) {
        g_plus[i] = (g_plus[i] - g_minus[i]) / (2.0 * h) * v_norm;
    }
    return g_plus;
}

/// Flat eval-mode gradient closure for a model/batch pair.
inline std::function<std::vector<double>(const std::vector<double>&)> flat_grad_fn(
    const Model& model, const ParamSet& params, const Batch& batch) {
    return [&model, params, &batch](const std::vector<double>& flat) {
        const ParamSet w = detail::unflattened(params, flat);
        return grad(model, w, batch).grads.flatten();
    };
}

/// HVP of the mean batch loss at `params` along v (eval mode). h <= 0 selects
/// the default weight-scaled step.
inline std::vector<double> hvp(const Model& model, const ParamSet& params, const Batch& batch,
                               const std::vector<double>& v, double h = 0.0) {
    if (v.size() != params.param_count()) {
        throw ShapeError("hvp: direction has " + std::to_string(v.size()) +
                         " entries for " + std::to_string(params.param_count()) +
                         " parameters");
    }
    if (h <= 0.0) h = default_fd_step(params);
    return hvp_central(flat_grad_fn(model, params, batch), params.flatten(), v, h);
}

/// Dense symmetric Hessian estimate, column j = hvp(e_j), symmetrized.
/// Guarded by a parameter-count cap; this is an oracle for small models.
template <typename GradFn>
std::vector<double> exact_hessian_of(GradFn&& gradient, const std::vector<double>& w,
                                     double h) {
    const std::size_t n = w.size();
    std::vector<double> hess(n * n);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        const std::vector<double> col = hvp_central(gradient, w, e, h);
        e[j] = 0.0;
        for (std::size_t i = 0; i < n; ++i) hess[i * n + j] = col[i];
    }
    // Symmetrize: (H + H^T) / 2.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (hess[i * n + j] + hess[j * n + i]);
            hess[i * n + j] = m;
            hess[j * n + i] = m;
        }
    }
    return hess;
}

inline std::vector<double> exact_hessian(const Model& model, const ParamSet& params,
                                         const Batch& batch, std::size_t max_params = 2000,
                                         double h = 0.0) {
    const std::size_t n = params.param_count();
    if (n > max_params) {
        throw InvalidArgument("exact_hessian: " + std::to_string(n) +
                              " parameters exceed the cap of " + std::to_string(max_params));
    }
    if (h <= 0.0) {
        // Tighter step than plain hvp: column curvatures are O(1)-scaled unit
        // directions, and the symmetry check budgets 1e-5 relative error.
        h = 1e-5 * (1.0 + detail::norm(params.flatten()));
    }
    return exact_hessian_of(flat_grad_fn(model, params, batch), params.flatten(), h);
}

/// Eigenvalues of a dense symmetric matrix (row-major n*n), descending.
inline std::vector<double> symmetric_eigenvalues(const std::vector<double>& hess) {
    const auto n = static_cast<std::size_t>(std::llround(std::sqrt(double(hess.size()))));
    if (n * n != hess.size()) {
        throw ShapeError("symmetric_eigenvalues: matrix is not square");
    }
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(long(i), long(j)) = hess[i * n + j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    std::vector<double> vals(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
    std::sort(vals.begin(), vals.end(), std::greater<>());
    return vals;
}

// ---------------------------------------------------------------------------
// Lanczos spectra
// ---------------------------------------------------------------------------

struct Spectrum {
    std::vector<double> ritz; // descending
    std::size_t iterations = 0;
    std::uint64_t seed = 0;
    bool breakdown = false; // beta vanished before k iterations completed
};

using LinearOperator = std::function<std::vector<double>(const std::vector<double>&)>;

/// k-step Lanczos with full reorthogonalization from a seeded random unit
/// start; Ritz values are the tridiagonal eigenvalues. A vanishing beta
/// (invariant subspace) stops early and flags the partial spectrum.
inline Spectrum lanczos_spectrum(const LinearOperator& apply, std::size_t dim, std::size_t k,
                                 std::uint64_t seed) {
    if (dim == 0) throw InvalidArgument("lanczos_spectrum: dim must be > 0");
    if (k < 1 || k > dim) {
        throw InvalidArgument("lanczos_spectrum: need 1 <= k <= dim, got k=" +
                              std::to_string(k) + ", dim=" + std::to_string(dim));
    }
    Spectrum spec;
    spec.seed = seed;

    RngState rng = seeded_rng(seed);
    std::vector<std::vector<double>> q;
    q.push_back(detail::random_unit(dim, rng));
    std::vector<double> alpha, beta; // beta[i] couples q[i] and q[i+1]

    for (std::size_t it = 0; it < k; ++it) {
        std::vector<double> z = apply(q[it]);
        if (z.size() != dim) {
            throw ShapeError("lanczos_spectrum: operator changed dimension");
        }
        alpha.push_back(detail::dot(q[it], z));
        detail::axpy(z, -alpha.back(), q[it]);
        if (it > 0) detail::axpy(z, -beta.back(), q[it - 1]);
        // Full reorthogonalization, two passes.
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& qi : q) detail::axpy(z, -detail::dot(qi, z), qi);
        }
        const double b = detail::norm(z);
        if (it + 1 == k) break;
        if (b < 1e-12) {
            spec.breakdown = true;
            break;
        }
        beta.push_back(b);
        for (double& x : z) x /= b;
        q.push_back(std::move(z));
    }

    const std::size_t m = alpha.size();
    spec.iterations = m;
    Eigen::VectorXd diag(static_cast<long>(m));
    Eigen::VectorXd sub(static_cast<long>(m > 0 ? m - 1 : 0));
    for (std::size_t i = 0; i < m; ++i) diag[static_cast<long>(i)] = alpha[i];
    for (std::size_t i = 0; i + 1 < m; ++i) sub[static_cast<long>(i)] = beta[i];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    spec.ritz.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + m);
    std::sort(spec.ritz.begin(), spec.ritz.end(), std::greater<>());
    return spec;
}

/// Lanczos over the model's finite-difference Hessian at `params` (eval mode).
inline Spectrum lanczos_spectrum(const Model& model, const ParamSet& params,
                                 const Batch& batch, std::size_t k, std::uint64_t seed,
                                 double h = 0.0) {
    if (h <= 0.0) h = default_fd_step(params);
    const std::vector<double> w = params.flatten();
    auto grad_fn = flat_grad_fn(model, params, batch);
    LinearOperator op = [grad_fn, w, h](const std::vector<double>& v) {
        return hvp_central(grad_fn, w, v, h);
    };
    return lanczos_spectrum(op, w.size(), k, seed);
}

// ---------------------------------------------------------------------------
// Epsilon-sharpness
// ---------------------------------------------------------------------------

/// max over ||d|| <= eps of (L(w+d) - L(w)) / (1 + L(w)) * 100, probed with
/// n_samples random directions, each refined by projected gradient ascent.
template <typename LossFn, typename GradFn>
double epsilon_sharpness_core(LossFn&& loss_at, GradFn&& grad_at, const std::vector<double>& w,
                              double eps, std::size_t n_samples, std::size_t ascent_steps,
                              RngState& rng) {
    if (eps <= 0.0) throw InvalidArgument("epsilon_sharpness: eps must be > 0");
    if (n_samples == 0) throw InvalidArgument("epsilon_sharpness: need n_samples >= 1");
    const std::size_t dim = w.size();
    const double base = loss_at(w);

    double best = 0.0; // d = 0 is feasible, so the max is never negative
    std::vector<double> probe(dim);
    auto consider = [&](const std::vector<double>& d) {
        probe = w;
        for (std::size_t i = 0; i < dim; ++i) probe[i] += d[i];
        best = std::max(best, loss_at(probe) - base);
    };

    for (std::size_t s = 0; s < n_samples; ++s) {
        std::vector<double> d = detail::random_unit(dim, rng);
        for (double& x : d) x *= eps;
        consider(d);
        for (std::size_t t = 0; t < ascent_steps; ++t) {
            probe = w;
            for (std::size_t i = 0; i < dim; ++i) probe[i] += d[i];
            const std::vector<double> g = grad_at(probe);
            const double gn = detail::norm(g);
            if (gn == 0.0) break;
            detail::axpy(d, 0.5 * eps / gn, g);
            const double dn = detail::norm(d);
            if (dn > eps) {
                for (double& x : d) x *= eps / dn;
            }
            consider(d);
        }
    }
    return best / (1.0 + base) * 100.0;
}

inline double epsilon_sharpness(const Model& model, const ParamSet& params, const Batch& batch,
                                double eps, std::size_t n_samples, std::size_t ascent_steps,
                                RngState& rng) {
    const std::vector<double> w = params.flatten();
    auto loss_at = [&](const std::vector<double>& flat) {
        return forward(model, detail::unflattened(params, flat), batch).loss;
    };
    return epsilon_sharpness_core(loss_at, flat_grad_fn(model, params, batch), w, eps,
                                  n_samples, ascent_steps, rng);
}

// ---------------------------------------------------------------------------
// Eigenvalue density
// ---------------------------------------------------------------------------

struct Density {
    std::vector<double> xs;
    std::vector<double> ys;
};

/// Gaussian-kernel smoothing of a value set, kernel width = range/50 (or a
/// magnitude-scaled floor when all values coincide).
inline Density kernel_density(const std::vector<double>& values,
                              std::size_t grid_points = 256) {
    if (values.empty()) throw InvalidArgument("kernel_density: no values");
    if (grid_points < 2) throw InvalidArgument("kernel_density: need >= 2 grid points");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    double width = (hi - lo) / 50.0;
    if (width == 0.0) width = std::max(std::abs(lo), 1.0) * 1e-3;

    Density d;
    d.xs.resize(grid_points);
    d.ys.resize(grid_points);
    const double from = lo - 3.0 * width;
    const double span = (hi + 3.0 * width) - from;
    const double inv_norm =
        1.0 / (static_cast<double>(values.size()) * width * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double x = from + span * static_cast<double>(i) / static_cast<double>(grid_points - 1);
        double y = 0.0;
        for (double v : values) {
            const double t = (x - v) / width;
            y += std::exp(-0.5 * t * t);
        }
        d.xs[i] = x;
        d.ys[i] = y * inv_norm;
    }
    return d;
}

} // namespace ssgd
