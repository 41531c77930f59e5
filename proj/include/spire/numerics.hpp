#pragma once

// Quadrature, dense linear solves and a damped Newton root finder.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>

#include "spire/error.hpp"
#include "spire/model.hpp"

namespace spire {

/// Probabilists' Gauss-Hermite rule: sum_i w_i g(t_i) ~ E g(T), T ~ N(0, 1).
struct QuadratureRule {
    Vector nodes;
    Vector weights;

    [[nodiscard]] int order() const { return static_cast<int>(nodes.size()); }
};

namespace detail {

// Orthonormal probabilists' Hermite polynomials p_0..p_{n} at t.  Returns
// (p_n(t), p_{n-1}(t), sum_{k<n} p_k(t)^2).
inline std::tuple<double, double, double> hermite_orthonormal(int n, double t) {
    double prev = 0.0;
    double cur = 1.0;
    double sumsq = 0.0;
    for (int k = 0; k < n; ++k) {
        sumsq += cur * cur;
        const double next = (t * cur - std::sqrt(static_cast<double>(k)) * prev) /
                            std::sqrt(static_cast<double>(k + 1));
        prev = cur;
        cur = next;
    }
    return {cur, prev, sumsq};
}

}  // namespace detail

/// Golub-Welsch eigenvalues of the Jacobi matrix, polished by Newton steps on
/// the three-term recurrence; weights from the Christoffel function.
inline QuadratureRule gauss_hermite(int n) {
    if (n < 2 || n > 128)
        throw ConfigError("Gauss-Hermite order must lie in [2, 128], got " + std::to_string(n));
    Matrix jacobi = Matrix::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
        jacobi(k - 1, k) = jacobi(k, k - 1);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
    Vector t = eig.eigenvalues();
    for (int i = 0; i < n; ++i) {
        for (int it = 0; it < 5; ++it) {
            auto [pn, pn1, sumsq] = detail::hermite_orthonormal(n, t(i));
            (void)sumsq;
            const double dp = std::sqrt(static_cast<double>(n)) * pn1;
            if (dp == 0.0) break;
            const double step = pn / dp;
            t(i) -= step;
            if (std::abs(step) < 1e-16 * (1.0 + std::abs(t(i)))) break;
        }
    }
    QuadratureRule rule{Vector(n), Vector(n)};
    for (int i = 0; i < n; ++i) {
        // symmetric about zero
        const double node = 0.5 * (t(i) - t(n - 1 - i));
        rule.nodes(i) = node;
        rule.weights(i) = 1.0 / std::get<2>(detail::hermite_orthonormal(n, node));
    }
    rule.weights /= rule.weights.sum();
    return rule;
}

/// Integrates g(y) f(y | x, z) dy using the rule centred on the outcome mean.
template <class G>
Vector integrate_against_outcome(G&& g, const ModelSpec& spec, const OutcomeParams& params,
                                 double x, std::span<const double> z, const QuadratureRule& rule) {
    const double mu = outcome_mean(spec, params, x, z);
    const double sd = std::sqrt(params.sigma2);
    Vector acc;
    for (int i = 0; i < rule.order(); ++i) {
        const Vector gi = g(mu + sd * rule.nodes(i));
        if (!gi.allFinite())
            throw NumericalError("non-finite integrand at x = " + std::to_string(x) + ", node " +
                                 std::to_string(i));
        if (i == 0) acc = Vector::Zero(gi.size());
        acc += rule.weights(i) * gi;
    }
    return acc;
}

struct LinearSolution {
    Matrix x;
    bool used_fallback = false;
};

/// Rank-deficient fallback: truncated SVD, or a complete orthogonal
/// decomposition (column-pivoted QR followed by RZ), which gives the same
/// minimum-norm least-squares solution for a numerically low-rank A at a
/// fraction of the cost.
enum class RankFallback { svd, cod };

/// Solves A X = B.  Falls back to the minimum-norm least-squares solution with
/// components below 1e-10 relative to the largest truncated when A is singular
/// or ill-conditioned.
inline LinearSolution solve_linear(const Matrix& a, const Matrix& b,
                                   RankFallback fallback = RankFallback::svd) {
    if (a.rows() != a.cols() || a.rows() != b.rows())
        throw ConfigError("solve_linear: dimension mismatch");
    Eigen::PartialPivLU<Matrix> lu(a);
    if (lu.rcond() > 1e-12) {
        Matrix x = lu.solve(b);
        const double bnorm = b.norm();
        const double res = (a * x - b).norm();
        if (x.allFinite() && res <= 1e-8 * std::max(bnorm, 1e-300)) return {std::move(x), false};
        if (x.allFinite() && bnorm == 0.0 && res == 0.0) return {std::move(x), false};
    }
    if (fallback == RankFallback::cod) {
        Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
        cod.setThreshold(1e-10);
        cod.compute(a);
        return {cod.solve(b), true};
    }
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-10);
    return {svd.solve(b), true};
}

// ---------------------------------------------------------------------------
// Root finding
// ---------------------------------------------------------------------------

struct NewtonOptions {
    double tol = 1e-8;
    int max_iter = 100;
    int max_halvings = 20;
    double min_step = 1e-12;
};

struct SolveReport {
    Vector root;
    int iterations = 0;
    double final_norm = std::numeric_limits<double>::infinity();
    bool converged = false;
    Matrix jacobian;      // last Jacobian computed
    Vector jacobian_at;   // where it was computed
    std::string message;
};

/// Central differences with step 1e-5 * (1 + |theta_k|).
template <class F>
Matrix fd_jacobian(F&& f, const Vector& theta) {
    Matrix jac;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        const double h = 1e-5 * (1.0 + std::abs(theta(k)));
        Vector up = theta;
        Vector dn = theta;
        up(k) += h;
        dn(k) -= h;
        const Vector fu = f(up);
        const Vector fd = f(dn);
        if (k == 0) jac.resize(fu.size(), theta.size());
        jac.col(k) = (fu - fd) / (2.0 * h);
    }
    return jac;
}

/// Damped Newton iteration with a finite-difference Jacobian and step
/// halving on ||F||_2.  Never throws on non-convergence; inspect the report.
template <class F>
SolveReport newton_solve(F&& f, const Vector& init, const NewtonOptions& opt = {}) {
    auto norm2 = [](const Vector& v) {
        return v.allFinite() ? v.norm() : std::numeric_limits<double>::infinity();
    };
    SolveReport rep;
    Vector theta = init;
    Vector fx = f(theta);
    if (!fx.allFinite()) {
        rep.root = theta;
        rep.message = "score is not finite at the starting value";
        return rep;
    }
    rep.final_norm = fx.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < opt.max_iter; ++it) {
        if (rep.final_norm <= opt.tol) break;
        rep.iterations = it + 1;
        rep.jacobian = fd_jacobian(f, theta);
        rep.jacobian_at = theta;
        const Vector delta = -solve_linear(rep.jacobian, fx).x.col(0);
        if (!delta.allFinite()) {
            rep.message = "Newton direction is not finite";
            break;
        }
        const double base = norm2(fx);
        double lambda = 1.0;
        Vector trial = theta + delta;
        Vector ftrial = f(trial);
        int halvings = 0;
        while (!(norm2(ftrial) < base) && halvings < opt.max_halvings) {
            lambda *= 0.5;
            ++halvings;
            trial = theta + lambda * delta;
            ftrial = f(trial);
        }
        if (!(norm2(ftrial) < base)) {
            rep.message = "line search failed to reduce the score norm";
            break;
        }
        const double step = (lambda * delta).lpNorm<Eigen::Infinity>();
        theta = std::move(trial);
        fx = std::move(ftrial);
        rep.final_norm = fx.lpNorm<Eigen::Infinity>();
        if (step <= opt.min_step) {
            if (rep.final_norm > opt.tol) rep.message = "step below minimum before tolerance was met";
            break;
        }
    }
    rep.root = theta;
    rep.converged = rep.final_norm <= opt.tol;
    if (!rep.converged && rep.message.empty())
        rep.message = "maximum iterations reached (" + std::to_string(opt.max_iter) + ")";
    return rep;
}

// ---------------------------------------------------------------------------
// Reference integrator
// ---------------------------------------------------------------------------

namespace detail {

template <class G>
double simpson_step(G& g, double a, double b, double fa, double fm, double fb, double whole,
                    double tol, int depth) {
    if (depth > 50) throw NumericalError("adaptive quadrature: recursion depth cap reached");
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = g(lm);
    const double frm = g(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double diff = left + right - whole;
    if (depth >= 6 && std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
    return simpson_step(g, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) +
           simpson_step(g, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
}

}  // namespace detail

/// Adaptive Simpson integration of g over [lo, hi] to absolute tolerance tol.
template <class G>
double adaptive_quadrature(G&& g, double lo, double hi, double tol = 1e-10) {
    const double fa = g(lo);
    const double fb = g(hi);
    const double fm = g(0.5 * (lo + hi));
    const double whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::simpson_step(g, lo, hi, fa, fm, fb, whole, tol, 0);
}

/// Standard normal cdf.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace spire
