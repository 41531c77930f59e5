#pragma once

// Influence functions and the chi-square test for noninformative covariate
// censoring.  The test compares a censoring-robust estimator (CC, IPW or
// SPIRE) with the MLE, both under a working model that ignores C.  If X and C
// are independent given Z the working model is correct and both estimators
// agree; otherwise the MLE drifts.

#include <boost/math/distributions/chi_squared.hpp>

#include <memory>
#include <string>
#include <vector>

#include "spire/error.hpp"
#include "spire/estimators.hpp"
#include "spire/working_models.hpp"

namespace spire {

struct TestResult {
    EstimatorType base = EstimatorType::spire;
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    Vector beta1;  // base estimator
    Vector beta2;  // MLE
    Matrix v_hat;
};

/// phi_i = -J^-1 S_i(theta) with J the Jacobian of the mean score; rows of the
/// returned n x q matrix.
inline Matrix influence_from_scores(const Matrix& row_scores_at_theta, const Matrix& jac) {
    Eigen::FullPivLU<Matrix> lu(jac);
    if (!jac.allFinite() || !lu.isInvertible() || lu.rcond() < 1e-13)
        throw NumericalError("score Jacobian is singular; influence functions are undefined");
    return -(lu.solve(row_scores_at_theta.transpose())).transpose();
}

/// Same, with J from central finite differences at theta.
template <class RowScores>
Matrix influence_functions(RowScores&& row_scores, const Vector& theta) {
    auto mean = [&](const Vector& t) -> Vector { return row_scores(t).colwise().mean().transpose(); };
    const Matrix jac = fd_jacobian(mean, theta);
    Eigen::FullPivLU<Matrix> lu(jac);
    if (!jac.allFinite() || !lu.isInvertible() || lu.rcond() < 1e-13)
        throw NumericalError("score Jacobian is singular; influence functions are undefined");
    const Matrix s = row_scores(theta);
    return -(lu.solve(s.transpose())).transpose();
}

/// Upper tail of the central chi-square distribution.
inline double chi_square_sf(double x, int df) {
    if (!(x > 0.0)) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), x));
}

inline double chi_square_quantile(double prob, int df) {
    return boost::math::quantile(boost::math::chi_squared(df), prob);
}

/// T = n d^T V^-1 d for d = beta1 - beta2 over the first df coordinates.
inline TestResult chi_square_statistic(const Vector& theta1, const Matrix& phi1, const Vector& theta2,
                                       const Matrix& phi2, int df) {
    TestResult r;
    r.df = df;
    const auto n = static_cast<double>(phi1.rows());
    r.beta1 = theta1.head(df);
    r.beta2 = theta2.head(df);
    const Matrix diff = phi1.leftCols(df) - phi2.leftCols(df);
    r.v_hat = diff.transpose() * diff / n;
    const Vector d = r.beta1 - r.beta2;
    if (d.isZero(0.0)) {
        r.statistic = 0.0;
        r.p_value = 1.0;
        return r;
    }
    const Vector sol = solve_linear(r.v_hat, d).x.col(0);
    r.statistic = std::max(0.0, n * d.dot(sol));
    r.p_value = chi_square_sf(r.statistic, df);
    return r;
}

struct TestOptions {
    int grid_m = 50;
    FitOptions fit;
    KmConfig km;
    bool include_sigma2 = false;
    /// Censoring weights for the IPW base; defaults to the censoring-time
    /// localized Kaplan-Meier.
    IpwWeightFn ipw_weight;
};

/// Thrown when an underlying fit fails; carries both reports.
class TestFitError : public std::runtime_error {
public:
    TestFitError(const std::string& what, SolveReport base, SolveReport mle)
        : std::runtime_error(what), base_report(std::move(base)), mle_report(std::move(mle)) {}
    SolveReport base_report;
    SolveReport mle_report;
};

/// Test results together with the fits behind them.
struct TestRun {
    std::vector<TestResult> tests;
    EstimationResult mle;
    std::vector<EstimationResult> base_fits;  // same order as tests
};

/// Runs the test for each base estimator against one shared MLE fit.  All fits
/// use the same localized Kaplan-Meier working model and grid.
inline TestRun run_noninformative_tests(const Dataset& data, const ModelSpec& spec,
                                        const std::vector<EstimatorType>& bases, const TestOptions& opt = {}) {
    auto wm = std::make_shared<const DiscreteWorkingModel>(
        km_density_on_grid(data, make_grid(data, opt.grid_m), opt.km));
    const EstimatorKind mle_kind = EstimatorKind::mle(wm);
    const ScoreEngine mle_engine(data, spec, mle_kind, opt.fit.quad_nodes);
    TestRun run;
    run.mle = fit(data, mle_engine, opt.fit);
    const EstimationResult& mle = run.mle;
    const int df = static_cast<int>(spec.n_terms()) + (opt.include_sigma2 ? 1 : 0);

    Matrix phi_mle;
    for (EstimatorType base : bases) {
        EstimatorKind kind;
        switch (base) {
            case EstimatorType::cc: kind = EstimatorKind::cc(); break;
            case EstimatorType::ipw:
                kind = EstimatorKind::ipw(opt.ipw_weight ? opt.ipw_weight : km_censoring_weight(data, opt.km));
                break;
            case EstimatorType::spire: kind = EstimatorKind::spire(wm); break;
            case EstimatorType::mle: throw ConfigError("the MLE cannot be the base of the test");
        }
        const ScoreEngine engine(data, spec, kind, opt.fit.quad_nodes);
        EstimationResult b = fit(data, engine, opt.fit);
        if (!b.converged() || !mle.converged())
            throw TestFitError(to_string(base) + " vs mle: underlying fit did not converge (" +
                                   (b.converged() ? mle.report.message : b.report.message) + ")",
                               b.report, mle.report);
        if (phi_mle.size() == 0) phi_mle = influence_from_scores(mle_engine.row_scores(mle.theta()), mle.jacobian);
        const Matrix phi = influence_from_scores(engine.row_scores(b.theta()), b.jacobian);
        TestResult r = chi_square_statistic(b.theta(), phi, mle.theta(), phi_mle, df);
        r.base = base;
        run.tests.push_back(std::move(r));
        run.base_fits.push_back(std::move(b));
    }
    return run;
}

inline std::vector<TestResult> noninformative_tests(const Dataset& data, const ModelSpec& spec,
                                                    const std::vector<EstimatorType>& bases,
                                                    const TestOptions& opt = {}) {
    return run_noninformative_tests(data, spec, bases, opt).tests;
}

inline TestResult noninformative_test(const Dataset& data, const ModelSpec& spec, EstimatorType base,
                                      const TestOptions& opt = {}) {
    return noninformative_tests(data, spec, {base}, opt).front();
}

}  // namespace spire
