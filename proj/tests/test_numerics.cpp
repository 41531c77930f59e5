#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "spire/model.hpp"
#include "spire/numerics.hpp"

using namespace spire;

TEST(GaussHermite, TwoNodes) {
    const QuadratureRule r = gauss_hermite(2);
    ASSERT_EQ(r.order(), 2);
    EXPECT_NEAR(r.nodes(0), -1.0, 1e-14);
    EXPECT_NEAR(r.nodes(1), 1.0, 1e-14);
    EXPECT_NEAR(r.weights(0), 0.5, 1e-14);
    EXPECT_NEAR(r.weights(1), 0.5, 1e-14);
}

TEST(GaussHermite, ExactForPolynomials) {
    for (int n : {3, 5, 10, 20}) {
        const QuadratureRule r = gauss_hermite(n);
        EXPECT_TRUE((r.weights.array() > 0.0).all());
        double moment = 1.0;  // E[Y^{2k}] = (2k-1)!!
        for (int deg = 0; deg <= 2 * n - 1; ++deg) {
            double acc = 0.0, scale = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += r.weights(i) * std::pow(r.nodes(i), deg);
                scale += r.weights(i) * std::pow(std::abs(r.nodes(i)), deg);
            }
            const double expect = deg % 2 == 1 ? 0.0 : moment;
            EXPECT_NEAR(acc, expect, 1e-12 * std::max(1.0, scale)) << "n=" << n << " degree " << deg;
            if (deg % 2 == 1) moment *= deg;
        }
    }
}

TEST(GaussHermite, FortyNodesMatchesReference) {
    const QuadratureRule r = gauss_hermite(40);
    EXPECT_NEAR(r.weights.sum(), 1.0, 1e-13);
    // E[cos Y] = exp(-1/2) for Y standard normal
    double acc = 0.0;
    for (int i = 0; i < 40; ++i) acc += r.weights(i) * std::cos(r.nodes(i));
    EXPECT_NEAR(acc, std::exp(-0.5), 1e-13);
    EXPECT_THROW(gauss_hermite(0), ConfigError);
}

TEST(IntegrateAgainstOutcome, ConstantAndMean) {
    const QuadratureRule r = gauss_hermite(40);
    const ModelSpec spec = ModelSpec::controlled();
    const OutcomeParams p((Vector(3) << 0.5, 0.2, -0.2).finished(), 2.5);
    const double z[] = {1.0};
    const Vector one = integrate_against_outcome([](double) { return Vector::Ones(1); }, spec, p, 0.7, z, r);
    EXPECT_NEAR(one(0), 1.0, 1e-13);
    const Vector m = integrate_against_outcome([](double y) { return Vector::Constant(1, y); }, spec, p, 0.7, z, r);
    EXPECT_NEAR(m(0), outcome_mean(spec, p, 0.7, z), 1e-13);
    const Vector v = integrate_against_outcome(
        [&](double y) { return Vector::Constant(1, std::pow(y - outcome_mean(spec, p, 0.7, z), 2)); }, spec, p, 0.7,
        z, r);
    EXPECT_NEAR(v(0), 2.5, 1e-12);
}

TEST(IntegrateAgainstOutcome, NonFiniteIntegrandIsReported) {
    const QuadratureRule r = gauss_hermite(4);
    const ModelSpec spec = ModelSpec::controlled();
    const OutcomeParams p((Vector(3) << 0.0, 0.0, 0.0).finished(), 1.0);
    const double z[] = {0.0};
    EXPECT_THROW(integrate_against_outcome([](double) { return Vector::Constant(1, NAN); }, spec, p, 0.0, z, r),
                 NumericalError);
}

TEST(SolveLinear, Examples) {
    const Matrix b = (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished();
    const LinearSolution id = solve_linear(Matrix::Identity(2, 2), b);
    EXPECT_FALSE(id.used_fallback);
    EXPECT_EQ(id.x, b);
    const Matrix a = (Matrix(2, 2) << 2, 0, 0, 4).finished();
    const LinearSolution d = solve_linear(a, (Matrix(2, 1) << 2, 4).finished());
    EXPECT_NEAR(d.x(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(d.x(1, 0), 1.0, 1e-15);
    EXPECT_THROW(solve_linear(Matrix::Identity(2, 2), Matrix::Ones(3, 1)), ConfigError);
}

TEST(SolveLinear, WellConditionedResidual) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    Matrix a(10, 10), b(10, 4);
    for (auto* m : {&a, &b})
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = nd(rng);
    a += 10.0 * Matrix::Identity(10, 10);
    const LinearSolution s = solve_linear(a, b);
    EXPECT_FALSE(s.used_fallback);
    EXPECT_LE((a * s.x - b).norm(), 1e-10);
}

TEST(SolveLinear, DuplicatedRowFallsBack) {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd;
    for (RankFallback fb : {RankFallback::svd, RankFallback::cod}) {
        Matrix a(6, 6), b(6, 2);
        for (auto* m : {&a, &b})
            for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = nd(rng);
        a.row(5) = a.row(2);
        b.row(5) = b.row(2);  // consistent system
        const LinearSolution s = solve_linear(a, b, fb);
        EXPECT_TRUE(s.used_fallback);
        ASSERT_TRUE(s.x.allFinite());
        // residual projected on the row space of A
        Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullU);
        const Matrix u = svd.matrixU().leftCols(5);
        EXPECT_LE((u.transpose() * (a * s.x - b)).norm(), 1e-8);
        EXPECT_LE((a * s.x - b).norm(), 1e-8);
    }
}

TEST(SolveLinear, FallbacksAgreeOnMinimumNormSolution) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd;
    Matrix u(8, 3), v(8, 3), b(8, 2);
    for (auto* m : {&u, &v, &b})
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = nd(rng);
    const Matrix a = u * v.transpose();  // rank 3
    const Matrix x1 = solve_linear(a, b, RankFallback::svd).x;
    const Matrix x2 = solve_linear(a, b, RankFallback::cod).x;
    EXPECT_LE((x1 - x2).norm(), 1e-8 * (1.0 + x1.norm()));
}

TEST(Newton, LinearScalar) {
    auto f = [](const Vector& b) -> Vector { return b.array() - 1.0; };
    const SolveReport r = newton_solve(f, Vector::Zero(1));
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 1);
    EXPECT_NEAR(r.root(0), 1.0, 1e-10);
    EXPECT_LE(r.final_norm, 1e-8);
}

TEST(Newton, QuadraticSystem) {
    auto f = [](const Vector& b) -> Vector { return (Vector(2) << b(0) * b(0) - 4.0, b(1)).finished(); };
    const SolveReport r = newton_solve(f, (Vector(2) << 1.0, 1.0).finished());
    ASSERT_TRUE(r.converged) << r.message;
    EXPECT_NEAR(r.root(0), 2.0, 1e-8);
    EXPECT_NEAR(r.root(1), 0.0, 1e-8);
    EXPECT_EQ(r.jacobian.rows(), 2);
    EXPECT_EQ(r.jacobian_at.size(), 2);
}

TEST(Newton, AnyLinearSystemWithinTwoIterations) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 20; ++t) {
        Matrix a(4, 4);
        Vector c(4), x0(4);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
        a += 4.0 * Matrix::Identity(4, 4);
        for (Eigen::Index i = 0; i < 4; ++i) {
            c(i) = nd(rng);
            x0(i) = nd(rng);
        }
        auto f = [&](const Vector& b) -> Vector { return a * b - c; };
        const SolveReport r = newton_solve(f, x0);
        EXPECT_TRUE(r.converged);
        EXPECT_LE(r.iterations, 2);
    }
}

TEST(Newton, NonConvergenceIsReportedNotThrown) {
    // no real root
    auto f = [](const Vector& b) -> Vector { return (Vector(1) << b(0) * b(0) + 1.0).finished(); };
    NewtonOptions opt;
    opt.max_iter = 5;
    const SolveReport r = newton_solve(f, (Vector(1) << 0.5).finished(), opt);
    EXPECT_FALSE(r.converged);
    EXPECT_FALSE(r.message.empty());
    EXPECT_GT(r.final_norm, opt.tol);
}

TEST(Newton, ConvergedImpliesSmallNorm) {
    auto f = [](const Vector& b) -> Vector { return (Vector(1) << std::exp(b(0)) - 3.0).finished(); };
    const SolveReport r = newton_solve(f, Vector::Zero(1));
    ASSERT_TRUE(r.converged);
    EXPECT_LE(r.final_norm, 1e-8);
    EXPECT_NEAR(r.root(0), std::log(3.0), 1e-8);
}

TEST(FdJacobian, MatchesAnalytic) {
    auto f = [](const Vector& b) -> Vector {
        return (Vector(2) << std::sin(b(0)) * b(1), b(0) * b(0) + std::exp(b(1))).finished();
    };
    const Vector t = (Vector(2) << 0.3, -0.7).finished();
    const Matrix j = fd_jacobian(f, t);
    const Matrix exact = (Matrix(2, 2) << std::cos(0.3) * -0.7, std::sin(0.3), 0.6, std::exp(-0.7)).finished();
    EXPECT_LE((j - exact).lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(AdaptiveQuadrature, Examples) {
    EXPECT_NEAR(adaptive_quadrature([](double) { return 1.0; }, 0.0, 1.0), 1.0, 1e-12);
    EXPECT_NEAR(adaptive_quadrature([](double y) { return y * y; }, 0.0, 1.0), 1.0 / 3.0, 1e-12);
    const double mass = adaptive_quadrature(
        [](double y) { return std::exp(-0.5 * y * y) / std::sqrt(2.0 * std::numbers::pi); }, -8.0, 8.0);
    EXPECT_NEAR(mass, 1.0, 1e-10);
}

TEST(AdaptiveQuadrature, DepthCapRaises) {
    // unbounded integrand near 0 with an unreachable tolerance
    EXPECT_THROW(adaptive_quadrature([](double y) { return 1.0 / std::sqrt(std::abs(y) + 1e-300); }, -1.0, 1.0, 1e-300),
                 NumericalError);
}

TEST(NormalCdf, Values) {
    EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
    EXPECT_NEAR(normal_cdf(1.959963984540054), 0.975, 1e-15);
    EXPECT_NEAR(normal_cdf(-1.0), 0.15865525393145707, 1e-15);
}
