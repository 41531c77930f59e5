#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "spire/estimators.hpp"
#include "spire/simulation.hpp"

using namespace spire;

namespace {

Dataset uncensored(const Dataset& d) {
    std::vector<Observation> rows;
    for (const auto& r : d.rows()) rows.push_back(r);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].delta = 1;
    return Dataset(std::move(rows));
}

// ||mean||_inf / MC-SE per coordinate
double standardized_mean(const Matrix& rows) {
    const auto n = static_cast<double>(rows.rows());
    const Vector mean = rows.colwise().mean().transpose();
    double worst = 0.0;
    for (Eigen::Index k = 0; k < rows.cols(); ++k) {
        const double sd = std::sqrt((rows.col(k).array() - mean(k)).square().sum() / (n - 1.0));
        worst = std::max(worst, std::abs(mean(k)) / (sd / std::sqrt(n)));
    }
    return worst;
}

}  // namespace

TEST(Scores, CompleteCaseAndIpw) {
    const ModelSpec spec = ModelSpec::controlled();
    const OutcomeParams p((Vector(3) << 0.5, 0.2, -0.2).finished(), 1.3);
    const Observation ev{1.1, 0.4, 1, {1.0}};
    const Observation cens{1.1, 0.4, 0, {1.0}};
    EXPECT_EQ(score_cc(spec, p, cens), Vector::Zero(4));
    EXPECT_EQ(score_cc(spec, p, ev), score_outcome(spec, p, 1.1, 0.4, ev.z));
    const IpwWeightFn one = [](double, std::span<const double>) { return 1.0; };
    const IpwWeightFn half = [](double, std::span<const double>) { return 0.5; };
    EXPECT_EQ(score_ipw(spec, p, ev, one), score_cc(spec, p, ev));
    EXPECT_EQ(score_ipw(spec, p, cens, half), Vector::Zero(4));
    EXPECT_LE((score_ipw(spec, p, ev, half) - 2.0 * score_cc(spec, p, ev)).norm(), 1e-15);
}

TEST(Scores, WorkingScoreMatchesLikelihoodGradient) {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 10; ++t) {
        const oracle::Instance in = oracle::random_instance(rng, 6, t % 2 == 1);
        const Observation obs{0.4 + 0.1 * t, in.c, 0, in.z};
        const Vector s = score_working(in.spec, in.params, obs, *in.wm);
        // log sum_j p_j f(y | x_j, z) over x_j > c
        const Vector p = in.wm->weights(in.c, in.z);
        const Grid& g = in.wm->grid();
        auto loglik = [&](const Vector& theta) {
            const OutcomeParams pr = OutcomeParams::unpack(theta);
            double acc = 0.0;
            for (std::size_t j = 0; j < g.size(); ++j)
                if (g.points[j] > in.c)
                    acc += p(static_cast<Eigen::Index>(j)) *
                           std::exp(log_density_outcome(in.spec, pr, obs.y, g.points[j], in.z));
            return std::log(acc);
        };
        const Vector theta = in.params.pack();
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
            const double h = 1e-5 * (1.0 + std::abs(theta(k)));
            Vector up = theta, dn = theta;
            up(k) += h;
            dn(k) -= h;
            const double fd = (loglik(up) - loglik(dn)) / (2.0 * h);
            EXPECT_NEAR(s(k), fd, 1e-6 * std::max(1.0, std::abs(fd)));
        }
        const Observation ev{0.3, 0.7, 1, in.z};
        EXPECT_EQ(score_working(in.spec, in.params, ev, *in.wm), score_outcome(in.spec, in.params, 0.3, 0.7, in.z));
    }
}

TEST(Scores, SingleActivePointCollapses) {
    const ModelSpec spec = ModelSpec::controlled();
    const OutcomeParams p((Vector(3) << 0.5, 0.2, -0.2).finished(), 1.0);
    const DiscreteWorkingModel wm =
        uniform_working_model(Grid{{0.0, 0.5, 1.0, 1.5}}, 0.0, 1.5);
    const Observation obs{0.8, 1.2, 0, {0.0}};
    EXPECT_LE((score_working(spec, p, obs, wm) - score_outcome(spec, p, 0.8, 1.5, obs.z)).norm(), 1e-14);
}

TEST(A0System, MatchesAdaptiveOracle) {
    std::mt19937_64 rng(2024);
    const QuadratureRule rule = gauss_hermite(40);
    for (int t = 0; t < 20; ++t) {
        const oracle::Instance in = oracle::random_instance(rng, 3, t % 2 == 1);
        const A0System sys = build_a0_system(in.spec, in.params, in.c, in.z, *in.wm, rule);
        const oracle::SystemOracle ref = oracle::a0_system(in);
        ASSERT_EQ(sys.active, ref.active);
        EXPECT_LE((sys.a - ref.a).lpNorm<Eigen::Infinity>(), 1e-6) << "instance " << t;
        EXPECT_LE((sys.b - ref.b).lpNorm<Eigen::Infinity>(), 1e-6) << "instance " << t;
    }
}

TEST(A0System, RowsSumToOne) {
    std::mt19937_64 rng(7);
    const QuadratureRule rule = gauss_hermite(40);
    for (int t = 0; t < 100; ++t) {
        const oracle::Instance in = oracle::random_instance(rng, 3 + t % 20, t % 3 == 0);
        const A0System sys = build_a0_system(in.spec, in.params, in.c, in.z, *in.wm, rule);
        const Vector sums = sys.a.rowwise().sum();
        EXPECT_LE((sums.array() - 1.0).abs().maxCoeff(), 1e-8) << "instance " << t;
    }
}

TEST(A0System, SingleActivePoint) {
    const ModelSpec spec = ModelSpec::controlled();
    const OutcomeParams p((Vector(3) << 0.5, 0.2, -0.2).finished(), 1.4);
    const DiscreteWorkingModel wm = uniform_working_model(Grid{{0.0, 0.5, 1.0}}, 0.0, 1.0);
    const double z[] = {1.0};
    const A0System sys = build_a0_system(spec, p, 0.7, z, wm, gauss_hermite(40));
    ASSERT_EQ(sys.active, std::vector<int>{2});
    EXPECT_NEAR(sys.a(0, 0), 1.0, 1e-14);
    EXPECT_LE(sys.b.lpNorm<Eigen::Infinity>(), 1e-12);
    const A0Solution sol = solve_a0(sys);
    EXPECT_LE(sol.values.lpNorm<Eigen::Infinity>(), 1e-12);
    // the efficient score of this row is S^F at the single support point
    A0Cache cache;
    const Observation obs{0.9, 0.7, 0, {1.0}};
    const Vector eff = efficient_score(spec, p, obs, wm, cache, gauss_hermite(40));
    EXPECT_LE((eff - score_outcome(spec, p, 0.9, 1.0, obs.z)).norm(), 1e-12);
}

TEST(A0System, OutcomeFreeOfXGivesConstantRows) {
    const ModelSpec spec = ModelSpec::controlled();
    const OutcomeParams p((Vector(3) << 0.5, 0.0, -0.2).finished(), 0.8);
    const DiscreteWorkingModel wm = uniform_working_model(Grid{{0.0, 0.25, 0.5, 0.75, 1.0}}, 0.0, 1.0);
    const double z[] = {0.0};
    const A0System sys = build_a0_system(spec, p, 0.3, z, wm, gauss_hermite(40));
    ASSERT_EQ(sys.active.size(), 3u);
    EXPECT_LE((sys.a.array() - 1.0 / 3.0).abs().maxCoeff(), 1e-14);
}

TEST(A0System, IdentitySolve) {
    A0System sys;
    sys.a = Matrix::Identity(3, 3);
    sys.b = (Matrix(3, 2) << 1, 2, 3, 4, 5, 6).finished();
    sys.active = {4, 5, 6};
    const A0Solution sol = solve_a0(sys);
    EXPECT_EQ(sol.values, sys.b.transpose());
    EXPECT_EQ(sol.active_indices, sys.active);
    EXPECT_FALSE(sol.condition_flag);
}

TEST(EfficientScore, StructuralInvariants) {
    std::mt19937_64 rng(13);
    const QuadratureRule rule = gauss_hermite(40);
    A0Cache cache;
    for (int t = 0; t < 30; ++t) {
        const oracle::Instance in = oracle::random_instance(rng, 8, t % 2 == 0);
        // uncensored rows are bit-identical to S^F
        const Observation ev{0.2 * t, in.c + 0.1, 1, in.z};
        const Vector s = efficient_score(in.spec, in.params, ev, *in.wm, cache, rule);
        const Vector sf = score_outcome(in.spec, in.params, ev.y, ev.w, ev.z);
        ASSERT_EQ(s.size(), sf.size());
        EXPECT_EQ(std::memcmp(s.data(), sf.data(), sizeof(double) * static_cast<std::size_t>(s.size())), 0);
        // no a0 stored at or below c
        const A0Solution& a0 = cache.get(in.spec, in.params, in.c, in.z, *in.wm, rule);
        ASSERT_EQ(static_cast<std::size_t>(a0.values.cols()), a0.active_indices.size());
        for (int j : a0.active_indices) EXPECT_GT(in.wm->grid().points[static_cast<std::size_t>(j)], in.c);
        EXPECT_TRUE(a0.values.allFinite());
    }
}

TEST(EfficientScore, ConditionalMeanZeroOnEverySupportPoint) {
    std::mt19937_64 rng(99);
    const QuadratureRule rule = gauss_hermite(40);
    for (int t = 0; t < 8; ++t) {
        const oracle::Instance in = oracle::random_instance(rng, 5, t % 2 == 1);
        A0Cache cache;
        const RowSupport s = row_support(*in.wm, in.c, in.z);
        const double sd = std::sqrt(in.params.sigma2);
        for (std::size_t k = 0; k < s.size(); ++k) {
            const double mu = outcome_mean(in.spec, in.params, s.x[k], in.z);
            for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(in.spec.n_params()); ++r) {
                const double v = adaptive_quadrature(
                    [&](double y) {
                        const Observation obs{y, in.c, 0, in.z};
                        return efficient_score(in.spec, in.params, obs, *in.wm, cache, rule)(r) *
                               oracle::normal_pdf(y, mu, in.params.sigma2);
                    },
                    mu - 12.0 * sd, mu + 12.0 * sd, 1e-9);
                EXPECT_NEAR(v, 0.0, 1e-6) << "instance " << t << " point " << k << " coordinate " << r;
            }
        }
    }
}

TEST(Fit, ZeroCensoringMatchesLeastSquares) {
    Rng rng = substream(3, 0);
    const SimulatedData sim = generate_controlled(400, 0.0, rng);
    const Dataset data = uncensored(sim.data);
    const ModelSpec spec = ModelSpec::controlled();
    const Vector ols = oracle::ols(data, spec);
    auto wm = std::make_shared<const DiscreteWorkingModel>(km_density_on_grid(data, make_grid(data, 20), KmConfig{}));
    const IpwWeightFn w = km_censoring_weight(data, KmConfig{});
    for (const EstimatorKind& kind :
         {EstimatorKind::cc(), EstimatorKind::ipw(w), EstimatorKind::mle(wm), EstimatorKind::spire(wm)}) {
        const EstimationResult r = fit(data, spec, kind);
        ASSERT_TRUE(r.converged()) << to_string(kind.type) << ": " << r.report.message;
        EXPECT_LE((r.theta() - ols).lpNorm<Eigen::Infinity>(), 1e-6) << to_string(kind.type);
        EXPECT_EQ(r.dropped_rows, 0u);
    }
}

TEST(Fit, CompleteCaseSandwichIsTheRobustOlsCovariance) {
    Rng rng = substream(8, 0);
    const SimulatedData sim = generate_controlled(2000, 0.0, rng);
    const Dataset data = uncensored(sim.data);
    const ModelSpec spec = ModelSpec::controlled();
    const EstimationResult r = fit(data, spec, EstimatorKind::cc());
    ASSERT_TRUE(r.converged());
    const Matrix hc0 = oracle::ols_hc0(data, spec);
    const Matrix ours = r.covariance.topLeftCorner(3, 3) / static_cast<double>(data.size());
    for (Eigen::Index i = 0; i < 3; ++i) {
        EXPECT_NEAR(ours(i, i), hc0(i, i), 0.05 * hc0(i, i));
        EXPECT_NEAR(r.ase(i), std::sqrt(hc0(i, i)), 0.05 * std::sqrt(hc0(i, i)));
    }
}

TEST(Fit, InterceptOnlyInformationIdentity) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(1.0, std::sqrt(2.5));
    std::vector<Observation> rows;
    for (int i = 0; i < 20000; ++i) rows.push_back({nd(rng), 0.0, 1, {0.0}});
    const Dataset data(std::move(rows));
    const EstimationResult r = fit(data, ModelSpec({Term::intercept()}), EstimatorKind::cc());
    ASSERT_TRUE(r.converged());
    EXPECT_NEAR(r.covariance(0, 0), 2.5, 0.05 * 2.5);
    // sigma2 block: var of sqrt(n) sigma2_hat is 2 sigma^4 for normal data
    EXPECT_NEAR(r.covariance(1, 1), 2.0 * 2.5 * 2.5, 0.1 * 2.0 * 2.5 * 2.5);
}

TEST(Fit, SandwichIsSymmetricPsd) {
    Rng rng = substream(9, 0);
    const SimulatedData sim = generate_controlled(500, 0.0, rng);
    const auto wm = design_working_model(DesignParams{}, "true", sim, 30, KmConfig{});
    const EstimationResult r = fit(sim.data, ModelSpec::controlled(), EstimatorKind::spire(wm));
    ASSERT_TRUE(r.converged());
    EXPECT_LE((r.covariance - r.covariance.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(r.covariance);
    EXPECT_GE(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(Fit, SingularJacobianIsAnError) {
    auto rows = [](const Vector&) { return Matrix::Ones(10, 2); };
    EXPECT_THROW(sandwich_covariance(rows, Vector::Zero(2)), NumericalError);
}

TEST(Fit, IpwRootUnchangedByScalingWeights) {
    Rng rng = substream(10, 0);
    const DesignParams d{};
    const SimulatedData sim = generate_controlled(800, 0.0, rng);
    const IpwWeightFn w = design_true_censoring_weight(d);
    const IpwWeightFn w2 = [w](double x, std::span<const double> z) { return 2.0 * w(x, z); };
    FitOptions opt;
    opt.newton.tol = 1e-12;
    const EstimationResult a = fit(sim.data, ModelSpec::controlled(), EstimatorKind::ipw(w), opt);
    const EstimationResult b = fit(sim.data, ModelSpec::controlled(), EstimatorKind::ipw(w2), opt);
    ASSERT_TRUE(a.converged()) << a.report.message;
    ASSERT_TRUE(b.converged()) << b.report.message;
    EXPECT_LE((a.params.beta - b.params.beta).lpNorm<Eigen::Infinity>(), 1e-8);
}

TEST(Fit, DroppedRowsAreCounted) {
    Rng rng = substream(11, 0);
    const SimulatedData sim = generate_controlled(300, 0.0, rng);
    const Grid grid = make_grid(sim.data, 20);
    // no working mass in the upper half of the grid
    const double mid = 0.5 * (grid.lower() + grid.upper());
    auto wm = std::make_shared<const DiscreteWorkingModel>(uniform_working_model(grid, grid.lower(), mid));
    std::size_t expect = 0;
    for (const auto& r : sim.data.rows())
        if (r.delta == 0 && grid.first_above(r.w) < grid.size() && grid.points[grid.first_above(r.w)] > mid) ++expect;
    ASSERT_GT(expect, 0u);
    const EstimationResult r = fit(sim.data, ModelSpec::controlled(), EstimatorKind::mle(wm));
    EXPECT_EQ(r.dropped_rows, expect);
    EXPECT_FALSE(r.warnings.empty());
}

TEST(Fit, NonConvergenceIsReported) {
    Rng rng = substream(12, 0);
    const SimulatedData sim = generate_controlled(300, 0.0, rng);
    const auto wm = design_working_model(DesignParams{}, "mis", sim, 20, KmConfig{});
    FitOptions opt;
    opt.newton.max_iter = 1;
    opt.newton.tol = 1e-15;
    EstimationResult r;
    ASSERT_NO_THROW(r = fit(sim.data, ModelSpec::controlled(), EstimatorKind::mle(wm), opt));
    EXPECT_FALSE(r.converged());
    EXPECT_FALSE(r.report.message.empty());
    EXPECT_TRUE(r.ase.array().isNaN().all());
}

TEST(Fit, KindValidation) {
    EXPECT_THROW(EstimatorKind::spire(nullptr).validate(), ConfigError);
    EXPECT_THROW(EstimatorKind::ipw({}).validate(), ConfigError);
    EXPECT_THROW(parse_estimator_type("ols"), ConfigError);
    EXPECT_EQ(parse_estimator_type("spire"), EstimatorType::spire);
}

// Average per-row score at the true parameters over a large sample.
class MeanZero : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        Rng rng = substream(2718, 0);
        sim_ = new SimulatedData(generate_controlled(20000, 0.0, rng));
    }
    static void TearDownTestSuite() {
        delete sim_;
        sim_ = nullptr;
    }
    static double check(const EstimatorKind& kind) {
        const ScoreEngine engine(sim_->data, ModelSpec::controlled(), kind);
        return standardized_mean(engine.row_scores(design_truth(Design::controlled)));
    }
    static std::shared_ptr<const DiscreteWorkingModel> working(const char* choice) {
        return design_working_model(DesignParams{}, choice, *sim_, 50, KmConfig{});
    }
    static SimulatedData* sim_;
};

SimulatedData* MeanZero::sim_ = nullptr;

TEST_F(MeanZero, CompleteCase) { EXPECT_LE(check(EstimatorKind::cc()), 3.0); }

TEST_F(MeanZero, Ipw) {
    EXPECT_LE(check(EstimatorKind::ipw(design_true_censoring_weight(DesignParams{}))), 3.0);
}

TEST_F(MeanZero, MleUnderTrueWorkingModel) { EXPECT_LE(check(EstimatorKind::mle(working("true"))), 3.0); }

TEST_F(MeanZero, SpireUnderTrueWorkingModel) { EXPECT_LE(check(EstimatorKind::spire(working("true"))), 3.0); }

TEST_F(MeanZero, SpireUnderMisspecifiedWorkingModel) {
    EXPECT_LE(check(EstimatorKind::spire(working("mis"))), 3.0);
}

TEST_F(MeanZero, MleFailsUnderMisspecifiedWorkingModel) {
    EXPECT_GT(check(EstimatorKind::mle(working("mis"))), 5.0);
}
