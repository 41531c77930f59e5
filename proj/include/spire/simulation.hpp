#pragma once

// Data generators for the controlled, realistic and power-study designs, the
// working models and censoring weights each design supports, and the Monte
// Carlo drivers that aggregate Mean / ESE / ASE / coverage and test rejection
// rates.  Replicates draw from independent seeded substreams so results do not
// depend on the number of worker threads.

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <atomic>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "spire/error.hpp"
#include "spire/estimators.hpp"
#include "spire/inference.hpp"
#include "spire/model.hpp"
#include "spire/working_models.hpp"

namespace spire {

enum class Design { controlled, realistic, power };

inline std::string to_string(Design d) {
    switch (d) {
        case Design::controlled: return "controlled";
        case Design::realistic: return "realistic";
        case Design::power: return "power";
    }
    return "?";
}

inline Design parse_design(std::string_view s) {
    if (s == "controlled") return Design::controlled;
    if (s == "realistic") return Design::realistic;
    if (s == "power") return Design::power;
    throw ConfigError("unknown design '" + std::string(s) + "' (expected controlled, realistic or power)");
}

/// Generator parameters.  mu shifts X in the controlled and power designs;
/// alpha and sigma are the power design's dependence and precision knobs.
struct DesignParams {
    Design design = Design::controlled;
    double mu = 0.0;
    double alpha = 0.0;
    double sigma = 2.0;

    [[nodiscard]] std::string label() const {
        char buf[96];
        switch (design) {
            case Design::controlled: std::snprintf(buf, sizeof buf, "controlled(mu=%g)", mu); break;
            case Design::realistic: std::snprintf(buf, sizeof buf, "realistic"); break;
            case Design::power:
                std::snprintf(buf, sizeof buf, "power(alpha=%g,mu=%.6g,sigma=%g)", alpha, mu, sigma);
                break;
        }
        return buf;
    }
};

inline ModelSpec design_model(Design d) {
    return d == Design::realistic ? ModelSpec::realistic() : ModelSpec::controlled();
}

/// True (beta, sigma2) of each design.
inline Vector design_truth(Design d) {
    if (d == Design::realistic) return (Vector(6) << 1.3, -1.8, -1.5, 0.1, 0.2, 1.0).finished();
    return (Vector(4) << 0.5, 0.2, -0.2, 1.0).finished();
}

inline std::vector<std::string> design_param_names(Design d) {
    if (d == Design::realistic) return {"beta0", "beta1", "beta2", "beta3", "beta4", "sigma2"};
    return {"beta0", "beta1", "beta2", "sigma2"};
}

/// Generated data with the latent covariate and censoring times retained.
struct SimulatedData {
    Dataset data;
    std::vector<double> x;
    std::vector<double> c;
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t v) {
    v += 0x9E3779B97F4A7C15ULL;
    v = (v ^ (v >> 30)) * 0xBF58476D1CE4E5B9ULL;
    v = (v ^ (v >> 27)) * 0x94D049BB133111EBULL;
    return v ^ (v >> 31);
}

/// Independent generator for replicate r of a run seeded with seed.
inline Rng substream(std::uint64_t seed, std::uint64_t r) {
    return Rng(splitmix64(splitmix64(seed) ^ splitmix64(r + 0x51ED270B27A3C9F1ULL)));
}

namespace detail {

inline double draw_beta(Rng& rng, double a, double b) {
    const double g1 = std::gamma_distribution<double>(a, 1.0)(rng);
    const double g2 = std::gamma_distribution<double>(b, 1.0)(rng);
    return g1 / (g1 + g2);
}

inline double normal_interval(double u1, double u2) {
    // P(u1 < N(0,1) < u2) without cancellation in the upper tail
    if (u1 > 0.0) return normal_cdf(-u1) - normal_cdf(-u2);
    return normal_cdf(u2) - normal_cdf(u1);
}

inline double log_beta_pdf(double u, double a, double b) {
    if (!(u > 0.0 && u < 1.0)) return -std::numeric_limits<double>::infinity();
    return (a - 1.0) * std::log(u) + (b - 1.0) * std::log1p(-u) + std::lgamma(a + b) - std::lgamma(a) -
           std::lgamma(b);
}

inline SimulatedData assemble(std::vector<Observation> rows, std::vector<double> x, std::vector<double> c) {
    return {Dataset(std::move(rows)), std::move(x), std::move(c)};
}

}  // namespace detail

/// Z ~ Bernoulli(0.5), C | Z ~ U(Z - 0.5, Z + 0.5), X | C, Z ~ N(C - mu, (Z + 1) / 4),
/// Y = 0.5 + 0.2 X - 0.2 Z + N(0, 1).
inline SimulatedData generate_controlled(int n, double mu, Rng& rng) {
    std::bernoulli_distribution bern(0.5);
    std::uniform_real_distribution<double> unif(-0.5, 0.5);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::vector<Observation> rows(static_cast<std::size_t>(n));
    std::vector<double> xs(rows.size()), cs(rows.size());
    for (auto i = std::size_t{0}; i < rows.size(); ++i) {
        const double z = bern(rng) ? 1.0 : 0.0;
        const double c = z + unif(rng);
        const double x = c - mu + std::sqrt((z + 1.0) / 4.0) * stdnorm(rng);
        const double y = 0.5 + 0.2 * x - 0.2 * z + stdnorm(rng);
        rows[i] = {y, std::min(x, c), x <= c ? 1 : 0, {z}};
        xs[i] = x;
        cs[i] = c;
    }
    return detail::assemble(std::move(rows), std::move(xs), std::move(cs));
}

/// Beta-distributed covariates and times calibrated to an observational
/// cohort; about 83% of X are censored.  Times are measured from entry z0,
/// and the shape of X - z0 grows with the exit time C - z0.
inline SimulatedData generate_realistic(int n, Rng& rng) {
    std::bernoulli_distribution bern(0.5);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::vector<Observation> rows(static_cast<std::size_t>(n));
    std::vector<double> xs(rows.size()), cs(rows.size());
    for (auto i = std::size_t{0}; i < rows.size(); ++i) {
        const double z0 = detail::draw_beta(rng, 1.8874, 3.8470);
        const double z1 = detail::draw_beta(rng, 3.5383, 11.4963);
        const double z2 = bern(rng) ? 1.0 : 0.0;
        const double u = detail::draw_beta(rng, 0.3 + z1, 1.1 + z2);
        const double c = u + z0;
        const double x = detail::draw_beta(rng, 1.6 + 5.0 * u, 2.0 + z1 + z2) + z0;
        const double y = 1.3 - 1.8 * (x - z0) - 1.5 * z1 + 0.1 * z2 + 0.2 * (x - z0) * z2 + stdnorm(rng);
        rows[i] = {y, std::min(x, c), x <= c ? 1 : 0, {z0, z1, z2}};
        xs[i] = x;
        cs[i] = c;
    }
    return detail::assemble(std::move(rows), std::move(xs), std::move(cs));
}

/// Z ~ Bernoulli(0.5), C | Z ~ U(Z - 1, Z + 1), X | C, Z ~ N(alpha C + mu, (Z + 1) / sigma^2);
/// alpha = 0 makes X and C independent given Z.
inline SimulatedData generate_power(int n, double alpha, double mu, double sigma, Rng& rng) {
    if (!(sigma > 0.0)) throw ConfigError("power design needs sigma > 0");
    std::bernoulli_distribution bern(0.5);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::normal_distribution<double> stdnorm(0.0, 1.0);
    std::vector<Observation> rows(static_cast<std::size_t>(n));
    std::vector<double> xs(rows.size()), cs(rows.size());
    for (auto i = std::size_t{0}; i < rows.size(); ++i) {
        const double z = bern(rng) ? 1.0 : 0.0;
        const double c = z + unif(rng);
        const double x = alpha * c + mu + std::sqrt(z + 1.0) / sigma * stdnorm(rng);
        const double y = 0.5 + 0.2 * x - 0.2 * z + stdnorm(rng);
        rows[i] = {y, std::min(x, c), x <= c ? 1 : 0, {z}};
        xs[i] = x;
        cs[i] = c;
    }
    return detail::assemble(std::move(rows), std::move(xs), std::move(cs));
}

inline SimulatedData generate(const DesignParams& d, int n, Rng& rng) {
    switch (d.design) {
        case Design::controlled: return generate_controlled(n, d.mu, rng);
        case Design::realistic: return generate_realistic(n, rng);
        case Design::power: return generate_power(n, d.alpha, d.mu, d.sigma, rng);
    }
    throw ConfigError("unknown design");
}

// ---------------------------------------------------------------------------
// Censoring rates and calibration
// ---------------------------------------------------------------------------

/// P(X > C) in the controlled design.
inline double controlled_censoring_rate(double mu) {
    return 0.5 * normal_cdf(-mu / std::sqrt(0.25)) + 0.5 * normal_cdf(-mu / std::sqrt(0.5));
}

/// P(X > C) in the power design, integrating over C | Z.
inline double power_censoring_rate(double alpha, double mu, double sigma) {
    double total = 0.0;
    for (double z : {0.0, 1.0}) {
        const double sd = std::sqrt(z + 1.0) / sigma;
        auto f = [&](double c) { return normal_cdf((mu + (alpha - 1.0) * c) / sd); };
        total += 0.5 * boost::math::quadrature::gauss<double, 30>::integrate(f, z - 1.0, z + 1.0) / 2.0;
    }
    return total;
}

/// mu giving the target censoring rate in the power design (bisection).
inline double calibrate_power_mu(double alpha, double sigma, double target = 0.80) {
    double lo = -50.0, hi = 50.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (power_censoring_rate(alpha, mid, sigma) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Working models and censoring weights per design
// ---------------------------------------------------------------------------

/// Working-model choices: "true" (the generating density of X | C, Z),
/// "mis"/"unif" (uniform; over sample mean +/- 3 SD of X in the controlled and
/// power designs, over [0, 1] in the realistic design) and "km" (localized
/// Kaplan-Meier of X | Z, ignoring C).
inline std::shared_ptr<const DiscreteWorkingModel> design_working_model(
    const DesignParams& d, const std::string& choice, const SimulatedData& sim, int grid_m,
    const KmConfig& km) {
    if (choice == "km")
        return std::make_shared<const DiscreteWorkingModel>(
            km_density_on_grid(sim.data, make_grid(sim.data, grid_m), km));
    if (choice == "mis" || choice == "unif") {
        if (d.design == Design::realistic)
            return std::make_shared<const DiscreteWorkingModel>(
                uniform_working_model(make_grid(sim.data, grid_m), 0.0, 1.0));
        if (sim.x.size() < 2) throw ConfigError("the 'mis' working model needs the latent x sample");
        double mean = 0.0, sq = 0.0;
        for (double v : sim.x) mean += v;
        mean /= static_cast<double>(sim.x.size());
        for (double v : sim.x) sq += (v - mean) * (v - mean);
        const double sd = std::sqrt(sq / static_cast<double>(sim.x.size() - 1));
        // the grid covers the whole uniform support, not just the observed w
        return std::make_shared<const DiscreteWorkingModel>(uniform_working_model(
            make_grid(sim.data, grid_m, mean + 3.0 * sd), mean - 3.0 * sd, mean + 3.0 * sd));
    }
    if (choice != "true") throw ConfigError("unknown working model '" + choice + "'");
    // latent x is unknown for real data; then the grid stops at max w
    Grid grid = sim.x.empty() ? make_grid(sim.data, grid_m)
                              : make_grid(sim.data, grid_m, *std::max_element(sim.x.begin(), sim.x.end()));
    switch (d.design) {
        case Design::controlled: {
            const double mu = d.mu;
            return std::make_shared<const DiscreteWorkingModel>(discretize_parametric_log(
                [mu](double x, double c, std::span<const double> z) {
                    const double var = (z[0] + 1.0) / 4.0;
                    const double r = x - (c - mu);
                    return -0.5 * r * r / var - 0.5 * std::log(var);
                },
                std::move(grid), true));
        }
        case Design::power: {
            const double mu = d.mu, alpha = d.alpha, s2 = d.sigma * d.sigma;
            return std::make_shared<const DiscreteWorkingModel>(discretize_parametric_log(
                [mu, alpha, s2](double x, double c, std::span<const double> z) {
                    const double var = (z[0] + 1.0) / s2;
                    const double r = x - (alpha * c + mu);
                    return -0.5 * r * r / var - 0.5 * std::log(var);
                },
                std::move(grid), alpha != 0.0));
        }
        case Design::realistic:
            return std::make_shared<const DiscreteWorkingModel>(discretize_parametric_log(
                [](double x, double c, std::span<const double> z) {
                    return detail::log_beta_pdf(x - z[0], 1.6 + 5.0 * (c - z[0]), 2.0 + z[1] + z[2]);
                },
                std::move(grid), true));
    }
    throw ConfigError("unknown design");
}

/// pr(C >= x | x, z) implied by the generating model.
inline IpwWeightFn design_true_censoring_weight(const DesignParams& d) {
    switch (d.design) {
        case Design::controlled:
        case Design::power: {
            const bool controlled = d.design == Design::controlled;
            const double alpha = controlled ? 1.0 : d.alpha;
            const double shift = controlled ? -d.mu : d.mu;
            const double half = controlled ? 0.5 : 1.0;
            const double s2 = controlled ? 4.0 : d.sigma * d.sigma;
            return [=](double x, std::span<const double> z) {
                const double a = z[0] - half, b = z[0] + half;
                if (x >= b) return 0.0;
                const double lo = std::max(a, x);
                if (alpha == 0.0) return (b - lo) / (b - a);
                const double sd = std::sqrt((z[0] + 1.0) / s2);
                auto u = [&](double c) { return (alpha * c - (x - shift)) / sd; };
                double num = detail::normal_interval(u(lo), u(b));
                double den = detail::normal_interval(u(a), u(b));
                if (alpha < 0.0) {
                    num = detail::normal_interval(u(b), u(lo));
                    den = detail::normal_interval(u(b), u(a));
                }
                return den > 0.0 ? std::clamp(num / den, 0.0, 1.0) : 0.0;
            };
        }
        case Design::realistic:
            return [](double x, std::span<const double> z) {
                const double z0 = z[0], z1 = z[1], z2 = z[2];
                const double u_x = x - z0;
                if (u_x >= 1.0) return 0.0;
                boost::math::quadrature::tanh_sinh<double> ts;
                auto joint = [&](double u) {
                    return std::exp(detail::log_beta_pdf(u, 0.3 + z1, 1.1 + z2) +
                                    detail::log_beta_pdf(u_x, 1.6 + 5.0 * u, 2.0 + z1 + z2));
                };
                const double den = ts.integrate(joint, 0.0, 1.0);
                const double num = u_x <= 0.0 ? den : ts.integrate(joint, u_x, 1.0);
                return den > 0.0 ? std::clamp(num / den, 0.0, 1.0) : 0.0;
            };
    }
    throw ConfigError("unknown design");
}

// ---------------------------------------------------------------------------
// Monte Carlo driver
// ---------------------------------------------------------------------------

struct EstimatorChoice {
    EstimatorType type = EstimatorType::spire;
    std::string working = "true";  // ignored for CC

    [[nodiscard]] std::string working_label() const {
        return type == EstimatorType::cc ? "none" : working;
    }
};

/// "spire:true,mle:mis,cc" -> choices.
inline std::vector<EstimatorChoice> parse_estimator_choices(std::string_view text) {
    std::vector<EstimatorChoice> out;
    std::string token;
    std::stringstream ss{std::string(text)};
    while (std::getline(ss, token, ',')) {
        if (token.empty()) continue;
        const auto colon = token.find(':');
        EstimatorChoice ch;
        ch.type = parse_estimator_type(token.substr(0, colon));
        ch.working = colon == std::string::npos ? (ch.type == EstimatorType::cc ? "none" : "true")
                                                : token.substr(colon + 1);
        if (ch.type != EstimatorType::cc && ch.working != "true" && ch.working != "mis" &&
            ch.working != "unif" && ch.working != "km")
            throw ConfigError("unknown working model '" + ch.working + "' in '" + token + "'");
        out.push_back(ch);
    }
    if (out.empty()) throw ConfigError("no estimators given");
    return out;
}

struct SimulationConfig {
    DesignParams design;
    int n = 1000;
    int replicates = 1000;
    std::uint64_t seed = 1;
    std::vector<EstimatorChoice> estimators;
    int grid_m = 50;
    int quad_nodes = 40;
    double bandwidth = 0.05;
    double tol = 1e-8;
    int max_iter = 100;
    int threads = 1;

    void validate() const {
        if (n < 50) throw ConfigError("n must be at least 50");
        if (replicates < 1) throw ConfigError("N must be at least 1");
        if (estimators.empty()) throw ConfigError("no estimators configured");
        if (grid_m < 2) throw ConfigError("grid-m must be at least 2");
        if (quad_nodes < 2 || quad_nodes > 128) throw ConfigError("quad-nodes must lie in [2, 128]");
        if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
        if (!(tol > 0.0)) throw ConfigError("tol must be positive");
        if (max_iter < 1) throw ConfigError("max-iter must be at least 1");
        if (threads < 1) throw ConfigError("threads must be at least 1");
    }

    [[nodiscard]] FitOptions fit_options() const {
        FitOptions f;
        f.quad_nodes = quad_nodes;
        f.newton.tol = tol;
        f.newton.max_iter = max_iter;
        return f;
    }
};

struct EstimateRecord {
    Vector theta;
    Vector ase;
    bool converged = false;
};

struct ReplicateRecord {
    double censoring_rate = 0.0;
    std::vector<EstimateRecord> estimates;  // one per configured estimator
};

struct SummaryRow {
    std::string design;
    std::string estimator;
    std::string working;
    std::string param;
    double truth = 0.0;
    double mean = 0.0;
    std::optional<double> ese;  // absent with fewer than two converged replicates
    double ase = 0.0;
    double cov = 0.0;
    int converged = 0;
    int nonconverged = 0;
    bool flagged = false;  // more than 20% of fits failed
};

struct SummaryTable {
    std::vector<SummaryRow> rows;
    double mean_censoring = 0.0;
    double min_censoring = 0.0;
    double max_censoring = 0.0;

    [[nodiscard]] const SummaryRow& find(std::string_view estimator, std::string_view working,
                                         std::string_view param) const {
        for (const auto& r : rows)
            if (r.estimator == estimator && r.working == working && r.param == param) return r;
        throw ConfigError("no summary row for " + std::string(estimator) + ":" + std::string(working) +
                          " " + std::string(param));
    }
    [[nodiscard]] bool any_flagged() const {
        return std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.flagged; });
    }
};

/// Runs task(r) for r in [0, count) on `threads` workers.  Results must be
/// written to slot r so that the outcome is independent of scheduling.
template <class Task>
void parallel_for(int count, int threads, Task&& task) {
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (int r = next++; r < count; r = next++) {
            try {
                task(r);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    const int k = std::max(1, std::min(threads, count));
    if (k == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < k; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
}

/// Fits every configured estimator to one generated dataset.
inline ReplicateRecord run_replicate(const SimulationConfig& cfg, const SimulatedData& sim) {
    const ModelSpec spec = design_model(cfg.design.design);
    const KmConfig km{cfg.bandwidth};
    const FitOptions fopt = cfg.fit_options();
    ReplicateRecord rec;
    rec.censoring_rate = sim.data.censoring_rate();
    std::map<std::string, std::shared_ptr<const DiscreteWorkingModel>> models;
    for (const auto& choice : cfg.estimators) {
        EstimatorKind kind;
        auto model = [&]() {
            auto it = models.find(choice.working);
            if (it == models.end())
                it = models.emplace(choice.working, design_working_model(cfg.design, choice.working, sim,
                                                                         cfg.grid_m, km)).first;
            return it->second;
        };
        switch (choice.type) {
            case EstimatorType::cc: kind = EstimatorKind::cc(); break;
            case EstimatorType::ipw:
                kind = EstimatorKind::ipw(choice.working == "true" ? design_true_censoring_weight(cfg.design)
                                                                   : km_censoring_weight(sim.data, km));
                break;
            case EstimatorType::mle: kind = EstimatorKind::mle(model()); break;
            case EstimatorType::spire: kind = EstimatorKind::spire(model()); break;
        }
        EstimateRecord er;
        try {
            const EstimationResult res = fit(sim.data, spec, kind, fopt);
            er.converged = res.converged();
            er.theta = res.theta();
            er.ase = res.ase;
        } catch (const std::exception&) {
            er.converged = false;
        }
        rec.estimates.push_back(std::move(er));
    }
    return rec;
}

/// Mean / ESE / ASE / coverage from replicate records, in configuration order.
inline SummaryTable summarize(const SimulationConfig& cfg, const std::vector<ReplicateRecord>& reps) {
    constexpr double z975 = 1.959963984540054;
    SummaryTable table;
    const Vector truth = design_truth(cfg.design.design);
    const auto names = design_param_names(cfg.design.design);
    double cmin = 1.0, cmax = 0.0, csum = 0.0;
    for (const auto& r : reps) {
        csum += r.censoring_rate;
        cmin = std::min(cmin, r.censoring_rate);
        cmax = std::max(cmax, r.censoring_rate);
    }
    table.mean_censoring = csum / static_cast<double>(reps.size());
    table.min_censoring = cmin;
    table.max_censoring = cmax;
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
        for (std::size_t k = 0; k < names.size(); ++k) {
            SummaryRow row;
            row.design = cfg.design.label();
            row.estimator = to_string(cfg.estimators[e].type);
            row.working = cfg.estimators[e].working_label();
            row.param = names[k];
            row.truth = truth(static_cast<Eigen::Index>(k));
            std::vector<double> est;
            double ase = 0.0, hits = 0.0;
            for (const auto& r : reps) {
                const auto& er = r.estimates[e];
                if (!er.converged) {
                    ++row.nonconverged;
                    continue;
                }
                const double v = er.theta(static_cast<Eigen::Index>(k));
                const double se = er.ase(static_cast<Eigen::Index>(k));
                est.push_back(v);
                ase += se;
                hits += std::abs(v - row.truth) <= z975 * se ? 1.0 : 0.0;
            }
            row.converged = static_cast<int>(est.size());
            row.flagged = row.nonconverged > 0.2 * static_cast<double>(reps.size());
            if (!est.empty()) {
                const double cnt = static_cast<double>(est.size());
                double mean = 0.0;
                for (double v : est) mean += v;
                mean /= cnt;
                row.mean = mean;
                row.ase = ase / cnt;
                row.cov = hits / cnt;
                if (est.size() >= 2) {
                    double ss = 0.0;
                    for (double v : est) ss += (v - mean) * (v - mean);
                    row.ese = std::sqrt(ss / (cnt - 1.0));
                }
            }
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

struct MonteCarloResult {
    SummaryTable table;
    std::vector<ReplicateRecord> replicates;
};

inline MonteCarloResult run_monte_carlo(const SimulationConfig& cfg) {
    cfg.validate();
    std::vector<ReplicateRecord> reps(static_cast<std::size_t>(cfg.replicates));
    parallel_for(cfg.replicates, cfg.threads, [&](int r) {
        Rng rng = substream(cfg.seed, static_cast<std::uint64_t>(r));
        const SimulatedData sim = generate(cfg.design, cfg.n, rng);
        reps[static_cast<std::size_t>(r)] = run_replicate(cfg, sim);
    });
    MonteCarloResult out;
    out.table = summarize(cfg, reps);
    out.replicates = std::move(reps);
    return out;
}

// ---------------------------------------------------------------------------
// Power study
// ---------------------------------------------------------------------------

struct PowerRow {
    std::string design;
    double alpha = 0.0;
    double mu = 0.0;
    std::string base;
    int rejections = 0;
    int valid = 0;
    int nonconverged = 0;
    double mean_censoring = 0.0;

    [[nodiscard]] double rate() const { return valid > 0 ? static_cast<double>(rejections) / valid : 0.0; }
    /// Binomial Monte Carlo standard error of the rejection rate.
    [[nodiscard]] double mc_se() const {
        return valid > 0 ? std::sqrt(rate() * (1.0 - rate()) / valid) : 0.0;
    }
    [[nodiscard]] bool flagged() const { return nonconverged > 0.2 * (valid + nonconverged); }
};

struct PowerConfig {
    SimulationConfig sim;  // design, n, N, seed, numerics; estimators unused
    std::vector<double> alphas{0.0};
    std::vector<EstimatorType> bases{EstimatorType::spire, EstimatorType::cc, EstimatorType::ipw};
    double level = 0.05;
    double target_censoring = 0.80;
    bool calibrate = true;  // recalibrate mu per alpha in the power design
};

/// Rejection rates of the noninformative-censoring test per alpha and base.
/// In the realistic design the alpha grid is ignored (single point).
inline std::vector<PowerRow> run_power_study(const PowerConfig& pc) {
    SimulationConfig cfg = pc.sim;
    if (cfg.estimators.empty()) cfg.estimators.push_back({});
    cfg.validate();
    const ModelSpec spec = design_model(cfg.design.design);
    std::vector<double> alphas = cfg.design.design == Design::power ? pc.alphas : std::vector<double>{0.0};
    std::vector<PowerRow> out;
    for (std::size_t a = 0; a < alphas.size(); ++a) {
        DesignParams d = cfg.design;
        if (d.design == Design::power) {
            d.alpha = alphas[a];
            if (pc.calibrate) d.mu = calibrate_power_mu(d.alpha, d.sigma, pc.target_censoring);
        }
        struct Rep {
            std::vector<int> reject;  // -1 failed, 0/1 outcome
            double censoring = 0.0;
        };
        std::vector<Rep> reps(static_cast<std::size_t>(cfg.replicates));
        const std::uint64_t seed = cfg.seed + 0x1000003ULL * a;
        parallel_for(cfg.replicates, cfg.threads, [&](int r) {
            Rng rng = substream(seed, static_cast<std::uint64_t>(r));
            const SimulatedData sim = generate(d, cfg.n, rng);
            Rep& rep = reps[static_cast<std::size_t>(r)];
            rep.censoring = sim.data.censoring_rate();
            rep.reject.assign(pc.bases.size(), -1);
            TestOptions topt;
            topt.grid_m = cfg.grid_m;
            topt.fit = cfg.fit_options();
            topt.km = KmConfig{cfg.bandwidth};
            try {
                const auto results = noninformative_tests(sim.data, spec, pc.bases, topt);
                for (std::size_t b = 0; b < results.size(); ++b)
                    rep.reject[b] = results[b].p_value < pc.level ? 1 : 0;
            } catch (const std::exception&) {
                // counted as non-converged for every base
            }
        });
        double csum = 0.0;
        for (const auto& rep : reps) csum += rep.censoring;
        for (std::size_t b = 0; b < pc.bases.size(); ++b) {
            PowerRow row;
            row.design = d.label();
            row.alpha = d.alpha;
            row.mu = d.mu;
            row.base = to_string(pc.bases[b]);
            row.mean_censoring = csum / static_cast<double>(reps.size());
            for (const auto& rep : reps) {
                if (rep.reject[b] < 0) {
                    ++row.nonconverged;
                } else {
                    ++row.valid;
                    row.rejections += rep.reject[b];
                }
            }
            out.push_back(std::move(row));
        }
    }
    return out;
}

}  // namespace spire
