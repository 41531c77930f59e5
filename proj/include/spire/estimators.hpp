#pragma once

// Estimating equations for regression on a right-censored covariate:
// complete case (CC), inverse probability weighting (IPW), maximum likelihood
// under a working model (MLE) and the efficient score (SPIRE).
//
// For a censored row (c, z) the working model contributes grid masses p_j on
// the support points x_j > c.  With u_j(y) = p_j f(y | x_j, z) and
// pi_j(y) = u_j / sum_l u_l, the MLE score is sum_j pi_j(y) S^F(y, x_j, z),
// and the efficient score subtracts sum_j pi_j(y) a_j where the q-vectors a_j
// solve A a^T = B with
//   A_kj = int pi_j(y) f(y | x_k, z) dy
//   B_k  = int sum_j pi_j(y) S^F(y, x_j, z) f(y | x_k, z) dy.
// a_j is zero on grid points at or below c and is never stored there.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spire/error.hpp"
#include "spire/model.hpp"
#include "spire/numerics.hpp"
#include "spire/working_models.hpp"

namespace spire {

enum class EstimatorType { cc, ipw, mle, spire };

inline std::string to_string(EstimatorType t) {
    switch (t) {
        case EstimatorType::cc: return "cc";
        case EstimatorType::ipw: return "ipw";
        case EstimatorType::mle: return "mle";
        case EstimatorType::spire: return "spire";
    }
    return "?";
}

inline EstimatorType parse_estimator_type(std::string_view s) {
    if (s == "cc") return EstimatorType::cc;
    if (s == "ipw") return EstimatorType::ipw;
    if (s == "mle") return EstimatorType::mle;
    if (s == "spire") return EstimatorType::spire;
    throw ConfigError("unknown estimator '" + std::string(s) + "' (expected cc, ipw, mle or spire)");
}

/// Which estimator to run, with the handle it needs: a censoring weight for
/// IPW, a working model for MLE and SPIRE.
struct EstimatorKind {
    EstimatorType type = EstimatorType::cc;
    std::shared_ptr<const DiscreteWorkingModel> working;
    IpwWeightFn ipw_weight;

    static EstimatorKind cc() { return {EstimatorType::cc, nullptr, {}}; }
    static EstimatorKind ipw(IpwWeightFn fn) { return {EstimatorType::ipw, nullptr, std::move(fn)}; }
    static EstimatorKind mle(std::shared_ptr<const DiscreteWorkingModel> wm) {
        return {EstimatorType::mle, std::move(wm), {}};
    }
    static EstimatorKind spire(std::shared_ptr<const DiscreteWorkingModel> wm) {
        return {EstimatorType::spire, std::move(wm), {}};
    }

    void validate() const {
        if (type == EstimatorType::ipw && !ipw_weight)
            throw ConfigError("IPW estimator needs a censoring weight function");
        if ((type == EstimatorType::mle || type == EstimatorType::spire) && !working)
            throw ConfigError(to_string(type) + " estimator needs a working model");
    }
};

// ---------------------------------------------------------------------------
// Per-row support of the working model
// ---------------------------------------------------------------------------

/// Grid points above c that carry positive working mass, with log p_j.
struct RowSupport {
    std::vector<int> index;
    std::vector<double> x;
    std::vector<double> log_p;
    bool equispaced = false;  // x = x_0 + spacing * index exactly (up to rounding)
    double spacing = 0.0;

    [[nodiscard]] std::size_t size() const { return index.size(); }
    [[nodiscard]] bool empty() const { return index.empty(); }
};

namespace detail {

inline bool grid_equispaced(const Grid& g) {
    if (g.size() < 2) return false;
    const double h = g.spacing();
    if (!(h > 0.0)) return false;
    for (std::size_t j = 0; j < g.size(); ++j)
        if (std::abs(g.points[j] - (g.points[0] + h * static_cast<double>(j))) > 1e-9 * h) return false;
    return true;
}

inline RowSupport support_from_weights(const Grid& g, const Vector& p, double c) {
    RowSupport s;
    s.equispaced = grid_equispaced(g);
    s.spacing = g.size() > 1 ? g.spacing() : 0.0;
    for (std::size_t j = g.first_above(c); j < g.size(); ++j) {
        const double pj = p(static_cast<Eigen::Index>(j));
        if (pj > 0.0) {
            s.index.push_back(static_cast<int>(j));
            s.x.push_back(g.points[j]);
            s.log_p.push_back(std::log(pj));
        }
    }
    return s;
}

/// Posterior weights pi_j(y) over the support, log-sum-exp stabilized.
/// Returns false if every weight underflows.
inline bool posterior_weights(const RowSupport& s, std::span<const double> mu, double sigma2,
                              double y, std::vector<double>& pi) {
    const std::size_t m = s.size();
    pi.resize(m);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
        const double r = y - mu[j];
        pi[j] = s.log_p[j] - 0.5 * r * r / sigma2;
        mx = std::max(mx, pi[j]);
    }
    if (!std::isfinite(mx)) return false;
    double total = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        pi[j] = pi[j] - mx < -690.0 ? 0.0 : std::exp(pi[j] - mx);
        total += pi[j];
    }
    if (!(total > 0.0) || !std::isfinite(total)) return false;
    for (double& v : pi) v /= total;
    return true;
}

/// sum_j pi_j S^F(y, x_j, z) using the affine design: d_j = offset + x_j slope.
inline Vector mixture_score(const AffineDesign& ad, const RowSupport& s, std::span<const double> mu,
                            double sigma2, double y, const std::vector<double>& pi) {
    double m0 = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
        const double r = y - mu[j];
        m0 += pi[j] * r;
        m1 += pi[j] * r * s.x[j];
        m2 += pi[j] * r * r;
    }
    const auto p = ad.offset.size();
    Vector out(p + 1);
    out.head(p) = (ad.offset * m0 + ad.slope * m1) / sigma2;
    out(p) = 0.5 * (m2 / (sigma2 * sigma2) - 1.0 / sigma2);
    return out;
}

inline std::vector<double> support_means(const AffineDesign& ad, const OutcomeParams& params,
                                         const RowSupport& s) {
    const double alpha = ad.offset.dot(params.beta);
    const double gamma = ad.slope.dot(params.beta);
    std::vector<double> mu(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) mu[j] = alpha + gamma * s.x[j];
    return mu;
}

}  // namespace detail

/// Support of the working model above c at covariates z.
inline RowSupport row_support(const DiscreteWorkingModel& wm, double c, std::span<const double> z) {
    return detail::support_from_weights(wm.grid(), wm.weights(c, z), c);
}

// ---------------------------------------------------------------------------
// Per-observation scores
// ---------------------------------------------------------------------------

inline Vector score_cc(const ModelSpec& spec, const OutcomeParams& params, const Observation& obs) {
    if (obs.delta == 0) return Vector::Zero(static_cast<Eigen::Index>(spec.n_params()));
    return score_outcome(spec, params, obs.y, obs.w, obs.z);
}

/// CC score divided by pr(C >= x | x, z); the weight is floored at floor.
inline Vector score_ipw(const ModelSpec& spec, const OutcomeParams& params, const Observation& obs,
                        const IpwWeightFn& weight, double floor = 0.0) {
    if (obs.delta == 0) return Vector::Zero(static_cast<Eigen::Index>(spec.n_params()));
    const double pw = std::max(weight(obs.w, obs.z), floor);
    if (!(pw > 0.0)) throw NumericalError("IPW weight is not positive at x = " + std::to_string(obs.w));
    return score_outcome(spec, params, obs.y, obs.w, obs.z) / pw;
}

namespace detail {

inline Vector score_working_on_support(const ModelSpec& spec, const OutcomeParams& params,
                                       const Observation& obs, const RowSupport& s) {
    if (s.empty())
        throw DegenerateModelError("no working mass above c = " + std::to_string(obs.w));
    const AffineDesign ad = affine_design(spec, obs.z);
    const auto mu = support_means(ad, params, s);
    std::vector<double> pi;
    if (!posterior_weights(s, mu, params.sigma2, obs.y, pi))
        throw NumericalError("posterior weights underflow for censored row with c = " +
                             std::to_string(obs.w));
    return mixture_score(ad, s, mu, params.sigma2, obs.y, pi);
}

}  // namespace detail

/// Observed-data score under the working model (the MLE score).
inline Vector score_working(const ModelSpec& spec, const OutcomeParams& params,
                            const Observation& obs, const DiscreteWorkingModel& wm) {
    if (obs.delta == 1) return score_outcome(spec, params, obs.y, obs.w, obs.z);
    return detail::score_working_on_support(spec, params, obs, row_support(wm, obs.w, obs.z));
}

// ---------------------------------------------------------------------------
// The a0 system
// ---------------------------------------------------------------------------

struct A0System {
    Matrix a;  // m_a x m_a
    Matrix b;  // m_a x q; row k is the k-th column of the q x m matrix b
    std::vector<int> active;
};

struct A0Solution {
    std::vector<int> active_indices;
    Matrix values;  // q x m_a: a0(c, x_j, z) for j in active_indices
    bool condition_flag = false;
};

namespace detail {

/// Fills A and B by Gauss-Hermite integration against f(y | x_k, z).  On an
/// equispaced grid the posterior logits are L_j + s * index_j, so the
/// exponentials reduce to one exp per node and a table of powers.
inline A0System assemble_a0_system(const ModelSpec& spec, const OutcomeParams& params,
                                   std::span<const double> z, const RowSupport& s,
                                   const QuadratureRule& rule) {
    const std::size_t m = s.size();
    if (m == 0) throw DegenerateModelError("a0 system has no active grid point");
    const auto q = static_cast<Eigen::Index>(spec.n_params());
    const auto p = q - 1;
    const AffineDesign ad = affine_design(spec, z);
    const double gamma = ad.slope.dot(params.beta);
    const double s2 = params.sigma2;
    const double sd = std::sqrt(s2);
    const auto mu = support_means(ad, params, s);

    std::vector<double> lbase(m);
    double lmax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
        lbase[j] = s.log_p[j] - 0.5 * mu[j] * mu[j] / s2;
        lmax = std::max(lmax, lbase[j]);
    }
    // terms far below the largest are flushed to zero to keep the inner loops
    // out of subnormal arithmetic
    std::vector<double> base(m);
    for (std::size_t j = 0; j < m; ++j) base[j] = lbase[j] - lmax < -690.0 ? 0.0 : std::exp(lbase[j] - lmax);

    const int lo_idx = s.index.front();
    const int span = s.index.back() - lo_idx;
    const bool contiguous = span + 1 == static_cast<int>(m);
    std::vector<int> rel_up(m), rel_dn(m);
    for (std::size_t j = 0; j < m; ++j) {
        rel_dn[j] = s.index[j] - lo_idx;
        rel_up[j] = span - rel_dn[j];
    }
    using Arr = Eigen::ArrayXd;
    const auto mm = static_cast<Eigen::Index>(m);
    const Eigen::Map<const Arr> xs(s.x.data(), mm);
    const Eigen::Map<const Arr> mus(mu.data(), mm);
    const Eigen::Map<const Arr> bases(base.data(), mm);
    const Eigen::Map<const Arr> lbases(lbase.data(), mm);
    Arr powers(span + 1);
    Arr pi(mm), r(mm), pr(mm);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> amat =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(mm, mm);
    Matrix bmat = Matrix::Zero(mm, q);

    for (Eigen::Index k = 0; k < mm; ++k) {
        Arr arow = Arr::Zero(mm);
        double b0 = 0.0, b1 = 0.0, b2 = 0.0, wsum = 0.0;
        for (int i = 0; i < rule.order(); ++i) {
            const double wi = rule.weights(i);
            const double y = mu[static_cast<std::size_t>(k)] + sd * rule.nodes(i);
            const double slope = y * gamma / s2;  // logit coefficient on x_j
            const double step = slope * s.spacing;
            if (s.equispaced && std::abs(step) * span <= 600.0) {
                // reference at the end of the support favoured by the slope;
                // eight interleaved chains keep the recurrence short
                const double decay = std::exp(-std::abs(step));
                powers(0) = 1.0;
                for (int d = 1; d <= std::min(span, 8); ++d) powers(d) = powers(d - 1) * decay;
                if (span > 8) {
                    const double d8 = powers(8);
                    for (int d = 9; d <= span; ++d) powers(d) = powers(d - 8) * d8;
                }
                if (contiguous) {
                    if (step > 0.0) pi = bases * powers.reverse();
                    else pi = bases * powers;
                } else {
                    const int* rel = step > 0.0 ? rel_up.data() : rel_dn.data();
                    for (Eigen::Index j = 0; j < mm; ++j) pi(j) = bases(j) * powers(rel[j]);
                }
                pi = (pi < 1e-300).select(0.0, pi);
            } else {
                pi = lbases + slope * xs;
                pi = pi - pi.maxCoeff();
                pi = (pi < -690.0).select(-std::numeric_limits<double>::infinity(), pi).exp();
            }
            const double total = pi.sum();
            if (!(total > 0.0) || !std::isfinite(total))
                throw NumericalError("a0 system: posterior weights underflow");
            const double inv = wi / total;
            r = y - mus;
            pr = pi * r;
            arow += inv * pi;
            b0 += inv * pr.sum();
            b1 += inv * (pr * xs).sum();
            b2 += inv * (pr * r).sum();
            wsum += wi;
        }
        amat.row(k) = arow.matrix().transpose();
        auto brow = bmat.row(k);
        brow.head(p) = ((ad.offset * b0 + ad.slope * b1) / s2).transpose();
        brow(p) = 0.5 * (b2 / (s2 * s2) - wsum / s2);
    }
    A0System sys;
    sys.a = amat;
    sys.b = std::move(bmat);
    sys.active = s.index;
    return sys;
}

}  // namespace detail

/// A and B for a censored row at (c, z) restricted to the active support.
inline A0System build_a0_system(const ModelSpec& spec, const OutcomeParams& params, double c,
                                std::span<const double> z, const DiscreteWorkingModel& wm,
                                const QuadratureRule& rule) {
    return detail::assemble_a0_system(spec, params, z, row_support(wm, c, z), rule);
}

inline A0Solution solve_a0(const A0System& sys) {
    auto sol = solve_linear(sys.a, sys.b, RankFallback::cod);
    return {sys.active, sol.x.transpose(), sol.used_fallback};
}

namespace detail {

/// S_working - sum_j pi_j(y) a_j for a censored row.
inline Vector efficient_score_on_support(const ModelSpec& spec, const OutcomeParams& params,
                                         const Observation& obs, const RowSupport& s,
                                         const A0Solution& a0) {
    const AffineDesign ad = affine_design(spec, obs.z);
    const auto mu = support_means(ad, params, s);
    std::vector<double> pi;
    if (!posterior_weights(s, mu, params.sigma2, obs.y, pi))
        throw NumericalError("posterior weights underflow for censored row with c = " +
                             std::to_string(obs.w));
    Vector out = mixture_score(ad, s, mu, params.sigma2, obs.y, pi);
    for (std::size_t j = 0; j < s.size(); ++j) out -= pi[j] * a0.values.col(static_cast<Eigen::Index>(j));
    return out;
}

inline void append_bits(std::string& key, double v) {
    char buf[sizeof(double)];
    std::memcpy(buf, &v, sizeof(double));
    key.append(buf, sizeof(double));
}

}  // namespace detail

/// a0 solutions for the current parameter value, keyed by (c, z).  Rebuilt
/// whenever the parameters change.
class A0Cache {
public:
    const A0Solution& get(const ModelSpec& spec, const OutcomeParams& params, double c,
                          std::span<const double> z, const DiscreteWorkingModel& wm,
                          const QuadratureRule& rule) {
        const Vector theta = params.pack();
        if (theta.size() != theta_.size() || theta != theta_) {
            entries_.clear();
            theta_ = theta;
        }
        std::string key;
        detail::append_bits(key, c);
        for (double v : z) detail::append_bits(key, v);
        auto it = entries_.find(key);
        if (it == entries_.end())
            it = entries_.emplace(key, solve_a0(build_a0_system(spec, params, c, z, wm, rule))).first;
        return it->second;
    }

    [[nodiscard]] std::size_t size() const { return entries_.size(); }

private:
    Vector theta_;
    std::unordered_map<std::string, A0Solution> entries_;
};

/// Efficient score under the working model.  Uncensored rows return S^F.
inline Vector efficient_score(const ModelSpec& spec, const OutcomeParams& params,
                              const Observation& obs, const DiscreteWorkingModel& wm, A0Cache& cache,
                              const QuadratureRule& rule) {
    if (obs.delta == 1) return score_outcome(spec, params, obs.y, obs.w, obs.z);
    const RowSupport s = row_support(wm, obs.w, obs.z);
    const A0Solution& a0 = cache.get(spec, params, obs.w, obs.z, wm, rule);
    return detail::efficient_score_on_support(spec, params, obs, s, a0);
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct FitOptions {
    int quad_nodes = 40;
    NewtonOptions newton;
};

struct SandwichResult {
    Matrix jacobian;  // mean of d S_i / d theta^T
    Matrix meat;      // mean of S_i S_i^T
    Matrix covariance;
};

struct EstimationResult {
    OutcomeParams params;
    Matrix covariance;  // of sqrt(n) (theta_hat - theta)
    Matrix jacobian;    // mean-score Jacobian behind the covariance
    Vector ase;
    SolveReport report;
    EstimatorType type = EstimatorType::cc;
    std::string working;
    std::size_t n = 0;
    std::size_t dropped_rows = 0;
    std::vector<std::string> warnings;

    [[nodiscard]] bool converged() const { return report.converged; }
    [[nodiscard]] Vector theta() const { return params.pack(); }
};

/// Per-row score evaluation for one estimator on one dataset.  Working-model
/// supports and IPW weights do not depend on the parameters and are computed
/// once.  Censored rows with no working mass above c are dropped (their score
/// is zero).
class ScoreEngine {
public:
    ScoreEngine(const Dataset& data, ModelSpec spec, EstimatorKind kind, int quad_nodes = 40)
        : data_(&data), spec_(std::move(spec)), kind_(std::move(kind)) {
        kind_.validate();
        spec_.validate(data.dim());
        const std::size_t n = data.size();
        if (kind_.type == EstimatorType::ipw) {
            ipw_.assign(n, 0.0);
            const double floor = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                if (data[i].delta == 1) {
                    const double pw = kind_.ipw_weight(data[i].w, data[i].z);
                    if (!(pw >= 0.0)) throw NumericalError("IPW weight is negative or NaN in row " + std::to_string(i));
                    ipw_[i] = std::max(pw, floor);
                }
            }
        }
        if (kind_.type == EstimatorType::mle || kind_.type == EstimatorType::spire) {
            rule_ = gauss_hermite(quad_nodes);
            prepare_supports();
        }
    }

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] const EstimatorKind& kind() const { return kind_; }
    [[nodiscard]] std::size_t dropped_rows() const { return dropped_.size(); }
    [[nodiscard]] const std::vector<std::size_t>& dropped() const { return dropped_; }
    [[nodiscard]] std::size_t n_systems() const { return supports_.size(); }

    /// n x q matrix of per-row scores at theta.  Non-finite entries (sigma2 <= 0)
    /// signal an invalid parameter to the root finder.
    [[nodiscard]] Matrix row_scores(const Vector& theta) const {
        {
            std::lock_guard lock(memo_mutex_);
            if (memo_theta_.size() == theta.size() && memo_theta_ == theta) return memo_rows_;
        }
        Matrix rows = compute_row_scores(theta);
        std::lock_guard lock(memo_mutex_);
        memo_theta_ = theta;
        memo_rows_ = rows;
        return rows;
    }

    [[nodiscard]] Vector mean_score(const Vector& theta) const {
        return row_scores(theta).colwise().mean().transpose();
    }

private:
    [[nodiscard]] Matrix compute_row_scores(const Vector& theta) const {
        const std::size_t n = data_->size();
        const auto q = static_cast<Eigen::Index>(spec_.n_params());
        Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), q);
        if (!theta.allFinite() || !(theta(q - 1) > 0.0)) {
            out.setConstant(std::numeric_limits<double>::quiet_NaN());
            return out;
        }
        const OutcomeParams params = OutcomeParams::unpack(theta);
        std::vector<std::optional<A0Solution>> solved(supports_.size());
        for (std::size_t i = 0; i < n; ++i) {
            const Observation& obs = (*data_)[i];
            auto row = out.row(static_cast<Eigen::Index>(i));
            switch (kind_.type) {
                case EstimatorType::cc:
                    if (obs.delta == 1) row = score_outcome(spec_, params, obs.y, obs.w, obs.z).transpose();
                    break;
                case EstimatorType::ipw:
                    if (obs.delta == 1)
                        row = (score_outcome(spec_, params, obs.y, obs.w, obs.z) / ipw_[i]).transpose();
                    break;
                case EstimatorType::mle:
                case EstimatorType::spire: {
                    if (obs.delta == 1) {
                        row = score_outcome(spec_, params, obs.y, obs.w, obs.z).transpose();
                        break;
                    }
                    const int id = system_of_row_[i];
                    if (id < 0) break;
                    const RowSupport& s = supports_[static_cast<std::size_t>(id)];
                    try {
                        if (kind_.type == EstimatorType::mle) {
                            row = detail::score_working_on_support(spec_, params, obs, s).transpose();
                        } else {
                            auto& slot = solved[static_cast<std::size_t>(id)];
                            if (!slot)
                                slot = solve_a0(detail::assemble_a0_system(spec_, params, obs.z, s, rule_));
                            row = detail::efficient_score_on_support(spec_, params, obs, s, *slot).transpose();
                        }
                    } catch (const NumericalError&) {
                        row.setConstant(std::numeric_limits<double>::quiet_NaN());
                    }
                    break;
                }
            }
        }
        return out;
    }

    void prepare_supports() {
        const auto& wm = *kind_.working;
        const Grid& grid = wm.grid();
        const std::size_t n = data_->size();
        system_of_row_.assign(n, -1);
        std::map<std::string, int> shared;        // c-free models: (first active, z) -> system
        std::map<std::string, Vector> z_weights;  // c-free models: z -> weights
        for (std::size_t i = 0; i < n; ++i) {
            const Observation& obs = (*data_)[i];
            if (obs.delta == 1) continue;
            std::string zkey;
            for (double v : obs.z) detail::append_bits(zkey, v);
            std::string key;
            if (!wm.depends_on_c()) {
                key = std::to_string(grid.first_above(obs.w)) + "|" + zkey;
                if (auto it = shared.find(key); it != shared.end()) {
                    system_of_row_[i] = it->second;
                    continue;
                }
            }
            Vector p;
            if (!wm.depends_on_c()) {
                auto it = z_weights.find(zkey);
                if (it == z_weights.end()) it = z_weights.emplace(zkey, wm.weights(obs.w, obs.z)).first;
                p = it->second;
            } else {
                p = wm.weights(obs.w, obs.z);
            }
            RowSupport s = detail::support_from_weights(grid, p, obs.w);
            if (s.empty()) {
                dropped_.push_back(i);
                continue;
            }
            const int id = static_cast<int>(supports_.size());
            supports_.push_back(std::move(s));
            system_of_row_[i] = id;
            if (!wm.depends_on_c()) shared.emplace(key, id);
        }
    }

    const Dataset* data_;
    ModelSpec spec_;
    EstimatorKind kind_;
    QuadratureRule rule_;
    std::vector<double> ipw_;
    std::vector<RowSupport> supports_;
    std::vector<int> system_of_row_;
    std::vector<std::size_t> dropped_;
    // last evaluation, reused when the same point is requested again
    mutable std::mutex memo_mutex_;
    mutable Vector memo_theta_;
    mutable Matrix memo_rows_;
};

/// theta with (mean coefficients, sigma2) from least squares on uncensored rows.
inline OutcomeParams ols_uncensored(const Dataset& data, const ModelSpec& spec) {
    spec.validate(data.dim());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data[i].delta == 1) rows.push_back(i);
    const auto p = static_cast<Eigen::Index>(spec.n_terms());
    if (static_cast<Eigen::Index>(rows.size()) <= p)
        throw DataError("too few uncensored rows (" + std::to_string(rows.size()) + ") for " +
                        std::to_string(p) + " mean coefficients");
    Matrix x(static_cast<Eigen::Index>(rows.size()), p);
    Vector y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& obs = data[rows[r]];
        x.row(static_cast<Eigen::Index>(r)) = design_row(spec, obs.w, obs.z).transpose();
        y(static_cast<Eigen::Index>(r)) = obs.y;
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    if (qr.rank() < p) throw DataError("uncensored design matrix is rank deficient");
    Vector beta = qr.solve(y);
    const double rss = (y - x * beta).squaredNorm();
    return OutcomeParams(std::move(beta), rss / static_cast<double>(rows.size()));
}

/// J^-1 V J^-T for row scores S_i(theta): J is the finite-difference Jacobian
/// of the mean score and V the mean outer product.  The result is symmetrized
/// and its negative eigenvalues floored at zero.
/// A Jacobian already computed near theta may be passed in.
template <class RowScores>
SandwichResult sandwich_covariance(RowScores&& row_scores, const Vector& theta,
                                   const Matrix* jacobian = nullptr) {
    auto mean = [&](const Vector& t) -> Vector { return row_scores(t).colwise().mean().transpose(); };
    SandwichResult res;
    res.jacobian = jacobian ? *jacobian : fd_jacobian(mean, theta);
    const Matrix s = row_scores(theta);
    res.meat = s.transpose() * s / static_cast<double>(s.rows());
    Eigen::FullPivLU<Matrix> lu(res.jacobian);
    if (!res.jacobian.allFinite() || !lu.isInvertible() ||
        lu.rcond() < 1e-13)
        throw NumericalError("score Jacobian is singular; use richer data or a smaller model");
    const Matrix jinv = lu.inverse();
    Matrix cov = jinv * res.meat * jinv.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Vector ev = eig.eigenvalues().cwiseMax(0.0);
    res.covariance = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
    res.covariance = 0.5 * (res.covariance + res.covariance.transpose()).eval();
    return res;
}

inline std::string working_label(const EstimatorKind& kind) {
    if (kind.working) return to_string(kind.working->kind());
    return kind.type == EstimatorType::ipw ? "weights" : "none";
}

namespace detail {

inline EstimationResult finish_fit(const Dataset& data, const ScoreEngine& engine,
                                   const EstimatorKind& kind, SolveReport rep) {
    EstimationResult res;
    res.type = kind.type;
    res.working = working_label(kind);
    res.n = data.size();
    res.dropped_rows = engine.dropped_rows();
    if (res.dropped_rows > 0)
        res.warnings.push_back(std::to_string(res.dropped_rows) +
                               " censored row(s) had no working mass above c and were dropped");
    const auto q = static_cast<Eigen::Index>(engine.spec().n_params());
    if (rep.root.allFinite() && rep.root(q - 1) > 0.0) res.params = OutcomeParams::unpack(rep.root);
    if (rep.converged) {
        try {
            // the last Newton Jacobian is reused when it was taken close to the root
            const Matrix* jac = nullptr;
            if (rep.jacobian.size() > 0 && rep.jacobian_at.size() == rep.root.size() &&
                ((rep.jacobian_at - rep.root).array().abs() <= 1e-3 * (1.0 + rep.root.array().abs())).all())
                jac = &rep.jacobian;
            auto sw = sandwich_covariance([&](const Vector& t) { return engine.row_scores(t); }, rep.root, jac);
            res.jacobian = std::move(sw.jacobian);
            res.covariance = std::move(sw.covariance);
            res.ase = (res.covariance.diagonal() / static_cast<double>(res.n)).cwiseSqrt();
        } catch (const NumericalError& e) {
            rep.converged = false;
            rep.message = e.what();
        }
    }
    if (!rep.converged) {
        res.covariance = Matrix::Constant(q, q, std::numeric_limits<double>::quiet_NaN());
        res.ase = Vector::Constant(q, std::numeric_limits<double>::quiet_NaN());
    }
    res.report = std::move(rep);
    return res;
}

}  // namespace detail

/// Solves the mean estimating equation n^-1 sum_i S_i(theta) = 0 by damped
/// Newton, starting from the CC estimate (itself started at the uncensored
/// least-squares fit).  Non-convergence is reported, not thrown.
inline EstimationResult fit(const Dataset& data, const ScoreEngine& engine,
                            const FitOptions& options = {}) {
    const ModelSpec& spec = engine.spec();
    const Vector ols = ols_uncensored(data, spec).pack();
    const ScoreEngine cc_engine(data, spec, EstimatorKind::cc());
    auto cc_score = [&](const Vector& t) -> Vector { return cc_engine.mean_score(t); };
    SolveReport cc_rep = newton_solve(cc_score, ols, options.newton);
    if (engine.kind().type == EstimatorType::cc)
        return detail::finish_fit(data, cc_engine, engine.kind(), std::move(cc_rep));

    const Vector init = cc_rep.converged ? cc_rep.root : ols;
    auto score = [&](const Vector& t) -> Vector { return engine.mean_score(t); };
    return detail::finish_fit(data, engine, engine.kind(), newton_solve(score, init, options.newton));
}

inline EstimationResult fit(const Dataset& data, const ModelSpec& spec, const EstimatorKind& kind,
                            const FitOptions& options = {}) {
    const ScoreEngine engine(data, spec, kind, options.quad_nodes);
    return fit(data, engine, options);
}

}  // namespace spire
