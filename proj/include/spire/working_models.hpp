#pragma once

// Discrete working densities p_j(c, z) for X | C, Z on a grid, the localized
// (kernel weighted) Kaplan-Meier estimator, and IPW censoring weights.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spire/error.hpp"
#include "spire/model.hpp"

namespace spire {

struct Grid {
    std::vector<double> points;

    [[nodiscard]] std::size_t size() const { return points.size(); }
    [[nodiscard]] double lower() const { return points.front(); }
    [[nodiscard]] double upper() const { return points.back(); }
    [[nodiscard]] double spacing() const { return points[1] - points[0]; }

    /// Index of the grid point closest to t (ties go to the lower point).
    [[nodiscard]] std::size_t nearest(double t) const {
        auto it = std::lower_bound(points.begin(), points.end(), t);
        if (it == points.begin()) return 0;
        if (it == points.end()) return points.size() - 1;
        const auto hi = static_cast<std::size_t>(it - points.begin());
        return (t - points[hi - 1] <= points[hi] - t) ? hi - 1 : hi;
    }

    /// First index with points[j] > c, or size() if none.
    [[nodiscard]] std::size_t first_above(double c) const {
        return static_cast<std::size_t>(std::upper_bound(points.begin(), points.end(), c) -
                                        points.begin());
    }
};

/// m equispaced points on [min(0, min w), max w] with the upper end inflated
/// by a relative 1e-6 so every censored c has a grid point above it.  The
/// upper end is raised to min_upper when a working density has support past
/// the largest observed w.
inline Grid make_grid(const Dataset& data, int m, double min_upper) {
    if (m < 2) throw ConfigError("grid needs at least 2 points, got " + std::to_string(m));
    if (data.size() == 0) throw DataError("cannot build a grid on an empty dataset");
    const double max_w = data.max_w();
    const double lower = std::min(0.0, data.min_w());
    const double upper = std::max(min_upper, max_w + 1e-6 * std::max(std::abs(max_w), 1.0e-300) +
                                                 (max_w == 0.0 ? 1e-6 : 0.0));
    Grid g;
    g.points.resize(static_cast<std::size_t>(m));
    const double step = (upper - lower) / (m - 1);
    for (int j = 0; j < m; ++j) g.points[static_cast<std::size_t>(j)] = lower + step * j;
    g.points.back() = upper;
    return g;
}

inline Grid make_grid(const Dataset& data, int m) {
    return make_grid(data, m, -std::numeric_limits<double>::infinity());
}

enum class WorkingKind { parametric, uniform, localized_km };

inline std::string to_string(WorkingKind k) {
    switch (k) {
        case WorkingKind::parametric: return "parametric";
        case WorkingKind::uniform: return "uniform";
        case WorkingKind::localized_km: return "localized_km";
    }
    return "?";
}

/// Grid masses approximating f*(x | c, z).  weight_fn may return unnormalized
/// nonnegative masses; weights() normalizes them.
class DiscreteWorkingModel {
public:
    using WeightFn = std::function<Vector(double c, std::span<const double> z)>;

    DiscreteWorkingModel(Grid grid, WorkingKind kind, WeightFn fn, bool depends_on_c)
        : grid_(std::move(grid)), kind_(kind), fn_(std::move(fn)), depends_on_c_(depends_on_c) {}

    [[nodiscard]] const Grid& grid() const { return grid_; }
    [[nodiscard]] WorkingKind kind() const { return kind_; }
    /// False when the weights are a function of z alone.
    [[nodiscard]] bool depends_on_c() const { return depends_on_c_; }

    /// Normalized p_1..p_m at (c, z).
    [[nodiscard]] Vector weights(double c, std::span<const double> z) const {
        Vector p = fn_(c, z);
        if (static_cast<std::size_t>(p.size()) != grid_.size())
            throw NumericalError("working model returned the wrong number of weights");
        double total = 0.0;
        for (Eigen::Index j = 0; j < p.size(); ++j) {
            if (!(p(j) >= 0.0) || !std::isfinite(p(j)))
                throw NumericalError("working model returned a negative or non-finite weight");
            total += p(j);
        }
        if (!(total > 0.0))
            throw DegenerateModelError("working model has no mass on the grid at c = " +
                                       std::to_string(c) + describe(z));
        return p / total;
    }

private:
    static std::string describe(std::span<const double> z) {
        std::string s = ", z = (";
        for (std::size_t k = 0; k < z.size(); ++k) s += (k ? ", " : "") + std::to_string(z[k]);
        return s + ")";
    }

    Grid grid_;
    WorkingKind kind_;
    WeightFn fn_;
    bool depends_on_c_;
};

/// p_j = f(x_j | c, z) / sum_k f(x_k | c, z) for a log-density callback
/// log_density(x, c, z).  Normalized in log space.
template <class LogDensity>
DiscreteWorkingModel discretize_parametric_log(LogDensity log_density, Grid grid,
                                               bool depends_on_c = true) {
    auto fn = [log_density, pts = grid.points](double c, std::span<const double> z) {
        Vector lp(static_cast<Eigen::Index>(pts.size()));
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < pts.size(); ++j) {
            lp(static_cast<Eigen::Index>(j)) = log_density(pts[j], c, z);
            mx = std::max(mx, lp(static_cast<Eigen::Index>(j)));
        }
        if (!(mx > -std::numeric_limits<double>::infinity())) {
            std::ostringstream os;
            os << "parametric working density is zero on every grid point at c = " << c << ", z = (";
            for (std::size_t k = 0; k < z.size(); ++k) os << (k ? ", " : "") << z[k];
            os << ")";
            throw DegenerateModelError(os.str());
        }
        // relative masses below exp(-690) are treated as zero
        return Vector((lp.array() - mx).unaryExpr([](double v) { return v < -690.0 ? 0.0 : std::exp(v); }));
    };
    return DiscreteWorkingModel(std::move(grid), WorkingKind::parametric, std::move(fn),
                                depends_on_c);
}

/// Same as discretize_parametric_log for a plain density f(x, c, z).
template <class Density>
DiscreteWorkingModel discretize_parametric(Density density, Grid grid, bool depends_on_c = true) {
    return discretize_parametric_log(
        [density](double x, double c, std::span<const double> z) {
            const double f = density(x, c, z);
            if (!(f >= 0.0)) throw NumericalError("working density is negative or NaN");
            return f > 0.0 ? std::log(f) : -std::numeric_limits<double>::infinity();
        },
        std::move(grid), depends_on_c);
}

/// Uniform mass on the grid points inside [lo, hi].
inline DiscreteWorkingModel uniform_working_model(Grid grid, double lo, double hi) {
    Vector mass(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t j = 0; j < grid.size(); ++j)
        mass(static_cast<Eigen::Index>(j)) = (grid.points[j] >= lo && grid.points[j] <= hi) ? 1.0 : 0.0;
    if (mass.sum() == 0.0)
        throw DegenerateModelError("uniform working support [" + std::to_string(lo) + ", " +
                                   std::to_string(hi) + "] contains no grid point");
    return DiscreteWorkingModel(
        std::move(grid), WorkingKind::uniform,
        [mass](double, std::span<const double>) { return mass; }, false);
}

// ---------------------------------------------------------------------------
// Localized Kaplan-Meier
// ---------------------------------------------------------------------------

struct KmConfig {
    double bandwidth = 0.05;

    void validate() const {
        if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
    }
};

/// Product-limit estimator with Gaussian kernel weights K_h(z - z_j) (product
/// kernel across covariates).  With censoring_as_event the roles of delta = 0
/// and delta = 1 swap, giving the survival of the censoring time.
class LocalizedKaplanMeier {
public:
    struct Jump {
        double time;
        double mass;
    };

    LocalizedKaplanMeier(const Dataset& data, KmConfig cfg, bool censoring_as_event = false)
        : cfg_(cfg), n_(data.size()), d_(data.dim()) {
        cfg_.validate();
        std::vector<std::size_t> order(n_);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return data[a].w < data[b].w; });
        w_.resize(n_);
        event_.resize(n_);
        z_.resize(n_ * d_);
        tie_start_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) {
            const auto& r = data[order[i]];
            w_[i] = r.w;
            event_[i] = censoring_as_event ? (r.delta == 0) : (r.delta == 1);
            std::copy(r.z.begin(), r.z.end(), z_.begin() + static_cast<std::ptrdiff_t>(i * d_));
            tie_start_[i] = (i > 0 && w_[i] == w_[i - 1]) ? tie_start_[i - 1] : i;
        }
    }

    [[nodiscard]] std::size_t size() const { return n_; }

    /// Floored survival max(prod, 1/n).  With strict = true the product runs
    /// over w_j < t, i.e. the left limit S(t-).
    [[nodiscard]] double survival(double t, std::span<const double> z, bool strict = false) const {
        const auto [kernel, risk] = weights(z);
        double s = 1.0;
        for (std::size_t i = 0; i < n_; ++i) {
            if (strict ? !(w_[i] < t) : !(w_[i] <= t)) break;
            if (event_[i] && risk[i] > 0.0) s *= 1.0 - kernel[i] / risk[i];
        }
        return std::max(s, 1.0 / static_cast<double>(n_));
    }

    /// Jumps of the (unfloored) product-limit curve at each event time, in time
    /// order, and the mass remaining after the last event.
    [[nodiscard]] std::vector<Jump> jumps(std::span<const double> z, double& tail) const {
        const auto [kernel, risk] = weights(z);
        std::vector<Jump> out;
        double s = 1.0;
        for (std::size_t i = 0; i < n_; ++i) {
            if (!event_[i] || !(risk[i] > 0.0)) continue;
            const double next = s * (1.0 - kernel[i] / risk[i]);
            out.push_back({w_[i], s - next});
            s = next;
        }
        tail = std::max(s, 0.0);
        return out;
    }

private:
    // Relative kernel weights in sorted order and the risk-set sums
    // sum_{k : w_k >= w_i} K_k (ties included).
    [[nodiscard]] std::pair<std::vector<double>, std::vector<double>> weights(
        std::span<const double> z) const {
        if (z.size() != d_) throw ConfigError("localized Kaplan-Meier: covariate length mismatch");
        std::vector<double> logk(n_, 0.0);
        double mx = -std::numeric_limits<double>::infinity();
        const double h = cfg_.bandwidth;
        for (std::size_t i = 0; i < n_; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d_; ++k) {
                const double u = (z[k] - z_[i * d_ + k]) / h;
                acc -= 0.5 * u * u;
            }
            logk[i] = acc;
            mx = std::max(mx, acc);
        }
        std::vector<double> kernel(n_);
        for (std::size_t i = 0; i < n_; ++i) kernel[i] = logk[i] - mx < -690.0 ? 0.0 : std::exp(logk[i] - mx);
        std::vector<double> suffix(n_ + 1, 0.0);
        for (std::size_t i = n_; i-- > 0;) suffix[i] = suffix[i + 1] + kernel[i];
        std::vector<double> risk(n_);
        for (std::size_t i = 0; i < n_; ++i) risk[i] = suffix[tie_start_[i]];
        return {std::move(kernel), std::move(risk)};
    }

    KmConfig cfg_;
    std::size_t n_;
    std::size_t d_;
    std::vector<double> w_;
    std::vector<char> event_;
    std::vector<double> z_;
    std::vector<std::size_t> tie_start_;
};

/// Localized Kaplan-Meier survival of X at t given z, floored at 1/n.
inline double km_survival(const Dataset& data, double t, std::span<const double> z,
                          const KmConfig& cfg) {
    return LocalizedKaplanMeier(data, cfg).survival(t, z);
}

/// Working model from the localized Kaplan-Meier estimate of X | Z.  Each jump
/// is assigned to the nearest grid point; mass left after the last event is
/// spread evenly over grid points above it.  The weights ignore c.
inline DiscreteWorkingModel km_density_on_grid(const Dataset& data, Grid grid, const KmConfig& cfg) {
    if (data.size() == data.n_censored())
        throw DegenerateModelError("Kaplan-Meier working model needs at least one uncensored row");
    auto km = std::make_shared<const LocalizedKaplanMeier>(data, cfg);
    auto fn = [km, g = grid](double, std::span<const double> z) {
        Vector mass = Vector::Zero(static_cast<Eigen::Index>(g.size()));
        double tail = 0.0;
        const auto jumps = km->jumps(z, tail);
        for (const auto& jp : jumps) mass(static_cast<Eigen::Index>(g.nearest(jp.time))) += jp.mass;
        if (tail > 0.0 && !jumps.empty()) {
            const std::size_t start = g.first_above(jumps.back().time);
            if (start < g.size()) {
                const double each = tail / static_cast<double>(g.size() - start);
                for (std::size_t j = start; j < g.size(); ++j) mass(static_cast<Eigen::Index>(j)) += each;
            }
        }
        if (!(mass.sum() > 0.0))
            throw DegenerateModelError("Kaplan-Meier working model lost all mass");
        return mass;
    };
    return DiscreteWorkingModel(std::move(grid), WorkingKind::localized_km, std::move(fn), false);
}

// ---------------------------------------------------------------------------
// IPW weights
// ---------------------------------------------------------------------------

/// pr(C >= x | x, z) as used by the IPW score.
using IpwWeightFn = std::function<double(double x, std::span<const double> z)>;

/// Localized Kaplan-Meier of the censoring time evaluated at x-, floored at 1/n.
inline IpwWeightFn km_censoring_weight(const Dataset& data, const KmConfig& cfg) {
    auto km = std::make_shared<const LocalizedKaplanMeier>(data, cfg, true);
    return [km](double x, std::span<const double> z) { return km->survival(x, z, true); };
}

inline double censoring_survival_weight(const Dataset& data, double x, std::span<const double> z,
                                        const KmConfig& cfg) {
    return km_censoring_weight(data, cfg)(x, z);
}

}  // namespace spire
