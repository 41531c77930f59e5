#pragma once

// Observed-data types and the normal-linear outcome model f(y | x, z).
//
// The covariate x is only seen through w = min(x, c) and delta = I(x <= c).
// The outcome mean is a linear combination of terms built from (x, z); every
// supported term is affine in x, which the estimators exploit.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spire/error.hpp"

namespace spire {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Observation {
    double y = 0.0;
    double w = 0.0;  // min(x, c)
    int delta = 0;   // 1 when x was observed
    std::vector<double> z;
};

class Dataset {
public:
    Dataset() = default;

    explicit Dataset(std::vector<Observation> rows) : rows_(std::move(rows)) {
        if (rows_.empty()) throw DataError("dataset is empty");
        d_ = rows_.front().z.size();
        bool any_event = false;
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            const auto& r = rows_[i];
            if (r.z.size() != d_)
                throw DataError("row " + std::to_string(i) + ": expected " + std::to_string(d_) +
                                " covariates, got " + std::to_string(r.z.size()));
            if (r.delta != 0 && r.delta != 1)
                throw DataError("row " + std::to_string(i) + ": delta must be 0 or 1");
            if (!std::isfinite(r.w) || !std::isfinite(r.y))
                throw DataError("row " + std::to_string(i) + ": non-finite y or w");
            for (double v : r.z)
                if (!std::isfinite(v))
                    throw DataError("row " + std::to_string(i) + ": non-finite covariate");
            any_event = any_event || r.delta == 1;
        }
        if (!any_event) throw DataError("dataset has no uncensored rows (delta = 1)");
    }

    [[nodiscard]] std::size_t size() const { return rows_.size(); }
    [[nodiscard]] std::size_t dim() const { return d_; }
    [[nodiscard]] const std::vector<Observation>& rows() const { return rows_; }
    [[nodiscard]] const Observation& operator[](std::size_t i) const { return rows_[i]; }

    [[nodiscard]] double max_w() const {
        return std::max_element(rows_.begin(), rows_.end(),
                                [](const auto& a, const auto& b) { return a.w < b.w; })
            ->w;
    }
    [[nodiscard]] double min_w() const {
        return std::min_element(rows_.begin(), rows_.end(),
                                [](const auto& a, const auto& b) { return a.w < b.w; })
            ->w;
    }
    [[nodiscard]] std::size_t n_censored() const {
        return static_cast<std::size_t>(std::count_if(
            rows_.begin(), rows_.end(), [](const auto& r) { return r.delta == 0; }));
    }
    [[nodiscard]] double censoring_rate() const {
        return static_cast<double>(n_censored()) / static_cast<double>(rows_.size());
    }

private:
    std::vector<Observation> rows_;
    std::size_t d_ = 0;
};

// ---------------------------------------------------------------------------
// Mean structure
// ---------------------------------------------------------------------------

enum class TermKind { intercept, x, x_minus_z, z, x_minus_z_times_z };

struct Term {
    TermKind kind = TermKind::intercept;
    int k = -1;  // covariate shifting x (x_minus_z*) or the z term itself
    int j = -1;  // multiplier covariate for x_minus_z_times_z

    static Term intercept() { return {TermKind::intercept}; }
    static Term x() { return {TermKind::x}; }
    static Term x_minus_z(int k) { return {TermKind::x_minus_z, k}; }
    static Term z(int k) { return {TermKind::z, k}; }
    static Term x_minus_z_times_z(int k, int j) { return {TermKind::x_minus_z_times_z, k, j}; }

    friend bool operator==(const Term&, const Term&) = default;
};

class ModelSpec {
public:
    ModelSpec() = default;
    explicit ModelSpec(std::vector<Term> terms) : terms_(std::move(terms)) {
        if (terms_.empty()) throw ConfigError("model has no mean terms");
        if (std::none_of(terms_.begin(), terms_.end(),
                         [](const Term& t) { return t.kind == TermKind::intercept; }))
            throw ConfigError("model must contain an intercept");
    }

    /// Y = b0 + b1 X + b2 Z + e
    static ModelSpec controlled() { return ModelSpec({Term::intercept(), Term::x(), Term::z(0)}); }

    /// Y = b0 + b1 (X - Z0) + b2 Z1 + b3 Z2 + b4 (X - Z0) Z2 + e
    static ModelSpec realistic() {
        return ModelSpec({Term::intercept(), Term::x_minus_z(0), Term::z(1), Term::z(2),
                          Term::x_minus_z_times_z(0, 2)});
    }

    /// Intercept, x, and every covariate additively.
    static ModelSpec additive(std::size_t d) {
        std::vector<Term> t{Term::intercept(), Term::x()};
        for (std::size_t k = 0; k < d; ++k) t.push_back(Term::z(static_cast<int>(k)));
        return ModelSpec(std::move(t));
    }

    /// Parses a comma separated term list with 1-based covariates matching the
    /// CSV columns: "1", "x", "z2", "x-z1", "(x-z1)*z3".  The names
    /// "controlled" and "realistic" select the simulation designs.
    static ModelSpec parse(std::string_view text) {
        if (text == "controlled") return controlled();
        if (text == "realistic") return realistic();
        std::vector<Term> terms;
        std::string token;
        std::stringstream ss{std::string(text)};
        auto covariate = [&](std::string_view s) -> int {
            if (s.size() < 2 || s[0] != 'z') throw ConfigError("bad covariate '" + std::string(s) + "'");
            int v = 0;
            for (char ch : s.substr(1)) {
                if (ch < '0' || ch > '9') throw ConfigError("bad covariate '" + std::string(s) + "'");
                v = v * 10 + (ch - '0');
            }
            if (v < 1) throw ConfigError("covariates are numbered from z1");
            return v - 1;
        };
        while (std::getline(ss, token, ',')) {
            token.erase(std::remove_if(token.begin(), token.end(), ::isspace), token.end());
            if (token == "1") {
                terms.push_back(Term::intercept());
            } else if (token == "x") {
                terms.push_back(Term::x());
            } else if (token.starts_with("x-")) {
                terms.push_back(Term::x_minus_z(covariate(std::string_view(token).substr(2))));
            } else if (token.starts_with("(x-")) {
                auto close = token.find(")*");
                if (close == std::string::npos) throw ConfigError("bad term '" + token + "'");
                int k = covariate(std::string_view(token).substr(3, close - 3));
                int j = covariate(std::string_view(token).substr(close + 2));
                terms.push_back(Term::x_minus_z_times_z(k, j));
            } else if (!token.empty() && token[0] == 'z') {
                terms.push_back(Term::z(covariate(token)));
            } else {
                throw ConfigError("unknown mean term '" + token + "'");
            }
        }
        return ModelSpec(std::move(terms));
    }

    [[nodiscard]] std::string to_string() const {
        std::string out;
        for (const auto& t : terms_) {
            if (!out.empty()) out += ",";
            switch (t.kind) {
                case TermKind::intercept: out += "1"; break;
                case TermKind::x: out += "x"; break;
                case TermKind::x_minus_z: out += "x-z" + std::to_string(t.k + 1); break;
                case TermKind::z: out += "z" + std::to_string(t.k + 1); break;
                case TermKind::x_minus_z_times_z:
                    out += "(x-z" + std::to_string(t.k + 1) + ")*z" + std::to_string(t.j + 1);
                    break;
            }
        }
        return out;
    }

    /// Throws ConfigError if any term references a covariate outside [0, d).
    void validate(std::size_t d) const {
        auto check = [d](int idx) {
            if (idx < 0 || static_cast<std::size_t>(idx) >= d)
                throw ConfigError("mean term references covariate " + std::to_string(idx + 1) +
                                  " but the data have " + std::to_string(d));
        };
        for (const auto& t : terms_) {
            if (t.kind == TermKind::x_minus_z || t.kind == TermKind::z) check(t.k);
            if (t.kind == TermKind::x_minus_z_times_z) {
                check(t.k);
                check(t.j);
            }
        }
    }

    [[nodiscard]] const std::vector<Term>& terms() const { return terms_; }
    [[nodiscard]] std::size_t n_terms() const { return terms_.size(); }
    /// Mean coefficients plus the error variance.
    [[nodiscard]] std::size_t n_params() const { return terms_.size() + 1; }

private:
    std::vector<Term> terms_;
};

/// Regression coefficients and error variance.
struct OutcomeParams {
    Vector beta;
    double sigma2 = 1.0;

    OutcomeParams() = default;
    OutcomeParams(Vector b, double s2) : beta(std::move(b)), sigma2(s2) {
        if (!(sigma2 > 0.0)) throw ConfigError("sigma2 must be positive");
    }

    /// Packs (beta, sigma2) into one parameter vector of length q.
    [[nodiscard]] Vector pack() const {
        Vector theta(beta.size() + 1);
        theta.head(beta.size()) = beta;
        theta(beta.size()) = sigma2;
        return theta;
    }
    static OutcomeParams unpack(const Vector& theta) {
        return OutcomeParams(theta.head(theta.size() - 1), theta(theta.size() - 1));
    }
};

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline double covariate(std::span<const double> z, int k) {
    if (k < 0 || static_cast<std::size_t>(k) >= z.size())
        throw ConfigError("covariate index " + std::to_string(k) + " out of range for d = " +
                          std::to_string(z.size()));
    return z[static_cast<std::size_t>(k)];
}

}  // namespace detail

/// Term values at (x, z); the outcome mean is beta . design_row.
inline Vector design_row(const ModelSpec& spec, double x, std::span<const double> z) {
    Vector row(spec.n_terms());
    for (std::size_t t = 0; t < spec.n_terms(); ++t) {
        const Term& term = spec.terms()[t];
        switch (term.kind) {
            case TermKind::intercept: row(t) = 1.0; break;
            case TermKind::x: row(t) = x; break;
            case TermKind::x_minus_z: row(t) = x - detail::covariate(z, term.k); break;
            case TermKind::z: row(t) = detail::covariate(z, term.k); break;
            case TermKind::x_minus_z_times_z:
                row(t) = (x - detail::covariate(z, term.k)) * detail::covariate(z, term.j);
                break;
        }
    }
    return row;
}

/// design_row(x, z) = offset + x * slope, exactly, for every supported term.
struct AffineDesign {
    Vector offset;
    Vector slope;
};

inline AffineDesign affine_design(const ModelSpec& spec, std::span<const double> z) {
    AffineDesign a{Vector::Zero(spec.n_terms()), Vector::Zero(spec.n_terms())};
    for (std::size_t t = 0; t < spec.n_terms(); ++t) {
        const Term& term = spec.terms()[t];
        switch (term.kind) {
            case TermKind::intercept: a.offset(t) = 1.0; break;
            case TermKind::x: a.slope(t) = 1.0; break;
            case TermKind::x_minus_z:
                a.offset(t) = -detail::covariate(z, term.k);
                a.slope(t) = 1.0;
                break;
            case TermKind::z: a.offset(t) = detail::covariate(z, term.k); break;
            case TermKind::x_minus_z_times_z: {
                const double zj = detail::covariate(z, term.j);
                a.offset(t) = -detail::covariate(z, term.k) * zj;
                a.slope(t) = zj;
                break;
            }
        }
    }
    return a;
}

inline double outcome_mean(const ModelSpec& spec, const OutcomeParams& params, double x,
                           std::span<const double> z) {
    return design_row(spec, x, z).dot(params.beta);
}

inline double log_density_outcome(const ModelSpec& spec, const OutcomeParams& params, double y,
                                  double x, std::span<const double> z) {
    const double r = y - outcome_mean(spec, params, x, z);
    return -0.5 * std::log(2.0 * std::numbers::pi * params.sigma2) - 0.5 * r * r / params.sigma2;
}

/// d log f / d(beta, sigma2).
inline Vector score_outcome(const ModelSpec& spec, const OutcomeParams& params, double y, double x,
                            std::span<const double> z) {
    const Vector d = design_row(spec, x, z);
    const double r = y - d.dot(params.beta);
    const double s2 = params.sigma2;
    Vector s(d.size() + 1);
    s.head(d.size()) = (r / s2) * d;
    s(d.size()) = 0.5 * (r * r / (s2 * s2) - 1.0 / s2);
    return s;
}

}  // namespace spire
