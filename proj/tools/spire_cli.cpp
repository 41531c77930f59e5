// spire: command-line front end.
//
//   spire simulate --design controlled --mu 0 --n 1000 --N 200 --estimators spire:true,mle:mis
//   spire fit  --data cohort.csv --estimator spire --working km --bandwidth 0.2
//   spire test --data cohort.csv --bases spire,cc,ipw
//   spire generate --design realistic --n 3000 --seed 3 --out data.csv
//
// Exit codes: 0 success, 2 configuration or data error, 3 non-convergence,
// 4 output could not be written.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "spire/spire.hpp"

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNonConvergence = 3;
constexpr int kWriteError = 4;

struct WriteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Every setting of every subcommand; unset optionals fall back to the
// library defaults.
struct RunConfig {
    std::string design = "controlled";
    std::optional<double> mu;
    std::vector<double> alpha{0.0};
    double sigma = 2.0;
    int n = 1000;
    int N = 1000;
    std::uint64_t seed = 1;
    int threads = 1;
    std::string estimators = "spire:true,ipw:true,mle:true,cc";
    std::string estimator = "spire";
    std::string working = "km";
    std::string study;  // estimate | power; empty picks by design
    std::string bases = "spire,cc,ipw";
    double level = 0.05;
    double target_censoring = 0.80;
    int grid_m = 50;
    int quad_nodes = 40;
    double bandwidth = 0.05;
    double tol = 1e-8;
    int max_iter = 100;
    bool scale_to_unit = false;
    std::vector<int> scale_z;
    bool include_sigma2 = false;
    std::string model;
    std::string data;
    std::string out;
    std::string config;
};

// Registers an option on both the command line and the JSON config key set.
struct OptionSet {
    CLI::App* app;
    std::vector<std::string> keys;

    template <class T>
    CLI::Option* add(const std::string& name, T& target, const std::string& help) {
        keys.push_back(name);
        return app->add_option("--" + name, target, help);
    }
    CLI::Option* flag(const std::string& name, bool& target, const std::string& help) {
        keys.push_back(name);
        return app->add_flag("--" + name, target, help);
    }
};

void add_numerics(OptionSet& o, RunConfig& c) {
    o.add("grid-m", c.grid_m, "working-model grid size")->capture_default_str();
    o.add("quad-nodes", c.quad_nodes, "Gauss-Hermite nodes")->capture_default_str();
    o.add("bandwidth", c.bandwidth, "localized Kaplan-Meier bandwidth")->capture_default_str();
    o.add("tol", c.tol, "root-finding tolerance on the mean score")->capture_default_str();
    o.add("max-iter", c.max_iter, "Newton iteration cap")->capture_default_str();
    o.add("threads", c.threads, "worker threads")->capture_default_str();
}

// Fills options not given on the command line from a JSON object.  Keys are
// the long flag names without dashes; unknown keys are rejected.
void merge_config_file(CLI::App& sub, const std::vector<std::string>& keys, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw spire::ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw spire::ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw spire::ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(keys.begin(), keys.end(), key) == keys.end() || key == "config")
            throw spire::ConfigError("unknown config key '" + key + "'");
        CLI::Option* opt = sub.get_option("--" + key);
        if (opt->count() > 0) continue;  // command line wins
        std::vector<std::string> results;
        auto scalar = [&](const nlohmann::json& v) {
            if (v.is_string()) return v.get<std::string>();
            if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
            if (v.is_number()) {
                std::ostringstream ss;
                ss.precision(17);
                if (v.is_number_integer()) ss << v.get<long long>();
                else ss << v.get<double>();
                return ss.str();
            }
            throw spire::ConfigError("config key '" + key + "' has an unsupported value type");
        };
        if (value.is_array())
            for (const auto& v : value) results.push_back(scalar(v));
        else
            results.push_back(scalar(value));
        opt->clear();
        for (const auto& r : results) opt->add_result(r);
        try {
            opt->run_callback();
        } catch (const CLI::ParseError& e) {
            throw spire::ConfigError("config key '" + key + "': " + e.what());
        }
    }
}

ordered_json config_json(const RunConfig& c, const std::string& command) {
    ordered_json j;
    j["command"] = command;
    if (command == "simulate" || command == "generate") {
        j["design"] = c.design;
        if (c.mu) j["mu"] = *c.mu;
        j["alpha"] = c.alpha;
        j["sigma"] = c.sigma;
        j["n"] = c.n;
        if (command == "simulate") {
            j["N"] = c.N;
            j["study"] = c.study;
            j["estimators"] = c.estimators;
            j["bases"] = c.bases;
            j["level"] = c.level;
            j["target-censoring"] = c.target_censoring;
        }
        j["seed"] = c.seed;
    } else {
        j["data"] = c.data;
        j["model"] = c.model;
        if (command == "fit") {
            j["estimator"] = c.estimator;
            j["working"] = c.working;
            if (!c.design.empty()) j["design"] = c.design;
        } else {
            j["bases"] = c.bases;
            j["include-sigma2"] = c.include_sigma2;
        }
        j["scale-to-unit"] = c.scale_to_unit;
        j["scale-z"] = c.scale_z;
    }
    if (command != "generate") {
        j["grid-m"] = c.grid_m;
        j["quad-nodes"] = c.quad_nodes;
        j["bandwidth"] = c.bandwidth;
        j["tol"] = c.tol;
        j["max-iter"] = c.max_iter;
        j["threads"] = c.threads;
    }
    j["out"] = c.out;
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw WriteError("cannot write '" + path.string() + "'");
    os << text;
    os.flush();
    if (!os) throw WriteError("write to '" + path.string() + "' failed");
}

fs::path prepare_out_dir(const std::string& out) {
    const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir)) throw WriteError("output directory '" + dir.string() + "' cannot be created");
    return dir;
}

spire::SimulationConfig simulation_config(const RunConfig& c) {
    spire::SimulationConfig s;
    s.design.design = spire::parse_design(c.design);
    s.design.mu = c.mu.value_or(0.0);
    s.design.alpha = c.alpha.empty() ? 0.0 : c.alpha.front();
    s.design.sigma = c.sigma;
    s.n = c.n;
    s.replicates = c.N;
    s.seed = c.seed;
    s.grid_m = c.grid_m;
    s.quad_nodes = c.quad_nodes;
    s.bandwidth = c.bandwidth;
    s.tol = c.tol;
    s.max_iter = c.max_iter;
    s.threads = c.threads;
    return s;
}

std::vector<spire::EstimatorType> parse_bases(const std::string& text) {
    std::vector<spire::EstimatorType> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        const auto t = spire::parse_estimator_type(tok);
        if (t == spire::EstimatorType::mle) throw spire::ConfigError("the MLE cannot be a test base");
        out.push_back(t);
    }
    if (out.empty()) throw spire::ConfigError("no test bases given");
    return out;
}

ordered_json optional_number(double v) {
    return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
}

int cmd_simulate(const RunConfig& c) {
    const spire::Design design = spire::parse_design(c.design);
    std::string study = c.study.empty() ? (design == spire::Design::power ? "power" : "estimate") : c.study;
    if (study != "estimate" && study != "power")
        throw spire::ConfigError("study must be 'estimate' or 'power'");
    spire::SimulationConfig sc = simulation_config(c);
    const fs::path dir = prepare_out_dir(c.out);
    ordered_json j;
    RunConfig resolved = c;
    resolved.study = study;
    j["config"] = config_json(resolved, "simulate");
    j["seed"] = c.seed;
    std::ostringstream csv;
    bool flagged = false;

    if (study == "estimate") {
        if (design == spire::Design::power && !c.mu)
            sc.design.mu = spire::calibrate_power_mu(sc.design.alpha, sc.design.sigma, c.target_censoring);
        sc.estimators = spire::parse_estimator_choices(c.estimators);
        const auto mc = spire::run_monte_carlo(sc);
        spire::write_summary_csv(csv, mc.table);
        j["design"] = sc.design.label();
        j["censoring"] = {{"mean", mc.table.mean_censoring},
                          {"min", mc.table.min_censoring},
                          {"max", mc.table.max_censoring}};
        ordered_json rows = ordered_json::array();
        for (const auto& r : mc.table.rows) {
            rows.push_back({{"design", r.design},
                            {"estimator", r.estimator},
                            {"working", r.working},
                            {"param", r.param},
                            {"truth", r.truth},
                            {"mean", r.mean},
                            {"ese", r.ese ? ordered_json(*r.ese) : ordered_json(nullptr)},
                            {"ase", r.ase},
                            {"cov", r.cov},
                            {"converged", r.converged},
                            {"nonconverged", r.nonconverged},
                            {"flagged", r.flagged}});
        }
        j["rows"] = std::move(rows);
        flagged = mc.table.any_flagged();
    } else {
        spire::PowerConfig pc;
        sc.estimators.push_back({});
        pc.sim = sc;
        pc.alphas = c.alpha;
        pc.bases = parse_bases(c.bases);
        pc.level = c.level;
        pc.target_censoring = c.target_censoring;
        pc.calibrate = !c.mu.has_value();
        const auto rows = spire::run_power_study(pc);
        csv << "design,estimator,working,param,mean,ese,ase,cov,nonconverged\n";
        ordered_json out = ordered_json::array();
        for (const auto& r : rows) {
            csv << '"' << r.design << "\"," << r.base << ",km,rejection_rate," << spire::format_double(r.rate())
                << ',' << spire::format_double(r.mc_se()) << ",,," << r.nonconverged << '\n';
            out.push_back({{"design", r.design},
                           {"alpha", r.alpha},
                           {"mu", r.mu},
                           {"base", r.base},
                           {"rejection_rate", r.rate()},
                           {"mc_se", r.mc_se()},
                           {"rejections", r.rejections},
                           {"valid", r.valid},
                           {"nonconverged", r.nonconverged},
                           {"mean_censoring", r.mean_censoring},
                           {"flagged", r.flagged()}});
            flagged = flagged || r.flagged();
        }
        j["level"] = c.level;
        j["rows"] = std::move(out);
    }
    j["flagged"] = flagged;
    write_text(dir / "summary.csv", csv.str());
    write_text(dir / "summary.json", j.dump(2) + "\n");
    std::cout << csv.str();
    if (flagged) {
        std::cerr << "more than 20% of fits failed for at least one estimator\n";
        return kNonConvergence;
    }
    return kOk;
}

spire::Dataset load_data(const RunConfig& c) {
    if (c.data.empty()) throw spire::ConfigError("--data is required");
    spire::Dataset data = spire::read_csv(c.data);
    if (c.scale_to_unit) {
        std::vector<std::size_t> cols;
        for (int k : c.scale_z) {
            if (k < 1) throw spire::ConfigError("scale-z columns are numbered from 1");
            cols.push_back(static_cast<std::size_t>(k - 1));
        }
        data = spire::scale_to_unit(data, cols);
    } else if (!c.scale_z.empty()) {
        throw spire::ConfigError("--scale-z needs --scale-to-unit");
    }
    return data;
}

spire::ModelSpec resolve_model(const RunConfig& c, const spire::Dataset& data, bool design_given) {
    if (!c.model.empty()) return spire::ModelSpec::parse(c.model);
    if (design_given) return spire::design_model(spire::parse_design(c.design));
    return spire::ModelSpec::additive(data.dim());
}

spire::FitOptions fit_options(const RunConfig& c) {
    if (c.quad_nodes < 2 || c.quad_nodes > 128) throw spire::ConfigError("quad-nodes must lie in [2, 128]");
    if (!(c.tol > 0.0)) throw spire::ConfigError("tol must be positive");
    if (c.max_iter < 1) throw spire::ConfigError("max-iter must be at least 1");
    if (c.grid_m < 2) throw spire::ConfigError("grid-m must be at least 2");
    if (!(c.bandwidth > 0.0)) throw spire::ConfigError("bandwidth must be positive");
    spire::FitOptions f;
    f.quad_nodes = c.quad_nodes;
    f.newton.tol = c.tol;
    f.newton.max_iter = c.max_iter;
    return f;
}

int cmd_fit(const RunConfig& c, bool design_given) {
    const spire::Dataset data = load_data(c);
    const spire::ModelSpec spec = resolve_model(c, data, design_given);
    spec.validate(data.dim());
    const spire::FitOptions fopt = fit_options(c);
    const spire::KmConfig km{c.bandwidth};
    const auto type = spire::parse_estimator_type(c.estimator);
    std::optional<spire::DesignParams> design;
    if (design_given) {
        spire::DesignParams d;
        d.design = spire::parse_design(c.design);
        d.mu = c.mu.value_or(0.0);
        d.alpha = c.alpha.empty() ? 0.0 : c.alpha.front();
        d.sigma = c.sigma;
        design = d;
    }
    if (c.working != "true" && c.working != "unif" && c.working != "km")
        throw spire::ConfigError("working must be true, unif or km");
    if (c.working == "true" && !design && type != spire::EstimatorType::cc)
        throw spire::ConfigError("--working true needs --design to name the generating model");

    auto working_model = [&]() -> std::shared_ptr<const spire::DiscreteWorkingModel> {
        spire::Grid grid = spire::make_grid(data, c.grid_m);
        if (c.working == "km")
            return std::make_shared<const spire::DiscreteWorkingModel>(
                spire::km_density_on_grid(data, std::move(grid), km));
        if (c.working == "unif") {
            const double lo = design && design->design == spire::Design::realistic ? 0.0 : grid.lower();
            const double hi = design && design->design == spire::Design::realistic ? 1.0 : grid.upper();
            return std::make_shared<const spire::DiscreteWorkingModel>(
                spire::uniform_working_model(std::move(grid), lo, hi));
        }
        return spire::design_working_model(*design, "true", spire::SimulatedData{data, {}, {}}, c.grid_m, km);
    };
    spire::EstimatorKind kind;
    switch (type) {
        case spire::EstimatorType::cc: kind = spire::EstimatorKind::cc(); break;
        case spire::EstimatorType::ipw:
            kind = spire::EstimatorKind::ipw(c.working == "true" ? spire::design_true_censoring_weight(*design)
                                                                 : spire::km_censoring_weight(data, km));
            break;
        case spire::EstimatorType::mle: kind = spire::EstimatorKind::mle(working_model()); break;
        case spire::EstimatorType::spire: kind = spire::EstimatorKind::spire(working_model()); break;
    }
    const spire::EstimationResult res = spire::fit(data, spec, kind, fopt);

    const auto p = static_cast<Eigen::Index>(spec.n_terms());
    ordered_json j;
    j["estimator"] = spire::to_string(type);
    j["working_model"] = type == spire::EstimatorType::cc ? "none" : c.working;
    j["model"] = spec.to_string();
    ordered_json beta = ordered_json::array(), ase = ordered_json::array(), ci = ordered_json::array();
    const spire::Vector theta = res.theta();
    for (Eigen::Index k = 0; k < p; ++k) {
        beta.push_back(theta(k));
        ase.push_back(optional_number(res.ase(k)));
        ci.push_back({optional_number(theta(k) - 1.959963984540054 * res.ase(k)),
                      optional_number(theta(k) + 1.959963984540054 * res.ase(k))});
    }
    j["beta_hat"] = std::move(beta);
    j["ase"] = std::move(ase);
    j["ci95"] = std::move(ci);
    j["sigma2_hat"] = theta(p);
    j["sigma2_ase"] = optional_number(res.ase(p));
    j["converged"] = res.converged();
    j["iterations"] = res.report.iterations;
    j["final_norm"] = optional_number(res.report.final_norm);
    j["message"] = res.report.message;
    j["dropped_rows"] = res.dropped_rows;
    j["n"] = res.n;
    j["warnings"] = res.warnings;
    j["config"] = config_json(c, "fit");
    const fs::path dir = prepare_out_dir(c.out);
    write_text(dir / "fit.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
    if (!res.converged()) {
        std::cerr << "fit did not converge: " << res.report.message << "\n";
        return kNonConvergence;
    }
    return kOk;
}

int cmd_test(const RunConfig& c, bool design_given) {
    const spire::Dataset data = load_data(c);
    const spire::ModelSpec spec = resolve_model(c, data, design_given);
    spec.validate(data.dim());
    spire::TestOptions topt;
    topt.grid_m = c.grid_m;
    topt.fit = fit_options(c);
    topt.km = spire::KmConfig{c.bandwidth};
    topt.include_sigma2 = c.include_sigma2;
    const auto bases = parse_bases(c.bases);
    const fs::path dir = prepare_out_dir(c.out);
    ordered_json j;
    j["model"] = spec.to_string();
    try {
        const auto results = spire::noninformative_tests(data, spec, bases, topt);
        ordered_json tests = ordered_json::array();
        for (const auto& r : results) {
            tests.push_back({{"base", spire::to_string(r.base)},
                             {"statistic", r.statistic},
                             {"df", r.df},
                             {"p_value", r.p_value},
                             {"beta1", std::vector<double>(r.beta1.data(), r.beta1.data() + r.beta1.size())},
                             {"beta2", std::vector<double>(r.beta2.data(), r.beta2.data() + r.beta2.size())}});
        }
        j["tests"] = std::move(tests);
        j["config"] = config_json(c, "test");
        write_text(dir / "test.json", j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
        return kOk;
    } catch (const spire::TestFitError& e) {
        j["error"] = e.what();
        j["base_report"] = {{"converged", e.base_report.converged},
                            {"iterations", e.base_report.iterations},
                            {"final_norm", optional_number(e.base_report.final_norm)},
                            {"message", e.base_report.message}};
        j["mle_report"] = {{"converged", e.mle_report.converged},
                           {"iterations", e.mle_report.iterations},
                           {"final_norm", optional_number(e.mle_report.final_norm)},
                           {"message", e.mle_report.message}};
        j["config"] = config_json(c, "test");
        write_text(dir / "test.json", j.dump(2) + "\n");
        std::cerr << e.what() << "\n";
        return kNonConvergence;
    }
}

int cmd_generate(const RunConfig& c) {
    spire::DesignParams d;
    d.design = spire::parse_design(c.design);
    d.alpha = c.alpha.empty() ? 0.0 : c.alpha.front();
    d.sigma = c.sigma;
    d.mu = c.mu ? *c.mu : (d.design == spire::Design::power ? spire::calibrate_power_mu(d.alpha, d.sigma, c.target_censoring) : 0.0);
    if (c.n < 1) throw spire::ConfigError("n must be positive");
    spire::Rng rng = spire::substream(c.seed, 0);
    const spire::SimulatedData sim = spire::generate(d, c.n, rng);
    std::ostringstream os;
    spire::write_csv(os, sim.data);
    if (c.out.empty() || c.out == "-") {
        std::cout << os.str();
    } else {
        const fs::path path(c.out);
        if (path.has_parent_path()) {
            std::error_code ec;
            fs::create_directories(path.parent_path(), ec);
        }
        write_text(path, os.str());
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Regression with a randomly right-censored covariate: estimation, simulation and testing"};
    app.require_subcommand(1);
    RunConfig cfg;

    auto* sim = app.add_subcommand("simulate", "Monte Carlo study over a simulation design");
    OptionSet so{sim, {}};
    so.add("design", cfg.design, "controlled, realistic or power")->capture_default_str();
    so.add("mu", cfg.mu, "shift of X (power design: calibrated when omitted)");
    so.add("alpha", cfg.alpha, "X-C dependence in the power design (comma separated list)")->delimiter(',');
    so.add("sigma", cfg.sigma, "precision of X in the power design")->capture_default_str();
    so.add("n", cfg.n, "sample size")->capture_default_str();
    so.add("N", cfg.N, "number of replicates")->capture_default_str();
    so.add("seed", cfg.seed, "base seed")->capture_default_str();
    so.add("estimators", cfg.estimators, "comma separated type:working list")->capture_default_str();
    so.add("study", cfg.study, "estimate or power (default by design)");
    so.add("bases", cfg.bases, "test bases for power studies")->capture_default_str();
    so.add("level", cfg.level, "test level")->capture_default_str();
    so.add("target-censoring", cfg.target_censoring, "censoring rate for mu calibration")->capture_default_str();
    add_numerics(so, cfg);
    so.add("out", cfg.out, "output directory");
    so.add("config", cfg.config, "JSON file with default settings");

    auto* fitc = app.add_subcommand("fit", "fit one estimator to a CSV dataset");
    OptionSet fo{fitc, {}};
    fo.add("data", cfg.data, "CSV with columns y,w,delta,z1..zd");
    fo.add("model", cfg.model, "mean terms, e.g. 1,x,z1 (default: additive)");
    fo.add("estimator", cfg.estimator, "cc, ipw, mle or spire")->capture_default_str();
    fo.add("working", cfg.working, "true, unif or km")->capture_default_str();
    fo.add("design", cfg.design, "generating design, for --working true");
    fo.add("mu", cfg.mu, "design shift, for --working true");
    fo.add("alpha", cfg.alpha, "design dependence, for --working true")->delimiter(',');
    fo.add("sigma", cfg.sigma, "design precision, for --working true");
    fo.flag("scale-to-unit", cfg.scale_to_unit, "min-max scale w and the --scale-z columns to [0, 1]");
    fo.add("scale-z", cfg.scale_z, "1-based covariate columns to scale")->delimiter(',');
    add_numerics(fo, cfg);
    fo.add("out", cfg.out, "output directory");
    fo.add("config", cfg.config, "JSON file with default settings");

    auto* testc = app.add_subcommand("test", "test whether covariate censoring is noninformative");
    OptionSet to{testc, {}};
    to.add("data", cfg.data, "CSV with columns y,w,delta,z1..zd");
    to.add("model", cfg.model, "mean terms (default: additive)");
    to.add("bases", cfg.bases, "comparison estimators")->capture_default_str();
    to.add("design", cfg.design, "use the design's mean model");
    to.flag("include-sigma2", cfg.include_sigma2, "also compare the residual variance");
    to.flag("scale-to-unit", cfg.scale_to_unit, "min-max scale w and the --scale-z columns to [0, 1]");
    to.add("scale-z", cfg.scale_z, "1-based covariate columns to scale")->delimiter(',');
    add_numerics(to, cfg);
    to.add("out", cfg.out, "output directory");
    to.add("config", cfg.config, "JSON file with default settings");

    auto* gen = app.add_subcommand("generate", "write one simulated dataset as CSV");
    OptionSet go{gen, {}};
    go.add("design", cfg.design, "controlled, realistic or power")->capture_default_str();
    go.add("mu", cfg.mu, "shift of X");
    go.add("alpha", cfg.alpha, "X-C dependence in the power design")->delimiter(',');
    go.add("sigma", cfg.sigma, "precision of X in the power design");
    go.add("n", cfg.n, "sample size")->capture_default_str();
    go.add("seed", cfg.seed, "seed")->capture_default_str();
    go.add("target-censoring", cfg.target_censoring, "censoring rate for mu calibration");
    go.add("out", cfg.out, "output CSV path (default stdout)");
    go.add("config", cfg.config, "JSON file with default settings");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        CLI::App* active = app.get_subcommands().front();
        const std::vector<std::string>* keys = &so.keys;
        if (active == fitc) keys = &fo.keys;
        if (active == testc) keys = &to.keys;
        if (active == gen) keys = &go.keys;
        const bool design_on_cli = active->get_option("--design")->count() > 0;
        if (!cfg.config.empty()) merge_config_file(*active, *keys, cfg.config);
        const bool design_given = design_on_cli || active->get_option("--design")->count() > 0;
        if ((active == fitc || active == testc) && !design_given) cfg.design.clear();
        if (active == sim) return cmd_simulate(cfg);
        if (active == fitc) return cmd_fit(cfg, design_given);
        if (active == testc) return cmd_test(cfg, design_given);
        return cmd_generate(cfg);
    } catch (const spire::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.get_subcommands().front()->help();
        return kConfigError;
    } catch (const spire::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const WriteError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kWriteError;
    } catch (const spire::DegenerateModelError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNonConvergence;
    } catch (const spire::NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNonConvergence;
    }
}
