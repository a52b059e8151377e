#pragma once
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <catefuse/data.hpp>
#include <catefuse/error.hpp>
#include <catefuse/estimators.hpp>
#include <catefuse/evaluation.hpp>
#include <catefuse/json_io.hpp>
#include <catefuse/lasso.hpp>
#include <catefuse/simulator.hpp>

namespace catefuse {
namespace cli {

namespace fs = std::filesystem;

struct UsageError : ConfigError
{
    using ConfigError::ConfigError;
};

enum class Command { simulate, fit, experiment, report };

inline const char* to_string(Command c)
{
    switch (c) {
    case Command::simulate: return "simulate";
    case Command::fit: return "fit";
    case Command::experiment: return "experiment";
    case Command::report: return "report";
    }
    return "?";
}

struct RunConfig
{
    Command command = Command::simulate;
    std::optional<std::string> help; // set when --help was requested; nothing else is valid then
    bool json_errors = false;
    int verbosity = 0;
    std::uint64_t seed = 0;

    // simulate
    SimConfig sim;
    // fit
    Method method = Method::naive;
    fs::path rct_path;
    fs::path os_path;
    std::optional<double> pi_plus1;
    EstimatorOptions estimator;
    // experiment
    ExperimentSpec spec;
    // report
    fs::path report_in;
    std::optional<ReportFormat> report_format; // empty: every format
    // simulate / experiment / report: directory; fit: model file
    fs::path out;
};

/// Exit status for an exception escaping a command.
inline int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const ConfigError*>(&e)) return 1;
    if (dynamic_cast<const NumericalError*>(&e)) return 3;
    return 2;
}

inline const char* error_kind(int code)
{
    switch (code) {
    case 1: return "usage";
    case 3: return "numerical";
    default: return "data";
    }
}

namespace detail {

/// Values collected from the command line before defaults are resolved.
struct RawArgs
{
    std::string config_path;
    bool json_errors = false;
    int verbose = 0;

    std::optional<std::uint64_t> seed;
    std::string out;

    // simulate
    std::optional<int> p, n_r, n_o, support_size;
    std::optional<double> noise_sd, rho, removal_fraction, os_treated_fraction;
    bool misspecified = false;
    std::string misspec_kind;

    // fit
    std::string method, rct, os, lambda_rule;
    std::optional<int> k, cv_folds;
    std::optional<double> pi;

    // experiment
    std::string spec;
    std::optional<int> jobs, replicates;

    // report
    std::string in, format;
};

inline std::string option_name(std::string key)
{
    for (char& c : key) {
        if (c == '_') c = '-';
    }
    return "--" + key;
}

inline std::string json_scalar(const nlohmann::ordered_json& v, const std::string& field)
{
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer() || v.is_number_unsigned() || v.is_number_float()) return v.dump();
    throw UsageError("config field '" + field + "' must be a string, number or boolean");
}

/// Applies config entries to options of `sub` that were not given on the command line.
inline void apply_config(CLI::App& sub, const nlohmann::ordered_json& entries, const std::string& where)
{
    for (const auto& item : entries.items()) {
        const std::string name = option_name(item.key());
        if (name == "--config" || name == "--help") throw UsageError("config field '" + item.key() + "' is not allowed");
        CLI::Option* opt = sub.get_option_no_throw(name);
        if (!opt) throw UsageError("unknown config field '" + item.key() + "' in " + where);
        if (opt->count() > 0) continue;
        opt->add_result(json_scalar(item.value(), item.key()));
        try {
            opt->run_callback();
        } catch (const CLI::Error& e) {
            throw UsageError("malformed value for config field '" + item.key() + "': " + e.what());
        }
    }
}

inline void merge_config(CLI::App& app, CLI::App& sub, const std::string& path)
{
    nlohmann::ordered_json cfg;
    try {
        cfg = json_io::read_json_file(path);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
    nlohmann::ordered_json flat = nlohmann::ordered_json::object();
    for (const auto& item : cfg.items()) {
        if (app.get_subcommand_no_throw(item.key())) {
            if (item.key() != sub.get_name()) continue; // section for another command
            if (!item.value().is_object()) throw UsageError("config section '" + item.key() + "' must be an object");
            apply_config(sub, item.value(), "section '" + item.key() + "'");
        } else {
            flat[item.key()] = item.value();
        }
    }
    apply_config(sub, flat, "config file");
}

inline fs::path existing_file(const std::string& path, const std::string& flag)
{
    if (!fs::is_regular_file(path)) throw UsageError(flag + ": file '" + path + "' does not exist");
    return path;
}

inline std::optional<std::uint64_t> env_seed()
{
    const char* env = std::getenv("CATEFUSE_SEED");
    if (!env || !*env) return std::nullopt;
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw UsageError(std::string("CATEFUSE_SEED must be an unsigned integer, got '") + env + "'");
    }
}

inline lasso::LambdaRule parse_rule(const std::string& s)
{
    if (s == "min") return lasso::LambdaRule::min;
    if (s == "1se") return lasso::LambdaRule::one_se;
    throw UsageError("--lambda-rule must be min or 1se");
}

} // namespace detail

/**
 * Parses argv into a validated RunConfig. Throws UsageError for unknown
 * flags, missing required values, missing input files, malformed JSON and
 * out-of-range settings.
 */
inline RunConfig parse_args(int argc, const char* const* argv)
{
    detail::RawArgs raw;
    CLI::App app{"Sparse outcome-shift CATE estimation with RCT and observational data", "catefuse"};
    app.set_version_flag("--version", std::string(CATEFUSE_VERSION));
    app.require_subcommand(1, 1);
    app.fallthrough();
    app.add_option("--config", raw.config_path, "JSON file with option values; command-line flags win");
    app.add_flag("--json-errors", raw.json_errors, "Report errors as a JSON object on stderr");
    app.add_flag("-v,--verbose", raw.verbose, "Progress messages on stderr");

    auto* sim = app.add_subcommand("simulate", "Draw an OS and an RCT sample plus the ground truth");
    sim->add_option("--p", raw.p, "Number of covariates");
    sim->add_option("--n-r", raw.n_r, "RCT sample size");
    sim->add_option("--n-o", raw.n_o, "OS sample size");
    sim->add_option("--support-size", raw.support_size, "Nonzero coefficients per arm");
    sim->add_option("--noise-sd", raw.noise_sd, "Outcome noise standard deviation");
    sim->add_option("--rho", raw.rho, "AR(1) covariate correlation");
    sim->add_option("--os-treated-fraction", raw.os_treated_fraction, "Target treated share in the OS");
    sim->add_flag("--misspecified", raw.misspecified, "Add nonlinear terms to the outcome model");
    sim->add_option("--misspec-kind", raw.misspec_kind, "quadratic or sine");
    sim->add_option("--removal-fraction", raw.removal_fraction, "Share of effect modifiers hidden from the data");
    sim->add_option("--seed", raw.seed, "Random seed (falls back to CATEFUSE_SEED)");
    sim->add_option("--out", raw.out, "Output directory");

    auto* fit = app.add_subcommand("fit", "Fit a CATE model");
    fit->add_option("--method", raw.method, "naive | cface-rct | proposed | robust | crossfit");
    fit->add_option("--rct", raw.rct, "RCT CSV file");
    fit->add_option("--os", raw.os, "OS CSV file (proposed, robust, crossfit)");
    fit->add_option("--k", raw.k, "Cross-fitting folds");
    fit->add_option("--cv-folds", raw.cv_folds, "Folds for penalty selection");
    fit->add_option("--lambda-rule", raw.lambda_rule, "min or 1se");
    fit->add_option("--pi", raw.pi, "RCT treatment probability (default: metadata or treated share)");
    fit->add_option("--seed", raw.seed, "Random seed (falls back to CATEFUSE_SEED)");
    fit->add_option("--out", raw.out, "Model JSON file");

    auto* exp = app.add_subcommand("experiment", "Run a simulation grid and write the RMSE report");
    exp->add_option("--spec", raw.spec, "Experiment spec JSON (default: the desk-scale grid)");
    exp->add_option("--jobs", raw.jobs, "Worker threads");
    exp->add_option("--replicates", raw.replicates, "Replicates per cell");
    exp->add_option("--seed", raw.seed, "Base seed (falls back to CATEFUSE_SEED)");
    exp->add_option("--out", raw.out, "Output directory");

    auto* rep = app.add_subcommand("report", "Render a stored report.csv");
    rep->add_option("--in", raw.in, "report.csv produced by experiment");
    rep->add_option("--format", raw.format, "csv | markdown | plotdata (default: all)");
    rep->add_option("--out", raw.out, "Output directory");

    RunConfig cfg;
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        cfg.help = app.help();
        return cfg;
    } catch (const CLI::CallForAllHelp&) {
        cfg.help = app.help("", CLI::AppFormatMode::All);
        return cfg;
    } catch (const CLI::CallForVersion&) {
        cfg.help = std::string(CATEFUSE_VERSION) + "\n";
        return cfg;
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (!raw.config_path.empty()) detail::merge_config(app, *sub, raw.config_path);

    cfg.json_errors = raw.json_errors;
    cfg.verbosity = raw.verbose;
    std::optional<std::uint64_t> seed = raw.seed;
    if (!seed) seed = detail::env_seed();

    auto require_out = [&]() {
        if (raw.out.empty()) throw UsageError(name + ": missing required option --out");
        cfg.out = raw.out;
    };

    try {
        if (name == "simulate") {
            cfg.command = Command::simulate;
            require_out();
            SimConfig& s = cfg.sim;
            if (raw.p) s.p = *raw.p;
            if (raw.n_r) s.n_r = *raw.n_r;
            if (raw.n_o) s.n_o = *raw.n_o;
            if (raw.support_size) s.support_size = *raw.support_size;
            if (raw.noise_sd) s.noise_sd = *raw.noise_sd;
            if (raw.rho) s.rho = *raw.rho;
            if (raw.os_treated_fraction) s.os_treated_fraction = *raw.os_treated_fraction;
            s.misspecified = raw.misspecified;
            if (!raw.misspec_kind.empty()) s.misspec_kind = json_io::parse_misspec_kind(raw.misspec_kind);
            if (raw.removal_fraction) s.removed_modifier_fraction = *raw.removal_fraction;
            s.seed = seed.value_or(0);
            cfg.seed = s.seed;
            s.validate();
        } else if (name == "fit") {
            cfg.command = Command::fit;
            require_out();
            if (raw.method.empty()) throw UsageError("fit: missing required option --method");
            cfg.method = parse_method(raw.method);
            if (raw.rct.empty()) throw UsageError("fit: missing required option --rct");
            cfg.rct_path = detail::existing_file(raw.rct, "--rct");
            if (needs_os(cfg.method) && raw.os.empty()) {
                throw UsageError(std::string("fit: method ") + to_string(cfg.method) + " needs --os");
            }
            if (!raw.os.empty()) cfg.os_path = detail::existing_file(raw.os, "--os");
            if (raw.k) cfg.estimator.cross_fit_folds = *raw.k;
            if (raw.cv_folds) cfg.estimator.cv.k_folds = *raw.cv_folds;
            if (!raw.lambda_rule.empty()) cfg.estimator.cv.rule = detail::parse_rule(raw.lambda_rule);
            if (cfg.estimator.cross_fit_folds < 2) throw UsageError("--k must be >= 2");
            if (cfg.estimator.cv.k_folds < 2) throw UsageError("--cv-folds must be >= 2");
            if (raw.pi) {
                if (!(*raw.pi > 0.0 && *raw.pi < 1.0)) throw UsageError("--pi must lie in (0, 1)");
                cfg.pi_plus1 = raw.pi;
            }
            cfg.seed = seed.value_or(0);
        } else if (name == "experiment") {
            cfg.command = Command::experiment;
            require_out();
            bool spec_has_seed = false;
            if (!raw.spec.empty()) {
                detail::existing_file(raw.spec, "--spec");
                const auto j = json_io::read_json_file(raw.spec);
                cfg.spec = json_io::experiment_spec_from_json(j);
                spec_has_seed = j.contains("base_seed");
            }
            if (raw.seed) {
                cfg.spec.base_seed = *raw.seed;
            } else if (!spec_has_seed && seed) {
                cfg.spec.base_seed = *seed;
            }
            if (raw.jobs) cfg.spec.jobs = *raw.jobs;
            if (raw.replicates) cfg.spec.replicates = *raw.replicates;
            cfg.seed = cfg.spec.base_seed;
            cfg.spec.validate();
        } else {
            cfg.command = Command::report;
            if (raw.in.empty()) throw UsageError("report: missing required option --in");
            cfg.report_in = detail::existing_file(raw.in, "--in");
            if (!raw.format.empty()) cfg.report_format = parse_report_format(raw.format);
            require_out();
        }
    } catch (const UsageError&) {
        throw;
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

namespace detail {

inline void log(const RunConfig& cfg, std::ostream& err, const std::string& msg)
{
    if (cfg.verbosity > 0) err << "catefuse: " << msg << '\n';
}

inline int run_simulate(const RunConfig& cfg, std::ostream& err)
{
    auto studies = simulate(cfg.sim);
    fs::create_directories(cfg.out);
    write_csv(studies.rct, (cfg.out / "rct.csv").string());
    write_csv(studies.os, (cfg.out / "os.csv").string());
    json_io::write_json_file((cfg.out / "truth.json").string(), json_io::to_json(studies.truth, cfg.sim));
    log(cfg, err, "wrote rct.csv, os.csv and truth.json to " + cfg.out.string());
    return 0;
}

inline int run_fit(const RunConfig& cfg, std::ostream& err)
{
    StudyDataset rct = read_csv(cfg.rct_path.string());
    if (rct.study != Study::rct) throw DataError("--rct: file holds study 'o' rows, expected 'r'");
    if (cfg.pi_plus1) rct.propensity = PropensitySpec::constant_rate(*cfg.pi_plus1).pi_plus1;
    std::optional<ArmModels> os_models;
    if (!cfg.os_path.empty() && needs_os(cfg.method)) {
        const StudyDataset os = read_csv(cfg.os_path.string());
        if (os.study != Study::os) throw DataError("--os: file holds study 'r' rows, expected 'o'");
        check_aligned(os, rct);
        log(cfg, err, "fitting OS arm models");
        os_models = fit_os_models(os, derive_seed(cfg.seed, {stream_os}), cfg.estimator);
    }
    log(cfg, err, std::string("fitting ") + to_string(cfg.method));
    const CateModel model = fit_method(cfg.method, rct, os_models ? &*os_models : nullptr,
                                       derive_seed(cfg.seed, {stream_fit}), cfg.estimator);
    if (cfg.out.has_parent_path()) fs::create_directories(cfg.out.parent_path());
    json_io::write_json_file(cfg.out.string(), json_io::to_json(model, rct.feature_names));
    log(cfg, err, "wrote " + cfg.out.string());
    return 0;
}

inline int run_experiment_cmd(const RunConfig& cfg, std::ostream& err)
{
    log(cfg, err,
        "running " + std::to_string(cfg.spec.cells().size()) + " cells x " + std::to_string(cfg.spec.replicates) +
            " replicates on " + std::to_string(cfg.spec.jobs) + " threads");
    const auto report = run_experiment(cfg.spec);
    for (auto f : {ReportFormat::csv, ReportFormat::markdown, ReportFormat::plotdata}) emit_report(report, f, cfg.out);
    json_io::write_json_file((cfg.out / "report.json").string(), json_io::to_json(report));
    json_io::write_json_file((cfg.out / "spec.json").string(), json_io::to_json(cfg.spec));
    log(cfg, err, "wrote report files to " + cfg.out.string());
    return 0;
}

inline int run_report(const RunConfig& cfg, std::ostream& err)
{
    std::ifstream in(cfg.report_in);
    if (!in) throw DataError("cannot open '" + cfg.report_in.string() + "'");
    const auto report = read_report_csv(in);
    if (cfg.report_format) {
        emit_report(report, *cfg.report_format, cfg.out);
    } else {
        for (auto f : {ReportFormat::csv, ReportFormat::markdown, ReportFormat::plotdata}) emit_report(report, f, cfg.out);
    }
    log(cfg, err, "wrote report files to " + cfg.out.string());
    return 0;
}

} // namespace detail

/// Executes a parsed configuration; errors propagate as exceptions.
inline int run(const RunConfig& cfg, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    if (cfg.help) {
        out << *cfg.help;
        return 0;
    }
    switch (cfg.command) {
    case Command::simulate: return detail::run_simulate(cfg, err);
    case Command::fit: return detail::run_fit(cfg, err);
    case Command::experiment: return detail::run_experiment_cmd(cfg, err);
    case Command::report: return detail::run_report(cfg, err);
    }
    return 1;
}

inline void report_error(std::ostream& err, bool as_json, int code, const std::string& message)
{
    if (as_json) {
        const nlohmann::ordered_json j{{"error", {{"code", code}, {"kind", error_kind(code)}, {"message", message}}}};
        err << j.dump() << '\n';
    } else {
        err << "catefuse: " << error_kind(code) << " error: " << message << '\n';
    }
}

/// parse_args + run with every failure mapped to an exit status.
inline int main_entry(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    bool json_errors = false;
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == "--json-errors") json_errors = true;
    }
    try {
        const RunConfig cfg = parse_args(argc, argv);
        return run(cfg, out, err);
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        report_error(err, json_errors, code, e.what());
        return code;
    }
}

} // namespace cli
} // namespace catefuse
