#pragma once
#include <Eigen/Dense>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <catefuse/data.hpp>
#include <catefuse/error.hpp>
#include <catefuse/estimators.hpp>
#include <catefuse/rng.hpp>
#include <catefuse/simulator.hpp>

#ifndef CATEFUSE_VERSION
#define CATEFUSE_VERSION "0.1.0"
#endif

namespace catefuse {

/// One simulation setting of an experiment grid.
struct GridCell
{
    int n_r = 250;
    int n_o = 10000;
    bool misspecified = false;
    double removal_fraction = 0.0;

    friend bool operator==(const GridCell&, const GridCell&) = default;
};

struct ExperimentSpec
{
    SimConfig sim;                               // base DGP; grid values override per cell
    std::vector<int> n_r_values{250, 500, 1000};
    std::vector<bool> misspecified_values{false};
    std::vector<double> removal_fractions{0.0};
    std::vector<Method> methods{Method::naive, Method::cface_rct, Method::proposed, Method::robust, Method::crossfit};
    int replicates = 30;
    int eval_points = 2000;
    std::uint64_t base_seed = 0;
    int jobs = 1;
    bool eval_on_training = false;               // score on the RCT training rows instead of fresh draws
    EstimatorOptions estimator;

    std::vector<GridCell> cells() const
    {
        std::vector<GridCell> out;
        for (bool mis : misspecified_values) {
            for (double frac : removal_fractions) {
                for (int n_r : n_r_values) out.push_back({n_r, sim.n_o, mis, frac});
            }
        }
        return out;
    }

    void validate() const
    {
        if (replicates < 1) throw ConfigError("replicates must be >= 1");
        if (eval_points < 1) throw ConfigError("eval_points must be >= 1");
        if (jobs < 1) throw ConfigError("jobs must be >= 1");
        if (n_r_values.empty() || misspecified_values.empty() || removal_fractions.empty()) {
            throw ConfigError("every grid axis needs at least one value");
        }
        if (methods.empty()) throw ConfigError("at least one method is required");
        for (int n : n_r_values) {
            if (n < 1) throw ConfigError("n_r values must be positive");
        }
        for (double f : removal_fractions) {
            if (!(f >= 0.0 && f <= 0.5)) throw ConfigError("removal fractions must lie in [0, 0.5]");
        }
        sim.validate();
    }
};

struct ReportRow
{
    GridCell cell;
    Method method = Method::naive;
    double rmse_mean = 0.0;
    double rmse_sd = 0.0;
    int replicates = 0;        // successful replicates
    int failures = 0;
    bool valid = true;         // false when more than 10% of replicates failed
    double wall_seconds = 0.0; // fitting time summed over replicates (not part of the CSV)
    std::vector<double> rmse_values;
};

struct ReportMetadata
{
    std::uint64_t base_seed = 0;
    std::string version = CATEFUSE_VERSION;
    int replicates_requested = 0;
    int eval_points = 0;
    std::vector<std::string> deviations;
};

struct ExperimentReport
{
    std::vector<ReportRow> rows;
    ReportMetadata metadata;

    const ReportRow* find(const GridCell& cell, Method m) const
    {
        for (const auto& r : rows) {
            if (r.cell == cell && r.method == m) return &r;
        }
        return nullptr;
    }
};

/**
 * Root-mean-square difference between the fitted and the true CATE over the
 * rows of eval_X (full covariate vectors). Columns hidden from the model
 * (truth.removed_indices) are dropped before prediction only.
 */
inline double rmse_cate(const CateModel& model, const GroundTruth& truth, const Matrix& eval_X)
{
    if (eval_X.cols() != truth.p) throw DataError("evaluation matrix width does not match the truth");
    if (eval_X.rows() < 1) throw DataError("evaluation matrix has no rows");
    std::vector<bool> removed(static_cast<std::size_t>(truth.p), false);
    for (auto j : truth.removed_indices) removed[static_cast<std::size_t>(j)] = true;
    const Index observed = truth.p - static_cast<Index>(truth.removed_indices.size());
    if (model.tau.coef.size() != observed) {
        throw DataError("model has " + std::to_string(model.tau.coef.size()) + " coefficients, expected " +
                        std::to_string(observed));
    }
    double ss = 0.0;
    for (Index i = 0; i < eval_X.rows(); ++i) {
        const auto x = eval_X.row(i).transpose();
        double pred = model.tau.intercept;
        Index k = 0;
        for (Index j = 0; j < truth.p; ++j) {
            if (!removed[static_cast<std::size_t>(j)]) pred += model.tau.coef(k++) * x(j);
        }
        const double d = pred - true_cate(truth, x);
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(eval_X.rows()));
}

namespace detail {

struct ReplicateResult
{
    std::vector<std::optional<double>> rmse;   // per method
    std::vector<double> seconds;
};

inline ReplicateResult run_replicate(const ExperimentSpec& spec, const GridCell& cell, std::uint64_t seed)
{
    SimConfig cfg = spec.sim;
    cfg.n_r = cell.n_r;
    cfg.n_o = cell.n_o;
    cfg.misspecified = cell.misspecified;
    cfg.removed_modifier_fraction = cell.removal_fraction;
    cfg.seed = seed;

    auto [truth, os, rct] = simulate(cfg);
    Matrix eval_X;
    if (!spec.eval_on_training) {
        Rng eval_rng(derive_seed(seed, {stream_eval}));
        eval_X = sample_mvn(spec.eval_points, truth.rct_mean_shift, make_covariance(cfg.p, cfg.rho), eval_rng);
    } else if (truth.removed_indices.empty()) {
        eval_X = rct.X;
    } else {
        // Training rows on the full covariate vector: replay the RCT stream.
        Rng rct_rng(derive_seed(seed, {stream_rct}));
        eval_X = gen_rct(cfg, truth, rct_rng).X;
    }

    const std::uint64_t fit_seed = derive_seed(seed, {stream_fit});
    std::optional<ArmModels> os_models;
    std::optional<std::string> os_failure;
    ReplicateResult res;
    for (Method m : spec.methods) {
        const auto start = std::chrono::steady_clock::now();
        std::optional<double> value;
        try {
            if (needs_os(m) && !os_models && !os_failure) {
                try {
                    os_models = fit_os_models(os, fit_seed, spec.estimator);
                } catch (const Error& e) {
                    os_failure = e.what();
                }
            }
            if (!needs_os(m) || os_models) {
                const auto model = fit_method(m, rct, os_models ? &*os_models : nullptr,
                                              derive_seed(fit_seed, {static_cast<std::uint64_t>(m)}), spec.estimator);
                value = rmse_cate(model, truth, eval_X);
            }
        } catch (const Error&) {
            value.reset();
        }
        res.rmse.push_back(value);
        res.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    return res;
}

} // namespace detail

/**
 * Runs every (cell, replicate) of the grid and aggregates RMSE mean and
 * sample standard deviation per (cell, method). Replicate seeds are
 * derive_seed(base_seed, {cell, replicate}), so results do not depend on the
 * number of worker threads.
 */
inline ExperimentReport run_experiment(const ExperimentSpec& spec)
{
    spec.validate();
    const auto cells = spec.cells();
    const std::size_t reps = static_cast<std::size_t>(spec.replicates);
    const std::size_t total = cells.size() * reps;
    std::vector<detail::ReplicateResult> results(total);

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t job = next++; job < total; job = next++) {
            const std::size_t c = job / reps;
            const std::size_t r = job % reps;
            const auto seed = derive_seed(spec.base_seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(r)});
            results[job] = detail::run_replicate(spec, cells[c], seed);
        }
    };
    const int threads = std::min<int>(spec.jobs, static_cast<int>(total));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    ExperimentReport report;
    report.metadata.base_seed = spec.base_seed;
    report.metadata.replicates_requested = spec.replicates;
    report.metadata.eval_points = spec.eval_points;
    bool any_misspec = false;
    for (bool b : spec.misspecified_values) any_misspec = any_misspec || b;
    if (any_misspec) {
        report.metadata.deviations.push_back(
            "misspecified cells: naive and cface-rct baselines use LASSO arm models, not random forests");
    }
    for (Method m : spec.methods) {
        if (m == Method::crossfit) {
            report.metadata.deviations.push_back(
                "crossfit: calibration contrasts are averaged across rounds together with the corrections");
        }
    }

    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (std::size_t k = 0; k < spec.methods.size(); ++k) {
            ReportRow row;
            row.cell = cells[c];
            row.method = spec.methods[k];
            for (std::size_t r = 0; r < reps; ++r) {
                const auto& res = results[c * reps + r];
                row.wall_seconds += res.seconds[k];
                if (res.rmse[k]) {
                    row.rmse_values.push_back(*res.rmse[k]);
                } else {
                    ++row.failures;
                }
            }
            row.replicates = static_cast<int>(row.rmse_values.size());
            double sum = 0.0;
            for (double v : row.rmse_values) sum += v;
            if (row.replicates > 0) row.rmse_mean = sum / row.replicates;
            double ss = 0.0;
            for (double v : row.rmse_values) ss += (v - row.rmse_mean) * (v - row.rmse_mean);
            row.rmse_sd = row.replicates > 1 ? std::sqrt(ss / (row.replicates - 1)) : 0.0;
            row.valid = row.replicates > 0 && row.failures * 10 <= spec.replicates;
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report rendering

enum class ReportFormat { csv, markdown, plotdata };

inline ReportFormat parse_report_format(const std::string& s)
{
    if (s == "csv") return ReportFormat::csv;
    if (s == "markdown" || s == "markdown-table" || s == "md") return ReportFormat::markdown;
    if (s == "plotdata") return ReportFormat::plotdata;
    throw ConfigError("unknown report format '" + s + "' (expected csv|markdown|plotdata)");
}

inline constexpr const char* report_csv_header =
    "n_r,n_o,misspecified,removal_fraction,method,rmse_mean,rmse_sd,replicates,failures,valid";

/// Long-format CSV, one row per (cell, method).
inline void write_report_csv(const ExperimentReport& report, std::ostream& out)
{
    out << report_csv_header << '\n';
    for (const auto& r : report.rows) {
        out << r.cell.n_r << ',' << r.cell.n_o << ',' << (r.cell.misspecified ? 1 : 0) << ','
            << format_double(r.cell.removal_fraction) << ',' << to_string(r.method) << ','
            << format_double(r.rmse_mean) << ',' << format_double(r.rmse_sd) << ',' << r.replicates << ','
            << r.failures << ',' << (r.valid ? 1 : 0) << '\n';
    }
}

inline ExperimentReport read_report_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty report file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != report_csv_header) throw DataError("unexpected report header: " + line);
    ExperimentReport report;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_row(line);
        if (cells.size() != 10) throw DataError("report row " + std::to_string(lineno) + " has wrong cell count");
        auto num = [&](std::size_t c, const char* name) { return detail::parse_number(cells[c], lineno, name); };
        ReportRow r;
        r.cell.n_r = static_cast<int>(num(0, "n_r"));
        r.cell.n_o = static_cast<int>(num(1, "n_o"));
        r.cell.misspecified = num(2, "misspecified") != 0.0;
        r.cell.removal_fraction = num(3, "removal_fraction");
        r.method = parse_method(std::string(cells[4]));
        r.rmse_mean = num(5, "rmse_mean");
        r.rmse_sd = num(6, "rmse_sd");
        r.replicates = static_cast<int>(num(7, "replicates"));
        r.failures = static_cast<int>(num(8, "failures"));
        r.valid = num(9, "valid") != 0.0;
        report.rows.push_back(r);
    }
    return report;
}

namespace detail {

inline std::string fixed(double v, int digits)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

inline std::string method_label(Method m)
{
    switch (m) {
    case Method::naive: return "RCT only (Naive)";
    case Method::cface_rct: return "CFACE from RCT";
    case Method::proposed: return "CFACE from OS (Proposed)";
    case Method::robust: return "CFACE from OS (Proposed - Robust)";
    case Method::crossfit: return "Proposed - Robust, Cross Fitted";
    }
    return to_string(m);
}

template <class T>
void push_unique(std::vector<T>& v, const T& x)
{
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

} // namespace detail

/// One table per (n_o, misspecified, removal_fraction) group with n_r as columns.
inline void write_report_markdown(const ExperimentReport& report, std::ostream& out)
{
    using Group = std::tuple<int, bool, double>;
    std::vector<Group> groups;
    for (const auto& r : report.rows) {
        detail::push_unique(groups, Group{r.cell.n_o, r.cell.misspecified, r.cell.removal_fraction});
    }
    for (const auto& [n_o, mis, frac] : groups) {
        std::vector<int> nrs;
        std::vector<Method> methods;
        for (const auto& r : report.rows) {
            if (r.cell.n_o == n_o && r.cell.misspecified == mis && r.cell.removal_fraction == frac) {
                detail::push_unique(nrs, r.cell.n_r);
                detail::push_unique(methods, r.method);
            }
        }
        out << "### RMSE of CATE estimation (n_o = " << n_o << (mis ? ", misspecified" : "")
            << (frac > 0.0 ? ", removed modifiers = " + detail::fixed(frac, 2) : std::string()) << ")\n\n";
        out << "| Method |";
        for (int n : nrs) out << " n_r = " << n << " |";
        out << "\n|---|";
        for (std::size_t i = 0; i < nrs.size(); ++i) out << "---|";
        out << '\n';
        for (Method m : methods) {
            out << "| " << detail::method_label(m) << " |";
            for (int n : nrs) {
                const auto* row = report.find({n, n_o, mis, frac}, m);
                if (!row) {
                    out << " - |";
                } else {
                    out << ' ' << detail::fixed(row->rmse_mean, 3) << " ± " << detail::fixed(row->rmse_sd, 3)
                        << (row->valid ? "" : " (invalid)") << " |";
                }
            }
            out << '\n';
        }
        out << '\n';
    }
}

/// Series along one axis: x = n_r or removal fraction, y = mean, band = sd.
inline void write_plot_series(const ExperimentReport& report, bool by_removal, std::ostream& out)
{
    out << (by_removal ? "n_r,n_o,misspecified,method,removal_fraction,mean,sd\n"
                       : "n_o,misspecified,removal_fraction,method,n_r,mean,sd\n");
    for (const auto& r : report.rows) {
        if (by_removal) {
            out << r.cell.n_r << ',' << r.cell.n_o << ',' << (r.cell.misspecified ? 1 : 0) << ',' << to_string(r.method)
                << ',' << format_double(r.cell.removal_fraction);
        } else {
            out << r.cell.n_o << ',' << (r.cell.misspecified ? 1 : 0) << ',' << format_double(r.cell.removal_fraction)
                << ',' << to_string(r.method) << ',' << r.cell.n_r;
        }
        out << ',' << format_double(r.rmse_mean) << ',' << format_double(r.rmse_sd) << '\n';
    }
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

} // namespace detail

/// Writes the report into `dir` and returns the files produced.
inline std::vector<std::filesystem::path> emit_report(const ExperimentReport& report, ReportFormat format,
                                                      const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> files;
    auto emit = [&](const std::string& name, auto&& writer) {
        std::ostringstream buf;
        writer(buf);
        detail::write_file(dir / name, buf.str());
        files.push_back(dir / name);
    };
    switch (format) {
    case ReportFormat::csv:
        emit("report.csv", [&](std::ostream& o) { write_report_csv(report, o); });
        break;
    case ReportFormat::markdown:
        emit("report.md", [&](std::ostream& o) { write_report_markdown(report, o); });
        break;
    case ReportFormat::plotdata:
        emit("series_by_n_r.csv", [&](std::ostream& o) { write_plot_series(report, false, o); });
        emit("series_by_removal_fraction.csv", [&](std::ostream& o) { write_plot_series(report, true, o); });
        break;
    }
    return files;
}

inline std::vector<std::filesystem::path> emit_report(const ExperimentReport& report, const std::string& format,
                                                      const std::filesystem::path& dir)
{
    return emit_report(report, parse_report_format(format), dir);
}

} // namespace catefuse
