#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <catefuse/error.hpp>
#include <catefuse/rng.hpp>

namespace catefuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class Study { rct, os };

inline char study_tag(Study s) { return s == Study::rct ? 'r' : 'o'; }

/// Position of arm a in {-1, +1} inside two-element arrays.
inline std::size_t arm_index(int a) { return a > 0 ? 1 : 0; }
inline constexpr int arms[2] = {-1, +1};

inline double logistic(double t)
{
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

/// Probability of receiving treatment +1 as a function of covariates.
struct PropensitySpec
{
    enum class Kind { constant, logistic };

    Kind kind = Kind::constant;
    double pi_plus1 = 0.5;
    Vector coef;
    double intercept = 0.0;

    static PropensitySpec constant_rate(double pi)
    {
        PropensitySpec s;
        s.kind = Kind::constant;
        s.pi_plus1 = pi;
        s.validate();
        return s;
    }

    static PropensitySpec logistic_model(Vector coef, double intercept)
    {
        PropensitySpec s;
        s.kind = Kind::logistic;
        s.coef = std::move(coef);
        s.intercept = intercept;
        s.validate();
        return s;
    }

    void validate() const
    {
        if (kind == Kind::constant) {
            if (!(pi_plus1 > 0.0 && pi_plus1 < 1.0)) throw PositivityError("constant propensity must lie in (0, 1)");
        } else if (!coef.allFinite() || !std::isfinite(intercept)) {
            throw ConfigError("logistic propensity needs finite coefficients");
        }
    }

    template <class Derived>
    double operator()(const Eigen::MatrixBase<Derived>& x) const
    {
        if (kind == Kind::constant) return pi_plus1;
        // Kept strictly inside (0, 1) where the logistic rounds to 0 or 1.
        constexpr double eps = std::numeric_limits<double>::epsilon();
        return std::clamp(logistic(intercept + coef.dot(x)), std::numeric_limits<double>::min(), 1.0 - eps / 2);
    }
};

/// One study's observations. Treatment is coded -1 / +1.
struct StudyDataset
{
    Study study = Study::rct;
    Matrix X;
    Vector A;
    Vector Y;
    std::vector<std::string> feature_names;
    std::optional<double> propensity;   // known constant P(A = +1), if recorded

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }

    void validate() const
    {
        if (n() < 1) throw DataError("dataset has no rows");
        if (A.size() != n() || Y.size() != n()) throw DataError("treatment/outcome length does not match rows");
        if (static_cast<Index>(feature_names.size()) != p()) {
            throw DataError("feature_names length does not match covariate columns");
        }
        for (Index i = 0; i < n(); ++i) {
            if (A(i) != 1.0 && A(i) != -1.0) {
                throw DataError("treatment at row " + std::to_string(i) + " is not -1 or +1");
            }
        }
        if (!X.allFinite() || !Y.allFinite()) throw DataError("dataset contains non-finite values");
    }

    std::vector<Index> arm_rows(int a) const
    {
        std::vector<Index> rows;
        for (Index i = 0; i < n(); ++i) {
            if (A(i) == static_cast<double>(a)) rows.push_back(i);
        }
        return rows;
    }

    StudyDataset subset(const std::vector<Index>& rows) const
    {
        StudyDataset out;
        out.study = study;
        out.feature_names = feature_names;
        out.propensity = propensity;
        const Index m = static_cast<Index>(rows.size());
        out.X.resize(m, p());
        out.A.resize(m);
        out.Y.resize(m);
        for (Index r = 0; r < m; ++r) {
            out.X.row(r) = X.row(rows[r]);
            out.A(r) = A(rows[r]);
            out.Y(r) = Y(rows[r]);
        }
        return out;
    }

    /// Copy without the given (sorted or unsorted) column indices.
    StudyDataset drop_columns(const std::vector<Index>& cols) const
    {
        std::vector<bool> drop(static_cast<std::size_t>(p()), false);
        for (auto c : cols) {
            if (c < 0 || c >= p()) throw DataError("column index out of range");
            drop[static_cast<std::size_t>(c)] = true;
        }
        StudyDataset out = *this;
        std::vector<Index> keep;
        out.feature_names.clear();
        for (Index j = 0; j < p(); ++j) {
            if (!drop[static_cast<std::size_t>(j)]) {
                keep.push_back(j);
                out.feature_names.push_back(feature_names[static_cast<std::size_t>(j)]);
            }
        }
        out.X.resize(n(), static_cast<Index>(keep.size()));
        for (Index k = 0; k < static_cast<Index>(keep.size()); ++k) out.X.col(k) = X.col(keep[k]);
        return out;
    }
};

inline std::vector<std::string> default_feature_names(Index p)
{
    std::vector<std::string> names;
    for (Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
    return names;
}

inline void check_aligned(const StudyDataset& a, const StudyDataset& b)
{
    if (a.feature_names != b.feature_names) {
        throw DataError("studies must share identical feature names in identical order");
    }
}

/// What read_csv had to do to the treatment column.
struct LoadReport
{
    Index rows = 0;
    bool zero_one_coding = false;   // `a` was {0,1}; 0 was mapped to -1
};

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_row(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

inline std::string locate(std::size_t line, std::string_view column)
{
    return "row " + std::to_string(line) + ", column '" + std::string(column) + "'";
}

inline double parse_number(std::string_view cell, std::size_t line, std::string_view column)
{
    if (cell.empty()) throw DataError("missing value at " + locate(line, column));
    if (cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError("non-numeric value '" + std::string(cell) + "' at " + locate(line, column));
    }
    return v;
}

} // namespace detail

/**
 * Parses a study CSV with header `study,y,a,<features...>`.
 * Feature columns are every column other than study/y/a, in file order.
 * Line numbers in errors are 1-based file lines (the header is line 1).
 */
inline StudyDataset parse_csv(std::istream& in, LoadReport* report = nullptr)
{
    std::string line;
    if (!std::getline(in, line) || detail::trim(line).empty()) throw DataError("empty file: no header row");
    const auto header = detail::split_row(line);
    int col_study = -1, col_y = -1, col_a = -1;
    std::vector<int> feature_cols;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const auto h = header[c];
        if (h == "study") col_study = static_cast<int>(c);
        else if (h == "y") col_y = static_cast<int>(c);
        else if (h == "a") col_a = static_cast<int>(c);
        else {
            if (h.empty()) throw DataError("empty column name in header at position " + std::to_string(c + 1));
            feature_cols.push_back(static_cast<int>(c));
            names.emplace_back(h);
        }
    }
    if (col_study < 0) throw DataError("missing column 'study'");
    if (col_y < 0) throw DataError("missing column 'y'");
    if (col_a < 0) throw DataError("missing column 'a'");
    if (feature_cols.empty()) throw DataError("no covariate columns");

    std::vector<double> xs, ys, as;
    std::vector<std::size_t> a_lines;
    std::optional<char> tag;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_row(line);
        if (cells.size() != header.size()) {
            throw DataError("row " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
        }
        const auto s = cells[static_cast<std::size_t>(col_study)];
        if (s != "r" && s != "o") {
            throw DataError("study tag '" + std::string(s) + "' is not r or o at " + detail::locate(lineno, "study"));
        }
        if (tag && *tag != s.front()) throw DataError("mixed study tags at " + detail::locate(lineno, "study"));
        tag = s.front();
        ys.push_back(detail::parse_number(cells[static_cast<std::size_t>(col_y)], lineno, "y"));
        const double a = detail::parse_number(cells[static_cast<std::size_t>(col_a)], lineno, "a");
        if (a != -1.0 && a != 0.0 && a != 1.0) {
            throw DataError("treatment must be -1/1 or 0/1, got '" +
                            std::string(cells[static_cast<std::size_t>(col_a)]) + "' at " + detail::locate(lineno, "a"));
        }
        as.push_back(a);
        a_lines.push_back(lineno);
        for (std::size_t k = 0; k < feature_cols.size(); ++k) {
            xs.push_back(detail::parse_number(cells[static_cast<std::size_t>(feature_cols[k])], lineno, names[k]));
        }
    }
    if (ys.empty()) throw DataError("file has a header but no data rows");

    const bool has_zero = std::find(as.begin(), as.end(), 0.0) != as.end();
    const auto neg = std::find(as.begin(), as.end(), -1.0);
    if (has_zero && neg != as.end()) {
        throw DataError("treatment mixes -1 and 0 codings at " +
                        detail::locate(a_lines[static_cast<std::size_t>(neg - as.begin())], "a"));
    }

    StudyDataset ds;
    ds.study = *tag == 'r' ? Study::rct : Study::os;
    const Index n = static_cast<Index>(ys.size());
    const Index p = static_cast<Index>(names.size());
    ds.X.resize(n, p);
    ds.A.resize(n);
    ds.Y.resize(n);
    for (Index i = 0; i < n; ++i) {
        ds.Y(i) = ys[static_cast<std::size_t>(i)];
        const double a = as[static_cast<std::size_t>(i)];
        ds.A(i) = a == 0.0 ? -1.0 : a;
        for (Index j = 0; j < p; ++j) ds.X(i, j) = xs[static_cast<std::size_t>(i * p + j)];
    }
    ds.feature_names = std::move(names);
    if (report) {
        report->rows = n;
        report->zero_one_coding = has_zero;
    }
    return ds;
}

inline StudyDataset read_csv(const std::string& path, LoadReport* report = nullptr)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return parse_csv(in, report);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void format_csv(const StudyDataset& ds, std::ostream& out)
{
    ds.validate();
    if (ds.p() < 1) throw DataError("cannot write a dataset without covariates");
    out << "study,y,a";
    for (const auto& name : ds.feature_names) out << ',' << name;
    out << '\n';
    const char tag = study_tag(ds.study);
    for (Index i = 0; i < ds.n(); ++i) {
        out << tag << ',' << format_double(ds.Y(i)) << ',' << (ds.A(i) > 0 ? "1" : "-1");
        for (Index j = 0; j < ds.p(); ++j) out << ',' << format_double(ds.X(i, j));
        out << '\n';
    }
}

inline void write_csv(const StudyDataset& ds, const std::string& path)
{
    std::ostringstream buf;
    format_csv(ds, buf);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << buf.str();
    if (!out) throw DataError("write failed for '" + path + "'");
}

/**
 * Stratified K-fold partition of row indices.
 *
 * Each arm is shuffled and dealt round-robin; arm +1 continues where arm -1
 * stopped so total fold sizes differ by at most one. Indices inside each fold
 * are sorted.
 */
inline std::vector<std::vector<Index>> split_folds(const StudyDataset& ds, int k, std::uint64_t seed)
{
    if (k < 2) throw ConfigError("K must be >= 2");
    if (k > ds.n()) throw ConfigError("K must not exceed the number of rows");
    Rng rng(seed);
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
    std::size_t next = 0;
    for (int a : arms) {
        auto rows = ds.arm_rows(a);
        if (static_cast<int>(rows.size()) < k) throw DataError("arm too small to stratify");
        std::shuffle(rows.begin(), rows.end(), rng);
        for (auto i : rows) {
            folds[next].push_back(i);
            next = (next + 1) % static_cast<std::size_t>(k);
        }
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

} // namespace catefuse
