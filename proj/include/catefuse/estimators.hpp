#pragma once
#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <catefuse/data.hpp>
#include <catefuse/error.hpp>
#include <catefuse/lasso.hpp>
#include <catefuse/rng.hpp>

namespace catefuse {

enum class Method { naive, cface_rct, proposed, robust, crossfit };

inline const char* to_string(Method m)
{
    switch (m) {
    case Method::naive: return "naive";
    case Method::cface_rct: return "cface-rct";
    case Method::proposed: return "proposed";
    case Method::robust: return "robust";
    case Method::crossfit: return "crossfit";
    }
    return "?";
}

inline Method parse_method(const std::string& s)
{
    for (Method m : {Method::naive, Method::cface_rct, Method::proposed, Method::robust, Method::crossfit}) {
        if (s == to_string(m)) return m;
    }
    throw ConfigError("unknown method '" + s + "' (expected naive|cface-rct|proposed|robust|crossfit)");
}

inline bool needs_os(Method m) { return m == Method::proposed || m == Method::robust || m == Method::crossfit; }

/// Linear predictor coef' x + intercept.
struct LinearModel
{
    Vector coef;
    double intercept = 0.0;

    static LinearModel zero(Index p) { return {Vector::Zero(p), 0.0}; }

    template <class Derived>
    double predict(const Eigen::MatrixBase<Derived>& x) const
    {
        return coef.dot(x) + intercept;
    }

    Vector predict_rows(const Matrix& X) const
    {
        return (X * coef).array() + intercept;
    }

    LinearModel operator+(const LinearModel& o) const { return {coef + o.coef, intercept + o.intercept}; }
    LinearModel operator-(const LinearModel& o) const { return {coef - o.coef, intercept - o.intercept}; }
    LinearModel operator*(double s) const { return {coef * s, intercept * s}; }
};

enum class ArmSource { os, rct, calibrated };

inline const char* to_string(ArmSource s)
{
    switch (s) {
    case ArmSource::os: return "os";
    case ArmSource::rct: return "rct";
    case ArmSource::calibrated: return "calibrated";
    }
    return "?";
}

/// Per-arm outcome regressions gamma_{-1}, gamma_{+1}. Calibrated models keep
/// their additive corrections so gamma^{r,c}_a = gamma^o_a + delta_a.
struct ArmModels
{
    std::array<LinearModel, 2> gamma;   // indexed by arm_index(a)
    ArmSource source = ArmSource::os;
    std::optional<std::array<LinearModel, 2>> delta;
    std::array<double, 2> lambdas{0.0, 0.0};

    const LinearModel& arm(int a) const { return gamma[arm_index(a)]; }
    Index p() const { return gamma[0].coef.size(); }
};

/// Additive pieces of a calibrated CATE fit:
/// tau = os_contrast + calibration_delta_contrast + correction.
struct CateParts
{
    LinearModel os_contrast;
    LinearModel calibration_delta_contrast;
    LinearModel correction;

    LinearModel sum() const { return os_contrast + calibration_delta_contrast + correction; }
};

struct CateModel
{
    Method method = Method::naive;
    LinearModel tau;
    std::optional<CateParts> parts;
    std::map<std::string, double> lambdas;
    std::uint64_t seed = 0;
    double pi_plus1 = 0.5;

    template <class Derived>
    double predict(const Eigen::MatrixBase<Derived>& x) const
    {
        return tau.predict(x);
    }
};

/// Counterfactual average covariate effect pi_{+1} mu_{-1}(x) + pi_{-1} mu_{+1}(x).
struct Cface
{
    double pi_plus1 = 0.5;
    ArmModels models;
};

template <class Derived>
double cface_eval(const Cface& c, const Eigen::MatrixBase<Derived>& x)
{
    return c.pi_plus1 * c.models.arm(-1).predict(x) + (1.0 - c.pi_plus1) * c.models.arm(+1).predict(x);
}

inline Vector cface_rows(const Cface& c, const Matrix& X)
{
    return c.pi_plus1 * c.models.arm(-1).predict_rows(X) + (1.0 - c.pi_plus1) * c.models.arm(+1).predict_rows(X);
}

/// a (y - m(x)) / pi_a, whose conditional mean is the CATE for any m.
inline double pseudo_outcome(double y, int a, double m_x, double pi_a)
{
    if (!(pi_a > 0.0 && pi_a < 1.0)) throw PositivityError("propensity must lie in (0, 1)");
    return a * (y - m_x) / pi_a;
}

struct EstimatorOptions
{
    lasso::CvOptions cv;
    int cross_fit_folds = 5;
    std::vector<int> cross_fit_fold_ids;   // optional explicit assignment in [0, cross_fit_folds)
};

/// Known RCT randomization rate if recorded, else the empirical treated fraction.
inline double rct_propensity(const StudyDataset& rct)
{
    double pi = 0.0;
    if (rct.propensity) {
        pi = *rct.propensity;
    } else {
        pi = static_cast<double>(rct.arm_rows(+1).size()) / static_cast<double>(rct.n());
    }
    if (!(pi > 0.0 && pi < 1.0)) throw PositivityError("RCT propensity must lie in (0, 1)");
    return pi;
}

namespace detail {

// Seed stream tags, one per penalized regression stage.
enum Stage : std::uint64_t { stage_arm = 1, stage_os = 2, stage_calibrate = 3, stage_tau = 4, stage_folds = 5, stage_round = 6 };

inline std::uint64_t arm_tag(int a) { return a > 0 ? 1 : 0; }

inline std::vector<Index> require_arm(const StudyDataset& ds, int a)
{
    auto rows = ds.arm_rows(a);
    if (rows.empty()) {
        throw DataError(std::string("empty treatment arm ") + (a > 0 ? "+1" : "-1") + " in " +
                        (ds.study == Study::rct ? "RCT" : "OS") + " data");
    }
    return rows;
}

inline LinearModel as_model(const lasso::LassoFit& fit) { return {fit.beta, fit.intercept}; }

/// cv_lasso with the fold count capped at n / 2 so small arms and cross-fit
/// folds still leave at least two observations per CV fold.
inline lasso::LassoFit cv_fit(const lasso::DesignProblem& prob, std::uint64_t seed, const lasso::CvOptions& cv)
{
    lasso::CvOptions capped = cv;
    if (capped.fold_ids.empty()) capped.k_folds = static_cast<int>(std::min<Index>(cv.k_folds, prob.n() / 2));
    return lasso::cv_lasso(prob, seed, capped);
}

/// cv_lasso of y (minus offset) on X restricted to `rows`.
inline lasso::LassoFit fit_rows(const StudyDataset& ds, const std::vector<Index>& rows, const Vector& response,
                                const Vector& offset, std::uint64_t seed, const EstimatorOptions& opts)
{
    const Index m = static_cast<Index>(rows.size());
    Matrix X(m, ds.p());
    Vector y(m), off(m);
    for (Index r = 0; r < m; ++r) {
        X.row(r) = ds.X.row(rows[r]);
        y(r) = response(rows[r]);
        off(r) = offset(rows[r]);
    }
    auto prob = lasso::DesignProblem::make(std::move(X), std::move(y));
    prob.offset = std::move(off);
    return cv_fit(prob, seed, opts.cv);
}

inline ArmModels fit_arms(const StudyDataset& ds, ArmSource source, std::uint64_t seed, const EstimatorOptions& opts)
{
    ds.validate();
    ArmModels out;
    out.source = source;
    const Vector zero = Vector::Zero(ds.n());
    for (int a : arms) {
        const auto rows = require_arm(ds, a);
        const auto fit = fit_rows(ds, rows, ds.Y, zero, derive_seed(seed, {stage_arm, arm_tag(a)}), opts);
        out.gamma[arm_index(a)] = as_model(fit);
        out.lambdas[arm_index(a)] = fit.lambda_selected;
    }
    return out;
}

inline void check_columns(const StudyDataset& rct, const ArmModels& models)
{
    if (models.p() != rct.p()) throw DataError("OS models and RCT data have different covariate counts");
}

/// Stage of the robust estimator that regresses the pseudo-outcome built
/// from calibrated arm models onto X with the calibrated contrast as offset.
inline lasso::LassoFit robust_correction(const StudyDataset& rct, const ArmModels& calibrated, double pi_plus1,
                                         std::uint64_t seed, const EstimatorOptions& opts)
{
    const Cface cface{pi_plus1, calibrated};
    const Vector m = cface_rows(cface, rct.X);
    const LinearModel contrast = calibrated.arm(+1) - calibrated.arm(-1);
    Vector z(rct.n());
    for (Index i = 0; i < rct.n(); ++i) {
        const int a = rct.A(i) > 0 ? 1 : -1;
        z(i) = pseudo_outcome(rct.Y(i), a, m(i), a > 0 ? pi_plus1 : 1.0 - pi_plus1);
    }
    auto prob = lasso::DesignProblem::make(rct.X, std::move(z));
    prob.offset = contrast.predict_rows(rct.X);
    return cv_fit(prob, seed, opts.cv);
}

} // namespace detail

/// Plug-in pseudo-outcome regression: cv_lasso of a(y - m)/pi_a on X.
inline lasso::LassoFit fit_pseudo_outcome(const StudyDataset& rct, const Vector& m_values, double pi_plus1,
                                          std::uint64_t seed, const EstimatorOptions& opts = {})
{
    rct.validate();
    if (m_values.size() != rct.n()) throw DataError("nuisance vector length does not match rows");
    Vector z(rct.n());
    for (Index i = 0; i < rct.n(); ++i) {
        const int a = rct.A(i) > 0 ? 1 : -1;
        z(i) = pseudo_outcome(rct.Y(i), a, m_values(i), a > 0 ? pi_plus1 : 1.0 - pi_plus1);
    }
    return detail::cv_fit(lasso::DesignProblem::make(rct.X, std::move(z)), seed, opts.cv);
}

/// RCT-only per-arm LASSO, CATE as the contrast of the two arm fits.
inline CateModel fit_naive(const StudyDataset& rct, std::uint64_t seed, const EstimatorOptions& opts = {})
{
    const auto models = detail::fit_arms(rct, ArmSource::rct, seed, opts);
    CateModel out;
    out.method = Method::naive;
    out.seed = seed;
    out.pi_plus1 = rct_propensity(rct);
    out.tau = models.arm(+1) - models.arm(-1);
    out.lambdas = {{"arm_minus", models.lambdas[0]}, {"arm_plus", models.lambdas[1]}};
    return out;
}

/// Pseudo-outcome regression with the CFACE nuisance estimated from the RCT arms.
inline CateModel fit_cface_rct(const StudyDataset& rct, std::uint64_t seed, const EstimatorOptions& opts = {})
{
    const double pi = rct_propensity(rct);
    const auto models = detail::fit_arms(rct, ArmSource::rct, seed, opts);
    const Vector m = cface_rows(Cface{pi, models}, rct.X);
    const auto fit = fit_pseudo_outcome(rct, m, pi, derive_seed(seed, {detail::stage_tau}), opts);
    CateModel out;
    out.method = Method::cface_rct;
    out.seed = seed;
    out.pi_plus1 = pi;
    out.tau = detail::as_model(fit);
    out.lambdas = {{"arm_minus", models.lambdas[0]}, {"arm_plus", models.lambdas[1]}, {"tau", fit.lambda_selected}};
    return out;
}

/// Per-arm LASSO on the observational study.
inline ArmModels fit_os_models(const StudyDataset& os, std::uint64_t seed, const EstimatorOptions& opts = {})
{
    return detail::fit_arms(os, ArmSource::os, derive_seed(seed, {detail::stage_os}), opts);
}

/// Calibrates OS arm models to the RCT: per arm, LASSO of Y on X restricted
/// to that arm's rows with the OS prediction as offset.
inline ArmModels calibrate(const StudyDataset& rct, const ArmModels& os_models, std::uint64_t seed,
                           const EstimatorOptions& opts = {})
{
    if (os_models.source != ArmSource::os) throw ConfigError("calibrate expects OS arm models");
    rct.validate();
    detail::check_columns(rct, os_models);
    ArmModels out;
    out.source = ArmSource::calibrated;
    std::array<LinearModel, 2> deltas;
    for (int a : arms) {
        const auto rows = detail::require_arm(rct, a);
        const Vector offset = os_models.arm(a).predict_rows(rct.X);
        const auto fit = detail::fit_rows(rct, rows, rct.Y, offset,
                                          derive_seed(seed, {detail::stage_calibrate, detail::arm_tag(a)}), opts);
        deltas[arm_index(a)] = detail::as_model(fit);
        out.gamma[arm_index(a)] = os_models.arm(a) + deltas[arm_index(a)];
        out.lambdas[arm_index(a)] = fit.lambda_selected;
    }
    out.delta = deltas;
    return out;
}

/**
 * Per-arm regression problem of the calibration-free estimator: on arm-a
 * rows, response (a / pi_a) Y - c_a gamma^o_a(X) and design c_a X with
 * c_a = a (1 + alpha^a), alpha = pi_{-1} / pi_{+1}. Its coefficient vector is
 * delta_a directly; its intercept is c_a times delta_a's intercept.
 */
inline lasso::DesignProblem proposed_arm_problem(const StudyDataset& rct, const ArmModels& os_models, int a,
                                                 double pi_plus1)
{
    if (!(pi_plus1 > 0.0 && pi_plus1 < 1.0)) throw PositivityError("RCT propensity must lie in (0, 1)");
    detail::check_columns(rct, os_models);
    const double pi_a = a > 0 ? pi_plus1 : 1.0 - pi_plus1;
    const double alpha = (1.0 - pi_plus1) / pi_plus1;
    const double scale = a * (1.0 + std::pow(alpha, a));
    const auto rows = detail::require_arm(rct, a);
    const Index m = static_cast<Index>(rows.size());
    Matrix X(m, rct.p());
    Vector y(m);
    for (Index r = 0; r < m; ++r) {
        const auto x = rct.X.row(rows[r]).transpose();
        X.row(r) = scale * x.transpose();
        y(r) = (a / pi_a) * rct.Y(rows[r]) - scale * os_models.arm(a).predict(x);
    }
    return lasso::DesignProblem::make(std::move(X), std::move(y));
}

/// delta_a on the original covariate scale from a fit of proposed_arm_problem.
inline LinearModel proposed_delta(const lasso::LassoFit& fit, int a, double pi_plus1)
{
    const double alpha = (1.0 - pi_plus1) / pi_plus1;
    const double scale = a * (1.0 + std::pow(alpha, a));
    return {fit.beta, fit.intercept / scale};
}

/// Calibration-free estimator: tau = sum_a a (gamma^o_a + delta_a) with the
/// deltas estimated arm by arm.
inline CateModel fit_proposed(const StudyDataset& rct, const ArmModels& os_models, std::uint64_t seed,
                              const EstimatorOptions& opts = {})
{
    if (os_models.source != ArmSource::os) throw ConfigError("fit_proposed expects OS arm models");
    rct.validate();
    const double pi = rct_propensity(rct);
    CateModel out;
    out.method = Method::proposed;
    out.seed = seed;
    out.pi_plus1 = pi;
    out.tau = LinearModel::zero(rct.p());
    for (int a : arms) {
        const auto prob = proposed_arm_problem(rct, os_models, a, pi);
        const auto fit = detail::cv_fit(prob, derive_seed(seed, {detail::stage_tau, detail::arm_tag(a)}), opts.cv);
        const LinearModel gamma_r = os_models.arm(a) + proposed_delta(fit, a, pi);
        out.tau = a > 0 ? out.tau + gamma_r : out.tau - gamma_r;
        out.lambdas[a > 0 ? "delta_plus" : "delta_minus"] = fit.lambda_selected;
    }
    out.lambdas["os_minus"] = os_models.lambdas[0];
    out.lambdas["os_plus"] = os_models.lambdas[1];
    return out;
}

/// Calibrated estimator: calibrate the OS arms, then correct the calibrated
/// contrast with a LASSO on the pseudo-outcome residual.
inline CateModel fit_proposed_robust(const StudyDataset& rct, const ArmModels& os_models, std::uint64_t seed,
                                     const EstimatorOptions& opts = {})
{
    const double pi = rct_propensity(rct);
    const ArmModels calibrated = calibrate(rct, os_models, seed, opts);
    const auto fit = detail::robust_correction(rct, calibrated, pi, derive_seed(seed, {detail::stage_tau}), opts);

    CateParts parts;
    parts.os_contrast = os_models.arm(+1) - os_models.arm(-1);
    parts.calibration_delta_contrast = (*calibrated.delta)[1] - (*calibrated.delta)[0];
    parts.correction = detail::as_model(fit);

    CateModel out;
    out.method = Method::robust;
    out.seed = seed;
    out.pi_plus1 = pi;
    out.tau = parts.sum();
    out.parts = parts;
    out.lambdas = {{"os_minus", os_models.lambdas[0]},     {"os_plus", os_models.lambdas[1]},
                   {"calib_minus", calibrated.lambdas[0]}, {"calib_plus", calibrated.lambdas[1]},
                   {"tau", fit.lambda_selected}};
    return out;
}

/**
 * Cross-fitted calibrated estimator. Round k calibrates on fold k and fits
 * the correction on the other K-1 folds; the corrections and the calibration
 * contrasts are each averaged over the K rounds.
 */
inline CateModel fit_cross_fitted(const StudyDataset& rct, const ArmModels& os_models, int k, std::uint64_t seed,
                                  const EstimatorOptions& opts = {})
{
    if (os_models.source != ArmSource::os) throw ConfigError("fit_cross_fitted expects OS arm models");
    rct.validate();
    detail::check_columns(rct, os_models);
    const double pi = rct_propensity(rct);
    std::vector<std::vector<Index>> folds;
    if (opts.cross_fit_fold_ids.empty()) {
        folds = split_folds(rct, k, derive_seed(seed, {detail::stage_folds}));
    } else {
        if (k < 2) throw ConfigError("cross-fitting needs K >= 2");
        if (static_cast<Index>(opts.cross_fit_fold_ids.size()) != rct.n()) {
            throw ConfigError("cross-fit fold ids length does not match RCT rows");
        }
        folds.resize(static_cast<std::size_t>(k));
        for (Index i = 0; i < rct.n(); ++i) {
            const int f = opts.cross_fit_fold_ids[static_cast<std::size_t>(i)];
            if (f < 0 || f >= k) throw ConfigError("cross-fit fold id out of range");
            folds[static_cast<std::size_t>(f)].push_back(i);
        }
    }
    // Every round shares one seed, so rounds on identical data agree exactly.
    const std::uint64_t round_seed = derive_seed(seed, {detail::stage_round});

    LinearModel calib_sum = LinearModel::zero(rct.p());
    LinearModel corr_sum = LinearModel::zero(rct.p());
    CateModel out;
    for (int r = 0; r < k; ++r) {
        std::vector<Index> rest;
        for (int f = 0; f < k; ++f) {
            if (f != r) rest.insert(rest.end(), folds[static_cast<std::size_t>(f)].begin(), folds[static_cast<std::size_t>(f)].end());
        }
        std::sort(rest.begin(), rest.end());
        const auto calib_part = rct.subset(folds[static_cast<std::size_t>(r)]);
        const auto est_part = rct.subset(rest);

        const ArmModels calibrated = calibrate(calib_part, os_models, round_seed, opts);
        const auto fit = detail::robust_correction(est_part, calibrated, pi,
                                                   derive_seed(round_seed, {detail::stage_tau}), opts);
        calib_sum = calib_sum + ((*calibrated.delta)[1] - (*calibrated.delta)[0]);
        corr_sum = corr_sum + detail::as_model(fit);
        const std::string tag = "_" + std::to_string(r);
        out.lambdas["calib_minus" + tag] = calibrated.lambdas[0];
        out.lambdas["calib_plus" + tag] = calibrated.lambdas[1];
        out.lambdas["tau" + tag] = fit.lambda_selected;
    }

    CateParts parts;
    parts.os_contrast = os_models.arm(+1) - os_models.arm(-1);
    parts.calibration_delta_contrast = calib_sum * (1.0 / k);
    parts.correction = corr_sum * (1.0 / k);
    out.method = Method::crossfit;
    out.seed = seed;
    out.pi_plus1 = pi;
    out.tau = parts.sum();
    out.parts = parts;
    out.lambdas["os_minus"] = os_models.lambdas[0];
    out.lambdas["os_plus"] = os_models.lambdas[1];
    return out;
}

/// Dispatch by method. `os_models` is required for the OS-borrowing methods.
inline CateModel fit_method(Method m, const StudyDataset& rct, const ArmModels* os_models, std::uint64_t seed,
                            const EstimatorOptions& opts = {})
{
    if (needs_os(m) && !os_models) throw ConfigError(std::string("method ") + to_string(m) + " needs OS data");
    switch (m) {
    case Method::naive: return fit_naive(rct, seed, opts);
    case Method::cface_rct: return fit_cface_rct(rct, seed, opts);
    case Method::proposed: return fit_proposed(rct, *os_models, seed, opts);
    case Method::robust: return fit_proposed_robust(rct, *os_models, seed, opts);
    case Method::crossfit: return fit_cross_fitted(rct, *os_models, opts.cross_fit_folds, seed, opts);
    }
    throw ConfigError("unknown method");
}

} // namespace catefuse
