#pragma once
#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include <catefuse/data.hpp>
#include <catefuse/error.hpp>
#include <catefuse/rng.hpp>

namespace catefuse {

/// Shape of the non-linear term added to each active coefficient when the
/// outcome model is misspecified.
enum class MisspecKind { quadratic, sine };

struct SimConfig
{
    int p = 100;
    int n_o = 10000;
    int n_r = 250;
    int support_size = 10;
    double noise_sd = 1.0 / 3.0;
    int os_logistic_dim = 10;
    int shift_covariates = 10;
    int outcome_shift_per_arm = 2;
    bool misspecified = false;
    MisspecKind misspec_kind = MisspecKind::quadratic;
    double removed_modifier_fraction = 0.0;
    double rho = 0.5;                       // AR(1) covariate correlation
    double os_treated_fraction = 1.0 / 3.0; // target P(A = +1) in the OS
    int propensity_probe_draws = 100000;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (p < 1 || n_o < 1 || n_r < 1) throw ConfigError("p, n_o and n_r must be positive");
        if (support_size < 1 || support_size > p) throw ConfigError("support_size must lie in [1, p]");
        if (os_logistic_dim < 1 || os_logistic_dim > p) throw ConfigError("os_logistic_dim must lie in [1, p]");
        if (shift_covariates < 0 || shift_covariates > p) throw ConfigError("shift_covariates must lie in [0, p]");
        if (outcome_shift_per_arm < 0 || outcome_shift_per_arm > p) {
            throw ConfigError("outcome_shift_per_arm must lie in [0, p]");
        }
        if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be >= 0");
        if (!(removed_modifier_fraction >= 0.0 && removed_modifier_fraction <= 0.5)) {
            throw ConfigError("removed_modifier_fraction must lie in [0, 0.5]");
        }
        if (!(std::abs(rho) < 1.0)) throw ConfigError("rho must lie in (-1, 1)");
        if (!(os_treated_fraction > 0.0 && os_treated_fraction < 1.0)) {
            throw ConfigError("os_treated_fraction must lie in (0, 1)");
        }
        if (propensity_probe_draws < 1) throw ConfigError("propensity_probe_draws must be positive");
    }
};

/// Planted parameters of one simulated RCT/OS pair.
struct GroundTruth
{
    using SparseTerms = std::map<Index, double>;

    int p = 0;
    double rho = 0.5;
    std::array<Vector, 2> beta_o;   // indexed by arm_index(a)
    std::array<Vector, 2> beta_r;
    // quad_terms[study][arm]: j -> m, study 0 = OS, 1 = RCT.
    std::array<std::array<SparseTerms, 2>, 2> quad_terms;
    MisspecKind misspec_kind = MisspecKind::quadratic;
    Vector rct_mean_shift;
    PropensitySpec os_logistic;
    std::vector<Index> removed_indices;

    static std::size_t study_index(Study s) { return s == Study::rct ? 1 : 0; }

    /// Conditional potential-outcome mean mu^s_a(x) on the full covariate vector.
    template <class Derived>
    double mu(Study s, int a, const Eigen::MatrixBase<Derived>& x) const
    {
        const auto k = study_index(s);
        const Vector& beta = k == 1 ? beta_r[arm_index(a)] : beta_o[arm_index(a)];
        double v = beta.dot(x);
        for (const auto& [j, m] : quad_terms[k][arm_index(a)]) {
            const double xj = x(j);
            v += m * (misspec_kind == MisspecKind::quadratic ? xj * xj : std::sin(xj));
        }
        return v;
    }

    /// True RCT counterfactual average covariate effect at propensity pi_plus1.
    template <class Derived>
    double cface(const Eigen::MatrixBase<Derived>& x, double pi_plus1) const
    {
        return pi_plus1 * mu(Study::rct, -1, x) + (1.0 - pi_plus1) * mu(Study::rct, +1, x);
    }
};

/// AR(1) correlation matrix rho^|j-k|.
inline Matrix make_covariance(int p, double rho)
{
    if (p < 1) throw ConfigError("p must be positive");
    if (!(std::abs(rho) < 1.0)) throw ConfigError("rho must lie in (-1, 1)");
    Matrix cov(p, p);
    for (int j = 0; j < p; ++j) {
        for (int k = 0; k < p; ++k) cov(j, k) = std::pow(rho, std::abs(j - k));
    }
    return cov;
}

/// n i.i.d. rows from N(mean, cov). Normals are drawn row by row.
inline Matrix sample_mvn(Index n, const Vector& mean, const Matrix& cov, Rng& rng)
{
    const Index p = mean.size();
    if (cov.rows() != p || cov.cols() != p) throw ConfigError("covariance shape does not match mean");
    if (!cov.isApprox(cov.transpose())) throw DataError("covariance not PD");
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw DataError("covariance not PD");
    const Matrix lower = llt.matrixL();
    Matrix z(n, p);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < p; ++j) z(i, j) = standard_normal(rng);
    }
    Matrix x = z * lower.transpose();
    x.rowwise() += mean.transpose();
    return x;
}

namespace detail {

inline std::vector<Index> choose_indices(int p, int k, Rng& rng)
{
    std::vector<Index> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Intercept b with E[logistic(b + sd * Z)] = target, Z ~ N(0, 1), by
/// bisection on a fixed Monte-Carlo probe sample.
inline double tune_intercept(double sd, double target, int draws, Rng& rng)
{
    std::vector<double> z(static_cast<std::size_t>(draws));
    for (auto& v : z) v = sd * standard_normal(rng);
    auto rate = [&](double b) {
        double s = 0.0;
        for (double v : z) s += logistic(b + v);
        return s / static_cast<double>(z.size());
    };
    double lo = -50.0, hi = 50.0;
    for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        (rate(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

} // namespace detail

/**
 * Draws the planted parameters:
 *  - per-arm OS supports of `support_size` with magnitudes in [1/3, 2/3], random sign;
 *  - per-arm RCT outcome shift on `outcome_shift_per_arm` coordinates, magnitudes in [1/2, 1];
 *  - RCT covariate mean shift on `shift_covariates` coordinates, magnitudes in [1/4, 1/2];
 *  - OS logistic propensity on `os_logistic_dim` covariates, slopes ~ U(-1, 1);
 *  - misspecification terms m ~ U(0.25, 0.5) on every active (study, arm, j).
 */
inline GroundTruth gen_truth(const SimConfig& cfg, Rng& rng)
{
    cfg.validate();
    GroundTruth t;
    t.p = cfg.p;
    t.rho = cfg.rho;
    t.misspec_kind = cfg.misspec_kind;

    for (int a : arms) {
        Vector beta = Vector::Zero(cfg.p);
        for (auto j : detail::choose_indices(cfg.p, cfg.support_size, rng)) beta(j) = signed_uniform(rng, 1.0 / 3.0, 2.0 / 3.0);
        t.beta_o[arm_index(a)] = beta;
    }
    for (int a : arms) {
        Vector beta = t.beta_o[arm_index(a)];
        if (cfg.outcome_shift_per_arm > 0) {
            for (auto j : detail::choose_indices(cfg.p, cfg.outcome_shift_per_arm, rng)) {
                beta(j) += signed_uniform(rng, 0.5, 1.0);
            }
        }
        t.beta_r[arm_index(a)] = beta;
    }

    t.rct_mean_shift = Vector::Zero(cfg.p);
    if (cfg.shift_covariates > 0) {
        for (auto j : detail::choose_indices(cfg.p, cfg.shift_covariates, rng)) {
            t.rct_mean_shift(j) = signed_uniform(rng, 0.25, 0.5);
        }
    }

    Vector w = Vector::Zero(cfg.p);
    for (auto j : detail::choose_indices(cfg.p, cfg.os_logistic_dim, rng)) w(j) = uniform(rng, -1.0, 1.0);
    const Matrix cov = make_covariance(cfg.p, cfg.rho);
    const double sd = std::sqrt(w.dot(cov * w));
    const double b0 = detail::tune_intercept(sd, cfg.os_treated_fraction, cfg.propensity_probe_draws, rng);
    t.os_logistic = PropensitySpec::logistic_model(w, b0);

    if (cfg.misspecified) {
        for (Study s : {Study::os, Study::rct}) {
            const auto k = GroundTruth::study_index(s);
            for (int a : arms) {
                const Vector& beta = k == 1 ? t.beta_r[arm_index(a)] : t.beta_o[arm_index(a)];
                for (Index j = 0; j < cfg.p; ++j) {
                    if (beta(j) != 0.0) t.quad_terms[k][arm_index(a)][j] = uniform(rng, 0.25, 0.5);
                }
            }
        }
    }
    return t;
}

/// OS sample: X ~ N(0, Sigma), A ~ logistic propensity, Y = mu^o_A(X) + noise.
inline StudyDataset gen_os(const SimConfig& cfg, const GroundTruth& truth, Rng& rng)
{
    cfg.validate();
    StudyDataset ds;
    ds.study = Study::os;
    ds.X = sample_mvn(cfg.n_o, Vector::Zero(cfg.p), make_covariance(cfg.p, cfg.rho), rng);
    ds.A.resize(cfg.n_o);
    ds.Y.resize(cfg.n_o);
    for (Index i = 0; i < cfg.n_o; ++i) {
        const auto x = ds.X.row(i).transpose();
        const int a = std::bernoulli_distribution(truth.os_logistic(x))(rng) ? 1 : -1;
        ds.A(i) = a;
        ds.Y(i) = truth.mu(Study::os, a, x) + cfg.noise_sd * standard_normal(rng);
    }
    ds.feature_names = default_feature_names(cfg.p);
    return ds;
}

/// RCT sample: X ~ N(shift, Sigma), A = +/-1 with probability 1/2, Y = mu^r_A(X) + noise.
inline StudyDataset gen_rct(const SimConfig& cfg, const GroundTruth& truth, Rng& rng)
{
    cfg.validate();
    StudyDataset ds;
    ds.study = Study::rct;
    ds.X = sample_mvn(cfg.n_r, truth.rct_mean_shift, make_covariance(cfg.p, cfg.rho), rng);
    ds.A.resize(cfg.n_r);
    ds.Y.resize(cfg.n_r);
    std::bernoulli_distribution coin(0.5);
    for (Index i = 0; i < cfg.n_r; ++i) {
        const auto x = ds.X.row(i).transpose();
        const int a = coin(rng) ? 1 : -1;
        ds.A(i) = a;
        ds.Y(i) = truth.mu(Study::rct, a, x) + cfg.noise_sd * standard_normal(rng);
    }
    ds.feature_names = default_feature_names(cfg.p);
    ds.propensity = 0.5;
    return ds;
}

/// tau^r(x) = mu^r_{+1}(x) - mu^r_{-1}(x) on the full covariate vector.
template <class Derived>
double true_cate(const GroundTruth& truth, const Eigen::MatrixBase<Derived>& x)
{
    if (x.size() != truth.p) throw DataError("covariate vector length does not match truth");
    return truth.mu(Study::rct, +1, x) - truth.mu(Study::rct, -1, x);
}

/// Coordinates whose coefficient differs between arms in either study.
inline std::vector<Index> effect_modifiers(const GroundTruth& truth)
{
    std::vector<Index> mods;
    for (Index j = 0; j < truth.p; ++j) {
        if (truth.beta_r[1](j) != truth.beta_r[0](j) || truth.beta_o[1](j) != truth.beta_o[0](j)) mods.push_back(j);
    }
    return mods;
}

struct DroppedModifiers
{
    StudyDataset os;
    StudyDataset rct;
    std::vector<Index> removed;
};

/**
 * Hides ceil(fraction * #modifiers) randomly chosen effect modifiers from
 * both datasets. The removed indices are recorded on `truth`, which keeps the
 * full coefficient vectors for evaluation.
 */
inline DroppedModifiers drop_modifiers(const StudyDataset& os, const StudyDataset& rct, GroundTruth& truth,
                                       double fraction, Rng& rng)
{
    if (!(fraction >= 0.0 && fraction <= 0.5)) throw ConfigError("removal fraction must lie in [0, 0.5]");
    check_aligned(os, rct);
    if (os.p() != truth.p) throw DataError("datasets must carry the full covariate vector");
    auto mods = effect_modifiers(truth);
    const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(mods.size()) - 1e-12));
    std::shuffle(mods.begin(), mods.end(), rng);
    mods.resize(std::min(count, mods.size()));
    std::sort(mods.begin(), mods.end());
    truth.removed_indices = mods;
    return {os.drop_columns(mods), rct.drop_columns(mods), mods};
}

/// Independent RNG streams of one simulated replicate, derived from its seed.
enum SimStream : std::uint64_t { stream_truth = 1, stream_os = 2, stream_rct = 3, stream_drop = 4, stream_eval = 5, stream_fit = 6 };

struct SimulatedStudies
{
    GroundTruth truth;
    StudyDataset os;
    StudyDataset rct;
};

/// Truth, OS and RCT samples from cfg.seed, with modifiers hidden when
/// cfg.removed_modifier_fraction > 0.
inline SimulatedStudies simulate(const SimConfig& cfg)
{
    cfg.validate();
    Rng truth_rng(derive_seed(cfg.seed, {stream_truth}));
    Rng os_rng(derive_seed(cfg.seed, {stream_os}));
    Rng rct_rng(derive_seed(cfg.seed, {stream_rct}));
    SimulatedStudies out;
    out.truth = gen_truth(cfg, truth_rng);
    out.os = gen_os(cfg, out.truth, os_rng);
    out.rct = gen_rct(cfg, out.truth, rct_rng);
    if (cfg.removed_modifier_fraction > 0.0) {
        Rng drop_rng(derive_seed(cfg.seed, {stream_drop}));
        auto dropped = drop_modifiers(out.os, out.rct, out.truth, cfg.removed_modifier_fraction, drop_rng);
        out.os = std::move(dropped.os);
        out.rct = std::move(dropped.rct);
    }
    return out;
}

} // namespace catefuse
