#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <catefuse/error.hpp>
#include <catefuse/rng.hpp>

namespace catefuse {
namespace lasso {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Gradients within rounding of the penalty leave a coefficient at zero, so the
// null model is returned at lambda_max however the caller summed the gradient.
inline constexpr double threshold_slack = 1.0 + 1e-12;

inline double soft_threshold(double z, double t)
{
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

/**
 * Weighted least-squares problem with an L1 penalty on the slopes.
 *
 * The solver minimizes
 *
 *     (1 / 2W) sum_i w_i (y_i - offset_i - b0 - x_i' beta)^2 + lambda * sum_j s_j |beta_j|
 *
 * where W = sum_i w_i and s_j is the weighted standard deviation of column j
 * (s_j = 1 when standardize is off). The intercept b0 is never penalized.
 */
struct DesignProblem
{
    Matrix X;
    Vector y;
    Vector weights;
    Vector offset;
    bool standardize = true;
    bool fit_intercept = true;

    static DesignProblem make(Matrix X, Vector y)
    {
        DesignProblem prob;
        const Index n = X.rows();
        prob.X = std::move(X);
        prob.y = std::move(y);
        prob.weights = Vector::Ones(n);
        prob.offset = Vector::Zero(n);
        return prob;
    }

    Index n() const { return X.rows(); }
    Index p() const { return X.cols(); }

    void validate() const
    {
        if (n() < 1 || p() < 1) throw DataError("design needs n >= 1 and p >= 1");
        if (y.size() != n()) throw DataError("response length does not match design rows");
        if (weights.size() != n()) throw DataError("weight length does not match design rows");
        if (offset.size() != n()) throw DataError("offset length does not match design rows");
        if (!X.allFinite()) throw DataError("design contains non-finite values");
        if (!y.allFinite() || !offset.allFinite()) throw DataError("response contains non-finite values");
        if ((weights.array() < 0.0).any() || !weights.allFinite()) {
            throw DataError("weights must be finite and nonnegative");
        }
        if (!(weights.sum() > 0.0)) throw DataError("weights must have a positive sum");
    }
};

struct SolverControl
{
    double tol = 1e-7;       // max |coefficient change| per sweep, standardized scale
    int max_iter = 100000;   // sweeps
    bool record_objective = false;
};

/// Single-lambda solution on the original covariate scale.
struct LassoSolution
{
    Vector beta;
    double intercept = 0.0;
    double lambda = 0.0;
    int sweeps = 0;
    std::vector<bool> degenerate;          // zero-variance columns, coefficient pinned at 0
    std::vector<double> objective_trace;   // penalized objective after each sweep (if recorded)

    bool any_degenerate() const
    {
        return std::any_of(degenerate.begin(), degenerate.end(), [](bool b) { return b; });
    }
};

class ConvergenceError : public NumericalError
{
public:
    ConvergenceError(const std::string& what, LassoSolution last)
        : NumericalError(what), last_iterate(std::move(last))
    {}
    LassoSolution last_iterate;
};

struct PathPoint
{
    double lambda;
    double cv_mean;
    double cv_sd;
};

enum class LambdaRule { min, one_se };

/// Cross-validated fit. `path` is strictly decreasing in lambda and
/// `path[selected_index].lambda == lambda_selected`.
struct LassoFit
{
    Vector beta;
    double intercept = 0.0;
    double lambda_selected = 0.0;
    std::size_t selected_index = 0;
    std::vector<PathPoint> path;
    std::vector<bool> degenerate;
};

struct CvOptions
{
    int k_folds = 10;
    int n_lambda = 100;
    std::optional<double> min_ratio;   // default: 1e-2 when n < p, else 1e-4
    LambdaRule rule = LambdaRule::min;
    // Opt-in path truncation: after at least 5 lambdas, stop when the deviance
    // ratio exceeds 0.999 or improves by less than 1e-5 (relative) between
    // consecutive lambdas.
    bool early_stop = false;
    SolverControl control;
    std::vector<int> fold_ids;         // optional explicit assignment in [0, k_folds)
};

namespace detail {

/**
 * Sufficient statistics of a (row-subset of a) DesignProblem on the
 * standardized scale, driving covariance-update coordinate descent.
 * With v_i = w_i / W:  gram = X~' V X~,  xy = X~' V y~.
 */
class CovarianceEngine
{
public:
    CovarianceEngine(const DesignProblem& prob, const std::vector<Index>& rows)
        : p_(prob.p()), intercept_(prob.fit_intercept)
    {
        const Index m = static_cast<Index>(rows.size());
        if (m < 1) throw DataError("empty row subset");
        double wsum = 0.0;
        for (auto i : rows) wsum += prob.weights(i);
        if (!(wsum > 0.0)) throw DataError("weights must have a positive sum");

        Vector v(m);
        Vector resp(m);
        for (Index r = 0; r < m; ++r) {
            const Index i = rows[r];
            v(r) = prob.weights(i) / wsum;
            resp(r) = prob.y(i) - prob.offset(i);
        }

        x_mean_ = Vector::Zero(p_);
        y_mean_ = 0.0;
        if (intercept_) {
            for (Index r = 0; r < m; ++r) {
                x_mean_.noalias() += v(r) * prob.X.row(rows[r]).transpose();
                y_mean_ += v(r) * resp(r);
            }
        }

        Matrix xs(m, p_);
        Vector ys(m);
        for (Index r = 0; r < m; ++r) {
            const double sv = std::sqrt(v(r));
            xs.row(r) = sv * (prob.X.row(rows[r]) - x_mean_.transpose());
            ys(r) = sv * (resp(r) - y_mean_);
        }

        x_scale_ = Vector::Ones(p_);
        degenerate_.assign(static_cast<std::size_t>(p_), false);
        for (Index j = 0; j < p_; ++j) {
            const double ss = xs.col(j).squaredNorm();
            const double sd = std::sqrt(ss);
            const double ref = std::max(1.0, std::abs(x_mean_(j)));
            if (!(sd > 1e-12 * ref)) {
                degenerate_[static_cast<std::size_t>(j)] = true;
                xs.col(j).setZero();
            } else if (prob.standardize) {
                x_scale_(j) = sd;
                xs.col(j) /= sd;
            }
        }

        gram_ = Matrix::Zero(p_, p_);
        gram_.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose());
        gram_.triangularView<Eigen::StrictlyUpper>() = gram_.transpose();
        xy_.noalias() = xs.transpose() * ys;
        y_ss_ = ys.squaredNorm();
    }

    Index p() const { return p_; }
    const Vector& xy() const { return xy_; }
    const std::vector<bool>& degenerate() const { return degenerate_; }

    double lambda_max() const
    {
        double lm = 0.0;
        for (Index j = 0; j < p_; ++j) {
            if (!degenerate_[static_cast<std::size_t>(j)]) lm = std::max(lm, std::abs(xy_(j)));
        }
        return lm;
    }

    /// Fraction of the centered weighted sum of squares explained by b.
    double deviance_ratio(const Vector& b) const
    {
        if (!(y_ss_ > 0.0)) return 0.0;
        const Vector g = xy_ - gram_ * b;
        return b.dot(xy_ + g) / y_ss_;
    }

    /// Penalized objective on the standardized scale given gradient g = xy - G b.
    double objective(const Vector& b, const Vector& g, double lambda) const
    {
        return 0.5 * y_ss_ - 0.5 * b.dot(xy_ + g) + lambda * b.lpNorm<1>();
    }

    /// Coordinate descent from the warm start `b` (standardized scale).
    /// Returns the number of full sweeps, or -1 without convergence.
    ///
    /// Once the active set and its signs repeat between sweeps, the KKT system
    /// on that set is solved directly; the candidate is kept only if it is
    /// sign-consistent and satisfies the inactive-set conditions, and the
    /// following sweep certifies it.
    int solve(double lambda, Vector& b, const SolverControl& ctl, std::vector<double>* trace) const
    {
        Vector g = xy_ - gram_ * b;
        std::vector<Index> active, prev_active;
        Vector signs, prev_signs;
        int next_exact = 2;
        for (int sweep = 1; sweep <= ctl.max_iter; ++sweep) {
            double max_delta = 0.0;
            for (Index j = 0; j < p_; ++j) {
                if (degenerate_[static_cast<std::size_t>(j)]) continue;
                const double gjj = gram_(j, j);
                const double old = b(j);
                const double next = soft_threshold(g(j) + gjj * old, lambda * threshold_slack) / gjj;
                const double delta = next - old;
                if (delta != 0.0) {
                    b(j) = next;
                    g.noalias() -= delta * gram_.col(j);
                    max_delta = std::max(max_delta, std::abs(delta));
                }
            }
            if (trace) trace->push_back(objective(b, g, lambda));
            if (max_delta < ctl.tol) return sweep;

            active.clear();
            for (Index j = 0; j < p_; ++j) {
                if (b(j) != 0.0) active.push_back(j);
            }
            signs.resize(static_cast<Index>(active.size()));
            for (Index a = 0; a < signs.size(); ++a) signs(a) = b(active[a]) > 0.0 ? 1.0 : -1.0;
            if (sweep >= next_exact && active == prev_active && signs == prev_signs) {
                if (exact_step(lambda, active, signs, b, g) == StepResult::failed) next_exact = 2 * sweep;
            }
            std::swap(active, prev_active);
            std::swap(signs, prev_signs);
        }
        return -1;
    }

    enum class StepResult { solved, partial, failed };

    /// Solves G_AA b_A = xy_A - lambda * s_A on the current active set. A
    /// sign-consistent solution that also satisfies the inactive-set
    /// conditions replaces b. If some coordinate would change sign, b moves
    /// along the segment towards the solution up to the first sign boundary
    /// and that coordinate is zeroed; the objective decreases along the
    /// segment because the penalized objective is a convex quadratic there.
    StepResult exact_step(double lambda, std::vector<Index> active, Vector signs, Vector& b, Vector& g) const
    {
        bool reduced = false;
        Matrix sub;
        Vector rhs, sol;
        for (;;) {
            const Index k = static_cast<Index>(active.size());
            if (k == 0) return reduced ? StepResult::partial : StepResult::failed;
            sub.resize(k, k);
            rhs.resize(k);
            for (Index a = 0; a < k; ++a) {
                rhs(a) = xy_(active[a]) - lambda * signs(a);
                for (Index c = 0; c < k; ++c) sub(a, c) = gram_(active[a], active[c]);
            }
            const Eigen::LDLT<Matrix> ldlt(sub);
            if (ldlt.info() == Eigen::Success) {
                sol = ldlt.solve(rhs);
                if (sol.allFinite() && (sub * sol - rhs).norm() <= 1e-10 * (1.0 + rhs.norm())) break;
            }
            const Index dropped = reduce_rank_deficient(sub, active, signs, b, g);
            if (dropped < 0) return reduced ? StepResult::partial : StepResult::failed;
            reduced = true;
            active.erase(active.begin() + dropped);
            Vector kept(k - 1);
            for (Index a = 0, c = 0; a < k; ++a) {
                if (a != dropped) kept(c++) = signs(a);
            }
            signs = std::move(kept);
        }
        const Index k = static_cast<Index>(active.size());

        double t = 1.0;
        Index hit = -1;
        for (Index a = 0; a < k; ++a) {
            if (sol(a) * signs(a) <= 0.0) {
                const double cur = b(active[a]);
                const double ta = cur / (cur - sol(a));
                if (ta < t) {
                    t = ta;
                    hit = a;
                }
            }
        }
        Vector cand = Vector::Zero(p_);
        for (Index a = 0; a < k; ++a) {
            const double cur = b(active[a]);
            cand(active[a]) = a == hit ? 0.0 : cur + t * (sol(a) - cur);
        }
        if (hit < 0) {
            for (Index a = 0; a < k; ++a) cand(active[a]) = sol(a);
        }
        const Vector cand_g = xy_ - gram_ * cand;
        if (hit >= 0) {
            b = cand;
            g = cand_g;
            return StepResult::partial;
        }
        for (Index j = 0; j < p_; ++j) {
            if (cand(j) == 0.0 && !degenerate_[static_cast<std::size_t>(j)] && std::abs(cand_g(j)) > lambda) {
                return StepResult::failed;
            }
        }
        b = cand;
        g = cand_g;
        return StepResult::solved;
    }

    /// With a singular active block there is a direction d, G_AA d = 0, that
    /// leaves the fit unchanged. Moving along the sign of d that does not
    /// increase the penalty until the first coordinate reaches zero shrinks
    /// the active set without increasing the objective.
    /// Returns the position in `active` of the zeroed coordinate, or -1.
    Index reduce_rank_deficient(const Matrix& sub, const std::vector<Index>& active, const Vector& signs, Vector& b,
                                Vector& g) const
    {
        const Eigen::SelfAdjointEigenSolver<Matrix> es(sub);
        if (es.info() != Eigen::Success) return -1;
        const Vector& ev = es.eigenvalues();
        const double top = ev.cwiseAbs().maxCoeff();
        if (!(top > 0.0) || ev(0) > 1e-10 * top) return -1;
        Vector d = es.eigenvectors().col(0);
        if (signs.dot(d) > 0.0) d = -d;
        const Index k = d.size();
        double t = std::numeric_limits<double>::infinity();
        Index hit = -1;
        for (Index a = 0; a < k; ++a) {
            const double cur = b(active[a]);
            if (cur * d(a) < 0.0) {
                const double ta = -cur / d(a);
                if (ta < t) {
                    t = ta;
                    hit = a;
                }
            }
        }
        if (hit < 0) return -1;
        for (Index a = 0; a < k; ++a) b(active[a]) = a == hit ? 0.0 : b(active[a]) + t * d(a);
        g = xy_ - gram_ * b;
        return hit;
    }

    /// Unpenalized weighted least squares on the non-degenerate columns.
    Vector solve_unpenalized(Index n_effective) const
    {
        std::vector<Index> active;
        for (Index j = 0; j < p_; ++j) {
            if (!degenerate_[static_cast<std::size_t>(j)]) active.push_back(j);
        }
        const Index k = static_cast<Index>(active.size());
        if (n_effective < k + (intercept_ ? 1 : 0)) {
            throw DataError("lambda = 0 requires at least as many observations as active columns");
        }
        Matrix sub(k, k);
        Vector rhs(k);
        for (Index a = 0; a < k; ++a) {
            rhs(a) = xy_(active[a]);
            for (Index c = 0; c < k; ++c) sub(a, c) = gram_(active[a], active[c]);
        }
        Eigen::LLT<Matrix> llt(sub);
        if (llt.info() != Eigen::Success) throw NumericalError("singular design in unpenalized fit");
        const Vector sol = llt.solve(rhs);
        Vector b = Vector::Zero(p_);
        for (Index a = 0; a < k; ++a) b(active[a]) = sol(a);
        return b;
    }

    /// Back-transform standardized coefficients to the original scale.
    LassoSolution to_solution(const Vector& b, double lambda, int sweeps) const
    {
        LassoSolution out;
        out.beta = b.cwiseQuotient(x_scale_);
        out.intercept = intercept_ ? y_mean_ - x_mean_.dot(out.beta) : 0.0;
        out.lambda = lambda;
        out.sweeps = sweeps;
        out.degenerate = degenerate_;
        return out;
    }

private:
    Index p_;
    bool intercept_;
    Vector x_mean_;
    Vector x_scale_;
    double y_mean_ = 0.0;
    double y_ss_ = 0.0;
    Matrix gram_;
    Vector xy_;
    std::vector<bool> degenerate_;
};

inline std::vector<Index> all_rows(Index n)
{
    std::vector<Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Index{0});
    return rows;
}

inline std::vector<double> geometric_path(double lambda_max, int n_lambda, double min_ratio)
{
    std::vector<double> path(static_cast<std::size_t>(n_lambda));
    const double step = std::log(min_ratio) / (n_lambda - 1);
    for (int k = 0; k < n_lambda; ++k) path[static_cast<std::size_t>(k)] = lambda_max * std::exp(step * k);
    path.back() = lambda_max * min_ratio;
    return path;
}

inline void check_path_args(int n_lambda, double min_ratio)
{
    if (n_lambda < 2) throw ConfigError("n_lambda must be >= 2");
    if (!(min_ratio > 0.0 && min_ratio < 1.0)) throw ConfigError("min_ratio must lie in (0, 1)");
}

inline double default_min_ratio(const DesignProblem& prob)
{
    return prob.n() < prob.p() ? 1e-2 : 1e-4;
}

} // namespace detail

/// Penalized objective of `prob` at an original-scale (beta, intercept),
/// matching what fit_lasso minimizes.
inline double objective_value(const DesignProblem& prob, const Vector& beta, double intercept, double lambda)
{
    const double wsum = prob.weights.sum();
    const Vector r = prob.y - prob.offset - prob.X * beta - Vector::Constant(prob.n(), intercept);
    double penalty = 0.0;
    for (Index j = 0; j < prob.p(); ++j) {
        double scale = 1.0;
        if (prob.standardize) {
            const double mean = prob.fit_intercept ? prob.weights.dot(prob.X.col(j)) / wsum : 0.0;
            const Vector c = prob.X.col(j).array() - mean;
            scale = std::sqrt(prob.weights.dot(c.cwiseProduct(c)) / wsum);
        }
        penalty += scale * std::abs(beta(j));
    }
    return 0.5 * prob.weights.dot(r.cwiseProduct(r)) / wsum + lambda * penalty;
}

/// Fits at a single penalty level by cyclic coordinate descent.
/// Throws ConvergenceError (carrying the last iterate) after max_iter sweeps.
inline LassoSolution fit_lasso(const DesignProblem& prob, double lambda, const SolverControl& ctl = {})
{
    prob.validate();
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
    if (!(ctl.tol > 0.0) || ctl.max_iter < 1) throw ConfigError("tol and max_iter must be positive");

    const detail::CovarianceEngine engine(prob, detail::all_rows(prob.n()));
    if (lambda == 0.0) {
        const Index n_eff = (prob.weights.array() > 0.0).count();
        return engine.to_solution(engine.solve_unpenalized(n_eff), 0.0, 0);
    }
    Vector b = Vector::Zero(prob.p());
    std::vector<double> trace;
    const int sweeps = engine.solve(lambda, b, ctl, ctl.record_objective ? &trace : nullptr);
    auto sol = engine.to_solution(b, lambda, sweeps < 0 ? ctl.max_iter : sweeps);
    sol.objective_trace = std::move(trace);
    if (sweeps < 0) {
        throw ConvergenceError("coordinate descent did not converge in " + std::to_string(ctl.max_iter) + " sweeps",
                               std::move(sol));
    }
    return sol;
}

/// Geometric sequence from lambda_max (smallest penalty giving the null
/// model) down to lambda_max * min_ratio.
inline std::vector<double> lambda_path(const DesignProblem& prob, int n_lambda, double min_ratio)
{
    prob.validate();
    detail::check_path_args(n_lambda, min_ratio);
    const detail::CovarianceEngine engine(prob, detail::all_rows(prob.n()));
    const double lm = engine.lambda_max();
    if (!(lm > 0.0)) throw DataError("degenerate response: lambda_max is zero");
    return detail::geometric_path(lm, n_lambda, min_ratio);
}

/// Fold labels in [0, k) of near-equal size, shuffled by `seed`.
inline std::vector<int> random_folds(Index n, int k, std::uint64_t seed)
{
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = static_cast<int>(i % k);
    Rng rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    return ids;
}

/**
 * K-fold cross-validated LASSO over a shared lambda path.
 *
 * The path is fit on all rows first (with optional saturation cut-off),
 * then each fold is fit along the same lambdas with warm starts. The mean
 * held-out weighted MSE selects lambda (ties go to the larger lambda) and
 * the full-data solution at that lambda is returned.
 */
inline LassoFit cv_lasso(const DesignProblem& prob, std::uint64_t seed, const CvOptions& opts = {})
{
    prob.validate();
    const Index n = prob.n();
    const int k = opts.k_folds;
    if (k < 2 || k > n) throw ConfigError("k_folds must satisfy 2 <= k <= n (n = " + std::to_string(n) + ")");
    const double min_ratio = opts.min_ratio.value_or(detail::default_min_ratio(prob));
    detail::check_path_args(opts.n_lambda, min_ratio);

    std::vector<int> folds = opts.fold_ids;
    if (folds.empty()) {
        folds = random_folds(n, k, seed);
    } else if (static_cast<Index>(folds.size()) != n) {
        throw ConfigError("fold_ids length does not match n");
    }
    std::vector<std::vector<Index>> held(static_cast<std::size_t>(k));
    for (Index i = 0; i < n; ++i) {
        const int f = folds[static_cast<std::size_t>(i)];
        if (f < 0 || f >= k) throw ConfigError("fold id out of range");
        held[static_cast<std::size_t>(f)].push_back(i);
    }
    for (const auto& h : held) {
        if (h.size() < 2) throw DataError("cross-validation fold has fewer than 2 observations");
    }

    const detail::CovarianceEngine full(prob, detail::all_rows(n));
    const double lm = full.lambda_max();
    if (!(lm > 0.0)) throw DataError("degenerate response: lambda_max is zero");
    auto lambdas = detail::geometric_path(lm, opts.n_lambda, min_ratio);

    // Full-data path first; it fixes the (possibly truncated) lambda sequence
    // shared by every fold.
    std::vector<Vector> full_path;
    {
        Vector b = Vector::Zero(prob.p());
        double prev_dev = 0.0;
        for (std::size_t l = 0; l < lambdas.size(); ++l) {
            if (full.solve(lambdas[l], b, opts.control, nullptr) < 0) {
                throw ConvergenceError("coordinate descent did not converge on the full data",
                                       full.to_solution(b, lambdas[l], opts.control.max_iter));
            }
            full_path.push_back(b);
            if (opts.early_stop && l + 1 >= 5) {
                const double dev = full.deviance_ratio(b);
                if (dev > 0.999 || dev - prev_dev < 1e-5 * dev) break;
                prev_dev = dev;
            } else {
                prev_dev = full.deviance_ratio(b);
            }
        }
        lambdas.resize(full_path.size());
    }
    const std::size_t nl = lambdas.size();

    // mse[f][l]: weighted held-out MSE of fold f at lambda l.
    std::vector<std::vector<double>> mse(static_cast<std::size_t>(k), std::vector<double>(nl));
    std::vector<double> fold_weight(static_cast<std::size_t>(k), 0.0);
    for (int f = 0; f < k; ++f) {
        const auto& test = held[static_cast<std::size_t>(f)];
        std::vector<Index> train;
        train.reserve(static_cast<std::size_t>(n) - test.size());
        for (Index i = 0; i < n; ++i) {
            if (folds[static_cast<std::size_t>(i)] != f) train.push_back(i);
        }
        double wtest = 0.0;
        for (auto i : test) wtest += prob.weights(i);
        fold_weight[static_cast<std::size_t>(f)] = wtest;

        const detail::CovarianceEngine engine(prob, train);
        Vector b = Vector::Zero(prob.p());
        for (std::size_t l = 0; l < nl; ++l) {
            if (engine.solve(lambdas[l], b, opts.control, nullptr) < 0) {
                throw ConvergenceError("coordinate descent did not converge in CV fold " + std::to_string(f),
                                       engine.to_solution(b, lambdas[l], opts.control.max_iter));
            }
            const auto sol = engine.to_solution(b, lambdas[l], 0);
            double err = 0.0;
            for (auto i : test) {
                const double pred = prob.offset(i) + sol.intercept + prob.X.row(i).dot(sol.beta);
                const double r = prob.y(i) - pred;
                err += prob.weights(i) * r * r;
            }
            mse[static_cast<std::size_t>(f)][l] = wtest > 0.0 ? err / wtest : 0.0;
        }
    }

    LassoFit fit;
    fit.path.resize(nl);
    const double wtot = std::accumulate(fold_weight.begin(), fold_weight.end(), 0.0);
    for (std::size_t l = 0; l < nl; ++l) {
        double mean = 0.0;
        for (int f = 0; f < k; ++f) mean += fold_weight[static_cast<std::size_t>(f)] * mse[static_cast<std::size_t>(f)][l];
        mean /= wtot;
        double var = 0.0;
        for (int f = 0; f < k; ++f) {
            const double d = mse[static_cast<std::size_t>(f)][l] - mean;
            var += fold_weight[static_cast<std::size_t>(f)] * d * d;
        }
        var /= wtot;
        fit.path[l] = {lambdas[l], mean, std::sqrt(var / (k - 1))};
    }

    std::size_t best = 0;
    for (std::size_t l = 1; l < nl; ++l) {
        if (fit.path[l].cv_mean < fit.path[best].cv_mean) best = l;
    }
    if (opts.rule == LambdaRule::one_se) {
        const double bound = fit.path[best].cv_mean + fit.path[best].cv_sd;
        for (std::size_t l = 0; l <= best; ++l) {
            if (fit.path[l].cv_mean <= bound) {
                best = l;
                break;
            }
        }
    }

    const auto sol = full.to_solution(full_path[best], lambdas[best], 0);
    fit.beta = sol.beta;
    fit.intercept = sol.intercept;
    fit.lambda_selected = lambdas[best];
    fit.selected_index = best;
    fit.degenerate = sol.degenerate;
    return fit;
}

inline LassoFit cv_lasso(const DesignProblem& prob, int k_folds, std::uint64_t seed)
{
    CvOptions opts;
    opts.k_folds = k_folds;
    return cv_lasso(prob, seed, opts);
}

} // namespace lasso
} // namespace catefuse
