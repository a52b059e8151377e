#pragma once
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include <catefuse/data.hpp>
#include <catefuse/error.hpp>
#include <catefuse/estimators.hpp>
#include <catefuse/evaluation.hpp>
#include <catefuse/simulator.hpp>

namespace catefuse {
namespace json_io {

using json = nlohmann::ordered_json;

namespace detail {

inline std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector from_vec(const json& j, const std::string& field)
{
    if (!j.is_array()) throw ConfigError("field '" + field + "' must be an array of numbers");
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw ConfigError("field '" + field + "' must be an array of numbers");
        v(static_cast<Index>(i)) = j[i].get<double>();
    }
    return v;
}

/// Reads j[key] into out when present, naming the field on type errors.
template <class T>
void read_field(const json& j, const char* key, T& out)
{
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("malformed value for field '") + key + "'");
    }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where)
{
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) throw ConfigError("unknown field '" + item.key() + "' in " + where);
    }
}

} // namespace detail

inline json to_json(const LinearModel& m) { return {{"coef", detail::to_vec(m.coef)}, {"intercept", m.intercept}}; }

inline LinearModel linear_model_from_json(const json& j, const std::string& field)
{
    if (!j.is_object() || !j.contains("coef")) throw ConfigError("field '" + field + "' must hold coef and intercept");
    LinearModel m;
    m.coef = detail::from_vec(j.at("coef"), field + ".coef");
    detail::read_field(j, "intercept", m.intercept);
    return m;
}

inline const char* to_string(MisspecKind k) { return k == MisspecKind::quadratic ? "quadratic" : "sine"; }

inline MisspecKind parse_misspec_kind(const std::string& s)
{
    if (s == "quadratic") return MisspecKind::quadratic;
    if (s == "sine") return MisspecKind::sine;
    throw ConfigError("misspec_kind must be quadratic or sine, got '" + s + "'");
}

inline json to_json(const SimConfig& c)
{
    return {{"p", c.p},
            {"n_o", c.n_o},
            {"n_r", c.n_r},
            {"support_size", c.support_size},
            {"noise_sd", c.noise_sd},
            {"os_logistic_dim", c.os_logistic_dim},
            {"shift_covariates", c.shift_covariates},
            {"outcome_shift_per_arm", c.outcome_shift_per_arm},
            {"misspecified", c.misspecified},
            {"misspec_kind", to_string(c.misspec_kind)},
            {"removed_modifier_fraction", c.removed_modifier_fraction},
            {"rho", c.rho},
            {"os_treated_fraction", c.os_treated_fraction},
            {"propensity_probe_draws", c.propensity_probe_draws},
            {"seed", c.seed}};
}

/// Overlays the fields present in `j` onto `base`.
inline SimConfig sim_config_from_json(const json& j, SimConfig base = {})
{
    detail::reject_unknown(j,
                           {"p", "n_o", "n_r", "support_size", "noise_sd", "os_logistic_dim", "shift_covariates",
                            "outcome_shift_per_arm", "misspecified", "misspec_kind", "removed_modifier_fraction", "rho",
                            "os_treated_fraction", "propensity_probe_draws", "seed"},
                           "simulation config");
    detail::read_field(j, "p", base.p);
    detail::read_field(j, "n_o", base.n_o);
    detail::read_field(j, "n_r", base.n_r);
    detail::read_field(j, "support_size", base.support_size);
    detail::read_field(j, "noise_sd", base.noise_sd);
    detail::read_field(j, "os_logistic_dim", base.os_logistic_dim);
    detail::read_field(j, "shift_covariates", base.shift_covariates);
    detail::read_field(j, "outcome_shift_per_arm", base.outcome_shift_per_arm);
    detail::read_field(j, "misspecified", base.misspecified);
    if (j.contains("misspec_kind")) {
        std::string kind;
        detail::read_field(j, "misspec_kind", kind);
        base.misspec_kind = parse_misspec_kind(kind);
    }
    detail::read_field(j, "removed_modifier_fraction", base.removed_modifier_fraction);
    detail::read_field(j, "rho", base.rho);
    detail::read_field(j, "os_treated_fraction", base.os_treated_fraction);
    detail::read_field(j, "propensity_probe_draws", base.propensity_probe_draws);
    detail::read_field(j, "seed", base.seed);
    return base;
}

inline json to_json(const GroundTruth& t, const SimConfig& cfg)
{
    auto arms_json = [](const std::array<Vector, 2>& v) {
        return json{{"minus", detail::to_vec(v[0])}, {"plus", detail::to_vec(v[1])}};
    };
    auto terms_json = [](const GroundTruth::SparseTerms& terms) {
        json out = json::array();
        for (const auto& [j, m] : terms) out.push_back({{"index", j}, {"m", m}});
        return out;
    };
    std::array<Vector, 2> shift{t.beta_r[0] - t.beta_o[0], t.beta_r[1] - t.beta_o[1]};
    return {{"seed", cfg.seed},
            {"config", to_json(cfg)},
            {"p", t.p},
            {"beta_o", arms_json(t.beta_o)},
            {"beta_r", arms_json(t.beta_r)},
            {"outcome_shift", arms_json(shift)},
            {"rct_mean_shift", detail::to_vec(t.rct_mean_shift)},
            {"os_propensity", {{"coef", detail::to_vec(t.os_logistic.coef)}, {"intercept", t.os_logistic.intercept}}},
            {"misspec_kind", to_string(t.misspec_kind)},
            {"quad_terms",
             {{"os", {{"minus", terms_json(t.quad_terms[0][0])}, {"plus", terms_json(t.quad_terms[0][1])}}},
              {"rct", {{"minus", terms_json(t.quad_terms[1][0])}, {"plus", terms_json(t.quad_terms[1][1])}}}}},
            {"removed_indices", t.removed_indices}};
}

inline GroundTruth truth_from_json(const json& j)
{
    GroundTruth t;
    try {
        t.p = j.at("p").get<int>();
        const auto& cfg = j.at("config");
        t.rho = cfg.at("rho").get<double>();
        for (std::size_t k = 0; k < 2; ++k) {
            const char* side = k == 0 ? "minus" : "plus";
            t.beta_o[k] = detail::from_vec(j.at("beta_o").at(side), "beta_o");
            t.beta_r[k] = detail::from_vec(j.at("beta_r").at(side), "beta_r");
        }
        t.rct_mean_shift = detail::from_vec(j.at("rct_mean_shift"), "rct_mean_shift");
        t.os_logistic = PropensitySpec::logistic_model(detail::from_vec(j.at("os_propensity").at("coef"), "os_propensity"),
                                                       j.at("os_propensity").at("intercept").get<double>());
        t.misspec_kind = parse_misspec_kind(j.at("misspec_kind").get<std::string>());
        for (std::size_t s = 0; s < 2; ++s) {
            for (std::size_t k = 0; k < 2; ++k) {
                for (const auto& e : j.at("quad_terms").at(s == 0 ? "os" : "rct").at(k == 0 ? "minus" : "plus")) {
                    t.quad_terms[s][k][e.at("index").get<Index>()] = e.at("m").get<double>();
                }
            }
        }
        t.removed_indices = j.at("removed_indices").get<std::vector<Index>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed ground-truth file: ") + e.what());
    }
    return t;
}

inline json to_json(const CateModel& m, const std::vector<std::string>& feature_names)
{
    json out{{"method", to_string(m.method)},
             {"feature_names", feature_names},
             {"pi_plus1", m.pi_plus1},
             {"seed", m.seed},
             {"tau", to_json(m.tau)}};
    if (m.parts) {
        out["parts"] = {{"os_contrast", to_json(m.parts->os_contrast)},
                        {"calibration_delta_contrast", to_json(m.parts->calibration_delta_contrast)},
                        {"correction", to_json(m.parts->correction)}};
    } else {
        out["parts"] = nullptr;
    }
    json lambdas = json::object();
    for (const auto& [k, v] : m.lambdas) lambdas[k] = v;
    out["lambdas"] = lambdas;
    return out;
}

inline CateModel cate_model_from_json(const json& j)
{
    CateModel m;
    try {
        m.method = parse_method(j.at("method").get<std::string>());
        m.tau = linear_model_from_json(j.at("tau"), "tau");
        detail::read_field(j, "pi_plus1", m.pi_plus1);
        detail::read_field(j, "seed", m.seed);
        if (j.contains("parts") && !j.at("parts").is_null()) {
            const auto& p = j.at("parts");
            m.parts = CateParts{linear_model_from_json(p.at("os_contrast"), "parts.os_contrast"),
                                linear_model_from_json(p.at("calibration_delta_contrast"),
                                                       "parts.calibration_delta_contrast"),
                                linear_model_from_json(p.at("correction"), "parts.correction")};
        }
        if (j.contains("lambdas")) {
            for (const auto& item : j.at("lambdas").items()) m.lambdas[item.key()] = item.value().get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model file: ") + e.what());
    }
    return m;
}

inline json to_json(const ExperimentSpec& s)
{
    json methods = json::array();
    for (Method m : s.methods) methods.push_back(to_string(m));
    return {{"sim", to_json(s.sim)},
            {"n_r", s.n_r_values},
            {"misspecified", s.misspecified_values},
            {"removal_fractions", s.removal_fractions},
            {"methods", methods},
            {"replicates", s.replicates},
            {"eval_points", s.eval_points},
            {"base_seed", s.base_seed},
            {"jobs", s.jobs},
            {"cross_fit_folds", s.estimator.cross_fit_folds},
            {"cv_folds", s.estimator.cv.k_folds},
            {"lambda_rule", s.estimator.cv.rule == lasso::LambdaRule::min ? "min" : "1se"},
            {"eval_on_training", s.eval_on_training}};
}

inline ExperimentSpec experiment_spec_from_json(const json& j)
{
    detail::reject_unknown(j,
                           {"sim", "n_r", "misspecified", "removal_fractions", "methods", "replicates", "eval_points",
                            "base_seed", "jobs", "cross_fit_folds", "cv_folds", "lambda_rule", "eval_on_training"},
                           "experiment spec");
    ExperimentSpec s;
    if (j.contains("sim")) s.sim = sim_config_from_json(j.at("sim"));
    detail::read_field(j, "n_r", s.n_r_values);
    detail::read_field(j, "misspecified", s.misspecified_values);
    detail::read_field(j, "removal_fractions", s.removal_fractions);
    if (j.contains("methods")) {
        std::vector<std::string> names;
        detail::read_field(j, "methods", names);
        s.methods.clear();
        for (const auto& n : names) s.methods.push_back(parse_method(n));
    }
    detail::read_field(j, "replicates", s.replicates);
    detail::read_field(j, "eval_points", s.eval_points);
    detail::read_field(j, "base_seed", s.base_seed);
    detail::read_field(j, "jobs", s.jobs);
    detail::read_field(j, "cross_fit_folds", s.estimator.cross_fit_folds);
    detail::read_field(j, "cv_folds", s.estimator.cv.k_folds);
    if (j.contains("lambda_rule")) {
        std::string rule;
        detail::read_field(j, "lambda_rule", rule);
        if (rule == "min") s.estimator.cv.rule = lasso::LambdaRule::min;
        else if (rule == "1se") s.estimator.cv.rule = lasso::LambdaRule::one_se;
        else throw ConfigError("field 'lambda_rule' must be min or 1se");
    }
    detail::read_field(j, "eval_on_training", s.eval_on_training);
    s.validate();
    return s;
}

inline json to_json(const ExperimentReport& r)
{
    json rows = json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"n_r", row.cell.n_r},
                        {"n_o", row.cell.n_o},
                        {"misspecified", row.cell.misspecified},
                        {"removal_fraction", row.cell.removal_fraction},
                        {"method", to_string(row.method)},
                        {"rmse_mean", row.rmse_mean},
                        {"rmse_sd", row.rmse_sd},
                        {"replicates", row.replicates},
                        {"failures", row.failures},
                        {"valid", row.valid},
                        {"wall_seconds", row.wall_seconds},
                        {"rmse_values", row.rmse_values}});
    }
    return {{"metadata",
             {{"base_seed", r.metadata.base_seed},
              {"version", r.metadata.version},
              {"replicates_requested", r.metadata.replicates_requested},
              {"eval_points", r.metadata.eval_points},
              {"deviations", r.metadata.deviations}}},
            {"rows", rows}};
}

inline json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("malformed JSON in '" + path + "': " + e.what());
    }
}

inline void write_json_file(const std::string& path, const json& j)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
}

} // namespace json_io
} // namespace catefuse
