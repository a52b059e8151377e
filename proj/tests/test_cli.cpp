#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <catefuse/cli.hpp>

using namespace catefuse;
namespace fs = std::filesystem;

namespace {

struct Argv
{
    std::vector<std::string> args;
    std::vector<const char*> ptrs;

    explicit Argv(std::vector<std::string> a) : args(std::move(a))
    {
        args.insert(args.begin(), "catefuse");
        for (const auto& s : args) ptrs.push_back(s.c_str());
    }
    int argc() const { return static_cast<int>(ptrs.size()); }
    const char* const* argv() const { return ptrs.data(); }
};

cli::RunConfig parse(std::vector<std::string> args)
{
    const Argv a(std::move(args));
    return cli::parse_args(a.argc(), a.argv());
}

struct Outcome
{
    int code;
    std::string out, err;
};

Outcome run_main(std::vector<std::string> args)
{
    const Argv a(std::move(args));
    std::ostringstream out, err;
    const int code = cli::main_entry(a.argc(), a.argv(), out, err);
    return {code, out.str(), err.str()};
}

std::string usage_message(std::vector<std::string> args)
{
    try {
        parse(std::move(args));
    } catch (const cli::UsageError& e) {
        return e.what();
    }
    return "";
}

class TempDir
{
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / name)
    {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& s) const { return path_ / s; }
    std::string str() const { return path_.string(); }

private:
    fs::path path_;
};

void write_text(const fs::path& p, const std::string& text)
{
    std::ofstream out(p);
    out << text;
}

std::string read_text(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace

TEST(ParseArgs, SimulateFillsDefaults)
{
    const auto cfg = parse({"simulate", "--n-r", "250", "--n-o", "10000", "--seed", "7", "--out", "d/"});
    EXPECT_EQ(cfg.command, cli::Command::simulate);
    EXPECT_EQ(cfg.sim.n_r, 250);
    EXPECT_EQ(cfg.sim.n_o, 10000);
    EXPECT_EQ(cfg.sim.seed, 7u);
    EXPECT_EQ(cfg.sim.p, 100);
    EXPECT_EQ(cfg.sim.support_size, 10);
    EXPECT_DOUBLE_EQ(cfg.sim.noise_sd, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(cfg.sim.rho, 0.5);
    EXPECT_FALSE(cfg.sim.misspecified);
    EXPECT_EQ(cfg.out, fs::path("d/"));
}

TEST(ParseArgs, UsageErrors)
{
    EXPECT_NE(usage_message({"simulate", "--seed", "1"}).find("--out"), std::string::npos);
    EXPECT_FALSE(usage_message({"simulate", "fit", "--out", "d"}).empty());
    EXPECT_FALSE(usage_message({}).empty());
    EXPECT_FALSE(usage_message({"simulate", "--bogus", "--out", "d"}).empty());
    EXPECT_FALSE(usage_message({"simulate", "--n-r", "abc", "--out", "d"}).empty());
    EXPECT_FALSE(usage_message({"simulate", "--rho", "1.5", "--out", "d"}).empty());
    EXPECT_NE(usage_message({"fit", "--method", "naive", "--rct", "/nonexistent.csv", "--out", "m.json"}).find("--rct"),
              std::string::npos);
    EXPECT_NE(usage_message({"fit", "--method", "magic", "--rct", "x", "--out", "m.json"}).find("magic"),
              std::string::npos);
    EXPECT_NE(usage_message({"report", "--out", "d"}).find("--in"), std::string::npos);
    EXPECT_EQ(run_main({"simulate"}).code, 1);
}

TEST(ParseArgs, HelpAndVersion)
{
    const auto help = run_main({"--help"});
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.out.find("simulate"), std::string::npos);
    const auto version = run_main({"--version"});
    EXPECT_EQ(version.code, 0);
    EXPECT_EQ(version.out, std::string(CATEFUSE_VERSION) + "\n");
}

TEST(ParseArgs, ConfigMergeFlagsWin)
{
    TempDir dir("catefuse_cli_config");
    const auto cfg_path = dir / "cfg.json";
    write_text(cfg_path, R"({"n_r": 300, "seed": 5, "simulate": {"p": 20, "out": "from-config"},
                           "fit": {"method": "naive"}})");
    const auto cfg = parse({"--config", cfg_path.string(), "simulate", "--n-r", "400"});
    EXPECT_EQ(cfg.sim.n_r, 400);
    EXPECT_EQ(cfg.sim.p, 20);
    EXPECT_EQ(cfg.sim.seed, 5u);
    EXPECT_EQ(cfg.out, fs::path("from-config"));

    write_text(cfg_path, R"({"n_r": 300, "colour": "blue"})");
    const auto unknown = usage_message({"--config", cfg_path.string(), "simulate", "--out", "d"});
    EXPECT_NE(unknown.find("colour"), std::string::npos) << unknown;

    write_text(cfg_path, R"({"n_r": 300,)");
    const auto malformed = usage_message({"--config", cfg_path.string(), "simulate", "--out", "d"});
    EXPECT_NE(malformed.find("malformed JSON"), std::string::npos) << malformed;

    write_text(cfg_path, R"({"n_r": "many"})");
    const auto bad_value = usage_message({"--config", cfg_path.string(), "simulate", "--out", "d"});
    EXPECT_NE(bad_value.find("n_r"), std::string::npos) << bad_value;
}

TEST(ParseArgs, SeedFallsBackToEnvironment)
{
    ::setenv("CATEFUSE_SEED", "1234", 1);
    EXPECT_EQ(parse({"simulate", "--out", "d"}).sim.seed, 1234u);
    EXPECT_EQ(parse({"simulate", "--seed", "9", "--out", "d"}).sim.seed, 9u);
    EXPECT_EQ(parse({"experiment", "--out", "d"}).spec.base_seed, 1234u);
    ::setenv("CATEFUSE_SEED", "12x", 1);
    EXPECT_NE(usage_message({"simulate", "--out", "d"}).find("CATEFUSE_SEED"), std::string::npos);
    ::unsetenv("CATEFUSE_SEED");
    EXPECT_EQ(parse({"simulate", "--out", "d"}).sim.seed, 0u);
}

TEST(ExitCodes, Mapping)
{
    EXPECT_EQ(cli::exit_code_for(ConfigError("x")), 1);
    EXPECT_EQ(cli::exit_code_for(cli::UsageError("x")), 1);
    EXPECT_EQ(cli::exit_code_for(DataError("x")), 2);
    EXPECT_EQ(cli::exit_code_for(PositivityError("x")), 2);
    EXPECT_EQ(cli::exit_code_for(lasso::ConvergenceError("x", {})), 3);
}

TEST(Pipeline, SimulateThenFitRobust)
{
    TempDir dir("catefuse_cli_pipeline");
    const auto sim = run_main({"simulate", "--n-r", "200", "--n-o", "2000", "--seed", "3", "--out", dir.str()});
    ASSERT_EQ(sim.code, 0) << sim.err;
    for (const char* f : {"rct.csv", "os.csv", "truth.json"}) EXPECT_TRUE(fs::exists(dir / f)) << f;

    const auto truth = json_io::truth_from_json(json_io::read_json_file((dir / "truth.json").string()));
    EXPECT_EQ(truth.p, 100);
    const auto rct = read_csv((dir / "rct.csv").string());
    EXPECT_EQ(rct.n(), 200);

    const auto fit = run_main({"fit", "--method", "robust", "--rct", (dir / "rct.csv").string(), "--os",
                               (dir / "os.csv").string(), "--seed", "4", "--out", (dir / "model.json").string()});
    ASSERT_EQ(fit.code, 0) << fit.err;
    const auto j = json_io::read_json_file((dir / "model.json").string());
    EXPECT_EQ(j.at("method"), "robust");
    EXPECT_EQ(j.at("feature_names").size(), 100u);
    const auto model = json_io::cate_model_from_json(j);
    ASSERT_TRUE(model.parts.has_value());
    const LinearModel sum = model.parts->sum();
    EXPECT_LT((sum.coef - model.tau.coef).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(sum.intercept, model.tau.intercept, 1e-12);

    // Same argv and files give the same model file.
    const auto again = run_main({"fit", "--method", "robust", "--rct", (dir / "rct.csv").string(), "--os",
                                 (dir / "os.csv").string(), "--seed", "4", "--out", (dir / "model2.json").string()});
    ASSERT_EQ(again.code, 0);
    EXPECT_EQ(read_text(dir / "model.json"), read_text(dir / "model2.json"));

    const auto no_os = run_main({"fit", "--method", "proposed", "--rct", (dir / "rct.csv").string(), "--out",
                                 (dir / "m.json").string()});
    EXPECT_EQ(no_os.code, 1);
    EXPECT_NE(no_os.err.find("--os"), std::string::npos);
}

TEST(Pipeline, CorruptedCsvIsDataError)
{
    TempDir dir("catefuse_cli_corrupt");
    write_text(dir / "rct.csv", "study,y,a,x1,x2\nr,1.0,1,0.5,0.1\nr,0.3,-1,oops,0.2\n");
    const auto text = run_main({"fit", "--method", "naive", "--rct", (dir / "rct.csv").string(), "--out",
                                (dir / "m.json").string()});
    EXPECT_EQ(text.code, 2);
    EXPECT_NE(text.err.find("row 3"), std::string::npos) << text.err;
    EXPECT_NE(text.err.find("x1"), std::string::npos) << text.err;

    const auto js = run_main({"--json-errors", "fit", "--method", "naive", "--rct", (dir / "rct.csv").string(), "--out",
                              (dir / "m.json").string()});
    EXPECT_EQ(js.code, 2);
    const auto err = nlohmann::json::parse(js.err);
    EXPECT_EQ(err.at("error").at("code"), 2);
    EXPECT_EQ(err.at("error").at("kind"), "data");
    EXPECT_NE(err.at("error").at("message").get<std::string>().find("row 3"), std::string::npos);

    const auto usage = nlohmann::json::parse(run_main({"--json-errors", "simulate"}).err);
    EXPECT_EQ(usage.at("error").at("kind"), "usage");
}

TEST(Experiment, DefaultGridSingleReplicate)
{
    TempDir dir("catefuse_cli_experiment");
    const auto res = run_main({"experiment", "--replicates", "1", "--seed", "11", "--out", dir.str()});
    ASSERT_EQ(res.code, 0) << res.err;
    for (const char* f : {"report.csv", "report.md", "series_by_n_r.csv", "series_by_removal_fraction.csv",
                          "report.json", "spec.json"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    std::ifstream in(dir / "report.csv");
    const auto report = read_report_csv(in);
    EXPECT_EQ(report.rows.size(), 15u);
    for (const auto& row : report.rows) EXPECT_EQ(row.cell.n_o, 10000);

    const auto spec = json_io::experiment_spec_from_json(json_io::read_json_file((dir / "spec.json").string()));
    EXPECT_EQ(spec.base_seed, 11u);
    EXPECT_EQ(spec.replicates, 1);

    const auto rendered = run_main({"report", "--in", (dir / "report.csv").string(), "--format", "markdown", "--out",
                                    (dir / "rendered").string()});
    ASSERT_EQ(rendered.code, 0) << rendered.err;
    EXPECT_EQ(read_text(dir / "rendered" / "report.md"), read_text(dir / "report.md"));
    EXPECT_FALSE(fs::exists(dir / "rendered" / "report.csv"));
}

TEST(Experiment, SpecFileAndDeterminism)
{
    TempDir dir("catefuse_cli_spec");
    write_text(dir / "spec.json", R"({"sim": {"n_o": 1500, "propensity_probe_draws": 2000},
        "n_r": [120], "methods": ["naive", "proposed"], "replicates": 2, "eval_points": 100, "base_seed": 8})");
    for (const char* out : {"a", "b"}) {
        const auto res = run_main({"experiment", "--spec", (dir / "spec.json").string(), "--out", (dir / out).string()});
        ASSERT_EQ(res.code, 0) << res.err;
    }
    EXPECT_EQ(read_text(dir / "a" / "report.csv"), read_text(dir / "b" / "report.csv"));
    std::ifstream in(dir / "a" / "report.csv");
    EXPECT_EQ(read_report_csv(in).rows.size(), 2u);

    write_text(dir / "bad.json", R"({"n_r": [120], "replicate": 2})");
    const auto bad = run_main({"experiment", "--spec", (dir / "bad.json").string(), "--out", (dir / "c").string()});
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("replicate"), std::string::npos);
}

TEST(JsonIo, RoundTrips)
{
    SimConfig cfg;
    cfg.n_r = 77;
    cfg.misspecified = true;
    cfg.misspec_kind = MisspecKind::sine;
    cfg.seed = 5;
    cfg.propensity_probe_draws = 1000;
    const auto back = json_io::sim_config_from_json(json_io::to_json(cfg));
    EXPECT_EQ(back.n_r, 77);
    EXPECT_TRUE(back.misspecified);
    EXPECT_EQ(back.misspec_kind, MisspecKind::sine);
    EXPECT_THROW(json_io::sim_config_from_json(nlohmann::ordered_json{{"nr", 3}}), ConfigError);

    cfg.removed_modifier_fraction = 0.3;
    const auto s = simulate(cfg);
    const auto t = json_io::truth_from_json(json_io::to_json(s.truth, cfg));
    EXPECT_TRUE((t.beta_r[1].array() == s.truth.beta_r[1].array()).all());
    EXPECT_TRUE((t.rct_mean_shift.array() == s.truth.rct_mean_shift.array()).all());
    EXPECT_EQ(t.removed_indices, s.truth.removed_indices);
    EXPECT_EQ(t.quad_terms, s.truth.quad_terms);
    EXPECT_EQ(t.misspec_kind, MisspecKind::sine);
    const Vector x = s.rct.X.row(0).transpose();
    Vector full = Vector::Zero(100);
    full.head(x.size()) = x;
    EXPECT_EQ(true_cate(t, full), true_cate(s.truth, full));

    CateModel m;
    m.method = Method::crossfit;
    m.tau = {Vector::LinSpaced(3, -1.0, 1.0 / 3.0), 0.1};
    m.parts = CateParts{{Vector::Ones(3), 0.0}, {Vector::Zero(3), 0.05}, {Vector::Constant(3, 1e-17), 0.05}};
    m.lambdas = {{"tau_0", 0.25}};
    m.seed = 42;
    const auto mb = json_io::cate_model_from_json(json_io::to_json(m, default_feature_names(3)));
    EXPECT_EQ(mb.method, Method::crossfit);
    EXPECT_TRUE((mb.tau.coef.array() == m.tau.coef.array()).all());
    EXPECT_EQ(mb.parts->correction.coef(0), 1e-17);
    EXPECT_EQ(mb.lambdas, m.lambdas);
    EXPECT_EQ(mb.seed, 42u);
}
