#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <catefuse/data.hpp>

using namespace catefuse;

namespace {

StudyDataset parse(const std::string& text, LoadReport* report = nullptr)
{
    std::istringstream in(text);
    return parse_csv(in, report);
}

std::string error_of(const std::string& text)
{
    try {
        parse(text);
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

StudyDataset random_dataset(Index n, Index p, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::bernoulli_distribution coin;
    StudyDataset ds;
    ds.X.resize(n, p);
    ds.A.resize(n);
    ds.Y.resize(n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < p; ++j) ds.X(i, j) = z(rng) * std::pow(10.0, static_cast<double>(j % 7) - 3.0);
        ds.A(i) = coin(rng) ? 1.0 : -1.0;
        ds.Y(i) = z(rng) / 3.0;
    }
    ds.feature_names = default_feature_names(p);
    return ds;
}

StudyDataset with_arms(const std::vector<double>& a)
{
    StudyDataset ds;
    const Index n = static_cast<Index>(a.size());
    ds.X = Matrix::Zero(n, 1);
    ds.A = Eigen::Map<const Vector>(a.data(), n);
    ds.Y = Vector::Zero(n);
    ds.feature_names = {"x1"};
    return ds;
}

} // namespace

TEST(ReadCsv, SingleRow)
{
    LoadReport report;
    const auto ds = parse("study,y,a,x1\nr,2.0,1,0.5\n", &report);
    EXPECT_EQ(ds.study, Study::rct);
    EXPECT_EQ(ds.n(), 1);
    EXPECT_EQ(ds.p(), 1);
    EXPECT_EQ(ds.A(0), 1.0);
    EXPECT_EQ(ds.Y(0), 2.0);
    EXPECT_EQ(ds.X(0, 0), 0.5);
    EXPECT_EQ(ds.feature_names, std::vector<std::string>{"x1"});
    EXPECT_EQ(report.rows, 1);
    EXPECT_FALSE(report.zero_one_coding);
}

TEST(ReadCsv, ZeroOneCodingIsMappedAndReported)
{
    LoadReport report;
    const auto ds = parse("study,y,a,x1,x2\no,1,0,1,2\no,2,1,3,4\no,3,0,5,6\n", &report);
    EXPECT_EQ(ds.study, Study::os);
    EXPECT_TRUE(report.zero_one_coding);
    EXPECT_EQ(ds.A(0), -1.0);
    EXPECT_EQ(ds.A(1), 1.0);
    EXPECT_EQ(ds.A(2), -1.0);
}

TEST(ReadCsv, ColumnOrderIsFree)
{
    const auto ds = parse("x2,a,y,study,x1\n7,-1,0.25,r,8\n");
    EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"x2", "x1"}));
    EXPECT_EQ(ds.X(0, 0), 7.0);
    EXPECT_EQ(ds.X(0, 1), 8.0);
    EXPECT_EQ(ds.A(0), -1.0);
    EXPECT_EQ(ds.Y(0), 0.25);
}

TEST(ReadCsv, TreatmentOutsideDomainNamesRow)
{
    const auto msg = error_of("study,y,a,x1\nr,1,1,0\nr,1,2,0\n");
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'a'"), std::string::npos) << msg;
    EXPECT_NE(error_of("study,y,a,x1\nr,1,-1,0\nr,1,0,0\n").find("mixes"), std::string::npos);
}

TEST(ReadCsv, Errors)
{
    EXPECT_NE(error_of("").find("empty"), std::string::npos);
    EXPECT_NE(error_of("study,y,a,x1\n").find("no data rows"), std::string::npos);
    EXPECT_NE(error_of("study,a,x1\nr,1,0\n").find("missing column 'y'"), std::string::npos);
    EXPECT_NE(error_of("y,a,x1\n1,1,0\n").find("missing column 'study'"), std::string::npos);
    EXPECT_NE(error_of("study,y,x1\nr,1,0\n").find("missing column 'a'"), std::string::npos);
    EXPECT_NE(error_of("study,y,a\nr,1,1\n").find("no covariate"), std::string::npos);

    const auto bad = error_of("study,y,a,x1,x2\nr,1,1,0,0\nr,1,1,0,abc\n");
    EXPECT_NE(bad.find("row 3"), std::string::npos) << bad;
    EXPECT_NE(bad.find("x2"), std::string::npos) << bad;
    EXPECT_NE(error_of("study,y,a,x1\nr,,1,0\n").find("row 2"), std::string::npos);
    EXPECT_NE(error_of("study,y,a,x1\nr,nan,1,0\n").find("row 2"), std::string::npos);
    EXPECT_NE(error_of("study,y,a,x1\nr,1,1\n").find("row 2"), std::string::npos);
    EXPECT_NE(error_of("study,y,a,x1\nq,1,1,0\n").find("study"), std::string::npos);
    EXPECT_NE(error_of("study,y,a,x1\nr,1,1,0\no,1,1,0\n").find("mixed"), std::string::npos);
    EXPECT_THROW(read_csv("/nonexistent/dir/file.csv"), DataError);
}

TEST(WriteCsv, RoundTripIsExact)
{
    auto ds = random_dataset(50, 9, 3);
    ds.study = Study::os;
    std::ostringstream out;
    format_csv(ds, out);
    const auto back = parse(out.str());
    EXPECT_EQ(back.study, Study::os);
    EXPECT_EQ(back.feature_names, ds.feature_names);
    EXPECT_TRUE((back.X.array() == ds.X.array()).all());
    EXPECT_TRUE((back.Y.array() == ds.Y.array()).all());
    EXPECT_TRUE((back.A.array() == ds.A.array()).all());

    std::ostringstream again;
    format_csv(back, again);
    EXPECT_EQ(again.str(), out.str());
}

TEST(WriteCsv, LargeFileThroughDisk)
{
    const auto ds = random_dataset(10000, 5, 4);
    const auto path = std::filesystem::temp_directory_path() / "catefuse_test_large.csv";
    write_csv(ds, path.string());
    const auto back = read_csv(path.string());
    std::filesystem::remove(path);
    ASSERT_EQ(back.n(), 10000);
    EXPECT_LE((back.X - ds.X).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((back.Y - ds.Y).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE((back.A.array() == ds.A.array()).all());
}

TEST(WriteCsv, RejectsEmptyFeatureSet)
{
    StudyDataset ds;
    ds.X.resize(2, 0);
    ds.A = Vector::Ones(2);
    ds.Y = Vector::Zero(2);
    std::ostringstream out;
    EXPECT_THROW(format_csv(ds, out), DataError);
}

TEST(StudyDataset, ValidateAndColumnOps)
{
    auto ds = random_dataset(6, 4, 1);
    EXPECT_NO_THROW(ds.validate());
    const auto dropped = ds.drop_columns({2, 0});
    EXPECT_EQ(dropped.feature_names, (std::vector<std::string>{"x2", "x4"}));
    EXPECT_TRUE((dropped.X.col(0).array() == ds.X.col(1).array()).all());
    EXPECT_THROW(ds.drop_columns({4}), DataError);

    const auto sub = ds.subset({5, 1});
    EXPECT_EQ(sub.n(), 2);
    EXPECT_EQ(sub.Y(0), ds.Y(5));
    ds.A(3) = 0.0;
    EXPECT_THROW(ds.validate(), DataError);
}

TEST(PropensitySpec, Validation)
{
    EXPECT_THROW(PropensitySpec::constant_rate(0.0), PositivityError);
    EXPECT_THROW(PropensitySpec::constant_rate(1.0), PositivityError);
    const auto c = PropensitySpec::constant_rate(0.3);
    EXPECT_DOUBLE_EQ(c(Vector::Zero(2)), 0.3);
    const auto l = PropensitySpec::logistic_model(Vector::Ones(2), 0.0);
    EXPECT_DOUBLE_EQ(l(Vector::Zero(2)), 0.5);
    const double far = l(Vector::Constant(2, 400.0));
    EXPECT_GT(far, 0.0);
    EXPECT_LT(far, 1.0);
    EXPECT_GT(l(Vector::Constant(2, -400.0)), 0.0);
}

TEST(SplitFolds, TenRowsFiveFoldsStratified)
{
    const auto ds = with_arms({1, 1, 1, 1, 1, -1, -1, -1, -1, -1});
    const auto folds = split_folds(ds, 5, 42);
    ASSERT_EQ(folds.size(), 5u);
    for (const auto& f : folds) {
        ASSERT_EQ(f.size(), 2u);
        EXPECT_EQ(ds.A(f[0]) + ds.A(f[1]), 0.0);
    }
}

TEST(SplitFolds, PartitionLaws)
{
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto ds = random_dataset(103, 1, seed);
        const auto folds = split_folds(ds, 7, seed);
        std::set<Index> seen;
        std::size_t total = 0, smallest = 1000, largest = 0;
        const double share = static_cast<double>(ds.arm_rows(1).size()) / 103.0;
        for (const auto& f : folds) {
            total += f.size();
            smallest = std::min(smallest, f.size());
            largest = std::max(largest, f.size());
            seen.insert(f.begin(), f.end());
            EXPECT_TRUE(std::is_sorted(f.begin(), f.end()));
            double treated = 0.0;
            for (auto i : f) treated += ds.A(i) > 0 ? 1.0 : 0.0;
            EXPECT_LE(std::abs(treated - share * static_cast<double>(f.size())), 1.0 + 1e-12);
        }
        EXPECT_EQ(total, 103u);
        EXPECT_EQ(seen.size(), 103u);
        EXPECT_EQ(*seen.begin(), 0);
        EXPECT_EQ(*seen.rbegin(), 102);
        EXPECT_LE(largest - smallest, 1u);
    }
}

TEST(SplitFolds, SeedControlsPermutation)
{
    const auto ds = random_dataset(40, 1, 8);
    EXPECT_EQ(split_folds(ds, 4, 17), split_folds(ds, 4, 17));
    EXPECT_NE(split_folds(ds, 4, 17), split_folds(ds, 4, 18));
}

TEST(SplitFolds, Errors)
{
    const auto ds = with_arms({1, 1, 1, -1, -1});
    try {
        split_folds(ds, 3, 0);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("arm too small to stratify"), std::string::npos);
    }
    EXPECT_THROW(split_folds(ds, 1, 0), ConfigError);
    EXPECT_THROW(split_folds(ds, 6, 0), ConfigError);
}
