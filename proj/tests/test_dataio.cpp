#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "stats/checkpoint.hpp"
#include "stats/config.hpp"
#include "stats/dataio.hpp"
#include "stats/pipeline.hpp"
#include "test_support.hpp"

using namespace stats;
using stats::testkit::random_tensor;
namespace fs = std::filesystem;

namespace {

Dataset read_text(const std::string& text, DatasetSpec spec = {}) {
    std::istringstream in(text);
    return read_dataset(in, spec);
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("stats_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

RunConfig tiny_run() {
    RunConfig c;
    c.data.length = 260;
    c.train.history_length = 16;
    c.train.horizon = 8;
    c.train.steps = 4;
    c.train.batch_size = 16;
    c.train.epochs = 3;
    c.train.alternation_rounds = 1;
    c.train.stride = 2;
    c.train.schedule.embed_dim = 8;
    c.train.schedule.hidden = 8;
    c.train.fgd.hidden = 12;
    c.train.fgd.gate_hidden = 8;
    c.train.fgd.embed_dim = 8;
    c.eval.samples = 6;
    c.eval.window_stride = 5;
    c.validate();
    return c;
}

}  // namespace

TEST(ReadDataset, HeaderAndShape) {
    const Dataset ds = read_text("a,b\n1,2\n3,4\n5,6\n");
    EXPECT_EQ(ds.values.shape(), (Shape{3, 2}));
    EXPECT_EQ(ds.channels, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(ds.values(2, 1), 6.0);
}

TEST(ReadDataset, BlankTrailingLineIgnored) {
    const Dataset a = read_text("a,b\n1,2\n3,4\n"), b = read_text("a,b\n1,2\n3,4\n\n  \n");
    EXPECT_EQ(a.values, b.values);
}

TEST(ReadDataset, TimestampColumnCheckedThenDropped) {
    DatasetSpec spec;
    spec.timestamp_column = "date";
    const Dataset ds = read_text("date,x\n2020-01-01 00:00,1\n2020-01-01 01:00,2\n", spec);
    EXPECT_EQ(ds.values.shape(), (Shape{2, 1}));
    EXPECT_EQ(ds.channels, (std::vector<std::string>{"x"}));
    const std::string err = error_of([&] { read_text("date,x\n2,1\n10,2\n3,3\n", spec); });
    EXPECT_NE(err.find("not strictly increasing at line 4"), std::string::npos) << err;
    // Numeric stamps order numerically, not lexicographically.
    EXPECT_NO_THROW(read_text("date,x\n9,1\n10,2\n", spec));
}

TEST(ReadDataset, UnparsableCellNamesLocation) {
    const std::string err = error_of([] { read_text("a,b\n1,2\n3,oops\n"); });
    EXPECT_NE(err.find("line 3"), std::string::npos) << err;
    EXPECT_NE(err.find("column 'b'"), std::string::npos) << err;
    EXPECT_THROW(read_text("a,b\n1,nan\n"), InputError);
    EXPECT_THROW(read_text("a,b\n1\n"), InputError);
}

TEST(ReadDataset, ChannelSelectionAndDelimiter) {
    DatasetSpec spec;
    spec.delimiter = ';';
    spec.channels = {"c", "a"};
    const Dataset ds = read_text("a;b;c\n1;2;3\n", spec);
    EXPECT_EQ(ds.values, Tensor({1, 2}, {3.0, 1.0}));
    spec.channels = {"zzz"};
    EXPECT_THROW(read_text("a;b;c\n1;2;3\n", spec), InputError);
}

TEST(WriteCsv, RoundTripIsExact) {
    RandomSource rng(1);
    Tensor m = random_tensor(rng, {25, 3}, 1e3);
    m(0, 0) = 1e-300;
    m(1, 1) = -0.1;
    std::ostringstream os;
    write_csv(os, m, {"x", "y", "z"});
    EXPECT_EQ(read_text(os.str()).values, m);
}

TEST(Synthetic, DeterministicAndUnknownNameListed) {
    EXPECT_EQ(generate_synthetic("sin2", 50, 2, 1), generate_synthetic("sin2", 50, 2, 1));
    EXPECT_NE(generate_synthetic("sin2", 50, 2, 1), generate_synthetic("sin2", 50, 2, 2));
    EXPECT_EQ(generate_synthetic("arma", 50, 2, 1), generate_synthetic("arma", 50, 2, 1));
    const std::string err = error_of([] { generate_synthetic("square", 10, 1, 1); });
    EXPECT_NE(err.find("sin2, arma"), std::string::npos) << err;
}

TEST(Synthetic, NoiselessSin2IsExactlyPeriodicMixture) {
    const Tensor x = generate_synthetic("sin2", 300, 2, 4, 0.0);
    RandomSource rng(4);
    double phi[2], psi[2];
    for (int c = 0; c < 2; ++c) {
        phi[c] = 2 * std::numbers::pi * rng.uniform();
        psi[c] = 2 * std::numbers::pi * rng.uniform();
    }
    for (std::size_t t = 0; t < 300; ++t)
        for (std::size_t c = 0; c < 2; ++c) {
            const double tt = static_cast<double>(t);
            const double expected = std::sin(2 * std::numbers::pi * tt / 24 + phi[c]) +
                                    0.25 * std::sin(2 * std::numbers::pi * tt / (5 * std::sqrt(3.0)) + psi[c]);
            EXPECT_EQ(x(t, c), expected);
        }
}

// Lag-24 autocorrelation, N = 2000, seed 1; values from tests/oracle/oracle.py.
TEST(Synthetic, Sin2AutocorrelationAtDominantPeriod) {
    const Tensor x = generate_synthetic("sin2", 2000, 2, 1);
    const double expected[] = {0.9215591091453356, 0.9209019671823218};
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0;
        for (std::size_t t = 0; t < 2000; ++t) mean += x(t, c);
        mean /= 2000;
        double num = 0, den = 0;
        for (std::size_t t = 0; t < 2000; ++t) {
            den += (x(t, c) - mean) * (x(t, c) - mean);
            if (t + 24 < 2000) num += (x(t, c) - mean) * (x(t + 24, c) - mean);
        }
        EXPECT_NEAR(num / den, expected[c], 1e-12);
        EXPECT_GE(num / den, 0.9);
    }
}

TEST(Config, DefaultsRoundTripThroughText) {
    RunConfig c;
    c.train.lr = 0.1 + 0.2;
    c.train.weights.prog = 1.0 / 3.0;
    c.eval.point = PointForecast::median;
    c.train.schedule.base = ScheduleTemplate::cosine;
    c.data.csv.delimiter = '\t';
    std::ostringstream os;
    write_config(os, c);
    std::istringstream in(os.str());
    const RunConfig back = parse_config(in);
    EXPECT_EQ(config_entries(back), config_entries(c));
    EXPECT_EQ(back.train.lr, c.train.lr);
    EXPECT_EQ(back.data.csv.delimiter, '\t');
}

TEST(Config, SectionsCommentsAndErrors) {
    std::istringstream ok("# run\n[train]\nseed = 9   # inline\n[schedule]\nlambda_smooth = 2.5\n");
    const RunConfig c = parse_config(ok);
    EXPECT_EQ(c.train.seed, 9u);
    EXPECT_EQ(c.train.weights.smooth, 2.5);

    std::istringstream unknown("[train]\nsed = 9\n");
    EXPECT_NE(error_of([&] { parse_config(unknown); }).find("line 2: config: unknown key 'train.sed'"),
              std::string::npos);
    std::istringstream dup("[train]\nseed = 1\nseed = 2\n");
    EXPECT_NE(error_of([&] { parse_config(dup); }).find("duplicate key"), std::string::npos);
    std::istringstream bad("[train]\nlr = fast\n");
    EXPECT_THROW(parse_config(bad), InputError);
    std::istringstream invalid("[train]\nepochs = 2\nalternation_rounds = 3\n");
    EXPECT_THROW(parse_config(invalid), ContractViolation);
}

TEST(Config, EveryFieldIsDocumented) {
    for (const auto& f : config_fields()) EXPECT_FALSE(f.doc.empty()) << f.key;
}

TEST(Checkpoint, RoundTripIsBitExact) {
    RunConfig c = tiny_run();
    RandomSource rng(3);
    Checkpoint ck{c, ScheduleParams::random(c.train.schedule, rng), FgdParams::init(c.train.fgd, rng)};
    const std::string text = checkpoint_string(ck);
    std::istringstream in(text);
    const Checkpoint back = read_checkpoint(in);
    EXPECT_EQ(checkpoint_string(back), text);
    EXPECT_EQ(back.sts.w1, ck.sts.w1);
    EXPECT_EQ(back.fgd.head_w, ck.fgd.head_w);
}

TEST(Checkpoint, LayoutMismatchRejected) {
    RunConfig c = tiny_run();
    RandomSource rng(4);
    Checkpoint ck{c, ScheduleParams::init(c.train.schedule, rng), FgdParams::init(c.train.fgd, rng)};
    std::string text = checkpoint_string(ck);
    const auto pos = text.find("hidden = 12");
    ASSERT_NE(pos, std::string::npos);
    text.replace(pos, 11, "hidden = 13");
    std::istringstream in(text);
    EXPECT_THROW(read_checkpoint(in), InputError);
    std::istringstream wrong_version("stats-checkpoint 99\n");
    EXPECT_THROW(read_checkpoint(wrong_version), InputError);
}

TEST(Forecasts, ExportRoundTripAndAlignmentGuard) {
    RandomSource rng(5);
    ForecastSet f;
    f.windows = {0, 3};
    f.starts = {10, 16};
    f.samples = {random_tensor(rng, {4, 3, 2}), random_tensor(rng, {4, 3, 2})};
    const fs::path dir = scratch_dir("forecasts");
    const auto files = write_forecasts(dir.string(), f);
    EXPECT_EQ(files, (std::vector<std::string>{"window_00000.csv", "window_00003.csv"}));
    const ForecastSet back = read_forecasts(dir.string());
    EXPECT_EQ(back.windows, f.windows);
    EXPECT_EQ(back.starts, f.starts);
    EXPECT_EQ(back.samples[1], f.samples[1]);

    std::vector<SeriesWindow> test(4);
    for (std::size_t i = 0; i < 4; ++i) test[i] = {Tensor({5, 2}), random_tensor(rng, {3, 2}), 10 + 2 * i};
    EXPECT_NO_THROW(evaluate_forecasts(back, test, PointForecast::mean));
    ForecastSet shifted = back;
    shifted.starts[1] = 17;
    const std::string err = error_of([&] { evaluate_forecasts(shifted, test, PointForecast::mean); });
    EXPECT_NE(err.find("window 3 starts at row 17"), std::string::npos) << err;
    fs::remove_all(dir);
}

TEST(Forecasts, MalformedFilesRejected) {
    std::istringstream no_header("1,2,3,4\n");
    EXPECT_THROW(read_forecast_csv(no_header, "f"), InputError);
    std::istringstream gap("sample,step,channel,value\n0,0,0,1\n1,1,0,2\n");
    EXPECT_THROW(read_forecast_csv(gap, "f"), InputError);
    EXPECT_THROW(read_forecasts((fs::temp_directory_path() / "stats_test_missing_dir").string()), InputError);
}

TEST(EvaluationWindows, StrideAndCap) {
    EvalConfig e;
    e.window_stride = 3;
    EXPECT_EQ(evaluation_windows(10, e), (std::vector<std::size_t>{0, 3, 6, 9}));
    e.max_windows = 2;
    EXPECT_EQ(evaluation_windows(10, e), (std::vector<std::size_t>{0, 3}));
}

TEST(Pipeline, MetricsAreReportedInOriginalScale) {
    // Scaling the raw series by k scales CRPS and MAE by k: samples are
    // denormalised before scoring.
    const RunConfig c = tiny_run();
    const Tensor series = generate_synthetic("sin2", c.data.length, 2, 7);
    Tensor scaled = series;
    for (double& v : scaled.values()) v = 1000.0 * v + 50.0;
    const ExperimentResult a = run_experiment(c, series), b = run_experiment(c, scaled);
    EXPECT_NEAR(b.report.crps / a.report.crps, 1000.0, 1e-3);
    EXPECT_NEAR(b.report.mae / a.report.mae, 1000.0, 1e-3);
    EXPECT_NEAR(b.persistence.crps / a.persistence.crps, 1000.0, 1e-6);
}

TEST(Pipeline, SeedsDifferButEachIsReproducible) {
    RunConfig c = tiny_run();
    const Tensor series = generate_synthetic("sin2", c.data.length, 2, 7);
    const ExperimentResult a = run_experiment(c, series), a2 = run_experiment(c, series);
    EXPECT_EQ(report_string(a.report), report_string(a2.report));
    EXPECT_EQ(checkpoint_string(a.checkpoint), checkpoint_string(a2.checkpoint));
    c.train.seed = 2;
    const ExperimentResult b = run_experiment(c, series);
    EXPECT_NE(report_string(a.report), report_string(b.report));
}
