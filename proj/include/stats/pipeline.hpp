#pragma once

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stats/checkpoint.hpp"
#include "stats/config.hpp"
#include "stats/dataio.hpp"
#include "stats/denoiser.hpp"
#include "stats/diffusion.hpp"
#include "stats/evaluation.hpp"
#include "stats/scheduler.hpp"
#include "stats/training.hpp"

namespace stats {

inline constexpr int kForecastFormatVersion = 1;

inline Dataset load_series(const RunConfig& c) {
    if (c.data.source == "synth") {
        Dataset ds{generate_synthetic(c.data.generator, c.data.length, c.data.channels, c.data.seed, c.data.noise), {}};
        for (std::size_t i = 0; i < c.data.channels; ++i) ds.channels.push_back("c" + std::to_string(i));
        return ds;
    }
    return load_dataset(c.data.csv);
}

inline WindowSplit split_series(const RunConfig& c, const Tensor& series) {
    return make_windows(series, c.train.history_length, c.train.horizon, c.train.stride, c.train.split);
}

/// Test-window indices selected for evaluation.
inline std::vector<std::size_t> evaluation_windows(std::size_t test_count, const EvalConfig& e) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < test_count; i += e.window_stride) {
        if (e.max_windows && out.size() == e.max_windows) break;
        out.push_back(i);
    }
    return out;
}

/// Sampled forecasts for a set of test windows, in original scale.
struct ForecastSet {
    std::vector<std::size_t> windows;  // test-window index
    std::vector<std::size_t> starts;   // source row of each window's history
    std::vector<Tensor> samples;       // S x H x d each
    std::size_t failed_chains = 0;
};

inline ForecastSet sample_forecasts(const Checkpoint& ck, const std::vector<SeriesWindow>& test,
                                    const std::vector<std::size_t>& chosen, std::uint64_t seed) {
    const RealizedSchedule schedule = realize_schedule(ck.sts);
    const Conditioner cond = make_conditioner(ck.fgd, schedule);
    RandomSource rng = RandomSource(seed).split(4);
    ForecastSet out;
    for (std::size_t idx : chosen) {
        const SeriesWindow& w = test.at(idx);
        ForecastDistribution fd = ancestral_sample(cond, w.history, ck.config.train.horizon, schedule,
                                                   ck.config.eval.samples, rng, ck.config.eval.sampling);
        out.windows.push_back(idx);
        out.starts.push_back(w.start);
        out.samples.push_back(fd.denormalized());
        out.failed_chains += fd.failed_chains.size();
    }
    return out;
}

inline MetricReport evaluate_forecasts(const ForecastSet& f, const std::vector<SeriesWindow>& test, PointForecast point) {
    std::vector<InstanceMetrics> items;
    std::size_t samples = 0;
    for (std::size_t i = 0; i < f.windows.size(); ++i) {
        const SeriesWindow& w = test.at(f.windows[i]);
        if (w.start != f.starts[i])
            throw InputError("evaluate: forecast for window " + std::to_string(f.windows[i]) + " starts at row " +
                             std::to_string(f.starts[i]) + " but the test window starts at " + std::to_string(w.start));
        items.push_back(evaluate_instance(f.samples[i], w.target, point));
        samples = f.samples[i].shape()[0];
    }
    return aggregate(items, samples);
}

inline MetricReport persistence_report(const std::vector<SeriesWindow>& test, const std::vector<std::size_t>& chosen) {
    std::vector<InstanceMetrics> items;
    for (std::size_t idx : chosen) {
        const SeriesWindow& w = test.at(idx);
        items.push_back(evaluate_instance(persistence_forecast(w.history, w.target.rows()), w.target));
    }
    return aggregate(items, 1);
}

// --- Forecast export: one CSV per window plus an index. ---

inline void write_forecast_csv(std::ostream& os, const Tensor& samples) {
    os << "sample,step,channel,value\n";
    const std::size_t s = samples.shape()[0], h = samples.shape()[1], d = samples.shape()[2];
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t t = 0; t < h; ++t)
            for (std::size_t c = 0; c < d; ++c)
                os << i << ',' << t << ',' << c << ',' << io::format_double(samples(i, t, c)) << '\n';
}

inline Tensor read_forecast_csv(std::istream& in, const std::string& label) {
    std::string line;
    if (!std::getline(in, line) || io::trim(line) != "sample,step,channel,value")
        throw InputError(label + ": missing 'sample,step,channel,value' header");
    struct Row {
        std::size_t s, t, c;
        double v;
    };
    std::vector<Row> rows;
    std::size_t ms = 0, mt = 0, mc = 0, line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        const auto f = io::split(line, ',');
        double s = 0, t = 0, c = 0, v = 0;
        if (f.size() != 4 || !io::parse_double(f[0], s) || !io::parse_double(f[1], t) || !io::parse_double(f[2], c) ||
            !io::parse_double(f[3], v) || s < 0 || t < 0 || c < 0)
            throw InputError(label + ": malformed line " + std::to_string(line_no));
        Row r{static_cast<std::size_t>(s), static_cast<std::size_t>(t), static_cast<std::size_t>(c), v};
        ms = std::max(ms, r.s + 1);
        mt = std::max(mt, r.t + 1);
        mc = std::max(mc, r.c + 1);
        rows.push_back(r);
    }
    if (rows.size() != ms * mt * mc) throw InputError(label + ": incomplete sample grid");
    Tensor out({ms, mt, mc});
    for (const auto& r : rows) out(r.s, r.t, r.c) = r.v;
    return out;
}

inline std::string forecast_file_name(std::size_t window) {
    std::string n = std::to_string(window);
    return "window_" + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n + ".csv";
}

/// Writes `<dir>/index.csv` (`window,start,file`) and one CSV per window; returns file names.
inline std::vector<std::string> write_forecasts(const std::string& dir, const ForecastSet& f) {
    std::vector<std::string> files;
    std::ofstream index(dir + "/index.csv");
    if (!index) throw InputError("forecasts: cannot write into '" + dir + "'");
    index << "window,start,file\n";
    for (std::size_t i = 0; i < f.windows.size(); ++i) {
        const std::string name = forecast_file_name(f.windows[i]);
        std::ofstream out(dir + "/" + name);
        write_forecast_csv(out, f.samples[i]);
        index << f.windows[i] << ',' << f.starts[i] << ',' << name << '\n';
        files.push_back(name);
    }
    return files;
}

inline ForecastSet read_forecasts(const std::string& dir) {
    std::ifstream index(dir + "/index.csv");
    if (!index) throw InputError("forecasts: missing '" + dir + "/index.csv'");
    std::string line;
    std::getline(index, line);
    if (io::trim(line) != "window,start,file") throw InputError("forecasts: bad index header");
    ForecastSet f;
    while (std::getline(index, line)) {
        if (io::trim(line).empty()) continue;
        const auto parts = io::split(line, ',');
        double w = 0, s = 0;
        if (parts.size() != 3 || !io::parse_double(parts[0], w) || !io::parse_double(parts[1], s))
            throw InputError("forecasts: malformed index line '" + line + "'");
        std::ifstream in(dir + "/" + parts[2]);
        if (!in) throw InputError("forecasts: missing file '" + parts[2] + "'");
        f.windows.push_back(static_cast<std::size_t>(w));
        f.starts.push_back(static_cast<std::size_t>(s));
        f.samples.push_back(read_forecast_csv(in, parts[2]));
    }
    if (f.windows.empty()) throw InputError("forecasts: index lists no windows");
    return f;
}

/// Batch-mean spectral flatness of forward-noised, instance-normalised history
/// windows at t = 0..T, using the first `max_windows` windows.
inline std::vector<double> history_flatness_trajectory(const std::vector<SeriesWindow>& windows,
                                                       std::size_t max_windows, const RealizedSchedule& schedule,
                                                       RandomSource& rng) {
    if (windows.empty()) throw ContractViolation("flatness trajectory: no windows");
    const std::size_t n = max_windows ? std::min(max_windows, windows.size()) : windows.size();
    const std::vector<SeriesWindow> picked(windows.begin(), windows.begin() + static_cast<std::ptrdiff_t>(n));
    const WindowBatch batch = make_batch(normalize_all(picked), true);
    return flatness_trajectory(batch.history, batch.channels, schedule, rng);
}

// --- End-to-end run used by the CLI and the acceptance suite. ---

struct ExperimentResult {
    TrainResult train;
    Checkpoint checkpoint;
    ForecastSet forecasts;
    MetricReport report;
    MetricReport persistence;
};

inline ExperimentResult run_experiment(const RunConfig& config_in, const Tensor& series) {
    RunConfig config = config_in;
    config.validate();
    const WindowSplit split = split_series(config, series);
    ExperimentResult r;
    r.train = train(config.train, split);
    r.checkpoint = Checkpoint{config, r.train.sts, r.train.fgd};
    const auto chosen = evaluation_windows(split.test.size(), config.eval);
    r.forecasts = sample_forecasts(r.checkpoint, split.test, chosen, config.train.seed);
    r.report = evaluate_forecasts(r.forecasts, split.test, config.eval.point);
    r.persistence = persistence_report(split.test, chosen);
    return r;
}

inline std::string report_string(const MetricReport& r) {
    std::ostringstream os;
    write_report(os, r);
    return os.str();
}

}  // namespace stats
