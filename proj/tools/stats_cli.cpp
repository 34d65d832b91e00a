// Command-line front end: train, sample, evaluate, analyze-schedule, synth.
// Every run writes manifest.json plus the effective config into --out.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "stats/checkpoint.hpp"
#include "stats/config.hpp"
#include "stats/dataio.hpp"
#include "stats/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stats;

namespace {

constexpr int kManifestVersion = 1;
constexpr int kConfigVersion = 1;
constexpr int kReportVersion = 1;
constexpr int kScheduleVersion = 1;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonOptions& o) {
    sub->add_option("--config", o.config, "Config file (key = value with [sections])");
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--set", o.overrides, "Config override, section.key=value (repeatable)");
}

void apply_overrides(RunConfig& c, const std::vector<std::string>& overrides, bool eval_only) {
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw InputError("--set expects section.key=value, got '" + kv + "'");
        const std::string key(io::trim(std::string_view(kv).substr(0, eq)));
        const std::string value(io::trim(std::string_view(kv).substr(eq + 1)));
        if (eval_only && key.rfind("eval.", 0) != 0)
            throw InputError("--set " + key + ": only eval.* keys can change once a checkpoint exists");
        set_config_value(c, key, value);
    }
}

RunConfig fresh_config(const CommonOptions& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    apply_overrides(c, o.overrides, false);
    if (o.seed) c.train.seed = *o.seed;
    c.validate();
    return c;
}

/// Tracks the files a run writes and emits the manifest last.
class RunOutput {
public:
    RunOutput(std::string command, const std::string& dir, std::vector<std::string> argv)
        : command_(std::move(command)), dir_(dir), argv_(std::move(argv)) {
        fs::create_directories(dir_);
    }

    fs::path path(const std::string& name) const { return dir_ / name; }

    std::ofstream open(const std::string& name) {
        fs::create_directories((dir_ / name).parent_path());
        std::ofstream out(dir_ / name);
        if (!out) throw InputError("cannot write '" + (dir_ / name).string() + "'");
        files_.push_back(name);
        return out;
    }

    void record(const std::string& name) { files_.push_back(name); }

    void finish(const RunConfig& c, json extra = json::object()) {
        {
            std::ofstream cfg = open("config.cfg");
            write_config(cfg, c);
        }
        json m;
        m["tool"] = "stats_cli";
        m["command"] = command_;
        m["argv"] = argv_;
        m["formats"] = {{"manifest", kManifestVersion},
                        {"config", kConfigVersion},
                        {"checkpoint", kCheckpointVersion},
                        {"forecast", kForecastFormatVersion},
                        {"report", kReportVersion},
                        {"schedule", kScheduleVersion}};
        m["seeds"] = {{"train", c.train.seed}, {"data", c.data.seed}};
        json cfg = json::object();
        for (const auto& [k, v] : config_entries(c)) cfg[k] = v;
        m["config"] = cfg;
        m["files"] = files_;
        for (auto& [k, v] : extra.items()) m[k] = v;
        std::ofstream out(dir_ / "manifest.json");
        if (!out) throw InputError("cannot write manifest.json");
        out << m.dump(2) << '\n';
    }

private:
    std::string command_;
    fs::path dir_;
    std::vector<std::string> argv_;
    std::vector<std::string> files_;
};

void write_train_log(std::ostream& os, const std::vector<EpochLog>& log) {
    os << "stage,round,epoch,train_loss,val_loss\n";
    for (const auto& e : log)
        os << e.stage << ',' << e.round << ',' << e.epoch << ',' << io::format_double(e.train_loss) << ','
           << (std::isnan(e.val_loss) ? std::string() : io::format_double(e.val_loss)) << '\n';
}

int cmd_train(const CommonOptions& o, RunOutput& out) {
    const RunConfig c = fresh_config(o);
    const Tensor series = load_series(c).values;
    const WindowSplit split = split_series(c, series);
    const TrainResult r = train(c.train, split);
    {
        std::ofstream f = out.open("checkpoint.txt");
        write_checkpoint(f, Checkpoint{c, r.sts, r.fgd});
    }
    {
        std::ofstream f = out.open("schedule.txt");
        write_schedule(f, r.schedule);
    }
    {
        std::ofstream f = out.open("train_log.csv");
        write_train_log(f, r.log);
    }
    {
        std::ofstream f = out.open("schedule_rounds.csv");
        f << "round,t,beta\n";
        for (std::size_t k = 0; k < r.snapshots.size(); ++k)
            for (std::size_t t = 1; t <= r.snapshots[k].steps(); ++t)
                f << k + 1 << ',' << t << ',' << io::format_double(r.snapshots[k].beta_at(t)) << '\n';
    }
    out.finish(c, {{"best_epoch", r.best_epoch},
                   {"best_val_loss", r.best_val},
                   {"windows", {{"train", split.train.size()}, {"val", split.val.size()}, {"test", split.test.size()}}}});
    std::cout << "trained " << c.train.epochs << " epochs; best validation loss " << r.best_val << " at epoch "
              << r.best_epoch << "\n";
    return 0;
}

Checkpoint checkpoint_for(const std::string& path, const CommonOptions& o) {
    Checkpoint ck = load_checkpoint(path);
    apply_overrides(ck.config, o.overrides, true);
    if (o.seed) ck.config.train.seed = *o.seed;
    ck.config.validate();
    return ck;
}

ForecastSet sample_into(const Checkpoint& ck, RunOutput& out) {
    const Tensor series = load_series(ck.config).values;
    const WindowSplit split = split_series(ck.config, series);
    const auto chosen = evaluation_windows(split.test.size(), ck.config.eval);
    ForecastSet f = sample_forecasts(ck, split.test, chosen, ck.config.train.seed);
    fs::create_directories(out.path("forecasts"));
    for (const auto& name : write_forecasts(out.path("forecasts").string(), f)) out.record("forecasts/" + name);
    out.record("forecasts/index.csv");
    return f;
}

int cmd_sample(const CommonOptions& o, const std::string& checkpoint, RunOutput& out) {
    const Checkpoint ck = checkpoint_for(checkpoint, o);
    const ForecastSet f = sample_into(ck, out);
    out.finish(ck.config, {{"checkpoint", checkpoint}, {"failed_chains", f.failed_chains}});
    std::cout << "sampled " << f.windows.size() << " windows x " << ck.config.eval.samples << " samples\n";
    return 0;
}

int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint, const std::string& forecasts,
                 RunOutput& out) {
    if (checkpoint.empty() && forecasts.empty())
        throw InputError("evaluate: one of --checkpoint or --forecasts is required");
    RunConfig c;
    std::optional<Checkpoint> ck;
    if (!checkpoint.empty()) {
        ck = checkpoint_for(checkpoint, o);
        c = ck->config;
    } else {
        if (o.config.empty())
            throw InputError("evaluate: --forecasts needs --config or --checkpoint to rebuild the test windows");
        c = fresh_config(o);
    }
    const ForecastSet f = forecasts.empty() ? sample_into(*ck, out) : read_forecasts(forecasts);
    const Tensor series = load_series(c).values;
    const WindowSplit split = split_series(c, series);
    const MetricReport report = evaluate_forecasts(f, split.test, c.eval.point);
    const MetricReport base = persistence_report(split.test, f.windows);
    {
        std::ofstream m = out.open("metrics.txt");
        write_report(m, report);
    }
    {
        std::ofstream m = out.open("persistence.txt");
        write_report(m, base);
    }
    {
        std::ofstream h = out.open("mse_histogram.csv");
        write_histogram(h, mse_histogram(report.per_instance_mse, c.eval.histogram_bins));
    }
    {
        std::ofstream v = out.open("mse_values.csv");
        v << "window,start,mse\n";
        for (std::size_t i = 0; i < f.windows.size(); ++i)
            v << f.windows[i] << ',' << f.starts[i] << ',' << io::format_double(report.per_instance_mse[i]) << '\n';
    }
    out.finish(c, {{"checkpoint", checkpoint}, {"forecasts", forecasts}});
    std::cout << "crps " << report.crps << "  mae " << report.mae << "  mse " << report.mse << "  (persistence crps "
              << base.crps << ")\n";
    return 0;
}

int cmd_analyze(const CommonOptions& o, const std::string& checkpoint, std::size_t windows, RunOutput& out) {
    RunConfig c;
    ScheduleParams sts;
    if (!checkpoint.empty()) {
        Checkpoint ck = checkpoint_for(checkpoint, o);
        c = ck.config;
        sts = ck.sts;
    } else {
        c = fresh_config(o);
        RandomSource scratch(0);
        sts = ScheduleParams::init(c.train.schedule, scratch);
    }
    const RealizedSchedule schedule = realize_schedule(sts);
    {
        std::ofstream f = out.open("schedule.txt");
        write_schedule(f, schedule);
    }

    RandomSource root(c.train.seed);
    const Tensor series = load_series(c).values;
    const WindowSplit split = split_series(c, series);
    RandomSource flat_rng = root.split(5);
    const auto traj = history_flatness_trajectory(split.train, windows, schedule, flat_rng);
    {
        std::ofstream f = out.open("flatness.csv");
        f << "t,flatness\n";
        for (std::size_t t = 0; t < traj.size(); ++t) f << t << ',' << io::format_double(traj[t]) << '\n';
    }

    // PGD on a quadratic surrogate centred on the realized schedule.
    RandomSource pgd_rng = root.split(6);
    const QuadraticObjective r = QuadraticObjective::random(schedule.steps(), 0.5, 4.0, schedule.beta, pgd_rng);
    const double lo = c.train.schedule.eps, hi = 1.0 - c.train.schedule.eps;
    const PgdTrace tr = run_pgd(r, Tensor({schedule.steps()}, 0.5), 1.0 / r.smoothness, lo, hi, 1e-6, 10000);
    {
        std::ofstream f = out.open("pgd_trace.csv");
        f << "k,objective,mapping_norm,descent_gap\n";
        for (std::size_t k = 0; k < tr.iterations; ++k)
            f << k << ',' << io::format_double(tr.objective[k]) << ',' << io::format_double(tr.mapping_norm[k]) << ','
              << io::format_double(tr.descent_gap[k]) << '\n';
    }
    const double worst_gap = tr.descent_gap.empty() ? 0.0 : *std::min_element(tr.descent_gap.begin(), tr.descent_gap.end());
    out.finish(c, {{"checkpoint", checkpoint},
                   {"flatness", {{"t0", traj.front()}, {"tT", traj.back()}}},
                   {"pgd", {{"iterations", tr.iterations}, {"converged", tr.converged}, {"min_descent_gap", worst_gap}}}});
    std::cout << "flatness " << traj.front() << " -> " << traj.back() << "; pgd " << (tr.converged ? "converged" : "did not converge")
              << " in " << tr.iterations << " iterations\n";
    return 0;
}

int cmd_synth(const CommonOptions& o, RunOutput& out) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    apply_overrides(c, o.overrides, false);
    if (o.seed) c.data.seed = *o.seed;
    c.validate();
    const Tensor x = generate_synthetic(c.data.generator, c.data.length, c.data.channels, c.data.seed, c.data.noise);
    {
        std::ofstream f = out.open("data.csv");
        write_csv(f, x);
    }
    out.finish(c);
    std::cout << "wrote " << c.data.length << " x " << c.data.channels << " '" << c.data.generator << "' series\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion forecaster with a learned spectral noise schedule"};
    app.require_subcommand(1);

    CommonOptions common;
    std::string checkpoint, forecasts;
    std::size_t flat_windows = 64;

    auto* train_cmd = app.add_subcommand("train", "Two-stage training; writes checkpoint.txt");
    add_common(train_cmd, common);

    auto* sample_cmd = app.add_subcommand("sample", "Sample forecasts for the test windows from a checkpoint");
    add_common(sample_cmd, common);
    sample_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "Score forecasts (or sample from a checkpoint) against truth");
    add_common(eval_cmd, common);
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file");
    eval_cmd->add_option("--forecasts", forecasts, "Forecast directory written by 'sample'");

    auto* analyze_cmd = app.add_subcommand("analyze-schedule", "Export schedule, flatness trajectory, PGD trace");
    add_common(analyze_cmd, common);
    analyze_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file (default: untrained template schedule)");
    analyze_cmd->add_option("--windows", flat_windows, "Training windows used for the flatness trajectory")
        ->capture_default_str();

    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset to data.csv");
    add_common(synth_cmd, common);

    CLI11_PARSE(app, argc, argv);

    const std::vector<std::string> args(argv, argv + argc);
    try {
        const std::string name = app.get_subcommands().front()->get_name();
        RunOutput out(name, common.out, args);
        if (name == "train") return cmd_train(common, out);
        if (name == "sample") return cmd_sample(common, checkpoint, out);
        if (name == "evaluate") return cmd_evaluate(common, checkpoint, forecasts, out);
        if (name == "analyze-schedule") return cmd_analyze(common, checkpoint, flat_windows, out);
        return cmd_synth(common, out);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
