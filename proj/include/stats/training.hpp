#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "stats/denoiser.hpp"
#include "stats/optimizer.hpp"
#include "stats/random.hpp"
#include "stats/scheduler.hpp"
#include "stats/window.hpp"

namespace stats {

struct SplitFractions {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct TrainConfig {
    std::size_t history_length = 168;
    std::size_t horizon = 24;
    std::size_t steps = 50;
    std::size_t batch_size = 32;
    std::size_t epochs = 50;
    std::size_t alternation_rounds = 3;  // k
    std::size_t patience = 10;
    std::size_t stride = 1;
    double lr = 1e-3;
    double sts_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 10.0;
    double divergence = 1e6;
    std::uint64_t seed = 1;
    bool learn_schedule = true;
    SplitFractions split;
    StsWeights weights;
    ScheduleConfig schedule;
    FgdConfig fgd;

    /// Copy the shared sizes (T, L, H) into the per-module configs.
    void sync() {
        schedule.steps = steps;
        fgd.steps = steps;
        fgd.history_length = history_length;
        fgd.horizon = horizon;
    }

    void validate() const {
        if (history_length < 2 || horizon < 1 || steps < 1 || batch_size < 1 || epochs < 1 || stride < 1 ||
            alternation_rounds < 1)
            throw ContractViolation("train config: counts must be >= 1 (history >= 2)");
        if (alternation_rounds > epochs) throw ContractViolation("train config: alternation rounds exceed epochs");
        if (!(lr > 0.0) || !(sts_lr > 0.0)) throw ContractViolation("train config: learning rates must be > 0");
        if (split.train <= 0.0 || split.val < 0.0 || split.test <= 0.0 ||
            std::abs(split.train + split.val + split.test - 1.0) > 1e-9)
            throw ContractViolation("train config: split fractions must be positive and sum to 1");
        weights.validate();
        schedule.validate();
    }

    AdamConfig adam(double rate) const { return {rate, beta1, beta2, adam_eps, clip_norm}; }
};

struct WindowSplit {
    std::vector<SeriesWindow> train, val, test;
};

/// Sliding windows over an N x d series, split chronologically by window count.
/// Throws when the validation block is too short to keep every test window
/// disjoint from every train window.
inline WindowSplit make_windows(const Tensor& series, std::size_t history, std::size_t horizon, std::size_t stride,
                                const SplitFractions& split = {}) {
    if (series.rank() != 2) throw ContractViolation("make_windows: series must be N x d");
    const std::size_t n = series.rows(), d = series.cols(), span = history + horizon;
    if (stride < 1 || history < 1 || horizon < 1) throw ContractViolation("make_windows: L, H, stride must be >= 1");
    if (n < span) throw ContractViolation("make_windows: series shorter than L + H");
    const std::size_t count = (n - span) / stride + 1;
    auto part = [&](double f) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(count) + 1e-9)); };
    const std::size_t n_train = part(split.train), n_val = part(split.val);
    if (n_train == 0 || n_train + n_val >= count) throw ContractViolation("make_windows: split leaves an empty set");
    const std::size_t train_end = (n_train - 1) * stride + span;  // one past last train index
    const std::size_t test_begin = (n_train + n_val) * stride;
    if (test_begin < train_end)
        throw ContractViolation("make_windows: validation block too short to separate train and test windows");

    WindowSplit out;
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t s = w * stride;
        SeriesWindow win{Tensor({history, d}), Tensor({horizon, d}), s};
        for (std::size_t t = 0; t < history; ++t)
            for (std::size_t c = 0; c < d; ++c) win.history(t, c) = series(s + t, c);
        for (std::size_t t = 0; t < horizon; ++t)
            for (std::size_t c = 0; c < d; ++c) win.target(t, c) = series(s + history + t, c);
        (w < n_train ? out.train : w < n_train + n_val ? out.val : out.test).push_back(std::move(win));
    }
    return out;
}

inline std::vector<SeriesWindow> normalize_all(const std::vector<SeriesWindow>& windows) {
    std::vector<SeriesWindow> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(instance_normalize(w).first);
    return out;
}

struct EpochLog {
    std::string stage;  // "fgd", "sts", "stage2"
    std::size_t round = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
    ScheduleParams sts;
    FgdParams fgd;
    Adam sts_opt;
    Adam fgd_opt;
    RandomSource shuffle_rng;
    RandomSource loss_rng;
    std::vector<EpochLog> log;
    std::vector<RealizedSchedule> snapshots;  // after each stage-one round
};

struct TrainResult {
    ScheduleParams sts;
    FgdParams fgd;  // best-validation checkpoint
    RealizedSchedule schedule;
    std::vector<EpochLog> log;
    std::vector<RealizedSchedule> snapshots;
    std::size_t best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
};

namespace training {

inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t size, RandomSource& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + size)));
    return out;
}

inline WindowBatch gather_batch(const std::vector<SeriesWindow>& windows, const std::vector<std::size_t>& index) {
    std::vector<SeriesWindow> picked;
    picked.reserve(index.size());
    for (std::size_t i : index) picked.push_back(windows[i]);
    return make_batch(picked, true);
}

inline void check_divergence(double loss, double limit, const std::string& where) {
    if (!std::isfinite(loss) || loss > limit)
        throw TrainingAborted(where + ": loss " + std::to_string(loss) + " exceeds divergence threshold");
}

}  // namespace training

inline TrainState init_training(const TrainConfig& cfg_in) {
    TrainConfig cfg = cfg_in;
    cfg.sync();
    cfg.validate();
    RandomSource root(cfg.seed);
    RandomSource init_rng = root.split(0);
    TrainState s{ScheduleParams::init(cfg.schedule, init_rng),
                 FgdParams::init(cfg.fgd, init_rng),
                 Adam(cfg.adam(cfg.sts_lr), {"sts.w1", "sts.b1", "sts.w2", "sts.b2"}),
                 Adam(cfg.adam(cfg.lr), {}),
                 root.split(1),
                 root.split(2),
                 {},
                 {}};
    s.fgd_opt = Adam(cfg.adam(cfg.lr), s.fgd.names());
    return s;
}

/// One pass of denoiser updates under a frozen schedule; returns the mean batch loss.
inline double fgd_epoch(TrainState& s, const TrainConfig& cfg, const std::vector<SeriesWindow>& train,
                        const RealizedSchedule& schedule, const std::string& where) {
    double total = 0.0;
    const auto plan = training::batches(train.size(), cfg.batch_size, s.shuffle_rng);
    for (const auto& idx : plan) {
        const WindowBatch batch = training::gather_batch(train, idx);
        LossAndGrads lg = denoiser_loss(s.fgd, batch, schedule, s.loss_rng);
        training::check_divergence(lg.value, cfg.divergence, where);
        s.fgd_opt.step(s.fgd.tensors(), lg.grads);
        total += lg.value;
    }
    return total / static_cast<double>(plan.size());
}

/// One pass of scheduler updates with the denoiser frozen; returns the mean total loss.
inline double sts_epoch(TrainState& s, const TrainConfig& cfg, const std::vector<SeriesWindow>& train,
                        const std::string& where) {
    double total = 0.0;
    const auto plan = training::batches(train.size(), cfg.batch_size, s.shuffle_rng);
    for (const auto& idx : plan) {
        const WindowBatch batch = training::gather_batch(train, idx);
        StsResult r = sts_total_loss(s.sts, cfg.weights, batch, s.fgd, s.loss_rng);
        training::check_divergence(r.terms.total, cfg.divergence, where);
        s.sts_opt.step(s.sts.tensors(), r.grads);
        total += r.terms.total;
    }
    return total / static_cast<double>(plan.size());
}

/// Denoiser objective on held-out windows with draws fixed by the run seed, so
/// successive calls are comparable. Never touches parameters.
inline double validation_loss(const FgdParams& fgd, const TrainConfig& cfg, const std::vector<SeriesWindow>& val,
                              const RealizedSchedule& schedule) {
    if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
    RandomSource rng = RandomSource(cfg.seed).split(3);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < val.size(); i += cfg.batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t j = i; j < std::min(val.size(), i + cfg.batch_size); ++j) idx.push_back(j);
        const WindowBatch batch = training::gather_batch(val, idx);
        total += denoiser_loss_value(fgd, batch, schedule, rng) * static_cast<double>(idx.size());
        count += idx.size();
    }
    return total / static_cast<double>(count);
}

/// k alternation rounds: one denoiser epoch under the current realized schedule,
/// then one scheduler epoch with the denoiser frozen. With learn_schedule off
/// the scheduler sub-phase is skipped.
inline void stage_one(TrainState& s, const TrainConfig& cfg, const std::vector<SeriesWindow>& train,
                      const std::vector<SeriesWindow>& val) {
    for (std::size_t round = 1; round <= cfg.alternation_rounds; ++round) {
        const std::string where = "stage 1 round " + std::to_string(round);
        const RealizedSchedule schedule = realize_schedule(s.sts);
        const double l_fgd = fgd_epoch(s, cfg, train, schedule, where + " (denoiser)");
        s.log.push_back({"fgd", round, round, l_fgd, validation_loss(s.fgd, cfg, val, schedule)});
        if (cfg.learn_schedule) {
            const double l_sts = sts_epoch(s, cfg, train, where + " (scheduler)");
            s.log.push_back({"sts", round, round, l_sts, std::numeric_limits<double>::quiet_NaN()});
        }
        s.snapshots.push_back(realize_schedule(s.sts));
    }
}

/// Remaining epochs on the denoiser alone under the cached schedule, keeping
/// the best-validation parameters and stopping after `patience` epochs without
/// improvement.
inline TrainResult stage_two(TrainState& s, const TrainConfig& cfg, const std::vector<SeriesWindow>& train,
                             const std::vector<SeriesWindow>& val) {
    TrainResult r;
    r.schedule = realize_schedule(s.sts);
    r.fgd = s.fgd;
    r.best_val = validation_loss(s.fgd, cfg, val, r.schedule);
    r.best_epoch = cfg.alternation_rounds;
    std::size_t stale = 0;
    for (std::size_t epoch = cfg.alternation_rounds + 1; epoch <= cfg.epochs; ++epoch) {
        const double l = fgd_epoch(s, cfg, train, r.schedule, "stage 2 epoch " + std::to_string(epoch));
        const double v = validation_loss(s.fgd, cfg, val, r.schedule);
        s.log.push_back({"stage2", 0, epoch, l, v});
        if (v < r.best_val || std::isnan(r.best_val)) {
            r.best_val = v;
            r.best_epoch = epoch;
            r.fgd = s.fgd;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    r.sts = s.sts;
    r.log = s.log;
    r.snapshots = s.snapshots;
    return r;
}

/// Full two-stage training on raw (unnormalised) windows.
inline TrainResult train(const TrainConfig& cfg_in, const WindowSplit& data) {
    TrainConfig cfg = cfg_in;
    cfg.sync();
    cfg.validate();
    if (data.train.empty()) throw ContractViolation("train: no training windows");
    const std::vector<SeriesWindow> train = normalize_all(data.train), val = normalize_all(data.val);
    TrainState s = init_training(cfg);
    stage_one(s, cfg, train, val);
    return stage_two(s, cfg, train, val);
}

}  // namespace stats
