#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stats/dataio.hpp"
#include "stats/diffusion.hpp"
#include "stats/errors.hpp"
#include "stats/evaluation.hpp"
#include "stats/training.hpp"

namespace stats {

struct DataConfig {
    std::string source = "synth";  // synth | csv
    std::string generator = "sin2";
    std::size_t length = 4000;
    std::size_t channels = 2;
    double noise = 0.1;
    std::uint64_t seed = 7;  // synthetic data seed, independent of the training seed
    DatasetSpec csv;
};

struct EvalConfig {
    std::size_t samples = 100;
    PointForecast point = PointForecast::mean;
    std::size_t window_stride = 1;  // evaluate every k-th test window
    std::size_t max_windows = 0;    // 0: no cap
    std::size_t histogram_bins = 64;
    SamplingOptions sampling;
};

struct RunConfig {
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;

    void validate() {
        train.sync();
        train.validate();
        if (eval.samples < 1 || eval.window_stride < 1 || eval.histogram_bins < 1)
            throw InputError("config: eval.samples, eval.window_stride, eval.histogram_bins must be >= 1");
        if (data.source != "synth" && data.source != "csv")
            throw InputError("config: data.source must be 'synth' or 'csv'");
        if (data.source == "csv" && data.csv.path.empty()) throw InputError("config: data.path is required for csv");
    }
};

namespace cfg {

inline std::string format_number(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

inline double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    if (!io::parse_double(v, out)) throw InputError("config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw InputError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw InputError("config: '" + key + "' expects true/false, got '" + v + "'");
}

struct Field {
    std::string key;  // section.name
    std::string doc;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Ref>
Field real(std::string key, std::string doc, Ref ref) {
    return {key, std::move(doc), [ref](const RunConfig& c) { return format_number(ref(const_cast<RunConfig&>(c))); },
            [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_double(key, v); }};
}

template <typename Ref>
Field count(std::string key, std::string doc, Ref ref) {
    return {key, std::move(doc), [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
            [ref, key](RunConfig& c, const std::string& v) {
                ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(to_uint(key, v));
            }};
}

template <typename Ref>
Field flag(std::string key, std::string doc, Ref ref) {
    return {key, std::move(doc), [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)) ? "true" : "false"; },
            [ref, key](RunConfig& c, const std::string& v) { ref(c) = to_bool(key, v); }};
}

template <typename Ref>
Field text(std::string key, std::string doc, Ref ref) {
    return {key, std::move(doc), [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); },
            [ref](RunConfig& c, const std::string& v) { ref(c) = v; }};
}

}  // namespace cfg

/// Every recognised key, in file order.
inline const std::vector<cfg::Field>& config_fields() {
    using namespace cfg;
    using C = RunConfig;
    static const std::vector<Field> fields{
        text("data.source", "synth or csv", [](C& c) -> std::string& { return c.data.source; }),
        text("data.generator", "synthetic generator: sin2, arma", [](C& c) -> std::string& { return c.data.generator; }),
        count("data.length", "synthetic series length N", [](C& c) -> std::size_t& { return c.data.length; }),
        count("data.channels", "synthetic channel count d", [](C& c) -> std::size_t& { return c.data.channels; }),
        real("data.noise", "synthetic noise standard deviation", [](C& c) -> double& { return c.data.noise; }),
        count("data.seed", "synthetic data seed", [](C& c) -> std::uint64_t& { return c.data.seed; }),
        text("data.path", "csv path (source = csv)", [](C& c) -> std::string& { return c.data.csv.path; }),
        Field{"data.delimiter", "csv field delimiter (one character, \\t for tab)",
              [](const C& c) { return c.data.csv.delimiter == '\t' ? std::string("\\t") : std::string(1, c.data.csv.delimiter); },
              [](C& c, const std::string& v) {
                  if (v == "\\t") {
                      c.data.csv.delimiter = '\t';
                      return;
                  }
                  if (v.size() != 1) throw InputError("config: 'data.delimiter' must be one character or \\t");
                  c.data.csv.delimiter = v[0];
              }},
        flag("data.header", "csv has a header row", [](C& c) -> bool& { return c.data.csv.header; }),
        text("data.timestamp_column", "csv timestamp column, checked then dropped",
             [](C& c) -> std::string& { return c.data.csv.timestamp_column; }),
        text("data.frequency", "informational sampling-frequency label",
             [](C& c) -> std::string& { return c.data.csv.frequency; }),

        count("train.seed", "training seed", [](C& c) -> std::uint64_t& { return c.train.seed; }),
        count("train.history_length", "history length L", [](C& c) -> std::size_t& { return c.train.history_length; }),
        count("train.horizon", "forecast horizon H", [](C& c) -> std::size_t& { return c.train.horizon; }),
        count("train.batch_size", "batch size", [](C& c) -> std::size_t& { return c.train.batch_size; }),
        count("train.epochs", "total epochs (stage one rounds included)", [](C& c) -> std::size_t& { return c.train.epochs; }),
        count("train.alternation_rounds", "stage-one alternation rounds k",
              [](C& c) -> std::size_t& { return c.train.alternation_rounds; }),
        count("train.patience", "stage-two early-stopping patience", [](C& c) -> std::size_t& { return c.train.patience; }),
        count("train.stride", "window stride", [](C& c) -> std::size_t& { return c.train.stride; }),
        real("train.lr", "denoiser learning rate", [](C& c) -> double& { return c.train.lr; }),
        real("train.sts_lr", "scheduler learning rate", [](C& c) -> double& { return c.train.sts_lr; }),
        real("train.beta1", "Adam first-moment decay", [](C& c) -> double& { return c.train.beta1; }),
        real("train.beta2", "Adam second-moment decay", [](C& c) -> double& { return c.train.beta2; }),
        real("train.adam_eps", "Adam epsilon", [](C& c) -> double& { return c.train.adam_eps; }),
        real("train.clip_norm", "global gradient-norm clip (0 disables)", [](C& c) -> double& { return c.train.clip_norm; }),
        real("train.divergence", "abort when a batch loss exceeds this", [](C& c) -> double& { return c.train.divergence; }),
        real("train.split_train", "train fraction of windows", [](C& c) -> double& { return c.train.split.train; }),
        real("train.split_val", "validation fraction of windows", [](C& c) -> double& { return c.train.split.val; }),
        real("train.split_test", "test fraction of windows", [](C& c) -> double& { return c.train.split.test; }),

        count("schedule.steps", "diffusion steps T", [](C& c) -> std::size_t& { return c.train.steps; }),
        flag("schedule.learn", "learn the schedule (false: fixed template)",
             [](C& c) -> bool& { return c.train.learn_schedule; }),
        Field{"schedule.template", "none, linear, cosine, quadratic",
              [](const C& c) { return to_string(c.train.schedule.base); },
              [](C& c, const std::string& v) { c.train.schedule.base = parse_schedule_template(v); }},
        real("schedule.beta_start", "template beta at t = 1", [](C& c) -> double& { return c.train.schedule.beta_start; }),
        real("schedule.beta_end", "template beta at t = T", [](C& c) -> double& { return c.train.schedule.beta_end; }),
        real("schedule.eps", "beta clamp to [eps, 1 - eps]", [](C& c) -> double& { return c.train.schedule.eps; }),
        count("schedule.embed_dim", "step embedding width", [](C& c) -> std::size_t& { return c.train.schedule.embed_dim; }),
        count("schedule.hidden", "scheduler MLP hidden width", [](C& c) -> std::size_t& { return c.train.schedule.hidden; }),
        Field{"schedule.variance", "reverse variance: posterior or beta",
              [](const C& c) { return to_string(c.train.schedule.variance); },
              [](C& c, const std::string& v) { c.train.schedule.variance = parse_reverse_variance(v); }},
        real("schedule.lambda_bar", "barrier weight", [](C& c) -> double& { return c.train.weights.bar; }),
        real("schedule.lambda_end", "terminal flatness weight", [](C& c) -> double& { return c.train.weights.end; }),
        real("schedule.lambda_init", "first-step variance weight", [](C& c) -> double& { return c.train.weights.init; }),
        real("schedule.lambda_prog", "flatness progression weight", [](C& c) -> double& { return c.train.weights.prog; }),
        real("schedule.lambda_smooth", "smoothness weight", [](C& c) -> double& { return c.train.weights.smooth; }),
        real("schedule.lambda_obj", "denoising objective weight", [](C& c) -> double& { return c.train.weights.obj; }),

        count("denoiser.bands", "frequency bands B", [](C& c) -> std::size_t& { return c.train.fgd.bands; }),
        count("denoiser.hidden", "backbone width", [](C& c) -> std::size_t& { return c.train.fgd.hidden; }),
        count("denoiser.gate_hidden", "distortion gate MLP width", [](C& c) -> std::size_t& { return c.train.fgd.gate_hidden; }),
        count("denoiser.embed_dim", "FiLM step embedding width", [](C& c) -> std::size_t& { return c.train.fgd.embed_dim; }),
        real("denoiser.r_min", "distortion ratio lower clip", [](C& c) -> double& { return c.train.fgd.r_min; }),
        real("denoiser.r_max", "distortion ratio upper clip", [](C& c) -> double& { return c.train.fgd.r_max; }),
        real("denoiser.eps_r", "distortion denominator floor", [](C& c) -> double& { return c.train.fgd.eps_r; }),

        count("eval.samples", "samples per test window", [](C& c) -> std::size_t& { return c.eval.samples; }),
        Field{"eval.point", "point forecast: mean or median",
              [](const C& c) { return std::string(c.eval.point == PointForecast::mean ? "mean" : "median"); },
              [](C& c, const std::string& v) { c.eval.point = parse_point_forecast(v); }},
        count("eval.window_stride", "evaluate every k-th test window",
              [](C& c) -> std::size_t& { return c.eval.window_stride; }),
        count("eval.max_windows", "cap on evaluated windows (0: all)", [](C& c) -> std::size_t& { return c.eval.max_windows; }),
        count("eval.histogram_bins", "bins in the per-window MSE histogram",
              [](C& c) -> std::size_t& { return c.eval.histogram_bins; }),
        flag("eval.clip_x0", "clip x0 estimates while sampling", [](C& c) -> bool& { return c.eval.sampling.clip_x0; }),
        real("eval.clip_value", "clip bound when clip_x0 is on", [](C& c) -> double& { return c.eval.sampling.clip_value; }),
        real("eval.max_failed_fraction", "abort when more chains fail",
             [](C& c) -> double& { return c.eval.sampling.max_failed_fraction; }),
    };
    return fields;
}

/// Apply `section.key = value` to `c`; throws on unknown keys.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    for (const auto& f : config_fields())
        if (f.key == key) {
            f.set(c, value);
            return;
        }
    throw InputError("config: unknown key '" + key + "'");
}

/// Flat `key = value` text with `[section]` headers and `#` comments.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
    std::string section, line;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string_view body = io::trim(line);
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']') throw InputError("config line " + std::to_string(line_no) + ": bad section header");
            section = std::string(io::trim(body.substr(1, body.size() - 2)));
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string_view::npos)
            throw InputError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string name(io::trim(body.substr(0, eq)));
        const std::string value(io::trim(body.substr(eq + 1)));
        const std::string key = section.empty() ? name : section + "." + name;
        if (seen.count(key))
            throw InputError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "' (first on line " +
                             std::to_string(seen[key]) + ")");
        seen[key] = line_no;
        try {
            set_config_value(base, key, value);
        } catch (const InputError& e) {
            throw InputError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    base.validate();
    return base;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("config: cannot open '" + path + "'");
    return parse_config(in);
}

/// Ordered key -> value view of a configuration.
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : config_fields()) out.emplace_back(f.key, f.get(c));
    return out;
}

/// Writes a complete config that parse_config reads back to the same values.
inline void write_config(std::ostream& os, const RunConfig& c, bool with_docs = true) {
    std::string section;
    for (const auto& f : config_fields()) {
        const auto dot = f.key.find('.');
        const std::string sec = f.key.substr(0, dot), name = f.key.substr(dot + 1);
        if (sec != section) {
            os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
            section = sec;
        }
        const std::string value = f.get(c);
        os << name << " =" << (value.empty() ? "" : " ") << value;
        if (with_docs) os << "  # " << f.doc;
        os << '\n';
    }
}

}  // namespace stats
