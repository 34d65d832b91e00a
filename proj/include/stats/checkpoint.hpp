#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stats/config.hpp"
#include "stats/dataio.hpp"
#include "stats/denoiser.hpp"
#include "stats/scheduler.hpp"

namespace stats {

inline constexpr int kCheckpointVersion = 1;

/// Text checkpoint:
///   stats-checkpoint <version>
///   config <n>            followed by n config lines
///   tensors <n>           followed by n lines `name rows cols offset count`
///   values <n>            followed by n values, one per line, 17 significant digits
/// Offsets index into the value block.
struct Checkpoint {
    RunConfig config;
    ScheduleParams sts;
    FgdParams fgd;
};

namespace ckpt {

struct Entry {
    std::string name;
    Tensor* tensor;
};

inline std::vector<Entry> entries(Checkpoint& c) {
    std::vector<Entry> out;
    c.sts.visit([&](const std::string& n, Tensor& t) { out.push_back({n, &t}); });
    c.fgd.visit([&](const std::string& n, Tensor& t) { out.push_back({"fgd." + n, &t}); });
    return out;
}

inline std::string expect(std::istream& in, const std::string& word) {
    std::string got;
    if (!(in >> got) || got != word) throw InputError("checkpoint: expected '" + word + "', got '" + got + "'");
    return got;
}

}  // namespace ckpt

inline void write_checkpoint(std::ostream& os, const Checkpoint& c_in) {
    Checkpoint c = c_in;
    std::ostringstream cfg;
    write_config(cfg, c.config, false);
    std::vector<std::string> cfg_lines;
    std::istringstream split(cfg.str());
    for (std::string line; std::getline(split, line);) cfg_lines.push_back(line);

    os << "stats-checkpoint " << kCheckpointVersion << "\nconfig " << cfg_lines.size() << '\n';
    for (const auto& l : cfg_lines) os << l << '\n';
    const auto list = ckpt::entries(c);
    os << "tensors " << list.size() << '\n';
    std::size_t offset = 0;
    for (const auto& e : list) {
        os << e.name << ' ' << e.tensor->rows() << ' ' << e.tensor->cols() << ' ' << offset << ' ' << e.tensor->size()
           << '\n';
        offset += e.tensor->size();
    }
    os << "values " << offset << '\n';
    for (const auto& e : list)
        for (double v : e.tensor->values()) os << io::format_double(v) << '\n';
}

inline std::string checkpoint_string(const Checkpoint& c) {
    std::ostringstream os;
    write_checkpoint(os, c);
    return os.str();
}

inline Checkpoint read_checkpoint(std::istream& in) {
    ckpt::expect(in, "stats-checkpoint");
    int version = 0;
    in >> version;
    if (version != kCheckpointVersion) throw InputError("checkpoint: unsupported version " + std::to_string(version));
    ckpt::expect(in, "config");
    std::size_t n = 0;
    in >> n;
    std::string line;
    std::getline(in, line);
    std::ostringstream cfg_text;
    for (std::size_t i = 0; i < n && std::getline(in, line); ++i) cfg_text << line << '\n';
    std::istringstream cfg_in(cfg_text.str());

    Checkpoint c;
    c.config = parse_config(cfg_in);
    RandomSource scratch(0);
    c.sts = ScheduleParams::init(c.config.train.schedule, scratch);
    c.fgd = FgdParams::init(c.config.train.fgd, scratch);
    const auto list = ckpt::entries(c);

    ckpt::expect(in, "tensors");
    in >> n;
    if (n != list.size()) throw InputError("checkpoint: tensor count does not match the configuration");
    std::vector<std::size_t> offsets(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::string name;
        std::size_t rows = 0, cols = 0, count = 0;
        in >> name >> rows >> cols >> offsets[i] >> count;
        if (!in || name != list[i].name || rows != list[i].tensor->rows() || cols != list[i].tensor->cols() ||
            count != list[i].tensor->size())
            throw InputError("checkpoint: manifest entry " + std::to_string(i) + " ('" + name +
                             "') does not match the expected layout");
    }
    ckpt::expect(in, "values");
    std::size_t total = 0;
    in >> total;
    std::vector<double> values(total);
    for (std::size_t i = 0; i < total; ++i) {
        std::string tok;
        if (!(in >> tok) || !io::parse_double(tok, values[i]))
            throw InputError("checkpoint: bad value at index " + std::to_string(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
        Tensor& t = *list[i].tensor;
        if (offsets[i] + t.size() > total) throw InputError("checkpoint: offset out of range for " + list[i].name);
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offsets[i]), t.size(), t.values().begin());
    }
    return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream out(path);
    if (!out) throw InputError("checkpoint: cannot write '" + path + "'");
    write_checkpoint(out, c);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("checkpoint: cannot open '" + path + "'");
    return read_checkpoint(in);
}

}  // namespace stats
