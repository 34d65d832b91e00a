#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stats/errors.hpp"
#include "stats/random.hpp"
#include "stats/tensor.hpp"

namespace stats {

struct DatasetSpec {
    std::string path;
    char delimiter = ',';
    bool header = true;
    std::string timestamp_column;        // empty: none
    std::vector<std::string> channels;   // empty: every non-timestamp column
    std::string frequency;               // informational label only
};

struct Dataset {
    Tensor values;  // N x d
    std::vector<std::string> channels;
};

namespace io {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split(std::string_view line, char delim) {
    std::vector<std::string> out;
    std::size_t begin = 0;
    while (true) {
        const std::size_t pos = line.find(delim, begin);
        out.emplace_back(trim(line.substr(begin, pos == std::string_view::npos ? std::string_view::npos : pos - begin)));
        if (pos == std::string_view::npos) break;
        begin = pos + 1;
    }
    return out;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

/// Numeric comparison when both stamps parse as numbers, lexicographic otherwise
/// (ISO-8601 strings order correctly that way).
inline bool stamp_less(const std::string& a, const std::string& b) {
    double x = 0, y = 0;
    if (parse_double(a, x) && parse_double(b, y)) return x < y;
    return a < b;
}

inline std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace io

inline Dataset read_dataset(std::istream& in, const DatasetSpec& spec) {
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    while (!lines.empty() && io::trim(lines.back()).empty()) lines.pop_back();

    std::size_t first = 0;
    std::vector<std::string> names;
    if (spec.header) {
        if (lines.empty()) throw InputError("dataset: missing header row");
        names = io::split(lines[0], spec.delimiter);
        first = 1;
    } else if (!lines.empty()) {
        const std::size_t n = io::split(lines[0], spec.delimiter).size();
        for (std::size_t c = 0; c < n; ++c) names.push_back("c" + std::to_string(c));
    }

    std::ptrdiff_t stamp_col = -1;
    if (!spec.timestamp_column.empty()) {
        for (std::size_t c = 0; c < names.size(); ++c)
            if (names[c] == spec.timestamp_column) stamp_col = static_cast<std::ptrdiff_t>(c);
        if (stamp_col < 0) throw InputError("dataset: timestamp column '" + spec.timestamp_column + "' not found");
    }
    std::vector<std::size_t> cols;
    std::vector<std::string> chosen;
    if (spec.channels.empty()) {
        for (std::size_t c = 0; c < names.size(); ++c)
            if (static_cast<std::ptrdiff_t>(c) != stamp_col) {
                cols.push_back(c);
                chosen.push_back(names[c]);
            }
    } else {
        for (const auto& want : spec.channels) {
            std::size_t c = 0;
            while (c < names.size() && names[c] != want) ++c;
            if (c == names.size()) throw InputError("dataset: channel '" + want + "' not found");
            cols.push_back(c);
            chosen.push_back(want);
        }
    }
    if (cols.empty()) throw InputError("dataset: no data columns");

    const std::size_t rows = lines.size() - first;
    Dataset ds{Tensor({rows, cols.size()}), chosen};
    std::string prev_stamp;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t line_no = first + r + 1;
        const auto fields = io::split(lines[first + r], spec.delimiter);
        if (fields.size() != names.size())
            throw InputError("dataset: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                             " fields, expected " + std::to_string(names.size()));
        if (stamp_col >= 0) {
            const std::string& stamp = fields[static_cast<std::size_t>(stamp_col)];
            if (r > 0 && !io::stamp_less(prev_stamp, stamp))
                throw InputError("dataset: timestamps not strictly increasing at line " + std::to_string(line_no));
            prev_stamp = stamp;
        }
        for (std::size_t j = 0; j < cols.size(); ++j) {
            double v = 0.0;
            if (!io::parse_double(fields[cols[j]], v) || !std::isfinite(v))
                throw InputError("dataset: line " + std::to_string(line_no) + ", column '" + names[cols[j]] +
                                 "': cannot parse '" + fields[cols[j]] + "' as a finite number");
            ds.values(r, j) = v;
        }
    }
    return ds;
}

inline Dataset load_dataset(const DatasetSpec& spec) {
    std::ifstream in(spec.path);
    if (!in) throw InputError("dataset: cannot open '" + spec.path + "'");
    return read_dataset(in, spec);
}

inline Tensor load_csv(const DatasetSpec& spec) { return load_dataset(spec).values; }

inline void write_csv(std::ostream& os, const Tensor& values, const std::vector<std::string>& names = {},
                      char delimiter = ',') {
    const std::size_t d = values.cols();
    for (std::size_t c = 0; c < d; ++c) {
        if (c) os << delimiter;
        os << (c < names.size() ? names[c] : "c" + std::to_string(c));
    }
    os << '\n';
    for (std::size_t r = 0; r < values.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            if (c) os << delimiter;
            os << io::format_double(values(r, c));
        }
        os << '\n';
    }
}

inline const std::vector<std::string>& synthetic_generators() {
    static const std::vector<std::string> names{"sin2", "arma"};
    return names;
}

/// Named synthetic series, deterministic per seed.
///   sin2: sin(2 pi t / 24 + phi_c) + 0.25 sin(2 pi t / (5 sqrt 3) + psi_c) + noise
///   arma: x_t = 0.6 x_{t-1} - 0.2 x_{t-2} + e_t + 0.3 e_{t-1}, e ~ N(0, noise^2)
/// Phases are drawn first, then the noise in row-major order.
inline Tensor generate_synthetic(const std::string& name, std::size_t n, std::size_t d, std::uint64_t seed,
                                 double noise = 0.1) {
    if (n < 1 || d < 1) throw ContractViolation("generate_synthetic: N and d must be >= 1");
    RandomSource rng(seed);
    Tensor out({n, d});
    if (name == "sin2") {
        const double two_pi = 2.0 * std::numbers::pi, p2 = 5.0 * std::sqrt(3.0);
        std::vector<double> phi(d), psi(d);
        for (std::size_t c = 0; c < d; ++c) {
            phi[c] = two_pi * rng.uniform();
            psi[c] = two_pi * rng.uniform();
        }
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t c = 0; c < d; ++c) {
                const double tt = static_cast<double>(t);
                out(t, c) = std::sin(two_pi * tt / 24.0 + phi[c]) + 0.25 * std::sin(two_pi * tt / p2 + psi[c]) +
                            noise * rng.normal();
            }
        return out;
    }
    if (name == "arma") {
        std::vector<double> x1(d), x2(d), e1(d);
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t c = 0; c < d; ++c) {
                const double e = noise * rng.normal();
                const double x = 0.6 * x1[c] - 0.2 * x2[c] + e + 0.3 * e1[c];
                out(t, c) = x;
                x2[c] = x1[c];
                x1[c] = x;
                e1[c] = e;
            }
        return out;
    }
    std::string list;
    for (const auto& g : synthetic_generators()) list += (list.empty() ? "" : ", ") + g;
    throw InputError("unknown synthetic generator '" + name + "' (available: " + list + ")");
}

}  // namespace stats
