#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stats/errors.hpp"
#include "stats/tensor.hpp"

namespace stats {

/// Energy-form CRPS: mean_i |X_i - x| - 1/(2 S^2) sum_{i,j} |X_i - X_j|.
inline double crps_from_samples(std::span<const double> samples, double observation) {
    const std::size_t s = samples.size();
    if (s == 0) throw ContractViolation("crps: empty sample set");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    double spread = 0.0, pair = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
        spread += std::abs(sorted[i] - observation);
        // sum_{i,j} |X_i - X_j| = 2 sum_i (2i - S + 1) X_(i) over the sorted order
        pair += (2.0 * static_cast<double>(i) - static_cast<double>(s) + 1.0) * sorted[i];
    }
    const double sd = static_cast<double>(s);
    return spread / sd - pair / (sd * sd);
}

/// (MAE, MSE) averaged over every element.
inline std::pair<double, double> mae_mse(const Tensor& prediction, const Tensor& truth) {
    if (prediction.shape() != truth.shape())
        throw ContractViolation("mae_mse: shape mismatch " + shape_str(prediction.shape()) + " vs " +
                                shape_str(truth.shape()));
    if (truth.size() == 0) throw ContractViolation("mae_mse: empty input");
    double ae = 0.0, se = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = prediction[i] - truth[i];
        ae += std::abs(e);
        se += e * e;
    }
    const double n = static_cast<double>(truth.size());
    return {ae / n, se / n};
}

enum class PointForecast { mean, median };

inline PointForecast parse_point_forecast(const std::string& name) {
    if (name == "mean") return PointForecast::mean;
    if (name == "median") return PointForecast::median;
    throw InputError("unknown point forecast '" + name + "' (expected mean or median)");
}

/// Reduce S x H x d samples to an H x d point forecast.
inline Tensor point_forecast(const Tensor& samples, PointForecast kind = PointForecast::mean) {
    if (samples.rank() != 3 || samples.shape()[0] == 0) throw ContractViolation("point_forecast: expected S x H x d");
    const std::size_t s = samples.shape()[0], h = samples.shape()[1], d = samples.shape()[2];
    Tensor out({h, d});
    std::vector<double> col(s);
    for (std::size_t t = 0; t < h; ++t)
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t i = 0; i < s; ++i) col[i] = samples(i, t, c);
            if (kind == PointForecast::mean) {
                double acc = 0.0;
                for (double v : col) acc += v;
                out(t, c) = acc / static_cast<double>(s);
            } else {
                std::sort(col.begin(), col.end());
                out(t, c) = s % 2 ? col[s / 2] : 0.5 * (col[s / 2 - 1] + col[s / 2]);
            }
        }
    return out;
}

struct InstanceMetrics {
    double crps = 0.0;
    double mae = 0.0;
    double mse = 0.0;
};

/// Metrics for one instance in original scale: CRPS per (step, channel) then
/// averaged; MAE/MSE of the point forecast.
inline InstanceMetrics evaluate_instance(const Tensor& samples, const Tensor& truth,
                                         PointForecast kind = PointForecast::mean) {
    if (samples.rank() != 3 || truth.rank() != 2 || samples.shape()[1] != truth.rows() ||
        samples.shape()[2] != truth.cols())
        throw ContractViolation("evaluate_instance: samples S x H x d must match truth H x d");
    const std::size_t s = samples.shape()[0], h = truth.rows(), d = truth.cols();
    InstanceMetrics m;
    std::vector<double> col(s);
    for (std::size_t t = 0; t < h; ++t)
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t i = 0; i < s; ++i) col[i] = samples(i, t, c);
            m.crps += crps_from_samples(col, truth(t, c));
        }
    m.crps /= static_cast<double>(h * d);
    std::tie(m.mae, m.mse) = mae_mse(point_forecast(samples, kind), truth);
    return m;
}

struct MetricReport {
    double crps = 0.0;
    double mae = 0.0;
    double mse = 0.0;
    std::vector<double> per_instance_mse;
    std::size_t samples = 0;
    std::size_t instances = 0;
};

inline MetricReport aggregate(const std::vector<InstanceMetrics>& items, std::size_t samples) {
    if (items.empty()) throw ContractViolation("aggregate: no instances");
    MetricReport r;
    for (const auto& m : items) {
        r.crps += m.crps;
        r.mae += m.mae;
        r.mse += m.mse;
        r.per_instance_mse.push_back(m.mse);
    }
    const double n = static_cast<double>(items.size());
    r.crps /= n;
    r.mae /= n;
    r.mse /= n;
    r.samples = samples;
    r.instances = items.size();
    return r;
}

inline void write_report(std::ostream& os, const MetricReport& r) {
    const auto old = os.precision(17);
    os << "crps = " << r.crps << "\nmae = " << r.mae << "\nmse = " << r.mse << "\nsamples = " << r.samples
       << "\ninstances = " << r.instances << "\nper_instance_mse =";
    for (double v : r.per_instance_mse) os << ' ' << v;
    os << '\n';
    os.precision(old);
}

struct Histogram {
    std::vector<double> edges;  // bins + 1
    std::vector<std::size_t> counts;
};

/// Fixed-width bins over [min, max]; the last bin is closed. A zero-width range
/// puts everything in the first bin.
inline Histogram mse_histogram(const std::vector<double>& values, std::size_t bins = 64) {
    if (values.empty()) throw ContractViolation("mse_histogram: no values");
    if (bins == 0) throw ContractViolation("mse_histogram: bins must be >= 1");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it, width = (hi - lo) / static_cast<double>(bins);
    Histogram h;
    h.counts.assign(bins, 0);
    for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * static_cast<double>(b));
    for (double v : values) {
        std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
        h.counts[std::min(b, bins - 1)] += 1;
    }
    return h;
}

inline void write_histogram(std::ostream& os, const Histogram& h) {
    const auto old = os.precision(17);
    os << "bin_left,bin_right,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b) os << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
    os.precision(old);
}

/// Copy-last-value forecast as a single-sample 1 x H x d distribution.
inline Tensor persistence_forecast(const Tensor& history, std::size_t horizon) {
    if (history.rank() != 2 || history.rows() == 0) throw ContractViolation("persistence: expected L x d history");
    const std::size_t d = history.cols(), last = history.rows() - 1;
    Tensor out({1, horizon, d});
    for (std::size_t t = 0; t < horizon; ++t)
        for (std::size_t c = 0; c < d; ++c) out(0, t, c) = history(last, c);
    return out;
}

}  // namespace stats
