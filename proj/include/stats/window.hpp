#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "stats/errors.hpp"
#include "stats/tensor.hpp"

namespace stats {

inline constexpr double kNormEps = 1e-5;

/// One forecasting instance: history c0 (L x d) followed by target x0 (H x d).
struct SeriesWindow {
    Tensor history;
    Tensor target;
    std::size_t start = 0;  // row of the source series where the history begins
};

/// Per-channel statistics of a history window.
struct NormStats {
    Tensor mean;  // (d)
    Tensor std;   // (d), floored at eps
    double eps = kNormEps;
};

inline NormStats history_stats(const Tensor& history, double eps = kNormEps) {
    const std::size_t len = history.rows(), d = history.cols();
    if (history.rank() != 2 || len < 2) throw ContractViolation("instance_normalize: history needs L >= 2");
    NormStats s{Tensor({d}), Tensor({d}), eps};
    for (std::size_t c = 0; c < d; ++c) {
        double m = 0.0;
        for (std::size_t t = 0; t < len; ++t) m += history(t, c);
        m /= static_cast<double>(len);
        double v = 0.0;
        for (std::size_t t = 0; t < len; ++t) v += (history(t, c) - m) * (history(t, c) - m);
        v /= static_cast<double>(len);
        s.mean[c] = m;
        s.std[c] = std::max(std::sqrt(v), eps);
    }
    return s;
}

inline Tensor normalize_with(const Tensor& x, const NormStats& s) {
    Tensor out = x;
    const std::size_t d = x.cols();
    for (std::size_t t = 0; t < x.rows(); ++t)
        for (std::size_t c = 0; c < d; ++c) out(t, c) = (x(t, c) - s.mean[c]) / s.std[c];
    return out;
}

/// Inverse of normalize_with. Accepts H x d or S x H x d.
inline Tensor denormalize(const Tensor& x, const NormStats& s) {
    Tensor out = x;
    const std::size_t d = s.mean.size();
    if (x.shape().back() != d) throw ContractViolation("denormalize: channel count mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t c = i % d;
        out[i] = x[i] * s.std[c] + s.mean[c];
    }
    return out;
}

/// Standardise history and target with the history's per-channel statistics.
inline std::pair<SeriesWindow, NormStats> instance_normalize(const SeriesWindow& w, double eps = kNormEps) {
    NormStats s = history_stats(w.history, eps);
    SeriesWindow out{normalize_with(w.history, s), normalize_with(w.target, s), w.start};
    return {std::move(out), std::move(s)};
}

inline SeriesWindow denormalize(const SeriesWindow& w, const NormStats& s) {
    return {denormalize(w.history, s), denormalize(w.target, s), w.start};
}

/// A batch in row layout: row b * d + c holds channel c of instance b with
/// time along the columns.
struct WindowBatch {
    std::size_t instances = 0;
    std::size_t channels = 0;
    Tensor history;  // (B*d) x L
    Tensor target;   // (B*d) x H
    bool normalized = false;

    std::size_t history_length() const { return history.cols(); }
    std::size_t horizon() const { return target.cols(); }
    std::size_t rows() const { return instances * channels; }
};

/// Stack windows (already in the desired space) into row layout.
inline WindowBatch make_batch(std::span<const SeriesWindow> windows, bool normalized) {
    if (windows.empty()) throw ContractViolation("make_batch: empty batch");
    const std::size_t d = windows[0].history.cols(), len = windows[0].history.rows(),
                      h = windows[0].target.rows();
    WindowBatch b;
    b.instances = windows.size();
    b.channels = d;
    b.history = Tensor({b.instances * d, len});
    b.target = Tensor({b.instances * d, h});
    b.normalized = normalized;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const SeriesWindow& w = windows[i];
        if (w.history.rows() != len || w.history.cols() != d || w.target.rows() != h || w.target.cols() != d)
            throw ContractViolation("make_batch: windows disagree in shape");
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t t = 0; t < len; ++t) b.history(i * d + c, t) = w.history(t, c);
            for (std::size_t t = 0; t < h; ++t) b.target(i * d + c, t) = w.target(t, c);
        }
    }
    return b;
}

/// Rows (B*d) x N of one instance back to an N x d window slice.
inline Tensor rows_to_window(const Tensor& rows, std::size_t instance, std::size_t channels) {
    const std::size_t n = rows.cols();
    Tensor out({n, channels});
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t t = 0; t < n; ++t) out(t, c) = rows(instance * channels + c, t);
    return out;
}

}  // namespace stats
