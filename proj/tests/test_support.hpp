#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stats/random.hpp"
#include "stats/tensor.hpp"

namespace stats::testkit {

inline Tensor random_tensor(RandomSource& rng, Shape shape, double scale = 1.0) {
    Tensor t = sample_standard_normal(rng, shape);
    for (double& v : t.values()) v *= scale;
    return t;
}

inline Tensor uniform_tensor(RandomSource& rng, Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

struct GradCheckReport {
    std::size_t checked = 0;
    double worst = 0.0;
    std::string worst_where;
};

/// Compares analytic gradients with a 4th-order central difference on
/// `coordinates` randomly chosen entries across all tensors. Error metric:
/// |analytic - numeric| / (|analytic| + floor).
inline GradCheckReport gradient_check(std::vector<Tensor*> params, const std::vector<Tensor>& analytic,
                                      const std::function<double()>& f, std::size_t coordinates, RandomSource& rng,
                                      double h = 1e-4, double floor = 1e-8) {
    std::size_t total = 0;
    for (Tensor* p : params) total += p->size();
    GradCheckReport r;
    for (std::size_t k = 0; k < coordinates; ++k) {
        std::size_t flat = static_cast<std::size_t>(rng.uniform_index(total)), which = 0;
        while (flat >= params[which]->size()) flat -= params[which++]->size();
        double& x = (*params[which])[flat];
        const double saved = x;
        auto at = [&](double offset) {
            x = saved + offset;
            return f();
        };
        const double numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
        x = saved;
        const double a = analytic[which][flat];
        const double err = std::abs(a - numeric) / (std::abs(a) + floor);
        if (err > r.worst) {
            r.worst = err;
            r.worst_where = "tensor " + std::to_string(which) + " entry " + std::to_string(flat) +
                            ": analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
        }
        ++r.checked;
    }
    return r;
}

}  // namespace stats::testkit
