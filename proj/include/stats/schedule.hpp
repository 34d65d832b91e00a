#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "stats/errors.hpp"
#include "stats/tensor.hpp"

namespace stats {

enum class ScheduleTemplate { none, linear, cosine, quadratic };

inline std::string to_string(ScheduleTemplate t) {
    switch (t) {
        case ScheduleTemplate::none: return "none";
        case ScheduleTemplate::linear: return "linear";
        case ScheduleTemplate::cosine: return "cosine";
        case ScheduleTemplate::quadratic: return "quadratic";
    }
    return "?";
}

inline ScheduleTemplate parse_schedule_template(const std::string& name) {
    if (name == "none") return ScheduleTemplate::none;
    if (name == "linear") return ScheduleTemplate::linear;
    if (name == "cosine") return ScheduleTemplate::cosine;
    if (name == "quadratic") return ScheduleTemplate::quadratic;
    throw InputError("unknown schedule template '" + name + "' (expected none, linear, cosine, quadratic)");
}

/// Fixed beta templates, index 0 is step t = 1.
inline std::vector<double> template_betas(ScheduleTemplate kind, std::size_t steps, double beta_start,
                                          double beta_end) {
    if (steps == 0) throw ContractViolation("template_betas: steps must be >= 1");
    std::vector<double> beta(steps);
    const double denom = steps > 1 ? static_cast<double>(steps - 1) : 1.0;
    switch (kind) {
        case ScheduleTemplate::none:
            throw ContractViolation("template_betas: 'none' has no fixed betas");
        case ScheduleTemplate::linear:
            for (std::size_t i = 0; i < steps; ++i)
                beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / denom;
            break;
        case ScheduleTemplate::quadratic: {
            const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
            for (std::size_t i = 0; i < steps; ++i) {
                const double r = a + (b - a) * static_cast<double>(i) / denom;
                beta[i] = r * r;
            }
            break;
        }
        case ScheduleTemplate::cosine: {
            // Squared-cosine cumulative retention with offset s = 0.008, capped at 0.999.
            const double s = 0.008;
            auto f = [&](double t) {
                const double c = std::cos((t / static_cast<double>(steps) + s) / (1.0 + s) * std::numbers::pi / 2.0);
                return c * c;
            };
            for (std::size_t i = 0; i < steps; ++i) {
                const double t = static_cast<double>(i + 1);
                beta[i] = std::min(1.0 - f(t) / f(t - 1.0), 0.999);
            }
            break;
        }
    }
    return beta;
}

enum class ReverseVariance { posterior, beta };

inline std::string to_string(ReverseVariance v) { return v == ReverseVariance::posterior ? "posterior" : "beta"; }

inline ReverseVariance parse_reverse_variance(const std::string& name) {
    if (name == "posterior") return ReverseVariance::posterior;
    if (name == "beta") return ReverseVariance::beta;
    throw InputError("unknown reverse variance '" + name + "' (expected posterior or beta)");
}

/// Per-step schedule quantities. Tensors have shape (T); step t (1-based) is
/// stored at index t - 1, and alpha_bar(0) is taken as 1.
struct RealizedSchedule {
    Tensor beta;
    Tensor alpha;
    Tensor alpha_bar;
    Tensor sigma_sq;

    std::size_t steps() const noexcept { return beta.size(); }
    double beta_at(std::size_t t) const { return beta[checked(t) - 1]; }
    double alpha_at(std::size_t t) const { return alpha[checked(t) - 1]; }
    double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar[checked(t) - 1]; }
    double sigma_sq_at(std::size_t t) const { return sigma_sq[checked(t) - 1]; }

private:
    std::size_t checked(std::size_t t) const {
        if (t < 1 || t > steps())
            throw ContractViolation("schedule step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
        return t;
    }
};

/// Build alpha, sigma_sq from beta and a matching alpha_bar.
/// sigma_sq_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t in posterior mode
/// (so sigma_sq_1 = 0), or beta_t in beta mode.
inline RealizedSchedule complete_schedule(const std::vector<double>& beta, const std::vector<double>& alpha_bar,
                                          ReverseVariance variance = ReverseVariance::posterior) {
    const std::size_t n = beta.size();
    if (n == 0 || alpha_bar.size() != n) throw ContractViolation("complete_schedule: size mismatch");
    RealizedSchedule s;
    s.beta = Tensor({n}, beta);
    s.alpha = Tensor({n});
    s.alpha_bar = Tensor({n}, alpha_bar);
    s.sigma_sq = Tensor({n});
    for (std::size_t i = 0; i < n; ++i) {
        if (!(beta[i] > 0.0 && beta[i] < 1.0))
            throw ContractViolation("schedule: beta_" + std::to_string(i + 1) + " outside (0, 1)");
        s.alpha[i] = 1.0 - beta[i];
        const double prev = i == 0 ? 1.0 : alpha_bar[i - 1];
        s.sigma_sq[i] =
            variance == ReverseVariance::posterior ? (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i] : beta[i];
    }
    return s;
}

/// Realize a raw beta vector (running product for alpha_bar).
inline RealizedSchedule schedule_from_betas(const std::vector<double>& beta,
                                            ReverseVariance variance = ReverseVariance::posterior) {
    std::vector<double> alpha_bar(beta.size());
    double acc = 1.0;
    for (std::size_t i = 0; i < beta.size(); ++i) {
        acc *= 1.0 - beta[i];
        alpha_bar[i] = acc;
    }
    return complete_schedule(beta, alpha_bar, variance);
}

/// Sinusoidal embedding of t / T for t = 1..T. Row t-1 holds
/// [sin(w_0 p), cos(w_0 p), sin(w_1 p), cos(w_1 p), ...] with p = t / T and
/// geometrically spaced w_k = 1000^(k / (K - 1)), K = dim / 2.
inline Tensor step_embedding(std::size_t steps, std::size_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ContractViolation("step_embedding: dim must be even and >= 2");
    const std::size_t pairs = dim / 2;
    Tensor out({steps, dim});
    for (std::size_t t = 1; t <= steps; ++t) {
        const double p = static_cast<double>(t) / static_cast<double>(steps);
        for (std::size_t k = 0; k < pairs; ++k) {
            const double expo = pairs > 1 ? static_cast<double>(k) / static_cast<double>(pairs - 1) : 0.0;
            const double w = std::pow(1000.0, expo);
            out(t - 1, 2 * k) = std::sin(w * p);
            out(t - 1, 2 * k + 1) = std::cos(w * p);
        }
    }
    return out;
}

}  // namespace stats
