#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "stats/autodiff.hpp"
#include "stats/random.hpp"
#include "stats/schedule.hpp"
#include "stats/window.hpp"

namespace stats {

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise, 1 <= t <= T.
inline Tensor forward_sample(const Tensor& x0, std::size_t t, const RealizedSchedule& schedule, const Tensor& noise) {
    require_same_shape(x0, noise, "forward_sample");
    if (t < 1 || t > schedule.steps()) throw ContractViolation("forward_sample: step out of range");
    const double ab = schedule.alpha_bar_at(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * noise[i];
    return out;
}

/// One transition of the forward chain: x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) noise.
inline Tensor forward_step(const Tensor& x_prev, std::size_t t, const RealizedSchedule& schedule, const Tensor& noise) {
    require_same_shape(x_prev, noise, "forward_step");
    const double a = std::sqrt(schedule.alpha_at(t)), b = std::sqrt(schedule.beta_at(t));
    Tensor out(x_prev.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + b * noise[i];
    return out;
}

namespace diffusion {

/// Differentiable forward sample in row layout. `steps` holds the 1-based step
/// of every row; `alpha_bar` is the 1 x T cumulative retention.
inline Var forward_sample_rows(Var x0_rows, Var alpha_bar, const std::vector<std::size_t>& steps, Var noise_rows) {
    if (steps.size() != x0_rows.rows()) throw ContractViolation("forward_sample_rows: one step per row required");
    std::vector<std::size_t> index(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i] < 1 || steps[i] > alpha_bar.value().size())
            throw ContractViolation("forward_sample_rows: step out of range");
        index[i] = steps[i] - 1;
    }
    Var ab = ad::gather(alpha_bar, std::move(index));
    Var keep = ad::sqrt(ab);
    Var spread = ad::sqrt(ad::add_scalar(ad::neg(ab), 1.0));
    return ad::add(ad::mul_col(x0_rows, keep), ad::mul_col(noise_rows, spread));
}

/// Expand one step per instance to one step per row.
inline std::vector<std::size_t> steps_per_row(const std::vector<std::size_t>& per_instance, std::size_t channels) {
    std::vector<std::size_t> rows;
    rows.reserve(per_instance.size() * channels);
    for (std::size_t t : per_instance)
        for (std::size_t c = 0; c < channels; ++c) rows.push_back(t);
    return rows;
}

}  // namespace diffusion

/// Mean of the x0-parameterised reverse transition (standard DDPM posterior):
///     mu = sqrt(ab_{t-1}) beta_t / (1 - ab_t) * x0_hat + sqrt(alpha_t) (1 - ab_{t-1}) / (1 - ab_t) * x_t
/// At t = 1 this is x0_hat exactly.
inline Tensor reverse_mean(const Tensor& x_t, const Tensor& x0_hat, std::size_t t, const RealizedSchedule& schedule) {
    require_same_shape(x_t, x0_hat, "reverse_mean");
    if (t < 1 || t > schedule.steps()) throw ContractViolation("reverse_mean: step out of range");
    if (t == 1) return x0_hat;
    const double ab = schedule.alpha_bar_at(t), ab_prev = schedule.alpha_bar_at(t - 1);
    const double c0 = std::sqrt(ab_prev) * schedule.beta_at(t) / (1.0 - ab);
    const double ct = std::sqrt(schedule.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab);
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0_hat[i] + ct * x_t[i];
    return out;
}

struct IsotropicGaussian {
    Tensor mean;
    double variance = 1.0;
};

/// KL(p || q) between N(mu_p, v_p I) and N(mu_q, v_q I) in R^D:
///     0.5 [ D (v_p/v_q - 1 - log(v_p/v_q)) + |mu_p - mu_q|^2 / v_q ]
inline double kl_isotropic(const IsotropicGaussian& p, const IsotropicGaussian& q, std::size_t dim) {
    if (!(p.variance > 0.0) || !(q.variance > 0.0)) throw ContractViolation("kl_isotropic: variance must be > 0");
    if (p.mean.size() != dim || q.mean.size() != dim) throw ContractViolation("kl_isotropic: mean dimension mismatch");
    const double r = p.variance / q.variance;
    double dist = 0.0;
    for (std::size_t i = 0; i < dim; ++i) dist += (p.mean[i] - q.mean[i]) * (p.mean[i] - q.mean[i]);
    return 0.5 * (static_cast<double>(dim) * (r - 1.0 - std::log(r)) + dist / q.variance);
}

struct DriftBound {
    double kl = 0.0;        // KL(q_{beta'}(x_t|x0) || q_beta(x_t|x0))
    double bound = 0.0;     // constant * |beta' - beta|_inf^2
    double constant = 0.0;  // (t/(1-beta_max))^2 [D(1-a)^2/(4a^4) + |x0|^2/(8a^2)]
};

/// Forward-marginal drift between two schedules at step t and the closed-form
/// bound on it. Throws PreconditionViolation when the bound's hypotheses fail.
inline DriftBound drift_bound(const Tensor& beta, const Tensor& beta_prime, std::size_t t, const Tensor& x0, double a,
                              double beta_max) {
    if (beta.size() != beta_prime.size() || beta.empty()) throw ContractViolation("drift_bound: schedule size mismatch");
    if (t < 1 || t > beta.size()) throw ContractViolation("drift_bound: step out of range");
    if (!(a > 0.0 && a < 0.5)) throw PreconditionViolation("drift_bound: a must lie in (0, 1/2)");
    if (!(beta_max < 1.0)) throw PreconditionViolation("drift_bound: beta_max must be < 1");
    double ab = 1.0, abp = 1.0, sup = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) {
        if (beta[i] <= 0.0 || beta_prime[i] <= 0.0 || beta[i] > beta_max || beta_prime[i] > beta_max)
            throw PreconditionViolation("drift_bound: schedule entry outside (0, beta_max]");
        if (i < t) {
            ab *= 1.0 - beta[i];
            abp *= 1.0 - beta_prime[i];
        }
        sup = std::max(sup, std::abs(beta_prime[i] - beta[i]));
    }
    if (ab < a || ab > 1.0 - a || abp < a || abp > 1.0 - a)
        throw PreconditionViolation("drift_bound: alpha_bar_t outside [a, 1 - a]");

    const std::size_t dim = x0.size();
    IsotropicGaussian p{Tensor({dim}), 1.0 - abp}, q{Tensor({dim}), 1.0 - ab};
    double x0_sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        p.mean[i] = std::sqrt(abp) * x0[i];
        q.mean[i] = std::sqrt(ab) * x0[i];
        x0_sq += x0[i] * x0[i];
    }
    DriftBound out;
    out.kl = kl_isotropic(p, q, dim);
    const double lead = static_cast<double>(t) / (1.0 - beta_max);
    out.constant = lead * lead *
                   (static_cast<double>(dim) * (1.0 - a) * (1.0 - a) / (4.0 * std::pow(a, 4)) + x0_sq / (8.0 * a * a));
    out.bound = out.constant * sup * sup;
    return out;
}

/// S sampled trajectories of one instance, in normalised space, plus the
/// statistics needed to return to the original scale.
struct ForecastDistribution {
    Tensor samples;  // S x H x d
    NormStats stats;
    std::vector<std::size_t> failed_chains;

    std::size_t sample_count() const { return samples.shape()[0]; }
    Tensor denormalized() const { return denormalize(samples, stats); }
};

/// Predicts x0 for every row of x_t (chains * d rows, H columns) at step t.
/// `chains[s]` is the private random stream of chain s.
using DenoiseFn = std::function<Tensor(const Tensor& x_t_rows, std::size_t t, std::span<RandomSource> chains)>;

/// Builds a DenoiseFn bound to one normalised history window (L x d).
using Conditioner = std::function<DenoiseFn(const Tensor& c0_normalized)>;

struct SamplingOptions {
    bool clip_x0 = false;
    double clip_value = 5.0;
    double max_failed_fraction = 0.01;
};

/// Ancestral sampling x_T -> x_0 for one history window given in original scale.
///
/// Chain streams: one key k = rng.next_u64() is drawn per call and chain s uses
/// RandomSource(k).split(s). Each chain draws its x_T (d x H, channel-major)
/// first, then, at every step t > 1, d x H fresh normals for the transition
/// noise after the denoiser has drawn whatever it needs.
inline ForecastDistribution ancestral_sample(const Conditioner& conditioner, const Tensor& c0, std::size_t horizon,
                                             const RealizedSchedule& schedule, std::size_t num_samples,
                                             RandomSource& rng, const SamplingOptions& options = {}) {
    if (num_samples < 1) throw ContractViolation("ancestral_sample: need at least one sample");
    const std::size_t d = c0.cols();
    NormStats stats = history_stats(c0);
    const DenoiseFn denoise = conditioner(normalize_with(c0, stats));

    const RandomSource root(rng.next_u64());
    std::vector<RandomSource> chains;
    chains.reserve(num_samples);
    for (std::size_t s = 0; s < num_samples; ++s) chains.push_back(root.split(s));

    const std::size_t rows = num_samples * d;
    Tensor x({rows, horizon});
    for (std::size_t s = 0; s < num_samples; ++s)
        for (std::size_t i = 0; i < d * horizon; ++i) x[s * d * horizon + i] = chains[s].normal();

    std::vector<char> failed(num_samples, 0);
    for (std::size_t t = schedule.steps(); t >= 1; --t) {
        Tensor x0_hat = denoise(x, t, chains);
        if (x0_hat.shape() != x.shape()) throw ContractViolation("ancestral_sample: denoiser changed shape");
        if (options.clip_x0)
            for (double& v : x0_hat.values()) v = std::clamp(v, -options.clip_value, options.clip_value);
        x = reverse_mean(x, x0_hat, t, schedule);
        if (t > 1) {
            const double sigma = std::sqrt(schedule.sigma_sq_at(t));
            for (std::size_t s = 0; s < num_samples; ++s)
                for (std::size_t i = 0; i < d * horizon; ++i) x[s * d * horizon + i] += sigma * chains[s].normal();
        }
        for (std::size_t s = 0; s < num_samples; ++s) {
            bool bad = failed[s] != 0;
            for (std::size_t i = 0; i < d * horizon && !bad; ++i) bad = !std::isfinite(x[s * d * horizon + i]);
            if (bad) {
                failed[s] = 1;
                for (std::size_t i = 0; i < d * horizon; ++i) x[s * d * horizon + i] = 0.0;
            }
        }
    }

    ForecastDistribution out;
    out.stats = std::move(stats);
    for (std::size_t s = 0; s < num_samples; ++s)
        if (failed[s]) out.failed_chains.push_back(s);
    if (static_cast<double>(out.failed_chains.size()) > options.max_failed_fraction * static_cast<double>(num_samples))
        throw NumericFailure("ancestral_sample", std::to_string(out.failed_chains.size()) + " of " +
                                                     std::to_string(num_samples) + " chains produced NaN");
    const std::size_t kept = num_samples - out.failed_chains.size();
    out.samples = Tensor({kept, horizon, d});
    std::size_t k = 0;
    for (std::size_t s = 0; s < num_samples; ++s) {
        if (failed[s]) continue;
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t h = 0; h < horizon; ++h) out.samples(k, h, c) = x(s * d + c, h);
        ++k;
    }
    return out;
}

}  // namespace stats
