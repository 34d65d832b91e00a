#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "stats/autodiff.hpp"
#include "stats/denoiser.hpp"
#include "stats/diffusion.hpp"
#include "stats/random.hpp"
#include "stats/schedule.hpp"
#include "stats/spectral.hpp"
#include "stats/window.hpp"

namespace stats {

struct ScheduleConfig {
    std::size_t steps = 50;
    std::size_t embed_dim = 64;
    std::size_t hidden = 64;
    double eps = 1e-5;
    ScheduleTemplate base = ScheduleTemplate::linear;
    double beta_start = 1e-5;
    double beta_end = 0.1;
    ReverseVariance variance = ReverseVariance::posterior;

    void validate() const {
        if (steps < 1) throw ContractViolation("schedule: steps must be >= 1");
        if (!(eps > 0.0 && eps < 0.5)) throw ContractViolation("schedule: eps must lie in (0, 0.5)");
        if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
            throw ContractViolation("schedule: template endpoints must satisfy 0 < start <= end < 1");
    }
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Per-step logit offset added to the MLP output, T x 1. For a template this is
/// logit(template beta); for `none` it is a constant logit of the template
/// midpoint so an untrained schedule still starts in a sane range.
inline Tensor template_logits(const ScheduleConfig& cfg) {
    Tensor out({cfg.steps, 1});
    if (cfg.base == ScheduleTemplate::none) {
        out.fill(logit(0.5 * (cfg.beta_start + cfg.beta_end)));
        return out;
    }
    const std::vector<double> beta = template_betas(cfg.base, cfg.steps, cfg.beta_start, cfg.beta_end);
    for (std::size_t i = 0; i < cfg.steps; ++i)
        out[i] = logit(std::clamp(beta[i], cfg.eps, 1.0 - cfg.eps));
    return out;
}

/// beta(t) = clamp(sigmoid(f(s_t) + offset_t), eps, 1 - eps) with
/// f(s) = w2 silu(w1 s + b1) + b2.
template <typename T>
struct ScheduleFields {
    T w1, b1;  // hidden x embed, 1 x hidden
    T w2, b2;  // 1 x hidden, 1 x 1

    template <typename F>
    void visit(F&& f) {
        f("sts.w1", w1);
        f("sts.b1", b1);
        f("sts.w2", w2);
        f("sts.b2", b2);
    }
    template <typename F>
    void visit(F&& f) const {
        f("sts.w1", w1);
        f("sts.b1", b1);
        f("sts.w2", w2);
        f("sts.b2", b2);
    }
};

using ScheduleVars = ScheduleFields<Var>;

struct ScheduleParams : ScheduleFields<Tensor> {
    ScheduleConfig config;

    std::vector<Tensor*> tensors() { return {&w1, &b1, &w2, &b2}; }

    /// Hidden layer ~ U(+-1/sqrt(embed)); output layer zero so the realized
    /// schedule equals the template exactly before training.
    static ScheduleParams init(const ScheduleConfig& cfg, RandomSource& rng) {
        cfg.validate();
        ScheduleParams p;
        p.config = cfg;
        const double k = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
        p.w1 = Tensor({cfg.hidden, cfg.embed_dim});
        p.b1 = Tensor({1, cfg.hidden});
        for (Tensor* t : {&p.w1, &p.b1})
            for (double& v : t->values()) v = (2.0 * rng.uniform() - 1.0) * k;
        p.w2 = Tensor({1, cfg.hidden});
        p.b2 = Tensor({1, 1});
        return p;
    }

    /// Like init, but the output layer is also drawn, ~ U(+-scale/sqrt(hidden)).
    static ScheduleParams random(const ScheduleConfig& cfg, RandomSource& rng, double scale = 1.0) {
        ScheduleParams p = init(cfg, rng);
        const double k = scale / std::sqrt(static_cast<double>(cfg.hidden));
        for (Tensor* t : {&p.w2, &p.b2})
            for (double& v : t->values()) v = (2.0 * rng.uniform() - 1.0) * k;
        return p;
    }
};

inline ScheduleVars bind(Tape& tape, const ScheduleParams& p, bool trainable) {
    auto mk = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
    return {mk(p.w1), mk(p.b1), mk(p.w2), mk(p.b2)};
}

inline std::vector<Var> vars_of(const ScheduleVars& v) { return {v.w1, v.b1, v.w2, v.b2}; }

/// Differentiable realized schedule; both tensors are 1 x T.
struct ScheduleGraph {
    Var beta;
    Var alpha_bar;
};

inline ScheduleGraph realize(Tape& tape, const ScheduleVars& w, const ScheduleConfig& cfg) {
    cfg.validate();
    Var emb = tape.constant(step_embedding(cfg.steps, cfg.embed_dim));
    Var out = ad::affine(ad::silu(ad::affine(emb, w.w1, w.b1)), w.w2, w.b2);  // T x 1
    Var logits = ad::add(out, tape.constant(template_logits(cfg)));
    Var beta = ad::reshape(ad::clamp(ad::sigmoid(logits), cfg.eps, 1.0 - cfg.eps), {1, cfg.steps});
    Var log_alpha = ad::log(ad::add_scalar(ad::neg(beta), 1.0));
    return {beta, ad::exp(ad::cumsum_cols(log_alpha))};
}

inline RealizedSchedule realize_schedule(const ScheduleParams& params) {
    Tape tape;
    ScheduleGraph g = realize(tape, bind(tape, params, false), params.config);
    const auto& b = g.beta.value().values();
    const auto& ab = g.alpha_bar.value().values();
    return complete_schedule({b.begin(), b.end()}, {ab.begin(), ab.end()}, params.config.variance);
}

// --- Regularizers on a 1 x T beta row. ---

inline Var barrier_loss(Var beta) {
    const std::size_t n = beta.value().size();
    if (n < 2) throw ContractViolation("barrier_loss: T must be >= 2");
    Var row = ad::reshape(beta, {1, n});
    return ad::neg(ad::mean(ad::log(ad::slice_cols(row, 1, n))));
}

inline Var smoothness_loss(Var beta) {
    const std::size_t n = beta.value().size();
    if (n < 2) throw ContractViolation("smoothness_loss: T must be >= 2");
    Var row = ad::reshape(beta, {1, n});
    return ad::sum(ad::square(ad::sub(ad::slice_cols(row, 1, n), ad::slice_cols(row, 0, n - 1))));
}

inline Var init_loss(Var beta) {
    Var row = ad::reshape(beta, {1, beta.value().size()});
    return ad::square(ad::slice_cols(row, 0, 1));
}

inline double barrier_loss(const Tensor& beta) {
    Tape tape;
    return barrier_loss(tape.constant(beta)).value().item();
}
inline double smoothness_loss(const Tensor& beta) {
    Tape tape;
    return smoothness_loss(tape.constant(beta)).value().item();
}

/// Batch-mean KL between the spectral mass of x_T rows and uniform over the
/// K = H/2 + 1 bins of the target window.
inline Var endpoint_kl(Var xT_rows, std::size_t channels) {
    Var power = spectral::channel_power(xT_rows, channels);
    return ad::mean(spectral::kl_uniform_of_mass(spectral::mass_of_power(power)));
}

/// Batch-mean spectral flatness per instance (B x 1) of row-layout signals.
inline Var flatness_rows(Var x_rows, std::size_t channels) {
    return spectral::flatness_of_power(spectral::channel_power(x_rows, channels));
}

/// mean_b (SF(x_t_b) - [(1 - t_b/T) SF(x0_b) + (t_b/T) SF(xT_b)])^2.
inline Var progression_term(Var sf_t, Var sf_0, Var sf_T, const std::vector<std::size_t>& steps, std::size_t total) {
    Tensor gamma({steps.size(), 1});
    for (std::size_t b = 0; b < steps.size(); ++b) gamma[b] = static_cast<double>(steps[b]) / static_cast<double>(total);
    Tape& tape = *sf_t.tape();
    Var g = tape.constant(gamma);
    Var target = ad::add(sf_0, ad::mul(g, ad::sub(sf_T, sf_0)));
    return ad::mean(ad::square(ad::sub(sf_t, target)));
}

struct StsWeights {
    double bar = 5e-3;
    double end = 0.5;
    double init = 0.5;
    double prog = 0.5;
    double smooth = 5.0;
    double obj = 0.01;

    void validate() const {
        for (double w : {bar, end, init, prog, smooth, obj})
            if (!(w >= 0.0) || !std::isfinite(w)) throw ContractViolation("sts weights must be finite and nonnegative");
    }
};

/// Random draws for one scheduler-loss evaluation, in draw order: one step
/// per instance for the progression term, the terminal noise shared by the
/// endpoint and progression terms (B*d x H), then the objective draws.
struct StsDraws {
    std::vector<std::size_t> prog_steps;
    Tensor noise;
    ObjectiveDraws objective;
};

inline StsDraws draw_sts(RandomSource& rng, const WindowBatch& batch, std::size_t steps) {
    StsDraws d;
    d.prog_steps.resize(batch.instances);
    for (auto& t : d.prog_steps) t = 1 + static_cast<std::size_t>(rng.uniform_index(steps));
    d.noise = sample_standard_normal(rng, batch.target.shape());
    d.objective = draw_objective(rng, batch, steps);
    return d;
}

struct StsTermVars {
    Var bar, end, init, prog, smooth, obj, total;
};

struct StsTerms {
    double bar = 0, end = 0, init = 0, prog = 0, smooth = 0, obj = 0, total = 0;
};

/// Builds every scheduler term on `tape`. The denoiser enters as constants.
inline StsTermVars sts_graph(Tape& tape, const ScheduleVars& sv, const ScheduleConfig& scfg, const StsWeights& weights,
                             const WindowBatch& batch, const FgdParams& fgd, const StsDraws& draws) {
    weights.validate();
    if (!batch.normalized) throw ContractViolation("sts loss: batch must be instance-normalised");
    if (fgd.config.steps != scfg.steps) throw ContractViolation("sts loss: denoiser and schedule disagree on T");
    const std::size_t total = scfg.steps, d = batch.channels;
    ScheduleGraph g = realize(tape, sv, scfg);

    StsTermVars t;
    t.bar = barrier_loss(g.beta);
    t.smooth = smoothness_loss(g.beta);
    t.init = init_loss(g.beta);

    Var x0 = tape.constant(batch.target);
    Var noise = tape.constant(draws.noise);
    Var xT = diffusion::forward_sample_rows(x0, g.alpha_bar, std::vector<std::size_t>(batch.rows(), total), noise);
    t.end = endpoint_kl(xT, d);

    Var xt = diffusion::forward_sample_rows(x0, g.alpha_bar, diffusion::steps_per_row(draws.prog_steps, d), noise);
    t.prog = progression_term(flatness_rows(xt, d), flatness_rows(x0, d), flatness_rows(xT, d), draws.prog_steps, total);

    FgdVars frozen = bind(tape, fgd, false);
    t.obj = objective_loss(tape, frozen, fgd.config, batch, g.alpha_bar, draws.objective);

    t.total = ad::add(
        ad::add(ad::add(ad::scale(t.bar, weights.bar), ad::scale(t.end, weights.end)),
                ad::add(ad::scale(t.init, weights.init), ad::scale(t.prog, weights.prog))),
        ad::add(ad::scale(t.smooth, weights.smooth), ad::scale(t.obj, weights.obj)));
    return t;
}

inline StsTerms terms_of(const StsTermVars& v) {
    return {v.bar.value().item(),    v.end.value().item(), v.init.value().item(), v.prog.value().item(),
            v.smooth.value().item(), v.obj.value().item(), v.total.value().item()};
}

struct StsResult {
    StsTerms terms;
    std::vector<Tensor> grads;  // w1, b1, w2, b2
};

inline StsResult sts_total_loss(const ScheduleParams& params, const StsWeights& weights, const WindowBatch& batch,
                                const FgdParams& fgd, const StsDraws& draws) {
    Tape tape;
    ScheduleVars sv = bind(tape, params, true);
    StsTermVars t = sts_graph(tape, sv, params.config, weights, batch, fgd, draws);
    const std::vector<Var> wrt = vars_of(sv);
    auto [value, grads] = evaluate_with_gradients(t.total, wrt);
    (void)value;
    return {terms_of(t), std::move(grads)};
}

inline StsResult sts_total_loss(const ScheduleParams& params, const StsWeights& weights, const WindowBatch& batch,
                                const FgdParams& fgd, RandomSource& rng) {
    return sts_total_loss(params, weights, batch, fgd, draw_sts(rng, batch, params.config.steps));
}

inline StsTerms sts_terms(const ScheduleParams& params, const StsWeights& weights, const WindowBatch& batch,
                          const FgdParams& fgd, const StsDraws& draws) {
    Tape tape;
    return terms_of(sts_graph(tape, bind(tape, params, false), params.config, weights, batch, fgd, draws));
}

// --- Projected gradient mode on a raw beta vector. ---

struct PgdStep {
    Tensor beta;
    Tensor mapping;  // (beta_k - beta_{k+1}) / eta

    double mapping_norm() const { return std::sqrt(squared_norm(mapping)); }
};

inline PgdStep pgd_step(const Tensor& beta, const Tensor& grad, double eta, double beta_min, double beta_max) {
    if (!(beta_min < beta_max)) throw ContractViolation("pgd_step: beta_min must be < beta_max");
    if (!(eta > 0.0)) throw ContractViolation("pgd_step: eta must be > 0");
    require_same_shape(beta, grad, "pgd_step");
    PgdStep s{Tensor(beta.shape()), Tensor(beta.shape())};
    for (std::size_t i = 0; i < beta.size(); ++i) {
        if (beta[i] < beta_min || beta[i] > beta_max) throw ContractViolation("pgd_step: beta outside bounds");
        s.beta[i] = std::clamp(beta[i] - eta * grad[i], beta_min, beta_max);
        s.mapping[i] = (beta[i] - s.beta[i]) / eta;
    }
    return s;
}

/// R(b) = 1/2 (b - c)^T A (b - c) with A = Q diag(lambda) Q^T; smoothness L = max lambda.
struct QuadraticObjective {
    Tensor a;       // T x T
    Tensor center;  // T
    double smoothness = 0.0;

    double value(const Tensor& b) const {
        const std::size_t n = center.size();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) acc += (b[i] - center[i]) * a(i, j) * (b[j] - center[j]);
        return 0.5 * acc;
    }
    Tensor gradient(const Tensor& b) const {
        const std::size_t n = center.size();
        Tensor g({n});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i] += a(i, j) * (b[j] - center[j]);
        return g;
    }

    /// Random orthogonal Q (Gram-Schmidt), eigenvalues in [l_min, l_max] with l_max attained.
    static QuadraticObjective random(std::size_t n, double l_min, double l_max, const Tensor& center,
                                     RandomSource& rng) {
        std::vector<std::vector<double>> q;
        while (q.size() < n) {
            std::vector<double> v(n);
            for (double& x : v) x = rng.normal();
            for (const auto& u : q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += u[i] * v[i];
                for (std::size_t i = 0; i < n; ++i) v[i] -= dot * u[i];
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-8) continue;
            for (double& x : v) x /= norm;
            q.push_back(std::move(v));
        }
        std::vector<double> lambda(n);
        for (std::size_t k = 0; k < n; ++k) lambda[k] = k == 0 ? l_max : l_min + (l_max - l_min) * rng.uniform();
        QuadraticObjective r{Tensor({n, n}), center, l_max};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k) acc += q[k][i] * lambda[k] * q[k][j];
                r.a(i, j) = acc;
            }
        return r;
    }
};

struct PgdTrace {
    std::vector<double> objective;     // R(beta_k), k = 0..iterations
    std::vector<double> mapping_norm;  // ||G(beta_k)||, k = 0..iterations-1
    std::vector<double> descent_gap;   // R_k - R_{k+1} - eta/2 ||G_k||^2, should be >= 0
    Tensor beta;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Runs PGD until ||G|| < tol or max_iter steps.
inline PgdTrace run_pgd(const QuadraticObjective& r, Tensor beta, double eta, double beta_min, double beta_max,
                        double tol, std::size_t max_iter) {
    PgdTrace tr;
    tr.objective.push_back(r.value(beta));
    for (std::size_t k = 0; k < max_iter; ++k) {
        PgdStep s = pgd_step(beta, r.gradient(beta), eta, beta_min, beta_max);
        const double gn = s.mapping_norm();
        tr.mapping_norm.push_back(gn);
        beta = std::move(s.beta);
        tr.objective.push_back(r.value(beta));
        tr.descent_gap.push_back(tr.objective[k] - tr.objective[k + 1] - 0.5 * eta * gn * gn);
        tr.iterations = k + 1;
        if (gn < tol) {
            tr.converged = true;
            break;
        }
    }
    tr.beta = std::move(beta);
    return tr;
}

/// Batch-mean spectral flatness of x_t for t = 0..T (x_0 itself at t = 0),
/// with one noise draw reused across steps. `rows` is in row layout.
inline std::vector<double> flatness_trajectory(const Tensor& rows, std::size_t channels,
                                               const RealizedSchedule& schedule, RandomSource& rng) {
    const Tensor noise = sample_standard_normal(rng, rows.shape());
    std::vector<double> out;
    for (std::size_t t = 0; t <= schedule.steps(); ++t) {
        Tensor xt = rows;
        if (t > 0) {
            const double keep = std::sqrt(schedule.alpha_bar_at(t)), spread = std::sqrt(1.0 - schedule.alpha_bar_at(t));
            for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = keep * rows[i] + spread * noise[i];
        }
        Tape tape;
        out.push_back(ad::mean(flatness_rows(tape.constant(std::move(xt)), channels)).value().item());
    }
    return out;
}

/// `t beta alpha alpha_bar sigma_sq`, one line per step, 17 significant digits.
inline void write_schedule(std::ostream& os, const RealizedSchedule& s) {
    const auto old = os.precision(17);
    for (std::size_t t = 1; t <= s.steps(); ++t)
        os << t << ' ' << s.beta_at(t) << ' ' << s.alpha_at(t) << ' ' << s.alpha_bar_at(t) << ' ' << s.sigma_sq_at(t)
           << '\n';
    os.precision(old);
}

}  // namespace stats
