#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "stats/autodiff.hpp"
#include "stats/diffusion.hpp"
#include "stats/random.hpp"
#include "stats/schedule.hpp"
#include "stats/spectral.hpp"
#include "stats/window.hpp"

namespace stats {

struct FgdConfig {
    std::size_t history_length = 168;
    std::size_t horizon = 24;
    std::size_t steps = 50;
    std::size_t bands = 2;
    std::size_t hidden = 128;
    std::size_t gate_hidden = 64;
    std::size_t embed_dim = 64;
    double r_min = -10.0;
    double r_max = 10.0;
    double eps_r = 1e-6;

    std::size_t bins() const { return one_sided_bins(history_length); }
};

/// Contiguous near-equal bands covering [0, F): the first F % B bands get one
/// extra bin. Returns [begin, end) pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> band_partition(std::size_t bins, std::size_t bands) {
    if (bands == 0 || bands > bins) throw ContractViolation("band_partition: need 1 <= B <= F");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const std::size_t base = bins / bands, extra = bins % bands;
    std::size_t begin = 0;
    for (std::size_t b = 0; b < bands; ++b) {
        const std::size_t width = base + (b < extra ? 1 : 0);
        out.emplace_back(begin, begin + width);
        begin += width;
    }
    return out;
}

/// Trainable weights of the frequency guided denoiser, generic over the
/// element type so the same layout serves stored tensors and bound tape nodes.
template <typename T>
struct FgdFields {
    // Anchor branch (history spectrum -> deterministic forecast).
    T gate_a, gate_b;                   // 1 x F
    std::vector<T> band_re, band_im;    // per band, 1 x F_b
    T anchor_head;                      // H x L, bias-free
    // Distortion gate: F -> gate_hidden -> H, shared across channels.
    T dgate_w1, dgate_b1, dgate_w2, dgate_b2;
    // Backbone.
    T raw_w, raw_b;                     // hidden x H, 1 x hidden
    T guided_w;                         // hidden x H, bias-free
    T film1_scale_w, film1_scale_b, film1_shift_w, film1_shift_b;
    T film2_scale_w, film2_scale_b, film2_shift_w, film2_shift_b;
    T refine_w, refine_b;               // hidden x hidden
    T head_w, head_b;                   // H x hidden
    T fusion_logit;                     // 1 x 1, omega = sigmoid(fusion_logit)

    template <typename F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <typename F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }

private:
    template <typename Self, typename F>
    static void visit_impl(Self& s, F& f) {
        f("gate_a", s.gate_a);
        f("gate_b", s.gate_b);
        for (std::size_t b = 0; b < s.band_re.size(); ++b) {
            f("band_re." + std::to_string(b), s.band_re[b]);
            f("band_im." + std::to_string(b), s.band_im[b]);
        }
        f("anchor_head", s.anchor_head);
        f("dgate_w1", s.dgate_w1);
        f("dgate_b1", s.dgate_b1);
        f("dgate_w2", s.dgate_w2);
        f("dgate_b2", s.dgate_b2);
        f("raw_w", s.raw_w);
        f("raw_b", s.raw_b);
        f("guided_w", s.guided_w);
        f("film1_scale_w", s.film1_scale_w);
        f("film1_scale_b", s.film1_scale_b);
        f("film1_shift_w", s.film1_shift_w);
        f("film1_shift_b", s.film1_shift_b);
        f("film2_scale_w", s.film2_scale_w);
        f("film2_scale_b", s.film2_scale_b);
        f("film2_shift_w", s.film2_shift_w);
        f("film2_shift_b", s.film2_shift_b);
        f("refine_w", s.refine_w);
        f("refine_b", s.refine_b);
        f("head_w", s.head_w);
        f("head_b", s.head_b);
        f("fusion_logit", s.fusion_logit);
    }
};

using FgdVars = FgdFields<Var>;

struct FgdParams : FgdFields<Tensor> {
    FgdConfig config;

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
        return out;
    }
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        visit([&](const std::string& n, const Tensor&) { out.push_back(n); });
        return out;
    }

    /// Linear maps and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn in visit
    /// order. Gate affine a = b = 0, band gains 1 + 0i, FiLM scale bias 1, shift
    /// bias 0, fusion logit 0.
    static FgdParams init(const FgdConfig& cfg, RandomSource& rng) {
        FgdParams p;
        p.config = cfg;
        const std::size_t f = cfg.bins(), h = cfg.horizon, l = cfg.history_length, hid = cfg.hidden,
                          gh = cfg.gate_hidden, e = cfg.embed_dim;
        auto uniform = [&](Shape shape, std::size_t fan_in) {
            Tensor t(std::move(shape));
            const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * k;
            return t;
        };
        p.gate_a = Tensor({1, f});
        p.gate_b = Tensor({1, f});
        for (auto [b0, b1] : band_partition(f, cfg.bands)) {
            p.band_re.emplace_back(Shape{1, b1 - b0}, 1.0);
            p.band_im.emplace_back(Shape{1, b1 - b0}, 0.0);
        }
        p.anchor_head = uniform({h, l}, l);
        p.dgate_w1 = uniform({gh, f}, f);
        p.dgate_b1 = uniform({1, gh}, f);
        p.dgate_w2 = uniform({h, gh}, gh);
        p.dgate_b2 = uniform({1, h}, gh);
        p.raw_w = uniform({hid, h}, h);
        p.raw_b = uniform({1, hid}, h);
        p.guided_w = uniform({hid, h}, h);
        p.film1_scale_w = uniform({hid, e}, e);
        p.film1_scale_b = Tensor({1, hid}, 1.0);
        p.film1_shift_w = uniform({hid, e}, e);
        p.film1_shift_b = Tensor({1, hid});
        p.film2_scale_w = uniform({hid, e}, e);
        p.film2_scale_b = Tensor({1, hid}, 1.0);
        p.film2_shift_w = uniform({hid, e}, e);
        p.film2_shift_b = Tensor({1, hid});
        p.refine_w = uniform({hid, hid}, hid);
        p.refine_b = uniform({1, hid}, hid);
        p.head_w = uniform({h, hid}, hid);
        p.head_b = uniform({1, h}, hid);
        p.fusion_logit = Tensor({1, 1});
        return p;
    }

    double omega() const { return ad::sigmoid_value(fusion_logit[0]); }
};

/// Put every parameter on the tape, as variables (trainable) or constants (frozen).
inline FgdVars bind(Tape& tape, const FgdParams& p, bool trainable) {
    FgdVars v;
    v.band_re.resize(p.band_re.size());
    v.band_im.resize(p.band_im.size());
    std::vector<Var> made;
    p.visit([&](const std::string&, const Tensor& t) {
        made.push_back(trainable ? tape.variable(t) : tape.constant(t));
    });
    std::size_t i = 0;
    v.visit([&](const std::string&, Var& slot) { slot = made[i++]; });
    return v;
}

inline std::vector<Var> vars_of(const FgdVars& v) {
    std::vector<Var> out;
    v.visit([&](const std::string&, const Var& x) { out.push_back(x); });
    return out;
}

namespace fgd {

struct AnchorOutput {
    Var filtered;  // N x L, iRFFT of the reweighted spectrum
    Var forecast;  // N x H
    Var gate;      // B x F, magnitude gate g_f
};

/// Frequency anchor for history rows (B*d) x L.
inline AnchorOutput anchor(Tape& tape, const FgdVars& w, const FgdConfig& cfg, const Tensor& c0_rows,
                           std::size_t channels) {
    const std::size_t len = c0_rows.cols();
    if (len != cfg.history_length) throw ContractViolation("freq_anchor: history length mismatch");
    spectral::RowSpectrum spec = spectral::rdft_rows(tape.constant(c0_rows));
    const std::size_t n = c0_rows.rows(), f = spec.re.cols();

    // e(f) = log(1 + channel average of |C(f, .)|)
    const std::size_t b = n / channels;
    Tensor energy({b, f});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < f; ++k)
            energy(r / channels, k) += std::hypot(spec.re.value()(r, k), spec.im.value()(r, k)) / static_cast<double>(channels);
    for (double& v : energy.values()) v = std::log1p(v);

    Var gate = ad::sigmoid(ad::add_row(ad::mul_row(tape.constant(energy), w.gate_a), w.gate_b));
    Var gate_rows = ad::repeat_rows(gate, channels);

    std::vector<Var> re_parts, im_parts;
    const auto bands = band_partition(f, w.band_re.size());
    for (std::size_t i = 0; i < bands.size(); ++i) {
        const auto [lo, hi] = bands[i];
        Var re = ad::slice_cols(spec.re, lo, hi), im = ad::slice_cols(spec.im, lo, hi);
        Var g = ad::slice_cols(gate_rows, lo, hi);
        const Var& hr = w.band_re[i];
        const Var& hi_ = w.band_im[i];
        re_parts.push_back(ad::mul(g, ad::sub(ad::mul_row(re, hr), ad::mul_row(im, hi_))));
        im_parts.push_back(ad::mul(g, ad::add(ad::mul_row(im, hr), ad::mul_row(re, hi_))));
    }
    Var filtered = spectral::irdft_rows(ad::concat_cols(re_parts), ad::concat_cols(im_parts), len);
    return {filtered, ad::matmul_nt(filtered, w.anchor_head), gate};
}

/// Clipped relative change of per-bin magnitude between clean and corrupted
/// history rows; N x F.
inline Var distortion(Tape& tape, const FgdConfig& cfg, const Tensor& c0_rows, Var ct_rows) {
    spectral::RowSpectrum clean = spectral::rdft_rows(tape.constant(c0_rows));
    const Tensor& re0 = clean.re.value();
    const Tensor& im0 = clean.im.value();
    Tensor mag0(re0.shape()), inv(re0.shape());
    for (std::size_t i = 0; i < mag0.size(); ++i) {
        mag0[i] = std::hypot(re0[i], im0[i]);
        inv[i] = 1.0 / (mag0[i] + cfg.eps_r);
    }
    spectral::RowSpectrum noisy = spectral::rdft_rows(ct_rows);
    Var ratio = ad::mul(ad::sub(ad::magnitude(noisy.re, noisy.im), tape.constant(std::move(mag0))),
                        tape.constant(std::move(inv)));
    return ad::clamp(ratio, cfg.r_min, cfg.r_max);
}

struct DiffusionBranchOutput {
    Var gate;      // N x H, g_t
    Var forecast;  // N x H
};

/// Spectral-conditioned denoising branch. `steps` holds the 1-based step of every row.
inline DiffusionBranchOutput diffusion_branch(Tape& tape, const FgdVars& w, const FgdConfig& cfg, Var xt_rows,
                                              const std::vector<std::size_t>& steps, Var distortion_rows) {
    Var gate = ad::sigmoid(ad::affine(ad::silu(ad::affine(distortion_rows, w.dgate_w1, w.dgate_b1)), w.dgate_w2, w.dgate_b2));
    Var guided = ad::mul(xt_rows, gate);
    Var h0 = ad::add(ad::affine(xt_rows, w.raw_w, w.raw_b), ad::matmul_nt(guided, w.guided_w));

    std::vector<std::size_t> index(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (steps[i] < 1 || steps[i] > cfg.steps) throw ContractViolation("denoise: step out of range");
        index[i] = steps[i] - 1;
    }
    Var emb = tape.constant(step_embedding(cfg.steps, cfg.embed_dim));
    auto film = [&](Var h, const Var& sw, const Var& sb, const Var& hw, const Var& hb) {
        Var scale = ad::gather_rows(ad::affine(emb, sw, sb), index);
        Var shift = ad::gather_rows(ad::affine(emb, hw, hb), index);
        return ad::silu(ad::add(ad::mul(scale, h), shift));
    };
    Var h1 = film(h0, w.film1_scale_w, w.film1_scale_b, w.film1_shift_w, w.film1_shift_b);
    Var h2 = film(h1, w.film2_scale_w, w.film2_scale_b, w.film2_shift_w, w.film2_shift_b);
    Var refined = ad::affine(h2, w.refine_w, w.refine_b);
    return {gate, ad::affine(refined, w.head_w, w.head_b)};
}

/// omega * x_freq + (1 - omega) * x_diff with omega = sigmoid(fusion_logit).
inline Var fuse(Var x_freq, Var x_diff, Var fusion_logit) {
    Var omega = ad::sigmoid(fusion_logit);
    return ad::add(ad::scale_by(x_freq, omega), ad::scale_by(x_diff, ad::add_scalar(ad::neg(omega), 1.0)));
}

struct Prediction {
    AnchorOutput anchor;
    Var distortion;
    DiffusionBranchOutput diffusion;
    Var fused;
};

/// Full x0 prediction for a batch in row layout.
inline Prediction predict(Tape& tape, const FgdVars& w, const FgdConfig& cfg, const Tensor& c0_rows, Var ct_rows,
                          Var xt_rows, const std::vector<std::size_t>& steps, std::size_t channels) {
    Prediction p;
    p.anchor = anchor(tape, w, cfg, c0_rows, channels);
    p.distortion = distortion(tape, cfg, c0_rows, ct_rows);
    p.diffusion = diffusion_branch(tape, w, cfg, xt_rows, steps, p.distortion);
    p.fused = fuse(p.anchor.forecast, p.diffusion.forecast, w.fusion_logit);
    return p;
}

}  // namespace fgd

// --- Single-window convenience API (windows are N x d). ---

inline Tensor freq_anchor(const Tensor& c0, const FgdParams& params) {
    Tape tape;
    FgdVars w = bind(tape, params, false);
    const std::size_t d = c0.cols();
    return rows_to_window(fgd::anchor(tape, w, params.config, c0.transposed(), d).forecast.value(), 0, d);
}

inline Tensor spectral_distortion(const Tensor& c0, const Tensor& c_t, const FgdConfig& cfg) {
    require_same_shape(c0, c_t, "spectral_distortion");
    Tape tape;
    FgdConfig local = cfg;
    local.history_length = c0.rows();
    return fgd::distortion(tape, local, c0.transposed(), tape.constant(c_t.transposed())).value().transposed();
}

/// Diffusion-branch prediction x0_hat_diff for one window.
inline Tensor denoise(const Tensor& x_t, std::size_t t, const Tensor& c0, const Tensor& c_t, const FgdParams& params) {
    require_same_shape(c0, c_t, "denoise");
    Tape tape;
    FgdVars w = bind(tape, params, false);
    const std::size_t d = x_t.cols();
    Var r = fgd::distortion(tape, params.config, c0.transposed(), tape.constant(c_t.transposed()));
    std::vector<std::size_t> steps(d, t);
    Var out = fgd::diffusion_branch(tape, w, params.config, tape.constant(x_t.transposed()), steps, r).forecast;
    return rows_to_window(out.value(), 0, d);
}

inline Tensor fuse(const Tensor& x_freq, const Tensor& x_diff, const FgdParams& params) {
    require_same_shape(x_freq, x_diff, "fuse");
    Tape tape;
    return fgd::fuse(tape.constant(x_freq), tape.constant(x_diff), tape.constant(params.fusion_logit)).value();
}

/// Random draws behind one evaluation of the x0 objective, in draw order:
/// one uniform step per instance, then target noise (B*d x H, row-major), then
/// history noise (B*d x L).
struct ObjectiveDraws {
    std::vector<std::size_t> steps;  // per instance, 1-based
    Tensor noise_x;
    Tensor noise_c;
};

inline ObjectiveDraws draw_objective(RandomSource& rng, const WindowBatch& batch, std::size_t steps) {
    ObjectiveDraws d;
    d.steps.resize(batch.instances);
    for (auto& t : d.steps) t = 1 + static_cast<std::size_t>(rng.uniform_index(steps));
    d.noise_x = sample_standard_normal(rng, batch.target.shape());
    d.noise_c = sample_standard_normal(rng, batch.history.shape());
    return d;
}

/// Mean squared error between x0 and the fused prediction from x_t, c_t built
/// with `alpha_bar` (1 x T). Gradients reach whichever of `w` / `alpha_bar` are variables.
inline Var objective_loss(Tape& tape, const FgdVars& w, const FgdConfig& cfg, const WindowBatch& batch, Var alpha_bar,
                          const ObjectiveDraws& draws) {
    if (!batch.normalized) throw ContractViolation("objective_loss: batch must be instance-normalised");
    const std::vector<std::size_t> steps = diffusion::steps_per_row(draws.steps, batch.channels);
    Var x0 = tape.constant(batch.target);
    Var xt = diffusion::forward_sample_rows(x0, alpha_bar, steps, tape.constant(draws.noise_x));
    Var ct = diffusion::forward_sample_rows(tape.constant(batch.history), alpha_bar, steps, tape.constant(draws.noise_c));
    fgd::Prediction p = fgd::predict(tape, w, cfg, batch.history, ct, xt, steps, batch.channels);
    return ad::mean(ad::square(ad::sub(p.fused, x0)));
}

inline Tensor alpha_bar_row(const RealizedSchedule& s) { return s.alpha_bar.reshaped({1, s.steps()}); }

struct LossAndGrads {
    double value = 0.0;
    std::vector<Tensor> grads;  // parameter visit order
};

/// x0-prediction loss of the denoiser under a frozen schedule, with gradients
/// for every denoiser parameter.
inline LossAndGrads denoiser_loss(const FgdParams& params, const WindowBatch& batch, const RealizedSchedule& schedule,
                                  RandomSource& rng) {
    if (schedule.steps() != params.config.steps) throw ContractViolation("denoiser_loss: schedule length mismatch");
    const ObjectiveDraws draws = draw_objective(rng, batch, schedule.steps());
    Tape tape;
    FgdVars w = bind(tape, params, true);
    Var loss = objective_loss(tape, w, params.config, batch, tape.constant(alpha_bar_row(schedule)), draws);
    const std::vector<Var> wrt = vars_of(w);
    auto [value, grads] = evaluate_with_gradients(loss, wrt);
    return {value, std::move(grads)};
}

/// Loss value only (no tape gradients), same draws as denoiser_loss.
inline double denoiser_loss_value(const FgdParams& params, const WindowBatch& batch, const RealizedSchedule& schedule,
                                  RandomSource& rng) {
    const ObjectiveDraws draws = draw_objective(rng, batch, schedule.steps());
    Tape tape;
    FgdVars w = bind(tape, params, false);
    return objective_loss(tape, w, params.config, batch, tape.constant(alpha_bar_row(schedule)), draws).value().item();
}

/// Conditioner for ancestral sampling with the trained denoiser. The anchor is
/// computed once per history window; each call draws d x L history noise per
/// chain (from that chain's stream) to form c_t.
inline Conditioner make_conditioner(const FgdParams& params, const RealizedSchedule& schedule) {
    return [&params, &schedule](const Tensor& c0_norm) -> DenoiseFn {
        const std::size_t d = c0_norm.cols(), len = c0_norm.rows();
        Tensor c0_rows = c0_norm.transposed();
        Tensor anchor_rows;
        {
            Tape tape;
            FgdVars w = bind(tape, params, false);
            anchor_rows = fgd::anchor(tape, w, params.config, c0_rows, d).forecast.value();
        }
        return [&params, &schedule, d, len, c0_rows, anchor_rows](const Tensor& xt_rows, std::size_t t,
                                                                  std::span<RandomSource> chains) {
            const std::size_t chains_n = chains.size(), rows = chains_n * d, h = xt_rows.cols();
            const double keep = std::sqrt(schedule.alpha_bar_at(t)), spread = std::sqrt(1.0 - schedule.alpha_bar_at(t));
            Tensor c0_tiled({rows, len}), ct({rows, len}), anchor_tiled({rows, h});
            for (std::size_t s = 0; s < chains_n; ++s)
                for (std::size_t c = 0; c < d; ++c)
                    for (std::size_t k = 0; k < len; ++k) {
                        const double v = c0_rows(c, k);
                        c0_tiled(s * d + c, k) = v;
                        ct(s * d + c, k) = keep * v + spread * chains[s].normal();
                    }
            for (std::size_t s = 0; s < chains_n; ++s)
                for (std::size_t c = 0; c < d; ++c)
                    for (std::size_t k = 0; k < h; ++k) anchor_tiled(s * d + c, k) = anchor_rows(c, k);

            Tape tape;
            FgdVars w = bind(tape, params, false);
            const std::vector<std::size_t> steps(rows, t);
            Var r = fgd::distortion(tape, params.config, c0_tiled, tape.constant(std::move(ct)));
            Var diff = fgd::diffusion_branch(tape, w, params.config, tape.constant(xt_rows), steps, r).forecast;
            return fgd::fuse(tape.constant(std::move(anchor_tiled)), diff, w.fusion_logit).value();
        };
    };
}

}  // namespace stats
