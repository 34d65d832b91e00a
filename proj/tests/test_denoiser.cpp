#include <gtest/gtest.h>

#include <cmath>

#include "stats/denoiser.hpp"
#include "test_support.hpp"

using namespace stats;
using stats::testkit::random_tensor;

namespace {

FgdConfig small(std::size_t len = 16, std::size_t horizon = 8, std::size_t bands = 2) {
    FgdConfig c;
    c.history_length = len;
    c.horizon = horizon;
    c.steps = 6;
    c.bands = bands;
    c.hidden = 10;
    c.gate_hidden = 7;
    c.embed_dim = 8;
    return c;
}

WindowBatch random_batch(RandomSource& rng, std::size_t instances, std::size_t d, const FgdConfig& c) {
    std::vector<SeriesWindow> ws;
    for (std::size_t i = 0; i < instances; ++i)
        ws.push_back(instance_normalize({random_tensor(rng, {c.history_length, d}), random_tensor(rng, {c.horizon, d}), i})
                         .first);
    return make_batch(ws, true);
}

RealizedSchedule linear(std::size_t steps) {
    return schedule_from_betas(template_betas(ScheduleTemplate::linear, steps, 1e-5, 0.1));
}

// Diffusion branch with explicit gate output, for one window.
Tensor branch_gate(const Tensor& x_t, std::size_t t, const Tensor& c0, const Tensor& c_t, const FgdParams& p) {
    Tape tape;
    FgdVars w = bind(tape, p, false);
    Var r = fgd::distortion(tape, p.config, c0.transposed(), tape.constant(c_t.transposed()));
    std::vector<std::size_t> steps(x_t.cols(), t);
    return fgd::diffusion_branch(tape, w, p.config, tape.constant(x_t.transposed()), steps, r).gate.value();
}

}  // namespace

TEST(InstanceNormalize, RoundTripOnRandomWindows) {
    RandomSource rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const SeriesWindow w{random_tensor(rng, {20, 3}, 5.0), random_tensor(rng, {6, 3}, 5.0), 0};
        const auto [n, stats] = instance_normalize(w);
        const SeriesWindow back = denormalize(n, stats);
        EXPECT_LT(max_abs_diff(back.history, w.history), 1e-12);
        EXPECT_LT(max_abs_diff(back.target, w.target), 1e-12);
    }
}

TEST(InstanceNormalize, ConstantChannelBecomesZero) {
    Tensor h({5, 2}, 4.0);
    for (std::size_t t = 0; t < 5; ++t) h(t, 1) = static_cast<double>(t);
    const auto [n, stats] = instance_normalize({h, Tensor({2, 2}, 4.0), 0});
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(n.history(t, 0), 0.0);
    EXPECT_EQ(stats.std[0], kNormEps);
    EXPECT_EQ(n.target(0, 0), 0.0);
}

TEST(BandPartition, DisjointCoverForAllSizes) {
    for (std::size_t f = 1; f <= 40; ++f)
        for (std::size_t b = 1; b <= f; ++b) {
            const auto parts = band_partition(f, b);
            ASSERT_EQ(parts.size(), b);
            std::size_t next = 0;
            for (auto [lo, hi] : parts) {
                EXPECT_EQ(lo, next);
                EXPECT_GT(hi, lo);
                next = hi;
            }
            EXPECT_EQ(next, f);
        }
    EXPECT_THROW(band_partition(3, 4), ContractViolation);
    EXPECT_THROW(band_partition(3, 0), ContractViolation);
}

TEST(FreqAnchor, NeutralGainsAndIdentityHeadHalveHistory) {
    RandomSource rng(2);
    FgdConfig c = small(12, 12);
    FgdParams p = FgdParams::init(c, rng);
    p.anchor_head = Tensor({12, 12});
    for (std::size_t i = 0; i < 12; ++i) p.anchor_head(i, i) = 1.0;
    const Tensor c0 = random_tensor(rng, {12, 3});
    const Tensor out = freq_anchor(c0, p);
    for (std::size_t i = 0; i < c0.size(); ++i) EXPECT_NEAR(out[i], 0.5 * c0[i], 1e-12);
}

TEST(FreqAnchor, ZeroHistoryGivesZero) {
    RandomSource rng(3);
    FgdParams p = FgdParams::init(small(), rng);
    for (Tensor* t : {&p.gate_a, &p.gate_b}) *t = random_tensor(rng, t->shape());
    const Tensor out = freq_anchor(Tensor({16, 2}), p);
    EXPECT_EQ(out.shape(), (Shape{8, 2}));
    for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(FreqAnchor, BandPartitionInvarianceUnderSharedGains) {
    RandomSource rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t len = 4 + rng.uniform_index(30);
        FgdConfig one = small(len, 5, 1);
        FgdParams base = FgdParams::init(one, rng);
        base.gate_a = random_tensor(rng, base.gate_a.shape());
        base.gate_b = random_tensor(rng, base.gate_b.shape());
        const std::size_t f = one.bins();
        const Tensor gre = random_tensor(rng, {1, f}), gim = random_tensor(rng, {1, f});
        base.band_re = {gre};
        base.band_im = {gim};
        const Tensor c0 = random_tensor(rng, {len, 2});
        const Tensor reference = freq_anchor(c0, base);

        FgdParams split = base;
        split.config.bands = 1 + rng.uniform_index(f);
        split.band_re.clear();
        split.band_im.clear();
        for (auto [lo, hi] : band_partition(f, split.config.bands)) {
            Tensor re({1, hi - lo}), im({1, hi - lo});
            for (std::size_t k = lo; k < hi; ++k) {
                re[k - lo] = gre[k];
                im[k - lo] = gim[k];
            }
            split.band_re.push_back(re);
            split.band_im.push_back(im);
        }
        EXPECT_LT(max_abs_diff(freq_anchor(c0, split), reference), 1e-12) << "B = " << split.config.bands;
    }
}

TEST(SpectralDistortion, ClosedFormCases) {
    RandomSource rng(5);
    const FgdConfig c = small();
    const Tensor c0 = random_tensor(rng, {16, 2});
    const Tensor same = spectral_distortion(c0, c0, c);
    for (double v : same.values()) EXPECT_EQ(v, 0.0);

    Tensor doubled = c0, amplified = c0;
    for (double& v : doubled.values()) v *= 2.0;
    for (double& v : amplified.values()) v *= 1e4;
    const Tensor r2 = spectral_distortion(c0, doubled, c), r4 = spectral_distortion(c0, amplified, c);
    ASSERT_EQ(r2.shape(), (Shape{9, 2}));
    const ComplexSpectrum spec = real_dft(c0);
    for (std::size_t k = 0; k < 9; ++k)
        for (std::size_t ch = 0; ch < 2; ++ch) {
            const double mag = std::hypot(spec.re(k, ch), spec.im(k, ch));
            EXPECT_NEAR(r2(k, ch), mag / (mag + c.eps_r), 1e-12);
            EXPECT_NEAR(r2(k, ch), 1.0, 1e-5);
            EXPECT_EQ(r4(k, ch), 10.0);
        }
}

TEST(Denoise, SaturatedGateSilencesGuidedPath) {
    RandomSource rng(6);
    FgdParams p = FgdParams::init(small(), rng);
    const Tensor xt = random_tensor(rng, {8, 2}), c0 = random_tensor(rng, {16, 2}), ct = random_tensor(rng, {16, 2});
    p.dgate_w2 = Tensor(p.dgate_w2.shape());
    p.dgate_b2 = Tensor(p.dgate_b2.shape(), -800.0);
    const Tensor gate = branch_gate(xt, 3, c0, ct, p);
    for (double g : gate.values()) EXPECT_LT(g, 1e-300);
    FgdParams no_guided = p;
    no_guided.guided_w = Tensor(p.guided_w.shape());
    EXPECT_LT(max_abs_diff(denoise(xt, 3, c0, ct, p), denoise(xt, 3, c0, ct, no_guided)), 1e-15);
}

TEST(Denoise, NeutralModulationReducesToHeadOfSilus) {
    RandomSource rng(7);
    const FgdConfig c = small();
    FgdParams p = FgdParams::init(c, rng);
    for (Tensor* t : {&p.film1_scale_w, &p.film1_shift_w, &p.film2_scale_w, &p.film2_shift_w, &p.refine_b})
        *t = Tensor(t->shape());
    p.refine_w = Tensor({c.hidden, c.hidden});
    for (std::size_t i = 0; i < c.hidden; ++i) p.refine_w(i, i) = 1.0;
    const Tensor xt = random_tensor(rng, {8, 2}), c0 = random_tensor(rng, {16, 2}), ct = random_tensor(rng, {16, 2});

    // Manual forward with plain tensors.
    const Tensor gate = branch_gate(xt, 4, c0, ct, p);
    const Tensor x_rows = xt.transposed();
    auto silu = [](double v) { return v / (1.0 + std::exp(-v)); };
    Tensor expected({2, 8});
    for (std::size_t r = 0; r < 2; ++r) {
        std::vector<double> h(c.hidden);
        for (std::size_t j = 0; j < c.hidden; ++j) {
            double acc = p.raw_b[j];
            for (std::size_t k = 0; k < 8; ++k)
                acc += p.raw_w(j, k) * x_rows(r, k) + p.guided_w(j, k) * x_rows(r, k) * gate(r, k);
            h[j] = silu(silu(acc));
        }
        for (std::size_t k = 0; k < 8; ++k) {
            double acc = p.head_b[k];
            for (std::size_t j = 0; j < c.hidden; ++j) acc += p.head_w(k, j) * h[j];
            expected(r, k) = acc;
        }
    }
    EXPECT_LT(max_abs_diff(denoise(xt, 4, c0, ct, p), expected.transposed()), 1e-12);
}

TEST(Denoise, StepOutOfRangeRejected) {
    RandomSource rng(8);
    FgdParams p = FgdParams::init(small(), rng);
    const Tensor xt({8, 1}), c0 = random_tensor(rng, {16, 1});
    EXPECT_THROW(denoise(xt, 0, c0, c0, p), ContractViolation);
    EXPECT_THROW(denoise(xt, 7, c0, c0, p), ContractViolation);
}

TEST(Denoise, GradientOfSquaredNormMatchesFiniteDifferences) {
    RandomSource rng(9);
    FgdParams p = FgdParams::init(small(), rng);
    p.gate_a = random_tensor(rng, p.gate_a.shape());
    const Tensor xt = random_tensor(rng, {8, 2}), c0 = random_tensor(rng, {16, 2}), ct = random_tensor(rng, {16, 2});
    Tape tape;
    FgdVars w = bind(tape, p, true);
    Var r = fgd::distortion(tape, p.config, c0.transposed(), tape.constant(ct.transposed()));
    Var out = fgd::diffusion_branch(tape, w, p.config, tape.constant(xt.transposed()), {2, 2}, r).forecast;
    const std::vector<Var> wrt = vars_of(w);
    auto grads = evaluate_with_gradients(ad::sum(ad::square(out)), wrt).second;
    auto f = [&] { return squared_norm(denoise(xt, 2, c0, ct, p)); };
    const auto report = testkit::gradient_check(p.tensors(), grads, f, 64, rng);
    EXPECT_LE(report.worst, 1e-4) << report.worst_where;
}

TEST(Gates, EntriesLieInOpenUnitInterval) {
    RandomSource rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        FgdParams p = FgdParams::init(small(), rng);
        p.gate_a = random_tensor(rng, p.gate_a.shape(), 3.0);
        p.gate_b = random_tensor(rng, p.gate_b.shape(), 3.0);
        const Tensor c0 = random_tensor(rng, {16, 2}), ct = random_tensor(rng, {16, 2}, 2.0);
        Tape tape;
        FgdVars w = bind(tape, p, false);
        for (double g : fgd::anchor(tape, w, p.config, c0.transposed(), 2).gate.value().values()) {
            EXPECT_GT(g, 0.0);
            EXPECT_LT(g, 1.0);
        }
        const Tensor gt = branch_gate(random_tensor(rng, {8, 2}), 1, c0, ct, p);
        for (double g : gt.values()) {
            EXPECT_GT(g, 0.0);
            EXPECT_LT(g, 1.0);
        }
    }
}

TEST(Fuse, LimitsAndMidpoint) {
    RandomSource rng(11);
    FgdParams p = FgdParams::init(small(), rng);
    const Tensor a = random_tensor(rng, {8, 2}), b = random_tensor(rng, {8, 2});
    Tensor mid = a;
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (a[i] + b[i]);
    EXPECT_LT(max_abs_diff(fuse(a, b, p), mid), 1e-15);
    p.fusion_logit[0] = 60.0;
    EXPECT_LT(max_abs_diff(fuse(a, b, p), a), 1e-12);
    p.fusion_logit[0] = -60.0;
    EXPECT_LT(max_abs_diff(fuse(a, b, p), b), 1e-12);
}

TEST(Fuse, AffineInSharedShift) {
    RandomSource rng(12);
    FgdParams p = FgdParams::init(small(), rng);
    for (int trial = 0; trial < 50; ++trial) {
        p.fusion_logit[0] = 4.0 * rng.normal();
        const Tensor x = random_tensor(rng, {8, 2}), y = random_tensor(rng, {8, 2}), u = random_tensor(rng, {8, 2});
        Tensor xu = x, yu = y, expect = fuse(x, y, p);
        for (std::size_t i = 0; i < x.size(); ++i) {
            xu[i] += u[i];
            yu[i] += u[i];
            expect[i] += u[i];
        }
        EXPECT_LT(max_abs_diff(fuse(xu, yu, p), expect), 1e-12);
    }
}

TEST(DenoiserLoss, ConstantOffsetGivesSquaredOffset) {
    // Anchor head zero and omega -> 1 make the fused prediction exactly zero,
    // so a constant target -0.3 is an offset of 0.3 everywhere.
    RandomSource rng(13);
    const FgdConfig c = small();
    FgdParams p = FgdParams::init(c, rng);
    p.anchor_head = Tensor(p.anchor_head.shape());
    p.fusion_logit[0] = 800.0;
    WindowBatch batch = random_batch(rng, 3, 2, c);
    batch.target = Tensor(batch.target.shape(), -0.3);
    RandomSource loss_rng(14);
    EXPECT_NEAR(denoiser_loss(p, batch, linear(6), loss_rng).value, 0.09, 1e-15);
}

TEST(DenoiserLoss, PerfectPredictionGivesZero) {
    RandomSource rng(15);
    const FgdConfig c = small();
    FgdParams p = FgdParams::init(c, rng);
    p.anchor_head = Tensor(p.anchor_head.shape());
    p.fusion_logit[0] = 800.0;
    WindowBatch batch = random_batch(rng, 2, 1, c);
    batch.target = Tensor(batch.target.shape());
    RandomSource loss_rng(16);
    EXPECT_EQ(denoiser_loss_value(p, batch, linear(6), loss_rng), 0.0);
}

TEST(DenoiserLoss, ValueAndGradientAgree) {
    RandomSource rng(17);
    const FgdConfig c = small();
    FgdParams p = FgdParams::init(c, rng);
    p.gate_a = random_tensor(rng, p.gate_a.shape());
    p.fusion_logit[0] = 0.3;
    for (auto& b : p.band_im) b = random_tensor(rng, b.shape(), 0.2);
    const WindowBatch batch = random_batch(rng, 3, 2, c);
    const RealizedSchedule s = linear(6);
    RandomSource a(18), b(18);
    const LossAndGrads lg = denoiser_loss(p, batch, s, a);
    EXPECT_EQ(lg.value, denoiser_loss_value(p, batch, s, b));
    ASSERT_EQ(lg.grads.size(), p.tensors().size());
    EXPECT_NE(lg.grads.back()[0], 0.0);  // fusion logit receives gradient

    auto f = [&] {
        RandomSource fresh(18);
        return denoiser_loss_value(p, batch, s, fresh);
    };
    RandomSource pick(19);
    const auto report = testkit::gradient_check(p.tensors(), lg.grads, f, 64, pick);
    EXPECT_LE(report.worst, 1e-4) << report.worst_where;
}

TEST(DenoiserLoss, ScheduleLengthMismatchRejected) {
    RandomSource rng(20);
    FgdParams p = FgdParams::init(small(), rng);
    const WindowBatch batch = random_batch(rng, 1, 1, small());
    EXPECT_THROW(denoiser_loss(p, batch, linear(5), rng), ContractViolation);
}

TEST(FgdParams, InitialisationFollowsLayout) {
    RandomSource rng(21);
    const FgdConfig c = small(16, 8, 3);
    FgdParams p = FgdParams::init(c, rng);
    EXPECT_EQ(p.band_re.size(), 3u);
    EXPECT_EQ(p.omega(), 0.5);
    EXPECT_EQ(p.names().size(), p.tensors().size());
    for (double v : p.film1_scale_b.values()) EXPECT_EQ(v, 1.0);
    const double bound = 1.0 / std::sqrt(8.0);
    for (double v : p.raw_w.values()) EXPECT_LE(std::abs(v), bound);
    RandomSource again(21);
    EXPECT_EQ(FgdParams::init(c, again).head_w, p.head_w);
}

TEST(Conditioner, MatchesWindowLevelComposition) {
    // One chain: the conditioner's output equals fuse(anchor, denoise) with c_t
    // built from the same chain stream.
    RandomSource rng(22);
    const FgdConfig c = small();
    FgdParams p = FgdParams::init(c, rng);
    p.fusion_logit[0] = -0.4;
    const RealizedSchedule s = linear(6);
    const Tensor c0 = random_tensor(rng, {16, 2}), xt = random_tensor(rng, {8, 2});
    std::vector<RandomSource> chains{RandomSource(5)};
    const Tensor got = make_conditioner(p, s)(c0)(xt.transposed(), 3, chains);

    RandomSource replay(5);
    Tensor ct({16, 2});
    for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t k = 0; k < 16; ++k)
            ct(k, ch) = std::sqrt(s.alpha_bar_at(3)) * c0(k, ch) + std::sqrt(1 - s.alpha_bar_at(3)) * replay.normal();
    const Tensor expected = fuse(freq_anchor(c0, p), denoise(xt, 3, c0, ct, p), p);
    EXPECT_LT(max_abs_diff(got, expected.transposed()), 1e-12);
}
