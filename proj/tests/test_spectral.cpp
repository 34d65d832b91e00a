#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "stats/spectral.hpp"
#include "test_support.hpp"

using namespace stats;
using stats::testkit::random_tensor;

// rfft of x_t = t^2 - 3t, L = 7, from tests/oracle/oracle.py (numpy.fft.rfft).
TEST(RealDft, MatchesReferenceTransform) {
    Tensor x({7, 1});
    for (std::size_t t = 0; t < 7; ++t) x(t, 0) = static_cast<double>(t * t) - 3.0 * static_cast<double>(t);
    const ComplexSpectrum c = real_dft(x);
    const double re[] = {28.0, 4.591793886479545, -8.274126679085448, -10.317667207394095};
    const double im[] = {0.0, 29.07129955201271, 11.164627444353657, 3.1954086414620986};
    ASSERT_EQ(c.re.rows(), 4u);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_NEAR(c.re(k, 0), re[k], 1e-12);
        EXPECT_NEAR(c.im(k, 0), im[k], 1e-12);
    }
}

TEST(RealDft, ConstantSignalHasOnlyDc) {
    const Tensor x({8, 2}, 3.0);
    const ComplexSpectrum c = real_dft(x);
    EXPECT_NEAR(c.re(0, 0), 24.0, 1e-12);
    for (std::size_t k = 1; k < 5; ++k) {
        EXPECT_NEAR(c.re(k, 1), 0.0, 1e-12);
        EXPECT_NEAR(c.im(k, 1), 0.0, 1e-12);
    }
}

TEST(RealDft, PureToneConcentratesInOneBin) {
    const std::size_t n = 16;
    Tensor x({n, 1});
    for (std::size_t t = 0; t < n; ++t) x(t, 0) = std::cos(2 * std::numbers::pi * 3 * t / n);
    const ComplexSpectrum c = real_dft(x);
    for (std::size_t k = 0; k < c.re.rows(); ++k)
        EXPECT_NEAR(std::hypot(c.re(k, 0), c.im(k, 0)), k == 3 ? n / 2.0 : 0.0, 1e-10);
}

TEST(RealDft, RoundTripOddAndEvenLengths) {
    RandomSource rng(4);
    for (std::size_t n : {2u, 3u, 7u, 16u, 97u, 200u}) {
        const Tensor x = random_tensor(rng, {n, 3});
        const Tensor back = inverse_real_dft(real_dft(x), n);
        EXPECT_LT(max_abs_diff(x, back), 1e-10) << "L = " << n;
    }
}

TEST(RealDft, ShortOrMismatchedInputsRejected) {
    EXPECT_THROW(real_dft(Tensor({1, 2})), ContractViolation);
    const ComplexSpectrum c = real_dft(Tensor({8, 1}, 1.0));
    EXPECT_THROW(inverse_real_dft(c, 9), ContractViolation);
}

TEST(RealDft, GradientMatchesFiniteDifferences) {
    RandomSource rng(12);
    Tensor x = random_tensor(rng, {9, 2});
    Tensor w = random_tensor(rng, {1, 5});
    auto build = [&](Tape& tape, bool trainable) {
        Var xv = trainable ? tape.variable(x) : tape.constant(x);
        spectral::RowSpectrum s = spectral::rdft_rows(ad::transpose(xv));
        Var filtered = spectral::irdft_rows(ad::mul_row(s.re, tape.constant(w)), ad::mul_row(s.im, tape.constant(w)), 9);
        return std::pair{xv, ad::sum(ad::square(filtered)) + ad::sum(spectral::power_rows(s))};
    };
    Tape tape;
    auto [xv, loss] = build(tape, true);
    const std::vector<Var> wrt{xv};
    auto grads = evaluate_with_gradients(loss, wrt).second;
    auto f = [&] {
        Tape t;
        return build(t, false).second.value().item();
    };
    const auto report = testkit::gradient_check({&x}, grads, f, 18, rng);
    EXPECT_LT(report.worst, 1e-7) << report.worst_where;
}

TEST(SpectralMass, WhiteLikeSpectrumIsFlat) {
    // A unit impulse has |X_f| = 1 in every bin.
    Tensor x({16, 2});
    x(0, 0) = 1.0;
    x(0, 1) = 1.0;
    const SpectralProfile p = spectral_mass(x);
    EXPECT_NEAR(p.flatness, 1.0, 1e-12);
    for (double m : p.mass.values()) EXPECT_NEAR(m, 1.0 / 9.0, 1e-12);
    EXPECT_NEAR(kl_to_uniform(p.mass), 0.0, 1e-12);
}

TEST(SpectralMass, PureToneIsNearZeroFlatness) {
    const std::size_t n = 64;
    Tensor x({n, 1});
    for (std::size_t t = 0; t < n; ++t) x(t, 0) = std::sin(2 * std::numbers::pi * 5 * t / n);
    EXPECT_LT(spectral_flatness(x), 1e-3);
}

TEST(SpectralMass, ZeroSignalIsDegenerate) {
    EXPECT_THROW(spectral_mass(Tensor({8, 2})), DegenerateSpectrum);
}

TEST(SpectralMass, PropertiesOnRandomSignals) {
    RandomSource rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.uniform_index(60), d = 1 + rng.uniform_index(4);
        const Tensor x = random_tensor(rng, {n, d});
        const SpectralProfile p = spectral_mass(x);
        EXPECT_NEAR(sum_of(p.mass), 1.0, 1e-12);
        for (double m : p.mass.values()) EXPECT_GE(m, 0.0);
        EXPECT_GT(p.flatness, 0.0);
        EXPECT_LE(p.flatness, 1.0 + 1e-12);
        EXPECT_GE(kl_to_uniform(p.mass), -1e-15);
        // Flatness is scale-invariant up to the floor constant.
        Tensor scaled = x;
        for (double& v : scaled.values()) v *= 3.0;
        EXPECT_NEAR(spectral_flatness(scaled), p.flatness, 1e-9);
    }
}

TEST(KlToUniform, ClosedFormCases) {
    EXPECT_NEAR(kl_to_uniform(Tensor({4}, 0.25)), 0.0, 1e-15);
    EXPECT_NEAR(kl_to_uniform(Tensor({4}, {1.0, 0.0, 0.0, 0.0})), std::log(4.0), 1e-15);
    EXPECT_THROW(kl_to_uniform(Tensor({2}, {0.7, 0.7})), ContractViolation);
    EXPECT_THROW(kl_to_uniform(Tensor({2}, {1.5, -0.5})), ContractViolation);
}

TEST(SpectralFlatness, GradientMatchesFiniteDifferences) {
    RandomSource rng(31);
    Tensor x = random_tensor(rng, {12, 2});
    Tape tape;
    Var xv = tape.variable(x);
    Var sf = spectral_flatness(xv);
    const std::vector<Var> wrt{xv};
    auto grads = evaluate_with_gradients(sf, wrt).second;
    auto f = [&] { return spectral_flatness(x); };
    const auto report = testkit::gradient_check({&x}, grads, f, 24, rng);
    EXPECT_LT(report.worst, 1e-6) << report.worst_where;
}
