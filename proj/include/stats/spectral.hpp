#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <numbers>

#include "stats/autodiff.hpp"
#include "stats/tensor.hpp"

namespace stats {

/// Floor added to the power spectrum inside logs and the flatness denominator.
inline constexpr double kFlatnessEps = 1e-12;

inline std::size_t one_sided_bins(std::size_t length) { return length / 2 + 1; }

/// Dense real DFT matrices for one signal length.
///
/// Forward (unnormalised, nonnegative frequencies only):
///     Re X_k =  sum_t x_t cos(2 pi k t / L)
///     Im X_k = -sum_t x_t sin(2 pi k t / L)
/// Inverse (1/L scaled, non-DC/non-Nyquist bins doubled):
///     x_t = (1/L) sum_k w_k (Re X_k cos(2 pi k t / L) - Im X_k sin(2 pi k t / L))
/// with w_0 = 1, w_{L/2} = 1 for even L, and w_k = 2 otherwise. Imaginary parts
/// of bin 0 and of the Nyquist bin are ignored, as in a C2R transform.
struct DftBasis {
    std::size_t length = 0;
    std::size_t bins = 0;
    Tensor fwd_re;  // F x L
    Tensor fwd_im;  // F x L
    Tensor inv_re;  // L x F
    Tensor inv_im;  // L x F

    explicit DftBasis(std::size_t n) : length(n), bins(one_sided_bins(n)) {
        fwd_re = Tensor({bins, n});
        fwd_im = Tensor({bins, n});
        inv_re = Tensor({n, bins});
        inv_im = Tensor({n, bins});
        const double ln = static_cast<double>(n);
        for (std::size_t k = 0; k < bins; ++k) {
            const bool single = k == 0 || (n % 2 == 0 && k == n / 2);
            const double w = (single ? 1.0 : 2.0) / ln;
            for (std::size_t t = 0; t < n; ++t) {
                // Reduce k*t mod n first so large products keep full accuracy.
                const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / ln;
                const double c = std::cos(angle), s = std::sin(angle);
                fwd_re(k, t) = c;
                fwd_im(k, t) = -s;
                inv_re(t, k) = w * c;
                inv_im(t, k) = -w * s;
            }
        }
    }
};

/// Per-thread cache; bases are immutable once built.
inline const DftBasis& dft_basis(std::size_t length) {
    thread_local std::map<std::size_t, std::unique_ptr<DftBasis>> cache;
    auto& slot = cache[length];
    if (!slot) slot = std::make_unique<DftBasis>(length);
    return *slot;
}

/// One-sided spectrum, frequency along rows and channels along columns.
struct ComplexSpectrum {
    Tensor re;  // F x d
    Tensor im;  // F x d
    std::size_t length = 0;
};

struct SpectralProfile {
    Tensor power;  // 1 x F, channel-averaged |X_f|^2
    Tensor mass;   // 1 x F, power / sum(power)
    double flatness = 0.0;
};

namespace spectral {

/// Spectrum of each row of a time-along-columns matrix.
struct RowSpectrum {
    Var re;  // N x F
    Var im;  // N x F
};

inline RowSpectrum rdft_rows(Var x) {
    const std::size_t n = x.cols();
    if (n < 2) throw ContractViolation("real_dft: length must be >= 2");
    const DftBasis& basis = dft_basis(n);
    Tape& tape = *x.tape();
    return {ad::matmul_nt(x, tape.constant(basis.fwd_re)), ad::matmul_nt(x, tape.constant(basis.fwd_im))};
}

inline Var irdft_rows(Var re, Var im, std::size_t length) {
    const DftBasis& basis = dft_basis(length);
    if (re.cols() != basis.bins || im.cols() != basis.bins)
        throw ContractViolation("inverse_real_dft: bin count does not match length " + std::to_string(length));
    Tape& tape = *re.tape();
    return ad::add(ad::matmul_nt(re, tape.constant(basis.inv_re)), ad::matmul_nt(im, tape.constant(basis.inv_im)));
}

inline Var power_rows(const RowSpectrum& s) { return ad::add(ad::square(s.re), ad::square(s.im)); }

/// Channel-averaged power per instance: rows are (instance, channel) pairs with
/// `channels` consecutive rows per instance. Result is B x F.
inline Var channel_power(Var x_rows, std::size_t channels) {
    return ad::group_mean_rows(power_rows(rdft_rows(x_rows)), channels);
}

/// Flatness of each row of a power matrix (B x F) -> B x 1.
inline Var flatness_of_power(Var power, double eps = kFlatnessEps) {
    Var shifted = ad::add_scalar(power, eps);
    Var geometric = ad::exp(ad::mean_cols(ad::log(shifted)));
    return ad::div(geometric, ad::mean_cols(shifted));
}

/// Normalise each row of a power matrix into a spectral mass.
inline Var mass_of_power(Var power) {
    Var total = ad::sum_cols(power);
    for (double v : total.value().values())
        if (!(v > 0.0)) throw DegenerateSpectrum("spectral mass undefined: zero total power");
    const std::size_t f = power.cols();
    Tape& tape = *power.tape();
    Var inv = ad::div(tape.constant(Tensor(total.shape(), 1.0)), total);
    return ad::mul(power, ad::matmul(inv, tape.constant(Tensor({1, f}, 1.0))));
}

/// KL(p || uniform) for each row of a mass matrix (B x K) -> B x 1.
inline Var kl_uniform_of_mass(Var mass) {
    const double log_k = std::log(static_cast<double>(mass.cols()));
    return ad::add(ad::sum_cols(ad::xlogx(mass)), ad::scale(ad::sum_cols(mass), log_k));
}

}  // namespace spectral

// --- Public single-window API. Signals are L x d (time along rows). ---

inline ComplexSpectrum real_dft(const Tensor& x) {
    if (x.rank() != 2 || x.rows() < 2) throw ContractViolation("real_dft: expected L x d with L >= 2");
    const DftBasis& basis = dft_basis(x.rows());
    return {matmul(basis.fwd_re, x), matmul(basis.fwd_im, x), x.rows()};
}

inline Tensor inverse_real_dft(const ComplexSpectrum& c, std::size_t length) {
    if (c.length != length) throw ContractViolation("inverse_real_dft: spectrum length mismatch");
    const DftBasis& basis = dft_basis(length);
    if (c.re.rows() != basis.bins || c.im.shape() != c.re.shape())
        throw ContractViolation("inverse_real_dft: spectrum shape mismatch");
    Tensor out = matmul(basis.inv_re, c.re);
    const Tensor im_part = matmul(basis.inv_im, c.im);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += im_part[i];
    return out;
}

/// Differentiable flatness of an L x d signal. Result is 1 x 1.
inline Var spectral_flatness(Var x, double eps = kFlatnessEps) {
    if (x.value().rank() != 2 || x.rows() < 2) throw ContractViolation("spectral_flatness: expected L x d, L >= 2");
    return spectral::flatness_of_power(spectral::channel_power(ad::transpose(x), x.cols()), eps);
}

/// Differentiable KL to the uniform distribution over the entries of `mass`.
inline Var kl_to_uniform(Var mass) {
    double total = 0.0;
    for (double v : mass.value().values()) {
        if (v < 0.0) throw ContractViolation("kl_to_uniform: negative mass");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-8) throw ContractViolation("kl_to_uniform: mass does not sum to 1");
    return spectral::kl_uniform_of_mass(ad::reshape(mass, {1, mass.value().size()}));
}

inline double kl_to_uniform(const Tensor& mass) {
    Tape tape;
    return kl_to_uniform(tape.constant(mass)).value().item();
}

/// Flatness of an explicit power spectrum (any shape, treated as one row).
inline double flatness_from_power(const Tensor& power, double eps = kFlatnessEps) {
    Tape tape;
    return spectral::flatness_of_power(tape.constant(power.reshaped({1, power.size()})), eps).value().item();
}

inline SpectralProfile spectral_mass(const Tensor& x, double eps = kFlatnessEps) {
    if (x.rank() != 2 || x.rows() < 2) throw ContractViolation("spectral_mass: expected N x d with N >= 2");
    Tape tape;
    Var power = spectral::channel_power(tape.constant(x.transposed()), x.cols());
    Var mass = spectral::mass_of_power(power);
    return {power.value(), mass.value(), spectral::flatness_of_power(power, eps).value().item()};
}

inline double spectral_flatness(const Tensor& x, double eps = kFlatnessEps) {
    Tape tape;
    return spectral_flatness(tape.constant(x), eps).value().item();
}

}  // namespace stats
