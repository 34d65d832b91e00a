"""Independent numpy/scipy reference values for the C++ test suite.

Re-implements the seeded stream and the handful of quantities whose expected
values are frozen into tests/. Run `python3 tests/oracle/oracle.py` to print
them; the tests quote the output verbatim.
"""

import json
import math

import numpy as np
from scipy import integrate

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
SPLIT_GAMMA = 0xD1B54A32D192ED03


def mix(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


class Stream:
    def __init__(self, seed):
        self.seed = seed & MASK
        self.counter = 0
        self.spare = None

    def next_u64(self):
        self.counter += 1
        return mix(self.seed + self.counter * GAMMA)

    def uniform(self):
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self):
        if self.spare is not None:
            v, self.spare = self.spare, None
            return v
        u1 = ((self.next_u64() >> 11) + 0.5) * 2.0**-53
        u2 = (self.next_u64() >> 11) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        self.spare = r * math.sin(2 * math.pi * u2)
        return r * math.cos(2 * math.pi * u2)

    def normals(self, *shape):
        n = int(np.prod(shape))
        return np.array([self.normal() for _ in range(n)]).reshape(shape)

    def split(self, k):
        return Stream(mix(self.seed + (k + 1) * SPLIT_GAMMA))


def channel_power(rows, channels):
    """rows: (B*d) x N, time along columns -> B x F channel-mean |rfft|^2."""
    spec = np.fft.rfft(rows, axis=1)
    power = np.abs(spec) ** 2
    return power.reshape(-1, channels, power.shape[1]).mean(axis=1)


def flatness(power, eps=1e-12):
    s = power + eps
    return np.exp(np.mean(np.log(s), axis=-1)) / np.mean(s, axis=-1)


def kl_uniform(mass):
    k = mass.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(mass > 0, mass * np.log(mass * k), 0.0)
    return terms.sum(axis=-1)


def linear_betas(T, lo=1e-5, hi=0.1):
    return np.array([lo + (hi - lo) * i / (T - 1) for i in range(T)])


def main():
    out = {}

    # Product of (1 - beta) for the linear template, T = 50.
    beta = linear_betas(50)
    prod = 1.0
    for b in beta:
        prod *= 1.0 - b
    out["alpha_bar_50_linear"] = prod

    # Barrier and smoothness on beta_i = 0.05 + 0.9 * U_i, seed 21, T = 50.
    s = Stream(21)
    b = np.array([0.05 + 0.9 * s.uniform() for _ in range(50)])
    out["barrier_seed21"] = float(-np.mean(np.log(b[1:])))
    out["smooth_seed21"] = float(np.sum(np.diff(b) ** 2))

    # Endpoint KL with alpha_bar_T -> 0: x_T is the noise itself, seed 5, d = 2, H = 24.
    noise = Stream(5).normals(2, 24)
    mass = channel_power(noise, 2)
    mass = mass / mass.sum(axis=1, keepdims=True)
    out["l_end_seed5"] = float(kl_uniform(mass)[0])

    # Flatness progression, single instance, T = 10 linear, t = 5.
    s = Stream(13)
    x0 = s.normals(2, 24)
    eps = s.normals(2, 24)
    ab = np.cumprod(1.0 - linear_betas(10))
    xt = math.sqrt(ab[4]) * x0 + math.sqrt(1 - ab[4]) * eps
    xT = math.sqrt(ab[9]) * x0 + math.sqrt(1 - ab[9]) * eps
    sf = lambda x: flatness(channel_power(x, 2))[0]
    interp = 0.5 * sf(x0) + 0.5 * sf(xT)
    out["prog_seed13_t5"] = float((sf(xt) - interp) ** 2)

    # Isotropic KL by quadrature, D = 4: sum of 1-D integrals.
    mu_p = np.array([0.3, -0.2, 0.5, 0.1])
    mu_q = np.array([0.0, 0.1, 0.2, -0.4])
    vp, vq = 0.7, 1.3
    total = 0.0
    for m1, m0 in zip(mu_p, mu_q):
        p = lambda z: math.exp(-((z - m1) ** 2) / (2 * vp)) / math.sqrt(2 * math.pi * vp)
        logp = lambda z: -((z - m1) ** 2) / (2 * vp) - 0.5 * math.log(2 * math.pi * vp)
        logq = lambda z: -((z - m0) ** 2) / (2 * vq) - 0.5 * math.log(2 * math.pi * vq)
        val, _ = integrate.quad(lambda z: p(z) * (logp(z) - logq(z)), -30, 30, epsabs=1e-13, epsrel=1e-13)
        total += val
    out["kl_quadrature_d4"] = total

    # Drift bound worked example: t = 1, beta = 0.5, beta' = 0.6, x0 = 0, D = 1, a = 0.4, beta_max = 0.6.
    v, vprime = 1 - 0.5, 1 - 0.4
    r = vprime / v
    out["drift_example_kl"] = 0.5 * (r - 1 - math.log(r))
    out["drift_example_bound"] = (1 / 0.4) ** 2 * (1 * 0.36 / (4 * 0.0256)) * 0.01

    # CRPS by trapezoid on the empirical CDF, S = 64 normals from seed 11, x = 0.3.
    samples = np.sort(Stream(11).normals(64))
    x = 0.3
    grid = np.union1d(np.linspace(-10, 10, 400001), np.append(samples, x))
    cdf = np.searchsorted(samples, grid, side="right") / 64.0
    ind = (grid >= x).astype(float)
    # Integrand is piecewise constant; evaluate on midpoints for exactness.
    mids = 0.5 * (grid[1:] + grid[:-1])
    cdf_m = np.searchsorted(samples, mids, side="right") / 64.0
    ind_m = (mids >= x).astype(float)
    out["crps_seed11"] = float(np.sum((cdf_m - ind_m) ** 2 * np.diff(grid)))

    # sin2 lag-24 autocorrelation, N = 2000, seed 1, channel 0.
    s = Stream(1)
    d, n = 2, 2000
    phi = [0.0] * d
    psi = [0.0] * d
    for c in range(d):
        phi[c] = 2 * math.pi * s.uniform()
        psi[c] = 2 * math.pi * s.uniform()
    series = np.zeros((n, d))
    p2 = 5 * math.sqrt(3)
    for t in range(n):
        for c in range(d):
            series[t, c] = (math.sin(2 * math.pi * t / 24 + phi[c]) + 0.25 * math.sin(2 * math.pi * t / p2 + psi[c])
                            + 0.1 * s.normal())
    acf = []
    for c in range(d):
        z = series[:, c] - series[:, c].mean()
        acf.append(float(np.sum(z[:-24] * z[24:]) / np.sum(z * z)))
    out["sin2_acf24"] = acf

    # Adam on f(x) = 0.5 (x - 3)^2 from x = 0, lr 0.2, 100 steps.
    x, m, vv = 0.0, 0.0, 0.0
    for k in range(1, 101):
        g = x - 3.0
        m = 0.9 * m + 0.1 * g
        vv = 0.999 * vv + 0.001 * g * g
        x -= 0.2 * (m / (1 - 0.9**k)) / (math.sqrt(vv / (1 - 0.999**k)) + 1e-8)
    out["adam_quadratic_x100"] = x

    # Adam on f(x) = 0.5 x^2 from x = 0.5, lr 0.02, 100 steps.
    x, m, vv = 0.5, 0.0, 0.0
    for k in range(1, 101):
        g = x
        m = 0.9 * m + 0.1 * g
        vv = 0.999 * vv + 0.001 * g * g
        x -= 0.02 * (m / (1 - 0.9**k)) / (math.sqrt(vv / (1 - 0.999**k)) + 1e-8)
    out["adam_half_x100"] = x

    # Posterior of the reverse step, linear T = 10, t = 5, x_t = 0.7, x0_hat = -0.4.
    b = linear_betas(10)
    ab = np.cumprod(1 - b)
    t = 5
    c0 = math.sqrt(ab[t - 2]) * b[t - 1] / (1 - ab[t - 1])
    ct = math.sqrt(1 - b[t - 1]) * (1 - ab[t - 2]) / (1 - ab[t - 1])
    out["posterior_mean_t5"] = c0 * -0.4 + ct * 0.7
    out["posterior_var_t5"] = (1 - ab[t - 2]) / (1 - ab[t - 1]) * b[t - 1]

    # Identity denoiser, linear T = 2: Var(x0) = (c0 + ct)^2 + sigma_2^2.
    b = linear_betas(2)
    ab = np.cumprod(1 - b)
    c0 = math.sqrt(ab[0]) * b[1] / (1 - ab[1])
    ct = math.sqrt(1 - b[1]) * (1 - ab[0]) / (1 - ab[1])
    out["identity_t2_variance"] = (c0 + ct) ** 2 + (1 - ab[0]) / (1 - ab[1]) * b[1]

    # rfft of a fixed sequence, L = 7, x_t = t^2 - 3t.
    seq = np.array([t * t - 3.0 * t for t in range(7)])
    spec = np.fft.rfft(seq)
    out["rfft_l7_re"] = spec.real.tolist()
    out["rfft_l7_im"] = spec.imag.tolist()

    # First draws of the stream, seed 42.
    s = Stream(42)
    out["stream42_u64"] = [str(s.next_u64()) for _ in range(3)]
    s = Stream(42)
    out["stream42_normal"] = [s.normal() for _ in range(3)]
    out["stream42_split0_seed"] = str(Stream(42).split(0).seed)

    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
