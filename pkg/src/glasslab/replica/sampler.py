"""Single-site imaginary-time Monte Carlo estimators.

One spin-1/2 in a random 3-vector field: a static component z plus a
stationary periodic Gaussian fluctuation xi(tau) sampled spectrally from its
circulant covariance. Fields are piecewise constant on the grid, so each
time slice contributes the exact 2x2 propagator

    exp(dtau (h . sigma) / 2) = cosh(r) I + sinh(r) h_hat . sigma,
    r = dtau |h| / 2,

and the full time-ordered product is exact at the discretization — no
Trotter error. Per slice the cosh factor is pulled out into a log-weight so
long chains never overflow; prefix/suffix partial products then give every
one- and two-point Pauli insertion of a path in a single pass. Insertion
operators are the bare Pauli matrices, hence the lag-0 sum rule
sum_nu a_nu(tau, tau) = 3.

Ratio estimators share their xi-samples between numerator and denominator,
with the usual O(1/N_xi) ratio bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..analytic import polarization_trace
from ..errors import DomainError, NumericalError
from .. import rng as _rng
from .kernel import ImaginaryTimeKernel

# Minimum signed effective sample size a sub-span must carry before its
# ratio participates in split-half / quarter Richardson debiasing; below
# these the correction term is noise-dominated and can explode.
_HALF_ESS_FLOOR = 8.0
_QUARTER_ESS_FLOOR = 4.0

__all__ = [
    "SpectralSampler",
    "CorrelatorSample",
    "importance_shift",
    "single_site_correlators",
    "zeta_identity_check",
]


@njit(cache=True, nogil=True)
def _chain_stats(fields, half_dtau, n_lags, stride, n_two_point):
    """Per-path log-weights, traces, one-point and two-point insertion sums.

    fields: (n_paths, n_tau, 3). Returns (logw, tr, one, two) where
    one[s, nu] is the time-averaged insertion trace of sigma_nu and
    two[s, nu, k] the ref-averaged double insertion at lag k (first
    n_two_point paths only), all normalized by the per-path weight
    exp(logw[s]) that has been factored out of the propagator product.
    """
    n_paths, n_tau = fields.shape[0], fields.shape[1]
    logw = np.zeros(n_paths)
    tr = np.zeros(n_paths, dtype=np.complex128)
    one = np.zeros((n_paths, 3), dtype=np.complex128)
    two = np.zeros((n_two_point, 3, n_lags), dtype=np.complex128)

    slices = np.empty((n_tau, 2, 2), dtype=np.complex128)
    prefix = np.empty((n_tau + 1, 2, 2), dtype=np.complex128)
    suffix = np.empty((n_tau + 1, 2, 2), dtype=np.complex128)
    half = n_tau // 2

    for s in range(n_paths):
        lw = 0.0
        for k in range(n_tau):
            hx = fields[s, k, 0]
            hy = fields[s, k, 1]
            hz = fields[s, k, 2]
            norm = math.sqrt(hx * hx + hy * hy + hz * hz)
            r = half_dtau * norm
            if r < 1e-300:
                slices[k, 0, 0] = 1.0
                slices[k, 0, 1] = 0.0
                slices[k, 1, 0] = 0.0
                slices[k, 1, 1] = 1.0
                continue
            t = math.tanh(r)
            # log(cosh r) = r + log1p(e^{-2r}) - log 2, stable for every r
            lw += r + math.log1p(math.exp(-2.0 * r)) - math.log(2.0)
            nx = hx / norm
            ny = hy / norm
            nz = hz / norm
            slices[k, 0, 0] = 1.0 + t * nz
            slices[k, 0, 1] = t * (nx - 1j * ny)
            slices[k, 1, 0] = t * (nx + 1j * ny)
            slices[k, 1, 1] = 1.0 - t * nz
        logw[s] = lw

        # prefix[j] = M_j ... M_1 (prefix[0] = I); suffix[j] = M_N ... M_{j+1}
        prefix[0, 0, 0] = 1.0
        prefix[0, 0, 1] = 0.0
        prefix[0, 1, 0] = 0.0
        prefix[0, 1, 1] = 1.0
        for j in range(n_tau):
            a00 = slices[j, 0, 0] * prefix[j, 0, 0] + slices[j, 0, 1] * prefix[j, 1, 0]
            a01 = slices[j, 0, 0] * prefix[j, 0, 1] + slices[j, 0, 1] * prefix[j, 1, 1]
            a10 = slices[j, 1, 0] * prefix[j, 0, 0] + slices[j, 1, 1] * prefix[j, 1, 0]
            a11 = slices[j, 1, 0] * prefix[j, 0, 1] + slices[j, 1, 1] * prefix[j, 1, 1]
            prefix[j + 1, 0, 0] = a00
            prefix[j + 1, 0, 1] = a01
            prefix[j + 1, 1, 0] = a10
            prefix[j + 1, 1, 1] = a11
        suffix[n_tau, 0, 0] = 1.0
        suffix[n_tau, 0, 1] = 0.0
        suffix[n_tau, 1, 0] = 0.0
        suffix[n_tau, 1, 1] = 1.0
        for j in range(n_tau - 1, -1, -1):
            a00 = suffix[j + 1, 0, 0] * slices[j, 0, 0] + suffix[j + 1, 0, 1] * slices[j, 1, 0]
            a01 = suffix[j + 1, 0, 0] * slices[j, 0, 1] + suffix[j + 1, 0, 1] * slices[j, 1, 1]
            a10 = suffix[j + 1, 1, 0] * slices[j, 0, 0] + suffix[j + 1, 1, 1] * slices[j, 1, 0]
            a11 = suffix[j + 1, 1, 0] * slices[j, 0, 1] + suffix[j + 1, 1, 1] * slices[j, 1, 1]
            suffix[j, 0, 0] = a00
            suffix[j, 0, 1] = a01
            suffix[j, 1, 0] = a10
            suffix[j, 1, 1] = a11

        tr[s] = prefix[n_tau, 0, 0] + prefix[n_tau, 1, 1]

        # one-point insertions, time-averaged: Tr(sigma_nu P_j S_j)
        accx = 0.0 + 0.0j
        accy = 0.0 + 0.0j
        accz = 0.0 + 0.0j
        for j in range(n_tau):
            b00 = prefix[j, 0, 0] * suffix[j, 0, 0] + prefix[j, 0, 1] * suffix[j, 1, 0]
            b01 = prefix[j, 0, 0] * suffix[j, 0, 1] + prefix[j, 0, 1] * suffix[j, 1, 1]
            b10 = prefix[j, 1, 0] * suffix[j, 0, 0] + prefix[j, 1, 1] * suffix[j, 1, 0]
            b11 = prefix[j, 1, 0] * suffix[j, 0, 1] + prefix[j, 1, 1] * suffix[j, 1, 1]
            accx += b01 + b10
            accy += 1j * (b01 - b10)
            accz += b00 - b11
        one[s, 0] = accx / n_tau
        one[s, 1] = accy / n_tau
        one[s, 2] = accz / n_tau

        # two-point insertions at lags 0..n_tau/2 against strided references
        if s < n_two_point:
            n_refs = 0
            for ref in range(0, half + 1, stride):
                n_refs += 1
                # c_nu = U(ref -> ref+k) sigma_nu prefix[ref], updated per lag
                c = np.empty((3, 2, 2), dtype=np.complex128)
                p00 = prefix[ref, 0, 0]
                p01 = prefix[ref, 0, 1]
                p10 = prefix[ref, 1, 0]
                p11 = prefix[ref, 1, 1]
                # sigma_x P, sigma_y P, sigma_z P
                c[0, 0, 0] = p10
                c[0, 0, 1] = p11
                c[0, 1, 0] = p00
                c[0, 1, 1] = p01
                c[1, 0, 0] = -1j * p10
                c[1, 0, 1] = -1j * p11
                c[1, 1, 0] = 1j * p00
                c[1, 1, 1] = 1j * p01
                c[2, 0, 0] = p00
                c[2, 0, 1] = p01
                c[2, 1, 0] = -p10
                c[2, 1, 1] = -p11
                for k in range(n_lags):
                    j = ref + k
                    if k > 0:
                        # advance U by slice j (matrices M_j, 1-indexed = slices[j-1])
                        m00 = slices[j - 1, 0, 0]
                        m01 = slices[j - 1, 0, 1]
                        m10 = slices[j - 1, 1, 0]
                        m11 = slices[j - 1, 1, 1]
                        for nu in range(3):
                            a00 = m00 * c[nu, 0, 0] + m01 * c[nu, 1, 0]
                            a01 = m00 * c[nu, 0, 1] + m01 * c[nu, 1, 1]
                            a10 = m10 * c[nu, 0, 0] + m11 * c[nu, 1, 0]
                            a11 = m10 * c[nu, 0, 1] + m11 * c[nu, 1, 1]
                            c[nu, 0, 0] = a00
                            c[nu, 0, 1] = a01
                            c[nu, 1, 0] = a10
                            c[nu, 1, 1] = a11
                    s00 = suffix[j, 0, 0]
                    s01 = suffix[j, 0, 1]
                    s10 = suffix[j, 1, 0]
                    s11 = suffix[j, 1, 1]
                    for nu in range(3):
                        d00 = c[nu, 0, 0] * s00 + c[nu, 0, 1] * s10
                        d01 = c[nu, 0, 0] * s01 + c[nu, 0, 1] * s11
                        d10 = c[nu, 1, 0] * s00 + c[nu, 1, 1] * s10
                        d11 = c[nu, 1, 0] * s01 + c[nu, 1, 1] * s11
                        if nu == 0:
                            val = d01 + d10
                        elif nu == 1:
                            val = 1j * (d01 - d10)
                        else:
                            val = d00 - d11
                        two[s, nu, k] += val
            for nu in range(3):
                for k in range(n_lags):
                    two[s, nu, k] /= n_refs
    return logw, tr, one, two


@njit(cache=True, nogil=True)
def _path_insertion_profile(field, half_dtau):
    """log |tr prod_k M_k| and per-slice Pauli insertion ratios of one path.

    field: (n_tau, 3) total field. Returns (logabs, ins) with logabs the
    log absolute trace of the propagator product and ins[j, nu] =
    Re[tr(sigma_nu P_j S_j) / tr(P_N)], so d logabs / d h_{j nu} ~=
    half_dtau * ins[j, nu] (boundary insertion, exact for static fields).
    """
    n_tau = field.shape[0]
    slices = np.empty((n_tau, 2, 2), dtype=np.complex128)
    prefix = np.empty((n_tau + 1, 2, 2), dtype=np.complex128)
    suffix = np.empty((n_tau + 1, 2, 2), dtype=np.complex128)
    lw = 0.0
    for k in range(n_tau):
        hx = field[k, 0]
        hy = field[k, 1]
        hz = field[k, 2]
        norm = math.sqrt(hx * hx + hy * hy + hz * hz)
        r = half_dtau * norm
        if r < 1e-300:
            slices[k, 0, 0] = 1.0
            slices[k, 0, 1] = 0.0
            slices[k, 1, 0] = 0.0
            slices[k, 1, 1] = 1.0
            continue
        t = math.tanh(r)
        lw += r + math.log1p(math.exp(-2.0 * r)) - math.log(2.0)
        nx = hx / norm
        ny = hy / norm
        nz = hz / norm
        slices[k, 0, 0] = 1.0 + t * nz
        slices[k, 0, 1] = t * (nx - 1j * ny)
        slices[k, 1, 0] = t * (nx + 1j * ny)
        slices[k, 1, 1] = 1.0 - t * nz

    prefix[0, 0, 0] = 1.0
    prefix[0, 0, 1] = 0.0
    prefix[0, 1, 0] = 0.0
    prefix[0, 1, 1] = 1.0
    for j in range(n_tau):
        a00 = slices[j, 0, 0] * prefix[j, 0, 0] + slices[j, 0, 1] * prefix[j, 1, 0]
        a01 = slices[j, 0, 0] * prefix[j, 0, 1] + slices[j, 0, 1] * prefix[j, 1, 1]
        a10 = slices[j, 1, 0] * prefix[j, 0, 0] + slices[j, 1, 1] * prefix[j, 1, 0]
        a11 = slices[j, 1, 0] * prefix[j, 0, 1] + slices[j, 1, 1] * prefix[j, 1, 1]
        prefix[j + 1, 0, 0] = a00
        prefix[j + 1, 0, 1] = a01
        prefix[j + 1, 1, 0] = a10
        prefix[j + 1, 1, 1] = a11
    suffix[n_tau, 0, 0] = 1.0
    suffix[n_tau, 0, 1] = 0.0
    suffix[n_tau, 1, 0] = 0.0
    suffix[n_tau, 1, 1] = 1.0
    for j in range(n_tau - 1, -1, -1):
        a00 = suffix[j + 1, 0, 0] * slices[j, 0, 0] + suffix[j + 1, 0, 1] * slices[j, 1, 0]
        a01 = suffix[j + 1, 0, 0] * slices[j, 0, 1] + suffix[j + 1, 0, 1] * slices[j, 1, 1]
        a10 = suffix[j + 1, 1, 0] * slices[j, 0, 0] + suffix[j + 1, 1, 1] * slices[j, 1, 0]
        a11 = suffix[j + 1, 1, 0] * slices[j, 0, 1] + suffix[j + 1, 1, 1] * slices[j, 1, 1]
        suffix[j, 0, 0] = a00
        suffix[j, 0, 1] = a01
        suffix[j, 1, 0] = a10
        suffix[j, 1, 1] = a11

    trace = prefix[n_tau, 0, 0] + prefix[n_tau, 1, 1]
    mag = abs(trace)
    ins = np.zeros((n_tau, 3))
    if mag < 1e-12:
        return lw + math.log(1e-12), ins
    inv = 1.0 / trace
    for j in range(n_tau):
        b00 = prefix[j, 0, 0] * suffix[j, 0, 0] + prefix[j, 0, 1] * suffix[j, 1, 0]
        b01 = prefix[j, 0, 0] * suffix[j, 0, 1] + prefix[j, 0, 1] * suffix[j, 1, 1]
        b10 = prefix[j, 1, 0] * suffix[j, 0, 0] + prefix[j, 1, 1] * suffix[j, 1, 0]
        b11 = prefix[j, 1, 0] * suffix[j, 0, 1] + prefix[j, 1, 1] * suffix[j, 1, 1]
        ins[j, 0] = ((b01 + b10) * inv).real
        ins[j, 1] = (1j * (b01 - b10) * inv).real
        ins[j, 2] = ((b00 - b11) * inv).real
    return lw + math.log(mag), ins


@njit(cache=True, nogil=True)
def _insertion_profiles(fields, half_dtau):
    """Insertion ratios of many paths at once: (n, n_tau, 3) -> same shape.

    One nopython pass over the batch keeps the per-path call overhead out
    of the ascent loop of ``importance_shift_batch``.
    """
    n = fields.shape[0]
    out = np.empty_like(fields)
    for s in range(n):
        _, out[s] = _path_insertion_profile(fields[s], half_dtau)
    return out


class SpectralSampler:
    """Stationary periodic Gaussian paths from the circulant covariance.

    The symmetric covariance row diagonalizes in the discrete Fourier basis;
    negative eigenvalues (the covariance may transiently lose positivity
    during solver iteration) are clipped to zero and the clipped fraction of
    total spectral mass is recorded. Above ``clip_abort_fraction`` the
    sampler refuses to continue — the requested process no longer resembles
    the covariance it was asked for.
    """

    def __init__(self, cov_row: np.ndarray, clip_abort_fraction: float = 0.10):
        cov_row = np.asarray(cov_row, dtype=np.float64)
        if cov_row.ndim != 1 or len(cov_row) < 2:
            raise DomainError("covariance row must be a 1-d grid")
        eig = np.fft.fft(cov_row).real
        total = float(np.abs(eig).sum())
        clipped = float(np.clip(-eig, 0.0, None).sum())
        self.clipped_fraction = clipped / total if total > 0 else 0.0
        if self.clipped_fraction > clip_abort_fraction:
            raise NumericalError(
                f"covariance lost positivity: {self.clipped_fraction:.1%} of spectral "
                f"mass clipped (budget {clip_abort_fraction:.0%})"
            )
        self._eig = np.clip(eig, 0.0, None)
        self._sqrt_eig = np.sqrt(self._eig)
        self.n = len(cov_row)

    def sample(self, generator: np.random.Generator, n_paths: int) -> np.ndarray:
        """Draw (n_paths, n_tau, 3) field paths with the row covariance per component."""
        g = generator.standard_normal((n_paths, 3, self.n))
        paths = np.fft.ifft(self._sqrt_eig * np.fft.fft(g, axis=2), axis=2).real
        return np.ascontiguousarray(paths.transpose(0, 2, 1))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Covariance acting on a (n_tau, 3) profile, per component."""
        return np.fft.ifft(self._eig[:, None] * np.fft.fft(x, axis=0), axis=0).real

    def pinv_apply(self, x: np.ndarray) -> np.ndarray:
        """Pseudo-inverse of the covariance on a (n_tau, 3) profile.

        Fourier modes with zero (clipped) eigenvalue are annihilated, so
        x should lie in the range of the covariance — profiles built with
        ``apply`` do by construction.
        """
        lam = np.where(self._eig > 0.0, self._eig, np.inf)
        return np.fft.ifft(np.fft.fft(x, axis=0) / lam[:, None], axis=0).real

    def apply_batch(self, paths: np.ndarray) -> np.ndarray:
        """Covariance applied to a batch of (n, n_tau, 3) profiles."""
        return np.fft.ifft(
            self._eig[None, :, None] * np.fft.fft(paths, axis=1), axis=1
        ).real

    @property
    def static_eigenvalue(self) -> float:
        """Spectral weight of the static (zero-frequency) mode."""
        return float(self._eig[0])


@dataclass(frozen=True)
class CorrelatorSample:
    """Monte-Carlo single-site correlators at one static field z.

    zeta: weight-shifted trace average, as (log_shift, mean) with
    zeta = exp(log_shift) * mean — kept split so downstream averages over z
    can combine magnitudes spanning many decades without overflow.
    one_point[nu]: a_nu(z), the normalized time-averaged Pauli insertion,
    split-half debiased (2 R_full - mean of half-sample ratios) so the
    leading O(1/ess) self-normalization bias cancels.
    one_point_halves: the plain per-half ratios, kept for diagnostics. None
    when either half loses a positive denominator (then one_point falls back
    to the undebiased full ratio).
    two_point[nu, k]: a_nu(z; tau_k, 0), lags k = 0..n_tau/2, debiased the
    same way; individual path traces may have negative real part
    (non-commuting slice products), so a small path subset can lose its
    positive denominator — then two_point_valid is False and two_point is
    zeros, for the caller to drop with accounting.
    ess: signed effective sample size of the weighted trace average,
    (sum w tr)^2 / sum (w tr)^2 — the number of equally-weighted samples
    with the same denominator noise. Undebiased ratios carry bias ~ 1/ess;
    the split-half correction knocks that down to O(1/ess^2).
    """

    log_shift: float
    zeta_mean: float
    one_point: np.ndarray
    two_point: np.ndarray
    one_point_halves: tuple[np.ndarray, np.ndarray] | None = None
    two_point_valid: bool = True
    ess: float = float("nan")
    cross_q0: float = float("nan")

    @property
    def zeta(self) -> float:
        return math.exp(self.log_shift) * self.zeta_mean

    def cross_overlap(self) -> float:
        """Estimate of sum_nu a_nu(z)^2, NaN if a half was invalid.

        Built from the product of independent half-sample ratios (no
        additive squared-noise floor), with the halves' own ratio bias
        removed by a quarter-sample Richardson step when all four quarter
        denominators stay positive.
        """
        return self.cross_q0


def importance_shift(
    kernel: ImaginaryTimeKernel,
    z: np.ndarray,
    sampler: SpectralSampler,
    steps: int,
) -> np.ndarray:
    """Mean shift for importance-sampled fluctuation paths at one z.

    At strong coupling the Monte-Carlo error is dominated by the log-normal
    spread of the path weights w * tr: its log varies by O(beta) across the
    prior ensemble and the signed effective sample size collapses
    exponentially. Centering the Gaussian proposal on the Laplace point of
    the integrand — the maximizer of log|tr prod M(z + xi)| - xi C^+ xi / 2,
    found here by damped fixed-point ascent xi <- C grad log|tr| using the
    exact insertion-trace gradient — removes that leading spread. The
    reweighted estimator is unbiased for any shift; the quality of the
    ascent affects only the variance, so a fixed small step count is fine.
    """
    shift = np.zeros((kernel.n_tau, 3))
    half_dtau = 0.5 * kernel.dtau
    for _ in range(steps):
        _, ins = _path_insertion_profile(shift + z, half_dtau)
        shift = 0.5 * shift + 0.5 * sampler.apply(half_dtau * ins)
    return shift


def importance_shift_batch(
    kernel: ImaginaryTimeKernel,
    zs: np.ndarray,
    sampler: SpectralSampler,
    steps: int,
) -> np.ndarray:
    """``importance_shift`` for a whole (n_z, 3) static-field batch.

    Identical ascent, one fused pass per step over all z — callers looping
    over many z pass the rows to ``single_site_correlators`` as
    ``tilt_shift`` and save the per-z ascent overhead.
    """
    zs = np.asarray(zs, dtype=np.float64)
    if zs.ndim != 2 or zs.shape[1] != 3:
        raise DomainError(f"zs must have shape (n_z, 3), got {zs.shape}")
    half_dtau = 0.5 * kernel.dtau
    shifts = np.zeros((zs.shape[0], kernel.n_tau, 3))
    for _ in range(steps):
        ins = _insertion_profiles(shifts + zs[:, None, :], half_dtau)
        shifts = 0.5 * shifts + 0.5 * sampler.apply_batch(half_dtau * ins)
    return shifts


def single_site_correlators(
    kernel: ImaginaryTimeKernel,
    z: np.ndarray,
    generator: np.random.Generator | None = None,
    *,
    n_xi: int | None = None,
    xi_paths: np.ndarray | None = None,
    n_xi_two_point: int | None = None,
    two_point_stride: int = 8,
    sampler: SpectralSampler | None = None,
    with_two_point: bool = True,
    tilt_steps: int = 0,
    tilt_scale: float = 1.0,
    tilt_shift: np.ndarray | None = None,
) -> CorrelatorSample:
    """Estimate zeta(z) and the one-/two-point insertion ratios at fixed z.

    Paths come either from ``xi_paths`` — pre-sampled fluctuations, shape
    (n, n_tau, 3) — or are drawn here (``generator`` and ``n_xi`` required).
    ``sampler`` may be passed in to reuse the spectral decomposition across
    many z (the covariance only changes between solver iterations).
    ``tilt_steps > 0`` importance-samples the paths around the per-z mean
    shift of ``importance_shift``; ``tilt_scale`` widens the proposal
    variance of the static Fourier mode by that factor — the integrand is
    much wider than the bare Gaussian along the static direction (the
    weight grows convexly with a static field), and sampling that one mode
    too narrow is a large part of what makes the weight tails heavy.
    Widening only 3 of the 3 n_tau dimensions keeps the chi-square cost of
    the reweighting negligible. Reweighting uses the exact Gaussian density
    ratio — same expectations for any shift and scale, only the variance
    changes. Neither knob is available with pre-sampled ``xi_paths``; the
    scale is ignored when the static mode carries no spectral weight.
    ``tilt_shift`` supplies a precomputed proposal mean (n_tau, 3) — e.g. a
    row of ``importance_shift_batch`` — instead of running the ascent here.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (3,):
        raise DomainError(f"z must be a 3-vector, got shape {z.shape}")
    if not (tilt_scale > 0.0 and math.isfinite(tilt_scale)):
        raise DomainError(f"tilt_scale must be positive and finite, got {tilt_scale}")
    log_is = None
    if xi_paths is not None:
        if tilt_steps > 0 or tilt_scale != 1.0 or tilt_shift is not None:
            raise DomainError("importance tilting requires internally sampled paths")
        fields = np.ascontiguousarray(np.asarray(xi_paths, dtype=np.float64))
        if fields.ndim != 3 or fields.shape[1] != kernel.n_tau or fields.shape[2] != 3:
            raise DomainError(
                f"xi_paths must have shape (n, {kernel.n_tau}, 3), got {fields.shape}"
            )
        fields = fields + z
        n_xi = fields.shape[0]
    else:
        if generator is None or n_xi is None:
            raise DomainError("need either xi_paths or (generator, n_xi)")
        if sampler is None:
            sampler = SpectralSampler(kernel.fluctuation_covariance())
        if sampler.n != kernel.n_tau:
            raise DomainError("sampler grid does not match the kernel grid")
        fields = sampler.sample(generator, n_xi)
        widen = tilt_scale != 1.0 and sampler.static_eigenvalue > 0.0
        if tilt_steps > 0 or widen or tilt_shift is not None:
            # exact prior/proposal log-density ratio. The static-mode
            # widening commutes with the covariance, so the ratio splits
            # into cheap pieces: -(s-1)/2 Q0(raw) + (3/2) log s for the
            # widening (Q0 the static-component Mahalanobis form) and
            # -y.v - shift.v/2 for the mean shift (y the widened
            # fluctuation, v = C^+ shift) — no full-batch transforms.
            log_is = np.zeros(n_xi)
            if widen:
                static = fields.mean(axis=1)
                q0_form = (kernel.n_tau / sampler.static_eigenvalue) * np.einsum(
                    "sn,sn->s", static, static
                )
                log_is += -0.5 * (tilt_scale - 1.0) * q0_form
                log_is += 1.5 * math.log(tilt_scale)
                fields = fields + (math.sqrt(tilt_scale) - 1.0) * static[:, None, :]
            shift = None
            if tilt_shift is not None:
                shift = np.asarray(tilt_shift, dtype=np.float64)
                if shift.shape != (kernel.n_tau, 3):
                    raise DomainError(
                        f"tilt_shift must have shape ({kernel.n_tau}, 3), got {shift.shape}"
                    )
            elif tilt_steps > 0:
                shift = importance_shift(kernel, z, sampler, tilt_steps)
            if shift is not None:
                v = sampler.pinv_apply(shift)
                log_is = log_is - fields.reshape(n_xi, -1) @ v.ravel()
                log_is -= 0.5 * float(np.vdot(shift, v))
                fields = fields + shift
        fields += z
    n_two = 0
    if with_two_point:
        n_two = n_xi if n_xi_two_point is None else min(n_xi_two_point, n_xi)
    n_lags = kernel.n_tau // 2 + 1
    logw, tr, one, two = _chain_stats(
        fields, 0.5 * kernel.dtau, n_lags, two_point_stride, max(n_two, 1)
    )
    if log_is is not None:
        logw = logw + log_is

    shift = float(np.max(logw))
    w = np.exp(logw - shift)
    wtr = w * tr.real
    den = float(np.sum(wtr))
    if den <= 0:
        raise NumericalError("nonpositive trace denominator in correlator estimate")
    zeta_mean = den / n_xi

    def span_ratio(
        values: np.ndarray, lo: int, hi: int, ess_floor: float
    ) -> np.ndarray | None:
        """Self-normalized ratio on a path span, None if the span is too
        degenerate to trust (nonpositive denominator or signed ESS below
        the floor — a near-zero denominator makes the ratio explode)."""
        d = float(np.sum(wtr[lo:hi]))
        if d <= 0.0:
            return None
        sq = float(np.sum(wtr[lo:hi] * wtr[lo:hi]))
        if d * d < ess_floor * sq:
            return None
        return np.tensordot(w[lo:hi], values[lo:hi], axes=(0, 0)) / d

    a_one = (w @ one.real) / den
    # the exact bound |a_nu| <= 1 holds for the expectation ratio, not the
    # finite-sample estimate — heavy-tailed weights can push an estimate past
    # it transiently; ensemble-level consumers decide when that is pathological

    # split-half debiasing: a self-normalized ratio on n paths has an
    # O(1/n) bias, the same bias doubled on each half, so 2 R_full -
    # mean(R_halves) cancels it exactly at leading order. Requires each
    # sub-span to carry enough effective samples, else falls back to the
    # plain ratio — Richardson on a noise-dominated span amplifies rather
    # than corrects.
    halves = None
    cross_q0 = float("nan")
    h = n_xi // 2
    if h >= 1:
        h1 = span_ratio(one.real, 0, h, _HALF_ESS_FLOOR)
        h2 = span_ratio(one.real, h, n_xi, _HALF_ESS_FLOOR)
        if h1 is not None and h2 is not None:
            halves = (h1, h2)
            a_one = 2.0 * a_one - 0.5 * (h1 + h2)
            # the product of independent half-ratios estimates sum_nu
            # a_nu^2 without the additive noise floor of squaring, but
            # keeps each half's ratio bias; quarter-product Richardson
            # removes that too.
            cross_q0 = float(np.dot(h1, h2))
            qspans = [(0, h // 2), (h // 2, h), (h, h + (n_xi - h) // 2),
                      (h + (n_xi - h) // 2, n_xi)]
            quarters = [
                span_ratio(one.real, lo, hi, _QUARTER_ESS_FLOOR)
                for lo, hi in qspans
            ]
            if all(q is not None for q in quarters):
                p4 = 0.5 * (
                    float(np.dot(quarters[0], quarters[1]))
                    + float(np.dot(quarters[2], quarters[3]))
                )
                cross_q0 = 2.0 * cross_q0 - p4

    a_two = np.zeros((3, n_lags))
    two_valid = True
    if with_two_point and n_two > 0:
        den2 = float(np.sum(wtr[:n_two]))
        if den2 > 0:
            a_two = np.einsum("s,snk->nk", w[:n_two], two[:n_two].real) / den2
            lag0 = float(a_two[:, 0].sum())
            # exact identity; roundoff scales with the weight cancellation
            cancel = float(np.abs(wtr[:n_two]).sum()) / den2
            if abs(lag0 - 3.0) > 1e-10 * (cancel + 1.0):
                raise NumericalError(f"lag-0 sum rule violated: {lag0!r} != 3")
            h2p = n_two // 2
            t_a = span_ratio(two[:n_two].real, 0, h2p, _HALF_ESS_FLOOR)
            t_b = span_ratio(two[:n_two].real, h2p, n_two, _HALF_ESS_FLOOR)
            if h2p >= 1 and t_a is not None and t_b is not None:
                # each half satisfies the lag-0 sum rule exactly, so the
                # debiased row does too
                a_two = 2.0 * a_two - 0.5 * (t_a + t_b)
        else:
            two_valid = False

    return CorrelatorSample(
        log_shift=shift,
        zeta_mean=zeta_mean,
        one_point=a_one,
        two_point=a_two,
        one_point_halves=halves,
        two_point_valid=two_valid,
        ess=den * den / float(np.sum(wtr * wtr)),
        cross_q0=cross_q0,
    )


def zeta_identity_check(
    alpha: float,
    *,
    n_samples: int = 400_000,
    n_tau: int = 64,
    seed: int = 0,
    batch: int = 16_384,
) -> dict:
    """MC check of the exponentiated-square trace identity.

    The identity's parameter alpha multiplies the squared net polarization;
    by Gaussian linearization that corresponds to a constant per-component
    field covariance 2 alpha / beta^2 (beta = 1 here). Returns the MC mean,
    its standard error, the closed-form target, and the relative error.
    """
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    cov = np.full(n_tau, 2.0 * alpha)
    sampler = SpectralSampler(cov)
    gen = _rng.derive(seed, 0)
    total = 0.0
    total_sq = 0.0
    done = 0
    half_dtau = 0.5 / n_tau  # beta = 1
    while done < n_samples:
        m = min(batch, n_samples - done)
        fields = sampler.sample(gen, m)
        logw, tr, _, _ = _chain_stats(fields, half_dtau, 1, n_tau, 1)
        vals = np.exp(logw) * tr.real
        total += float(vals.sum())
        total_sq += float((vals**2).sum())
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean**2, 0.0)
    stderr = math.sqrt(var / n_samples)
    target = polarization_trace(alpha)
    return {
        "alpha": alpha,
        "mc_mean": mean,
        "stderr": stderr,
        "target": target,
        "rel_err": abs(mean - target) / target,
        "n_samples": n_samples,
    }
