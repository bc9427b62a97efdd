"""Damped fixed-point solver for the replica-symmetric saddle equations.

Each sweep draws static fields z with per-component variance q0_hat and, for
every z, Monte-Carlo estimates the normalized one- and two-point Pauli
insertion ratios of a single spin in z plus a fluctuating field with
covariance row Sigma - q0_hat. The right-hand sides

    G_new(tau_k) = mean_z sum_nu a_nu(z; tau_k, 0)
    q0_new       = mean_z sum_nu a_nu(z)^2

(the unweighted z-average is the vanishing-replica limit) are then mixed
into the kernel with damping. z-samples are independent work units with
index-derived RNG streams and fixed-order reductions, so results are
bit-identical for a given seed at any worker count.

The same single-site machinery evaluates the m=1 complexity functional at a
prescribed inner overlap q1, with jackknife error bars over the z-samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, NumericalError
from .. import rng as _rng
from .kernel import ImaginaryTimeKernel, RsSolverConfig, liouville_init
from .sampler import SpectralSampler, importance_shift_batch, single_site_correlators

__all__ = [
    "RhsEstimate",
    "IterationDiagnostics",
    "RsReport",
    "TapEstimate",
    "evaluate_rhs",
    "rs_iterate",
    "rs_solve",
    "tap_complexity",
    "tap_kl_divergence",
]

_CONSECUTIVE_BELOW_TOL = 3
_OSCILLATION_WINDOW = 6
_TAIL_AVERAGE = 5
# undamped residuals cannot drop below the MC noise in the right-hand sides;
# the convergence threshold is therefore max(tolerance, this many stderrs).
_NOISE_TOL_SIGMA = 3.0
# finite-sample ratio estimates may exceed the exact bound |a_nu| <= 1, and a
# path subset may lose its positive denominator outright (negative-trace
# paths); both are ordinary tail events dropped with accounting. Abort only
# when they hit a large fraction of z-samples, signalling a broken kernel or
# collapsed effective sample size rather than MC noise.
_RATIO_SLACK = 0.05
_RATIO_VIOLATION_BUDGET = 0.50
_MIN_KEPT_FRACTION = 0.25


@dataclass(frozen=True)
class RhsEstimate:
    """Monte-Carlo right-hand sides of the saddle equations at a fixed kernel.

    ``G`` is the plain correlator estimate mean_z sum_nu g_nu(z, tau_k) and
    ``G_connected`` the per-z-subtracted row mean_z sum_nu [g_nu(z, tau_k) -
    a_nu(z)^2] (with the squared one-point ratios cross-estimated on path
    halves, so the subtraction carries no additive noise floor). At large
    tau the two-point ratios factorize, so G_connected decays to zero there
    while G's plateau carries the overlap.
    """

    G: np.ndarray
    G_connected: np.ndarray
    q0: float
    q0_stderr: float
    G_stderr: float
    clipped_fraction: float
    ratio_violation_fraction: float
    one_point_dropped_fraction: float
    two_point_dropped_fraction: float


@dataclass(frozen=True)
class IterationDiagnostics:
    iteration: int
    residual_G: float
    residual_q0: float
    signed_residual_q0: float
    q0_estimate: float
    q0_stderr: float
    G_stderr: float
    clipped_fraction: float
    ratio_violation_fraction: float
    one_point_dropped_fraction: float
    two_point_dropped_fraction: float

    @property
    def residual(self) -> float:
        return max(self.residual_G, self.residual_q0)


def _sweep(
    kernel: ImaginaryTimeKernel,
    config: RsSolverConfig,
    iteration: int,
    *,
    two_point: bool,
    workers: int = 1,
) -> RhsEstimate:
    """One unweighted z-average of the single-site correlator ratios.

    RNG streams are namespaced per iteration: z-samples come from
    (seed, iteration, 0), the xi-paths of z-sample idx from
    (seed, iteration, 1 + idx). Deterministic for a given seed regardless
    of ``workers``. With ``two_point=False`` the G row of the result is the
    kernel's own (only the overlap is re-estimated).
    """
    if kernel.n_tau != config.n_tau:
        raise DomainError(
            f"kernel grid {kernel.n_tau} does not match config grid {config.n_tau}"
        )
    sampler = SpectralSampler(
        kernel.fluctuation_covariance(), config.clip_abort_fraction
    )
    q0_hat = kernel.q0_hat
    if q0_hat < 0:
        raise DomainError(f"negative static-field variance q0_hat={q0_hat}")
    zs = math.sqrt(q0_hat) * _rng.derive(
        config.seed, iteration, 0
    ).standard_normal((config.n_z, 3))
    shifts = None
    if config.tilt_steps > 0:
        shifts = importance_shift_batch(kernel, zs, sampler, config.tilt_steps)

    n_lags = config.n_tau // 2 + 1
    one = np.zeros((config.n_z, 3))
    cross = np.full(config.n_z, np.nan)
    two = np.zeros((config.n_z, 3, n_lags))
    one_ok = np.zeros(config.n_z, dtype=bool)
    two_ok = np.zeros(config.n_z, dtype=bool)

    def work(idx: int) -> None:
        try:
            cs = single_site_correlators(
                kernel,
                zs[idx],
                _rng.derive(config.seed, iteration, 1 + idx),
                n_xi=config.n_xi,
                n_xi_two_point=config.n_two_point,
                two_point_stride=config.two_point_stride,
                sampler=sampler,
                with_two_point=two_point,
                tilt_steps=config.tilt_steps,
                tilt_shift=None if shifts is None else shifts[idx],
            )
        except NumericalError:
            return  # this z-sample is dropped, with accounting below
        one[idx] = cs.one_point
        one_ok[idx] = True
        cross[idx] = cs.cross_overlap()
        if two_point and cs.two_point_valid:
            two[idx] = cs.two_point
            two_ok[idx] = True

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, range(config.n_z)))
    else:
        for idx in range(config.n_z):
            work(idx)

    cross_ok = np.isfinite(cross)
    n_cross, n_two_kept = int(cross_ok.sum()), int(two_ok.sum())
    kept_floor = max(2, int(math.ceil(_MIN_KEPT_FRACTION * config.n_z)))
    if n_cross < kept_floor or (two_point and n_two_kept < kept_floor):
        raise NumericalError(
            f"only {n_cross}/{config.n_z} overlap and {n_two_kept}/{config.n_z} "
            "two-point z-samples kept a positive denominator — estimator breakdown"
        )
    violations = float(
        np.sum(np.max(np.abs(one[one_ok]), axis=1) > 1.0 + _RATIO_SLACK)
    ) / int(one_ok.sum())
    if violations > _RATIO_VIOLATION_BUDGET:
        raise NumericalError(
            f"{violations:.0%} of z-samples exceed the exact insertion-ratio "
            "bound — collapsed effective sample size or inconsistent kernel"
        )

    q0_new = float(cross[cross_ok].mean())
    q0_stderr = float(cross[cross_ok].std(ddof=1)) / math.sqrt(n_cross)

    def reflect(half: np.ndarray, pin0: float) -> np.ndarray:
        row = np.empty(config.n_tau)
        row[:n_lags] = half
        row[n_lags:] = half[1 : n_lags - 1][::-1]  # row(N - k) = row(k)
        row[0] = pin0  # lag-0 sum rule holds exactly; pin it against roundoff
        return row

    if two_point:
        joint = two_ok & cross_ok
        if int(joint.sum()) < kept_floor:
            raise NumericalError(
                f"only {int(joint.sum())}/{config.n_z} z-samples kept both a "
                "two-point and an overlap estimate — estimator breakdown"
            )
        g_rows = two[two_ok].sum(axis=1)  # (kept, n_lags): sum over directions
        g_half = g_rows.mean(axis=0)
        g_stderr = float(np.max(g_rows.std(axis=0, ddof=1))) / math.sqrt(n_two_kept)
        c_rows = two[joint].sum(axis=1) - cross[joint][:, None]
        G_new = reflect(g_half, 3.0)
        C_new = reflect(c_rows.mean(axis=0), 3.0 - q0_new)
        two_dropped = 1.0 - n_two_kept / config.n_z
    else:
        G_new = kernel.G.copy()
        C_new = G_new - kernel.q0
        g_stderr = 0.0
        two_dropped = 0.0
    if not (np.all(np.isfinite(G_new)) and math.isfinite(q0_new)):
        raise NumericalError("saddle right-hand side diverged (non-finite estimate)")
    return RhsEstimate(
        G=G_new,
        G_connected=C_new,
        q0=q0_new,
        q0_stderr=q0_stderr,
        G_stderr=g_stderr,
        clipped_fraction=sampler.clipped_fraction,
        ratio_violation_fraction=violations,
        one_point_dropped_fraction=1.0 - n_cross / config.n_z,
        two_point_dropped_fraction=two_dropped,
    )


def evaluate_rhs(
    kernel: ImaginaryTimeKernel,
    config: RsSolverConfig,
    iteration: int = 0,
    *,
    workers: int = 1,
) -> RhsEstimate:
    """Both saddle right-hand sides at a fixed kernel, one full sweep."""
    return _sweep(kernel, config, iteration, two_point=True, workers=workers)


def rs_iterate(
    kernel: ImaginaryTimeKernel,
    config: RsSolverConfig,
    iteration: int = 0,
    *,
    workers: int = 1,
) -> tuple[ImaginaryTimeKernel, IterationDiagnostics]:
    """One damped sweep in connected coordinates (c, q0), c = G - q0.

    The overlap and the connected correlator are mixed as separate
    variables and the kernel is rebuilt as G = c + q0. Mixing G directly
    is unstable out of equilibrium: the measured correlator plateau is
    q0 + connected(mid-grid), and while the connected part has not decayed
    yet the plateau runs above the overlap, which inflates the mid-grid
    fluctuation covariance Sigma - q0_hat, suppresses the next static
    response, and drives the iteration into the trivial q0 = 0 state even
    below the glass temperature. In connected coordinates the mid-grid
    covariance stays pinned near zero along the whole trajectory because
    the per-z-subtracted connected estimate itself decays at large tau.
    Residuals are the undamped sup-norm defects |RHS - kernel|, the
    natural fixed-point error measure independent of the mixing parameter.
    """
    rhs = _sweep(kernel, config, iteration, two_point=True, workers=workers)
    undamped_g = rhs.G_connected + rhs.q0
    undamped_g[0] = 3.0
    residual_g = float(np.max(np.abs(undamped_g - kernel.G)))
    signed_q0 = rhs.q0 - kernel.q0
    a = config.mixing
    c_next = (1.0 - a) * (kernel.G - kernel.q0) + a * rhs.G_connected
    # project the mixed iterate onto the exact physical ranges: |G| <= 3 and
    # q0 >= 0 (three insertion directions, each ratio in [-1, 1]; the
    # cross-estimator is unbiased around 0 so its mean can dip negative in
    # the non-overlapping phase). Heavy-tailed MC estimates can overshoot;
    # the projection keeps every iterate a valid kernel without touching
    # the estimates themselves.
    q0_next = max(0.0, (1.0 - a) * kernel.q0 + a * rhs.q0)
    g_next = np.clip(c_next + q0_next, -3.0, 3.0)
    g_next[0] = 3.0
    updated = kernel.with_updates(G=g_next, q0=q0_next)
    diag = IterationDiagnostics(
        iteration=iteration,
        residual_G=residual_g,
        residual_q0=abs(signed_q0),
        signed_residual_q0=signed_q0,
        q0_estimate=rhs.q0,
        q0_stderr=rhs.q0_stderr,
        G_stderr=rhs.G_stderr,
        clipped_fraction=rhs.clipped_fraction,
        ratio_violation_fraction=rhs.ratio_violation_fraction,
        one_point_dropped_fraction=rhs.one_point_dropped_fraction,
        two_point_dropped_fraction=rhs.two_point_dropped_fraction,
    )
    return updated, diag


@dataclass(frozen=True)
class RsReport:
    """Convergence report for one rs_solve run."""

    converged: bool
    aborted: bool
    abort_reason: str | None
    iterations: int
    q0: float
    q0_stderr: float
    q0_series: tuple[float, ...]
    residuals: tuple[float, ...]
    oscillating: bool
    clipped_fraction: float
    dropped_fraction: float
    tolerance: float

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "iterations": self.iterations,
            "q0": self.q0,
            "q0_stderr": self.q0_stderr,
            "q0_series": list(self.q0_series),
            "residuals": list(self.residuals),
            "oscillating": self.oscillating,
            "clipped_fraction": self.clipped_fraction,
            "dropped_fraction": self.dropped_fraction,
            "tolerance": self.tolerance,
        }


def _oscillating(signed_q0_residuals: list[float], tolerance: float) -> bool:
    window = signed_q0_residuals[-_OSCILLATION_WINDOW:]
    if len(window) < 3 or max(abs(r) for r in window) <= tolerance:
        return False
    flips = sum(
        1 for a, b in zip(window, window[1:]) if a * b < 0
    )
    return flips >= 3


def rs_solve(
    beta: float,
    J: float,
    p: int,
    config: RsSolverConfig,
    *,
    workers: int = 1,
) -> tuple[ImaginaryTimeKernel, RsReport]:
    """Iterate the damped saddle map to a fixed point.

    Convergence requires the undamped residual below the effective
    threshold — max(tolerance, a three-stderr MC noise floor) — on three
    consecutive sweeps (a single dip below a noisy threshold is not
    convergence). The reported q0 is the tail average over the last few
    damped iterates, which smooths residual MC wander; the oscillation flag
    marks alternating-sign q0 defects of super-threshold size, the known
    instability signature near the transition. Non-convergence or a
    mid-iteration numerical abort returns the last stable kernel, flagged.
    A custom ``config.init`` kernel is used exactly as given (warm starts
    across temperatures); ``q0_init`` shapes only the default start.
    """
    if isinstance(config.init, ImaginaryTimeKernel):
        kernel = config.init
        if (kernel.beta, kernel.J, kernel.p) != (beta, J, p):
            raise DomainError(
                "custom init kernel disagrees with the requested (beta, J, p)"
            )
        if kernel.n_tau != config.n_tau:
            raise DomainError("custom init kernel grid does not match config")
    else:
        base = liouville_init(beta, J, p, config.n_tau)
        # Seed the ordered branch (q0 = 0 is absorbing) with a kernel that
        # is already self-consistent: blending the conformal profile toward
        # the seeded plateau, G = q0 + (3 - q0) G_conf / 3, keeps G(0) = 3,
        # decays monotonically, and lands on a plateau equal to the seeded
        # overlap — the fixed-point relation plateau(G) = q0. Seeding the
        # overlap without lifting the plateau (or vice versa) starts the
        # iteration off the consistent manifold and it falls to q0 = 0.
        kernel = base.with_updates(
            G=config.q0_init + (1.0 - config.q0_init / 3.0) * base.G,
            q0=config.q0_init,
        )

    q0_series: list[float] = []
    residuals: list[float] = []
    signed: list[float] = []
    q0_stderr = float("nan")
    clipped = 0.0
    dropped = 0.0
    converged = False
    aborted = False
    abort_reason = None
    below = 0
    count = 0
    for i in range(config.max_iters):
        try:
            kernel, diag = rs_iterate(kernel, config, iteration=i, workers=workers)
        except NumericalError as exc:
            aborted = True
            abort_reason = str(exc)
            break
        count = i + 1
        q0_series.append(kernel.q0)
        residuals.append(diag.residual)
        signed.append(diag.signed_residual_q0)
        q0_stderr = diag.q0_stderr
        clipped = max(clipped, diag.clipped_fraction)
        dropped = max(
            dropped,
            diag.one_point_dropped_fraction,
            diag.two_point_dropped_fraction,
        )
        noise_floor = _NOISE_TOL_SIGMA * max(diag.G_stderr, diag.q0_stderr)
        below = (
            below + 1
            if diag.residual < max(config.tolerance, noise_floor)
            else 0
        )
        if below >= _CONSECUTIVE_BELOW_TOL:
            converged = True
            break

    if q0_series:
        tail = q0_series[-_TAIL_AVERAGE:]
        q0_final = max(0.0, float(np.mean(tail)))
        kernel = kernel.with_updates(q0=q0_final)
    else:
        q0_final = kernel.q0
    kernel.check_invariants(g0_tol=0.05, sym_tol=0.02)

    report = RsReport(
        converged=converged,
        aborted=aborted,
        abort_reason=abort_reason,
        iterations=count,
        q0=q0_final,
        q0_stderr=q0_stderr,
        q0_series=tuple(q0_series),
        residuals=tuple(residuals),
        oscillating=_oscillating(signed, config.tolerance),
        clipped_fraction=clipped,
        dropped_fraction=dropped,
        tolerance=config.tolerance,
    )
    return kernel, report


# ---------------------------------------------------------------------------
# m = 1 complexity functional


@dataclass(frozen=True)
class TapEstimate:
    """Monte-Carlo value of the m=1 complexity functional at inner overlap q1."""

    value: float
    stderr: float
    flagged: bool
    q1: float
    n_z: int
    n_xi: int
    energy_term: float
    log_mean_zeta: float
    zeta_entropy: float

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "flagged": self.flagged,
            "q1": self.q1,
            "n_z": self.n_z,
            "n_xi": self.n_xi,
            "energy_term": self.energy_term,
            "log_mean_zeta": self.log_mean_zeta,
            "zeta_entropy": self.zeta_entropy,
        }


def _log_zeta_samples(
    kernel: ImaginaryTimeKernel,
    q1: float,
    n_z: int,
    n_xi: int,
    seed: int,
    *,
    workers: int = 1,
    tilt_steps: int = 8,
) -> np.ndarray:
    """log zeta(z_i) for z ~ N(0, q1_hat I3), fluctuations with row Sigma - q1_hat."""
    if not 0.0 <= q1 <= 3.0:
        raise DomainError(f"q1 must lie in [0, 3], got {q1}")
    if n_z < 2 or n_xi < 1:
        raise DomainError("need n_z >= 2 and n_xi >= 1")
    q1_hat = kernel.J**2 * q1 ** (kernel.p - 1)
    sampler = SpectralSampler(kernel.sigma - q1_hat)
    zs = math.sqrt(q1_hat) * _rng.derive(seed, 0).standard_normal((n_z, 3))
    out = np.empty(n_z)

    def work(idx: int) -> None:
        cs = single_site_correlators(
            kernel,
            zs[idx],
            _rng.derive(seed, 1, idx),
            n_xi=n_xi,
            sampler=sampler,
            with_two_point=False,
            tilt_steps=tilt_steps,
        )
        out[idx] = cs.log_shift + math.log(cs.zeta_mean)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, range(n_z)))
    else:
        for idx in range(n_z):
            work(idx)
    return out


def tap_complexity(
    kernel: ImaginaryTimeKernel,
    q1: float,
    n_z: int = 512,
    n_xi: int = 512,
    seed: int = 0,
    *,
    workers: int = 1,
    tilt_steps: int = 8,
) -> TapEstimate:
    """Complexity of the m=1 ansatz at inner overlap q1.

        S = (beta J)^2/2 (1 - 1/p) q1^p + log E_z zeta - E_z[zeta log zeta]/E_z zeta.

    The two zeta averages run over the same z-samples (correlated, which
    cancels much of the MC noise in the difference); the jackknife is over
    whole z-samples and therefore sees that correlation. q1 = 0 returns 0
    exactly: zeta no longer depends on z, so both averaging terms cancel.
    """
    betaJ = kernel.beta * kernel.J
    if q1 == 0.0:
        return TapEstimate(
            value=0.0, stderr=0.0, flagged=False, q1=0.0, n_z=n_z, n_xi=n_xi,
            energy_term=0.0, log_mean_zeta=float("nan"), zeta_entropy=float("nan"),
        )
    lz = _log_zeta_samples(
        kernel, q1, n_z, n_xi, seed, workers=workers, tilt_steps=tilt_steps
    )
    energy = 0.5 * betaJ**2 * (1.0 - 1.0 / kernel.p) * q1**kernel.p

    shift = float(lz.max())
    e = np.exp(lz - shift)
    t1 = float(e.sum())
    t2 = float((e * lz).sum())
    log_mean = shift + math.log(t1 / n_z)
    entropy = t2 / t1  # E[zeta log zeta] / E[zeta]
    value = energy + log_mean - entropy

    # delete-one jackknife over z
    t1_i = t1 - e
    t2_i = t2 - e * lz
    s_i = energy + shift + np.log(t1_i / (n_z - 1)) - t2_i / t1_i
    stderr = math.sqrt((n_z - 1) / n_z * float(((s_i - s_i.mean()) ** 2).sum()))
    flagged = stderr > 0.2 * abs(value)
    return TapEstimate(
        value=value,
        stderr=stderr,
        flagged=flagged,
        q1=q1,
        n_z=n_z,
        n_xi=n_xi,
        energy_term=energy,
        log_mean_zeta=log_mean,
        zeta_entropy=entropy,
    )


def tap_kl_divergence(
    kernel: ImaginaryTimeKernel,
    q1: float,
    n_z: int = 512,
    n_xi: int = 512,
    seed: int = 0,
    *,
    workers: int = 1,
    tilt_steps: int = 8,
) -> tuple[float, float]:
    """(estimate, jackknife stderr) of D_KL = E[zeta log zeta]/E zeta - log E zeta.

    The complexity functional equals its energy term minus this divergence;
    estimating the divergence under a fresh seed gives an independent check
    of that identity.
    """
    if q1 == 0.0:
        return 0.0, 0.0
    lz = _log_zeta_samples(
        kernel, q1, n_z, n_xi, seed, workers=workers, tilt_steps=tilt_steps
    )
    shift = float(lz.max())
    e = np.exp(lz - shift)
    t1 = float(e.sum())
    t2 = float((e * lz).sum())
    value = t2 / t1 - (shift + math.log(t1 / n_z))
    t1_i = t1 - e
    t2_i = t2 - e * lz
    d_i = t2_i / t1_i - (shift + np.log(t1_i / (n_z - 1)))
    stderr = math.sqrt((n_z - 1) / n_z * float(((d_i - d_i.mean()) ** 2).sum()))
    return value, stderr
