"""Two-branch temperature scan of the RS overlap.

The Monte-Carlo fixed point has complementary failure modes on the two
sides of the ordering transition, so a single sweep through temperatures
cannot be trusted end to end.

On the weak-coupling side the untilted path estimator is unbiased, but its
signed weights collapse once the coupling grows (the positive-trace
denominators develop a heavy sign problem), so the scan *climbs* from the
weakest coupling, warm-starting every point from the previous kernel to
stay on the smoothly continued branch; when the effective sample size dies
the point aborts honestly and the branch ends there.

On the strong-coupling side the importance tilt keeps the weights alive,
but it carries a positive finite-sample ratio bias that at moderate
coupling is large enough to manufacture spurious ordered fixed points, so
the scan *descends* from the strongest coupling with the tilt enabled and
stops short of the crossover regime.

Between the two branch endpoints the damped iteration is unstable (the
alternating-sign overlap residuals flagged by the solver); the transition
is therefore reported as the bracket between the last trusted point of
each branch, not as a pointwise crossing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .. import rng as _rng
from .kernel import ImaginaryTimeKernel, RsSolverConfig
from .solver import rs_solve

__all__ = ["ScanPoint", "TransitionScan", "rs_transition_scan"]


@dataclass(frozen=True)
class ScanPoint:
    """Solver outcome at one coupling on one branch."""

    betaJ: float
    branch: str  # "up" (ascending, untilted) or "down" (descending, tilted)
    q0: float
    q0_stderr: float
    converged: bool
    aborted: bool
    oscillating: bool
    abort_reason: str | None
    init: str  # "warm" (continued from neighbour) or "cold"
    n_xi: int
    tilt_steps: int
    iterations: int
    seconds: float

    def as_dict(self) -> dict:
        return {
            "betaJ": self.betaJ,
            "branch": self.branch,
            "q0": self.q0,
            "q0_stderr": self.q0_stderr,
            "converged": self.converged,
            "aborted": self.aborted,
            "oscillating": self.oscillating,
            "abort_reason": self.abort_reason,
            "init": self.init,
            "n_xi": self.n_xi,
            "tilt_steps": self.tilt_steps,
            "iterations": self.iterations,
            "seconds": self.seconds,
        }


@dataclass(frozen=True)
class TransitionScan:
    """Full scan result with the transition bracket.

    ``para_max`` is the largest coupling on the up branch that converged
    with q0 below ``para_threshold``; ``glass_min`` the smallest coupling
    on the down branch that converged with q0 above ``glass_threshold``.
    The transition lies inside [para_max, glass_min] when both exist.
    """

    points: tuple[ScanPoint, ...]
    para_max: float | None
    glass_min: float | None
    para_threshold: float
    glass_threshold: float
    seconds: float

    def bracket(self) -> tuple[float, float] | None:
        if self.para_max is None or self.glass_min is None:
            return None
        if self.para_max >= self.glass_min:
            return None
        return (self.para_max, self.glass_min)

    def point_at(self, betaJ: float) -> ScanPoint:
        for pt in self.points:
            if math.isclose(pt.betaJ, betaJ, abs_tol=1e-9):
                return pt
        raise KeyError(f"no scan point at betaJ={betaJ}")

    def as_dict(self) -> dict:
        return {
            "points": [pt.as_dict() for pt in self.points],
            "para_max": self.para_max,
            "glass_min": self.glass_min,
            "bracket": list(self.bracket()) if self.bracket() else None,
            "para_threshold": self.para_threshold,
            "glass_threshold": self.glass_threshold,
            "seconds": self.seconds,
        }


def _point_seed(seed: int, branch_id: int, index: int) -> int:
    return int(_rng.derive(seed, branch_id, index).integers(0, 2**31))


def _rebuild(kernel: ImaginaryTimeKernel, beta: float) -> ImaginaryTimeKernel:
    """Carry a converged kernel to a neighbouring temperature as warm start.

    The correlator row is reused verbatim on the rescaled grid; the first
    damped sweeps repair the profile shape while keeping the iterate on the
    already-found branch.
    """
    return ImaginaryTimeKernel(
        beta=beta, J=kernel.J, p=kernel.p, G=kernel.G, q0=kernel.q0
    )


def _run_branch(
    branch: str,
    couplings: Sequence[float],
    p: int,
    J: float,
    n_tau: int,
    n_z: int,
    seed: int,
    workers: int,
    para_like_start: bool,
    progress: Callable[[ScanPoint], None] | None,
) -> list[ScanPoint]:
    branch_id = 0 if branch == "up" else 1
    points: list[ScanPoint] = []
    prev: ImaginaryTimeKernel | None = None
    for k, betaJ in enumerate(couplings):
        beta = betaJ / J
        if branch == "up":
            # untilted: unbiased, needs more paths as the sign problem grows
            tilt = 0
            if betaJ <= 3.75:
                n_xi, max_iters = 256, 16
            elif betaJ <= 4.75:
                n_xi, max_iters = 1024, 16
            else:
                n_xi, max_iters = 2048, 8
        else:
            # tilted: weights stay alive at strong coupling; spend more paths
            # toward the crossover where the landscape flattens
            tilt = 8
            if betaJ >= 7.75:
                n_xi, max_iters = 512, 16 if k == 0 else 12
            else:
                n_xi, max_iters = 1024, 12
        init: ImaginaryTimeKernel | str
        if prev is not None:
            init = _rebuild(prev, beta)
            init_label = "warm"
        else:
            init = "liouville"
            init_label = "cold"
            # a cold start must relax the whole correlator profile, not just
            # track a neighbouring fixed point; give it room to converge
            max_iters = max(max_iters, 28)
        config = RsSolverConfig(
            n_tau=n_tau,
            n_z=n_z,
            n_xi=n_xi,
            n_xi_two_point=min(256, n_xi),
            two_point_stride=32,
            max_iters=max_iters,
            seed=_point_seed(seed, branch_id, k),
            q0_init=0.0 if para_like_start else 0.8,
            init=init,
            tilt_steps=tilt,
        )
        t0 = time.perf_counter()
        kernel, report = rs_solve(beta, J, p, config, workers=workers)
        pt = ScanPoint(
            betaJ=betaJ,
            branch=branch,
            q0=report.q0,
            q0_stderr=report.q0_stderr,
            converged=report.converged,
            aborted=report.aborted,
            oscillating=report.oscillating,
            abort_reason=report.abort_reason,
            init=init_label,
            n_xi=n_xi,
            tilt_steps=tilt,
            iterations=report.iterations,
            seconds=time.perf_counter() - t0,
        )
        points.append(pt)
        if progress is not None:
            progress(pt)
        # an aborted point cannot seed its neighbour; fall back to cold
        prev = None if report.aborted else kernel
    return points


def rs_transition_scan(
    p: int = 3,
    J: float = 1.0,
    *,
    betaJ_values: Sequence[float] | None = None,
    n_tau: int = 256,
    n_z: int = 512,
    seed: int = 0,
    workers: int = 1,
    up_stop: float = 5.5,
    down_stop: float = 6.0,
    para_threshold: float = 0.05,
    glass_threshold: float = 0.3,
    progress: Callable[[ScanPoint], None] | None = None,
) -> TransitionScan:
    """Scan the RS overlap over a coupling grid with the two-branch protocol.

    ``betaJ_values`` defaults to 1.0 .. 10.0 in steps of 0.5. Couplings at
    or below ``up_stop`` run on the ascending untilted branch, couplings at
    or above ``down_stop`` on the descending tilted branch; each branch
    warm-starts from its previous kernel. The two stops must leave no grid
    point uncovered.
    """
    if betaJ_values is None:
        betaJ_values = [1.0 + 0.5 * i for i in range(19)]
    values = sorted(float(v) for v in betaJ_values)
    if not values:
        raise ValueError("empty coupling grid")
    uncovered = [v for v in values if v > up_stop and v < down_stop]
    if uncovered:
        raise ValueError(f"couplings {uncovered} fall between the branch stops")

    t0 = time.perf_counter()
    up = _run_branch(
        "up",
        [v for v in values if v <= up_stop],
        p, J, n_tau, n_z, seed, workers,
        para_like_start=True,
        progress=progress,
    )
    down = _run_branch(
        "down",
        [v for v in values if v >= down_stop][::-1],
        p, J, n_tau, n_z, seed, workers,
        para_like_start=False,
        progress=progress,
    )
    points = tuple(sorted(up + down, key=lambda pt: pt.betaJ))

    para = [
        pt.betaJ
        for pt in up
        if pt.converged and not pt.aborted and pt.q0 < para_threshold
    ]
    glassy = [
        pt.betaJ
        for pt in down
        if pt.converged and not pt.aborted and pt.q0 > glass_threshold
    ]
    return TransitionScan(
        points=points,
        para_max=max(para) if para else None,
        glass_min=min(glassy) if glassy else None,
        para_threshold=para_threshold,
        glass_threshold=glass_threshold,
        seconds=time.perf_counter() - t0,
    )
