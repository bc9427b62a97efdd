"""Imaginary-time kernel and solver configuration for the RS saddle point.

The kernel holds the periodic time-ordered correlator G on an even
``n_tau``-point grid over [0, beta), its Lagrange partner
Sigma(tau) = J^2 G(tau)^{p-1}, and the static off-diagonal overlap q0 with
q0_hat = J^2 q0^{p-1}. Fields decompose into a static 3-vector z with
per-component variance q0_hat plus a stationary fluctuation xi with
per-component covariance Sigma(tau) - q0_hat; both couple to the spin-1/2
operators sigma/2, while correlator insertions are the bare Pauli matrices
(so G(0) = 3, one unit per direction).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import DomainError

__all__ = [
    "ImaginaryTimeKernel",
    "RsSolverConfig",
    "liouville_b",
    "liouville_init",
    "kernel_to_json",
    "kernel_from_json",
]

_KERNEL_KEYS = {"beta", "J", "p", "n_tau", "q0", "G"}


@dataclass(frozen=True)
class ImaginaryTimeKernel:
    beta: float
    J: float
    p: int
    G: np.ndarray
    q0: float

    def __post_init__(self) -> None:
        g = np.array(self.G, dtype=np.float64)
        g.setflags(write=False)
        object.__setattr__(self, "G", g)
        if self.beta <= 0 or self.J <= 0:
            raise DomainError("beta and J must be positive")
        if self.p < 3:
            raise DomainError(f"p must be at least 3, got {self.p}")
        if g.ndim != 1 or len(g) < 8 or len(g) % 2:
            raise DomainError(f"G must be a 1-d even-length grid of >= 8 points, got shape {g.shape}")
        if not np.all(np.isfinite(g)) or not math.isfinite(self.q0):
            raise DomainError("kernel entries must be finite")
        sigma = self.J**2 * g ** (self.p - 1)
        sigma.setflags(write=False)
        object.__setattr__(self, "_sigma", sigma)

    @property
    def n_tau(self) -> int:
        return len(self.G)

    @property
    def dtau(self) -> float:
        return self.beta / self.n_tau

    @property
    def sigma(self) -> np.ndarray:
        return self._sigma

    @property
    def q0_hat(self) -> float:
        return self.J**2 * self.q0 ** (self.p - 1)

    def fluctuation_covariance(self) -> np.ndarray:
        """Per-component xi covariance row on the tau grid: Sigma(tau) - q0_hat."""
        return self.sigma - self.q0_hat

    def symmetry_defect(self) -> float:
        """Sup-norm deviation from G(tau) = G(beta - tau)."""
        return float(np.max(np.abs(self.G - self.G[(-np.arange(self.n_tau)) % self.n_tau])))

    def check_invariants(self, g0_tol: float = 0.05, sym_tol: float = 0.02) -> None:
        if abs(self.G[0] - 3.0) > g0_tol:
            raise DomainError(f"G(0) = {self.G[0]:.4f} deviates from 3 by more than {g0_tol}")
        defect = self.symmetry_defect()
        if defect > sym_tol:
            raise DomainError(f"G symmetry defect {defect:.4f} exceeds {sym_tol}")
        if np.max(np.abs(self.G)) > 3.0 + g0_tol:
            raise DomainError("|G| exceeds 3 beyond tolerance")

    def with_updates(self, G: np.ndarray | None = None, q0: float | None = None) -> "ImaginaryTimeKernel":
        return ImaginaryTimeKernel(
            beta=self.beta,
            J=self.J,
            p=self.p,
            G=self.G if G is None else G,
            q0=self.q0 if q0 is None else float(q0),
        )


def liouville_b(p: int) -> float:
    """Amplitude of the conformal initialization profile, (1/pi)(1/2 - 1/p) tan(pi/p)."""
    if p <= 2:
        raise DomainError(f"profile undefined for p <= 2 (tangent pole), got p={p}")
    return (0.5 - 1.0 / p) * math.tan(math.pi / p) / math.pi


def liouville_init(beta: float, J: float, p: int, n_tau: int = 256) -> ImaginaryTimeKernel:
    """Conformal-profile starting kernel: G(tau) = b (pi / (beta sin(pi tau/beta)))^{2/p}.

    The profile diverges at tau in {0, beta}; values are capped at the
    half-step evaluation G(dtau/2) and at the exact diagonal bound 3, then
    G(0) is pinned to 3. Starts from q0 = 0 (the paramagnetic point);
    solvers that want to probe the ordered branch must reseed q0 themselves
    since q0 = 0 is a fixed point of the iteration.
    """
    if n_tau < 8 or n_tau % 2:
        raise DomainError(f"n_tau must be even and >= 8, got {n_tau}")
    b = liouville_b(p)
    if beta <= 0 or J <= 0:
        raise DomainError("beta and J must be positive")
    dtau = beta / n_tau
    tau = np.arange(n_tau) * dtau
    cap = min(3.0, b * (math.pi / (beta * math.sin(math.pi * (dtau / 2) / beta))) ** (2.0 / p))
    g = np.empty(n_tau)
    g[0] = 3.0
    interior = b * (math.pi / (beta * np.sin(math.pi * tau[1:] / beta))) ** (2.0 / p)
    g[1:] = np.minimum(interior, cap)
    return ImaginaryTimeKernel(beta=beta, J=J, p=p, G=g, q0=0.0)


@dataclass(frozen=True)
class RsSolverConfig:
    """Knobs for the Monte-Carlo fixed-point iteration.

    ``n_xi_two_point`` paths (a subset of the ``n_xi`` one-point paths)
    carry the O(n_tau^2 / stride) two-point sweep; None means all of them.
    ``q0_init`` seeds the off-diagonal overlap of the starting kernel
    because q0 = 0 is exactly absorbing for the update rule.
    ``tilt_steps`` forwards to the path sampler's importance shift. Off by
    default: the shift tames the weight collapse of the insertion ratios at
    strong coupling (beta J >~ 7, where the untilted estimator's bias is far
    worse), but at moderate coupling it *adds* finite-sample ratio bias, so
    it should only be enabled together with a generous n_xi on the strongly
    coupled points of a scan.
    """

    n_tau: int = 256
    n_z: int = 512
    n_xi: int = 512
    n_xi_two_point: int | None = None
    two_point_stride: int = 8
    mixing: float = 0.3
    tolerance: float = 5e-3
    max_iters: int = 40
    seed: int = 0
    q0_init: float = 0.8
    init: Union[str, ImaginaryTimeKernel] = "liouville"
    clip_abort_fraction: float = 0.10
    tilt_steps: int = 0

    def __post_init__(self) -> None:
        if self.n_tau < 8 or self.n_tau % 2:
            raise DomainError(f"n_tau must be even and >= 8, got {self.n_tau}")
        if not 0.0 < self.mixing <= 1.0:
            raise DomainError(f"mixing must lie in (0, 1], got {self.mixing}")
        if self.tolerance <= 0:
            raise DomainError("tolerance must be positive")
        if self.n_z < 4 or self.n_xi < 4:
            raise DomainError("need at least 4 z- and xi-samples")
        if self.n_xi_two_point is not None and not 1 <= self.n_xi_two_point <= self.n_xi:
            raise DomainError("n_xi_two_point must lie in [1, n_xi]")
        if self.two_point_stride < 1:
            raise DomainError("stride must be at least 1")
        if self.max_iters < 1:
            raise DomainError("max_iters must be at least 1")
        if not 0.0 <= self.q0_init <= 3.0:
            raise DomainError(f"q0_init must lie in [0, 3], got {self.q0_init}")
        if not 0.0 < self.clip_abort_fraction <= 1.0:
            raise DomainError("clip_abort_fraction must lie in (0, 1]")
        if not 0 <= self.tilt_steps <= 64:
            raise DomainError(f"tilt_steps must lie in [0, 64], got {self.tilt_steps}")
        if isinstance(self.init, str) and self.init != "liouville":
            raise DomainError(f"init must be 'liouville' or a kernel, got {self.init!r}")

    @property
    def n_two_point(self) -> int:
        return self.n_xi if self.n_xi_two_point is None else self.n_xi_two_point


def kernel_to_json(kernel: ImaginaryTimeKernel) -> str:
    return json.dumps(
        {
            "beta": kernel.beta,
            "J": kernel.J,
            "p": kernel.p,
            "n_tau": kernel.n_tau,
            "q0": kernel.q0,
            "G": [float(x) for x in kernel.G],
        }
    )


def kernel_from_json(text: str) -> ImaginaryTimeKernel:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"invalid kernel JSON: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != _KERNEL_KEYS:
        raise DomainError(f"kernel JSON must have exactly the keys {sorted(_KERNEL_KEYS)}")
    if len(obj["G"]) != obj["n_tau"]:
        raise DomainError("n_tau does not match the G grid length")
    return ImaginaryTimeKernel(
        beta=float(obj["beta"]),
        J=float(obj["J"]),
        p=int(obj["p"]),
        G=np.asarray(obj["G"], dtype=np.float64),
        q0=float(obj["q0"]),
    )
