"""Exact (dense) quantum statics and dynamics for small qubit systems.

Covers: validated density matrices, Gibbs states, Lindblad evolution driven by
named inverse-temperature rate schedules, parameterized shallow
unitary+dissipation circuits, temperature-stability experiments against the
transport budget, and light-cone norm bounds.

Basis conventions follow :mod:`glasslab.pauli` (little-endian qubit order).
Vectorization of superoperators is row-major: ``vec(A rho B) =
(A kron B^T) vec(rho)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from . import pauli as pauli_mod
from . import transport
from .errors import DomainError, NumericalError, SizeCapError

__all__ = [
    "DensityState",
    "GibbsResult",
    "RateSchedule",
    "JumpOperator",
    "LindbladSpec",
    "Gate",
    "UnitaryBlock",
    "ShallowLayer",
    "ShallowCircuitSpec",
    "SUPEROP_DIM_CAP",
    "gibbs_state",
    "lindblad_superoperator",
    "lindblad_evolve",
    "shallow_evolve",
    "light_cone_sizes",
    "light_cone_norm_bound",
    "stability_experiment",
    "StabilityRow",
    "StabilityReport",
    "basis_product_state",
    "plus_product_state",
    "maximally_mixed",
    "pure_state",
    "random_pure_state",
    "random_density_state",
    "random_lindblad_spec",
    "random_shallow_spec",
    "haar_unitary",
    "embed_operator",
    "state_to_json",
    "state_from_json",
]

SUPEROP_DIM_CAP = 4096  # superoperator route allowed while 4^n <= this

_HERM_TOL = 1e-8
_TRACE_TOL = 1e-8
_EIG_CLAMP = -1e-7  # below this the matrix is rejected as non-PSD


@dataclass(frozen=True, eq=False)
class DensityState:
    """A validated n-qubit density matrix."""

    n: int
    matrix: np.ndarray

    @classmethod
    def from_matrix(cls, mat: np.ndarray, *, validate: bool = True) -> "DensityState":
        mat = np.asarray(mat, dtype=np.complex128)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DomainError(f"state must be square, got shape {mat.shape}")
        dim = mat.shape[0]
        n = dim.bit_length() - 1
        if 1 << n != dim:
            raise DomainError(f"dimension {dim} is not a power of two")
        if validate:
            herm_dev = float(np.max(np.abs(mat - mat.conj().T)))
            if herm_dev > _HERM_TOL:
                raise DomainError(f"not Hermitian: max deviation {herm_dev:.3e}")
            mat = 0.5 * (mat + mat.conj().T)
            tr = float(mat.trace().real)
            if abs(tr - 1.0) > _TRACE_TOL:
                raise DomainError(f"trace {tr!r} differs from 1 beyond tolerance")
            w, v = np.linalg.eigh(mat)
            if w.min() < _EIG_CLAMP:
                raise DomainError(f"not positive semidefinite: min eigenvalue {w.min():.3e}")
            if w.min() < 0.0:
                w = np.clip(w, 0.0, None)
                mat = (v * w) @ v.conj().T
            mat = mat / mat.trace().real
        return cls(n=n, matrix=mat)

    @property
    def dim(self) -> int:
        return 1 << self.n

    def purity(self) -> float:
        return float(np.vdot(self.matrix, self.matrix).real)


# --- elementary state constructors ---------------------------------------


def pure_state(vec: np.ndarray) -> DensityState:
    vec = np.asarray(vec, dtype=np.complex128)
    vec = vec / np.linalg.norm(vec)
    return DensityState.from_matrix(np.outer(vec, vec.conj()), validate=False)


def basis_product_state(n: int, bits: int) -> DensityState:
    if not 0 <= bits < (1 << n):
        raise DomainError(f"bit pattern {bits} out of range for n={n}")
    v = np.zeros(1 << n, dtype=np.complex128)
    v[bits] = 1.0
    return pure_state(v)


def plus_product_state(n: int) -> DensityState:
    v = np.full(1 << n, 2.0 ** (-n / 2), dtype=np.complex128)
    return pure_state(v)


def maximally_mixed(n: int) -> DensityState:
    dim = 1 << n
    return DensityState.from_matrix(np.eye(dim) / dim, validate=False)


def haar_unitary(dim: int, gen: np.random.Generator) -> np.ndarray:
    a = gen.standard_normal((dim, dim)) + 1j * gen.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def random_pure_state(n: int, gen: np.random.Generator) -> DensityState:
    v = gen.standard_normal(1 << n) + 1j * gen.standard_normal(1 << n)
    return pure_state(v)


def random_density_state(n: int, gen: np.random.Generator, rank: int | None = None) -> DensityState:
    dim = 1 << n
    rank = dim if rank is None else rank
    g = gen.standard_normal((dim, rank)) + 1j * gen.standard_normal((dim, rank))
    m = g @ g.conj().T
    return DensityState.from_matrix(m / m.trace().real, validate=False)


# --- Gibbs ---------------------------------------------------------------


@dataclass(frozen=True)
class GibbsResult:
    state: DensityState
    beta: float
    log_z: float
    free_energy: float  # -log Z / beta; -inf at beta = 0


def gibbs_state(hamiltonian, beta: float) -> GibbsResult:
    """exp(-beta H)/Z with log-domain weights (stable for large beta)."""
    if beta < 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    h = _as_dense_hamiltonian(hamiltonian)
    w, v = np.linalg.eigh(h)
    logw = -beta * w
    logw -= logw.max()
    probs = np.exp(logw)
    z_shifted = probs.sum()
    probs /= z_shifted
    log_z = math.log(z_shifted) + float((-beta * w).max())
    rho = (v * probs) @ v.conj().T
    free = -log_z / beta if beta > 0 else float("-inf")
    return GibbsResult(
        state=DensityState.from_matrix(rho, validate=False),
        beta=beta,
        log_z=log_z,
        free_energy=free,
    )


def _as_dense_hamiltonian(h) -> np.ndarray:
    if isinstance(h, pauli_mod.PauliHamiltonian):
        return pauli_mod.to_dense(h)
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DomainError(f"Hamiltonian must be square, got {h.shape}")
    if np.max(np.abs(h - h.conj().T)) > 1e-10:
        raise DomainError("Hamiltonian is not Hermitian")
    return h


# --- rate schedules -------------------------------------------------------

_SCHEDULE_KINDS = ("constant", "linear", "metropolis")


@dataclass(frozen=True)
class RateSchedule:
    """Named beta -> rate map with a machine-checkable Lipschitz constant.

    Only the named kinds are constructible (no user closures), which is what
    makes the stability budgets certifiable:

    * ``constant``: gamma = c                    (Lipschitz 0)
    * ``linear``:   gamma = a + b beta           (Lipschitz |b|)
    * ``metropolis``: gamma = scale e^{-beta d}  (Lipschitz scale*d*e^{-beta_min d})
    """

    kind: str
    params: tuple[float, ...]
    domain: tuple[float, float]

    def __post_init__(self) -> None:
        if self.kind not in _SCHEDULE_KINDS:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise DomainError(f"bad schedule domain {self.domain}")
        for beta in self.domain:
            if self._raw_rate(beta) <= 0.0:
                raise DomainError(
                    f"{self.kind} schedule non-positive at beta={beta} (domain endpoint)"
                )

    @classmethod
    def constant(cls, c: float, domain: tuple[float, float]) -> "RateSchedule":
        return cls("constant", (float(c),), (float(domain[0]), float(domain[1])))

    @classmethod
    def linear(cls, a: float, b: float, domain: tuple[float, float]) -> "RateSchedule":
        return cls("linear", (float(a), float(b)), (float(domain[0]), float(domain[1])))

    @classmethod
    def metropolis(cls, delta: float, scale: float, domain: tuple[float, float]) -> "RateSchedule":
        if delta < 0:
            raise DomainError(f"metropolis energy gap must be >= 0, got {delta}")
        return cls("metropolis", (float(delta), float(scale)), (float(domain[0]), float(domain[1])))

    def _raw_rate(self, beta: float) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "linear":
            a, b = self.params
            return a + b * beta
        delta, scale = self.params
        return scale * math.exp(-beta * delta)

    def rate(self, beta: float) -> float:
        lo, hi = self.domain
        if not lo <= beta <= hi:
            raise DomainError(f"beta={beta} outside schedule domain [{lo}, {hi}]")
        return self._raw_rate(beta)

    def lipschitz(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "linear":
            return abs(self.params[1])
        delta, scale = self.params
        return scale * delta * math.exp(-self.domain[0] * delta)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params), "domain": list(self.domain)}

    @classmethod
    def from_dict(cls, d: dict) -> "RateSchedule":
        if set(d) != {"kind", "params", "domain"}:
            raise DomainError(f"bad schedule document keys {sorted(d)}")
        return cls(d["kind"], tuple(float(x) for x in d["params"]), tuple(d["domain"]))


# --- Lindblad -------------------------------------------------------------


def embed_operator(op: np.ndarray, support: Sequence[int], n: int) -> np.ndarray:
    """Embed ``op`` acting on the (sorted) ``support`` qubits into n qubits."""
    support = tuple(support)
    if sorted(set(support)) != list(support):
        raise DomainError(f"support must be sorted and duplicate-free, got {support}")
    if support and (support[0] < 0 or support[-1] >= n):
        raise DomainError(f"support {support} out of range for n={n}")
    k = len(support)
    op = np.asarray(op, dtype=np.complex128)
    if op.shape != (1 << k, 1 << k):
        raise DomainError(f"operator shape {op.shape} does not match |support|={k}")
    dim = 1 << n
    out = np.zeros((dim, dim), dtype=np.complex128)
    off_bits = [r for r in range(n) if r not in support]
    offs = np.zeros(1 << len(off_bits), dtype=np.int64)
    for j, r in enumerate(off_bits):
        half = 1 << j
        offs[half : 2 * half] = offs[:half] + (1 << r)
    spread = np.zeros(1 << k, dtype=np.int64)
    for j, r in enumerate(support):
        half = 1 << j
        spread[half : 2 * half] = spread[:half] + (1 << r)
    for a in range(1 << k):
        ia = offs + spread[a]
        for b in range(1 << k):
            out[ia, offs + spread[b]] = op[a, b]
    return out


@dataclass(frozen=True, eq=False)
class JumpOperator:
    """A jump operator with declared support and a named rate schedule."""

    matrix: np.ndarray  # dense on the support, shape (2^k, 2^k)
    support: tuple[int, ...]
    schedule: RateSchedule

    def __post_init__(self) -> None:
        k = len(self.support)
        if self.matrix.shape != (1 << k, 1 << k):
            raise DomainError(
                f"jump matrix shape {self.matrix.shape} does not match support {self.support}"
            )

    @property
    def op_norm(self) -> float:
        return float(np.linalg.norm(self.matrix, ord=2))


@dataclass(frozen=True, eq=False)
class LindbladSpec:
    """Thermal Lindbladian: d rho/dt = -i[H, rho] + sum_i gamma_i(beta) D[A_i] rho."""

    n: int
    hamiltonian: np.ndarray | None
    jumps: tuple[JumpOperator, ...]

    def __post_init__(self) -> None:
        if self.hamiltonian is not None:
            dim = 1 << self.n
            if self.hamiltonian.shape != (dim, dim):
                raise DomainError("Hamiltonian dimension does not match n")
            if np.max(np.abs(self.hamiltonian - self.hamiltonian.conj().T)) > 1e-10:
                raise DomainError("Hamiltonian is not Hermitian")
        for j in self.jumps:
            if j.support and j.support[-1] >= self.n:
                raise DomainError(f"jump support {j.support} out of range for n={self.n}")

    def beta_domain(self) -> tuple[float, float]:
        """Intersection of all schedule domains."""
        lo = max((j.schedule.domain[0] for j in self.jumps), default=-math.inf)
        hi = min((j.schedule.domain[1] for j in self.jumps), default=math.inf)
        return lo, hi

    def stability_budget(self, t: float) -> float:
        """Per-unit-|beta - beta'| transport budget L(t) of the evolution map.

        L(t) = (3 t / 2) * sum_i lambda_i |supp(A_i)| ||A_i||^2 with lambda_i
        the certified schedule Lipschitz constants.
        """
        if t < 0:
            raise DomainError(f"time must be >= 0, got {t}")
        total = sum(
            j.schedule.lipschitz() * len(j.support) * j.op_norm**2 for j in self.jumps
        )
        return 1.5 * t * total


def lindblad_superoperator(spec: LindbladSpec, beta: float) -> np.ndarray:
    """Row-major-vec generator matrix of the Lindbladian at inverse temperature beta."""
    dim = 1 << spec.n
    if dim * dim > SUPEROP_DIM_CAP:
        raise SizeCapError(
            f"superoperator dimension {dim * dim} exceeds cap {SUPEROP_DIM_CAP}"
        )
    eye = np.eye(dim)
    sup = np.zeros((dim * dim, dim * dim), dtype=np.complex128)
    if spec.hamiltonian is not None:
        h = spec.hamiltonian
        sup += -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for j in spec.jumps:
        a = embed_operator(j.matrix, j.support, spec.n)
        gamma = j.schedule.rate(beta)
        ada = a.conj().T @ a
        sup += gamma * (
            np.kron(a, a.conj())
            - 0.5 * (np.kron(ada, eye) + np.kron(eye, ada.T))
        )
    return sup


def _lindblad_rhs(spec: LindbladSpec, beta: float):
    dim = 1 << spec.n
    embedded = [
        (embed_operator(j.matrix, j.support, spec.n), j.schedule.rate(beta))
        for j in spec.jumps
    ]
    pre = [(a, a.conj().T @ a, g) for a, g in embedded]
    h = spec.hamiltonian

    def rhs(_t, y):
        rho = y.reshape(dim, dim)
        out = np.zeros_like(rho)
        if h is not None:
            out += -1j * (h @ rho - rho @ h)
        for a, ada, g in pre:
            out += g * (a @ rho @ a.conj().T - 0.5 * (ada @ rho + rho @ ada))
        return out.ravel()

    return rhs


def lindblad_evolve(
    spec: LindbladSpec,
    rho0: DensityState,
    beta: float,
    t: float,
    backend: Literal["auto", "superop", "ode"] = "auto",
) -> DensityState:
    """Evolve ``rho0`` for time ``t`` under the Lindbladian at ``beta``.

    Backend: dense superoperator exponential while 4^n <= SUPEROP_DIM_CAP,
    otherwise an adaptive ODE integration; output trace drift beyond 1e-8 is
    a NumericalError.
    """
    if rho0.n != spec.n:
        raise DomainError(f"state has n={rho0.n}, spec n={spec.n}")
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t}")
    dim = 1 << spec.n
    if backend == "auto":
        backend = "superop" if dim * dim <= SUPEROP_DIM_CAP else "ode"
    if backend == "superop":
        sup = lindblad_superoperator(spec, beta)
        vec = sla.expm(sup * t) @ rho0.matrix.ravel()
        out = vec.reshape(dim, dim)
    elif backend == "ode":
        # validate beta against schedules exactly as the superop path does
        for j in spec.jumps:
            j.schedule.rate(beta)
        sol = solve_ivp(
            _lindblad_rhs(spec, beta),
            (0.0, t),
            rho0.matrix.ravel().astype(np.complex128),
            method="RK45",
            rtol=1e-9,
            atol=1e-11,
        )
        if not sol.success:
            raise NumericalError(f"ODE integration failed: {sol.message}")
        out = sol.y[:, -1].reshape(dim, dim)
    else:
        raise DomainError(f"unknown backend {backend!r}")
    drift = abs(float(out.trace().real) - 1.0) + abs(float(out.trace().imag))
    if drift > 1e-8:
        raise NumericalError(f"trace drift {drift:.3e} exceeds 1e-8")
    return DensityState.from_matrix(out)


# --- shallow circuits ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Gate:
    """Parameterized gate exp(-i theta G) with Hermitian generator G."""

    generator: np.ndarray
    support: tuple[int, ...]

    def __post_init__(self) -> None:
        k = len(self.support)
        if self.generator.shape != (1 << k, 1 << k):
            raise DomainError("gate generator shape does not match support")
        if np.max(np.abs(self.generator - self.generator.conj().T)) > 1e-10:
            raise DomainError("gate generator must be Hermitian")


@dataclass(frozen=True, eq=False)
class UnitaryBlock:
    """K sub-layers of gates; supports within one sub-layer must be disjoint."""

    sublayers: tuple[tuple[Gate, ...], ...]

    def __post_init__(self) -> None:
        for sub in self.sublayers:
            seen: set[int] = set()
            for g in sub:
                if seen.intersection(g.support):
                    raise DomainError("gates within a sub-layer must act on disjoint qubits")
                seen.update(g.support)

    @property
    def depth(self) -> int:
        return len(self.sublayers)

    def gates(self) -> Iterable[Gate]:
        for sub in self.sublayers:
            yield from sub


@dataclass(frozen=True, eq=False)
class ShallowLayer:
    unitary: UnitaryBlock
    lindblad: LindbladSpec  # unit-time dissipation; 1-local commuting jumps


@dataclass(frozen=True, eq=False)
class ShallowCircuitSpec:
    """p alternating (dissipation, unitary) layers on n qubits.

    Validation: every dissipation layer has no Hamiltonian part, 1-local
    pairwise-commuting jumps with operator norm <= 1.
    """

    n: int
    layers: tuple[ShallowLayer, ...]

    def __post_init__(self) -> None:
        for li, layer in enumerate(self.layers):
            if layer.lindblad.n != self.n:
                raise DomainError(f"layer {li}: lindblad qubit count mismatch")
            if layer.lindblad.hamiltonian is not None:
                raise DomainError(f"layer {li}: shallow dissipation must be Hamiltonian-free")
            jumps = layer.lindblad.jumps
            for j in jumps:
                if len(j.support) != 1:
                    raise DomainError(f"layer {li}: jumps must be 1-local")
                if j.op_norm > 1.0 + 1e-12:
                    raise DomainError(f"layer {li}: jump operator norm {j.op_norm:.3f} > 1")
            for a in range(len(jumps)):
                for b in range(a + 1, len(jumps)):
                    if jumps[a].support == jumps[b].support:
                        comm = jumps[a].matrix @ jumps[b].matrix - jumps[b].matrix @ jumps[a].matrix
                        if np.max(np.abs(comm)) > 1e-10:
                            raise DomainError(f"layer {li}: same-qubit jumps must commute")
            for g in layer.unitary.gates():
                if g.support and (min(g.support) < 0 or max(g.support) >= self.n):
                    raise DomainError(f"layer {li}: gate support {g.support} out of range")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def num_gates(self) -> int:
        return sum(1 for layer in self.layers for _ in layer.unitary.gates())

    def architecture(self) -> tuple[int, int, int]:
        """(K, d, degree): unitary depth, gate locality, hypergraph degree."""
        k = max((layer.unitary.depth for layer in self.layers), default=0)
        d = max(
            (len(g.support) for layer in self.layers for g in layer.unitary.gates()),
            default=1,
        )
        edges = {g.support for layer in self.layers for g in layer.unitary.gates()}
        deg = np.zeros(self.n, dtype=int)
        for e in edges:
            for q in e:
                deg[q] += 1
        return k, d, int(deg.max()) if self.n else 0

    def stability_budget(self) -> float:
        """First-order budget L = 6^p (d*degree)^(K p) lambda per unit |beta-beta'|.

        Valid for |beta - beta'| <= 0.5 (documented restriction); lambda is
        the largest per-layer sum of certified schedule Lipschitz constants.
        """
        p = self.num_layers
        k, d, deg = self.architecture()
        lam = max(
            (
                sum(j.schedule.lipschitz() for j in layer.lindblad.jumps)
                for layer in self.layers
            ),
            default=0.0,
        )
        return 6.0**p * float(d * max(deg, 1)) ** (k * p) * lam

    def beta_domain(self) -> tuple[float, float]:
        lo, hi = -math.inf, math.inf
        for layer in self.layers:
            llo, lhi = layer.lindblad.beta_domain()
            lo, hi = max(lo, llo), min(hi, lhi)
        return lo, hi


def shallow_evolve(
    spec: ShallowCircuitSpec,
    rho0: DensityState,
    beta: float,
    theta: np.ndarray,
) -> DensityState:
    """Apply the circuit: per layer, unit-time dissipation then the unitaries."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.num_gates(),):
        raise DomainError(
            f"theta length {theta.shape} does not match gate count {spec.num_gates()}"
        )
    if rho0.n != spec.n:
        raise DomainError(f"state has n={rho0.n}, spec n={spec.n}")
    rho = rho0
    idx = 0
    for layer in spec.layers:
        if layer.lindblad.jumps:
            rho = lindblad_evolve(layer.lindblad, rho, beta, 1.0)
        mat = rho.matrix
        for sub in layer.unitary.sublayers:
            for g in sub:
                u_small = sla.expm(-1j * theta[idx] * g.generator)
                u = embed_operator(u_small, g.support, spec.n)
                mat = u @ mat @ u.conj().T
                idx += 1
        rho = DensityState.from_matrix(mat, validate=False)
    return DensityState.from_matrix(rho.matrix)


def light_cone_sizes(spec: ShallowCircuitSpec) -> list[int]:
    """|forward light cone| per qubit, through all unitary sub-layers in order.

    The 1-local dissipation layers never spread the cone.
    """
    sizes = []
    for q in range(spec.n):
        cone = {q}
        for layer in spec.layers:
            for sub in layer.unitary.sublayers:
                grow: set[int] = set()
                for g in sub:
                    if cone.intersection(g.support):
                        grow.update(g.support)
                cone |= grow
        sizes.append(len(cone))
    return sizes


def light_cone_norm_bound(spec: ShallowCircuitSpec) -> float:
    """Transport contraction bound (3/2) max_i |lightcone(i)| of the circuit map."""
    sizes = light_cone_sizes(spec)
    return 1.5 * (max(sizes) if sizes else 1)


# --- stability experiment ---------------------------------------------------


@dataclass(frozen=True)
class StabilityRow:
    beta_a: float
    beta_b: float
    measured: float
    budget: float
    passed: bool


@dataclass(frozen=True)
class StabilityReport:
    algorithm: str
    budget_per_unit: float
    rows: tuple[StabilityRow, ...]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "budget_per_unit": self.budget_per_unit,
            "rows": [vars(r) for r in self.rows],
            "all_passed": self.all_passed,
        }


def stability_experiment(
    algorithm: Literal["lindblad", "shallow"],
    spec,
    rho0: DensityState,
    betas: Sequence[float],
    *,
    t: float | None = None,
    theta: np.ndarray | None = None,
    max_beta_gap: float | None = None,
) -> StabilityReport:
    """Pairwise transport-vs-budget comparison of outputs across temperatures.

    For every unordered pair (beta, beta'), measures the transport lower
    bound between the two outputs and compares with budget * |beta - beta'|.
    ``max_beta_gap`` restricts which pairs are compared (the shallow budget
    is only certified to first order; default gap cap 0.5 there).
    """
    betas = [float(b) for b in betas]
    lo, hi = spec.beta_domain()
    for b in betas:
        if not lo <= b <= hi:
            raise DomainError(f"beta={b} outside declared schedule domain [{lo}, {hi}]")
    if algorithm == "lindblad":
        if t is None:
            raise DomainError("lindblad stability experiment needs t")
        budget = spec.stability_budget(t)
        outputs = {b: lindblad_evolve(spec, rho0, b, t) for b in betas}
    elif algorithm == "shallow":
        if theta is None:
            raise DomainError("shallow stability experiment needs theta")
        if max_beta_gap is None:
            max_beta_gap = 0.5
        budget = spec.stability_budget()
        outputs = {b: shallow_evolve(spec, rho0, b, theta) for b in betas}
    else:
        raise DomainError(f"unknown algorithm {algorithm!r}")
    rows = []
    for i, ba in enumerate(betas):
        for bb in betas[i:]:
            if max_beta_gap is not None and abs(ba - bb) > max_beta_gap:
                continue
            measured = transport.w1_lower(outputs[ba].matrix, outputs[bb].matrix)
            allowed = budget * abs(ba - bb)
            rows.append(
                StabilityRow(
                    beta_a=ba,
                    beta_b=bb,
                    measured=measured,
                    budget=allowed,
                    passed=measured <= allowed * (1 + 1e-6) + 1e-12,
                )
            )
    return StabilityReport(algorithm=algorithm, budget_per_unit=budget, rows=tuple(rows))


# --- seeded random instances --------------------------------------------------


def _random_hermitian(dim: int, gen: np.random.Generator, norm: float = 1.0) -> np.ndarray:
    a = gen.standard_normal((dim, dim)) + 1j * gen.standard_normal((dim, dim))
    h = (a + a.conj().T) / 2.0
    return norm * h / max(float(np.linalg.norm(h, ord=2)), 1e-12)


def _random_schedule(gen: np.random.Generator, domain: tuple[float, float]) -> RateSchedule:
    lo, hi = domain
    kind = int(gen.integers(0, 3))
    if kind == 0:
        return RateSchedule.constant(float(gen.uniform(0.2, 1.0)), domain)
    if kind == 1:
        a = float(gen.uniform(0.3, 0.9))
        # slope range keeps the rate positive across the whole domain
        b_lo = -0.8 * a / hi if hi > 0 else -0.2
        b = float(gen.uniform(b_lo, 0.4))
        return RateSchedule.linear(a, b, domain)
    return RateSchedule.metropolis(
        float(gen.uniform(0.2, 1.5)), float(gen.uniform(0.3, 1.2)), domain
    )


def random_lindblad_spec(
    n: int,
    gen: np.random.Generator,
    *,
    n_jumps: int | None = None,
    max_support: int = 2,
    with_hamiltonian: bool = True,
    beta_domain: tuple[float, float] = (0.25, 3.0),
) -> LindbladSpec:
    """Seeded random thermal Lindbladian instance for stability experiments.

    Random dense Hermitian Hamiltonian (operator norm 1), ``n_jumps``
    (default: between n and 2n) jump operators on random supports of up to
    ``max_support`` qubits, operator norms in [0.5, 1], each with a random
    named rate schedule positive on ``beta_domain``.
    """
    if n_jumps is None:
        n_jumps = int(gen.integers(n, 2 * n + 1))
    if n_jumps < 1:
        raise DomainError("need at least one jump operator")
    ham = _random_hermitian(1 << n, gen) if with_hamiltonian else None
    jumps = []
    for _ in range(n_jumps):
        k = int(gen.integers(1, min(max_support, n) + 1))
        support = tuple(sorted(int(q) for q in gen.choice(n, size=k, replace=False)))
        a = gen.standard_normal((1 << k, 1 << k)) + 1j * gen.standard_normal((1 << k, 1 << k))
        a = a / max(float(np.linalg.norm(a, ord=2)), 1e-12) * float(gen.uniform(0.5, 1.0))
        jumps.append(JumpOperator(a, support, _random_schedule(gen, beta_domain)))
    return LindbladSpec(n=n, hamiltonian=ham, jumps=tuple(jumps))


def random_shallow_spec(
    n: int,
    gen: np.random.Generator,
    *,
    num_layers: int = 2,
    beta_domain: tuple[float, float] = (0.25, 3.0),
) -> ShallowCircuitSpec:
    """Seeded random brickwork circuit with 1-local dissipation layers.

    Each layer: one random 1-local jump per qubit (norms in [0.5, 1], random
    schedules), then a two-sub-layer brickwork of random two-qubit gates.
    """
    layers = []
    for _ in range(num_layers):
        jumps = []
        for q in range(n):
            a = gen.standard_normal((2, 2)) + 1j * gen.standard_normal((2, 2))
            a = a / max(float(np.linalg.norm(a, ord=2)), 1e-12) * float(gen.uniform(0.5, 1.0))
            jumps.append(JumpOperator(a, (q,), _random_schedule(gen, beta_domain)))
        diss = LindbladSpec(n=n, hamiltonian=None, jumps=tuple(jumps))
        subs = tuple(
            tuple(
                Gate(_random_hermitian(4, gen), (q, q + 1))
                for q in range(parity, n - 1, 2)
            )
            for parity in (0, 1)
        )
        layers.append(ShallowLayer(unitary=UnitaryBlock(subs), lindblad=diss))
    return ShallowCircuitSpec(n=n, layers=tuple(layers))


# --- state serialization ----------------------------------------------------


def state_to_json(state: DensityState) -> str:
    return json.dumps(
        {
            "n": state.n,
            "re": np.round(state.matrix.real, 15).tolist(),
            "im": np.round(state.matrix.imag, 15).tolist(),
        }
    )


def state_from_json(text: str) -> DensityState:
    data = json.loads(text)
    if not isinstance(data, dict) or set(data) != {"n", "re", "im"}:
        raise DomainError("bad state document: expected keys {n, re, im}")
    mat = np.asarray(data["re"], dtype=np.float64) + 1j * np.asarray(data["im"], dtype=np.float64)
    state = DensityState.from_matrix(mat)
    if state.n != int(data["n"]):
        raise DomainError(f"declared n={data['n']} does not match matrix size")
    return state
