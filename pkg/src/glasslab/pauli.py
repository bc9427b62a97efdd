"""Pauli strings, random p-local ensembles, and dense realizations.

Conventions (fixed):

* A Pauli string on ``n`` qubits is a pair of bitmasks ``(x, z)``; bit ``r``
  of ``x``/``z`` refers to qubit ``r`` (little-endian: qubit 0 is the least
  significant bit of a computational-basis index).
* Per qubit, ``(x=1, z=0) -> X``, ``(0,1) -> Z``, ``(1,1) -> Y`` with the
  phase convention ``Y = i X Z``, so every string is realized as the
  Hermitian operator ``i^{|x & z|} X^x Z^z``.
* Dense matrices use basis index ``j`` whose bit ``r`` is qubit ``r``'s
  computational value, i.e. ``dense = kron(letter_{n-1}, ..., letter_0)``.
* Enumeration of the weight-``p`` strings is lexicographic: support sets in
  ascending combination order, then letters per support site with
  ``X < Y < Z``; ensemble coefficients are drawn in exactly this order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations, product
from typing import Iterator, Sequence

import numpy as np

from .errors import DomainError, NumericalError, SizeCapError
from . import rng

__all__ = [
    "PauliString",
    "PauliHamiltonian",
    "DENSE_QUBIT_CAP",
    "enumerate_strings",
    "ensemble_variance",
    "sample_ensemble",
    "to_dense",
    "pauli_expectation",
    "ham_to_json",
    "ham_from_json",
]

DENSE_QUBIT_CAP = 12

_LETTER_TO_XZ = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_XZ_TO_LETTER = {v: k for k, v in _LETTER_TO_XZ.items()}

# i-power picked up when multiplying single-qubit letters a*b = i^k c:
# rows/cols ordered I, X, Y, Z.
_PHASE_TABLE = (
    (0, 0, 0, 0),
    (0, 0, 1, 3),
    (0, 3, 0, 1),
    (0, 1, 3, 0),
)
_LETTER_INDEX = {"I": 0, "X": 1, "Y": 2, "Z": 3}


@dataclass(frozen=True)
class PauliString:
    """Hermitian Pauli string identified by (x, z) bitmasks."""

    n: int
    x: int
    z: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError(f"need at least one qubit, got n={self.n}")
        top = 1 << self.n
        if not (0 <= self.x < top and 0 <= self.z < top):
            raise DomainError(
                f"masks x={self.x:#x}, z={self.z:#x} out of range for n={self.n}"
            )

    @property
    def weight(self) -> int:
        return (self.x | self.z).bit_count()

    @property
    def support(self) -> tuple[int, ...]:
        m = self.x | self.z
        return tuple(r for r in range(self.n) if (m >> r) & 1)

    def letter(self, r: int) -> str:
        return _XZ_TO_LETTER[((self.x >> r) & 1, (self.z >> r) & 1)]

    def letters(self) -> str:
        """Human-readable form, qubit 0 first (e.g. ``'XIZ'``)."""
        return "".join(self.letter(r) for r in range(self.n))

    @classmethod
    def from_letters(cls, letters: str) -> "PauliString":
        x = z = 0
        for r, ch in enumerate(letters.upper()):
            try:
                xb, zb = _LETTER_TO_XZ[ch]
            except KeyError:
                raise DomainError(f"unknown Pauli letter {ch!r}") from None
            x |= xb << r
            z |= zb << r
        return cls(n=len(letters), x=x, z=z)

    def commutes(self, other: "PauliString") -> bool:
        self._check_same_n(other)
        sym = (self.x & other.z).bit_count() + (self.z & other.x).bit_count()
        return sym % 2 == 0

    def product(self, other: "PauliString") -> tuple[complex, "PauliString"]:
        """Return ``(phase, R)`` with ``dense(self) @ dense(other) = phase * dense(R)``."""
        self._check_same_n(other)
        k = 0
        both = (self.x | self.z) & (other.x | other.z)
        m = both
        while m:
            low = m & -m
            r = low.bit_length() - 1
            a = _LETTER_INDEX[self.letter(r)]
            b = _LETTER_INDEX[other.letter(r)]
            k += _PHASE_TABLE[a][b]
            m ^= low
        phase = (1j) ** (k % 4)
        return phase, PauliString(self.n, self.x ^ other.x, self.z ^ other.z)

    def dense(self) -> np.ndarray:
        """Dense ``2^n x 2^n`` realization (capped at DENSE_QUBIT_CAP qubits)."""
        if self.n > DENSE_QUBIT_CAP:
            raise SizeCapError(
                f"dense realization capped at {DENSE_QUBIT_CAP} qubits, got n={self.n}"
            )
        dim = 1 << self.n
        cols = np.arange(dim)
        rows = cols ^ self.x
        signs = 1.0 - 2.0 * (np.bitwise_count((cols & self.z).astype(np.uint64)) % 2)
        vals = (1j ** ((self.x & self.z).bit_count() % 4)) * signs
        out = np.zeros((dim, dim), dtype=np.complex128)
        out[rows, cols] = vals
        return out

    def _check_same_n(self, other: "PauliString") -> None:
        if self.n != other.n:
            raise DomainError(f"qubit counts differ: {self.n} vs {other.n}")


def enumerate_strings(n: int, p: int, letters: str = "XYZ") -> Iterator[PauliString]:
    """Weight-``p`` strings on ``n`` qubits in the fixed lexicographic order.

    ``letters`` restricts the per-site alphabet (``"Z"`` gives the classical
    Ising family). Order: support sets ascending, then letter tuples with the
    alphabet order given (default X < Y < Z).
    """
    if not 1 <= p <= n:
        raise DomainError(f"need 1 <= p <= n, got p={p}, n={n}")
    alphabet = tuple(letters.upper())
    if any(ch not in ("X", "Y", "Z") for ch in alphabet):
        raise DomainError(f"letters must be drawn from XYZ, got {letters!r}")
    for sites in combinations(range(n), p):
        for choice in product(alphabet, repeat=p):
            x = z = 0
            for r, ch in zip(sites, choice):
                xb, zb = _LETTER_TO_XZ[ch]
                x |= xb << r
                z |= zb << r
            yield PauliString(n, x, z)


def ensemble_variance(n: int, p: int, J: float) -> float:
    """Coefficient variance J^2 (p-1)! / n^(p-1) of the random p-local family."""
    return J * J * math.factorial(p - 1) / n ** (p - 1)


@dataclass(frozen=True, eq=False)
class PauliHamiltonian:
    """A sampled instance ``H = sum_P J_P P`` of the p-local ensemble."""

    n: int
    p: int
    J: float
    seed: int
    strings: tuple[PauliString, ...]
    coeffs: np.ndarray  # shape (len(strings),), float64

    def __post_init__(self) -> None:
        if len(self.strings) != self.coeffs.shape[0]:
            raise DomainError("coefficient/string count mismatch")
        if not np.isrealobj(self.coeffs):
            raise DomainError("coefficients must be real (Hermiticity)")

    @property
    def num_terms(self) -> int:
        return len(self.strings)

    def term_items(self) -> Iterator[tuple[float, PauliString]]:
        return zip(self.coeffs.tolist(), self.strings)


def sample_ensemble(
    n: int, p: int, J: float, seed: int, letters: str = "XYZ"
) -> PauliHamiltonian:
    """Draw one Hamiltonian: iid N(0, J^2 (p-1)!/n^(p-1)) coefficients.

    Coefficients are drawn in enumeration order from the stream
    ``rng.derive(seed)``, so an instance is fully determined by
    ``(n, p, J, seed, letters)``. Sampling has no dense-size cap; only
    realization (``to_dense``) is capped.
    """
    if J <= 0:
        raise DomainError(f"J must be positive, got {J}")
    strings = tuple(enumerate_strings(n, p, letters))
    gen = rng.derive(seed, 0)
    sigma = math.sqrt(ensemble_variance(n, p, J))
    coeffs = gen.standard_normal(len(strings)) * sigma
    return PauliHamiltonian(n=n, p=p, J=J, seed=seed, strings=strings, coeffs=coeffs)


def to_dense(ham: PauliHamiltonian, cap: int = DENSE_QUBIT_CAP) -> np.ndarray:
    """Dense Hermitian matrix of the instance (memory grows as 4^n)."""
    if ham.n > cap:
        raise SizeCapError(f"dense realization capped at {cap} qubits, got n={ham.n}")
    dim = 1 << ham.n
    out = np.zeros((dim, dim), dtype=np.complex128)
    cols = np.arange(dim)
    for coeff, s in ham.term_items():
        signs = 1.0 - 2.0 * (np.bitwise_count((cols & s.z).astype(np.uint64)) % 2)
        vals = coeff * (1j ** ((s.x & s.z).bit_count() % 4)) * signs
        out[cols ^ s.x, cols] += vals
    return out


def pauli_expectation(string: PauliString, rho: np.ndarray) -> float:
    """``Tr[P rho]`` for a density matrix, via the permutation structure of P.

    The result of a Hermitian observable in a valid state is real; an
    imaginary part above 1e-8 raises (it means ``rho`` is not a state).
    """
    dim = 1 << string.n
    if rho.shape != (dim, dim):
        raise DomainError(f"state shape {rho.shape} does not match n={string.n}")
    ks = np.arange(dim)
    signs = 1.0 - 2.0 * (np.bitwise_count((ks & string.z).astype(np.uint64)) % 2)
    phase = 1j ** ((string.x & string.z).bit_count() % 4)
    val = phase * np.sum(signs * rho[ks, ks ^ string.x])
    if abs(val.imag) > 1e-8:
        raise NumericalError(
            f"expectation has imaginary part {val.imag:.3e}; not a state?"
        )
    return float(val.real)


# --- serialization ------------------------------------------------------

_HAM_KEYS = {"n", "p", "J", "seed", "terms"}
_TERM_KEYS = {"coeff", "x", "z"}


def ham_to_json(ham: PauliHamiltonian) -> str:
    terms = [
        {"coeff": float(c), "x": format(s.x, "x"), "z": format(s.z, "x")}
        for c, s in ham.term_items()
    ]
    return json.dumps(
        {"n": ham.n, "p": ham.p, "J": ham.J, "seed": ham.seed, "terms": terms},
        indent=1,
    )


def ham_from_json(text: str) -> PauliHamiltonian:
    """Parse the instance schema; unknown keys are rejected."""
    data = json.loads(text)
    if not isinstance(data, dict) or set(data) != _HAM_KEYS:
        raise DomainError(
            f"bad Hamiltonian document: expected keys {sorted(_HAM_KEYS)}, "
            f"got {sorted(data) if isinstance(data, dict) else type(data).__name__}"
        )
    n = int(data["n"])
    strings = []
    coeffs = []
    for idx, term in enumerate(data["terms"]):
        if set(term) != _TERM_KEYS:
            raise DomainError(f"term {idx}: expected keys {sorted(_TERM_KEYS)}")
        strings.append(PauliString(n, int(term["x"], 16), int(term["z"], 16)))
        coeffs.append(float(term["coeff"]))
    return PauliHamiltonian(
        n=n,
        p=int(data["p"]),
        J=float(data["J"]),
        seed=int(data["seed"]),
        strings=tuple(strings),
        coeffs=np.asarray(coeffs, dtype=np.float64),
    )
