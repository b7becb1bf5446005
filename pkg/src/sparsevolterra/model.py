"""Second-order Volterra systems with damped-exponential kernels.

A kernel atom of first order is ``alpha * p**k`` for lags ``k = 0..L-1``; a
second-order atom is ``beta * p1**k1 * p2**k2``. Every stored (atom, coeff)
pair stands for ``c*a + conj(c)*conj(a)``, so evaluated kernels are real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "check_pole",
    "canonical_pole",
    "FirstOrderAtom",
    "SecondOrderAtom",
    "AtomicModel",
    "VolterraKernels",
    "eval_first_order_kernel",
    "eval_second_order_kernel",
    "eval_kernels",
    "lagged_inputs",
    "simulate",
    "regression_matrix",
    "stack",
    "unstack",
    "auto_memory",
]

# |Im p| below this is treated as a real pole
REAL_TOL = 1e-12


def check_pole(p) -> complex:
    """Return ``p`` as a complex number, rejecting poles outside ``0 < |p| < 1``."""
    p = complex(p)
    if not (math.isfinite(p.real) and math.isfinite(p.imag)):
        raise ValueError(f"pole {p} is not finite")
    r = abs(p)
    if r >= 1.0:
        raise ValueError(f"pole {p} has modulus {r:.6g} >= 1 (must lie inside the unit circle)")
    if r == 0.0:
        raise ValueError("pole 0 is not allowed (modulus must be > 0)")
    return p


def canonical_pole(p) -> complex:
    """Upper-half-plane representative of ``{p, conj(p)}``; snaps tiny Im to 0."""
    p = complex(p)
    if abs(p.imag) <= REAL_TOL:
        return complex(p.real, 0.0)
    return p.conjugate() if p.imag < 0 else p


def _check_scale(s) -> float:
    s = float(s)
    if not math.isfinite(s) or s == 0.0:
        raise ValueError(f"atom scale must be finite and nonzero, got {s}")
    return s


@dataclass(frozen=True)
class FirstOrderAtom:
    pole: complex
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pole", check_pole(self.pole))
        object.__setattr__(self, "scale", _check_scale(self.scale))

    @property
    def poles(self) -> tuple[complex]:
        return (self.pole,)

    @property
    def is_real(self) -> bool:
        return abs(self.pole.imag) <= REAL_TOL

    def conjugate(self) -> "FirstOrderAtom":
        return FirstOrderAtom(self.pole.conjugate(), self.scale)


@dataclass(frozen=True)
class SecondOrderAtom:
    pole1: complex
    pole2: complex
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "pole1", check_pole(self.pole1))
        object.__setattr__(self, "pole2", check_pole(self.pole2))
        object.__setattr__(self, "scale", _check_scale(self.scale))

    @property
    def poles(self) -> tuple[complex, complex]:
        return (self.pole1, self.pole2)

    @property
    def is_real(self) -> bool:
        return abs(self.pole1.imag) <= REAL_TOL and abs(self.pole2.imag) <= REAL_TOL

    def conjugate(self) -> "SecondOrderAtom":
        return SecondOrderAtom(self.pole1.conjugate(), self.pole2.conjugate(), self.scale)


def _merge(pairs):
    """Merge entries sharing a pole tuple; coefficients are rescaled to the first scale."""
    merged: dict[tuple, list] = {}
    for atom, coeff in pairs:
        key = atom.poles
        coeff = complex(coeff)
        if key in merged:
            first = merged[key]
            first[1] += coeff * atom.scale / first[0].scale
        else:
            merged[key] = [atom, coeff]
    return [(a, c) for a, c in merged.values()]


@dataclass
class AtomicModel:
    """Sparse exponential representation of a second-order Volterra system.

    ``first_order`` and ``second_order`` hold ``(atom, complex coefficient)``
    pairs; the conjugate partner of each pair is implicit.
    """

    h0: float = 0.0
    first_order: list = field(default_factory=list)
    second_order: list = field(default_factory=list)

    def __post_init__(self):
        self.h0 = float(self.h0)
        for atom, _ in self.first_order:
            if not isinstance(atom, FirstOrderAtom):
                raise TypeError("first_order entries must hold FirstOrderAtom")
        for atom, _ in self.second_order:
            if not isinstance(atom, SecondOrderAtom):
                raise TypeError("second_order entries must hold SecondOrderAtom")
        self.first_order = _merge(self.first_order)
        self.second_order = _merge(self.second_order)

    @property
    def n_atoms(self) -> int:
        return len(self.first_order) + len(self.second_order)

    def poles(self) -> list[complex]:
        """Distinct upper-half representatives of every pole used by the model."""
        out: list[complex] = []
        for atom, _ in self.first_order + self.second_order:
            for p in atom.poles:
                q = canonical_pole(p)
                if not any(abs(q - o) <= REAL_TOL for o in out):
                    out.append(q)
        return out

    def atomic_cost(self) -> float:
        """Sum of coefficient moduli plus ``|h0|``."""
        return abs(self.h0) + sum(abs(c) for _, c in self.first_order + self.second_order)


@dataclass
class VolterraKernels:
    """Dense truncated kernels ``h0``, ``h1`` (length L) and ``H2`` (L x L)."""

    h0: float
    h1: np.ndarray
    H2: np.ndarray

    def __post_init__(self):
        self.h0 = float(self.h0)
        self.h1 = np.asarray(self.h1, dtype=float)
        self.H2 = np.asarray(self.H2, dtype=float)
        L = self.h1.shape[0]
        if self.h1.ndim != 1 or L < 1:
            raise ValueError("h1 must be a nonempty vector")
        if self.H2.shape != (L, L):
            raise ValueError(f"H2 must have shape {(L, L)}, got {self.H2.shape}")
        if not (np.isfinite(self.h0) and np.all(np.isfinite(self.h1)) and np.all(np.isfinite(self.H2))):
            raise ValueError("kernels must be finite")

    @property
    def memory(self) -> int:
        return self.h1.shape[0]


def _powers(p: complex, memory: int) -> np.ndarray:
    return np.power(complex(p), np.arange(memory))


def eval_first_order_kernel(atom: FirstOrderAtom, memory: int) -> np.ndarray:
    """Complex samples ``scale * pole**k`` for ``k = 0..memory-1``."""
    if memory < 1:
        raise ValueError("memory must be >= 1")
    return atom.scale * _powers(atom.pole, memory)


def eval_second_order_kernel(atom: SecondOrderAtom, memory: int) -> np.ndarray:
    """Complex ``memory x memory`` array ``scale * p1**k1 * p2**k2`` (k1 indexes rows)."""
    if memory < 1:
        raise ValueError("memory must be >= 1")
    return atom.scale * np.outer(_powers(atom.pole1, memory), _powers(atom.pole2, memory))


def eval_kernels(model: AtomicModel, memory: int) -> VolterraKernels:
    """Evaluate the conjugate-paired atom sums into real dense kernels."""
    if memory < 1:
        raise ValueError("memory must be >= 1")
    h1 = np.zeros(memory)
    H2 = np.zeros((memory, memory))
    for atom, c in model.first_order:
        h1 += 2.0 * np.real(c * eval_first_order_kernel(atom, memory))
    for atom, c in model.second_order:
        H2 += 2.0 * np.real(c * eval_second_order_kernel(atom, memory))
    return VolterraKernels(model.h0, h1, H2)


def lagged_inputs(x, memory: int) -> np.ndarray:
    """``N x memory`` matrix with entry ``(n, k) = x[n-k]`` and zero prehistory."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("input must be a nonempty 1-D sequence")
    if memory < 1:
        raise ValueError("memory must be >= 1")
    N = x.size
    U = np.zeros((N, memory))
    for k in range(min(memory, N)):
        U[k:, k] = x[: N - k]
    return U


def simulate(kernels: VolterraKernels, x) -> np.ndarray:
    """Output of the truncated Volterra system driven by ``x`` from rest."""
    U = lagged_inputs(x, kernels.memory)
    return kernels.h0 + U @ kernels.h1 + np.einsum("nk,kl,nl->n", U, kernels.H2, U)


def regression_matrix(x, memory: int) -> np.ndarray:
    """Rows ``[1, x1(n), kron(x1(n), x1(n))]`` with ``x1(n) = [x(n), ..., x(n-L+1)]``."""
    U = lagged_inputs(x, memory)
    N = U.shape[0]
    quad = (U[:, :, None] * U[:, None, :]).reshape(N, memory * memory)
    return np.hstack([np.ones((N, 1)), U, quad])


def stack(kernels: VolterraKernels) -> np.ndarray:
    """``[h0; h1; vec(H2)]`` with H2 flattened row-major (k1 outer), matching the kron columns."""
    return np.concatenate([[kernels.h0], kernels.h1, kernels.H2.ravel()])


def unstack(h, memory: int) -> VolterraKernels:
    h = np.asarray(h, dtype=float)
    if h.shape != (1 + memory + memory * memory,):
        raise ValueError(f"stacked kernel length {h.shape} does not match memory {memory}")
    return VolterraKernels(h[0], h[1 : 1 + memory], h[1 + memory :].reshape(memory, memory))


def auto_memory(max_modulus: float, tol: float = 1e-6, cap: int | None = None) -> int:
    """Smallest L with ``max_modulus**L < tol``, optionally capped (e.g. at the record length)."""
    if not 0.0 < max_modulus < 1.0:
        raise ValueError("max_modulus must lie in (0, 1)")
    L = max(1, math.floor(math.log(tol) / math.log(max_modulus)) + 1)
    if cap is not None:
        L = min(L, int(cap))
    return L
