"""Pole grids, atom catalogs and the real-valued dictionaries built from them.

Real coefficient layout used by every solver: atom ``j`` (first-order atoms
first, then second-order) owns columns ``2j`` (u = Re c) and ``2j+1``
(v = Im c); the constant atom is the last column. The ``v`` column of a real
atom is identically zero and excluded from its group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    REAL_TOL,
    AtomicModel,
    FirstOrderAtom,
    SecondOrderAtom,
    canonical_pole,
    check_pole,
    eval_first_order_kernel,
    eval_second_order_kernel,
    lagged_inputs,
)

__all__ = [
    "PoleGrid",
    "AtomCatalog",
    "Dictionary",
    "build_grid",
    "augment_grid",
    "canonical_pair",
    "canonical_pairs",
    "build_catalog",
    "build_dictionary",
    "output_dictionary",
    "real_coeffs",
    "complex_coeffs",
    "model_coeffs",
    "atomic_l1_cost",
    "group_norms",
]

DEDUP_TOL = 1e-12


@dataclass
class PoleGrid:
    poles: np.ndarray
    radial_counts: int = 0
    angular_counts: int = 0
    min_radius: float = 0.0
    max_radius: float = 0.0

    def __post_init__(self):
        self.poles = np.asarray(self.poles, dtype=complex).reshape(-1)

    def __len__(self):
        return self.poles.size

    @property
    def spacing(self) -> float:
        """Largest distance between neighbouring grid nodes (radial or angular)."""
        dr = (self.max_radius - self.min_radius) / (self.radial_counts - 1) if self.radial_counts > 1 else 0.0
        dth = math.pi / (self.angular_counts - 1) if self.angular_counts > 1 else 0.0
        return max(dr, 2.0 * self.max_radius * math.sin(dth / 2.0))

    def full_disk(self) -> list[complex]:
        """Grid poles together with the conjugates of the complex ones."""
        out = []
        for p in self.poles:
            out.append(complex(p))
            if abs(p.imag) > REAL_TOL:
                out.append(complex(p).conjugate())
        return out

    def to_dict(self) -> dict:
        return {
            "poles": [[p.real, p.imag] for p in self.poles],
            "radial_counts": self.radial_counts,
            "angular_counts": self.angular_counts,
            "min_radius": self.min_radius,
            "max_radius": self.max_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoleGrid":
        return cls(
            poles=np.array([complex(re, im) for re, im in d.get("poles", [])], dtype=complex),
            radial_counts=d.get("radial_counts", 0),
            angular_counts=d.get("angular_counts", 0),
            min_radius=d.get("min_radius", 0.0),
            max_radius=d.get("max_radius", 0.0),
        )


def _append_unique(out: list[complex], p: complex) -> bool:
    for q in out:
        if abs(q - p) <= DEDUP_TOL:
            return False
    out.append(p)
    return True


def build_grid(radial_counts: int, angular_counts: int, min_radius: float, max_radius: float) -> PoleGrid:
    """Polar grid over the closed upper half of the annulus ``min_radius <= |p| <= max_radius``."""
    if radial_counts < 1 or angular_counts < 1:
        raise ValueError("grid counts must be >= 1")
    if not 0.0 < min_radius <= max_radius:
        raise ValueError("need 0 < min_radius <= max_radius")
    if max_radius >= 1.0:
        raise ValueError("max_radius must be < 1 so every atom stays inside the unit circle")
    radii = np.linspace(min_radius, max_radius, radial_counts)
    angles = np.linspace(0.0, math.pi, angular_counts)
    poles: list[complex] = []
    for r in radii:
        for th in angles:
            _append_unique(poles, canonical_pole(r * complex(math.cos(th), math.sin(th))))
    return PoleGrid(np.array(poles), radial_counts, angular_counts, float(min_radius), float(max_radius))


def augment_grid(grid: PoleGrid, extra) -> PoleGrid:
    """Append canonicalized ``extra`` poles not already present (original order kept)."""
    poles = [complex(p) for p in grid.poles]
    for p in extra:
        _append_unique(poles, canonical_pole(check_pole(p)))
    return PoleGrid(np.array(poles, dtype=complex), grid.radial_counts, grid.angular_counts,
                    grid.min_radius, grid.max_radius)


def _snap(p: complex) -> complex:
    p = complex(p)
    return complex(p.real, 0.0) if abs(p.imag) <= REAL_TOL else p


def canonical_pair(p1, p2) -> tuple[complex, complex, bool]:
    """Representative of the orbit ``{(p1, p2), (conj p1, conj p2)}``.

    The representative maximizes ``(Im p1, Im p2, Re p1, Re p2)``; the flag tells
    whether the input had to be conjugated (its coefficient must be conjugated too).
    """
    p1, p2 = _snap(p1), _snap(p2)
    c1, c2 = p1.conjugate(), p2.conjugate()
    if (c1.imag, c2.imag, c1.real, c2.real) > (p1.imag, p2.imag, p1.real, p2.real):
        return c1, c2, True
    return p1, p2, False


def swapped_key(q1: complex, q2: complex) -> tuple[complex, complex]:
    """Canonical form of ``(q2, q1)``: same output regressor as ``(q1, q2)``.

    ``x(n-k1) x(n-k2)`` is symmetric in the lags, so an atom and its swap feed
    identical columns to the output dictionary (only the kernel differs).
    """
    r1, r2, _ = canonical_pair(q2, q1)
    return r1, r2


def canonical_pairs(grid: PoleGrid, dedup_swaps: bool = False) -> list[tuple[complex, complex]]:
    """All distinct conjugate orbits of ordered pole pairs over the full disk.

    With ``dedup_swaps`` only the first of ``(p1, p2)`` and its swap is kept.
    """
    full = grid.full_disk()
    seen = set()
    out = []
    for p1 in full:
        for p2 in full:
            q1, q2, _ = canonical_pair(p1, p2)
            key = (q1, q2)
            if key in seen or (dedup_swaps and swapped_key(q1, q2) in seen):
                continue
            seen.add(key)
            out.append(key)
    return out


@dataclass
class AtomCatalog:
    first_atoms: list
    second_atoms: list
    scale_alpha: float = 1.0
    scale_beta: float = 1.0
    policy: str = "none"
    seed: int = 0

    @property
    def atoms(self) -> list:
        return list(self.first_atoms) + list(self.second_atoms)

    @property
    def n_atoms(self) -> int:
        return len(self.first_atoms) + len(self.second_atoms)

    @property
    def n_columns(self) -> int:
        return 2 * self.n_atoms + 1

    @property
    def const_column(self) -> int:
        return 2 * self.n_atoms

    def active_columns(self) -> np.ndarray:
        mask = np.ones(self.n_columns, dtype=bool)
        for j, atom in enumerate(self.atoms):
            if atom.is_real:
                mask[2 * j + 1] = False
        return mask

    def groups(self) -> list[np.ndarray]:
        """Column indices per atom (inactive columns left out), constant group last."""
        out = []
        for j, atom in enumerate(self.atoms):
            out.append(np.array([2 * j]) if atom.is_real else np.array([2 * j, 2 * j + 1]))
        out.append(np.array([self.const_column]))
        return out

    def index(self, atom) -> int:
        """Catalog index of ``atom`` after conjugate canonicalization; -1 if absent."""
        if isinstance(atom, FirstOrderAtom):
            key = canonical_pole(atom.pole)
            for j, a in enumerate(self.first_atoms):
                if abs(a.pole - key) <= DEDUP_TOL:
                    return j
            return -1
        q1, q2, _ = canonical_pair(atom.pole1, atom.pole2)
        for j, a in enumerate(self.second_atoms):
            if abs(a.pole1 - q1) <= DEDUP_TOL and abs(a.pole2 - q2) <= DEDUP_TOL:
                return len(self.first_atoms) + j
        return -1

    def to_dict(self) -> dict:
        return {
            "first_order": [[a.pole.real, a.pole.imag] for a in self.first_atoms],
            "second_order": [[[a.pole1.real, a.pole1.imag], [a.pole2.real, a.pole2.imag]]
                             for a in self.second_atoms],
            "scale_alpha": self.scale_alpha,
            "scale_beta": self.scale_beta,
            "policy": self.policy,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AtomCatalog":
        a, b = d.get("scale_alpha", 1.0), d.get("scale_beta", 1.0)
        return cls(
            first_atoms=[FirstOrderAtom(complex(re, im), a) for re, im in d.get("first_order", [])],
            second_atoms=[SecondOrderAtom(complex(*p1), complex(*p2), b) for p1, p2 in d.get("second_order", [])],
            scale_alpha=a,
            scale_beta=b,
            policy=d.get("policy", "none"),
            seed=d.get("seed", 0),
        )


def _parse_policy(policy, n_first: int):
    """Normalize a pair policy to ``("none"|"all_pairs"|"sampled", m)``."""
    if policy is None or policy == "none":
        return "none", 0
    if policy == "all_pairs":
        return "all_pairs", 0
    if policy == "sampled":
        return "sampled", 4 * n_first
    if isinstance(policy, int):
        return "sampled", policy
    if isinstance(policy, (tuple, list)) and len(policy) == 2 and policy[0] == "sampled":
        return "sampled", int(policy[1])
    if isinstance(policy, str) and policy.startswith("sampled(") and policy.endswith(")"):
        return "sampled", int(policy[len("sampled("):-1])
    raise ValueError(f"unknown second-order pair policy {policy!r}")


def build_catalog(grid: PoleGrid, second_order_pairs="sampled", scale_alpha: float = 1.0,
                  scale_beta: float = 1.0, seed: int = 0, extra_pairs=(), dedup_swaps: bool = False) -> AtomCatalog:
    """Instantiate first-order atoms on every grid pole and second-order atoms per policy.

    ``second_order_pairs`` is ``"all_pairs"``, ``"sampled"`` (4x the first-order
    count), ``("sampled", m)``, an int ``m``, or ``"none"``. ``extra_pairs`` are
    appended after the policy's pairs (used to plant known second-order atoms).
    ``dedup_swaps`` drops pairs whose swap is already present, since the two are
    indistinguishable from input-output data.
    """
    if len(grid) == 0:
        raise ValueError("grid is empty")
    first = [FirstOrderAtom(p, scale_alpha) for p in grid.poles]
    kind, m = _parse_policy(second_order_pairs, len(first))
    pairs: list[tuple[complex, complex]] = []
    if kind != "none":
        candidates = canonical_pairs(grid, dedup_swaps)
        if kind == "all_pairs":
            pairs = candidates
        else:
            if m > len(candidates):
                raise ValueError(f"sampled({m}) exceeds the {len(candidates)} available pole pairs")
            rng = np.random.default_rng(seed)
            chosen = np.sort(rng.choice(len(candidates), size=m, replace=False))
            pairs = [candidates[i] for i in chosen]
    keys = set(pairs)
    for p1, p2 in extra_pairs:
        q1, q2, _ = canonical_pair(check_pole(p1), check_pole(p2))
        if (q1, q2) not in keys and not (dedup_swaps and swapped_key(q1, q2) in keys):
            keys.add((q1, q2))
            pairs.append((q1, q2))
    second = [SecondOrderAtom(p1, p2, scale_beta) for p1, p2 in pairs]
    label = kind if kind != "sampled" else f"sampled({m})"
    return AtomCatalog(first, second, float(scale_alpha), float(scale_beta), label, int(seed))


@dataclass
class Dictionary:
    """Map from real coefficient vectors to stacked kernels ``[h0; h1; vec(H2)]``."""

    kernel_matrix: np.ndarray
    catalog: AtomCatalog
    memory: int
    active: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.active is None:
            self.active = self.catalog.active_columns()


def _atom_kernel(atom, memory: int) -> np.ndarray:
    """Complex stacked kernel (h0 slot zero) of a single atom."""
    h = np.zeros(1 + memory + memory * memory, dtype=complex)
    if isinstance(atom, FirstOrderAtom):
        h[1 : 1 + memory] = eval_first_order_kernel(atom, memory)
    else:
        h[1 + memory :] = eval_second_order_kernel(atom, memory).ravel()
    return h


def build_dictionary(catalog: AtomCatalog, memory: int) -> Dictionary:
    if catalog.n_atoms == 0:
        raise ValueError("catalog is empty")
    if memory < 1:
        raise ValueError("memory must be >= 1")
    D = np.zeros((1 + memory + memory * memory, catalog.n_columns))
    for j, atom in enumerate(catalog.atoms):
        a = _atom_kernel(atom, memory)
        D[:, 2 * j] = 2.0 * a.real
        if not atom.is_real:
            D[:, 2 * j + 1] = -2.0 * a.imag
    D[0, catalog.const_column] = 1.0
    return Dictionary(D, catalog, memory)


def output_dictionary(catalog: AtomCatalog, x, memory: int) -> np.ndarray:
    """``regression_matrix(x, memory) @ kernel_matrix`` without forming either.

    A second-order atom is separable, so its response to ``x`` is the product of
    the two first-order responses; this keeps the cost at O(N L) per pole.
    """
    U = lagged_inputs(x, memory)
    N = U.shape[0]
    cache: dict[complex, np.ndarray] = {}

    def response(p):
        if p not in cache:
            cache[p] = U @ np.power(p, np.arange(memory))
        return cache[p]

    A = np.zeros((N, catalog.n_columns))
    for j, atom in enumerate(catalog.atoms):
        if isinstance(atom, FirstOrderAtom):
            z = atom.scale * response(atom.pole)
        else:
            z = atom.scale * response(atom.pole1) * response(atom.pole2)
        A[:, 2 * j] = 2.0 * z.real
        if not atom.is_real:
            A[:, 2 * j + 1] = -2.0 * z.imag
    A[:, catalog.const_column] = 1.0
    return A


def real_coeffs(coeffs, h0: float = 0.0, catalog: AtomCatalog | None = None) -> np.ndarray:
    """Interleave complex coefficients into ``[u0, v0, u1, v1, ..., h0]``.

    With a catalog, the imaginary part on real atoms is dropped (it has no effect
    on the kernel).
    """
    coeffs = np.asarray(coeffs, dtype=complex).reshape(-1)
    w = np.zeros(2 * coeffs.size + 1)
    w[0:-1:2] = coeffs.real
    w[1:-1:2] = coeffs.imag
    w[-1] = h0
    if catalog is not None:
        if catalog.n_atoms != coeffs.size:
            raise ValueError(f"expected {catalog.n_atoms} coefficients, got {coeffs.size}")
        w[~catalog.active_columns()] = 0.0
    return w


def _check_length(w: np.ndarray, catalog: AtomCatalog) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != catalog.n_columns:
        raise ValueError(f"coefficient vector has length {w.size}, catalog needs {catalog.n_columns}")
    return w


def complex_coeffs(w, catalog: AtomCatalog, threshold: float = 0.0) -> AtomicModel:
    """Inverse of :func:`real_coeffs`; atoms with ``|u|, |v| <= threshold`` are left out."""
    w = _check_length(w, catalog)
    first, second = [], []
    nf = len(catalog.first_atoms)
    for j, atom in enumerate(catalog.atoms):
        u, v = w[2 * j], (0.0 if atom.is_real else w[2 * j + 1])
        if abs(u) <= threshold and abs(v) <= threshold:
            continue
        (first if j < nf else second).append((atom, complex(u, v)))
    return AtomicModel(float(w[-1]), first, second)


def model_coeffs(model: AtomicModel, catalog: AtomCatalog) -> np.ndarray:
    """Real coefficient vector that reproduces ``model`` on ``catalog``.

    Atoms are matched up to conjugation (coefficients conjugated accordingly);
    differing scales are folded into the coefficient. Raises ``KeyError`` when an
    atom of the model is missing from the catalog.
    """
    c = np.zeros(catalog.n_atoms, dtype=complex)
    atoms = catalog.atoms
    for atom, coeff in model.first_order + model.second_order:
        j = catalog.index(atom)
        if j < 0:
            raise KeyError(f"atom {atom} not in catalog")
        flipped = (canonical_pole(atom.poles[0]) != _snap(atom.poles[0])) if isinstance(atom, FirstOrderAtom) \
            else canonical_pair(atom.pole1, atom.pole2)[2]
        coeff = complex(coeff) * atom.scale / atoms[j].scale
        if flipped:
            coeff = coeff.conjugate()
        if atoms[j].is_real:
            coeff = complex(coeff.real, 0.0)
        c[j] += coeff
    return real_coeffs(c, model.h0, catalog)


def group_norms(w, groups) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array([np.linalg.norm(w[g]) for g in groups])


def atomic_l1_cost(w, catalog: AtomCatalog) -> float:
    """Grid-restricted atomic norm: sum of ``sqrt(u^2 + v^2)`` plus ``|h0|``."""
    w = _check_length(w, catalog)
    return float(group_norms(w, catalog.groups()).sum())
