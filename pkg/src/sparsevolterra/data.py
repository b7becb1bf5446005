"""Datasets, noise injection, observation masks, metrics and file formats.

Signals are stored as CSV with header ``t,x,y,mask`` (``y`` may be empty on
unobserved rows); optional dataset metadata lives in a ``.meta.json`` sidecar.
Reports are JSON documents with the keys ``solver, config, grid, atoms, h0,
metrics, trace, seed`` plus optional extras; unknown keys are ignored on load.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import AtomicModel, FirstOrderAtom, SecondOrderAtom, canonical_pole, eval_kernels, simulate

__all__ = [
    "Dataset",
    "Metrics",
    "FormatError",
    "make_rng",
    "add_uniform_noise",
    "random_mask",
    "apply_mask",
    "observed_rows",
    "compute_metrics",
    "match_poles",
    "save_signals",
    "load_signals",
    "model_to_atoms",
    "atoms_to_model",
    "save_report",
    "load_report",
    "dump_report",
]

# Bit generator fixed for reproducible noise across platforms: numpy PCG64.
RNG_NAME = "numpy.PCG64"


class FormatError(ValueError):
    """Malformed signal or report file."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class Dataset:
    input: np.ndarray
    output_noisy: np.ndarray
    mask: np.ndarray | None = None
    output_clean: np.ndarray | None = None
    eta_max: float = 0.0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input = np.asarray(self.input, dtype=float).reshape(-1)
        self.output_noisy = np.asarray(self.output_noisy, dtype=float).reshape(-1)
        N = self.input.size
        if self.output_noisy.size != N:
            raise ValueError("input and output lengths differ")
        self.mask = np.ones(N, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool).reshape(-1)
        if self.mask.size != N:
            raise ValueError("mask length differs from the signal length")
        if not self.mask.any():
            raise ValueError("dataset has no observed samples")
        if self.output_clean is not None:
            self.output_clean = np.asarray(self.output_clean, dtype=float).reshape(-1)
            if self.output_clean.size != N:
                raise ValueError("clean output length differs")
        if self.eta_max < 0:
            raise ValueError("eta_max must be >= 0")

    @property
    def n_samples(self) -> int:
        return self.input.size

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())


@dataclass
class Metrics:
    output_rmse: float
    output_max_err: float
    kernel_h1_rmse: float
    kernel_h2_rmse: float
    cardinality: int
    pole_match_report: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pole_match_report"] = [
            {"true": [t.real, t.imag], "recovered": None if r is None else [r.real, r.imag], "distance": dist}
            for t, r, dist in self.pole_match_report
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        report = [
            (complex(*m["true"]), None if m["recovered"] is None else complex(*m["recovered"]), m["distance"])
            for m in d.get("pole_match_report", [])
        ]
        return cls(d["output_rmse"], d["output_max_err"], d["kernel_h1_rmse"], d["kernel_h2_rmse"],
                   d["cardinality"], report)


def add_uniform_noise(clean, level_pct: float, seed: int):
    """Add i.i.d. uniform noise of half-width ``level_pct`` percent of ``mean|clean|``.

    Returns ``(noisy, eta_max)``.
    """
    clean = np.asarray(clean, dtype=float)
    if level_pct < 0:
        raise ValueError("level_pct must be >= 0")
    if level_pct == 0:
        return clean.copy(), 0.0
    mean_abs = float(np.mean(np.abs(clean)))
    if mean_abs == 0:
        raise ValueError("noise level is undefined for an all-zero output")
    eta_max = level_pct / 100.0 * mean_abs
    noise = make_rng(seed).uniform(-eta_max, eta_max, size=clean.shape)
    return clean + noise, eta_max


def random_mask(n: int, drop_pct: float, seed: int) -> np.ndarray:
    """Boolean mask with ``round(n * drop_pct / 100)`` seeded entries set false."""
    if not 0 <= drop_pct < 100:
        raise ValueError("drop_pct must lie in [0, 100)")
    n_drop = int(round(n * drop_pct / 100.0))
    mask = np.ones(n, dtype=bool)
    if n_drop:
        mask[make_rng(seed).choice(n, size=n_drop, replace=False)] = False
    return mask


def apply_mask(dataset: Dataset, drop_indices) -> Dataset:
    """Copy of ``dataset`` with ``drop_indices`` marked unobserved."""
    mask = dataset.mask.copy()
    mask[np.asarray(list(drop_indices), dtype=int)] = False
    if not mask.any():
        raise ValueError("masking would leave no observed samples")
    return Dataset(dataset.input.copy(), dataset.output_noisy.copy(), mask,
                   None if dataset.output_clean is None else dataset.output_clean.copy(),
                   dataset.eta_max, dataset.seed, dict(dataset.meta))


def observed_rows(X, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty observation set")
    return np.asarray(X)[mask]


def match_poles(true_poles, recovered_poles):
    """Nearest recovered pole for every true pole, compared as upper-half representatives."""
    rec = [canonical_pole(p) for p in recovered_poles]
    out = []
    for p in true_poles:
        q = canonical_pole(p)
        if not rec:
            out.append((q, None, math.inf))
            continue
        d = [abs(q - r) for r in rec]
        i = int(np.argmin(d))
        out.append((q, rec[i], float(d[i])))
    return out


def compute_metrics(true_model: AtomicModel, estimate: AtomicModel, dataset: Dataset, memory: int,
                    cardinality: int | None = None) -> Metrics:
    """Output errors against the clean output (all samples) and kernel errors at ``memory``."""
    k_true = eval_kernels(true_model, memory)
    k_est = eval_kernels(estimate, memory)
    clean = dataset.output_clean if dataset.output_clean is not None else simulate(k_true, dataset.input)
    err = simulate(k_est, dataset.input) - clean
    return Metrics(
        output_rmse=float(np.sqrt(np.mean(err**2))),
        output_max_err=float(np.max(np.abs(err))),
        kernel_h1_rmse=float(np.sqrt(np.mean((k_est.h1 - k_true.h1) ** 2))),
        kernel_h2_rmse=float(np.sqrt(np.mean((k_est.H2 - k_true.H2) ** 2))),
        cardinality=estimate.n_atoms if cardinality is None else int(cardinality),
        pole_match_report=match_poles(true_model.poles(), estimate.poles()),
    )


# ---------------------------------------------------------------------------
# CSV signals


def _fmt(v: float) -> str:
    return repr(float(v))


def save_signals(path, dataset: Dataset, t=None) -> None:
    """Write ``t,x,y,mask``; unobserved rows keep an empty ``y``. Metadata goes to a sidecar."""
    path = Path(path)
    t = np.arange(dataset.n_samples) if t is None else np.asarray(t)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "y", "mask"])
        for k in range(dataset.n_samples):
            obs = bool(dataset.mask[k])
            w.writerow([int(t[k]) if float(t[k]).is_integer() else _fmt(t[k]), _fmt(dataset.input[k]),
                        _fmt(dataset.output_noisy[k]) if obs else "", int(obs)])
    meta = {
        "eta_max": dataset.eta_max,
        "seed": dataset.seed,
        "rng": RNG_NAME,
        "meta": dataset.meta,
        "output_clean": None if dataset.output_clean is None else [float(v) for v in dataset.output_clean],
    }
    _meta_path(path).write_text(json.dumps(meta, indent=1))


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def load_signals(path) -> Dataset:
    path = Path(path)
    xs, ys, ms = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        try:
            ix, iy = header.index("x"), header.index("y")
        except ValueError:
            raise FormatError(f"{path}: header must contain columns t,x,y,mask") from None
        im = header.index("mask") if "mask" in header else None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise FormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                x = float(row[ix])
                ytxt = row[iy].strip()
                observed = bool(int(row[im])) if im is not None and row[im].strip() else bool(ytxt)
                y = float(ytxt) if ytxt else math.nan
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
            if not ytxt:
                observed = False
            xs.append(x)
            ys.append(0.0 if math.isnan(y) else y)
            ms.append(observed)
    if not xs:
        raise FormatError(f"{path}: no data rows")
    eta_max, seed, meta, clean = 0.0, 0, {}, None
    mp = _meta_path(path)
    if mp.exists():
        m = json.loads(mp.read_text())
        eta_max, seed, meta, clean = m.get("eta_max", 0.0), m.get("seed", 0), m.get("meta", {}), m.get("output_clean")
    return Dataset(np.array(xs), np.array(ys), np.array(ms), None if clean is None else np.array(clean),
                   eta_max, seed, meta)


# ---------------------------------------------------------------------------
# JSON reports


def model_to_atoms(model: AtomicModel) -> list[dict]:
    out = []
    for atom, c in model.first_order:
        out.append({"kind": "first", "poles": [[atom.pole.real, atom.pole.imag]], "coeff": [c.real, c.imag],
                    "scale": atom.scale})
    for atom, c in model.second_order:
        out.append({"kind": "second",
                    "poles": [[atom.pole1.real, atom.pole1.imag], [atom.pole2.real, atom.pole2.imag]],
                    "coeff": [c.real, c.imag], "scale": atom.scale})
    return out


def atoms_to_model(atoms: list[dict], h0: float = 0.0) -> AtomicModel:
    first, second = [], []
    for a in atoms:
        poles = [complex(re, im) for re, im in a["poles"]]
        c = complex(*a["coeff"])
        scale = a.get("scale", 1.0)
        if a["kind"] == "first":
            first.append((FirstOrderAtom(poles[0], scale), c))
        elif a["kind"] == "second":
            second.append((SecondOrderAtom(poles[0], poles[1], scale), c))
        else:
            raise FormatError(f"unknown atom kind {a['kind']!r}")
    return AtomicModel(h0, first, second)


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True)


def save_report(path, report: dict) -> None:
    Path(path).write_text(dump_report(report) + "\n")


def load_report(path) -> dict:
    """Load a report; adds ``model`` (AtomicModel) and ``truth_model`` when present."""
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    for key in ("atoms", "h0"):
        if key not in d:
            raise FormatError(f"{path}: report lacks {key!r}")
    d["model"] = atoms_to_model(d["atoms"], d["h0"])
    truth = d.get("truth")
    if truth:
        d["truth_model"] = atoms_to_model(truth["atoms"], truth.get("h0", 0.0))
    return d
