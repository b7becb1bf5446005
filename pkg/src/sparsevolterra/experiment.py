"""Experiment configuration and the simulate -> identify -> report pipeline.

A config is a nested JSON object with sections ``system, input, noise, mask,
grid, solver`` plus ``seed`` and ``memory``. Unset seeds derive from the
master ``seed``: input ``seed``, noise ``seed + 1``, mask ``seed + 2``,
catalog and Frank-Wolfe sampling ``seed``.
"""

from __future__ import annotations

import copy
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .atoms import augment_grid, build_catalog, build_grid
from .data import (
    RNG_NAME,
    Dataset,
    add_uniform_noise,
    atoms_to_model,
    compute_metrics,
    make_rng,
    model_to_atoms,
    random_mask,
)
from .model import AtomicModel, auto_memory, eval_kernels, simulate
from .presets import PRESETS, preset_model
from .solvers import (
    NodeBudgetExceeded,
    Problem,
    SolveResult,
    build_problem,
    choose_big_M,
    debias,
    epsilon_from_noise,
    solve_fw,
    solve_l1,
    solve_mip,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "resolve",
    "system_model",
    "make_dataset",
    "Identification",
    "identify",
    "truth_section",
    "build_report",
    "sweep_tau",
]

SOLVERS = ("mip", "l1", "fw")
NOISELESS_EPS_REL = 1e-10


class ConfigError(ValueError):
    pass


@dataclass
class SystemSpec:
    preset: str | None = None
    h0: float = 0.0
    atoms: list = field(default_factory=list)


@dataclass
class InputSpec:
    n_samples: int | None = None
    distribution: str = "uniform"
    seed: int | None = None


@dataclass
class NoiseSpec:
    level_pct: float | None = None
    seed: int | None = None


@dataclass
class MaskSpec:
    drop_pct: float = 0.0
    seed: int | None = None


@dataclass
class GridSpec:
    radial: int = 4
    angular: int = 8
    min_radius: float = 0.1
    max_radius: float = 0.95
    plant_true_poles: bool = False
    second_order_pairs: object = "sampled"
    scale_alpha: float = 1.0
    scale_beta: float = 1.0
    dedup_swaps: bool = True
    seed: int | None = None


@dataclass
class SolverSpec:
    name: str = "l1"
    epsilon: float | None = None
    noise_norm: str = "per_sample"
    tau: float | None = None
    taus: list = field(default_factory=list)
    max_iter: int = 5000
    tol: float = 1e-9
    delta: float = 0.05
    gap_tol: float = 1e-6
    n_samples_per_iter: int | None = None
    step: str = "line_search"
    max_nodes: int = 100_000
    big_M_safety: float = 10.0
    threshold_rel: float = 1e-6
    seed: int | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    memory: object = "auto"
    system: SystemSpec = field(default_factory=SystemSpec)
    input: InputSpec = field(default_factory=InputSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    mask: MaskSpec = field(default_factory=MaskSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        sections = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in sections:
                raise ConfigError(f"unknown config key {key!r}")
            spec_cls = {"system": SystemSpec, "input": InputSpec, "noise": NoiseSpec, "mask": MaskSpec,
                        "grid": GridSpec, "solver": SolverSpec}.get(key)
            if spec_cls is None:
                kwargs[key] = value
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            try:
                kwargs[key] = spec_cls(**value)
            except TypeError as exc:
                raise ConfigError(f"config section {key!r}: {exc}") from None
        return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    try:
        return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill preset defaults and derived seeds; validate names and ranges."""
    cfg = copy.deepcopy(cfg)
    preset = PRESETS.get(cfg.system.preset) if cfg.system.preset else None
    if cfg.system.preset and preset is None:
        raise ConfigError(f"unknown preset {cfg.system.preset!r}; choose from {sorted(PRESETS)}")
    if cfg.input.n_samples is None:
        cfg.input.n_samples = preset["n_samples"] if preset else 100
    if cfg.noise.level_pct is None:
        cfg.noise.level_pct = preset["noise_pct"] if preset else 0.0
    s = int(cfg.seed)
    cfg.input.seed = s if cfg.input.seed is None else cfg.input.seed
    cfg.noise.seed = s + 1 if cfg.noise.seed is None else cfg.noise.seed
    cfg.mask.seed = s + 2 if cfg.mask.seed is None else cfg.mask.seed
    cfg.grid.seed = s if cfg.grid.seed is None else cfg.grid.seed
    cfg.solver.seed = s if cfg.solver.seed is None else cfg.solver.seed
    if isinstance(cfg.grid.second_order_pairs, list):
        cfg.grid.second_order_pairs = tuple(cfg.grid.second_order_pairs)
    if cfg.input.n_samples < 1:
        raise ConfigError("input.n_samples must be >= 1")
    if cfg.input.distribution not in ("uniform", "normal"):
        raise ConfigError(f"unknown input distribution {cfg.input.distribution!r}")
    if cfg.solver.name not in SOLVERS:
        raise ConfigError(f"unknown solver {cfg.solver.name!r}; choose from {SOLVERS}")
    if cfg.solver.noise_norm not in ("per_sample", "vector"):
        raise ConfigError(f"unknown noise_norm {cfg.solver.noise_norm!r}")
    if not (cfg.memory == "auto" or (isinstance(cfg.memory, int) and cfg.memory >= 1)):
        raise ConfigError("memory must be 'auto' or a positive integer")
    if cfg.grid.radial < 1 or cfg.grid.angular < 1:
        raise ConfigError("grid counts must be >= 1")
    return cfg


def system_model(cfg: ExperimentConfig) -> AtomicModel:
    """Ground-truth model from a preset or an explicit atom list (``ValueError`` on bad poles)."""
    spec = cfg.system
    if spec.preset:
        model = preset_model(spec.preset, cfg.grid.scale_alpha, cfg.grid.scale_beta)
        if spec.atoms or spec.h0:
            extra = atoms_to_model(spec.atoms, spec.h0)
            model = AtomicModel(extra.h0, model.first_order + extra.first_order,
                                model.second_order + extra.second_order)
        return model
    return atoms_to_model(spec.atoms, spec.h0)


def make_input(cfg: ExperimentConfig) -> np.ndarray:
    rng = make_rng(cfg.input.seed)
    N = cfg.input.n_samples
    if cfg.input.distribution == "uniform":
        return rng.uniform(-1.0, 1.0, N)
    return rng.standard_normal(N)


def make_dataset(cfg: ExperimentConfig, truth: AtomicModel | None = None) -> Dataset:
    """Simulate the configured system from rest and add seeded noise and mask."""
    truth = system_model(cfg) if truth is None else truth
    x = make_input(cfg)
    N = x.size
    # zero prehistory: lags >= N never touch the record, so L = N is exact
    clean = simulate(eval_kernels(truth, N), x)
    noisy, eta = add_uniform_noise(clean, cfg.noise.level_pct, cfg.noise.seed)
    mask = random_mask(N, cfg.mask.drop_pct, cfg.mask.seed)
    meta = {"noise": "uniform", "level_pct": cfg.noise.level_pct, "rng": RNG_NAME,
            "preset": cfg.system.preset}
    return Dataset(x, noisy, mask, clean, eta, cfg.noise.seed, meta)


def identification_memory(cfg: ExperimentConfig, grid_poles, n_samples: int) -> int:
    if cfg.memory != "auto":
        return int(cfg.memory)
    rho = max(abs(complex(p)) for p in grid_poles)
    return auto_memory(rho, cap=n_samples)


def resolve_epsilon(cfg: ExperimentConfig, dataset: Dataset) -> float:
    if cfg.solver.epsilon is not None:
        return float(cfg.solver.epsilon)
    y = dataset.output_noisy[dataset.mask]
    if dataset.eta_max == 0:
        return NOISELESS_EPS_REL * float(y @ y)
    return epsilon_from_noise(dataset.eta_max, dataset.n_observed, cfg.solver.noise_norm)


@dataclass
class Identification:
    """Everything one identification run produced."""

    problem: Problem
    raw: SolveResult
    refit: SolveResult
    grid: object
    catalog: object
    memory: int
    metrics: object = None


def setup_problem(cfg: ExperimentConfig, dataset: Dataset, truth: AtomicModel | None = None):
    g = cfg.grid
    grid = build_grid(g.radial, g.angular, g.min_radius, g.max_radius)
    extra_pairs = ()
    if g.plant_true_poles:
        if truth is None:
            raise ConfigError("plant_true_poles needs a ground-truth model")
        grid = augment_grid(grid, truth.poles())
        extra_pairs = [(a.pole1, a.pole2) for a, _ in truth.second_order]
    try:
        catalog = build_catalog(grid, g.second_order_pairs, g.scale_alpha, g.scale_beta, g.seed, extra_pairs,
                                g.dedup_swaps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    memory = identification_memory(cfg, grid.poles, dataset.n_samples)
    problem = build_problem(catalog, dataset.input, dataset.output_noisy, memory, dataset.mask,
                            epsilon=resolve_epsilon(cfg, dataset), tau=cfg.solver.tau or 0.0)
    return grid, catalog, memory, problem


def run_solver(cfg: ExperimentConfig, problem: Problem) -> SolveResult:
    """Run the configured solver. A MIP budget overrun returns its incumbent."""
    s = cfg.solver
    if s.name == "l1":
        return solve_l1(problem, tol=s.tol, max_iter=s.max_iter, delta=s.delta)
    if s.name == "fw":
        if not problem.tau:
            raise ConfigError("the fw solver needs solver.tau > 0 (or use the sweep command)")
        return solve_fw(problem, s.n_samples_per_iter, s.max_iter, s.gap_tol, int(s.seed or 0), s.step)
    problem.big_M = choose_big_M(problem, s.big_M_safety)
    try:
        return solve_mip(problem, max_nodes=s.max_nodes)
    except NodeBudgetExceeded as exc:
        if exc.result is None:
            raise
        return exc.result


def identify(cfg: ExperimentConfig, dataset: Dataset, truth: AtomicModel | None = None) -> Identification:
    """Grid, catalog, problem, solve, refit, and metrics when ``truth`` is known."""
    grid, catalog, memory, problem = setup_problem(cfg, dataset, truth)
    raw = run_solver(cfg, problem)
    refit = debias(raw, problem, cfg.solver.threshold_rel)
    metrics = None
    if truth is not None:
        metrics = compute_metrics(truth, refit.model, dataset, memory, refit.cardinality)
    return Identification(problem, raw, refit, grid, catalog, memory, metrics)


def truth_section(truth: AtomicModel | None) -> dict | None:
    if truth is None:
        return None
    return {"atoms": model_to_atoms(truth), "h0": float(truth.h0)}


def _plain(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def build_report(cfg: ExperimentConfig, dataset: Dataset, run: Identification,
                 truth: AtomicModel | None = None, created: str | None = None) -> dict:
    refit, raw = run.refit, run.raw
    report = {
        "solver": cfg.solver.name,
        "config": cfg.to_dict(),
        "grid": run.grid.to_dict() | {"spacing": run.grid.spacing},
        "catalog": {"n_first_order": len(run.catalog.first_atoms), "n_second_order": len(run.catalog.second_atoms),
                    "policy": run.catalog.policy, "seed": run.catalog.seed},
        "atoms": model_to_atoms(refit.model),
        "h0": float(refit.model.h0),
        "metrics": None if run.metrics is None else run.metrics.to_dict(),
        "trace": list(refit.objective_trace),
        "seed": cfg.seed,
        "created": created or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "memory": run.memory,
        "epsilon": run.problem.epsilon,
        "tau": run.problem.tau,
        "residual_sq": refit.residual_sq,
        "cardinality": refit.cardinality,
        "converged": raw.converged,
        "raw": {"cardinality": raw.cardinality, "residual_sq": raw.residual_sq, "atomic_cost": raw.atomic_cost,
                "info": {k: v for k, v in raw.info.items() if k != "path"}},
        "noise": {"distribution": "uniform", "eta_max": dataset.eta_max, "rng": RNG_NAME},
        "data": {
            "input": dataset.input,
            "output_noisy": dataset.output_noisy,
            "output_clean": dataset.output_clean,
            "mask": dataset.mask,
        },
        "truth": truth_section(truth),
    }
    return _plain(report)


def sweep_tau(cfg: ExperimentConfig, dataset: Dataset, taus, truth: AtomicModel | None = None,
              workers: int = 1) -> list[Identification]:
    """One Frank-Wolfe identification per ``tau``; results ordered as ``taus``."""
    taus = [float(t) for t in taus]
    if not taus or min(taus) <= 0:
        raise ConfigError("sweep needs one or more taus > 0")
    grid, catalog, memory, base = setup_problem(cfg, dataset, truth)
    s = cfg.solver

    def one(tau):
        problem = replace(base, tau=tau)
        raw = solve_fw(problem, s.n_samples_per_iter, s.max_iter, s.gap_tol, int(s.seed or 0), s.step)
        refit = debias(raw, problem, s.threshold_rel)
        metrics = None
        if truth is not None:
            metrics = compute_metrics(truth, refit.model, dataset, memory, refit.cardinality)
        return Identification(problem, raw, refit, grid, catalog, memory, metrics)

    if workers <= 1:
        return [one(t) for t in taus]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, taus))
