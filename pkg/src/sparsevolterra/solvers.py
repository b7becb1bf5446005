"""Sparse identification solvers over a gridded atom dictionary.

All solvers act on a :class:`Problem`: an output dictionary ``A`` (observed
rows only), a target vector and the column groups of the atoms. A group is
the ``(u, v)`` pair of one conjugate atom pair (a single column for real
atoms); the last group is the constant atom.

* :func:`solve_mip` -- exact cardinality minimization by branch and bound.
* :func:`solve_l1` -- minimum atomic cost subject to ``||y - A w||^2 <= eps``,
  via a group-lasso path with bisection on the penalty.
* :func:`solve_fw` -- randomized Frank-Wolfe for least squares over the
  atomic-cost ball of radius ``tau``.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .atoms import AtomCatalog, complex_coeffs, group_norms, output_dictionary
from .model import AtomicModel

__all__ = [
    "IdentificationError",
    "Infeasible",
    "NodeBudgetExceeded",
    "MaxIterations",
    "Problem",
    "SolveResult",
    "build_problem",
    "epsilon_from_noise",
    "group_soft_threshold",
    "group_lasso",
    "lambda_max",
    "choose_big_M",
    "solve_mip",
    "solve_l1",
    "solve_fw",
    "fw_gradient",
    "debias",
    "extract_support",
]

logger = logging.getLogger(__name__)

ACTIVITY_THRESHOLD = 1e-6


class IdentificationError(Exception):
    pass


class Infeasible(IdentificationError):
    """Even the densest least-squares fit violates the residual bound."""

    def __init__(self, message, min_residual_sq=None):
        super().__init__(message)
        self.min_residual_sq = min_residual_sq

    @property
    def suggested_epsilon(self):
        return None if self.min_residual_sq is None else 1.05 * self.min_residual_sq


class NodeBudgetExceeded(IdentificationError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class MaxIterations(UserWarning):
    """Inner iterations stopped before reaching tolerance; result flagged unconverged."""


@dataclass
class Problem:
    A: np.ndarray
    target: np.ndarray
    groups: list
    catalog: AtomCatalog | None = None
    epsilon: float = 0.0
    tau: float = 0.0
    big_M: float | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.target = np.asarray(self.target, dtype=float).reshape(-1)
        self.groups = [np.asarray(g, dtype=int).reshape(-1) for g in self.groups]
        if self.A.ndim != 2 or self.A.shape[0] != self.target.size:
            raise ValueError("dictionary rows must match the target length")
        if self.catalog is not None and self.A.shape[1] != self.catalog.n_columns:
            raise ValueError("dictionary columns do not match the catalog")
        if self.epsilon < 0 or self.tau < 0:
            raise ValueError("epsilon and tau must be >= 0")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_obs(self) -> int:
        return self.target.size

    def residual_sq(self, w) -> float:
        r = self.target - self.A @ w
        return float(r @ r)

    def cost(self, w) -> float:
        return float(group_norms(w, self.groups).sum())


@dataclass
class SolveResult:
    coeffs: np.ndarray
    model: AtomicModel | None
    residual_sq: float
    cardinality: int
    objective_trace: list = field(default_factory=list)
    solver_name: str = ""
    converged: bool = True
    seed: int = 0
    atomic_cost: float = 0.0
    info: dict = field(default_factory=dict)


def epsilon_from_noise(eta_max: float, n_obs: int, noise_norm: str = "per_sample") -> float:
    """Residual bound implied by a noise bound: ``n_obs * eta_max**2`` or ``eta_max**2``."""
    if noise_norm == "per_sample":
        return n_obs * eta_max**2
    if noise_norm == "vector":
        return eta_max**2
    raise ValueError(f"unknown noise_norm {noise_norm!r}")


def build_problem(catalog: AtomCatalog, x, y, memory: int, mask=None, epsilon: float = 0.0,
                  tau: float = 0.0, big_M: float | None = None) -> Problem:
    """Assemble a problem keeping only observed rows (``mask`` true)."""
    y = np.asarray(y, dtype=float)
    A = output_dictionary(catalog, x, memory)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("no observed samples")
        A, y = A[mask], y[mask]
    return Problem(A, y, catalog.groups(), catalog, epsilon, tau, big_M)


def _result(problem: Problem, w, name, trace=(), converged=True, seed=0, info=None,
            threshold=ACTIVITY_THRESHOLD) -> SolveResult:
    w = np.asarray(w, dtype=float)
    norms = group_norms(w, problem.groups[:-1]) if problem.catalog is not None else group_norms(w, problem.groups)
    top = norms.max() if norms.size else 0.0
    card = int(np.sum(norms > threshold * top)) if top > 0 else 0
    model = complex_coeffs(w, problem.catalog) if problem.catalog is not None else None
    return SolveResult(
        coeffs=w,
        model=model,
        residual_sq=problem.residual_sq(w),
        cardinality=card,
        objective_trace=[float(v) for v in trace],
        solver_name=name,
        converged=converged,
        seed=seed,
        atomic_cost=problem.cost(w),
        info=info or {},
    )


def _lstsq(A, t, cols):
    """Least squares on a column subset; returns full-length coefficients and residual."""
    w = np.zeros(A.shape[1])
    if len(cols):
        sol, *_ = np.linalg.lstsq(A[:, cols], t, rcond=None)
        w[cols] = sol
    r = t - A @ w
    return w, float(r @ r)


def _columns(groups, idx) -> np.ndarray:
    if not idx:
        return np.zeros(0, dtype=int)
    return np.sort(np.concatenate([groups[i] for i in idx]))


# ---------------------------------------------------------------------------
# exact cardinality minimization


def choose_big_M(problem: Problem, safety: float = 10.0) -> float:
    """``safety`` times the largest group modulus of the minimum-norm dense fit."""
    if safety < 1:
        raise ValueError("safety must be >= 1")
    w, *_ = np.linalg.lstsq(problem.A, problem.target, rcond=None)
    return float(safety * group_norms(w, problem.groups).max())


def solve_mip(problem: Problem, max_nodes: int = 100_000) -> SolveResult:
    """Fewest active groups with ``residual <= epsilon`` and group moduli ``<= big_M``.

    Best-first branch and bound over the activity pattern. A node fixes some
    groups on (``ins``) and some off (``outs``); the least-squares residual of
    ``ins + free`` bounds every descendant from below. Ties in cardinality are
    broken by smaller residual, then by the sorted support.
    """
    A, t, groups = problem.A, problem.target, problem.groups
    G = len(groups)
    eps = problem.epsilon
    M = problem.big_M if problem.big_M is not None else choose_big_M(problem)
    cache: dict[tuple, tuple] = {}

    def fit(idx):
        idx = tuple(sorted(idx))
        if idx not in cache:
            cache[idx] = _lstsq(A, t, _columns(groups, idx))
        return cache[idx]

    w_all, res_all = fit(range(G))
    if res_all > eps:
        raise Infeasible(f"least-squares residual {res_all:.6g} exceeds epsilon {eps:.6g}", res_all)

    dense = group_norms(w_all, groups)
    order = sorted(range(G), key=lambda g: (-dense[g], g))

    def within_M(w, idx):
        return all(np.linalg.norm(w[groups[g]]) <= M for g in idx)

    best = None  # (card, residual, support, w)
    counter = itertools.count()
    heap = [(0, 0.0, next(counter), (), ())]
    nodes = 0
    budget_hit = False
    while heap:
        card_lb, _, _, ins, outs = heapq.heappop(heap)
        if best is not None and card_lb > best[0]:
            continue
        if nodes >= max_nodes:
            budget_hit = True
            break
        nodes += 1
        w_in, res_in = fit(ins)
        if res_in <= eps and within_M(w_in, ins):
            cand = (len(ins), res_in, tuple(sorted(ins)), w_in)
            if best is None or cand[:3] < best[:3]:
                best = cand
            continue
        fixed = set(ins) | set(outs)
        free = [g for g in order if g not in fixed]
        if not free:
            continue
        _, res_up = fit(tuple(ins) + tuple(free))
        if res_up > eps:
            continue
        if best is not None and len(ins) + 1 > best[0]:
            continue
        j = free[0]
        _, res_child = fit(tuple(ins) + (j,))
        heapq.heappush(heap, (len(ins) + 1, res_child, next(counter), ins + (j,), outs))
        heapq.heappush(heap, (len(ins) + 1, res_up, next(counter), ins, outs + (j,)))

    info = {"nodes": nodes, "big_M": M}
    if best is None:
        if budget_hit:
            raise NodeBudgetExceeded(f"node budget {max_nodes} exhausted without incumbent", None)
        raise Infeasible("no support satisfies the residual and big-M bounds", res_all)
    res = _result(problem, best[3], "mip", trace=[best[0]], converged=not budget_hit, info=info)
    res.info["support"] = list(best[2])
    res.info["n_active_groups"] = best[0]
    if budget_hit:
        raise NodeBudgetExceeded(f"node budget {max_nodes} exhausted; best incumbent attached", res)
    return res


# ---------------------------------------------------------------------------
# group-lasso relaxation


class _GroupIndex:
    """Vectorized per-group norms and scaling; columns outside every group stay zero."""

    def __init__(self, groups, n_cols):
        self.n_groups = len(groups)
        self.col_group = np.full(n_cols, -1)
        for i, g in enumerate(groups):
            self.col_group[g] = i
        self.member = self.col_group >= 0
        self.gid = np.where(self.member, self.col_group, 0)

    def norms(self, v):
        sq = np.bincount(self.gid[self.member], weights=v[self.member] ** 2, minlength=self.n_groups)
        return np.sqrt(sq)

    def scale(self, v, factors):
        return np.where(self.member, v * factors[self.gid], 0.0)


def group_soft_threshold(v, t: float) -> np.ndarray:
    """Proximal map of ``t * ||.||_2``: ``max(0, 1 - t/||v||) * v``."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n <= t:
        return np.zeros_like(v)
    return (1.0 - t / n) * v


def _prox(v, gi: _GroupIndex, t):
    n = gi.norms(v)
    factors = np.where(n > t, 1.0 - t / np.where(n > 0, n, 1.0), 0.0)
    return gi.scale(v, factors)


def lambda_max(problem: Problem) -> float:
    """Smallest penalty for which the all-zero vector is optimal."""
    c = problem.A.T @ problem.target
    return float(max(np.linalg.norm(c[g]) for g in problem.groups))


def _kkt_violation(A, t, gi: _GroupIndex, lam, w) -> float:
    c = A.T @ (t - A @ w)
    n = gi.norms(w)
    on = n > 0
    unit = gi.scale(w, np.where(on, 1.0 / np.where(on, n, 1.0), 0.0))
    dev = gi.norms(c - lam * unit)
    cn = gi.norms(c)
    return float(np.max(np.where(on, dev, cn - lam)))


def _penalized(A, t, gi: _GroupIndex, lam, w):
    r = t - A @ w
    return 0.5 * float(r @ r) + lam * float(gi.norms(w).sum())


def _newton_polish(A, t, gi: _GroupIndex, lam, w, iters=50):
    """Damped Newton on the groups currently nonzero; the objective is smooth there."""
    on = gi.norms(w) > 0
    if not on.any():
        return w
    cols = np.flatnonzero(gi.member & on[gi.gid])
    local_gid = np.unique(gi.gid[cols], return_inverse=True)[1]
    n_loc = int(local_gid.max()) + 1
    As = A[:, cols]
    AtA = As.T @ As
    Att = As.T @ t
    z = w[cols].copy()
    same = local_gid[:, None] == local_gid[None, :]

    def norms(z):
        return np.sqrt(np.bincount(local_gid, weights=z * z, minlength=n_loc))

    def obj(z):
        r = t - As @ z
        return 0.5 * float(r @ r) + lam * float(norms(z).sum())

    f = obj(z)
    for _ in range(iters):
        n = norms(z)
        if np.any(n == 0):
            break
        u = z / n[local_gid]
        grad = AtA @ z - Att + lam * u
        H = AtA + lam * same * (np.eye(z.size) - np.outer(u, u)) / n[local_gid][:, None]
        try:
            d = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(H, grad, rcond=None)[0]
        step = 1.0
        for _ in range(30):
            z_new = z + step * d
            f_new = obj(z_new)
            if f_new <= f:
                break
            step *= 0.5
        else:
            break
        decrease = f - f_new
        z, f = z_new, f_new
        if decrease <= 1e-15 * max(1.0, abs(f)):
            break
    out = w.copy()
    out[cols] = z
    return out


def group_lasso(A, t, groups, lam: float, w0=None, tol: float = 1e-9, max_iter: int = 5000,
                step_norm: float | None = None):
    """Minimize ``0.5||t - A w||^2 + lam * sum_g ||w_g||``.

    Accelerated proximal gradient with adaptive restart; once the support
    settles the nonzero groups are polished with Newton steps. ``tol`` bounds
    the KKT violation relative to ``||A^T t||``. Returns ``(w, n_iter, converged,
    trace)``.
    """
    n_cols = A.shape[1]
    gi = _GroupIndex(groups, n_cols)
    w = np.zeros(n_cols) if w0 is None else np.array(w0, dtype=float)
    w = np.where(gi.member, w, 0.0)
    Lip = step_norm if step_norm is not None else np.linalg.norm(A, 2) ** 2
    if Lip == 0:
        return w, 0, True, []
    scale = max(float(np.max(np.abs(A.T @ t))), 1e-300)
    AtA = A.T @ A if A.shape[0] > n_cols else None
    Att = A.T @ t

    def grad(v):
        return (AtA @ v - Att) if AtA is not None else A.T @ (A @ v - t)

    y = w.copy()
    mom = 1.0
    trace = [_penalized(A, t, gi, lam, w)]
    support = None
    stable = 0
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        w_new = _prox(y - grad(y) / Lip, gi, lam / Lip)
        if np.dot(y - w_new, w_new - w) > 0:
            mom = 1.0
            y = w.copy()
            continue
        mom_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * mom * mom))
        y = w_new + ((mom - 1.0) / mom_new) * (w_new - w)
        w, mom = w_new, mom_new
        if it % 10 == 0:
            trace.append(_penalized(A, t, gi, lam, w))
            if _kkt_violation(A, t, gi, lam, w) <= tol * scale:
                converged = True
                break
            new_support = gi.norms(w) > 0
            stable = stable + 1 if support is not None and np.array_equal(new_support, support) else 0
            support = new_support
            if stable >= 3 and support.any():
                polished = _newton_polish(A, t, gi, lam, w)
                if _penalized(A, t, gi, lam, polished) <= _penalized(A, t, gi, lam, w):
                    w = polished
                    y = w.copy()
                    mom = 1.0
                    trace.append(_penalized(A, t, gi, lam, w))
                    if _kkt_violation(A, t, gi, lam, w) <= tol * scale:
                        converged = True
                        break
                stable = 0
    return w, it, converged, trace


def solve_l1(problem: Problem, tol: float = 1e-9, max_iter: int = 5000, delta: float = 0.05,
             max_bisect: int = 60) -> SolveResult:
    """Minimum atomic cost subject to ``||target - A w||^2 <= epsilon``.

    The penalty ``lam`` of the group-lasso form is bisected (geometrically)
    until the residual lands in ``[(1 - delta) eps, eps]``; the feasible iterate
    with the smallest atomic cost is returned.
    """
    A, t, groups = problem.A, problem.target, problem.groups
    eps = problem.epsilon
    if eps <= 0:
        raise ValueError("solve_l1 needs epsilon > 0")
    tt = float(t @ t)
    zero = np.zeros(A.shape[1])
    if tt <= eps:
        return _result(problem, zero, "l1", trace=[0.0], info={"lambda": lambda_max(problem), "path": []})
    _, res_ls = _lstsq(A, t, np.arange(A.shape[1]))
    if res_ls > eps:
        raise Infeasible(f"least-squares residual {res_ls:.6g} exceeds epsilon {eps:.6g}", res_ls)

    Lip = np.linalg.norm(A, 2) ** 2
    lmax = lambda_max(problem)
    path = []
    all_converged = True
    best = None  # (cost, w, lam, trace)

    def run(lam, w0):
        nonlocal all_converged, best
        w, n_it, ok, trace = group_lasso(A, t, groups, lam, w0, tol, max_iter, Lip)
        all_converged &= ok
        res = problem.residual_sq(w)
        cost = problem.cost(w)
        path.append({"lambda": lam, "residual_sq": res, "cost": cost, "iterations": n_it, "converged": ok})
        if res <= eps and (best is None or cost < best[0]):
            best = (cost, w, lam, trace)
        return w, res

    # bracket [lo, hi]: residual(lo) <= eps < residual(hi)
    hi, lo = lmax, lmax
    w_lo = zero
    while True:
        lo *= 0.1
        w_lo, res_lo = run(lo, w_lo)
        if res_lo <= eps:
            break
        hi = lo
        if lo < lmax * 1e-16:
            # penalized path cannot reach eps; fall back to the dense least-squares point
            w_ls, _ = _lstsq(A, t, np.arange(A.shape[1]))
            logger.warning("l1 path did not reach epsilon; returning dense least-squares fit")
            return _result(problem, w_ls, "l1", converged=False, info={"lambda": 0.0, "path": path})

    if res_lo < (1.0 - delta) * eps:
        for _ in range(max_bisect):
            mid = np.sqrt(lo * hi)
            w_mid, res_mid = run(mid, w_lo)
            if res_mid > eps:
                hi = mid
            else:
                lo, w_lo = mid, w_mid
                if res_mid >= (1.0 - delta) * eps:
                    break
            if hi / lo < 1.0 + 1e-12:
                break

    cost, w, lam, trace = best
    if not all_converged:
        warnings.warn("group-lasso inner loop hit max_iter before tolerance", MaxIterations, stacklevel=2)
    return _result(problem, w, "l1", trace=trace, converged=all_converged,
                   info={"lambda": lam, "lambda_max": lmax, "path": path})


# ---------------------------------------------------------------------------
# randomized Frank-Wolfe


def fw_gradient(problem: Problem, w) -> np.ndarray:
    """Gradient of ``||target - A w||^2``."""
    return -2.0 * problem.A.T @ (problem.target - problem.A @ w)


def solve_fw(problem: Problem, n_samples_per_iter: int | None = None, max_iter: int = 5000,
             gap_tol: float = 1e-6, seed: int = 0, step: str = "line_search") -> SolveResult:
    """Randomized Frank-Wolfe on ``min ||target - A w||^2`` s.t. atomic cost ``<= tau``.

    Each iteration scores a random subset of groups by the gradient norm and
    moves toward ``tau`` times the best unit vertex. ``gap_tol`` is relative to
    ``||target||^2``. A sampled gap below tolerance is confirmed against the full
    gap before stopping; a non-positive sampled gap skips the step.
    """
    if step not in ("line_search", "open_loop"):
        raise ValueError("step must be 'line_search' or 'open_loop'")
    A, t, groups = problem.A, problem.target, problem.groups
    tau = problem.tau
    G = len(groups)
    n_samp = G if n_samples_per_iter is None else min(int(n_samples_per_iter), G)
    if n_samp < 1:
        raise ValueError("n_samples_per_iter must be >= 1")
    rng = np.random.default_rng(seed)
    gi = _GroupIndex(groups, A.shape[1])
    w = np.zeros(A.shape[1])
    r = t.copy()
    Aw = np.zeros_like(t)
    trace = [float(r @ r)]
    costs = [0.0]
    gap_scale = max(float(t @ t), 1e-300)
    gaps = []
    converged = False
    for k in range(max_iter):
        grad = -2.0 * (A.T @ r)
        norms = gi.norms(grad)
        cand = np.arange(G) if n_samp == G else np.sort(rng.choice(G, size=n_samp, replace=False))
        # argmax returns the first maximum, i.e. the smallest catalog index on ties
        j = cand[int(np.argmax(norms[cand]))]
        g = groups[j]
        As = np.zeros_like(t)
        s_g = np.zeros(g.size)
        if norms[j] > 0 and tau > 0:
            s_g = -tau * grad[g] / norms[j]
            As = A[:, g] @ s_g
        # gap <grad, w - s>
        gap = float(grad @ w - grad[g] @ s_g)
        gaps.append(gap)
        if gap <= gap_tol * gap_scale:
            # a small sampled gap only certifies the sample; confirm with every group
            full_gap = float(grad @ w) + tau * float(norms.max())
            if full_gap <= gap_tol * gap_scale:
                converged = True
                break
            if gap <= 0:
                trace.append(trace[-1])
                costs.append(costs[-1])
                continue
        Ad = As - Aw
        dd = float(Ad @ Ad)
        if dd == 0:
            converged = True
            break
        if step == "line_search":
            gamma = min(max(float(r @ Ad) / dd, 0.0), 1.0)
        else:
            gamma = 2.0 / (k + 2.0)
        w *= 1.0 - gamma
        w[g] += gamma * s_g
        Aw = Aw + gamma * Ad
        r = t - Aw
        trace.append(float(r @ r))
        costs.append(float(gi.norms(w).sum()))
    res = _result(problem, w, "fw", trace=trace, converged=converged, seed=seed,
                  info={"tau": tau, "iterations": len(trace) - 1, "final_gap": gaps[-1] if gaps else 0.0,
                        "n_samples_per_iter": n_samp, "cost_trace": costs})
    return res


# ---------------------------------------------------------------------------
# support extraction


def debias(result: SolveResult, problem: Problem, threshold_rel: float = ACTIVITY_THRESHOLD) -> SolveResult:
    """Keep groups above ``threshold_rel`` times the largest modulus and refit by least squares.

    The constant atom is always part of the refit.
    """
    if not 0.0 < threshold_rel < 1.0:
        raise ValueError("threshold_rel must lie in (0, 1)")
    groups = problem.groups
    exp_groups = groups[:-1] if problem.catalog is not None else groups
    norms = group_norms(result.coeffs, exp_groups)
    top = norms.max() if norms.size else 0.0
    keep = [i for i in range(len(exp_groups)) if top > 0 and norms[i] > threshold_rel * top]
    if problem.catalog is not None:
        keep.append(len(groups) - 1)
    w, _ = _lstsq(problem.A, problem.target, _columns(groups, keep))
    out = _result(problem, w, result.solver_name + "+refit", trace=result.objective_trace,
                  converged=result.converged, seed=result.seed, info=dict(result.info))
    out.info["pre_refit_residual_sq"] = result.residual_sq
    out.info["support"] = keep
    return out


def extract_support(result: SolveResult, problem: Problem, threshold_rel: float = ACTIVITY_THRESHOLD) -> AtomicModel:
    """Refit model on the support of ``result`` (offset-only when nothing survives)."""
    return debias(result, problem, threshold_rel).model
