"""Risk measures over finite distributions and the soft-robust objectives.

Conventions: larger values are better (returns), so VaR and CVaR look at
the lower tail.  ``alpha`` is the confidence level; ``alpha = 1`` means the
essential infimum (the smallest value with positive probability).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, UnsupportedError
from .mdp import ModelEnsemble, Policy, TabularMdp, batch_returns, return_distribution

PROB_TOL = 1e-12


@dataclass(frozen=True)
class SoftRobustParams:
    alpha: float
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ArgumentError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.lam <= 1.0:
            raise ArgumentError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class DiscreteDistributionView:
    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        probs = np.asarray(self.probs, dtype=float).ravel()
        if values.size == 0:
            raise ArgumentError("distribution has empty support")
        if values.shape != probs.shape:
            raise ArgumentError("values and probs must have equal length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOL:
            raise ArgumentError("probs must be a probability vector")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, values) -> "DiscreteDistributionView":
        values = np.asarray(values, dtype=float)
        return cls(values, np.full(values.size, 1.0 / max(values.size, 1)))


@dataclass(frozen=True)
class XiBox:
    """Box ``lower <= xi <= upper`` intersected with the probability simplex."""

    lower: np.ndarray
    upper: np.ndarray
    base_weights: np.ndarray

    def __post_init__(self):
        if np.any(self.lower > self.upper + 1e-15):
            raise ArgumentError("xi box has lower > upper")
        if self.lower.sum() > 1.0 + 1e-12 or self.upper.sum() < 1.0 - 1e-12:
            raise ArgumentError("xi box does not intersect the simplex")


def _sorted(dist: DiscreteDistributionView):
    # stable sort on (value, index)
    order = np.argsort(dist.values, kind="stable")
    return dist.values[order], dist.probs[order], order


def value_at_risk(dist: DiscreteDistributionView, alpha: float) -> float:
    """Smallest support point ``z`` with ``P(Z <= z) >= 1 - alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    values, probs, _ = _sorted(dist)
    if alpha >= 1.0:
        return float(values[probs > 0][0])
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, 1.0 - alpha - PROB_TOL, side="left"))
    return float(values[min(idx, values.size - 1)])


def _essential_inf(dist: DiscreteDistributionView) -> float:
    return float(np.min(dist.values[dist.probs > 0]))


def cvar_primal(dist: DiscreteDistributionView, alpha: float) -> float:
    """``max_b b - E[(b - Z)^+] / (1 - alpha)``.

    The objective is concave and piecewise linear in ``b`` with kinks at the
    support points, so evaluating it at every support point is exact.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha >= 1.0:
        return _essential_inf(dist)
    z, p = dist.values, dist.probs
    shortfall = np.maximum(z[:, None] - z[None, :], 0.0) @ p
    return float(np.max(z - shortfall / (1.0 - alpha)))


def _greedy_fill(values: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Minimize ``xi @ values`` over ``{lower <= xi <= upper, sum(xi) = 1}``.

    Start from ``lower`` and pour the remaining mass into the smallest values
    first.  Works row-wise on 2-D input (one LP per row, shared bounds).
    """
    values = np.atleast_2d(values)
    order = np.argsort(values, axis=-1, kind="stable")
    caps = (upper - lower)[order]
    remaining = 1.0 - lower.sum()
    before = np.cumsum(caps, axis=-1) - caps
    extra_sorted = np.clip(remaining - before, 0.0, caps)
    xi = np.empty_like(extra_sorted)
    np.put_along_axis(xi, order, extra_sorted, axis=-1)
    xi += lower
    return np.sum(xi * values, axis=-1), xi


def cvar_dual(dist: DiscreteDistributionView, alpha: float) -> float:
    """``min {xi @ Z : xi in simplex, xi <= f / (1 - alpha)}`` by greedy filling."""
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha >= 1.0:
        return _essential_inf(dist)
    upper = dist.probs / (1.0 - alpha)
    value, _ = _greedy_fill(dist.values, np.zeros_like(upper), upper)
    return float(value[0])


def xi_box(f: np.ndarray, params: SoftRobustParams) -> XiBox:
    if params.alpha >= 1.0:
        raise ArgumentError("alpha = 1 has no finite xi box; use the essential-infimum path")
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or abs(f.sum() - 1.0) > PROB_TOL:
        raise ArgumentError("base weights must be a probability vector")
    a, lam = params.alpha, params.lam
    return XiBox((1.0 - lam) * f, (1.0 - a + lam * a) / (1.0 - a) * f, f)


def xi_minimize(values: np.ndarray, box: XiBox):
    """Worst-case expectation over the box; returns ``(objective, xi)``."""
    values = np.asarray(values, dtype=float)
    if values.shape != box.lower.shape:
        raise ArgumentError("values and box dimensions differ")
    obj, xi = _greedy_fill(values, box.lower, box.upper)
    return float(obj[0]), xi[0]


def soft_robust_rows(values: np.ndarray, f: np.ndarray, params: SoftRobustParams) -> np.ndarray:
    """Vectorized soft-robust combination along the last axis."""
    values = np.asarray(values, dtype=float)
    if params.alpha >= 1.0:
        support = f > 0
        worst = np.min(np.where(support, values, np.inf), axis=-1)
        return (1.0 - params.lam) * (values @ f) + params.lam * worst
    box = xi_box(f, params)
    flat = values.reshape(-1, values.shape[-1])
    obj, _ = _greedy_fill(flat, box.lower, box.upper)
    return obj.reshape(values.shape[:-1])


def soft_robust_combine(returns: np.ndarray, f: np.ndarray, params: SoftRobustParams) -> float:
    """``(1 - lambda) * mean + lambda * CVaR_alpha`` of a discrete return vector."""
    returns = np.asarray(returns, dtype=float)
    f = np.asarray(f, dtype=float)
    if returns.shape != f.shape:
        raise ArgumentError("returns and weights must have equal length")
    dist = DiscreteDistributionView(returns, f)
    mean = float(returns @ f)
    if params.lam == 0.0:
        return mean
    return (1.0 - params.lam) * mean + params.lam * cvar_primal(dist, params.alpha)


def rho_S(mdp: TabularMdp, ensemble: ModelEnsemble, policy: Policy, params: SoftRobustParams) -> float:
    """Static soft-robust objective of ``policy``."""
    returns = return_distribution(mdp, ensemble, policy)
    return soft_robust_combine(returns, ensemble.weights, params)


@dataclass(frozen=True)
class GridEstimate:
    """Grid minimum with an a-priori error estimate.

    ``value`` is attained by a feasible ``xi`` so it never undershoots the
    true minimum; ``error`` bounds the overshoot via a Lipschitz argument.
    """

    value: float
    error: float
    xi: np.ndarray
    points: int


def mixture_lipschitz(mdp: TabularMdp) -> float:
    """Lipschitz constant of ``xi -> rho(pi, sum xi_w P_w)`` in the L1 norm."""
    return mdp.r_max / (1.0 - mdp.discount) ** 2


def _xi_vertices(lower, upper):
    """Vertices of the box-simplex intersection (small N only)."""
    n = lower.size
    out = []
    for free in range(n):
        others = [i for i in range(n) if i != free]
        for pattern in itertools.product((0, 1), repeat=n - 1):
            xi = np.empty(n)
            for i, hi in zip(others, pattern):
                xi[i] = upper[i] if hi else lower[i]
            xi[free] = 1.0 - xi[others].sum()
            if lower[free] - 1e-12 <= xi[free] <= upper[free] + 1e-12:
                out.append(np.clip(xi, lower, upper))
    return out


def _lattice(lower, mass, caps, resolution, center=None, radius=None):
    """Points ``lower + mass * t`` with ``t`` on the simplex lattice of step 1/resolution.

    With ``center``/``radius`` only lattice points within the L-inf ball
    around ``center`` (in t-coordinates) are generated.
    """
    n = lower.size
    pts = []
    if center is None:
        lo = np.zeros(n - 1, dtype=int)
        hi = np.full(n - 1, resolution)
    else:
        lo = np.maximum(np.floor((center[:-1] - radius) * resolution), 0).astype(int)
        hi = np.minimum(np.ceil((center[:-1] + radius) * resolution), resolution).astype(int)
    for ks in itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi))):
        k_last = resolution - sum(ks)
        if k_last < 0:
            continue
        t = np.array(ks + (k_last,), dtype=float) / resolution
        if np.all(t <= caps + 1e-12):
            pts.append(lower + mass * t)
    return pts


def rho_D_grid(
    mdp: TabularMdp,
    ensemble: ModelEnsemble,
    policy: Policy,
    params: SoftRobustParams,
    grid_resolution: int = 40,
) -> GridEstimate:
    """Desk-scale oracle for ``min_{xi in Xi} rho(pi, sum_w xi_w P_w)``.

    Evaluates a simplex lattice over the feasible box, the box vertices, and
    one finer lattice around the incumbent.  Exponential in N by design.
    """
    n = len(ensemble)
    if n > 4:
        raise UnsupportedError(f"rho_D_grid supports at most 4 models, got {n}")
    if grid_resolution < 10:
        raise ArgumentError("grid_resolution must be at least 10")
    f = ensemble.weights
    if params.alpha >= 1.0:
        support = f > 0
        upper = np.where(support, 1.0, 0.0) * params.lam + (1 - params.lam) * f
        box_lower, box_upper = (1 - params.lam) * f, upper
    else:
        box = xi_box(f, params)
        box_lower, box_upper = box.lower, box.upper
    tensor = ensemble.tensor
    mass = 1.0 - box_lower.sum()
    pi = policy.action_probs[None]

    def evaluate(points):
        xs = np.array(points)
        mixed = np.einsum("kn,nsat->ksat", xs, tensor)
        vals = np.concatenate([batch_returns(mdp, mixed[i : i + 2048], pi)[0] for i in range(0, len(xs), 2048)])
        return xs, vals

    if mass <= 1e-14:
        xs, vals = evaluate([box_lower / box_lower.sum()])
        return GridEstimate(float(vals[0]), 0.0, xs[0], 1)
    caps = (box_upper - box_lower) / mass
    points = _lattice(box_lower, mass, caps, grid_resolution) + _xi_vertices(box_lower, box_upper)
    xs, vals = evaluate(points)
    best = int(np.argmin(vals))
    fine = 4 * grid_resolution
    center = (xs[best] - box_lower) / mass
    local = _lattice(box_lower, mass, caps, fine, center=center, radius=1.0 / grid_resolution)
    count = len(points)
    if local:
        lx, lv = evaluate(local)
        count += len(local)
        j = int(np.argmin(lv))
        if lv[j] < vals[best]:
            xs, vals, best = lx, lv, j
    spacing_l1 = mass * n / grid_resolution
    return GridEstimate(float(vals[best]), mixture_lipschitz(mdp) * spacing_l1, xs[best], count)
