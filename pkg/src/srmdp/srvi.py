"""Soft-robust value iteration with a linear value function ``v = Phi w``.

Each iteration simulates episodes under the mean model with the decision
rule of the robust Bellman operator at the current ``v``, computes Bellman
targets on the visited states, and refits ``w`` by ridge-regularized least
squares on the visitation averages (a sample-average projection).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .errors import ArgumentError, NumericError
from .mdp import ModelEnsemble, Policy, TabularMdp
from .posterior import stream
from .risk import SoftRobustParams
from .robust import MODES, S_RECT, SA_RECT, BellmanResult, EnsembleArrays, bellman_state


@dataclass(frozen=True)
class FeatureMap:
    kind: str
    matrix: np.ndarray  # (S, l); row s is phi(s)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] < 1:
            raise ArgumentError("feature matrix must be (S, l) with l >= 1")
        if not np.all(np.isfinite(m)):
            raise ArgumentError("features must be finite")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_states(self) -> int:
        return self.matrix.shape[0]

    def encode(self, state: int) -> np.ndarray:
        return self.matrix[state]

    @classmethod
    def one_hot(cls, num_states: int) -> "FeatureMap":
        return cls("one_hot", np.eye(num_states))

    @classmethod
    def poly2(cls, num_states: int, state_features: np.ndarray | None = None) -> "FeatureMap":
        """Bias, linear and all degree-2 monomials of the state features.

        Without explicit features a state is the scalar ``s / (S - 1)``.
        """
        if state_features is None:
            x = np.arange(num_states, dtype=float)[:, None] / max(num_states - 1, 1)
        else:
            x = np.asarray(state_features, dtype=float).reshape(num_states, -1)
        d = x.shape[1]
        cols = [np.ones(num_states)] + [x[:, i] for i in range(d)]
        cols += [x[:, i] * x[:, j] for i, j in combinations_with_replacement(range(d), 2)]
        return cls("poly2", np.column_stack(cols))

    @classmethod
    def build(cls, kind: str, num_states: int) -> "FeatureMap":
        if kind == "one_hot":
            return cls.one_hot(num_states)
        if kind == "poly2":
            return cls.poly2(num_states)
        raise ArgumentError(f"unknown feature kind {kind!r}")


@dataclass(frozen=True)
class SrviConfig:
    episodes_per_iter: int = 30
    episode_length: int = 100
    max_iters: int = 150
    tol: float = 1e-4
    ridge: float = 1e-8
    seed: int = 0
    sweep_states: bool = False  # visit every state once per iteration instead of simulating

    def __post_init__(self):
        for name in ("episodes_per_iter", "episode_length", "max_iters"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be positive")
        if not self.tol > 0 or self.ridge < 0:
            raise ArgumentError("tol must be positive and ridge non-negative")
        if self.seed < 0:
            raise ArgumentError("seed must be non-negative")


@dataclass
class SrviSolution:
    weights: np.ndarray
    iterations_used: int
    final_residual: float
    converged: bool
    features: FeatureMap
    mdp: TabularMdp = field(repr=False)
    ensemble: ModelEnsemble = field(repr=False)
    params: SoftRobustParams
    mode: str
    residuals: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.features.matrix @ self.weights

    @property
    def estimated_return(self) -> float:
        return float(self.mdp.initial_dist @ self.values)

    def decision(self, state: int) -> np.ndarray:
        if state not in self._cache:
            self._cache[state] = extract_decision(
                self.weights, self.features, self.mdp, self.ensemble, self.params, self.mode, state
            )
        return self._cache[state]

    def policy(self) -> Policy:
        rows = np.array([self.decision(s) for s in range(self.mdp.num_states)])
        kind = "deterministic" if self.mode == SA_RECT else "randomized"
        return Policy(rows, kind)


def projected_update(features_visited: np.ndarray, targets: np.ndarray, ridge: float = 1e-8):
    """``w = (G + ridge I)^{-1} g`` with ``G``, ``g`` the visitation averages.

    Returns ``(w, residual)`` where ``residual`` is the RMS fit error.
    """
    phi = np.asarray(features_visited, dtype=float)
    sigma = np.asarray(targets, dtype=float).ravel()
    if phi.ndim != 2 or phi.shape[0] < 1 or phi.shape[0] != sigma.size:
        raise ArgumentError("need an (M, l) feature matrix with M >= 1 matching the targets")
    M, l = phi.shape
    G = phi.T @ phi / M + ridge * np.eye(l)
    g = phi.T @ sigma / M
    rank = np.linalg.matrix_rank(G)
    if rank < l:
        raise NumericError(f"regression Gram matrix has rank {rank} < {l}; add ridge or visit more states")
    w = np.linalg.solve(G, g)
    residual = float(np.sqrt(np.mean((phi @ w - sigma) ** 2)))
    return w, residual


def extract_decision(w, features: FeatureMap, mdp, ensemble, params, mode: str, state: int, arrays=None):
    """Robust Bellman decision rule at ``state`` for ``v = Phi w``."""
    return _backup(np.asarray(w) @ features.matrix.T, mdp, ensemble, params, mode, state, arrays).decision


def _backup(v, mdp, ensemble, params, mode, state, arrays=None) -> BellmanResult:
    return bellman_state(v, mdp, ensemble, params, state, mode, arrays)


def _pick(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF draw: the count of entries ``<= u * total``, capped at the last index."""
    idx = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)


def _simulate(config: SrviConfig, k: int, p0_cdf, mean_cdf, decision) -> np.ndarray:
    """Visited states of iteration ``k``; episodes run side by side, each on its own stream."""
    E, L = config.episodes_per_iter, config.episode_length
    u = np.stack([stream(config.seed, 0x5F, k, e).random(2 * L + 1) for e in range(E)])
    s = _pick(np.broadcast_to(p0_cdf, (E, p0_cdf.size)), u[:, 0])
    visited = np.empty((E, L), dtype=np.int64)
    for t in range(L):
        visited[:, t] = s
        table = {int(x): decision(int(x)) for x in np.unique(s)}
        d = np.array([table[int(x)] for x in s])
        a = _pick(np.cumsum(d, axis=1), u[:, 1 + 2 * t])
        s = _pick(mean_cdf[s, a], u[:, 2 + 2 * t])
    return visited.ravel()


def srvi_solve(
    mdp: TabularMdp,
    ensemble: ModelEnsemble,
    params: SoftRobustParams,
    features: FeatureMap,
    config: SrviConfig = SrviConfig(),
    mode: str = S_RECT,
) -> SrviSolution:
    if mode not in MODES:
        raise ArgumentError(f"unknown rectangularity mode {mode!r}")
    S = mdp.num_states
    if features.num_states != S:
        raise ArgumentError("feature map and MDP disagree on the number of states")
    arrays = EnsembleArrays(mdp, ensemble)
    mean_cdf = np.cumsum(ensemble.mean_model().probs, axis=2)
    p0_cdf = np.cumsum(mdp.initial_dist)
    phi_all = features.matrix
    w = np.zeros(features.dimension)
    residuals = []
    res = np.inf
    for k in range(config.max_iters):
        v = phi_all @ w
        memo: dict[int, BellmanResult] = {}

        def backup(s):
            if s not in memo:
                memo[s] = _backup(v, mdp, ensemble, params, mode, s, arrays)
            return memo[s]

        if config.sweep_states:
            visited = np.arange(S)
        else:
            visited = _simulate(config, k, p0_cdf, mean_cdf, lambda s: backup(s).decision)
        targets = np.array([backup(int(s)).value for s in visited])
        phi_k = phi_all[visited]
        w_new, _ = projected_update(phi_k, targets, config.ridge)
        res = float(np.max(np.abs(phi_k @ (w_new - w))))
        residuals.append(res)
        w = w_new
        if res <= config.tol:
            return SrviSolution(w, k + 1, res, True, features, mdp, ensemble, params, mode, residuals)
    return SrviSolution(w, config.max_iters, res, False, features, mdp, ensemble, params, mode, residuals)
