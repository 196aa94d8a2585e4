"""Soft-robust Bellman operators over rectangularized ambiguity sets.

The ambiguity sets are never materialized: a state's adversary picks a
mixture weight ``xi`` from the box ``Xi`` (see :mod:`srmdp.risk`) and mixes
the ensemble's transition rows.  In ``s_rect`` mode one ``xi`` is shared by
all actions of a state and the agent may randomize; in ``sa_rect`` mode each
action gets its own ``xi`` and a deterministic choice is optimal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError, ConvergenceError, NumericError
from .lp import LinearProgram, solve
from .mdp import ModelEnsemble, Policy, TabularMdp, expected_rewards
from .risk import SoftRobustParams, soft_robust_rows, xi_box, xi_minimize

S_RECT = "s_rect"
SA_RECT = "sa_rect"
MODES = (S_RECT, SA_RECT)
DECISION_CLAMP = 1e-10


@dataclass(frozen=True)
class BellmanResult:
    value: float
    decision: np.ndarray  # distribution over actions
    adversarial_xi: np.ndarray | None = None


class EnsembleArrays:
    """Precomputed ensemble tensors shared by the operators below."""

    def __init__(self, mdp: TabularMdp, ensemble: ModelEnsemble):
        if ensemble.models[0].probs.shape != mdp.reward.shape:
            raise ArgumentError("ensemble and MDP dimensions differ")
        self.mdp = mdp
        self.weights = ensemble.weights
        self.tensor = ensemble.tensor  # (N, S, A, S)
        self.r_sa = expected_rewards(mdp, self.tensor)  # (N, S, A)

    def q(self, v: np.ndarray, state: int | None = None) -> np.ndarray:
        """``q[w, (s,) a] = P_w(s, a)^T (r(s, a) + gamma v)``."""
        if state is None:
            return self.r_sa + self.mdp.discount * self.tensor @ v
        return self.r_sa[:, state] + self.mdp.discount * self.tensor[:, state] @ v


def _arrays(mdp, ensemble, arrays):
    return arrays if arrays is not None else EnsembleArrays(mdp, ensemble)


def srect_lp(q: np.ndarray, f: np.ndarray, params: SoftRobustParams) -> LinearProgram:
    """Decision LP for one state given ``q`` of shape ``(N, A)``.

    Variables ``[d (A), b, y (N)]``; one inequality per model and the
    simplex equality on ``d``.  With ``alpha = 1`` the CVaR part degenerates
    to ``b <= d @ q_w`` for every supported model and ``y`` is fixed at 0.
    """
    n, a = q.shape
    lam, alpha = params.lam, params.alpha
    c = np.zeros(a + 1 + n)
    c[:a] = (1.0 - lam) * (f @ q)
    c[a] = lam
    ub = np.zeros((n, a + 1 + n))
    ub[:, :a] = -q
    ub[:, a] = 1.0
    lower = np.zeros(a + 1 + n)
    upper = np.full(a + 1 + n, np.inf)
    lower[a] = -np.inf
    if alpha < 1.0:
        c[a + 1 :] = -lam / (1.0 - alpha) * f
        ub[:, a + 1 :] = -np.eye(n)
    else:
        upper[a + 1 :] = 0.0
        ub[f <= 0, a] = 0.0
    eq = np.zeros((1, a + 1 + n))
    eq[0, :a] = 1.0
    return LinearProgram(c, eq, [1.0], ub, np.zeros(n), lower, upper)


def _clean_decision(d: np.ndarray) -> np.ndarray:
    d = np.where(d < DECISION_CLAMP, 0.0, d)
    return d / d.sum()


def srect_from_q(q: np.ndarray, f: np.ndarray, params: SoftRobustParams, lp_method: str = "simplex") -> BellmanResult:
    lp = srect_lp(q, f, params)
    sol = solve(lp, method=lp_method)
    if not sol.optimal:
        raise NumericError(f"S-rectangular Bellman LP {sol.status}:\n{lp.describe()}")
    a = q.shape[1]
    d = _clean_decision(sol.x[:a])
    xi = None
    if params.alpha < 1.0:
        _, xi = xi_minimize(q @ d, xi_box(f, params))
    return BellmanResult(sol.objective_value, d, xi)


def srect_bellman_state(
    v: np.ndarray,
    mdp: TabularMdp,
    ensemble: ModelEnsemble,
    params: SoftRobustParams,
    state: int,
    arrays: EnsembleArrays | None = None,
    lp_method: str = "simplex",
) -> BellmanResult:
    """S-rectangular soft-robust backup at ``state``, solved as an LP."""
    arr = _arrays(mdp, ensemble, arrays)
    return srect_from_q(arr.q(v, state), arr.weights, params, lp_method)


def sarect_from_q(q: np.ndarray, f: np.ndarray, params: SoftRobustParams) -> BellmanResult:
    per_action = soft_robust_rows(q.T, f, params)
    a = int(np.argmax(per_action))
    d = np.zeros(q.shape[1])
    d[a] = 1.0
    xi = None
    if params.alpha < 1.0:
        _, xi = xi_minimize(q[:, a], xi_box(f, params))
    return BellmanResult(float(per_action[a]), d, xi)


def sarect_bellman_state(
    v: np.ndarray,
    mdp: TabularMdp,
    ensemble: ModelEnsemble,
    params: SoftRobustParams,
    state: int,
    arrays: EnsembleArrays | None = None,
) -> BellmanResult:
    """SA-rectangular backup: soft-robust value per action, then the best action."""
    arr = _arrays(mdp, ensemble, arrays)
    return sarect_from_q(arr.q(v, state), arr.weights, params)


def bellman_state(v, mdp, ensemble, params, state, mode, arrays=None, lp_method="simplex") -> BellmanResult:
    if mode == S_RECT:
        return srect_bellman_state(v, mdp, ensemble, params, state, arrays, lp_method)
    if mode == SA_RECT:
        return sarect_bellman_state(v, mdp, ensemble, params, state, arrays)
    raise ArgumentError(f"unknown rectangularity mode {mode!r}")


def bellman_operator(v, mdp, ensemble, params, mode, arrays=None, lp_method="simplex"):
    """Synchronous sweep over all states; returns ``(values, decisions)``."""
    arr = _arrays(mdp, ensemble, arrays)
    if mode == SA_RECT:
        q = arr.q(v)  # (N, S, A)
        per = soft_robust_rows(np.moveaxis(q, 0, -1), arr.weights, params)  # (S, A)
        actions = np.argmax(per, axis=1)
        decisions = np.zeros_like(per)
        decisions[np.arange(per.shape[0]), actions] = 1.0
        return per[np.arange(per.shape[0]), actions], decisions
    if mode != S_RECT:
        raise ArgumentError(f"unknown rectangularity mode {mode!r}")
    S, A = mdp.num_states, mdp.num_actions
    values = np.empty(S)
    decisions = np.empty((S, A))
    for s in range(S):
        res = srect_bellman_state(v, mdp, None, params, s, arr, lp_method)
        values[s], decisions[s] = res.value, res.decision
    return values, decisions


class RobustVIResult(NamedTuple):
    values: np.ndarray
    policy: Policy
    iterations: int
    residuals: list


def robust_value_iteration(
    mdp: TabularMdp,
    ensemble: ModelEnsemble,
    params: SoftRobustParams,
    mode: str = S_RECT,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    v0: np.ndarray | None = None,
    lp_method: str = "simplex",
) -> RobustVIResult:
    if tol <= 0:
        raise ArgumentError("tol must be positive")
    arr = EnsembleArrays(mdp, ensemble)
    v = np.zeros(mdp.num_states) if v0 is None else np.array(v0, dtype=float)
    residuals = []
    for it in range(1, max_iter + 1):
        v_new, decisions = bellman_operator(v, mdp, ensemble, params, mode, arr, lp_method)
        res = float(np.max(np.abs(v_new - v)))
        residuals.append(res)
        v = v_new
        if res <= tol:
            kind = "deterministic" if mode == SA_RECT else "randomized"
            return RobustVIResult(v, Policy(decisions, kind), it, residuals)
    raise ConvergenceError("robust value iteration did not converge", residuals[-1], max_iter)


def robust_policy_evaluation(
    mdp: TabularMdp,
    ensemble: ModelEnsemble,
    params: SoftRobustParams,
    policy: Policy,
    tol: float = 1e-8,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Fixed point of ``v(s) = min_xi sum_w xi_w q_w(s)`` for a fixed policy."""
    if policy.action_probs.shape != mdp.reward.shape[:2]:
        raise ArgumentError("policy shape does not match the MDP")
    arr = EnsembleArrays(mdp, ensemble)
    pi = policy.action_probs
    r_pi = np.einsum("sa,nsa->ns", pi, arr.r_sa)  # (N, S)
    p_pi = np.einsum("sa,nsat->nst", pi, arr.tensor)  # (N, S, S)
    v = np.zeros(mdp.num_states)
    res = np.inf
    for it in range(1, max_iter + 1):
        q = r_pi + mdp.discount * p_pi @ v  # (N, S)
        v_new = soft_robust_rows(q.T, arr.weights, params)
        res = float(np.max(np.abs(v_new - v)))
        v = v_new
        if res <= tol:
            return v
    raise ConvergenceError("robust policy evaluation did not converge", res, max_iter)


def rho_R(mdp: TabularMdp, ensemble: ModelEnsemble, params: SoftRobustParams, policy: Policy) -> float:
    """S-rectangular soft-robust return of a fixed policy."""
    return float(mdp.initial_dist @ robust_policy_evaluation(mdp, ensemble, params, policy))
