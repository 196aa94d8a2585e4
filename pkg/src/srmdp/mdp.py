"""Tabular MDPs: containers, exact policy evaluation and plain value iteration.

Transition tensors are dense ``(S, A, S)`` arrays indexed ``[s, a, s']``.
Rewards share the same layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .errors import ArgumentError, ConvergenceError, NumericError

ROW_TOL = 1e-10
RENORMALIZE_TOL = 1e-8


@dataclass(frozen=True)
class TabularMdp:
    """The known part of the problem: rewards, discount and start distribution."""

    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray
    r_max: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        reward = np.asarray(self.reward, dtype=float)
        if reward.ndim != 3 or reward.shape[0] != reward.shape[2]:
            raise ArgumentError(f"reward must have shape (S, A, S), got {reward.shape}")
        if not np.all(np.isfinite(reward)):
            raise ArgumentError("reward contains non-finite entries")
        if not 0.0 < self.discount < 1.0:
            raise ArgumentError(f"discount must lie in (0, 1), got {self.discount}")
        p0 = np.asarray(self.initial_dist, dtype=float)
        if p0.shape != (reward.shape[0],):
            raise ArgumentError(f"initial_dist must have length {reward.shape[0]}")
        if np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-12:
            raise ArgumentError("initial_dist must be a probability vector")
        bound = float(np.max(np.abs(reward))) if reward.size else 0.0
        r_max = bound if self.r_max is None else float(self.r_max)
        if r_max < bound:
            raise ArgumentError(f"r_max={r_max} is below max|r|={bound}")
        reward.flags.writeable = False
        p0.flags.writeable = False
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "r_max", r_max)

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def value_bound(self) -> float:
        return self.r_max / (1.0 - self.discount)


def check_stochastic(probs: np.ndarray, what: str = "transition row") -> np.ndarray:
    """Validate the last axis of ``probs`` as probability vectors.

    Rows within ``ROW_TOL`` of summing to one pass untouched, rows drifting by
    at most ``RENORMALIZE_TOL`` are renormalized, anything else is a data error
    that names the first offending row.
    """
    probs = np.array(probs, dtype=float)
    if np.any(~np.isfinite(probs)) or np.any(probs < 0):
        bad = np.argwhere(~np.isfinite(probs) | (probs < 0))[0][:-1]
        raise ArgumentError(f"{what} {tuple(int(i) for i in bad)} has negative or non-finite entries")
    sums = probs.sum(axis=-1)
    drift = np.abs(sums - 1.0)
    if np.any(drift > RENORMALIZE_TOL):
        bad = tuple(int(i) for i in np.argwhere(drift > RENORMALIZE_TOL)[0])
        raise ArgumentError(f"{what} {bad} sums to {float(sums[bad]):.12g}")
    if np.any(drift > ROW_TOL):
        probs /= probs.sum(axis=-1, keepdims=True)
    return probs


@dataclass(frozen=True)
class TransitionModel:
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs)
        if probs.ndim != 3 or probs.shape[0] != probs.shape[2]:
            raise ArgumentError(f"transition tensor must have shape (S, A, S), got {probs.shape}")
        probs = check_stochastic(probs, "(s, a) row")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class ModelEnsemble:
    """Finite posterior approximation: sampled models with probability weights."""

    models: tuple
    weights: np.ndarray

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ArgumentError("an ensemble needs at least one model")
        shape = models[0].probs.shape
        if any(m.probs.shape != shape for m in models):
            raise ArgumentError("ensemble models must share (S, A)")
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (len(models),):
            raise ArgumentError("one weight per model is required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ArgumentError("ensemble weights must be a probability vector")
        weights.flags.writeable = False
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, models: Sequence[TransitionModel]) -> "ModelEnsemble":
        n = len(models)
        return cls(tuple(models), np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return len(self.models)

    @property
    def tensor(self) -> np.ndarray:
        """Stacked transitions, shape ``(N, S, A, S)``."""
        return np.stack([m.probs for m in self.models])

    def mean_model(self, weights: np.ndarray | None = None) -> TransitionModel:
        w = self.weights if weights is None else np.asarray(weights, dtype=float)
        return TransitionModel(np.tensordot(w, self.tensor, axes=1))


@dataclass(frozen=True)
class Policy:
    """Stationary policy stored as an ``(S, A)`` row-stochastic matrix.

    ``kind`` records whether it was built from one action per state; the
    matrix is always available so evaluation code has one path.
    """

    action_probs: np.ndarray
    kind: str = "randomized"

    def __post_init__(self):
        probs = np.array(self.action_probs, dtype=float)
        if probs.ndim != 2:
            raise ArgumentError("policy matrix must be (S, A)")
        if self.kind not in ("deterministic", "randomized"):
            raise ArgumentError(f"unknown policy kind {self.kind!r}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-12):
            raise ArgumentError("policy rows must be probability vectors")
        probs.flags.writeable = False
        object.__setattr__(self, "action_probs", probs)

    @classmethod
    def deterministic(cls, actions: Sequence[int], num_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        if actions.ndim != 1 or np.any(actions < 0) or np.any(actions >= num_actions):
            raise ArgumentError(f"deterministic actions must lie in [0, {num_actions})")
        probs = np.zeros((actions.size, num_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs, "deterministic")

    @classmethod
    def randomized(cls, action_probs: np.ndarray) -> "Policy":
        return cls(action_probs, "randomized")

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions), "randomized")

    @property
    def det_actions(self) -> np.ndarray:
        if self.kind != "deterministic":
            raise ArgumentError("randomized policy has no action vector")
        return np.argmax(self.action_probs, axis=1)

    @property
    def num_states(self) -> int:
        return self.action_probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.action_probs.shape[1]


def _check_dims(mdp: TabularMdp, model: TransitionModel, policy: Policy | None = None):
    if model.probs.shape != mdp.reward.shape:
        raise ArgumentError(f"model shape {model.probs.shape} does not match MDP {mdp.reward.shape}")
    if policy is not None and policy.action_probs.shape != mdp.reward.shape[:2]:
        raise ArgumentError(
            f"policy shape {policy.action_probs.shape} does not match (S, A)={mdp.reward.shape[:2]}"
        )


def expected_rewards(mdp: TabularMdp, probs: np.ndarray) -> np.ndarray:
    """One-step expected reward ``r(s, a) = sum_s' P(s, a, s') r(s, a, s')``.

    ``probs`` may carry leading batch axes.
    """
    return np.sum(probs * mdp.reward, axis=-1)


def policy_matrices(mdp: TabularMdp, model: TransitionModel, policy: Policy):
    """Return ``(P_pi, r_pi)`` induced by a policy."""
    pi = policy.action_probs
    p_pi = np.einsum("sa,sat->st", pi, model.probs)
    r_pi = np.einsum("sa,sa->s", pi, expected_rewards(mdp, model.probs))
    return p_pi, r_pi


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        lu = scipy.linalg.lu_factor(matrix, check_finite=False)
        x = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"linear solve failed: {exc}") from exc
    residual = float(np.max(np.abs(matrix @ x - rhs))) if x.size else 0.0
    if not np.all(np.isfinite(x)) or residual > 1e-8 * max(1.0, float(np.max(np.abs(rhs)))):
        raise NumericError(f"linear solve residual {residual:.3e} too large")
    return x


def evaluate_policy(mdp: TabularMdp, model: TransitionModel, policy: Policy) -> np.ndarray:
    """Exact value function of ``policy``: solves ``(I - gamma P_pi) v = r_pi``."""
    _check_dims(mdp, model, policy)
    p_pi, r_pi = policy_matrices(mdp, model, policy)
    return _solve(np.eye(mdp.num_states) - mdp.discount * p_pi, r_pi)


def expected_return(mdp: TabularMdp, model: TransitionModel, policy: Policy) -> float:
    return float(mdp.initial_dist @ evaluate_policy(mdp, model, policy))


def occupancy_frequency(mdp: TabularMdp, model: TransitionModel, policy: Policy) -> np.ndarray:
    """Discounted state occupancy ``h = (I - gamma P_pi^T)^{-1} p0``."""
    _check_dims(mdp, model, policy)
    p_pi, _ = policy_matrices(mdp, model, policy)
    h = _solve(np.eye(mdp.num_states) - mdp.discount * p_pi.T, mdp.initial_dist)
    return np.maximum(h, 0.0)


def batch_returns(mdp: TabularMdp, tensor: np.ndarray, action_probs: np.ndarray) -> np.ndarray:
    """Returns for every (model, policy) pair.

    ``tensor`` is ``(N, S, A, S)`` and ``action_probs`` is ``(K, S, A)``,
    or an integer ``(K, S)`` array of deterministic actions; the result has
    shape ``(K, N)``.  Used by the exhaustive oracles, so it solves the
    systems in one batched call.
    """
    S = mdp.num_states
    r_sa = expected_rewards(mdp, tensor)  # (N, S, A)
    action_probs = np.asarray(action_probs)
    if action_probs.ndim == 2 and np.issubdtype(action_probs.dtype, np.integer):
        states = np.arange(S)[None, :]
        p_pi = np.moveaxis(tensor[:, states, action_probs], 0, 1)  # (K, N, S, S)
        r_pi = np.moveaxis(r_sa[:, states, action_probs], 0, 1)  # (K, N, S)
    else:
        p_pi = np.einsum("ksa,nsat->knst", action_probs, tensor)
        r_pi = np.einsum("ksa,nsa->kns", action_probs, r_sa)
    system = np.eye(S) - mdp.discount * p_pi
    v = np.linalg.solve(system, r_pi[..., None])[..., 0]
    return v @ mdp.initial_dist


def return_distribution(mdp: TabularMdp, ensemble: ModelEnsemble, policy: Policy) -> np.ndarray:
    """Return of ``policy`` under every ensemble member, in ensemble order."""
    return np.array([expected_return(mdp, m, policy) for m in ensemble.models])


class ValueIterationResult(NamedTuple):
    values: np.ndarray
    policy: Policy
    iterations: int
    residuals: list


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Row argmax with lowest-index tie-breaking (``np.argmax`` semantics)."""
    return np.argmax(q, axis=-1)


def q_values(mdp: TabularMdp, probs: np.ndarray, v: np.ndarray) -> np.ndarray:
    return expected_rewards(mdp, probs) + mdp.discount * probs @ v


def value_iteration(
    mdp: TabularMdp,
    model: TransitionModel,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    v0: np.ndarray | None = None,
) -> ValueIterationResult:
    """Bellman optimality iteration with an infinity-norm stopping rule."""
    if tol <= 0:
        raise ArgumentError("tol must be positive")
    _check_dims(mdp, model)
    v = np.zeros(mdp.num_states) if v0 is None else np.array(v0, dtype=float)
    residuals = []
    for it in range(1, max_iter + 1):
        v_new = q_values(mdp, model.probs, v).max(axis=1)
        res = float(np.max(np.abs(v_new - v)))
        residuals.append(res)
        v = v_new
        if res <= tol:
            actions = greedy_actions(q_values(mdp, model.probs, v))
            return ValueIterationResult(v, Policy.deterministic(actions, mdp.num_actions), it, residuals)
    raise ConvergenceError("value iteration did not converge", residuals[-1], max_iter)


def mean_model_solve(
    mdp: TabularMdp, ensemble: ModelEnsemble, tol: float = 1e-8, max_iter: int = 100_000
) -> ValueIterationResult:
    """Value iteration on the weight-averaged transition tensor."""
    return value_iteration(mdp, ensemble.mean_model(), tol, max_iter)
