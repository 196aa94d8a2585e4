"""Static-vs-dynamic and rectangularization error bounds, checked numerically.

Every check returns lhs, rhs and the slack ``rhs - lhs``; grid-oracle error
estimates are added to the right-hand side explicitly so a pass never hides
an approximation.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ArgumentError
from .mdp import ModelEnsemble, Policy, TabularMdp, TransitionModel, evaluate_policy, occupancy_frequency
from .milp import brute_force_deterministic
from .posterior import stream
from .risk import SoftRobustParams, rho_D_grid, rho_S, soft_robust_rows
from .robust import EnsembleArrays, S_RECT, robust_value_iteration


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    grid_error: float = 0.0
    note: str = ""

    def __post_init__(self):
        for name in ("lhs", "rhs", "grid_error"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def slack(self) -> float:
        return self.rhs + self.grid_error - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.slack >= 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(slack=self.slack, passed=self.passed)
        return d


@dataclass
class BoundReport:
    epsilon1: float
    epsilon2: float = float("nan")
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "epsilon1": self.epsilon1,
            "epsilon2": self.epsilon2,
            "checks": {k: c.to_dict() for k, c in self.checks.items()},
            "notes": list(self.notes),
            "passed": self.passed,
        }


def _occupancies(mdp: TabularMdp, models, policy: Policy) -> np.ndarray:
    return np.array([occupancy_frequency(mdp, m, policy) for m in models])


def _max_pairwise_l1(h: np.ndarray) -> float:
    if len(h) < 2:
        return 0.0
    return float(max(np.abs(h[i] - h[j]).sum() for i, j in itertools.combinations(range(len(h)), 2)))


def epsilon1(mdp: TabularMdp, ensemble: ModelEnsemble, policy: Policy) -> float:
    """Largest L1 distance between occupancy frequencies of two ensemble members."""
    return _max_pairwise_l1(_occupancies(mdp, ensemble.models, policy))


def deterministic_policies(num_states: int, num_actions: int):
    for actions in itertools.product(range(num_actions), repeat=num_states):
        yield Policy.deterministic(actions, num_actions)


def epsilon1_max(mdp: TabularMdp, ensemble: ModelEnsemble, n_random: int = 100, seed: int = 0) -> float:
    """``max_pi epsilon1(pi)`` over deterministic policies plus random randomized ones.

    A lower approximation of the maximum over all randomized policies.
    """
    S, A = mdp.num_states, mdp.num_actions
    best = max(epsilon1(mdp, ensemble, pi) for pi in deterministic_policies(S, A))
    rng = stream(seed, 0xE1)
    for _ in range(n_random):
        pi = Policy.randomized(rng.dirichlet(np.ones(A), size=S))
        best = max(best, epsilon1(mdp, ensemble, pi))
    return best


def epsilon2(mdp: TabularMdp, ensemble: ModelEnsemble, params: SoftRobustParams, v_star_D: np.ndarray) -> float:
    """``max_{s,a} min_xi sum_w xi_w P_w(s,a)^T (r(s,a) + gamma v) - v(s)``."""
    v = np.asarray(v_star_D, dtype=float)
    if v.shape != (mdp.num_states,):
        raise ArgumentError("value function length must equal the number of states")
    arr = EnsembleArrays(mdp, ensemble)
    q = arr.q(v)  # (N, S, A)
    worst = soft_robust_rows(np.moveaxis(q, 0, -1), arr.weights, params)  # (S, A)
    return float(np.max(worst - v[:, None]))


@dataclass(frozen=True)
class DynamicOptimum:
    policy: Policy
    value: float
    error: float
    xi: np.ndarray
    values: np.ndarray  # v*_D: the policy's value under its worst mixture


def dynamic_optimum(mdp: TabularMdp, ensemble: ModelEnsemble, params: SoftRobustParams, grid_resolution: int = 40):
    """Maximize the grid-estimated dynamic objective over deterministic policies."""
    best = None
    for pi in deterministic_policies(mdp.num_states, mdp.num_actions):
        est = rho_D_grid(mdp, ensemble, pi, params, grid_resolution)
        if best is None or est.value > best[1].value:
            best = (pi, est)
    pi, est = best
    mixed = TransitionModel(np.tensordot(est.xi, ensemble.tensor, axes=1))
    return DynamicOptimum(pi, est.value, est.error, est.xi, evaluate_policy(mdp, mixed, pi))


def check_theorem2(
    mdp: TabularMdp, ensemble: ModelEnsemble, policy: Policy, params: SoftRobustParams, grid_resolution: int = 40
) -> BoundCheck:
    """``|rho_D - rho_S| <= gamma r_max eps1 / (1 - gamma)``."""
    if len(ensemble) > 3:
        raise ArgumentError("the dynamic-objective grid check is limited to N <= 3")
    est = rho_D_grid(mdp, ensemble, policy, params, grid_resolution)
    lhs = abs(est.value - rho_S(mdp, ensemble, policy, params))
    g = mdp.discount
    rhs = g * mdp.r_max * epsilon1(mdp, ensemble, policy) / (1.0 - g)
    return BoundCheck(lhs, rhs, est.error)


def check_corollary1(
    mdp: TabularMdp,
    ensemble: ModelEnsemble,
    params: SoftRobustParams,
    grid_resolution: int = 40,
    n_random: int = 100,
    seed: int = 0,
) -> BoundReport:
    """``rho_S(pi_S) - rho_S(pi_R) <= (2 gamma eps1 r_max + eps2) / (1 - gamma)``.

    ``pi_S`` is the best deterministic policy (a certified lower witness for
    the randomized optimum, so the checked lhs never exceeds the true one);
    eps1 is maximized over deterministic and sampled randomized policies.
    """
    if len(ensemble) > 3:
        raise ArgumentError("the dynamic-objective grid check is limited to N <= 3")
    g = mdp.discount
    witness = brute_force_deterministic(mdp, ensemble, params)
    pi_R = robust_value_iteration(mdp, ensemble, params, S_RECT, tol=1e-10).policy
    lhs = witness.objective - rho_S(mdp, ensemble, pi_R, params)
    eps1 = epsilon1_max(mdp, ensemble, n_random, seed)
    dyn = dynamic_optimum(mdp, ensemble, params, grid_resolution)
    eps2 = epsilon2(mdp, ensemble, params, dyn.values)
    rhs = (2.0 * g * eps1 * mdp.r_max + eps2) / (1.0 - g)
    report = BoundReport(eps1, eps2)
    report.checks["corollary1"] = BoundCheck(lhs, rhs, dyn.error, "deterministic witness; eps1 over Pi_D + random")
    report.notes.append(f"eps1 maximized over {mdp.num_actions ** mdp.num_states} deterministic and {n_random} random policies")
    return report


def occupancy_convexity_gap(mdp: TabularMdp, models, beta, policy: Policy) -> float:
    """L1 distance between the occupancy of the mixed model and the mixture of occupancies."""
    models = list(models)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (len(models),) or np.any(beta < 0) or abs(beta.sum() - 1.0) > 1e-12:
        raise ArgumentError("beta must be a probability vector over the models")
    h = _occupancies(mdp, models, policy)
    mixed = TransitionModel(np.tensordot(beta, np.stack([m.probs for m in models]), axes=1))
    return float(np.abs(occupancy_frequency(mdp, mixed, policy) - beta @ h).sum())


def check_lemma5(mdp: TabularMdp, models, beta, policy: Policy) -> BoundCheck:
    g = mdp.discount
    eps1 = _max_pairwise_l1(_occupancies(mdp, list(models), policy))
    return BoundCheck(occupancy_convexity_gap(mdp, models, beta, policy), g * eps1 / (1.0 - g))
