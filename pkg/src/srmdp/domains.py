"""Benchmark environments: riverswim, inventory and random Dirichlet MDPs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, pdtrc

from .errors import ArgumentError
from .mdp import Policy, TabularMdp, TransitionModel, check_stochastic
from .posterior import TransitionBatch, stream


@dataclass(frozen=True)
class RiverswimSpec:
    num_states: int = 20
    goal_reward: float = 100.0
    step_reward: float = 5.0
    gamma: float = 0.95
    p_advance: float = 0.2
    p_back: float = 0.5
    p_stay: float = 0.3
    goal_on_stay: bool = True  # pay the goal reward for staying in the last state too

    def __post_init__(self):
        if abs(self.p_advance + self.p_back + self.p_stay - 1.0) > 1e-12:
            raise ArgumentError("upstream probabilities must sum to 1")
        if self.num_states < 2:
            raise ArgumentError("riverswim needs at least two states")


def riverswim(spec: RiverswimSpec | None = None) -> tuple[TabularMdp, TransitionModel]:
    """Chain MDP; action 0 drifts downstream, action 1 swims upstream."""
    spec = spec or RiverswimSpec()
    S = spec.num_states
    goal = S - 1
    probs = np.zeros((S, 2, S))
    for s in range(S):
        down, up = max(s - 1, 0), min(s + 1, goal)
        probs[s, 0, down] = 1.0
        # out-of-range moves fold into staying put
        probs[s, 1, up] += spec.p_advance
        probs[s, 1, down] += spec.p_back
        probs[s, 1, s] += spec.p_stay
    reward = np.zeros((S, 2, S))
    reward[:, :, goal] += spec.goal_reward
    if not spec.goal_on_stay:
        reward[goal, :, goal] -= spec.goal_reward
    for s in range(S - 1):
        reward[s, :, s + 1] += spec.step_reward
    mdp = TabularMdp(reward, spec.gamma, np.full(S, 1.0 / S))
    return mdp, TransitionModel(probs)


@dataclass(frozen=True)
class InventorySpec:
    capacity: int = 50
    max_order: int = 40
    demand_max: int = 50
    variable_cost: float = 2.49
    purchase_price: float = 3.99
    holding_cost: float = 0.1
    backlog_cost: float = 0.15  # kept for completeness; backlogging is disabled
    sale_price: float = 4.99
    gamma: float = 0.99

    def __post_init__(self):
        if not self.capacity >= self.max_order >= 0:
            raise ArgumentError("need capacity >= max_order >= 0")
        if self.demand_max < 0:
            raise ArgumentError("demand_max must be non-negative")

    @property
    def unit_cost(self) -> float:
        return self.purchase_price + self.variable_cost

    @property
    def r_max(self) -> float:
        """Closed-form bound on |reward|."""
        gain = self.sale_price * min(self.capacity, self.demand_max)
        loss = self.unit_cost * self.max_order + self.holding_cost * self.capacity
        return max(gain, loss)


def demand_pmf(spec: InventorySpec, rate: float) -> np.ndarray:
    """Poisson pmf on ``0..demand_max`` with the upper tail folded into the last entry."""
    if not rate > 0:
        raise ArgumentError("demand rate must be positive")
    k = np.arange(spec.demand_max + 1)
    pmf = np.exp(k * np.log(rate) - rate - gammaln(k + 1))
    if spec.demand_max > 0:
        pmf[-1] = pdtrc(spec.demand_max - 1, rate)  # P(D >= demand_max)
    else:
        pmf[-1] = 1.0
    return pmf / pmf.sum()


def _inventory_layout(spec: InventorySpec):
    S, A = spec.capacity + 1, spec.max_order + 1
    stock = np.arange(S)[:, None]
    order = np.minimum(np.arange(A)[None, :], spec.capacity - stock)
    return S, A, order, stock + order


def inventory_transitions(spec: InventorySpec, rate: float) -> np.ndarray:
    S, A, _, level = _inventory_layout(spec)
    pmf = demand_pmf(spec, rate)
    tail = np.cumsum(pmf[::-1])[::-1]  # tail[k] = P(D >= k)
    probs = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            L = level[s, a]
            # next stock k >= 1 needs demand L - k; stock 0 absorbs every demand >= L
            ks = np.arange(1, L + 1)
            d = L - ks
            ok = d <= spec.demand_max
            probs[s, a, ks[ok]] = pmf[d[ok]]
            probs[s, a, 0] = tail[L] if L <= spec.demand_max else 0.0
    return check_stochastic(probs, "inventory row")


def inventory_rewards(spec: InventorySpec) -> np.ndarray:
    S, A, order, level = _inventory_layout(spec)
    nxt = np.arange(S)[None, None, :]
    sold = np.maximum(level[:, :, None] - nxt, 0)
    return spec.sale_price * sold - spec.unit_cost * order[:, :, None] - spec.holding_cost * nxt


def inventory(spec: InventorySpec | None = None, demand_rate: float = 10.0) -> tuple[TabularMdp, TransitionModel]:
    """Single-product inventory with lost sales, uniform start distribution."""
    spec = spec or InventorySpec()
    probs = inventory_transitions(spec, demand_rate)
    S = probs.shape[0]
    mdp = TabularMdp(inventory_rewards(spec), spec.gamma, np.full(S, 1.0 / S))
    return mdp, TransitionModel(probs)


def random_dirichlet_mdp(
    num_states: int, num_actions: int, seed: int, discount: float = 0.9
) -> tuple[TabularMdp, TransitionModel]:
    """Rows from the flat Dirichlet, rewards uniform on [0, 1], uniform start."""
    if num_states < 1 or num_actions < 1:
        raise ArgumentError("state and action counts must be positive")
    rng = stream(seed, 0xD1)
    probs = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    reward = rng.uniform(0.0, 1.0, size=(num_states, num_actions, num_states))
    mdp = TabularMdp(reward, discount, np.full(num_states, 1.0 / num_states))
    return mdp, TransitionModel(check_stochastic(probs))


def generate_batch(
    model: TransitionModel,
    behavior: Policy,
    n_samples: int,
    p0: np.ndarray,
    seed: int,
    episode_length: int | None = None,
) -> TransitionBatch:
    """Roll out one trajectory of ``n_samples`` transitions under ``behavior``.

    With ``episode_length`` the trajectory restarts from ``p0`` every that
    many steps; otherwise it is a single episode.
    """
    if n_samples < 1:
        raise ArgumentError("n_samples must be at least 1")
    S, A = model.num_states, model.num_actions
    if behavior.action_probs.shape != (S, A):
        raise ArgumentError("behavior policy does not match the model")
    rng = stream(seed, 0xBA)
    u = rng.random((n_samples, 3))
    cdf_p0 = np.cumsum(p0)
    cdf_pi = np.cumsum(behavior.action_probs, axis=1)
    cdf_p = np.cumsum(model.probs, axis=2)

    def draw(cdf, x):
        return min(int(np.searchsorted(cdf, x * cdf[-1], side="right")), cdf.size - 1)

    out = np.empty((n_samples, 3), dtype=np.int64)
    s = draw(cdf_p0, u[0, 0])
    for t in range(n_samples):
        if episode_length and t and t % episode_length == 0:
            s = draw(cdf_p0, u[t, 0])
        a = draw(cdf_pi[s], u[t, 1])
        sp = draw(cdf_p[s, a], u[t, 2])
        out[t] = s, a, sp
        s = sp
    return TransitionBatch(out, S, A)


def generate_demands(rate: float, n: int, seed: int) -> np.ndarray:
    if not rate > 0 or n < 0:
        raise ArgumentError("need a positive rate and non-negative count")
    return stream(seed, 0xDE).poisson(rate, size=n)
