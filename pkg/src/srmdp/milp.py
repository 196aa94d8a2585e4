"""Exact deterministic soft-robust policies.

The mixed-integer program has binary policy variables ``pi(s, a)``,
per-model scaled occupancies ``u(s, a, w) = f_w * h_w(s) * pi(s, a)``, a free
CVaR threshold ``b`` and shortfalls ``y(w) >= 0``::

    max   lam * (b - sum_w y(w) / (1 - alpha)) + (1 - lam) * sum u(s,a,w) R_w(s,a)
    s.t.  y(w) >= f_w b - sum_{s,a} u(s,a,w) R_w(s,a)                 for all w
          sum_a u(s,a,w) - gamma sum_{s',a'} u(s',a',w) P_w(s',a',s)
                = f_w p0(s)                                            for all s, w
          sum_a pi(s,a) = 1                                            for all s
          u(s,a,w) <= f_w pi(s,a) / (1 - gamma)                        for all s, a, w

The last family is the McCormick envelope of ``pi * occupancy``; it is
exact at binary ``pi``.  :func:`solve_branch_and_bound` searches over the
binaries with LP relaxations; :func:`brute_force_deterministic` enumerates
all ``A^S`` policies and serves as the oracle.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, NumericError, UnsupportedError
from .lp import LinearProgram, solve
from .mdp import ModelEnsemble, Policy, TabularMdp, batch_returns, expected_rewards
from .risk import SoftRobustParams, rho_S, soft_robust_rows

FRACTIONAL_TOL = 1e-9
BRUTE_FORCE_LIMIT = 10**6
DENSE_LIMIT = 100_000  # tableau entries above which relaxations go to HiGHS


@dataclass(frozen=True)
class SrMilpModel:
    mdp: TabularMdp
    ensemble: ModelEnsemble
    params: SoftRobustParams
    lp: LinearProgram  # the LP relaxation, pi in [0, 1]
    row_blocks: dict  # family name -> slice into the stacked (eq + ub) rows

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    @property
    def num_actions(self) -> int:
        return self.mdp.num_actions

    @property
    def num_models(self) -> int:
        return len(self.ensemble)

    def pi_index(self, s, a):
        return s * self.num_actions + a

    def u_index(self, s, a, w):
        sa = self.num_states * self.num_actions
        return sa + w * sa + s * self.num_actions + a

    @property
    def b_index(self) -> int:
        sa = self.num_states * self.num_actions
        return sa * (self.num_models + 1)

    def y_index(self, w):
        return self.b_index + 1 + w

    @property
    def num_vars(self) -> int:
        return self.b_index + 1 + self.num_models

    @property
    def num_constraints(self) -> int:
        return self.lp.eq_rhs.size + self.lp.ub_rhs.size

    def lp_method(self) -> str:
        return "simplex" if self.num_vars * self.num_constraints <= DENSE_LIMIT else "highs"

    def describe(self) -> str:
        return self.lp.describe()


def build_model(mdp: TabularMdp, ensemble: ModelEnsemble, params: SoftRobustParams) -> SrMilpModel:
    if params.alpha >= 1.0:
        raise ArgumentError("the MILP needs alpha < 1")
    S, A, N = mdp.num_states, mdp.num_actions, len(ensemble)
    SA = S * A
    f = ensemble.weights
    gamma, lam, alpha = mdp.discount, params.lam, params.alpha
    tensor = ensemble.tensor  # (N, S, A, S)
    R = expected_rewards(mdp, tensor).reshape(N, SA)  # (N, SA)
    n_vars = SA * (N + 1) + 1 + N
    b_idx = SA * (N + 1)
    u0 = SA  # first u column

    c = np.zeros(n_vars)
    c[u0 : u0 + SA * N] = (1.0 - lam) * R.ravel()
    c[b_idx] = lam
    c[b_idx + 1 :] = -lam / (1.0 - alpha)

    # CVaR linking: f_w b - y(w) - sum u R_w <= 0
    cvar = sp.lil_matrix((N, n_vars))
    for w in range(N):
        cvar[w, u0 + w * SA : u0 + (w + 1) * SA] = -R[w]
        cvar[w, b_idx] = f[w]
        cvar[w, b_idx + 1 + w] = -1.0
    # occupancy flow, one block of S rows per model
    sum_a = sp.kron(sp.identity(S), np.ones((1, A)))  # (S, SA)
    flow_blocks = []
    for w in range(N):
        inflow = tensor[w].reshape(SA, S).T  # (S, SA): P_w(s', a', s)
        flow_blocks.append(sum_a - gamma * sp.csr_matrix(inflow))
    flow = sp.hstack(
        [sp.csr_matrix((S * N, SA)), sp.block_diag(flow_blocks), sp.csr_matrix((S * N, 1 + N))]
    )
    flow_rhs = (f[:, None] * mdp.initial_dist[None, :]).ravel()
    simplex = sp.hstack([sum_a, sp.csr_matrix((S, n_vars - SA))])
    # McCormick: u(s,a,w) - f_w pi(s,a) / (1 - gamma) <= 0
    mc_pi = sp.vstack([-f[w] / (1.0 - gamma) * sp.identity(SA) for w in range(N)])
    mccormick = sp.hstack([mc_pi, sp.identity(SA * N), sp.csr_matrix((SA * N, 1 + N))])

    eq = sp.vstack([flow, simplex]).tocsr()
    ub = sp.vstack([cvar.tocsr(), mccormick]).tocsr()
    lower = np.zeros(n_vars)
    upper = np.full(n_vars, np.inf)
    upper[:SA] = 1.0
    lower[b_idx] = -np.inf
    dense = n_vars * (eq.shape[0] + ub.shape[0]) <= DENSE_LIMIT
    lp = LinearProgram(
        c,
        eq.toarray() if dense else eq,
        np.concatenate([flow_rhs, np.ones(S)]),
        ub.toarray() if dense else ub,
        np.zeros(N + SA * N),
        lower,
        upper,
    )
    blocks = {
        "flow": slice(0, S * N),
        "policy": slice(S * N, S * N + S),
        "cvar": slice(S * N + S, S * N + S + N),
        "mccormick": slice(S * N + S + N, S * N + S + N + SA * N),
    }
    return SrMilpModel(mdp, ensemble, params, lp, blocks)


@dataclass(order=True)
class BranchNode:
    fixed_zero: frozenset = field(default_factory=frozenset, compare=False)
    fixed_one: frozenset = field(default_factory=frozenset, compare=False)
    lp_bound: float = field(default=np.inf, compare=False)
    depth: int = field(default=0, compare=False)

    def __post_init__(self):
        states = [s for s, _ in self.fixed_one]
        if len(states) != len(set(states)):
            raise ArgumentError("at most one action may be fixed to 1 per state")
        if self.fixed_one & self.fixed_zero:
            raise ArgumentError("a pair cannot be fixed to both 0 and 1")

    def child_one(self, s: int, a: int, num_actions: int) -> "BranchNode":
        zeros = self.fixed_zero | {(s, b) for b in range(num_actions) if b != a}
        return BranchNode(zeros, self.fixed_one | {(s, a)}, self.lp_bound, self.depth + 1)

    def child_zero(self, s: int, a: int) -> "BranchNode":
        return BranchNode(self.fixed_zero | {(s, a)}, self.fixed_one, self.lp_bound, self.depth + 1)


@dataclass(frozen=True)
class MilpSolution:
    policy: Policy
    objective: float
    nodes_explored: int
    gap: float
    status: str = "optimal"  # or "incomplete" when the node limit stopped the search
    root_bound: float = float("nan")


def occupancy_caps(mdp: TabularMdp, ensemble: ModelEnsemble, tol: float = 1e-8) -> np.ndarray:
    """Upper bounds ``H[w, s] >= max_pi h_pi^w(s)`` on discounted visitation of ``s``.

    One value iteration per model, vectorized over target states; the reward
    is the indicator of standing in the target state.  Iterates rise
    monotonically from zero, so adding the stopping-rule error bound
    ``tol / (1 - gamma)`` keeps every cap valid.
    """
    S, A, gamma = mdp.num_states, mdp.num_actions, mdp.discount
    caps = np.empty((len(ensemble), S))
    for w, P in enumerate(ensemble.tensor):
        flat = P.reshape(S * A, S)
        V = np.zeros((S, S))  # [state, target]
        while True:
            V_new = np.eye(S) + gamma * (flat @ V).reshape(S, A, S).max(axis=1)
            done = np.abs(V_new - V).max() <= tol
            V = V_new
            if done:
                break
        caps[w] = mdp.initial_dist @ V + tol / (1.0 - gamma)
    return np.minimum(caps, 1.0 / (1.0 - gamma))


def tightened_relaxation(model: SrMilpModel) -> LinearProgram:
    """The relaxation with ``1 / (1 - gamma)`` in the McCormick rows replaced by ``H[w, s]``.

    Still exact at binary ``pi`` (``u = f_w h_w(s) pi`` never exceeds
    ``f_w H[w, s] pi``), but the fractional region shrinks.
    """
    S, A, N = model.num_states, model.num_actions, model.num_models
    H = occupancy_caps(model.mdp, model.ensemble)
    f = model.ensemble.weights
    coef = -(f[:, None, None] * np.broadcast_to(H[:, :, None], (N, S, A))).reshape(-1)
    lp = model.lp
    ub = sp.lil_matrix(lp.ub_matrix) if sp.issparse(lp.ub_matrix) else lp.ub_matrix.copy()
    rows = N + np.arange(S * A * N)
    cols = np.tile(np.arange(S * A), N)
    ub[rows, cols] = coef
    if sp.issparse(ub):
        ub = ub.tocsr()
    return LinearProgram(lp.objective, lp.eq_matrix, lp.eq_rhs, ub, lp.ub_rhs, lp.var_lower, lp.var_upper)


def _node_lp(lp: LinearProgram, model: SrMilpModel, node: BranchNode) -> LinearProgram:
    lo, hi = lp.var_lower.copy(), lp.var_upper.copy()
    for s, a in node.fixed_zero:
        hi[model.pi_index(s, a)] = 0.0
    for s, a in node.fixed_one:
        lo[model.pi_index(s, a)] = 1.0
    return LinearProgram(lp.objective, lp.eq_matrix, lp.eq_rhs, lp.ub_matrix, lp.ub_rhs, lo, hi)


def _relax(model: SrMilpModel, node: BranchNode, method: str, lp: LinearProgram | None = None):
    sol = solve(_node_lp(lp if lp is not None else model.lp, model, node), method=method)
    if sol.status == "infeasible":
        return None
    if not sol.optimal:
        raise NumericError(f"MILP relaxation returned {sol.status}")
    S, A, N = model.num_states, model.num_actions, model.num_models
    pi = sol.x[: S * A].reshape(S, A)
    u = sol.x[S * A : S * A * (N + 1)].reshape(N, S, A).sum(axis=0)
    return sol.objective_value, pi, u


def _round(pi: np.ndarray, u: np.ndarray, node: BranchNode) -> np.ndarray:
    """Per-state argmax of aggregated occupancy, then pi, then lowest index."""
    S, A = pi.shape
    allowed = np.ones((S, A), dtype=bool)
    for s, a in node.fixed_zero:
        allowed[s, a] = False
    actions = np.empty(S, dtype=int)
    for s in range(S):
        cand = np.flatnonzero(allowed[s])
        # np.lexsort uses the last key as primary
        order = np.lexsort((cand, -pi[s, cand], -np.round(u[s, cand], 12)))
        actions[s] = cand[order[0]]
    for s, a in node.fixed_one:
        actions[s] = a
    return actions


def _most_fractional(pi: np.ndarray, node: BranchNode):
    frac = np.abs(pi - np.round(pi))
    for s, a in node.fixed_zero | node.fixed_one:
        frac[s, a] = 0.0
    if frac.max() <= FRACTIONAL_TOL:
        return None
    dist = np.where(frac > FRACTIONAL_TOL, np.abs(pi - 0.5), np.inf)
    s, a = np.unravel_index(int(np.argmin(dist)), pi.shape)
    return int(s), int(a)


def _scores(model: SrMilpModel, actions: np.ndarray) -> np.ndarray:
    """Static soft-robust values of a ``(K, S)`` block of deterministic policies."""
    returns = batch_returns(model.mdp, model.ensemble.tensor, actions)
    return soft_robust_rows(returns, model.ensemble.weights, model.params)


def _local_search(model: SrMilpModel, actions: np.ndarray, value: float, node: BranchNode):
    """Best-improvement single-state flips within the node's fixings."""
    S, A = model.num_states, model.num_actions
    free = [(s, a) for s in range(S) for a in range(A) if (s, a) not in node.fixed_zero]
    fixed_states = {s for s, _ in node.fixed_one}
    free = [(s, a) for s, a in free if s not in fixed_states]
    while True:
        moves = [(s, a) for s, a in free if actions[s] != a]
        if not moves:
            return actions, value
        block = np.repeat(actions[None, :], len(moves), axis=0)
        for k, (s, a) in enumerate(moves):
            block[k, s] = a
        scores = _scores(model, block)
        k = int(np.argmax(scores))
        if scores[k] <= value + 1e-12:
            return actions, value
        actions, value = block[k], float(scores[k])


def solve_branch_and_bound(
    model: SrMilpModel,
    gap_tol: float = 1e-6,
    node_limit: int = 100_000,
    lp_method: str | None = None,
    check_tol: float = 1e-6,
    tighten: bool = True,
    local_search: bool = True,
) -> MilpSolution:
    """Best-bound branch-and-bound over the binary policy variables.

    ``tighten`` bounds nodes with :func:`tightened_relaxation` instead of the
    plain McCormick rows; ``local_search`` polishes every rounded incumbent
    with single-state flips.  Neither changes the optimum, only the effort.
    """
    if not gap_tol > 0:
        raise ArgumentError("gap_tol must be positive")
    if node_limit < 1:
        raise ArgumentError("node_limit must be at least 1")
    method = lp_method or model.lp_method()
    A = model.num_actions
    root = BranchNode()

    def candidate(pi, u, node):
        actions = _round(pi, u, node)
        value = float(_scores(model, actions[None, :])[0])
        if local_search:
            actions, value = _local_search(model, actions, value, node)
        return actions, value

    relax_lp = model.lp
    relaxed = _relax(model, root, method, relax_lp)
    if relaxed is None:
        raise NumericError("MILP relaxation is infeasible at the root")
    best_actions, best_value = candidate(relaxed[1], relaxed[2], root)
    if tighten and relaxed[0] - best_value > gap_tol:
        # only pay for the caps when the plain root does not close the gap
        relax_lp = tightened_relaxation(model)
        relaxed = _relax(model, root, method, relax_lp)
    root_bound = relaxed[0]
    counter = itertools.count()
    heap = [(-root_bound, next(counter), root, relaxed)]
    nodes = 1
    status = "optimal"
    while heap:
        neg_bound, _, node, (bound, pi, u) = heap[0]
        if bound - best_value <= gap_tol:
            break
        if nodes >= node_limit:
            status = "incomplete"
            break
        heapq.heappop(heap)
        branch = _most_fractional(pi, node)
        if branch is None:
            # integral relaxation: its rounding is this policy, already scored
            continue
        s, a = branch
        for child in (node.child_one(s, a, A), node.child_zero(s, a)):
            res = _relax(model, child, method, relax_lp)
            nodes += 1
            if res is None:
                continue
            cbound, cpi, cu = res
            if cbound - best_value <= gap_tol:
                continue
            actions, value = candidate(cpi, cu, child)
            if value > best_value:
                best_value, best_actions = value, actions
            if cbound - best_value > gap_tol:
                child = BranchNode(child.fixed_zero, child.fixed_one, cbound, child.depth)
                heapq.heappush(heap, (-cbound, next(counter), child, res))
    open_bound = -heap[0][0] if heap else best_value
    gap = max(0.0, open_bound - best_value)
    if status == "optimal":
        gap = min(gap, gap_tol)
    policy = Policy.deterministic(best_actions, A)
    objective = rho_S(model.mdp, model.ensemble, policy, model.params)
    lp_value = fixed_policy_value(model, best_actions, method)
    if abs(lp_value - objective) > check_tol:
        raise NumericError(
            f"MILP objective {lp_value:.12g} disagrees with rho_S {objective:.12g} for policy {best_actions.tolist()}"
        )
    return MilpSolution(policy, objective, nodes, gap, status, root_bound)


def fixed_policy_value(model: SrMilpModel, actions, lp_method: str | None = None) -> float:
    """Optimal LP value with every ``pi`` fixed to the given deterministic policy."""
    actions = np.asarray(actions, dtype=int)
    S, A = model.num_states, model.num_actions
    node = BranchNode(
        frozenset((s, b) for s in range(S) for b in range(A) if b != actions[s]),
        frozenset((s, int(actions[s])) for s in range(S)),
    )
    res = _relax(model, node, lp_method or model.lp_method())
    if res is None:
        raise NumericError("fixed-policy LP is infeasible")
    return res[0]


def brute_force_deterministic(
    mdp: TabularMdp, ensemble: ModelEnsemble, params: SoftRobustParams, chunk: int = 4096
) -> MilpSolution:
    """Enumerate all deterministic policies; ties go to the lexicographically smallest."""
    S, A = mdp.num_states, mdp.num_actions
    total = A**S
    if total > BRUTE_FORCE_LIMIT:
        raise UnsupportedError(f"{total} deterministic policies exceed the enumeration guard {BRUTE_FORCE_LIMIT}")
    tensor = ensemble.tensor
    f = ensemble.weights
    eye = np.eye(A)
    best_value, best_actions = -np.inf, None
    # itertools.product yields action vectors in lexicographic order
    it = itertools.product(range(A), repeat=S)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=int)
        if block.size == 0:
            break
        returns = batch_returns(mdp, tensor, eye[block])  # (K, N)
        values = soft_robust_rows(returns, f, params)
        k = int(np.argmax(values))
        if values[k] > best_value:
            best_value, best_actions = float(values[k]), block[k]
    policy = Policy.deterministic(best_actions, A)
    return MilpSolution(policy, rho_S(mdp, ensemble, policy, params), total, 0.0, "optimal")
