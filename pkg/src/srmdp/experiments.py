"""Experiment harness: domain recipes, solver dispatch, evaluation and the CSV-producing commands."""
from __future__ import annotations

import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import io as sio
from .domains import (
    InventorySpec,
    generate_batch,
    generate_demands,
    inventory,
    inventory_transitions,
    random_dirichlet_mdp,
    riverswim,
)
from .errors import ArgumentError
from .mdp import ModelEnsemble, Policy, TabularMdp, TransitionModel, batch_returns, expected_return
from .mdp import mean_model_solve, value_iteration
from .milp import brute_force_deterministic, build_model, solve_branch_and_bound
from .posterior import (
    dirichlet_from_batch,
    empirical_model,
    gamma_poisson_from_demands,
    sample_demand_ensemble,
    sample_ensemble,
)
from .risk import DiscreteDistributionView, SoftRobustParams, cvar_primal, value_at_risk
from .robust import S_RECT, SA_RECT, robust_value_iteration
from .srvi import FeatureMap, SrviConfig, srvi_solve

ALGORITHMS = ("vi", "mean_vi", "empirical_vi", "rvi_s", "rvi_sa", "srvi", "milp", "brute")
DOMAINS = ("riverswim", "inventory", "toy", "random")
TEST_SEED_OFFSET = 10**6
MILP_TRADEOFF_LIMIT = 100  # tradeoff adds exact MILP solves when S*A is at most this
CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    domain: str = "riverswim"
    algorithm: str | None = None  # comma-separated list for tradeoff
    alpha: float = 0.8
    lambda_grid: tuple = (0.5,)
    n_models: int = 100
    test_models: int = 100
    seed: int = 0
    trials: int | None = None
    tol: float = 1e-6
    out: str | None = None
    features: str = "poly2"
    eval_on: str = "test"
    batch_size: int | None = None
    node_limit: int = 100_000
    policy: str | None = None
    policy_out: str | None = None
    timing: bool = False

    def __post_init__(self):
        grid = tuple(float(x) for x in np.atleast_1d(self.lambda_grid))
        object.__setattr__(self, "lambda_grid", grid)
        if not grid or any(not 0.0 <= x <= 1.0 for x in grid):
            raise ArgumentError("lambda values must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ArgumentError("alpha must lie in [0, 1]")
        if self.trials is not None and self.trials < 1:
            raise ArgumentError("trials must be at least 1")
        if self.n_models < 1 or self.test_models < 1:
            raise ArgumentError("ensemble sizes must be positive")
        if self.seed < 0:
            raise ArgumentError("seed must be non-negative")
        if not self.tol > 0:
            raise ArgumentError("tol must be positive")
        if self.eval_on not in ("test", "train"):
            raise ArgumentError("eval_on must be 'test' or 'train'")
        if self.batch_size is not None and self.batch_size < 1:
            raise ArgumentError("batch_size must be positive")
        for alg in self.algorithms():
            if alg not in ALGORITHMS:
                raise ArgumentError(f"unknown algorithm {alg!r}; choose from {', '.join(ALGORITHMS)}")

    def algorithms(self) -> list[str]:
        if not self.algorithm:
            return []
        return [a.strip() for a in self.algorithm.split(",") if a.strip()]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "lambda" in data:
            data["lambda_grid"] = [data.pop("lambda")]
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ArgumentError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ArgumentError(f"bad config: {exc}") from exc


RESULT_HEADER = (
    "domain",
    "algorithm",
    "alpha",
    "lambda",
    "seed",
    "mean_return",
    "cvar_return",
    "var_return",
    "soft_robust_return",
    "runtime_ms",
    "iterations",
)


@dataclass(frozen=True)
class ResultRow:
    domain: str
    algorithm: str
    alpha: float
    lam: float
    seed: int
    mean_return: float
    cvar_return: float
    var_return: float
    soft_robust_return: float
    runtime_ms: float
    iterations: int

    def __post_init__(self):
        expect = (1.0 - self.lam) * self.mean_return + self.lam * self.cvar_return
        if abs(self.soft_robust_return - expect) > CONSISTENCY_TOL * max(1.0, abs(expect)):
            raise ArgumentError("soft_robust_return is inconsistent with mean and CVaR")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


# --------------------------------------------------------------------------- domains


@dataclass(frozen=True)
class DomainSetup:
    name: str
    mdp: TabularMdp
    true_model: TransitionModel
    train: ModelEnsemble
    test: ModelEnsemble
    empirical: TransitionModel
    posterior_mean: TransitionModel

    def ensemble(self, which: str) -> ModelEnsemble:
        return self.train if which == "train" else self.test


DEFAULT_BATCH = {"riverswim": 300, "toy": 100, "random": 100, "inventory": 50}


def _true_domain(name: str):
    if name == "riverswim":
        return riverswim()
    if name == "toy":
        return random_dirichlet_mdp(3, 2, seed=0)
    if name == "random":
        return random_dirichlet_mdp(5, 3, seed=0)
    if name.endswith(".json"):
        return sio.mdp_from_dict(sio.read_json(name))
    raise ArgumentError(f"unknown domain {name!r}; choose from {', '.join(DOMAINS)} or an MDP .json file")


def dirichlet_setup(name, mdp, true_model, n_models, test_models, seed, batch_size) -> DomainSetup:
    """Uniform-random single-episode batch, flat Dirichlet prior, train/test posterior draws."""
    behavior = Policy.uniform(mdp.num_states, mdp.num_actions)
    batch = generate_batch(true_model, behavior, batch_size, mdp.initial_dist, seed)
    post = dirichlet_from_batch(batch)
    return DomainSetup(
        name,
        mdp,
        true_model,
        sample_ensemble(post, n_models, seed),
        sample_ensemble(post, test_models, seed + TEST_SEED_OFFSET),
        empirical_model(batch),
        post.mean(),
    )


def inventory_setup(n_models, test_models, seed, n_demands, true_rate: float = 10.0) -> DomainSetup:
    spec = InventorySpec()
    mdp, true_model = inventory(spec, true_rate)
    demands = generate_demands(true_rate, n_demands, seed)
    post = gamma_poisson_from_demands(demands)
    mle = max(float(np.mean(demands)), 1e-9)
    return DomainSetup(
        "inventory",
        mdp,
        true_model,
        sample_demand_ensemble(post, n_models, seed, spec),
        sample_demand_ensemble(post, test_models, seed + TEST_SEED_OFFSET, spec),
        TransitionModel(inventory_transitions(spec, mle)),
        TransitionModel(inventory_transitions(spec, post.mean)),
    )


def build_domain(cfg: ExperimentConfig, seed: int | None = None) -> DomainSetup:
    seed = cfg.seed if seed is None else seed
    size = cfg.batch_size or DEFAULT_BATCH.get(cfg.domain, 100)
    if cfg.domain == "inventory":
        return inventory_setup(cfg.n_models, cfg.test_models, seed, size)
    mdp, model = _true_domain(cfg.domain)
    return dirichlet_setup(cfg.domain, mdp, model, cfg.n_models, cfg.test_models, seed, size)


# --------------------------------------------------------------------------- solve / evaluate


@dataclass
class SolveOutcome:
    policy: Policy
    iterations: int
    objective: float = float("nan")
    extra: dict = field(default_factory=dict)


def run_algorithm(setup: DomainSetup, algorithm: str, params: SoftRobustParams, cfg: ExperimentConfig, seed: int):
    mdp, train = setup.mdp, setup.train
    if algorithm == "vi":
        r = value_iteration(mdp, setup.true_model, cfg.tol)
        return SolveOutcome(r.policy, r.iterations)
    if algorithm == "mean_vi":
        r = mean_model_solve(mdp, train, cfg.tol)
        return SolveOutcome(r.policy, r.iterations)
    if algorithm == "empirical_vi":
        r = value_iteration(mdp, setup.empirical, cfg.tol)
        return SolveOutcome(r.policy, r.iterations)
    if algorithm in ("rvi_s", "rvi_sa"):
        mode = S_RECT if algorithm == "rvi_s" else SA_RECT
        r = robust_value_iteration(mdp, train, params, mode, cfg.tol)
        return SolveOutcome(r.policy, r.iterations, float(mdp.initial_dist @ r.values))
    if algorithm == "srvi":
        features = FeatureMap.build(cfg.features, mdp.num_states)
        sol = srvi_solve(mdp, train, params, features, SrviConfig(seed=seed))
        if not sol.converged:
            print(
                f"warning: srvi stopped after {sol.iterations_used} iterations "
                f"(residual {sol.final_residual:.3g})",
                file=sys.stderr,
            )
        return SolveOutcome(sol.policy(), sol.iterations_used, sol.estimated_return, {"solution": sol})
    if algorithm == "milp":
        sol = solve_branch_and_bound(build_model(mdp, train, params), node_limit=cfg.node_limit)
        if sol.status != "optimal":
            print(f"warning: branch-and-bound stopped with gap {sol.gap:.3g}", file=sys.stderr)
        return SolveOutcome(sol.policy, sol.nodes_explored, sol.objective)
    if algorithm == "brute":
        sol = brute_force_deterministic(mdp, train, params)
        return SolveOutcome(sol.policy, sol.nodes_explored, sol.objective)
    raise ArgumentError(f"unknown algorithm {algorithm!r}")


def evaluate(mdp: TabularMdp, ensemble: ModelEnsemble, policy: Policy, params: SoftRobustParams):
    """Mean, CVaR, VaR and soft-robust value of the policy's return distribution."""
    returns = batch_returns(mdp, ensemble.tensor, policy.action_probs[None])[0]
    dist = DiscreteDistributionView(returns, ensemble.weights)
    mean = float(ensemble.weights @ returns)
    cvar = cvar_primal(dist, params.alpha)
    var = value_at_risk(dist, params.alpha)
    return mean, cvar, var, (1.0 - params.lam) * mean + params.lam * cvar


def make_row(cfg, setup, algorithm, params, seed, policy, runtime_ms, iterations) -> ResultRow:
    mean, cvar, var, sr = evaluate(setup.mdp, setup.ensemble(cfg.eval_on), policy, params)
    return ResultRow(
        setup.name,
        algorithm,
        params.alpha,
        params.lam,
        seed,
        mean,
        cvar,
        var,
        sr,
        float(round(runtime_ms, 3)) if cfg.timing else 0.0,
        int(iterations),
    )


def threads() -> int:
    raw = os.environ.get("SRMDP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ArgumentError(f"SRMDP_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ArgumentError("SRMDP_THREADS must be a positive integer")
    return n


def parallel_map(fn, items):
    """Ordered map; runs on ``SRMDP_THREADS`` worker threads."""
    items = list(items)
    n = min(threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _solve_task(cfg, algorithm, lam, seed):
    setup = build_domain(cfg, seed)
    params = SoftRobustParams(cfg.alpha, lam)
    t0 = time.perf_counter()
    out = run_algorithm(setup, algorithm, params, cfg, seed)
    elapsed = 1000.0 * (time.perf_counter() - t0)
    return make_row(cfg, setup, algorithm, params, seed, out.policy, elapsed, out.iterations), out


def _trial_seeds(cfg) -> list[int]:
    return [cfg.seed + t for t in range(cfg.trials or 1)]


def cmd_solve(cfg: ExperimentConfig):
    """One row per (trial, lambda); trial ``t`` uses seed ``seed + t``.

    Returns ``(rows, outcomes)``; the policy of the first task is written to
    ``cfg.policy_out`` when given.
    """
    algs = cfg.algorithms() or ["rvi_s"]
    if len(algs) != 1:
        raise ArgumentError("solve takes a single algorithm")
    tasks = [(s, lam) for s in _trial_seeds(cfg) for lam in cfg.lambda_grid]
    results = parallel_map(lambda t: _solve_task(cfg, algs[0], t[1], t[0]), tasks)
    rows = [r for r, _ in results]
    if cfg.policy_out:
        sio.write_text(cfg.policy_out, sio.dumps(sio.policy_to_dict(results[0][1].policy)))
    return rows, [o for _, o in results]


def default_tradeoff_algorithms(setup: DomainSetup) -> list[str]:
    algs = ["srvi"]
    if setup.mdp.num_states * setup.mdp.num_actions <= MILP_TRADEOFF_LIMIT:
        algs.append("milp")
    return algs


def cmd_tradeoff(cfg: ExperimentConfig):
    """Rows ordered by (trial, algorithm, lambda); a mean-vs-CVaR scatter labelled by lambda."""
    seeds = _trial_seeds(cfg)
    algs = cfg.algorithms() or default_tradeoff_algorithms(build_domain(cfg, seeds[0]))
    tasks = [(s, a, lam) for s in seeds for a in algs for lam in cfg.lambda_grid]
    results = parallel_map(lambda t: _solve_task(cfg, t[1], t[2], t[0]), tasks)
    return [r for r, _ in results]


def cmd_eval(cfg: ExperimentConfig) -> ResultRow:
    if not cfg.policy:
        raise ArgumentError("eval needs --policy PATH")
    policy = sio.policy_from_dict(sio.read_json(cfg.policy))
    setup = build_domain(cfg)
    if policy.action_probs.shape != (setup.mdp.num_states, setup.mdp.num_actions):
        raise ArgumentError("policy shape does not match the domain")
    return make_row(cfg, setup, "eval", SoftRobustParams(cfg.alpha, cfg.lambda_grid[0]), cfg.seed, policy, 0.0, 0)


# --------------------------------------------------------------------------- post-decision surprise

SURPRISE_METHODS = ("static_l0", "mean_model", "empirical", "static_l05")
SURPRISE_HEADER = ("trial", "method", "estimated_return", "true_return", "surprise")
SUMMARY_HEADER = ("method", "trials", "mean_surprise", "std_error")


def surprise_trial(cfg: ExperimentConfig, trial: int, num_states: int = 5, num_actions: int = 3) -> list[dict]:
    """One draw of the true model, batch and posterior; surprise of every method.

    Static methods report their estimate on an independent posterior
    ensemble, an unbiased estimate of the posterior expected objective of the
    chosen policy; the model-based baselines report the return under the
    model they optimized.
    """
    seed = int(np.random.SeedSequence([cfg.seed, 0x5E, trial]).generate_state(1)[0])
    mdp, true_model = random_dirichlet_mdp(num_states, num_actions, seed)
    setup = dirichlet_setup("random", mdp, true_model, cfg.n_models, cfg.test_models, seed, cfg.batch_size or 100)
    out = []

    def record(method, policy, estimate):
        truth = expected_return(mdp, true_model, policy)
        out.append(
            {"trial": trial, "method": method, "estimated_return": estimate, "true_return": truth, "surprise": truth - estimate}
        )

    for method, lam in (("static_l0", 0.0), ("static_l05", 0.5)):
        params = SoftRobustParams(cfg.alpha, lam)
        policy = brute_force_deterministic(mdp, setup.train, params).policy
        record(method, policy, evaluate(mdp, setup.test, policy, params)[3])
    for method, model in (("mean_model", setup.posterior_mean), ("empirical", setup.empirical)):
        policy = value_iteration(mdp, model, cfg.tol).policy
        record(method, policy, expected_return(mdp, model, policy))
    order = {m: i for i, m in enumerate(SURPRISE_METHODS)}
    return sorted(out, key=lambda d: order[d["method"]])


def summarize_surprise(rows: list[dict]) -> list[dict]:
    summary = []
    for method in SURPRISE_METHODS:
        x = np.array([r["surprise"] for r in rows if r["method"] == method])
        if x.size == 0:
            continue
        se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")
        summary.append({"method": method, "trials": int(x.size), "mean_surprise": float(x.mean()), "std_error": se})
    return summary


def cmd_surprise(cfg: ExperimentConfig):
    """Returns ``(per_trial_rows, summary_rows)``; 200 trials unless configured."""
    trials = cfg.trials or 200
    per_trial = parallel_map(lambda t: surprise_trial(cfg, t), range(trials))
    rows = [r for block in per_trial for r in block]
    return rows, summarize_surprise(rows)


def results_csv(rows) -> str:
    return sio.rows_to_csv(RESULT_HEADER, [r.as_dict() for r in rows])


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})


__all__ = [
    "ALGORITHMS",
    "DOMAINS",
    "ExperimentConfig",
    "ResultRow",
    "DomainSetup",
    "build_domain",
    "run_algorithm",
    "evaluate",
    "cmd_solve",
    "cmd_tradeoff",
    "cmd_eval",
    "cmd_surprise",
    "surprise_trial",
    "summarize_surprise",
    "results_csv",
]
