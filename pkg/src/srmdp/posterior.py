"""Conjugate posteriors over transition models and ensemble sampling.

Randomness uses numpy's counter-based Philox bit generator.  Each ensemble
member ``w`` gets its own stream keyed by ``(seed, w)`` through
``SeedSequence``, so a member does not depend on how many others are drawn
or in which order.  Within a member, rows are drawn in ``(s, a)`` row-major
order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .mdp import ModelEnsemble, TransitionModel

__all__ = [
    "TransitionBatch",
    "DirichletPosterior",
    "GammaPosterior",
    "ModelEnsemble",
    "dirichlet_from_batch",
    "sample_ensemble",
    "gamma_poisson_from_demands",
    "sample_demand_ensemble",
    "empirical_model",
    "stream",
]


ENSEMBLE_KEY = 0xE5  # keeps model draws apart from the single-key data streams


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox generator for ``(seed, *key)``."""
    if seed < 0:
        raise ArgumentError("seed must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, key)])))


@dataclass(frozen=True)
class TransitionBatch:
    """Logged ``(s, a, s')`` triples with the state/action space sizes."""

    samples: np.ndarray
    num_states: int
    num_actions: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.int64).reshape(-1, 3)
        S, A = self.num_states, self.num_actions
        if S < 1 or A < 1:
            raise ArgumentError("state and action counts must be positive")
        bad = (samples < 0) | (samples >= np.array([S, A, S]))
        if np.any(bad):
            i = int(np.argmax(bad.any(axis=1)))
            raise ArgumentError(f"sample {i} {tuple(samples[i])} out of range for S={S}, A={A}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def counts(self) -> np.ndarray:
        counts = np.zeros((self.num_states, self.num_actions, self.num_states), dtype=np.int64)
        np.add.at(counts, tuple(self.samples.T), 1)
        return counts

    def concat(self, other: "TransitionBatch") -> "TransitionBatch":
        if (other.num_states, other.num_actions) != (self.num_states, self.num_actions):
            raise ArgumentError("batches have different dimensions")
        return TransitionBatch(np.vstack([self.samples, other.samples]), self.num_states, self.num_actions)


@dataclass(frozen=True)
class DirichletPosterior:
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        if alpha.ndim != 3 or alpha.shape[0] != alpha.shape[2]:
            raise ArgumentError("concentration tensor must have shape (S, A, S)")
        if not np.all(alpha > 0) or not np.all(np.isfinite(alpha)):
            raise ArgumentError("Dirichlet concentrations must be positive and finite")
        alpha.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)

    def update(self, batch: TransitionBatch) -> "DirichletPosterior":
        if batch.counts.shape != self.alpha.shape:
            raise ArgumentError("batch dimensions do not match the posterior")
        return DirichletPosterior(self.alpha + batch.counts)

    def mean(self) -> TransitionModel:
        return TransitionModel(self.alpha / self.alpha.sum(axis=2, keepdims=True))


@dataclass(frozen=True)
class GammaPosterior:
    """Gamma distribution over a Poisson rate, parametrized by shape and rate."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ArgumentError("Gamma shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


def dirichlet_from_batch(batch: TransitionBatch, prior_concentration: float = 1.0) -> DirichletPosterior:
    if not prior_concentration > 0:
        raise ArgumentError("prior concentration must be positive")
    return DirichletPosterior(prior_concentration + batch.counts.astype(float))


def _dirichlet_rows(rng: np.random.Generator, alpha: np.ndarray) -> np.ndarray:
    # numpy's gamma sampler is Marsaglia-Tsang; normalizing gives Dirichlet rows
    g = rng.gamma(alpha)
    total = g.sum(axis=-1, keepdims=True)
    # all-zero rows only happen when every concentration underflows; fall back to the mean
    zero = total[..., 0] <= 0
    if np.any(zero):
        g[zero] = alpha[zero]
        total[zero] = alpha[zero].sum(axis=-1, keepdims=True)
    return g / total


def sample_ensemble(posterior: DirichletPosterior, n_models: int, seed: int) -> ModelEnsemble:
    """Draw ``n_models`` transition tensors with uniform weights."""
    if n_models < 1:
        raise ArgumentError("n_models must be at least 1")
    models = [TransitionModel(_dirichlet_rows(stream(seed, ENSEMBLE_KEY, w), posterior.alpha)) for w in range(n_models)]
    return ModelEnsemble.uniform(models)


def gamma_poisson_from_demands(
    demands: Sequence[int], prior_shape: float = 4.0, prior_scale: float = 6.0
) -> GammaPosterior:
    if not (prior_shape > 0 and prior_scale > 0):
        raise ArgumentError("prior shape and scale must be positive")
    d = np.asarray(demands, dtype=np.int64).ravel()
    if np.any(d < 0):
        raise ArgumentError("demands must be non-negative")
    return GammaPosterior(prior_shape + float(d.sum()), 1.0 / prior_scale + d.size)


def sample_demand_rates(posterior: GammaPosterior, n_models: int, seed: int) -> np.ndarray:
    if n_models < 1:
        raise ArgumentError("n_models must be at least 1")
    rates = np.array([stream(seed, ENSEMBLE_KEY, w).gamma(posterior.shape, 1.0 / posterior.rate) for w in range(n_models)])
    # a zero draw is possible only for tiny shapes; keep the model well defined
    return np.maximum(rates, np.finfo(float).tiny)


def sample_demand_ensemble(posterior: GammaPosterior, n_models: int, seed: int, inventory_spec=None) -> ModelEnsemble:
    from .domains import InventorySpec, inventory_transitions

    spec = inventory_spec or InventorySpec()
    rates = sample_demand_rates(posterior, n_models, seed)
    return ModelEnsemble.uniform([TransitionModel(inventory_transitions(spec, r)) for r in rates])


def empirical_model(batch: TransitionBatch, fallback: str = "uniform") -> TransitionModel:
    """Maximum-likelihood transitions; unobserved rows use ``fallback``."""
    if fallback not in ("uniform", "self_loop"):
        raise ArgumentError(f"unknown fallback {fallback!r}")
    counts = batch.counts.astype(float)
    totals = counts.sum(axis=2, keepdims=True)
    S = batch.num_states
    if fallback == "uniform":
        default = np.full_like(counts, 1.0 / S)
    else:
        default = np.broadcast_to(np.eye(S)[:, None, :], counts.shape).copy()
    probs = np.where(totals > 0, counts / np.maximum(totals, 1.0), default)
    return TransitionModel(probs)
