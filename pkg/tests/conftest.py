import numpy as np
import pytest

from srmdp.mdp import ModelEnsemble, TabularMdp, TransitionModel
from srmdp.risk import SoftRobustParams


def random_instance(rng, S, A, N, gamma=0.9, concentration=1.0):
    """Random rewards in [0, 1], N Dirichlet models, random start distribution."""
    reward = rng.uniform(0.0, 1.0, size=(S, A, S))
    p0 = rng.dirichlet(np.ones(S))
    mdp = TabularMdp(reward, gamma, p0)
    models = [TransitionModel(rng.dirichlet(np.full(S, concentration), size=(S, A))) for _ in range(N)]
    f = rng.dirichlet(np.ones(N)) if N > 1 else np.ones(1)
    return mdp, ModelEnsemble(tuple(models), f)


def random_params(rng, alphas=(0.5, 0.9), lams=(0.0, 0.5, 1.0)):
    return SoftRobustParams(float(rng.choice(alphas)), float(rng.choice(lams)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
