import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srmdp.bounds import (
    BoundCheck,
    check_corollary1,
    check_lemma5,
    check_theorem2,
    dynamic_optimum,
    epsilon1,
    epsilon1_max,
    epsilon2,
    occupancy_convexity_gap,
)
from srmdp.errors import ArgumentError
from srmdp.mdp import ModelEnsemble, Policy
from srmdp.risk import SoftRobustParams
from srmdp.robust import S_RECT, robust_value_iteration

from conftest import random_instance


def test_epsilon1_zero_for_identical_models(rng):
    mdp, ens = random_instance(rng, 3, 2, 1)
    twin = ModelEnsemble((ens.models[0],) * 3, np.full(3, 1 / 3))
    assert epsilon1(mdp, twin, Policy.uniform(3, 2)) == 0.0
    assert epsilon1_max(mdp, twin, n_random=5) == 0.0


def test_epsilon1_bounded(rng):
    mdp, ens = random_instance(rng, 3, 2, 3)
    eps = epsilon1(mdp, ens, Policy.uniform(3, 2))
    assert 0 <= eps <= 2 / (1 - mdp.discount)
    assert epsilon1_max(mdp, ens, n_random=10) >= eps - 1e-12


def test_epsilon2_vanishes_at_rectangular_fixed_point(rng):
    # at the robust fixed point max_a T_a v - v = 0 in the SA sense is not guaranteed,
    # but for one model eps2 reduces to the Bellman residual of v, which is 0 at v*
    mdp, ens = random_instance(rng, 3, 2, 1)
    params = SoftRobustParams(0.5, 0.5)
    v = robust_value_iteration(mdp, ens, params, S_RECT, tol=1e-12).values
    assert epsilon2(mdp, ens, params, v) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ArgumentError):
        epsilon2(mdp, ens, params, np.zeros(4))


def test_bound_check_arithmetic():
    c = BoundCheck(1.0, 0.8, 0.3)
    assert c.slack == pytest.approx(0.1) and c.passed
    assert not BoundCheck(1.0, 0.8).passed
    assert set(c.to_dict()) >= {"lhs", "rhs", "slack", "passed"}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_lemma5_property(seed, b):
    rng = np.random.default_rng(seed)
    mdp, ens = random_instance(rng, 4, 2, 2)
    pi = Policy.randomized(rng.dirichlet(np.ones(2), size=4))
    check = check_lemma5(mdp, ens.models, [b, 1 - b], pi)
    assert check.lhs <= check.rhs + 1e-9


def test_occupancy_gap_zero_at_vertices(rng):
    mdp, ens = random_instance(rng, 3, 2, 2)
    pi = Policy.uniform(3, 2)
    assert occupancy_convexity_gap(mdp, ens.models, [1.0, 0.0], pi) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ArgumentError):
        occupancy_convexity_gap(mdp, ens.models, [0.5, 0.6], pi)


def test_theorem2_small(rng):
    mdp, ens = random_instance(rng, 3, 2, 3)
    c = check_theorem2(mdp, ens, Policy.uniform(3, 2), SoftRobustParams(0.7, 0.5), grid_resolution=20)
    assert c.passed
    big, big_ens = random_instance(rng, 2, 2, 4)
    with pytest.raises(ArgumentError):
        check_theorem2(big, big_ens, Policy.uniform(2, 2), SoftRobustParams(0.5, 0.5))


def test_corollary1_small(rng):
    mdp, ens = random_instance(rng, 2, 2, 2)
    rep = check_corollary1(mdp, ens, SoftRobustParams(0.6, 0.5), grid_resolution=20, n_random=10)
    assert rep.passed and rep.epsilon1 >= 0
    assert rep.to_dict()["checks"]["corollary1"]["passed"]


def test_dynamic_optimum_shapes(rng):
    mdp, ens = random_instance(rng, 2, 2, 2)
    dyn = dynamic_optimum(mdp, ens, SoftRobustParams(0.5, 0.5), grid_resolution=15)
    assert dyn.values.shape == (2,) and dyn.xi.sum() == pytest.approx(1.0)
