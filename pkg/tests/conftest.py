import numpy as np
import pytest

from fedpecd.design import DesignProblem
from fedpecd.model import Bounds, ContextDistribution, FeatureMap, RewardParams, Scenario


def random_design_problem(m, k, d, seed=0, active_sets=None):
    rng = np.random.default_rng(seed)
    if active_sets is None:
        active_sets = [list(range(k)) for _ in range(m)]
    dirs = {}
    for i, arms in enumerate(active_sets):
        for a in arms:
            v = rng.normal(size=d)
            dirs[(i, a)] = v / np.linalg.norm(v)
    return DesignProblem(active_sets=active_sets, directions=dirs, dim=d)


def identical_agents_scenario(m=5, sigma=0.0):
    """All agents share one point-mass context; huge gaps, unit features.

    Noiseless runs on this scenario are fully deterministic and eliminate
    every suboptimal arm at the first opportunity, for any agent count.
    """
    u0 = np.array([1.0, 0.0, 0.0])
    u1 = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    u2 = np.array([1.0, 0.0, 1.0]) / np.sqrt(2)
    dirs = [u0, u1, u2]
    rewards = [10.0, 2.0, 2.0]
    thetas = [r * u for r, u in zip(rewards, dirs)]
    bounds = Bounds(ell=1.0, big_l=1.0, s=10.0)
    features = FeatureMap({a: {0: dirs[a]} for a in range(3)}, dim=3, bounds=bounds)
    return Scenario(
        d=3,
        K=3,
        M=m,
        bounds=bounds,
        rewards=RewardParams(thetas, s=10.0),
        features=features,
        mus=[ContextDistribution.point_mass(0) for _ in range(m)],
        sigma=sigma,
        name="identical-agents",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
