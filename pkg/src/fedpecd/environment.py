"""Ground-truth simulator: hidden contexts, noisy rewards, regret ledger.

Each agent's realized context is drawn once at construction (it is the
agent's fixed user profile for the whole run).  Pseudo-regret is tracked
from true reward gaps, so the ledger is identical across noise seeds for a
fixed pull sequence.  One master seed spawns independent per-agent streams,
keyed by agent index, so results do not depend on scheduling order and a
run over the first m agents of a scenario sees the same draws as a larger
run would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .model import ContextDistribution, Scenario


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian reward noise; sigma <= 1 keeps it 1-subgaussian."""

    sigma: float
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ConfigurationError(f"unsupported noise kind {self.kind!r}")
        if self.sigma < 0.0:
            raise ConfigurationError("sigma must be nonnegative")
        if self.sigma > 1.0:
            raise ConfigurationError(
                f"sigma = {self.sigma} > 1 is outside the supported noise range"
            )


class Environment:
    """Reward oracle plus the regret ledger agents can never compute."""

    def __init__(self, scenario: Scenario, master_seed, noise: NoiseModel | None = None):
        self.scenario = scenario
        self.noise = noise if noise is not None else NoiseModel(sigma=scenario.sigma)
        m, k = scenario.M, scenario.K

        root = np.random.SeedSequence(master_seed)
        ctx_root, agent_root = root.spawn(2)
        ctx_streams = ctx_root.spawn(m)
        agent_streams = agent_root.spawn(m)
        self._rngs = [np.random.Generator(np.random.PCG64(s)) for s in agent_streams]

        self._contexts = []
        for i, mu in enumerate(scenario.mus):
            rng = np.random.Generator(np.random.PCG64(ctx_streams[i]))
            self._contexts.append(mu.sample(rng))

        # True expected rewards r(a, c_i) and per-agent gaps, fixed for the run.
        self._rewards = np.zeros((m, k))
        for i in range(m):
            c = self._contexts[i]
            for a in range(k):
                self._rewards[i, a] = float(
                    scenario.rewards[a] @ scenario.features.vector(a, c)
                )
        self._optimal = np.argmax(self._rewards, axis=1).astype(int)
        self._gaps = self._rewards[np.arange(m), self._optimal][:, None] - self._rewards

        # Ledger: per agent, list of (pull count, per-pull gap) segments.
        self._segments: list[list[tuple[int, float]]] = [[] for _ in range(m)]
        self._rounds = np.zeros(m, dtype=np.int64)

    # -- truth accessors (for tests, traces, and the exact variant) --------

    def realized_context(self, agent: int) -> int:
        return self._contexts[agent]

    def exact_mus(self) -> list[ContextDistribution]:
        """Point-mass distributions at the realized contexts."""
        return [ContextDistribution.point_mass(c) for c in self._contexts]

    def expected_reward(self, agent: int, arm: int) -> float:
        return float(self._rewards[agent, arm])

    def expected_rewards(self) -> np.ndarray:
        return self._rewards.copy()

    def optimal_arm(self, agent: int) -> int:
        """argmax_a r(a, c_i), ties broken by lowest arm index."""
        return int(self._optimal[agent])

    # -- pulling ------------------------------------------------------------

    def _check_indices(self, agent: int, arm: int):
        if not (0 <= agent < self.scenario.M):
            raise IndexError(f"agent {agent} out of range [0, {self.scenario.M})")
        if not (0 <= arm < self.scenario.K):
            raise IndexError(f"arm {arm} out of range [0, {self.scenario.K})")

    def pull(self, agent: int, arm: int) -> float:
        """One pull: returns the noisy reward and books one round of regret."""
        self._check_indices(agent, arm)
        mean = self._rewards[agent, arm]
        reward = mean
        if self.noise.sigma > 0.0:
            reward = mean + self._rngs[agent].normal(0.0, self.noise.sigma)
        self._segments[agent].append((1, float(self._gaps[agent, arm])))
        self._rounds[agent] += 1
        return float(reward)

    def pull_many(self, agent: int, arm: int, count: int) -> float:
        """count pulls of one arm; returns the average observed reward."""
        self._check_indices(agent, arm)
        if count < 0:
            raise ValueError("count must be nonnegative")
        if count == 0:
            return 0.0
        mean = self._rewards[agent, arm]
        avg = mean
        if self.noise.sigma > 0.0:
            avg = mean + float(
                np.mean(self._rngs[agent].normal(0.0, self.noise.sigma, size=count))
            )
        self._segments[agent].append((count, float(self._gaps[agent, arm])))
        self._rounds[agent] += count
        return float(avg)

    # -- regret ledger --------------------------------------------------------

    def rounds_elapsed(self, agent: int) -> int:
        return int(self._rounds[agent])

    def cumulative_regret(self, upto: int | None = None):
        """Per-agent cumulative pseudo-regret over each agent's first
        ``upto`` pulls (all pulls when None), plus the total."""
        m = self.scenario.M
        per_agent = np.zeros(m)
        for i in range(m):
            if upto is not None and upto > self._rounds[i]:
                raise ValueError(
                    f"agent {i} has only {self._rounds[i]} rounds, asked for {upto}"
                )
            remaining = self._rounds[i] if upto is None else upto
            acc = 0.0
            for count, gap in self._segments[i]:
                if remaining <= 0:
                    break
                take = min(count, remaining)
                acc += take * gap
                remaining -= take
            per_agent[i] = acc
        return per_agent, float(per_agent.sum())
