"""Phase scheduling, confidence multiplier, metering, and orchestration.

A run is: an initialization round block (each agent pulls every arm once),
then H phases.  Phase p has length f_p + K rounds per agent, where
f_p = c * n^p.  Each phase is one synchronous federation round trip:
broadcast -> agent elimination -> active sets up -> design + allocations
down -> exploration -> estimates up -> aggregation -> broadcast.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .agent import Agent
from .environment import Environment, NoiseModel
from .errors import ConfigurationError, FedPecdError, ProtocolError
from .messages import (
    ActiveSetUpload,
    AllocationMessage,
    GlobalBroadcast,
    LocalEstimateUpload,
)
from .model import Scenario, build_psi_set
from .server import CentralServer

TRACE_VERSION = 1

VARIANTS = ("exact", "hidden")


@dataclass(frozen=True)
class PhaseSchedule:
    """Geometric phase lengths f_p = c * n^p, p = 1..H."""

    c: int
    n: int
    K: int
    horizon: int
    f: tuple[int, ...]

    @property
    def H(self) -> int:
        return len(self.f)

    def f_p(self, p: int) -> int:
        return self.f[p - 1]

    def phase_length(self, p: int) -> int:
        return self.f_p(p) + self.K

    def total_rounds(self) -> int:
        """Rounds per agent including the K initialization pulls."""
        return self.K + sum(self.f) + self.K * self.H


def build_schedule(c: int, n: int, K: int, T: int) -> PhaseSchedule:
    """Smallest H such that sum_{p<=H} (c n^p + K) covers the horizon T."""
    if c < 1 or int(c) != c:
        raise ConfigurationError(f"c must be a positive integer, got {c}")
    if n < 2 or int(n) != n:
        raise ConfigurationError(f"n must be an integer > 1, got {n}")
    if K < 1:
        raise ConfigurationError(f"K must be positive, got {K}")
    if T < c * n + K:
        raise ConfigurationError(
            f"horizon {T} shorter than one phase (f_1 + K = {c * n + K})"
        )
    fs = []
    covered = 0
    p = 1
    while covered < T:
        f = c * n**p
        fs.append(f)
        covered += f + K
        p += 1
    return PhaseSchedule(c=int(c), n=int(n), K=int(K), horizon=int(T), f=tuple(fs))


def compute_alpha(m: int, k_arms: int, h: int, d: int, delta: float) -> tuple[float, float]:
    """Confidence multiplier alpha and the smallest feasible k.

    alpha = min( sqrt(2 log(2MKH/delta)),
                 sqrt(2 log(KH/delta) + d log(k e)) )
    with k > 1 the smallest number satisfying
    k d >= 2 log(KH/delta) + d log(k e), found by bisection.
    """
    if min(m, k_arms, h, d) < 1:
        raise ConfigurationError("M, K, H, d must all be positive")
    if not (0.0 < delta < 1.0):
        raise ConfigurationError(f"delta must lie in (0, 1), got {delta}")
    alpha1 = math.sqrt(2.0 * math.log(2.0 * m * k_arms * h / delta))
    target = 2.0 * math.log(k_arms * h / delta)

    def slack(k: float) -> float:
        return k * d - target - d * math.log(k) - d

    lo, hi = 1.0, 2.0
    while slack(hi) < 0.0:
        hi *= 2.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if slack(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    k = hi
    alpha2 = math.sqrt(target + d * math.log(k * math.e))
    return min(alpha1, alpha2), k


@dataclass(frozen=True)
class ConfidenceConfig:
    """Confidence level delta with the derived multiplier alpha and k."""

    delta: float
    alpha: float
    k: float


def meter_message(msg) -> int:
    """Number of real scalars a message serializes (per-arm payload).

    Arm ids and pull counts cost one scalar each; a theta vector costs d
    and a V matrix costs d^2.
    """
    if isinstance(msg, LocalEstimateUpload):
        return sum(1 + len(e.theta_hat) + 1 for e in msg.estimates)
    if isinstance(msg, ActiveSetUpload):
        return len(msg.arms)
    if isinstance(msg, GlobalBroadcast):
        return sum(1 + len(th) + len(th) ** 2 for th, _ in msg.models.values())
    if isinstance(msg, AllocationMessage):
        return 2 * len(msg.counts)
    raise ProtocolError(f"cannot meter message of type {type(msg).__name__}")


class CommMeter:
    """Counts scalars moved in each direction, broken down by phase.

    A broadcast is delivered to every agent, so its payload is counted
    once per recipient.
    """

    def __init__(self):
        self.scalars_up = 0
        self.scalars_down = 0
        self.per_phase: list[dict] = []

    def _bucket(self, phase: int) -> dict:
        while len(self.per_phase) <= phase:
            self.per_phase.append({"phase": len(self.per_phase), "up": 0, "down": 0})
        return self.per_phase[phase]

    def record_up(self, msg, phase: int):
        cost = meter_message(msg)
        self.scalars_up += cost
        self._bucket(phase)["up"] += cost

    def record_down(self, msg, phase: int, copies: int = 1):
        cost = meter_message(msg) * copies
        self.scalars_down += cost
        self._bucket(phase)["down"] += cost

    @property
    def total(self) -> int:
        return self.scalars_up + self.scalars_down


@dataclass
class PhaseTrace:
    phase: int
    f_p: int
    union: list[int]
    active_before: list[list[int]]
    active_after: list[list[int]]
    stats: list[list[tuple[int, float, float]]]  # per agent: (arm, r_hat, u)
    allocations: list[dict[int, int]]
    round_end: int
    regret_per_agent: list[float]


@dataclass
class RunTrace:
    """Everything a run produced, sufficient for replay-style assertions."""

    variant: str
    seed: int
    delta: float
    alpha: float
    k: float
    schedule: PhaseSchedule
    m: int
    sigma: float
    realized_contexts: list[int]
    optimal_arms: list[int]
    true_rewards: np.ndarray  # (M, K)
    phases: list[PhaseTrace] = field(default_factory=list)
    checkpoints: list[tuple[int, float]] = field(default_factory=list)
    meter: CommMeter = field(default_factory=CommMeter)
    total_rounds: int = 0

    @property
    def confidence(self) -> ConfidenceConfig:
        return ConfidenceConfig(delta=self.delta, alpha=self.alpha, k=self.k)

    def regret_at(self, round_index: int) -> float:
        for r, value in self.checkpoints:
            if r == round_index:
                return value
        raise KeyError(f"round {round_index} is not a recorded checkpoint")

    @property
    def final_avg_regret(self) -> float:
        return self.regret_at(self.schedule.horizon)

    def any_confidence_violation(self) -> bool:
        """True if any recorded (phase, agent, arm) had |r_hat - r| >= u."""
        for rec in self.phases:
            for i, stats in enumerate(rec.stats):
                for arm, r_hat, u in stats:
                    if abs(r_hat - self.true_rewards[i, arm]) >= u:
                        return True
        return False

    def any_optimal_arm_eliminated(self) -> bool:
        for rec in self.phases:
            for i, active in enumerate(rec.active_after):
                if self.optimal_arms[i] not in active:
                    return True
        return False

    def records(self):
        """JSON-serializable trace records, one per line when written."""
        yield {
            "v": TRACE_VERSION,
            "type": "run",
            "variant": self.variant,
            "seed": self.seed,
            "M": self.m,
            "K": self.schedule.K,
            "delta": self.delta,
            "alpha": self.alpha,
            "k": self.k,
            "sigma": self.sigma,
            "c": self.schedule.c,
            "n": self.schedule.n,
            "horizon": self.schedule.horizon,
            "H": self.schedule.H,
        }
        for rec in self.phases:
            yield {
                "v": TRACE_VERSION,
                "type": "server",
                "phase": rec.phase,
                "f_p": rec.f_p,
                "union": rec.union,
                "round_end": rec.round_end,
            }
            for i in range(self.m):
                yield {
                    "v": TRACE_VERSION,
                    "type": "agent",
                    "phase": rec.phase,
                    "agent": i,
                    "active_before": rec.active_before[i],
                    "active_after": rec.active_after[i],
                    "stats": [
                        {"arm": a, "r_hat": r, "u": u} for a, r, u in rec.stats[i]
                    ],
                    "allocation": [[a, c] for a, c in sorted(rec.allocations[i].items())],
                    "regret": rec.regret_per_agent[i],
                }
        yield {
            "v": TRACE_VERSION,
            "type": "summary",
            "total_rounds": self.total_rounds,
            "checkpoints": [[r, x] for r, x in self.checkpoints],
            "scalars_up": self.meter.scalars_up,
            "scalars_down": self.meter.scalars_down,
            "meter_per_phase": self.meter.per_phase,
        }

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records():
                fh.write(json.dumps(record, sort_keys=True))
                fh.write("\n")

    def to_jsonl_str(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())


def run_protocol(
    scenario: Scenario,
    schedule: PhaseSchedule,
    delta: float = 0.1,
    master_seed: int = 0,
    variant: str = "hidden",
    noise_sigma: float | None = None,
    extra_checkpoints=(),
    trace_path=None,
    collect_stats: bool = True,
) -> RunTrace:
    """Execute initialization plus all scheduled phases and trace the run."""
    if variant not in VARIANTS:
        raise ConfigurationError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if schedule.K != scenario.K:
        raise ConfigurationError(
            f"schedule built for K={schedule.K} but scenario has K={scenario.K}"
        )
    m, k_arms, d = scenario.M, scenario.K, scenario.d

    noise = NoiseModel(sigma=scenario.sigma if noise_sigma is None else noise_sigma)
    env = Environment(scenario, master_seed, noise=noise)

    # Exact variant: the agent knows its realized context, so psi collapses
    # to the true feature vector.  Hidden variant: psi averages over mu.
    mus = env.exact_mus() if variant == "exact" else scenario.mus
    psi = build_psi_set(scenario.features, mus, scenario.bounds)

    alpha, k_conf = compute_alpha(m, k_arms, schedule.H, d, delta)
    agents = [
        Agent(i, psi.agent_table(i), alpha, scenario.bounds.ell) for i in range(m)
    ]
    server = CentralServer(m, k_arms, d)
    meter = CommMeter()

    trace = RunTrace(
        variant=variant,
        seed=master_seed,
        delta=delta,
        alpha=alpha,
        k=k_conf,
        schedule=schedule,
        m=m,
        sigma=noise.sigma,
        realized_contexts=[env.realized_context(i) for i in range(m)],
        optimal_arms=[env.optimal_arm(i) for i in range(m)],
        true_rewards=env.expected_rewards(),
        meter=meter,
    )

    # Initialization: every agent pulls every arm once (phase 0).
    init_uploads = []
    for i, agent in enumerate(agents):
        upload = agent.initialize(lambda a, i=i: env.pull(i, a))
        meter.record_up(upload, 0)
        init_uploads.append(upload)
    broadcast = server.ingest_init(init_uploads)
    meter.record_down(broadcast, 0, copies=m)

    round_cursor = k_arms  # rounds elapsed per agent so far

    for p in range(1, schedule.H + 1):
        try:
            f_p = schedule.f_p(p)
            active_before = [list(a.active) for a in agents]

            set_uploads = []
            stats_per_agent = []
            for agent in agents:
                upload, stats = agent.begin_phase(broadcast)
                meter.record_up(upload, p)
                set_uploads.append(upload)
                stats_per_agent.append(
                    [(s.arm, s.r_hat, s.u) for s in stats] if collect_stats else []
                )

            roster, alloc_msgs = server.plan_phase(set_uploads, f_p)
            for msg in alloc_msgs:
                meter.record_down(msg, p)

            est_uploads = []
            rounds_used = []
            for i, agent in enumerate(agents):
                upload, used = agent.explore_phase(
                    alloc_msgs[i], lambda a, count, i=i: env.pull_many(i, a, count)
                )
                meter.record_up(upload, p)
                est_uploads.append(upload)
                rounds_used.append(used)

            broadcast = server.ingest_phase(est_uploads)
            meter.record_down(broadcast, p, copies=m)

            for i, agent in enumerate(agents):
                remainder = max(schedule.phase_length(p) - rounds_used[i], 0)
                agent.exploit_remainder(
                    remainder, lambda a, count, i=i: env.pull_many(i, a, count)
                )
        except FedPecdError as exc:
            raise type(exc)(f"phase {p}: {exc}") from exc

        round_cursor += schedule.phase_length(p)
        per_agent, _total = env.cumulative_regret(upto=round_cursor)
        trace.phases.append(
            PhaseTrace(
                phase=p,
                f_p=f_p,
                union=list(roster.union),
                active_before=active_before,
                active_after=[list(a.active) for a in agents],
                stats=stats_per_agent,
                allocations=[dict(msg.counts) for msg in alloc_msgs],
                round_end=round_cursor,
                regret_per_agent=[float(x) for x in per_agent],
            )
        )

    trace.total_rounds = round_cursor

    marks = {k_arms}
    marks.update(rec.round_end for rec in trace.phases)
    marks.add(schedule.horizon)
    marks.update(int(r) for r in extra_checkpoints)
    for r in sorted(marks):
        if 0 <= r <= round_cursor:
            _, total = env.cumulative_regret(upto=r)
            trace.checkpoints.append((r, total / m))

    if trace_path is not None:
        trace.write_jsonl(trace_path)
    return trace
