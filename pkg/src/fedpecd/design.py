"""Multi-agent exploration design over per-agent simplices.

Each agent must split its per-phase exploration budget across its active
arms.  The solver maximizes the separable log-determinant surrogate

    F(pi) = sum_a  logdet_span( sum_{i in R_a} pi_{a,i} e_{a,i} e_{a,i}^T )

where R_a is the set of agents with arm a active and e_{a,i} are unit
direction vectors.  Each arm's log-determinant is evaluated on the span of
its roster directions: if an allocation drives an arm's Gram matrix below
the rank that span supports, the term is -inf.  Without that convention
the pseudo-determinant would reward collapsing an arm's Gram to a lower
rank, and the problem would have spurious boundary maxima.

The solver is cyclic block-coordinate ascent over agents; each agent block
takes pairwise Frank-Wolfe steps on its simplex: mass moves from the
in-support arm with the smallest gradient to the arm with the largest,
with a closed-form optimal step length.  Pairwise steps avoid the
zigzagging that makes plain Frank-Wolfe too slow for the sweep-improvement
stopping rule.  The optimal step is always strictly short of the pole
where an arm's Gram would lose rank, so every roster direction stays
inside the range of its arm Gram and the rank-1 line-search formula is
exact at every iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import RANK_CUTOFF_SCALE

UNIT_NORM_TOL = 1e-9
SIMPLEX_TOL = 1e-9

# Uniform mass blended into a warm start so restored rosters stay interior.
_WARM_BLEND = 1e-2
_INNER_STEPS = 40


@dataclass
class DesignProblem:
    """Active sets per agent and unit directions per (agent, arm) pair.

    A pair may lack a direction (the server never learned one for it);
    such pairs contribute nothing to any Gram matrix and attract no budget.
    """

    active_sets: list[list[int]]
    directions: dict[tuple[int, int], np.ndarray]
    dim: int

    def __post_init__(self):
        if not self.active_sets:
            raise ValidationError("need at least one agent")
        self.active_sets = [sorted(int(a) for a in s) for s in self.active_sets]
        for i, arms in enumerate(self.active_sets):
            if not arms:
                raise ValidationError(f"agent {i} has an empty active set")
        pairs = {
            (i, a) for i, arms in enumerate(self.active_sets) for a in arms
        }
        dirs = {}
        for (i, a), vec in self.directions.items():
            if (i, a) not in pairs:
                raise ValidationError(f"direction for inactive pair (agent {i}, arm {a})")
            v = np.asarray(vec, dtype=float)
            if v.shape != (self.dim,):
                raise ValidationError(
                    f"direction for (agent {i}, arm {a}) has shape {v.shape}"
                )
            nrm = float(np.linalg.norm(v))
            if abs(nrm - 1.0) > UNIT_NORM_TOL:
                raise ValidationError(
                    f"direction for (agent {i}, arm {a}) has norm {nrm}, expected 1"
                )
            dirs[(i, a)] = v
        self.directions = dirs

    @property
    def n_agents(self) -> int:
        return len(self.active_sets)

    def rosters(self) -> dict[int, list[int]]:
        """arm -> sorted agents with that arm active."""
        out: dict[int, list[int]] = {}
        for i, arms in enumerate(self.active_sets):
            for a in arms:
                out.setdefault(a, []).append(i)
        return {a: sorted(members) for a, members in sorted(out.items())}


@dataclass
class DesignAllocation:
    """Exploration fractions pi_{a,i}; one distribution per agent."""

    pi: list[dict[int, float]]
    converged: bool = True
    objective: float = 0.0
    sweeps: int = 0
    objective_trace: list[float] = field(default_factory=list)

    def agent_weights(self, agent: int) -> dict[int, float]:
        return self.pi[agent]


def _matrix_cutoff(eigvals: np.ndarray) -> float:
    if eigvals.size == 0:
        return 0.0
    return eigvals.size * float(np.max(np.abs(eigvals))) * RANK_CUTOFF_SCALE


def _span_ranks(prob: DesignProblem) -> dict[int, int]:
    """Achievable rank per arm: rank of the unweighted direction Gram."""
    ranks = {}
    for a, members in prob.rosters().items():
        vecs = [prob.directions[(i, a)] for i in members if (i, a) in prob.directions]
        if not vecs:
            ranks[a] = 0
            continue
        gram = np.zeros((prob.dim, prob.dim))
        for v in vecs:
            gram += np.outer(v, v)
        w = np.linalg.eigvalsh(gram)
        ranks[a] = int(np.sum(w > _matrix_cutoff(w)))
    return ranks


def _build_grams(prob: DesignProblem, pi: list[dict[int, float]]) -> dict[int, np.ndarray]:
    grams = {a: np.zeros((prob.dim, prob.dim)) for a in prob.rosters()}
    for i, arms in enumerate(prob.active_sets):
        for a in arms:
            vec = prob.directions.get((i, a))
            if vec is not None:
                grams[a] += pi[i][a] * np.outer(vec, vec)
    return grams


def _logdet_span(gram: np.ndarray, span_rank: int) -> float:
    if span_rank == 0:
        return 0.0
    w = np.linalg.eigvalsh(0.5 * (gram + gram.T))
    kept = w[w > _matrix_cutoff(w)]
    if kept.size < span_rank:
        return -np.inf
    return float(np.sum(np.log(kept)))


def design_objective(prob: DesignProblem, pi: list[dict[int, float]]) -> float:
    """Span-restricted log-det objective at an arbitrary feasible point."""
    ranks = _span_ranks(prob)
    grams = _build_grams(prob, pi)
    return float(sum(_logdet_span(grams[a], ranks[a]) for a in grams))


def _uniform_pi(prob: DesignProblem) -> list[dict[int, float]]:
    return [{a: 1.0 / len(arms) for a in arms} for arms in prob.active_sets]


def _warm_start_pi(
    prob: DesignProblem, warm: DesignAllocation
) -> list[dict[int, float]]:
    pi = []
    for i, arms in enumerate(prob.active_sets):
        uniform = 1.0 / len(arms)
        prev = warm.pi[i] if i < len(warm.pi) else {}
        kept = {a: max(float(prev.get(a, 0.0)), 0.0) for a in arms}
        total = sum(kept.values())
        if total < 1e-9:
            pi.append({a: uniform for a in arms})
            continue
        pi.append(
            {
                a: (1.0 - _WARM_BLEND) * (kept[a] / total) + _WARM_BLEND * uniform
                for a in arms
            }
        )
    return pi


class _Solver:
    def __init__(self, prob: DesignProblem, pi: list[dict[int, float]]):
        self.prob = prob
        self.ranks = _span_ranks(prob)
        self.pi = pi
        self.grams = _build_grams(prob, pi)

    def objective(self) -> float:
        return float(
            sum(_logdet_span(self.grams[a], self.ranks[a]) for a in self.grams)
        )

    def _score_pair(self, agent: int, arm: int) -> float:
        """g = e' W_a^+ e for one (agent, arm) pair with a direction."""
        e = self.prob.directions[(agent, arm)]
        w, u = np.linalg.eigh(self.grams[arm])
        keep = w > _matrix_cutoff(w)
        coords = u.T @ e
        return float(np.sum(coords[keep] ** 2 / w[keep]))

    def _gradients(self, agent: int) -> np.ndarray:
        """g_a = e' W_a^+ e for the agent's active arms (0 if no direction)."""
        arms = self.prob.active_sets[agent]
        out = np.zeros(len(arms))
        with_dir = [
            (j, a) for j, a in enumerate(arms) if (agent, a) in self.prob.directions
        ]
        if not with_dir:
            return out
        stack = np.stack([self.grams[a] for _, a in with_dir])
        w, u = np.linalg.eigh(stack)
        for row, (j, a) in enumerate(with_dir):
            e = self.prob.directions[(agent, a)]
            cut = _matrix_cutoff(w[row])
            keep = w[row] > cut
            coords = u[row].T @ e
            out[j] = float(np.sum(coords[keep] ** 2 / w[row][keep]))
        return out

    def _block_update(self, agent: int, tol: float) -> float:
        """Pairwise Frank-Wolfe steps on one agent's simplex; returns the gain.

        Each step moves mass from the in-support arm with the smallest
        gradient to the arm with the largest.  The exact step length for
        h(t) = log(1 + t g_b) + log(1 - t g_w) is t* = (g_b - g_w) /
        (2 g_b g_w), which always lies strictly before the pole 1/g_w;
        clamping at the full away mass therefore never drops an arm Gram's
        rank.
        """
        arms = self.prob.active_sets[agent]
        if len(arms) == 1:
            return 0.0
        g = self._gradients(agent)
        if not np.any(g > 0.0):
            return 0.0
        weights = np.array([self.pi[agent][a] for a in arms])
        total = 0.0
        for _ in range(_INNER_STEPS):
            best = int(np.argmax(g))  # first max = lowest arm index on ties
            support = np.where(weights > 0.0)[0]
            worst = int(support[np.argmin(g[support])])
            g_b, g_w = float(g[best]), float(g[worst])
            if best == worst or g_b <= 0.0 or g_b <= g_w:
                break
            if g_w <= 0.0:
                # Away arm carries no information; move its whole mass.
                step = float(weights[worst])
                gain = float(np.log1p(step * g_b))
            else:
                step = (g_b - g_w) / (2.0 * g_b * g_w)
                step = min(step, float(weights[worst]))
                gain = float(np.log1p(step * g_b) + np.log1p(-step * g_w))
            if step <= 0.0 or gain <= 0.0:
                break
            arm_b, arm_w = arms[best], arms[worst]
            weights[best] += step
            weights[worst] -= step
            if weights[worst] < 1e-15:
                weights[worst] = 0.0
            self.pi[agent][arm_b] = float(weights[best])
            self.pi[agent][arm_w] = float(weights[worst])
            e_b = self.prob.directions.get((agent, arm_b))
            e_w = self.prob.directions.get((agent, arm_w))
            if e_b is not None:
                self.grams[arm_b] += step * np.outer(e_b, e_b)
            if e_w is not None:
                self.grams[arm_w] -= step * np.outer(e_w, e_w)
            total += gain
            if gain < tol * 1e-3:
                break
            if e_b is not None:
                g[best] = self._score_pair(agent, arm_b)
            if e_w is not None:
                g[worst] = self._score_pair(agent, arm_w)
        return total

    def sweep(self, tol: float) -> float:
        total = 0.0
        for agent in range(self.prob.n_agents):
            total += self._block_update(agent, tol)
        # Rebuild Grams from scratch so rank-1 update drift cannot accumulate.
        self.grams = _build_grams(self.prob, self.pi)
        return total


def solve_design(
    prob: DesignProblem,
    max_iters: int = 500,
    tol: float = 1e-6,
    warm_start: DesignAllocation | None = None,
) -> DesignAllocation:
    """Block-coordinate ascent for the separable log-det design.

    Runs full sweeps over agents until the objective improves by less than
    ``tol`` in a sweep, or ``max_iters`` sweeps elapse (in which case the
    best iterate is returned with ``converged=False``).
    """
    if max_iters < 1:
        raise ValidationError("max_iters must be at least 1")
    if tol <= 0.0:
        raise ValidationError("tol must be positive")

    pi0 = _uniform_pi(prob) if warm_start is None else _warm_start_pi(prob, warm_start)
    solver = _Solver(prob, pi0)
    trace = [solver.objective()]
    converged = False
    sweeps = 0
    for _ in range(max_iters):
        improvement = solver.sweep(tol)
        sweeps += 1
        trace.append(solver.objective())
        if improvement < tol:
            converged = True
            break

    pi = [dict(sorted(p.items())) for p in solver.pi]
    for p in pi:  # kill float drift so each agent's budget sums to one
        total = sum(p.values())
        if abs(total - 1.0) > SIMPLEX_TOL and total > 0.0:
            for a in p:
                p[a] /= total
    return DesignAllocation(
        pi=pi,
        converged=converged,
        objective=trace[-1],
        sweeps=sweeps,
        objective_trace=trace,
    )


def design_score(
    prob: DesignProblem, alloc: DesignAllocation
) -> dict[tuple[int, int], float]:
    """g_{a,i} = e' (sum_j pi_{a,j} e_j e_j^T)^+ e for each active pair.

    Pairs without a stored direction are omitted.
    """
    for i, arms in enumerate(prob.active_sets):
        total = sum(alloc.pi[i].get(a, 0.0) for a in arms)
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"allocation for agent {i} sums to {total}")
    grams = _build_grams(prob, alloc.pi)
    scores: dict[tuple[int, int], float] = {}
    for a, members in prob.rosters().items():
        w, u = np.linalg.eigh(0.5 * (grams[a] + grams[a].T))
        cut = _matrix_cutoff(w)
        keep = w > cut
        for i in members:
            vec = prob.directions.get((i, a))
            if vec is None:
                continue
            coords = u.T @ vec
            scores[(i, a)] = float(np.sum(coords[keep] ** 2 / w[keep]))
    return scores
