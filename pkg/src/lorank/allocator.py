"""Budget-constrained integer rank allocation.

Given per-module scores and a base rank r, the total budget r * L is split
proportionally in two phases: iterative water-filling that pins modules
whose share saturates the ceiling, then largest-remainder rounding of the
remaining fractional shares. A final repair pass raises modules below the
floor, paid for by decrementing the least-informative donors.

Everything is deterministic: free-set sums use exact summation (order
independent), and every tie is broken by an explicit rule. The returned
trace records each decision and can be replayed to reproduce the pattern.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from lorank.errors import ConstraintError, ShapeError
from lorank.linalg import Rng
from lorank.efim import ScoreVector

__all__ = [
    "AllocationProblem",
    "RankPattern",
    "AllocationTrace",
    "allocate",
    "random_scores",
    "rank_entropy",
]


@dataclass
class AllocationProblem:
    scores: ScoreVector
    base_rank: int
    r_min: int
    r_max: int

    def __post_init__(self):
        if len(self.scores) < 1:
            raise ConstraintError("allocation needs at least one module")
        if not (1 <= self.r_min <= self.base_rank <= self.r_max):
            raise ConstraintError(
                f"infeasible bounds: need 1 <= r_min <= base_rank <= r_max, "
                f"got r_min={self.r_min}, base_rank={self.base_rank}, "
                f"r_max={self.r_max}"
            )

    @property
    def budget(self) -> int:
        return self.base_rank * len(self.scores)


@dataclass
class RankPattern:
    entries: list[tuple[str, int]]  # ordered (module_id, rank)
    budget: int
    provenance: str  # fim | random | uniform

    def __post_init__(self):
        ids = [mid for mid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ShapeError("duplicate module ids in rank pattern")
        for mid, r in self.entries:
            if r < 1:
                raise ShapeError(f"{mid}: rank must be positive, got {r}")
        total = sum(r for _, r in self.entries)
        if total != self.budget:
            raise ShapeError(
                f"ranks sum to {total}, budget is {self.budget}"
            )

    def module_ids(self) -> list[str]:
        return [mid for mid, _ in self.entries]

    def ranks(self) -> list[int]:
        return [r for _, r in self.entries]

    def rank_of(self, module_id: str) -> int:
        for mid, r in self.entries:
            if mid == module_id:
                return r
        raise KeyError(module_id)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class _PhaseOneStep:
    free: list[int]
    budget: int
    shares: dict[int, float]
    saturated: list[int]


@dataclass
class AllocationTrace:
    """Every decision the allocator made, replayable into the same pattern."""

    module_ids: list[str]
    base_rank: int
    r_min: int
    r_max: int
    provenance: str
    iterations: list[_PhaseOneStep] = field(default_factory=list)
    zero_sum_uniform: bool = False  # free-set scores summed to zero mid-run
    remainders: dict[int, float] = field(default_factory=dict)
    floors: dict[int, int] = field(default_factory=dict)
    leftover_units: list[int] = field(default_factory=list)  # recipients, in order
    floor_raises: dict[int, int] = field(default_factory=dict)  # index -> units added
    donor_steps: list[int] = field(default_factory=list)  # one entry per unit removed

    def replay(self) -> list[int]:
        """Reconstruct the rank list from the recorded decisions."""
        n = len(self.module_ids)
        ranks = [0] * n
        if self.provenance == "uniform":
            return [self.base_rank] * n
        for step in self.iterations:
            for i in step.saturated:
                ranks[i] = self.r_max
        for i, f in self.floors.items():
            ranks[i] = f
        for i in self.leftover_units:
            ranks[i] += 1
        for i, added in self.floor_raises.items():
            ranks[i] += added
        for i in self.donor_steps:
            ranks[i] -= 1
        return ranks


def allocate(problem: AllocationProblem) -> tuple[RankPattern, AllocationTrace]:
    """Run the two-phase allocation. Deterministic for a fixed problem.

    Phase 1 repeats proportional sharing over the free set, pinning every
    module whose floored share reaches r_max, until nothing new saturates.
    Phase 2 assigns floored shares and hands out the leftover budget one
    unit at a time in descending remainder order (ties: higher score first,
    then lower index). Floor enforcement then raises sub-floor modules and
    repays the deficit by repeatedly decrementing the donor with the lowest
    score among modules still above the floor (ties: higher current rank
    first, then lower index).

    All scores zero falls back to the uniform pattern (rank = base_rank
    everywhere), flagged in the provenance.
    """
    ids = problem.scores.module_ids()
    scores = problem.scores.scores()
    n = len(ids)
    budget = problem.budget
    r_min, r_max = problem.r_min, problem.r_max

    if all(s == 0.0 for s in scores):
        trace = AllocationTrace(
            module_ids=ids, base_rank=problem.base_rank, r_min=r_min,
            r_max=r_max, provenance="uniform",
        )
        pattern = RankPattern(
            entries=[(mid, problem.base_rank) for mid in ids],
            budget=budget, provenance="uniform",
        )
        return pattern, trace

    trace = AllocationTrace(
        module_ids=ids, base_rank=problem.base_rank, r_min=r_min, r_max=r_max,
        provenance="fim",
    )
    ranks = [0] * n
    free = list(range(n))

    # Phase 1: water-filling with ceiling saturation.
    while free:
        total = math.fsum(scores[i] for i in free)
        if total == 0.0:
            # Remaining modules all score zero while budget remains: split
            # the budget uniformly over them (largest-remainder degenerates
            # to low-index-first for the odd units).
            trace.zero_sum_uniform = True
            per, extra = divmod(budget, len(free))
            for pos, i in enumerate(free):
                ranks[i] = per + (1 if pos < extra else 0)
                trace.floors[i] = ranks[i]
            budget = 0
            free = []
            break
        shares = {i: scores[i] / total * budget for i in free}
        saturated = [i for i in free if math.floor(shares[i]) >= r_max]
        trace.iterations.append(
            _PhaseOneStep(
                free=list(free), budget=budget, shares=shares,
                saturated=saturated,
            )
        )
        if not saturated:
            # Phase 2: largest-remainder rounding of the final shares.
            for i in free:
                ranks[i] = math.floor(shares[i])
                trace.floors[i] = ranks[i]
                trace.remainders[i] = shares[i] - math.floor(shares[i])
            leftover = budget - sum(ranks[i] for i in free)
            order = sorted(
                free,
                key=lambda i: (-(trace.remainders[i]), -scores[i], i),
            )
            pos = 0
            while leftover > 0:
                i = order[pos % len(order)]
                if ranks[i] < r_max:
                    ranks[i] += 1
                    trace.leftover_units.append(i)
                    leftover -= 1
                pos += 1
            free = []
            break
        for i in saturated:
            ranks[i] = r_max
        free = [i for i in free if i not in set(saturated)]
        budget -= len(saturated) * r_max

    # Floor enforcement.
    deficit = 0
    for i in range(n):
        if ranks[i] < r_min:
            trace.floor_raises[i] = r_min - ranks[i]
            deficit += r_min - ranks[i]
            ranks[i] = r_min
    while deficit > 0:
        donor = min(
            (i for i in range(n) if ranks[i] > r_min),
            key=lambda i: (scores[i], -ranks[i], i),
        )
        ranks[donor] -= 1
        trace.donor_steps.append(donor)
        deficit -= 1

    pattern = RankPattern(
        entries=list(zip(ids, ranks)), budget=problem.budget, provenance="fim",
    )
    return pattern, trace


def random_scores(l: int, rng: Rng) -> ScoreVector:
    """Uniform(0,1) scores for the random-allocation baseline."""
    if l < 1:
        raise ConstraintError("need at least one module")
    entries = [(f"layers.{k}.linear", rng.uniform(0.0, 1.0)) for k in range(l)]
    return ScoreVector(entries=entries, aggregation="random")


def rank_entropy(ranks: list[int]) -> float:
    """Shannon entropy (nats) of the normalized rank shares."""
    total = sum(ranks)
    return -math.fsum(
        (r / total) * math.log(r / total) for r in ranks if r > 0
    )
