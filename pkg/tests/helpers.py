"""Shared test utilities: finite-difference oracles, problem corpora, and an
independent re-implementation of the allocation algorithm."""
from __future__ import annotations

import math
import random

from lorank import model as model_mod
from lorank.efim import ScoreVector
from lorank.linalg import Matrix, Rng


def fd_loss_grad(model, inputs, targets, matrix, flat_idx, h=1e-6):
    """Central finite difference of the batch-mean loss wrt one entry of
    ``matrix`` (an adapter matrix inside ``model``). Touches the forward
    path only, so it is independent of the analytic backward pass."""
    old = matrix.data[flat_idx]
    matrix.data[flat_idx] = old + h
    _, lp = model_mod.forward(model, inputs, targets)
    matrix.data[flat_idx] = old - h
    _, lm = model_mod.forward(model, inputs, targets)
    matrix.data[flat_idx] = old
    return (lp - lm) / (2.0 * h)


def random_batch(rng: Rng, dim: int, n: int) -> list[Matrix]:
    out = []
    for _ in range(n):
        x = Matrix(dim, 1)
        for i in range(dim):
            x.data[i] = rng.normal()
        out.append(x)
    return out


def random_desk_model(seed: int):
    """Random small model + batch for gradient checks: L <= 4, dims <= 16,
    rank <= 4, mixed activations and losses."""
    rnd = random.Random(seed)
    n_layers = rnd.randint(1, 4)
    dims = [rnd.randint(2, 16) for _ in range(n_layers + 1)]
    rank = rnd.randint(1, 4)
    activation = rnd.choice(["tanh", "identity"])
    loss = rnd.choice(["mse", "softmax_cross_entropy"])
    alpha = 2.0 * rank
    rng = Rng(seed)
    model = model_mod.build_model(dims, rank, alpha, rng, activation, loss)
    # give B a small nonzero value on some models so the A-gradient path is
    # exercised away from init too
    nonzero_b = rnd.random() < 0.5
    if nonzero_b:
        for layer in model.layers:
            b = layer.adapter.b
            for i in range(len(b.data)):
                b.data[i] = rng.uniform(-0.3, 0.3)
    batch = rnd.randint(1, 3)
    inputs = random_batch(rng, dims[0], batch)
    if loss == "mse":
        targets = random_batch(rng, dims[-1], batch)
    else:
        targets = [rnd.randrange(dims[-1]) for _ in range(batch)]
    return model, inputs, targets, nonzero_b


def score_vector(values, prefix="layers", role="linear") -> ScoreVector:
    entries = [(f"{prefix}.{i}.{role}", float(v)) for i, v in enumerate(values)]
    return ScoreVector(entries=entries, aggregation="mean")


def random_problem(rnd: random.Random, max_layers=512):
    """One random allocation problem drawn from mixed score distributions."""
    n = rnd.randint(1, max_layers)
    r_min = rnd.randint(1, 4)
    base_rank = rnd.randint(r_min, 12)
    r_max = rnd.randint(base_rank, 40)
    kind = rnd.choice(["uniform", "lognormal", "sparse"])
    values = []
    for _ in range(n):
        if kind == "uniform":
            values.append(rnd.random())
        elif kind == "lognormal":
            values.append(math.exp(2.0 * rnd.gauss(0.0, 1.0)))
        else:
            values.append(0.0 if rnd.random() < 0.7 else rnd.random())
    return score_vector(values), base_rank, r_min, r_max


# --- Independent step-by-step re-implementation of the allocation algorithm.
# Written against the algorithm statement, not the library code: plain dicts,
# recomputes shares with plain sums, one explicit stage at a time.


def oracle_allocate(scores: list[float], base_rank: int, r_min: int, r_max: int):
    n = len(scores)
    if all(s == 0.0 for s in scores):
        return [base_rank] * n
    budget = base_rank * n
    rank: dict[int, int] = {i: 0 for i in range(n)}
    free = set(range(n))
    # phase 1
    while free:
        total = sum(sorted(scores[i] for i in free))  # stable plain sum
        if total == 0.0:
            members = sorted(free)
            q, rem = divmod(budget, len(members))
            for pos, i in enumerate(members):
                rank[i] = q + 1 if pos < rem else q
            free = set()
            budget = 0
            break
        share = {i: scores[i] / total * budget for i in free}
        newly = {i for i in free if math.floor(share[i]) >= r_max}
        if not newly:
            # phase 2: largest remainder
            leftover = budget
            for i in free:
                rank[i] = math.floor(share[i])
                leftover -= rank[i]
            by_remainder = sorted(
                free, key=lambda i: (share[i] - math.floor(share[i]), scores[i], -i),
                reverse=True,
            )
            k = 0
            while leftover > 0:
                cand = by_remainder[k % len(by_remainder)]
                if rank[cand] < r_max:
                    rank[cand] += 1
                    leftover -= 1
                k += 1
            break
        for i in newly:
            rank[i] = r_max
            free.discard(i)
            budget -= r_max
    # floor enforcement
    need = 0
    for i in range(n):
        if rank[i] < r_min:
            need += r_min - rank[i]
            rank[i] = r_min
    while need > 0:
        candidates = [i for i in range(n) if rank[i] > r_min]
        candidates.sort(key=lambda i: (scores[i], -rank[i], i))
        rank[candidates[0]] -= 1
        need -= 1
    return [rank[i] for i in range(n)]
