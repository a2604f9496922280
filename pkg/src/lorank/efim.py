"""Empirical Fisher diagonal at adapter-B matrices.

The accumulator keeps, per module, the running sum of squared batch
gradients at B. Gradients at A are ignored by design: at initialization
B = 0 makes them identically zero, so they carry no signal.

Sums are held as exact rationals (each squared gradient is a double; the
running sum has no rounding). That makes merging exact: splitting the batch
stream at any point and merging the partial accumulators finalizes
bit-identically to sequential accumulation, and merge is commutative. The
single rounding happens in ``finalize``, which divides by the batch count
and converts to double.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from lorank.errors import EmptyCalibrationError, ShapeError
from lorank.linalg import Matrix
from lorank.lora import AdapterGradients

__all__ = ["EfimAccumulator", "ScoreVector", "merge", "finalize", "score"]

AGGREGATIONS = ("mean", "max", "l2")


@dataclass
class ScoreVector:
    """Ordered per-module informativeness scores."""

    entries: list[tuple[str, float]]
    aggregation: str  # mean | max | l2, or "random" for the baseline

    def __post_init__(self):
        ids = [mid for mid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ShapeError("duplicate module ids in score vector")
        for mid, s in self.entries:
            if not (s >= 0.0):
                raise ShapeError(f"negative or NaN score for {mid}: {s!r}")

    def module_ids(self) -> list[str]:
        return [mid for mid, _ in self.entries]

    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


class EfimAccumulator:
    """Running sum of squared adapter-B gradients per module, plus the
    number of batches folded in."""

    def __init__(self, shapes: Mapping[str, tuple[int, int]]):
        if not shapes:
            raise ShapeError("accumulator needs at least one module")
        self.shapes: dict[str, tuple[int, int]] = dict(shapes)
        self._sums: dict[str, list[Fraction]] = {
            mid: [Fraction(0)] * (r * c) for mid, (r, c) in self.shapes.items()
        }
        self.t = 0

    @classmethod
    def for_model(cls, model) -> EfimAccumulator:
        return cls(
            {
                layer.adapter.module_id: layer.adapter.b.shape
                for layer in model.layers
            }
        )

    def like(self) -> EfimAccumulator:
        """Empty accumulator with the same module set and shapes."""
        return EfimAccumulator(self.shapes)

    def accumulate(self, grads: Mapping[str, AdapterGradients]) -> EfimAccumulator:
        """Fold in one batch of adapter gradients: sum += grad_b ** 2.

        Each squared entry is computed in double precision and added to the
        exact running sum. Gradients at A are present in ``grads`` but never
        enter the accumulator.
        """
        if set(grads.keys()) != set(self.shapes.keys()):
            raise ShapeError(
                f"module set mismatch: accumulator has {sorted(self.shapes)}, "
                f"got {sorted(grads)}"
            )
        for mid, g in grads.items():
            if g.grad_b.shape != self.shapes[mid]:
                raise ShapeError(
                    f"{mid}: grad_b shape {g.grad_b.shape}, "
                    f"expected {self.shapes[mid]}"
                )
            sums = self._sums[mid]
            data = g.grad_b.data
            for i in range(len(sums)):
                v = data[i]
                sums[i] += Fraction(v * v)
        self.t += 1
        return self

    def sum_sq(self, module_id: str) -> Matrix:
        """Current raw sum of squares as a double matrix (rounded view)."""
        r, c = self.shapes[module_id]
        out = Matrix(r, c)
        for i, frac in enumerate(self._sums[module_id]):
            out.data[i] = float(frac)
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EfimAccumulator):
            return NotImplemented
        return (
            self.shapes == other.shapes
            and self.t == other.t
            and self._sums == other._sums
        )

    __hash__ = None


def merge(a: EfimAccumulator, b: EfimAccumulator) -> EfimAccumulator:
    """Combine two accumulators: exact elementwise sum, batch counts add."""
    if a.shapes != b.shapes:
        raise ShapeError("cannot merge accumulators with different module sets")
    out = a.like()
    for mid in a.shapes:
        sa, sb = a._sums[mid], b._sums[mid]
        out._sums[mid] = [x + y for x, y in zip(sa, sb)]
    out.t = a.t + b.t
    return out


def finalize(acc: EfimAccumulator) -> dict[str, Matrix]:
    """F = sum_sq / t per module, rounded once to double."""
    if acc.t < 1:
        raise EmptyCalibrationError("no calibration batches accumulated")
    out = {}
    for mid, (r, c) in acc.shapes.items():
        f = Matrix(r, c)
        for i, frac in enumerate(acc._sums[mid]):
            f.data[i] = float(frac / acc.t)
        out[mid] = f
    return out


def score(
    f_by_module: Mapping[str, Matrix], aggregation: str = "mean"
) -> ScoreVector:
    """Reduce each module's F matrix to one scalar.

    mean: sample mean over all entries. max: largest entry. l2: Euclidean
    norm of the entries.
    """
    if aggregation not in AGGREGATIONS:
        raise ShapeError(f"unknown aggregation {aggregation!r}")
    entries = []
    for mid, f in f_by_module.items():
        if aggregation == "mean":
            s = math.fsum(f.data) / len(f.data)
        elif aggregation == "max":
            s = max(f.data)
        else:
            s = math.sqrt(math.fsum(v * v for v in f.data))
        entries.append((mid, s))
    return ScoreVector(entries=entries, aggregation=aggregation)
