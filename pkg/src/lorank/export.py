"""On-disk formats: rank-pattern JSON, scores JSON, rank-map CSV.

Writers emit canonical bytes (sorted keys, fixed indentation, shortest
round-trip floats), so identical content always serializes identically.
Readers validate every file invariant before returning and reject each
violation class with its own error type; see ``lorank.errors``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
from pathlib import Path
from typing import Mapping, Sequence

from lorank.allocator import AllocationTrace, RankPattern
from lorank.efim import ScoreVector
from lorank.errors import (
    PatternBoundsError,
    PatternBudgetError,
    PatternFormatError,
    PatternJsonError,
    PatternRatioError,
    PatternSchemaError,
    ShapeError,
)
from lorank.lora import scaled_alpha

__all__ = [
    "SCHEMA_VERSION",
    "canonical_json_bytes",
    "write_pattern",
    "read_pattern",
    "write_scores",
    "read_scores",
    "write_rank_map",
    "render_trace",
    "write_trace",
]

SCHEMA_VERSION = 1
PROVENANCES = ("fim", "random", "uniform")
CALIBRATION_KEYS = ("n_batches", "aggregation", "seed", "r_min", "r_max")

_MODULE_ID_RE = re.compile(r"^layers\.(\d+)\.(.+)$")


def canonical_json_bytes(doc) -> bytes:
    """Canonical UTF-8 JSON: sorted keys, two-space indent, trailing newline."""
    text = json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False,
                      allow_nan=False)
    return (text + "\n").encode("utf-8")


def write_pattern(
    pattern: RankPattern,
    base_alpha: float,
    base_rank: int,
    calibration: Mapping,
    path,
) -> None:
    """Serialize a rank pattern with its derived alpha pattern.

    ``calibration`` must provide n_batches, aggregation, seed, r_min, r_max.
    The alpha pattern is derived here so the ratio invariant is checkable on
    the wire.
    """
    missing = [k for k in CALIBRATION_KEYS if k not in calibration]
    if missing:
        raise PatternFormatError(f"calibration metadata missing {missing}")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "rank-pattern",
        "provenance": pattern.provenance,
        "base_rank": base_rank,
        "base_alpha": base_alpha,
        "budget": pattern.budget,
        "modules": pattern.module_ids(),
        "rank_pattern": {mid: r for mid, r in pattern.entries},
        "alpha_pattern": {
            mid: scaled_alpha(base_alpha, base_rank, r)
            for mid, r in pattern.entries
        },
        "calibration": {k: calibration[k] for k in CALIBRATION_KEYS},
    }
    Path(path).write_bytes(canonical_json_bytes(doc))


def _load_json(path) -> dict:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PatternFormatError(f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise PatternJsonError(f"{path}: malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PatternFormatError(f"{path}: top level is not an object")
    return doc


def _check_schema(doc: dict, path, kind: str) -> None:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise PatternSchemaError(
            f"{path}: unknown schema_version {version!r} (expected {SCHEMA_VERSION})"
        )
    if doc.get("kind") != kind:
        raise PatternFormatError(
            f"{path}: kind is {doc.get('kind')!r}, expected {kind!r}"
        )


def read_pattern(path) -> tuple[RankPattern, dict[str, float], dict]:
    """Load and validate a pattern file.

    Returns (pattern, alpha_pattern, metadata) where metadata carries
    base_rank, base_alpha, and the calibration block. Every invariant is
    checked before returning; each violation raises its named error.
    """
    doc = _load_json(path)
    _check_schema(doc, path, "rank-pattern")
    for key in ("base_rank", "base_alpha", "budget", "modules",
                "rank_pattern", "alpha_pattern", "provenance", "calibration"):
        if key not in doc:
            raise PatternFormatError(f"{path}: missing field {key!r}")
    modules = doc["modules"]
    ranks_map = doc["rank_pattern"]
    alphas_map = doc["alpha_pattern"]
    if not isinstance(modules, list) or not modules:
        raise PatternFormatError(f"{path}: modules must be a non-empty array")
    if doc["provenance"] not in PROVENANCES:
        raise PatternFormatError(
            f"{path}: provenance {doc['provenance']!r} not in {PROVENANCES}"
        )
    if set(modules) != set(ranks_map) or set(modules) != set(alphas_map):
        raise PatternFormatError(
            f"{path}: modules array and pattern maps disagree"
        )
    calibration = doc["calibration"]
    if not isinstance(calibration, dict):
        raise PatternFormatError(f"{path}: calibration must be an object")
    for key in CALIBRATION_KEYS:
        if key not in calibration:
            raise PatternFormatError(f"{path}: calibration missing {key!r}")
    base_rank = doc["base_rank"]
    base_alpha = doc["base_alpha"]
    if not isinstance(base_rank, int) or base_rank < 1:
        raise PatternFormatError(f"{path}: base_rank must be a positive integer")
    entries = []
    for mid in modules:
        r = ranks_map[mid]
        if not isinstance(r, int) or isinstance(r, bool) or r < 1:
            raise PatternFormatError(f"{path}: rank for {mid} must be a positive integer")
        entries.append((mid, r))
    expected_budget = base_rank * len(modules)
    declared = doc["budget"]
    total = sum(r for _, r in entries)
    if declared != expected_budget or total != declared:
        raise PatternBudgetError(
            f"{path}: ranks sum to {total}, declared budget {declared}, "
            f"base_rank*L = {expected_budget}"
        )
    r_min, r_max = calibration["r_min"], calibration["r_max"]
    for mid, r in entries:
        if not (r_min <= r <= r_max):
            raise PatternBoundsError(
                f"{path}: rank {r} for {mid} outside [{r_min}, {r_max}]"
            )
    for mid, r in entries:
        expected = scaled_alpha(base_alpha, base_rank, r)
        if alphas_map[mid] != expected:
            raise PatternRatioError(
                f"{path}: alpha for {mid} is {alphas_map[mid]!r}, expected "
                f"{expected!r} (base ratio {base_alpha}/{base_rank})"
            )
    pattern = RankPattern(
        entries=entries, budget=declared, provenance=doc["provenance"]
    )
    meta = {
        "base_rank": base_rank,
        "base_alpha": base_alpha,
        "calibration": calibration,
    }
    return pattern, dict(alphas_map), meta


def write_scores(
    scores: ScoreVector,
    f_stats: Mapping[str, Mapping[str, float]],
    calibration: Mapping,
    path,
) -> None:
    """Serialize a score vector plus per-module F statistics (min/mean/max)."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "scores",
        "aggregation": scores.aggregation,
        "modules": scores.module_ids(),
        "scores": {mid: s for mid, s in scores.entries},
        "f_stats": {mid: dict(stats) for mid, stats in f_stats.items()},
        "calibration": dict(calibration),
    }
    Path(path).write_bytes(canonical_json_bytes(doc))


def read_scores(path) -> tuple[ScoreVector, dict]:
    doc = _load_json(path)
    _check_schema(doc, path, "scores")
    for key in ("aggregation", "modules", "scores", "calibration"):
        if key not in doc:
            raise PatternFormatError(f"{path}: missing field {key!r}")
    modules = doc["modules"]
    scores_map = doc["scores"]
    if not isinstance(modules, list) or not modules:
        raise PatternFormatError(f"{path}: modules must be a non-empty array")
    if set(modules) != set(scores_map):
        raise PatternFormatError(f"{path}: modules array and scores map disagree")
    entries = []
    for mid in modules:
        s = scores_map[mid]
        if not isinstance(s, (int, float)) or isinstance(s, bool):
            raise PatternFormatError(f"{path}: score for {mid} is not a number")
        if not (float(s) >= 0.0) or not math.isfinite(float(s)):
            raise PatternFormatError(f"{path}: score for {mid} must be finite and >= 0")
        entries.append((mid, float(s)))
    vector = ScoreVector(entries=entries, aggregation=doc["aggregation"])
    meta = {
        "calibration": doc["calibration"],
        "f_stats": doc.get("f_stats", {}),
    }
    return vector, meta


def _parse_module_id(mid: str, position: int) -> tuple[int, str]:
    m = _MODULE_ID_RE.match(mid)
    if m:
        return int(m.group(1)), m.group(2)
    return position, "module"


def write_rank_map(patterns: Sequence[RankPattern], path) -> None:
    """Rank-map report: rows are layers, columns are module roles, cells are
    the mean allocated rank across the given patterns (one per seed).

    Appends summary rows: per-role means and contiguous layer-band means
    (quartile bands).
    """
    if not patterns:
        raise ShapeError("write_rank_map needs at least one pattern")
    first_ids = patterns[0].module_ids()
    for p in patterns[1:]:
        if p.module_ids() != first_ids:
            raise ShapeError("patterns do not share the same module set")
    cells: dict[tuple[int, str], float] = {}
    layers: list[int] = []
    roles: list[str] = []
    for pos, mid in enumerate(first_ids):
        layer, role = _parse_module_id(mid, pos)
        mean_rank = sum(p.rank_of(mid) for p in patterns) / len(patterns)
        cells[(layer, role)] = mean_rank
        if layer not in layers:
            layers.append(layer)
        if role not in roles:
            roles.append(role)
    layers.sort()
    roles.sort()

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["layer"] + roles)
    for layer in layers:
        row: list = [layer]
        for role in roles:
            v = cells.get((layer, role))
            row.append("" if v is None else repr(v))
        writer.writerow(row)
    # per-role means
    role_means = []
    for role in roles:
        vals = [cells[(l, role)] for l in layers if (l, role) in cells]
        role_means.append(repr(sum(vals) / len(vals)) if vals else "")
    writer.writerow(["role_mean"] + role_means)
    # layer-band means (up to four contiguous bands)
    n_bands = min(4, len(layers))
    band_size = math.ceil(len(layers) / n_bands)
    for b in range(n_bands):
        band = layers[b * band_size : (b + 1) * band_size]
        if not band:
            continue
        label = f"layers_{band[0]}_{band[-1]}_mean"
        row = [label]
        for role in roles:
            vals = [cells[(l, role)] for l in band if (l, role) in cells]
            row.append(repr(sum(vals) / len(vals)) if vals else "")
        writer.writerow(row)
    Path(path).write_bytes(buf.getvalue().encode("utf-8"))


def render_trace(trace: AllocationTrace) -> str:
    """Human-readable allocation trace."""
    lines = []
    lines.append(
        f"allocation trace: {len(trace.module_ids)} modules, "
        f"base_rank={trace.base_rank}, r_min={trace.r_min}, "
        f"r_max={trace.r_max}, provenance={trace.provenance}"
    )
    if trace.provenance == "uniform":
        lines.append("all scores zero: uniform fallback, rank = base_rank everywhere")
        return "\n".join(lines) + "\n"
    for it, step in enumerate(trace.iterations):
        lines.append(
            f"phase-1 iteration {it}: budget={step.budget}, "
            f"free={step.free}"
        )
        shares = ", ".join(f"{i}:{step.shares[i]!r}" for i in step.free)
        lines.append(f"  shares: {shares}")
        if step.saturated:
            lines.append(f"  saturated at r_max: {step.saturated}")
        else:
            lines.append("  no saturation, proceeding to rounding")
    if trace.zero_sum_uniform:
        lines.append(
            "free-set scores summed to zero: remaining budget split uniformly"
        )
    if trace.floors:
        floors = ", ".join(f"{i}:{trace.floors[i]}" for i in sorted(trace.floors))
        lines.append(f"phase-2 floors: {floors}")
    if trace.remainders:
        rema = ", ".join(
            f"{i}:{trace.remainders[i]!r}" for i in sorted(trace.remainders)
        )
        lines.append(f"phase-2 remainders: {rema}")
    if trace.leftover_units:
        lines.append(f"leftover units granted to: {trace.leftover_units}")
    if trace.floor_raises:
        raises = ", ".join(
            f"{i}:+{trace.floor_raises[i]}" for i in sorted(trace.floor_raises)
        )
        lines.append(f"floor raises: {raises}")
    if trace.donor_steps:
        lines.append(f"floor deficit repaid by donors (one unit each): {trace.donor_steps}")
    ranks = trace.replay()
    lines.append(
        "final ranks: "
        + ", ".join(f"{mid}={r}" for mid, r in zip(trace.module_ids, ranks))
    )
    return "\n".join(lines) + "\n"


def write_trace(trace: AllocationTrace, path) -> None:
    Path(path).write_bytes(render_trace(trace).encode("utf-8"))
