"""Command-line pipeline: calibrate, allocate, resize, report, baseline, sweep.

Configuration lives in one JSON file with four sections (model, task,
calibration, allocation); common flags override individual fields. Progress
and summaries go to stderr; machine-readable artifacts only to files. Exit
codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from lorank import allocator, efim, export, lora, model as model_mod
from lorank.errors import (
    ConfigError,
    ConstraintError,
    LorankError,
    NumericError,
    PatternError,
    ShapeError,
)
from lorank.linalg import Matrix, Rng

__all__ = ["RunConfig", "main"]


@dataclass
class RunConfig:
    """Pipeline configuration with the shipped defaults.

    Defaults reproduce the reference setup: eight calibration batches, mean
    aggregation, floor of one. The default synthetic task is the planted
    eight-layer model with three perturbed layers.
    """

    # model
    layers: int = 8
    dim: int = 48
    activation: str = "identity"
    base_rank: int = 4
    base_alpha: float = 8.0
    loss: str = "mse"
    model_seed: int = 42
    # task
    perturbed_layers: list[int] = field(default_factory=lambda: [1, 3, 5])
    magnitude: object = field(default_factory=lambda: [1.6, 1.3, 1.0])
    batch_size: int = 128
    data_seed: int = 1337
    # calibration
    n_batches: int = 8
    aggregation: str = "mean"
    # allocation
    r_min: int = 1
    r_max: int | None = None
    allocation_seed: int = 2024

    def resolved_r_max(self) -> int:
        return self.r_max if self.r_max is not None else 2 * self.base_rank

    @classmethod
    def from_file(cls, path) -> RunConfig:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, source=str(path))

    @classmethod
    def from_dict(cls, doc: dict, source: str = "<dict>") -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError(f"{source}: config must be a JSON object")
        known = {
            "model": ("layers", "dim", "activation", "base_rank", "base_alpha",
                      "loss", "seed"),
            "task": ("perturbed_layers", "magnitude", "batch_size", "seed"),
            "calibration": ("n_batches", "aggregation"),
            "allocation": ("r_min", "r_max", "seed"),
        }
        cfg = cls()
        for section, keys in known.items():
            block = doc.get(section, {})
            if not isinstance(block, dict):
                raise ConfigError(f"{source}: section {section!r} must be an object")
            unknown = set(block) - set(keys)
            if unknown:
                raise ConfigError(
                    f"{source}: unknown keys in {section!r}: {sorted(unknown)}"
                )
        model = doc.get("model", {})
        task = doc.get("task", {})
        calib = doc.get("calibration", {})
        alloc = doc.get("allocation", {})
        cfg.layers = int(model.get("layers", cfg.layers))
        cfg.dim = int(model.get("dim", cfg.dim))
        cfg.activation = model.get("activation", cfg.activation)
        cfg.base_rank = int(model.get("base_rank", cfg.base_rank))
        cfg.base_alpha = float(model.get("base_alpha", cfg.base_alpha))
        cfg.loss = model.get("loss", cfg.loss)
        cfg.model_seed = int(model.get("seed", cfg.model_seed))
        cfg.perturbed_layers = list(task.get("perturbed_layers", cfg.perturbed_layers))
        cfg.magnitude = task.get("magnitude", cfg.magnitude)
        cfg.batch_size = int(task.get("batch_size", cfg.batch_size))
        cfg.data_seed = int(task.get("seed", cfg.data_seed))
        cfg.n_batches = int(calib.get("n_batches", cfg.n_batches))
        cfg.aggregation = calib.get("aggregation", cfg.aggregation)
        cfg.r_min = int(alloc.get("r_min", cfg.r_min))
        if alloc.get("r_max") is not None:
            cfg.r_max = int(alloc["r_max"])
        cfg.allocation_seed = int(alloc.get("seed", cfg.allocation_seed))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.layers < 1 or self.dim < 1:
            raise ConfigError("model.layers and model.dim must be positive")
        if self.activation not in model_mod.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.loss not in model_mod.LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.aggregation not in efim.AGGREGATIONS:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}")
        if self.n_batches < 1:
            raise ConfigError("calibration.n_batches must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("task.batch_size must be >= 1")
        if not (1 <= self.r_min <= self.base_rank <= self.resolved_r_max()):
            raise ConfigError(
                "allocation bounds must satisfy 1 <= r_min <= base_rank <= r_max"
            )

    def apply_overrides(self, args: argparse.Namespace) -> None:
        if getattr(args, "seed", None) is not None:
            self.model_seed = args.seed
            self.data_seed = args.seed + 1
            self.allocation_seed = args.seed + 2
        for attr, flag in (
            ("n_batches", "n_batches"),
            ("aggregation", "agg"),
            ("r_min", "r_min"),
            ("r_max", "r_max"),
            ("base_rank", "base_rank"),
        ):
            value = getattr(args, flag, None)
            if value is not None:
                setattr(self, attr, value)
        self.validate()


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_task(cfg: RunConfig):
    """Student model plus planted synthetic task from a config."""
    return model_mod.make_planted_task(
        cfg.layers,
        cfg.dim,
        cfg.perturbed_layers,
        cfg.magnitude,
        Rng(cfg.model_seed),
        rank=cfg.base_rank,
        alpha=cfg.base_alpha,
        batch_size=cfg.batch_size,
        activation=cfg.activation,
        loss=cfg.loss,
        data_rng=Rng(cfg.data_seed),
    )


def run_calibration(cfg: RunConfig, student=None, task=None):
    """T forward/backward passes; returns (scores, f_stats, finalized F).

    Pass a prebuilt (student, task) pair to keep consuming the same data
    stream afterwards; otherwise one is built from the config.
    """
    if student is None:
        student, task = build_task(cfg)
    acc = efim.EfimAccumulator.for_model(student)
    for t in range(cfg.n_batches):
        inputs, targets = task.next_batch()
        traces, loss = model_mod.forward(student, inputs, targets)
        result = model_mod.backward(student, traces)
        acc.accumulate(result.adapter_grads)
        _log(f"calibration batch {t + 1}/{cfg.n_batches}: mean loss {loss!r}")
    f_by_module = efim.finalize(acc)
    scores = efim.score(f_by_module, cfg.aggregation)
    f_stats = {
        mid: {
            "min": min(f.data),
            "mean": math.fsum(f.data) / len(f.data),
            "max": max(f.data),
        }
        for mid, f in f_by_module.items()
    }
    return scores, f_stats, f_by_module


def _scores_calibration_meta(cfg: RunConfig) -> dict:
    return {
        "n_batches": cfg.n_batches,
        "aggregation": cfg.aggregation,
        "seed": cfg.data_seed,
        "model_seed": cfg.model_seed,
        "batch_size": cfg.batch_size,
    }


def cmd_calibrate(cfg: RunConfig, out: str) -> int:
    scores, f_stats, _ = run_calibration(cfg)
    if all(s == 0.0 for s in scores.scores()):
        _log("warning: all scores are zero (degenerate task); "
             "allocation will fall back to uniform")
    export.write_scores(scores, f_stats, _scores_calibration_meta(cfg), out)
    _log(f"wrote scores for {len(scores)} modules to {out}")
    return 0


def cmd_allocate(
    scores_path: str,
    base_rank: int,
    r_min: int,
    r_max: int,
    base_alpha: float | None,
    out: str,
    trace_out: str | None,
) -> int:
    scores, meta = export.read_scores(scores_path)
    problem = allocator.AllocationProblem(
        scores=scores, base_rank=base_rank, r_min=r_min, r_max=r_max
    )
    pattern, trace = allocator.allocate(problem)
    alpha = base_alpha if base_alpha is not None else 2.0 * base_rank
    calibration = {
        "n_batches": meta["calibration"].get("n_batches", 0),
        "aggregation": scores.aggregation,
        "seed": meta["calibration"].get("seed", 0),
        "r_min": r_min,
        "r_max": r_max,
    }
    export.write_pattern(pattern, alpha, base_rank, calibration, out)
    trace_path = trace_out if trace_out else str(out) + ".trace.txt"
    export.write_trace(trace, trace_path)
    _log(
        f"allocated budget {pattern.budget} over {len(pattern)} modules "
        f"(provenance {pattern.provenance}); pattern -> {out}, trace -> {trace_path}"
    )
    return 0


def cmd_baseline(cfg: RunConfig, out: str, trace_out: str | None) -> int:
    rng = Rng(cfg.allocation_seed)
    scores = allocator.random_scores(cfg.layers, rng)
    problem = allocator.AllocationProblem(
        scores=scores,
        base_rank=cfg.base_rank,
        r_min=cfg.r_min,
        r_max=cfg.resolved_r_max(),
    )
    pattern, trace = allocator.allocate(problem)
    pattern = allocator.RankPattern(
        entries=pattern.entries, budget=pattern.budget, provenance="random"
    )
    trace.provenance = "random"
    calibration = {
        "n_batches": 0,
        "aggregation": "random",
        "seed": cfg.allocation_seed,
        "r_min": cfg.r_min,
        "r_max": cfg.resolved_r_max(),
    }
    export.write_pattern(pattern, cfg.base_alpha, cfg.base_rank, calibration, out)
    trace_path = trace_out if trace_out else str(out) + ".trace.txt"
    export.write_trace(trace, trace_path)
    _log(f"random-score baseline pattern (budget {pattern.budget}) -> {out}")
    return 0


def apply_pattern(student, pattern, cfg: RunConfig, rng: Rng):
    """Resize every adapter in the student to its allocated rank."""
    resized_layers = []
    for layer in student.layers:
        r_new = pattern.rank_of(layer.adapter.module_id)
        adapter = lora.resize(
            layer.adapter, r_new, cfg.base_alpha, cfg.base_rank, rng
        )
        resized_layers.append(
            model_mod.LinearLayer(
                w=layer.w, adapter=adapter, activation=layer.activation
            )
        )
    return model_mod.CalibModel(layers=resized_layers, loss=student.loss)


def cmd_resize(cfg: RunConfig, pattern_path: str, out: str | None) -> int:
    pattern, _, _meta = export.read_pattern(pattern_path)
    rng = Rng(cfg.model_seed)
    student, _task = build_task(cfg)
    if set(pattern.module_ids()) != set(student.module_ids()):
        raise ConfigError(
            "pattern module set does not match the configured model"
        )
    resized = apply_pattern(student, pattern, cfg, rng)
    # function preservation at init: B = 0, so the adapter contribution is
    # identically zero for arbitrary probes
    probe_rng = Rng(cfg.data_seed)
    for layer in resized.layers:
        for _ in range(2):
            x = Matrix(layer.d_in, 1)
            for i in range(layer.d_in):
                x.data[i] = probe_rng.normal()
            delta, _ = lora.forward_delta(layer.adapter, x)
            if any(v != 0.0 for v in delta.data):
                raise NumericError(
                    f"{layer.adapter.module_id}: non-zero adapter output after "
                    "resize at initialization"
                )
    summary = {}
    for old_layer, new_layer in zip(student.layers, resized.layers):
        old_a, new_a = old_layer.adapter, new_layer.adapter
        _log(
            f"{old_a.module_id}: rank {old_a.rank} -> {new_a.rank}, "
            f"alpha {old_a.alpha!r} -> {new_a.alpha!r}"
        )
        summary[old_a.module_id] = {
            "old_rank": old_a.rank,
            "new_rank": new_a.rank,
            "old_alpha": old_a.alpha,
            "new_alpha": new_a.alpha,
        }
    total = sum(layer.adapter.rank for layer in resized.layers)
    _log(f"total rank after resize: {total} (budget {pattern.budget}); "
         "function preservation verified")
    if out:
        doc = {
            "schema_version": export.SCHEMA_VERSION,
            "kind": "resize-summary",
            "modules": summary,
            "total_rank": total,
        }
        Path(out).write_bytes(export.canonical_json_bytes(doc))
    return 0


def cmd_report(pattern_paths: list[str], out: str) -> int:
    patterns = [export.read_pattern(p)[0] for p in pattern_paths]
    export.write_rank_map(patterns, out)
    _log(f"rank map over {len(patterns)} pattern(s) -> {out}")
    return 0


def cmd_sweep(
    cfg: RunConfig,
    r_min_grid: list[int],
    n_batches_grid: list[int],
    seeds: list[int],
    out: str,
    train_steps: int,
    lr: float,
) -> int:
    if not r_min_grid or not n_batches_grid or not seeds:
        raise ConfigError("sweep grid and seed list must be non-empty")
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["r_min", "n_batches", "seed", "final_loss", "frac_at_rmax",
         "frac_le_2", "entropy", "error"]
    )
    failures = 0
    for r_min in r_min_grid:
        for n_batches in n_batches_grid:
            for seed in seeds:
                cell = RunConfig(**{**cfg.__dict__})
                cell.perturbed_layers = list(cfg.perturbed_layers)
                if isinstance(cfg.magnitude, list):
                    cell.magnitude = list(cfg.magnitude)
                cell.r_min = r_min
                cell.n_batches = n_batches
                cell.model_seed = seed
                cell.data_seed = seed + 1
                cell.allocation_seed = seed + 2
                try:
                    cell.validate()
                    row = _run_sweep_cell(cell, train_steps, lr)
                    writer.writerow(
                        [r_min, n_batches, seed] + [repr(v) for v in row] + [""]
                    )
                except LorankError as exc:
                    failures += 1
                    writer.writerow(
                        [r_min, n_batches, seed, "", "", "", "", str(exc)]
                    )
                _log(f"sweep cell r_min={r_min} n_batches={n_batches} seed={seed} done")
    Path(out).write_bytes(buf.getvalue().encode("utf-8"))
    _log(f"sweep results -> {out}")
    return 0 if failures == 0 else 3


def _run_sweep_cell(cfg: RunConfig, train_steps: int, lr: float):
    student, task = build_task(cfg)
    scores, _, _ = run_calibration(cfg, student, task)
    problem = allocator.AllocationProblem(
        scores=scores,
        base_rank=cfg.base_rank,
        r_min=cfg.r_min,
        r_max=cfg.resolved_r_max(),
    )
    pattern, _ = allocator.allocate(problem)
    rng = Rng(cfg.allocation_seed)
    resized = apply_pattern(student, pattern, cfg, rng)
    # the task stream continues past the calibration batches
    _, final_loss = model_mod.fit_adapters(resized, task, train_steps, lr)
    ranks = pattern.ranks()
    r_max = cfg.resolved_r_max()
    frac_at_rmax = sum(1 for r in ranks if r == r_max) / len(ranks)
    frac_le_2 = sum(1 for r in ranks if r <= 2) / len(ranks)
    entropy = allocator.rank_entropy(ranks)
    return final_loss, frac_at_rmax, frac_le_2, entropy


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (model/data/allocation)")
    p.add_argument("--n-batches", type=int, dest="n_batches")
    p.add_argument("--agg", choices=list(efim.AGGREGATIONS), dest="agg")
    p.add_argument("--r-min", type=int, dest="r_min")
    p.add_argument("--r-max", type=int, dest="r_max")
    p.add_argument("--base-rank", type=int, dest="base_rank")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg.apply_overrides(args)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lorank",
        description="Calibration-time rank allocation for low-rank adapters",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="estimate per-module scores")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="scores JSON path")

    p = sub.add_parser("allocate", help="turn scores into a rank pattern")
    p.add_argument("--scores", required=True, help="scores JSON from calibrate")
    p.add_argument("--base-rank", type=int, required=True)
    p.add_argument("--r-min", type=int, default=1)
    p.add_argument("--r-max", type=int, required=True)
    p.add_argument("--base-alpha", type=float, default=None,
                   help="default: 2 * base_rank")
    p.add_argument("--out", required=True, help="pattern JSON path")
    p.add_argument("--trace-out", default=None, help="default: <out>.trace.txt")

    p = sub.add_parser("baseline", help="random-score pattern at equal budget")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--trace-out", default=None)

    p = sub.add_parser("resize", help="apply a pattern to the configured model")
    _add_config_flags(p)
    p.add_argument("--pattern", required=True)
    p.add_argument("--out", default=None, help="optional summary JSON")

    p = sub.add_parser("report", help="rank-map CSV from pattern files")
    p.add_argument("--patterns", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="r_min x n_batches grid over seeds")
    _add_config_flags(p)
    p.add_argument("--r-min-grid", default="1,4,8",
                   help="comma-separated r_min values")
    p.add_argument("--n-batches-grid", default="8,32",
                   help="comma-separated batch counts")
    p.add_argument("--seeds", default="42,1337,2024",
                   help="comma-separated seeds")
    p.add_argument("--train-steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--out", required=True)
    return parser


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad {what} list {text!r}") from exc


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "calibrate":
        return cmd_calibrate(_config_from_args(args), args.out)
    if args.command == "allocate":
        return cmd_allocate(
            args.scores, args.base_rank, args.r_min, args.r_max,
            args.base_alpha, args.out, args.trace_out,
        )
    if args.command == "baseline":
        return cmd_baseline(_config_from_args(args), args.out, args.trace_out)
    if args.command == "resize":
        return cmd_resize(_config_from_args(args), args.pattern, args.out)
    if args.command == "report":
        return cmd_report(args.patterns, args.out)
    if args.command == "sweep":
        return cmd_sweep(
            _config_from_args(args),
            _parse_int_list(args.r_min_grid, "r_min grid"),
            _parse_int_list(args.n_batches_grid, "n_batches grid"),
            _parse_int_list(args.seeds, "seed"),
            args.out,
            args.train_steps,
            args.lr,
        )
    raise ConfigError(f"unknown command {args.command!r}")  # pragma: no cover


def main(argv: list[str] | None = None) -> int:
    try:
        code = run(argv)
    except NumericError as exc:
        _log(f"numeric failure: {exc}")
        code = 3
    except (ConfigError, ConstraintError, PatternError, ShapeError) as exc:
        _log(f"error: {exc}")
        code = 2
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
