"""Desk-scale calibration models.

A ``CalibModel`` is a stack of frozen linear layers, each carrying a LoRA
adapter, with an elementwise activation (tanh or identity) after the affine
map. Forward and backward passes are written out by hand; the backward pass
produces exactly the per-layer upstream gradients that the adapter gradient
formulas consume.

The module also provides a synthetic planted-importance task generator. Its
teacher network is a copy of the student's frozen stack with rank-1
perturbations on chosen layers, giving ground-truth layer informativeness
for validating the scoring pipeline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from lorank import linalg, lora
from lorank.backend import kernels
from lorank.errors import ConfigError, NumericError, ShapeError
from lorank.linalg import Matrix, Rng
from lorank.lora import AdapterGradients, LoraAdapter

__all__ = [
    "LinearLayer",
    "CalibModel",
    "ForwardTrace",
    "BackwardResult",
    "SyntheticTask",
    "build_model",
    "forward",
    "forward_outputs",
    "backward",
    "make_planted_task",
    "fit_adapters",
    "clone_for_training",
]

ACTIVATIONS = ("tanh", "identity")
LOSSES = ("mse", "softmax_cross_entropy")


@dataclass
class LinearLayer:
    w: Matrix  # (d_out, d_in), frozen
    adapter: LoraAdapter
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.adapter.d_in != self.w.cols or self.adapter.d_out != self.w.rows:
            raise ShapeError(
                f"{self.adapter.module_id}: adapter dims "
                f"({self.adapter.d_out}, {self.adapter.d_in}) do not match "
                f"frozen weight {self.w.shape}"
            )

    @property
    def d_in(self) -> int:
        return self.w.cols

    @property
    def d_out(self) -> int:
        return self.w.rows


@dataclass
class CalibModel:
    layers: list[LinearLayer]
    loss: str = "mse"

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a model needs at least one layer")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise ShapeError(
                    f"layer dims do not chain: {prev.d_out} -> {nxt.d_in}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].d_out

    def module_ids(self) -> list[str]:
        return [layer.adapter.module_id for layer in self.layers]

    def adapters(self) -> dict[str, LoraAdapter]:
        return {layer.adapter.module_id: layer.adapter for layer in self.layers}


@dataclass
class _LayerRecord:
    x: Matrix  # layer input
    ax: Matrix  # adapter intermediate A @ x
    h: Matrix  # post-activation output


@dataclass
class ForwardTrace:
    """Per-example forward record, self-contained for the backward pass."""

    layers: list[_LayerRecord]
    target: object  # Matrix for mse, int class index for cross-entropy
    loss: float


@dataclass
class BackwardResult:
    # upstreams[layer][example]: dL/dz at the layer's affine output
    upstreams: list[list[Matrix]]
    # batch-mean gradients per module_id
    adapter_grads: dict[str, AdapterGradients] = field(default_factory=dict)


def build_model(
    dims: Sequence[int],
    rank: int,
    alpha: float,
    rng: Rng,
    activation: str = "tanh",
    loss: str = "mse",
) -> CalibModel:
    """Generic stack: frozen Kaiming-uniform weights, fresh adapters.

    ``dims`` is the width chain [d_0, d_1, ..., d_L]; layer k maps d_k to
    d_{k+1}. Per layer, the frozen weight is drawn first, then the adapter.
    """
    if len(dims) < 2:
        raise ConfigError("dims must list at least input and output widths")
    layers = []
    for k in range(len(dims) - 1):
        d_in, d_out = dims[k], dims[k + 1]
        w = linalg.kaiming_init(d_out, d_in, rng)
        adapter = lora.new_adapter(f"layers.{k}.linear", d_in, d_out, rank, alpha, rng)
        layers.append(LinearLayer(w=w, adapter=adapter, activation=activation))
    return CalibModel(layers=layers, loss=loss)


def _layer_forward(layer: LinearLayer, x: Matrix) -> tuple[Matrix, Matrix]:
    """Returns (h, ax) for one layer and one column input."""
    z = linalg.matmul(layer.w, x)
    delta, ax = lora.forward_delta(layer.adapter, x)
    kernels.vec_add_scaled(z.data, z.data, delta.data, 1.0, len(z.data))
    if layer.activation == "tanh":
        h = Matrix(z.rows, 1)
        kernels.vec_tanh(h.data, z.data, z.rows)
    else:
        h = z
    return h, ax


def _loss_and_upstream(loss: str, h: Matrix, target) -> tuple[float, Matrix]:
    """Per-example loss value and dL/dh at the final output."""
    d = h.rows
    if loss == "mse":
        if not isinstance(target, Matrix) or target.shape != h.shape:
            raise ShapeError(f"mse target shape mismatch: output {h.shape}")
        diff = linalg.sub(h, target)
        value = math.fsum(v * v for v in diff.data) / d
        return value, linalg.scale(diff, 2.0 / d)
    # softmax cross-entropy against an integer class index
    y = int(target)
    if not 0 <= y < d:
        raise ShapeError(f"class index {y} out of range for output dim {d}")
    zmax = max(h.data)
    exps = [math.exp(v - zmax) for v in h.data]
    total = math.fsum(exps)
    value = math.log(total) - (h.data[y] - zmax)
    up = Matrix(d, 1)
    for i in range(d):
        up.data[i] = exps[i] / total
    up.data[y] -= 1.0
    return value, up


def forward(
    model: CalibModel, inputs: Sequence[Matrix], targets: Sequence
) -> tuple[list[ForwardTrace], float]:
    """Run a batch through the model.

    Returns one ForwardTrace per example and the mean loss over the batch.
    """
    if len(inputs) != len(targets):
        raise ShapeError(
            f"batch size mismatch: {len(inputs)} inputs, {len(targets)} targets"
        )
    if not inputs:
        raise ShapeError("empty batch")
    traces = []
    for x, target in zip(inputs, targets):
        if not x.is_column or x.rows != model.input_dim:
            raise ShapeError(
                f"input shape {x.shape}, expected ({model.input_dim}, 1)"
            )
        records = []
        h = x
        for idx, layer in enumerate(model.layers):
            try:
                out, ax = _layer_forward(layer, h)
            except NumericError as exc:
                raise NumericError(f"layer {idx}: {exc}") from exc
            records.append(_LayerRecord(x=h, ax=ax, h=out))
            h = out
        value, _ = _loss_and_upstream(model.loss, h, target)
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss at model output (layer {len(model.layers) - 1})")
        traces.append(ForwardTrace(layers=records, target=target, loss=value))
    mean_loss = math.fsum(t.loss for t in traces) / len(traces)
    return traces, mean_loss


def forward_outputs(model: CalibModel, inputs: Sequence[Matrix]) -> list[Matrix]:
    """Final outputs only, no loss (used for teacher targets and probes)."""
    outs = []
    for x in inputs:
        h = x
        for layer in model.layers:
            h, _ = _layer_forward(layer, h)
        outs.append(h)
    return outs


def backward(model: CalibModel, traces: Sequence[ForwardTrace]) -> BackwardResult:
    """Reverse-mode pass over a batch of forward traces.

    Per example, the gradient flows through the activation, the frozen
    weight, and the adapter path; adapter gradients are delegated to
    ``lora.adapter_gradients`` and averaged over the batch. The recorded
    upstream at each layer is dL/dz at the affine output, i.e. exactly what
    the adapter gradient formulas consume.
    """
    n_layers = len(model.layers)
    if not traces:
        raise ShapeError("backward needs at least one trace")
    for t in traces:
        if len(t.layers) != n_layers:
            raise ShapeError("trace does not match model: wrong layer count")
        for rec, layer in zip(t.layers, model.layers):
            if rec.x.rows != layer.d_in or rec.h.rows != layer.d_out:
                raise ShapeError("trace does not match model: wrong layer shapes")
    n = len(traces)
    upstreams: list[list[Matrix]] = [[] for _ in range(n_layers)]
    grad_sums: dict[str, AdapterGradients] = {}
    for trace in traces:
        h_final = trace.layers[-1].h
        _, delta = _loss_and_upstream(model.loss, h_final, trace.target)
        for idx in range(n_layers - 1, -1, -1):
            layer = model.layers[idx]
            rec = trace.layers[idx]
            if layer.activation == "tanh":
                dz = Matrix(layer.d_out, 1)
                for i in range(layer.d_out):
                    hv = rec.h.data[i]
                    dz.data[i] = delta.data[i] * (1.0 - hv * hv)
            else:
                dz = delta
            upstreams[idx].append(dz)
            grads = lora.adapter_gradients(layer.adapter, rec.x, dz, ax=rec.ax)
            mid = layer.adapter.module_id
            if mid not in grad_sums:
                grad_sums[mid] = grads
            else:
                acc = grad_sums[mid]
                kernels.vec_add_scaled(
                    acc.grad_a.data, acc.grad_a.data, grads.grad_a.data, 1.0,
                    len(acc.grad_a.data),
                )
                kernels.vec_add_scaled(
                    acc.grad_b.data, acc.grad_b.data, grads.grad_b.data, 1.0,
                    len(acc.grad_b.data),
                )
            if idx > 0:
                delta = linalg.matmul_t(layer.w, dz)
                adapter = layer.adapter
                bt_dz = linalg.matmul_t(adapter.b, dz)
                extra = linalg.matmul_t(adapter.a, bt_dz)
                kernels.vec_add_scaled(
                    delta.data, delta.data, extra.data, adapter.scaling(),
                    len(delta.data),
                )
    inv_n = 1.0 / n
    adapter_grads = {}
    for mid, sums in grad_sums.items():
        ga = Matrix(sums.grad_a.rows, sums.grad_a.cols)
        gb = Matrix(sums.grad_b.rows, sums.grad_b.cols)
        kernels.vec_scale(ga.data, sums.grad_a.data, inv_n, len(ga.data))
        kernels.vec_scale(gb.data, sums.grad_b.data, inv_n, len(gb.data))
        adapter_grads[mid] = AdapterGradients(grad_a=ga, grad_b=gb)
    return BackwardResult(upstreams=upstreams, adapter_grads=adapter_grads)


@dataclass
class SyntheticTask:
    """Planted-importance task: teacher targets with known informative layers."""

    teacher: CalibModel
    planted_importance: list[float]
    batch_size: int
    input_dim: int
    rng: Rng  # data stream, single-owner

    def next_batch(self) -> tuple[list[Matrix], list[Matrix]]:
        """Fresh batch: standard-normal inputs, teacher outputs as targets.

        Batches are drawn sequentially from the task's data stream and never
        reused (sampling without replacement from an unbounded stream).
        """
        inputs = []
        for _ in range(self.batch_size):
            x = Matrix(self.input_dim, 1)
            for i in range(self.input_dim):
                x.data[i] = self.rng.normal()
            inputs.append(x)
        targets = forward_outputs(self.teacher, inputs)
        return inputs, targets


def _matvec_chain_t(mats: Sequence[Matrix], v: Matrix) -> Matrix:
    """(mats[-1] ... mats[0])^T @ v, applied as a sequence of matvecs."""
    out = v
    for m in reversed(mats):
        out = linalg.matmul_t(m, out)
    return out


def make_planted_task(
    l_layers: int,
    dim: int,
    perturbed_layers: Sequence[int],
    magnitude,
    rng: Rng,
    *,
    rank: int = 4,
    alpha: float = 8.0,
    batch_size: int = 128,
    activation: str = "identity",
    loss: str = "mse",
    data_rng: Rng | None = None,
) -> tuple[CalibModel, SyntheticTask]:
    """Build a student model and a teacher task with planted layer importance.

    The teacher is a copy of the student's frozen stack where each perturbed
    layer's weight gains a rank-1 term ``m * u v^T``. The perturbation is
    calibrated so its location is identifiable from gradients alone:

    - the frozen maps are random orthogonal composed with a projection that
      removes the component correlated with the layer's designated adapter
      input channel (the adapter reads a feature the frozen stack discards,
      so layers downstream of a plant never see its coefficient);
    - ``v`` reads exactly that designated channel, scaled to unit coefficient
      variance, so the perturbed layer's own adapter is the unique clean fit;
    - ``u`` is scaled to unit output response, so ``magnitude`` is the RMS
      output displacement each plant contributes.

    ``planted_importance`` is therefore ground truth for per-layer task
    informativeness. ``magnitude`` may be a scalar (same for every perturbed
    layer) or a sequence aligned with ``perturbed_layers``; zero is allowed
    as a degenerate control (teacher equals student).
    """
    if l_layers < 1 or dim < 1:
        raise ConfigError(f"bad model size: {l_layers} layers, width {dim}")
    perturbed = list(perturbed_layers)
    if not perturbed:
        raise ConfigError("perturbed_layers must not be empty")
    if len(set(perturbed)) != len(perturbed):
        raise ConfigError("perturbed_layers has duplicates")
    for p in perturbed:
        if not 0 <= p < l_layers:
            raise ConfigError(f"perturbed layer {p} out of range 0..{l_layers - 1}")
    if isinstance(magnitude, (int, float)):
        mags = [float(magnitude)] * len(perturbed)
    else:
        mags = [float(m) for m in magnitude]
        if len(mags) != len(perturbed):
            raise ConfigError(
                f"{len(mags)} magnitudes for {len(perturbed)} perturbed layers"
            )
    if any(m < 0 for m in mags):
        raise ConfigError("magnitudes must be non-negative")

    # Student stack. Per layer: adapter first, then the frozen map, which is
    # a random orthogonal matrix with the adapter-channel component of its
    # input projected out (the blind channel).
    layers: list[LinearLayer] = []
    stds: list[float] = []
    vhats: list[Matrix] = []
    g = Matrix.identity(dim)  # composite frozen map, input -> current
    for k in range(l_layers):
        adapter = lora.new_adapter(f"layers.{k}.linear", dim, dim, rank, alpha, rng)
        a0 = Matrix.column(adapter.a.row(0))
        norm = a0.frobenius_norm()
        if norm < 1e-12:
            raise NumericError(f"degenerate adapter row at layer {k}")
        vhat = linalg.scale(a0, 1.0 / norm)
        gt_v = linalg.matmul_t(g, vhat)
        std = gt_v.frobenius_norm()  # std of vhat . x_{k-1} under N(0, I) inputs
        s = linalg.matmul(g, gt_v)
        s_norm = s.frobenius_norm()
        q = linalg.random_orthogonal(dim, rng)
        if s_norm > 1e-12:
            shat = linalg.scale(s, 1.0 / s_norm)
            w = linalg.sub(q, linalg.outer(linalg.matmul(q, shat), shat))
        else:
            w = q
        layers.append(LinearLayer(w=w, adapter=adapter, activation=activation))
        vhats.append(vhat)
        stds.append(std)
        g = linalg.matmul(w, g)

    student = CalibModel(layers=layers, loss=loss)

    # Teacher: same frozen stack plus the plants.
    teacher_ws = [layer.w.copy() for layer in layers]
    planted = [0.0] * l_layers
    for p, m in zip(perturbed, mags):
        planted[p] = m
        if m == 0.0:
            continue
        if stds[p] < 1e-12:
            raise NumericError(
                f"layer {p}: designated channel is invisible at its input"
            )
        v = linalg.scale(vhats[p], 1.0 / stds[p])
        u = Matrix(dim, 1)
        for i in range(dim):
            u.data[i] = rng.normal()
        ju = u
        for q_idx in range(p + 1, l_layers):
            ju = linalg.matmul(layers[q_idx].w, ju)
        resp = ju.frobenius_norm()
        if resp < 1e-12:
            raise NumericError(f"layer {p}: perturbation response vanished downstream")
        u = linalg.scale(u, 1.0 / resp)
        plant = linalg.scale(linalg.outer(u, v), m)
        teacher_ws[p] = linalg.add(teacher_ws[p], plant)

    teacher_layers = [
        LinearLayer(w=tw, adapter=layer.adapter.copy(), activation=activation)
        for tw, layer in zip(teacher_ws, layers)
    ]
    teacher = CalibModel(layers=teacher_layers, loss=loss)
    task = SyntheticTask(
        teacher=teacher,
        planted_importance=planted,
        batch_size=batch_size,
        input_dim=dim,
        rng=data_rng if data_rng is not None else rng,
    )
    return student, task


def clone_for_training(model: CalibModel) -> CalibModel:
    """Copy with fresh adapter matrices; frozen weights are shared."""
    layers = [
        LinearLayer(w=layer.w, adapter=layer.adapter.copy(), activation=layer.activation)
        for layer in model.layers
    ]
    return CalibModel(layers=layers, loss=model.loss)


def fit_adapters(
    model: CalibModel,
    task: SyntheticTask,
    steps: int,
    lr: float,
) -> tuple[CalibModel, float]:
    """Toy SGD loop over adapter matrices (A and B); frozen weights untouched.

    Test and benchmark utility, not a contract surface. Returns the trained
    copy and the mean loss on one held-out batch drawn after the last step.
    """
    trained = clone_for_training(model)
    adapters = trained.adapters()
    for _ in range(steps):
        inputs, targets = task.next_batch()
        traces, _ = forward(trained, inputs, targets)
        result = backward(trained, traces)
        for mid, grads in result.adapter_grads.items():
            adapter = adapters[mid]
            kernels.vec_add_scaled(
                adapter.a.data, adapter.a.data, grads.grad_a.data, -lr,
                len(adapter.a.data),
            )
            kernels.vec_add_scaled(
                adapter.b.data, adapter.b.data, grads.grad_b.data, -lr,
                len(adapter.b.data),
            )
    inputs, targets = task.next_batch()
    _, final_loss = forward(trained, inputs, targets)
    return trained, final_loss
