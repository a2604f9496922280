"""Low-rank adapter data model: forward contribution, analytic gradients,
and in-place rank resizing.

An adapter attached to a frozen (d_out x d_in) layer holds A (rank x d_in,
Kaiming-initialized) and B (d_out x rank, zero-initialized), and contributes
``(alpha/rank) * B @ A @ x`` to the layer output. Because B starts at zero,
a freshly adapted model computes exactly what the frozen model computes, and
the loss gradient at A is exactly zero while the gradient at B is not.
"""
from __future__ import annotations

from dataclasses import dataclass

from lorank import linalg
from lorank.errors import ShapeError
from lorank.linalg import Matrix, Rng

__all__ = [
    "LoraAdapter",
    "AdapterGradients",
    "new_adapter",
    "forward_delta",
    "adapter_gradients",
    "resize",
    "scaled_alpha",
]


@dataclass
class LoraAdapter:
    module_id: str
    d_in: int
    d_out: int
    rank: int
    alpha: float
    a: Matrix  # (rank, d_in)
    b: Matrix  # (d_out, rank)

    def __post_init__(self):
        if self.rank < 1:
            raise ShapeError(f"{self.module_id}: rank must be positive, got {self.rank}")
        if self.alpha <= 0:
            raise ShapeError(f"{self.module_id}: alpha must be positive, got {self.alpha}")
        if self.a.shape != (self.rank, self.d_in):
            raise ShapeError(
                f"{self.module_id}: A has shape {self.a.shape}, "
                f"expected {(self.rank, self.d_in)}"
            )
        if self.b.shape != (self.d_out, self.rank):
            raise ShapeError(
                f"{self.module_id}: B has shape {self.b.shape}, "
                f"expected {(self.d_out, self.rank)}"
            )

    def scaling(self) -> float:
        return self.alpha / self.rank

    def copy(self) -> LoraAdapter:
        return LoraAdapter(
            self.module_id, self.d_in, self.d_out, self.rank, self.alpha,
            self.a.copy(), self.b.copy(),
        )


@dataclass
class AdapterGradients:
    grad_a: Matrix  # (rank, d_in)
    grad_b: Matrix  # (d_out, rank)


def new_adapter(
    module_id: str, d_in: int, d_out: int, rank: int, alpha: float, rng: Rng
) -> LoraAdapter:
    """Fresh adapter: A Kaiming-uniform (fan-in d_in), B all zeros."""
    a = linalg.kaiming_init(rank, d_in, rng)
    b = Matrix.zeros(d_out, rank)
    return LoraAdapter(module_id, d_in, d_out, rank, alpha, a, b)


def forward_delta(adapter: LoraAdapter, x: Matrix) -> tuple[Matrix, Matrix]:
    """Adapter contribution (alpha/rank) * B @ (A @ x) for a column input.

    Returns (delta, ax) where ax = A @ x is the rank-space intermediate,
    kept for gradient reuse.
    """
    if not x.is_column or x.rows != adapter.d_in:
        raise ShapeError(
            f"{adapter.module_id}: input shape {x.shape}, expected ({adapter.d_in}, 1)"
        )
    ax = linalg.matmul(adapter.a, x)
    delta = linalg.scale(linalg.matmul(adapter.b, ax), adapter.scaling())
    return delta, ax


def adapter_gradients(
    adapter: LoraAdapter,
    x: Matrix,
    upstream: Matrix,
    ax: Matrix | None = None,
) -> AdapterGradients:
    """Analytic loss gradients at A and B for one example.

    ``upstream`` is dL/dh at this layer's affine output. The chain rule
    gives grad_a = (alpha/rank) * B^T @ upstream @ x^T and
    grad_b = (alpha/rank) * upstream @ (A@x)^T. Pass ``ax`` from
    forward_delta to avoid recomputing it.
    """
    if not x.is_column or x.rows != adapter.d_in:
        raise ShapeError(
            f"{adapter.module_id}: input shape {x.shape}, expected ({adapter.d_in}, 1)"
        )
    if not upstream.is_column or upstream.rows != adapter.d_out:
        raise ShapeError(
            f"{adapter.module_id}: upstream shape {upstream.shape}, "
            f"expected ({adapter.d_out}, 1)"
        )
    s = adapter.scaling()
    if ax is None:
        ax = linalg.matmul(adapter.a, x)
    bt_up = linalg.matmul_t(adapter.b, upstream)  # (rank, 1)
    grad_a = linalg.scale(linalg.outer(bt_up, x), s)
    grad_b = linalg.scale(linalg.outer(upstream, ax), s)
    return AdapterGradients(grad_a=grad_a, grad_b=grad_b)


def scaled_alpha(base_alpha: float, base_rank: int, rank: int) -> float:
    """Per-module alpha preserving the base alpha/rank ratio."""
    if rank == base_rank:
        return base_alpha
    return base_alpha * rank / base_rank


def resize(
    adapter: LoraAdapter,
    r_new: int,
    base_alpha: float,
    base_rank: int,
    rng: Rng,
) -> LoraAdapter:
    """Resize an adapter to a new rank.

    A keeps its leading min(r_old, r_new) rows; new rows are
    Kaiming-initialized from ``rng``. B keeps its leading columns; new
    columns are zero. The new alpha is base_alpha * r_new / base_rank so the
    effective scale alpha/rank is unchanged. Truncation keeps leading
    indices; nothing is reordered.
    """
    if r_new < 1:
        raise ShapeError(f"{adapter.module_id}: target rank must be positive, got {r_new}")
    alpha_new = scaled_alpha(base_alpha, base_rank, r_new)
    if r_new == adapter.rank:
        out = adapter.copy()
        out.alpha = alpha_new
        return out
    keep = min(adapter.rank, r_new)
    a_new = Matrix.zeros(r_new, adapter.d_in)
    a_new.data[: keep * adapter.d_in] = adapter.a.data[: keep * adapter.d_in]
    if r_new > adapter.rank:
        fresh = linalg.kaiming_init(r_new - adapter.rank, adapter.d_in, rng)
        a_new.data[keep * adapter.d_in :] = fresh.data
    b_new = Matrix.zeros(adapter.d_out, r_new)
    for i in range(adapter.d_out):
        src = i * adapter.rank
        dst = i * r_new
        b_new.data[dst : dst + keep] = adapter.b.data[src : src + keep]
    return LoraAdapter(
        adapter.module_id, adapter.d_in, adapter.d_out, r_new, alpha_new, a_new, b_new
    )
