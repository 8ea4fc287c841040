"""Domain-to-task impact scores.

The main metric treats a domain update and a task update as two small
parameter steps and measures the divergence between the output
distributions they induce, approximated by the quadratic form
0.5 * delta^T F delta with F the diagonal Fisher information estimate and
delta the task-minus-domain mean gradient difference. The inner-product
alignment metric is kept as a baseline.

Raw divergences point the "wrong" way for sampling (lower divergence means
the domain mimics the task better), so per-task normalization flips and
rescales them; see :func:`normalize_impact`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import softmax

__all__ = [
    "FimDiagonal",
    "DomainGradient",
    "TaskGradient",
    "ImpactMatrix",
    "estimate_fim_diagonal",
    "fim_impact",
    "dga_impact",
    "update_domain_gradient",
    "normalize_impact",
    "build_impact_matrix",
    "save_impact_matrix",
]

MEDIAN_EPS = 1e-12


@dataclass(frozen=True)
class FimDiagonal:
    """Diagonal Fisher information estimate over a sample batch."""

    values: np.ndarray  # (d,), non-negative
    sample_count: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("values must be a vector")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("FIM diagonal must be finite and non-negative")
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class DomainGradient:
    """Running mean gradient for one training domain."""

    domain: int
    mean: np.ndarray
    weight: float = 0.0
    decay: float = 0.9

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean gradient must be finite")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must be in (0, 1]")
        object.__setattr__(self, "mean", mean)


@dataclass(frozen=True)
class TaskGradient:
    """Mean gradient over one downstream task's observation batch."""

    task: int
    mean: np.ndarray
    batch_size: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean gradient must be finite")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        object.__setattr__(self, "mean", mean)


@dataclass(frozen=True)
class ImpactMatrix:
    """k x m matrix of domain-to-task scores, raw and normalized."""

    raw: np.ndarray
    normalized: np.ndarray
    metric: str  # "fim_kl" or "dga_alignment"


def estimate_fim_diagonal(per_sample_gradients) -> FimDiagonal:
    """Mean elementwise square of per-sample gradients."""
    grads = np.asarray(per_sample_gradients, dtype=float)
    if grads.ndim == 1:
        grads = grads[None, :]
    if grads.size == 0 or grads.shape[0] == 0:
        raise ValueError("need at least one gradient sample")
    if not np.all(np.isfinite(grads)):
        raise ValueError("gradients must be finite")
    return FimDiagonal(values=np.mean(grads * grads, axis=0), sample_count=grads.shape[0])


def fim_impact(dg: DomainGradient, tg: TaskGradient, fim: FimDiagonal) -> float:
    """0.5 * sum_j F[j] * (task_mean[j] - domain_mean[j])^2, always >= 0."""
    if dg.mean.shape != tg.mean.shape or dg.mean.shape != fim.values.shape:
        raise ValueError(
            f"dimension mismatch: domain {dg.mean.shape}, task {tg.mean.shape}, "
            f"fim {fim.values.shape}"
        )
    delta = tg.mean - dg.mean
    return float(0.5 * np.sum(fim.values * delta * delta))


def dga_impact(dg: DomainGradient, tg: TaskGradient) -> float:
    """Inner product of domain and task mean gradients."""
    if dg.mean.shape != tg.mean.shape:
        raise ValueError(f"dimension mismatch: {dg.mean.shape} vs {tg.mean.shape}")
    return float(np.dot(dg.mean, tg.mean))


def update_domain_gradient(dg: DomainGradient, batch_mean, batch_weight: float) -> DomainGradient:
    """Fold one batch mean into the domain's exponential running mean.

    The first update adopts the batch mean outright; afterwards
    mean <- decay * mean + (1 - decay) * batch_mean.
    """
    batch_mean = np.asarray(batch_mean, dtype=float)
    if not np.all(np.isfinite(batch_mean)):
        raise ValueError("batch mean must be finite")
    if batch_weight <= 0:
        raise ValueError("batch_weight must be positive")
    if dg.weight > 0:
        new_mean = dg.decay * dg.mean + (1.0 - dg.decay) * batch_mean
    else:
        new_mean = batch_mean.copy()
    return DomainGradient(
        domain=dg.domain, mean=new_mean, weight=dg.weight + batch_weight, decay=dg.decay
    )


def normalize_impact(raw: np.ndarray, direction: str = "aligned") -> np.ndarray:
    """Column-wise normalization of a k x m raw impact matrix onto the simplex.

    ``aligned`` (the default) maps smaller divergences to larger scores:
    softmax over domains of -raw / (column median + eps). ``raw`` keeps the
    published orientation, softmaxing +raw / (column median + eps), and is
    exposed so the inverted-direction ablation can be run.

    An all-zero column comes out uniform.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError("expected a k x m matrix")
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise ValueError("raw impact entries must be finite and >= 0")
    if direction not in ("aligned", "raw"):
        raise ValueError(f"unknown direction {direction!r}")
    sign = -1.0 if direction == "aligned" else 1.0
    med = np.median(raw, axis=0)
    scaled = sign * raw / (med + MEDIAN_EPS)
    return softmax(scaled, axis=0)


def _normalize_alignment(raw: np.ndarray) -> np.ndarray:
    # alignment scores can be negative; scale by the column's median magnitude
    med = np.median(np.abs(raw), axis=0)
    return softmax(raw / (med + MEDIAN_EPS), axis=0)


def build_impact_matrix(
    domain_grads: list[DomainGradient],
    task_grads: list[TaskGradient],
    fims: list[FimDiagonal] | None,
    metric: str = "fim_kl",
    direction: str = "aligned",
) -> ImpactMatrix:
    """Score every (domain, task) pair and normalize per task column."""
    k, m = len(domain_grads), len(task_grads)
    if k == 0 or m == 0:
        raise ValueError("need at least one domain and one task")
    if metric == "fim_kl":
        if fims is None or len(fims) != m:
            raise ValueError("fim_kl needs one FIM diagonal per task")
        raw = np.array(
            [[fim_impact(dg, tg, fim) for tg, fim in zip(task_grads, fims)]
             for dg in domain_grads]
        )
        normalized = normalize_impact(raw, direction=direction)
    elif metric == "dga_alignment":
        raw = np.array([[dga_impact(dg, tg) for tg in task_grads] for dg in domain_grads])
        normalized = _normalize_alignment(raw)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return ImpactMatrix(raw=raw, normalized=normalized, metric=metric)


def save_impact_matrix(matrix: ImpactMatrix, destination) -> None:
    """Write the ``domain,task,raw,normalized,metric`` CSV."""
    lines = ["domain,task,raw,normalized,metric"]
    k, m = matrix.raw.shape
    for i in range(k):
        for j in range(m):
            lines.append(
                f"{i},{j},{float(matrix.raw[i, j])!r},{float(matrix.normalized[i, j])!r},{matrix.metric}"
            )
    Path(destination).write_text("\n".join(lines) + "\n", encoding="utf-8")
