"""Gradient sketching: magnitude top-k sparsification and random projection.

The projection matrix holds unit-norm sign columns (entries are ±1/sqrt(h)
before normalization, which for that construction is already unit norm).
Applying it includes a sqrt(h/s) scale so the effective map has the
distance-preserving ±1/sqrt(s) form: pairwise squared distances survive
within the usual (1 ± eps) band once s >= 8*ln(m)/eps^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProjectionMatrix",
    "topk_sparsify",
    "make_projection",
    "project",
    "choose_target_dim",
]


@dataclass(frozen=True)
class ProjectionMatrix:
    """Random projection from dimension ``h`` down to ``s``.

    Pure function of (h, s, seed, method); safe to share across threads.
    """

    h: int
    s: int
    seed: int
    columns: np.ndarray  # (h, s), unit-norm columns
    method: str = "rademacher"

    @property
    def scale(self) -> float:
        # restores distance preservation lost to unit-column normalization
        return math.sqrt(self.h / self.s)


def topk_sparsify(g: np.ndarray, keep_ratio: float) -> np.ndarray:
    """Zero all but the ceil(keep_ratio * len) largest-magnitude entries.

    Retained entries are unchanged; ties are broken toward lower indices so
    the result is deterministic. The output never has a larger norm than
    the input, and re-applying with the same ratio is a no-op.
    """
    g = np.asarray(g)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("expected a non-empty 1-D vector")
    if not (0.0 < keep_ratio <= 1.0):
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    if not np.all(np.isfinite(g)):
        raise ValueError("vector has non-finite entries")
    keep = math.ceil(keep_ratio * g.size)
    if keep >= g.size:
        return g.copy()
    # stable sort on -|g| resolves magnitude ties toward lower indices
    order = np.argsort(-np.abs(g), kind="stable")
    out = np.zeros_like(g)
    idx = order[:keep]
    out[idx] = g[idx]
    return out


def make_projection(h: int, s: int, seed: int, method: str = "rademacher") -> ProjectionMatrix:
    """Build the (h, s) projection for the given seed.

    ``rademacher`` draws ±1/sqrt(h) entries and normalizes columns (a no-op
    for that scale, kept for clarity). ``orthogonal`` takes the Q factor of
    a Gaussian matrix, giving exactly orthonormal columns.
    """
    if h <= 0 or s <= 0:
        raise ValueError(f"dimensions must be positive, got h={h}, s={s}")
    if s > h:
        raise ValueError(f"target dim s={s} exceeds input dim h={h}")
    rng = np.random.default_rng(seed)
    if method == "rademacher":
        cols = rng.choice([-1.0, 1.0], size=(h, s)) / math.sqrt(h)
    elif method == "orthogonal":
        q, _ = np.linalg.qr(rng.normal(size=(h, s)))
        cols = q
    else:
        raise ValueError(f"unknown projection method {method!r}")
    cols = cols / np.linalg.norm(cols, axis=0, keepdims=True)
    return ProjectionMatrix(h=h, s=s, seed=seed, columns=cols, method=method)


def project(proj: ProjectionMatrix, g: np.ndarray) -> np.ndarray:
    """Apply the projection to one vector of length h, or a stack of them.

    A 2-D input is treated as rows of vectors and projected to (n, s).
    Linear in the input.
    """
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != proj.h:
        raise ValueError(f"vector length {g.shape[-1]} does not match h={proj.h}")
    return proj.scale * (g @ proj.columns)


def choose_target_dim(point_count: int, epsilon: float) -> int:
    """Target dimension ceil(8 * ln(m) / eps^2) for m points at tolerance eps."""
    if point_count < 2:
        raise ValueError(f"need at least 2 points, got {point_count}")
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    return math.ceil(8.0 * math.log(point_count) / (epsilon * epsilon))
