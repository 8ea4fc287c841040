"""Sampling-probability state and the periodic update rule.

Each update turns normalized impact scores, recent loss improvements and
fitted loss-curve potentials into per-domain utilities, then moves the
probability vector by softmax + exponential moving average + floor +
renormalization, in that order. Probabilities never drop below the floor,
which keeps the importance-correction divisor in the utility well-posed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .gradtrace import DecayFit, LossHistory
from .impact import ImpactMatrix

__all__ = [
    "SamplingState",
    "UtilityVector",
    "fit_decay",
    "potential",
    "loss_improvement",
    "utilities",
    "update_probs",
    "should_update",
    "uniform_state",
    "append_schedule_log",
]

DEFAULT_BETA = 0.1
DEFAULT_TEMPERATURE = 1.0
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class SamplingState:
    """Current point on the probability simplex plus update bookkeeping."""

    k: int
    probs: np.ndarray
    prev_probs: np.ndarray
    beta: float
    tau: int
    floor: float
    update_count: int = 0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        prev = np.asarray(self.prev_probs, dtype=float)
        if probs.shape != (self.k,) or prev.shape != (self.k,):
            raise ValueError(f"probability vectors must have length k={self.k}")
        for name, vec in (("probs", probs), ("prev_probs", prev)):
            if abs(vec.sum() - 1.0) > SIMPLEX_TOL or np.any(vec < 0):
                raise ValueError(f"{name} is not on the simplex")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.floor < 0:
            raise ValueError("floor must be >= 0")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "prev_probs", prev)


@dataclass(frozen=True)
class UtilityVector:
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("utilities must be finite")
        object.__setattr__(self, "values", vals)


def uniform_state(k: int, beta: float = DEFAULT_BETA, tau: int = 1,
                  floor: float | None = None) -> SamplingState:
    """Fresh state at the uniform distribution; floor defaults to 1e-4/k."""
    if k <= 0:
        raise ValueError("k must be positive")
    p = np.full(k, 1.0 / k)
    return SamplingState(
        k=k, probs=p, prev_probs=p.copy(), beta=beta, tau=tau,
        floor=(1e-4 / k) if floor is None else floor,
    )


def fit_decay(history: LossHistory, max_iters: int = 50) -> DecayFit:
    """Least-squares fit of a*exp(-b*t) + c to a loss history, b >= 0.

    Starts from c = min(loss) - margin and a log-linear regression for
    (a, b), then refines with damped Gauss-Newton. Histories that end no
    lower than they start get the constant fallback a=0, b=0, c=mean.
    """
    if len(history.points) < 3:
        raise ValueError(f"need at least 3 points, got {len(history.points)}")
    t = history.steps()
    l = history.losses()

    def constant_fit() -> DecayFit:
        c = float(l.mean())
        return DecayFit(a=0.0, b=0.0, c=c, residual=float(np.sqrt(np.mean((l - c) ** 2))))

    if l[-1] >= l[0]:
        return constant_fit()

    span = float(l.max() - l.min())
    margin = max(1e-8, 0.05 * span)
    c0 = float(l.min()) - margin
    slope, intercept = np.polyfit(t, np.log(l - c0), 1)
    theta = np.array([math.exp(intercept), max(0.0, -slope), c0])

    def sq_err(v: np.ndarray) -> float:
        r = v[0] * np.exp(-v[1] * t) + v[2] - l
        return float(r @ r)

    best = sq_err(theta)
    for _ in range(max_iters):
        a, b, c = theta
        e = np.exp(-b * t)
        jac = np.stack([e, -a * t * e, np.ones_like(t)], axis=1)
        r = a * e + c - l
        try:
            step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        except np.linalg.LinAlgError:
            break
        scale, improved = 1.0, False
        for _ in range(20):
            cand = theta + scale * step
            cand[1] = max(cand[1], 0.0)
            err = sq_err(cand)
            if err < best - 1e-15:
                theta, best, improved = cand, err, True
                break
            scale *= 0.5
        if not improved:
            break

    if not np.all(np.isfinite(theta)):
        return constant_fit()
    return DecayFit(
        a=float(theta[0]), b=float(theta[1]), c=float(theta[2]),
        residual=float(np.sqrt(best / len(t))),
    )


def potential(fit: DecayFit, t: int, tau: int, current_loss: float) -> float:
    """Predicted loss headroom over the next window, clamped at zero."""
    if t < 0 or tau <= 0:
        raise ValueError("t must be >= 0 and tau positive")
    return max(0.0, current_loss - fit.predict(t + tau))


def loss_improvement(history: LossHistory) -> float:
    """Most recent per-task loss decrease, clamped non-negative."""
    if len(history.points) < 2:
        raise ValueError("need at least 2 points")
    return max(0.0, history.points[-2][1] - history.points[-1][1])


def utilities(
    impact: ImpactMatrix,
    loss_improvements,
    potentials,
    prev_probs,
) -> UtilityVector:
    """Per-domain utility: sum_j normalized[i][j] * (dL[j] + Lp[j]) / prev[i]."""
    prev = np.asarray(prev_probs, dtype=float)
    if np.any(prev <= 0):
        raise ValueError("prev_probs must be strictly positive (enforce a floor)")
    dl = np.asarray(loss_improvements, dtype=float)
    lp = np.asarray(potentials, dtype=float)
    k, m = impact.normalized.shape
    if dl.shape != (m,) or lp.shape != (m,):
        raise ValueError(f"expected {m} loss terms to match the impact matrix")
    if prev.shape != (k,):
        raise ValueError(f"expected {k} previous probabilities")
    vals = (impact.normalized @ (dl + lp)) / prev
    return UtilityVector(values=vals)


def update_probs(state: SamplingState, u: UtilityVector,
                 temperature: float = DEFAULT_TEMPERATURE) -> SamplingState:
    """One scheduler step: softmax target, EMA, floor, renormalize."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if u.values.shape != (state.k,):
        raise ValueError(f"expected {state.k} utilities")
    target = softmax(u.values / temperature)
    mixed = state.beta * state.probs + (1.0 - state.beta) * target
    # renormalize the mass above the floor so the floor holds exactly
    floored = np.maximum(mixed, state.floor)
    surplus = floored - state.floor
    new_probs = state.floor + surplus * (1.0 - state.k * state.floor) / surplus.sum()
    return SamplingState(
        k=state.k,
        probs=new_probs,
        prev_probs=state.probs.copy(),
        beta=state.beta,
        tau=state.tau,
        floor=state.floor,
        update_count=state.update_count + 1,
    )


def should_update(state: SamplingState, step: int) -> bool:
    """True on every tau-th step, never at step 0."""
    return step > 0 and step % state.tau == 0


def append_schedule_log(path, update_index: int, step: int,
                        probs: np.ndarray, utils: np.ndarray) -> None:
    """Append one update's rows to the ``update_index,step,domain,prob,utility`` CSV."""
    path = Path(path)
    header_needed = not path.exists() or path.stat().st_size == 0
    with open(path, "a", encoding="utf-8") as fh:
        if header_needed:
            fh.write("update_index,step,domain,prob,utility\n")
        for dom, (p, uv) in enumerate(zip(probs, utils)):
            fh.write(f"{update_index},{step},{dom},{float(p)!r},{float(uv)!r}\n")
