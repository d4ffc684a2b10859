"""Weight schemes for retargeted objectives, gap statistics, and the
variance proxy / selection ratios used to compare schemes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .nuisance import NuisanceSet

DEFAULT_GAP_FLOOR = 1e-3


@dataclass(frozen=True)
class WeightScheme:
    """Named nonnegative per-observation weights, normalized to sample mean 1."""

    kind: str
    weights: np.ndarray  # (n,), mean 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValidationError(f"weights must be a nonempty vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(w.mean() - 1.0) > 1e-9:
            raise ValidationError(f"weights must have sample mean 1, got {w.mean()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_raw(cls, kind: str, raw: np.ndarray) -> "WeightScheme":
        """Normalize raw nonnegative weights to sample mean 1."""
        raw = np.asarray(raw, dtype=float)
        if not np.all(np.isfinite(raw)) or np.any(raw < 0):
            raise ValidationError("raw weights must be finite and nonnegative")
        mean = raw.mean()
        if mean <= 0:
            raise ValidationError("raw weights must have positive mean")
        return cls(kind=kind, weights=raw / mean)

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class GapStatistics:
    """Per-observation outcome-mean gaps.

    gap: best arm mean minus the best strictly smaller arm mean (0 on an
    all-arm tie). spread: best minus worst. gap == spread when m = 2.
    """

    gap: np.ndarray     # (n,), >= 0
    spread: np.ndarray  # (n,), >= gap

    def __post_init__(self):
        g = np.asarray(self.gap, dtype=float)
        s = np.asarray(self.spread, dtype=float)
        if g.shape != s.shape or g.ndim != 1:
            raise ValidationError("gap and spread must be equal-length vectors")
        if np.any(g < 0) or np.any(s < g):
            raise ValidationError("require 0 <= gap <= spread elementwise")
        g.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "gap", g)
        object.__setattr__(self, "spread", s)


def uniform_weights(n: int) -> WeightScheme:
    return WeightScheme(kind="uniform", weights=np.ones(n))


def homoskedastic_weights(nuis: NuisanceSet) -> WeightScheme:
    """Retargeting weights under constant residual variance.

    Raw weight per row: 1 / (sum_a 1/phi_hat(a|x) + m/2 - 1); for m = 2 this
    is phi_hat(+|x) * phi_hat(-|x) up to scale.
    """
    p = nuis.propensity
    if np.any(p <= 0):
        raise ValidationError("propensities must be strictly positive")
    raw = 1.0 / ((1.0 / p).sum(axis=1) + nuis.m / 2.0 - 1.0)
    return WeightScheme.from_raw("w0", raw)


def gap_statistics(nuis: NuisanceSet) -> GapStatistics:
    """Best-vs-runner-up and best-vs-worst gaps of the outcome-mean matrix.

    Ties are exact: if all arms share the top mean the gap is 0; flooring is
    left to the consumers that need it (negative powers, ratio denominators).
    """
    mu = nuis.outcome_mean
    top = mu.max(axis=1)
    bottom = mu.min(axis=1)
    below = mu < top[:, None]
    runner_up = np.where(below, mu, -np.inf).max(axis=1)
    gap = np.where(np.isfinite(runner_up), top - runner_up, 0.0)
    return GapStatistics(gap=gap, spread=top - bottom)


def curvature_scaled_weights(
    base: WeightScheme,
    gaps: GapStatistics,
    power: float,
    floor: float = DEFAULT_GAP_FLOOR,
) -> WeightScheme:
    """Rescale a weight scheme by the local outcome gap raised to a power.

    Gaps are floored at `floor` before exponentiation so negative powers stay
    finite near ties. power = 0 returns the base scheme unchanged.
    """
    if not np.isfinite(power):
        raise ValidationError(f"power must be finite, got {power}")
    if floor <= 0:
        raise ValidationError(f"gap floor must be > 0, got {floor}")
    if gaps.gap.shape[0] != base.n:
        raise ValidationError("gap statistics and weights have mismatched lengths")
    if power == 0:
        return base
    raw = base.weights * np.maximum(gaps.gap, floor) ** power
    return WeightScheme.from_raw(f"{base.kind}_dp:{power:g}", raw)


def _row_noise(nuis: NuisanceSet) -> np.ndarray:
    """Per-row noise term of the variance proxy: sum_a var(a|x)/phi(a|x) plus
    the cross-arm correction (m/2 - 1) * pooled variance."""
    pooled = float(nuis.variance.mean())
    return (nuis.variance / nuis.propensity).sum(axis=1) + (nuis.m / 2.0 - 1.0) * pooled


def variance_proxy(w: WeightScheme, nuis: NuisanceSet) -> float:
    """Scale-invariant proxy for the sampling variance of the w-weighted
    objective: mean(w^2 * c) / mean(w)^2 with c the per-row noise term.

    Under constant variance its pointwise minimizer over weight schemes is the
    homoskedastic retargeting scheme.
    """
    if w.n != nuis.n:
        raise ValidationError(f"weights cover {w.n} rows, nuisances {nuis.n}")
    c = _row_noise(nuis)
    return float(np.mean(w.weights**2 * c) / np.mean(w.weights) ** 2)


def selection_ratio(
    w: WeightScheme,
    gaps: GapStatistics,
    nuis: NuisanceSet,
    direction: str,
    floor: float = DEFAULT_GAP_FLOOR,
) -> float:
    """Noise-to-signal ratio for scheme selection.

    times_delta: sqrt(proxy) / mean(w * gap) — favors schemes that put weight
    where arm means are far apart. over_delta: sqrt(proxy) / mean(w / gap)
    (gap floored) — favors weight near the decision margin.
    """
    if direction not in ("times_delta", "over_delta"):
        raise ValidationError(
            f"direction must be 'times_delta' or 'over_delta', got {direction!r}"
        )
    if gaps.gap.shape[0] != w.n:
        raise ValidationError("gap statistics and weights have mismatched lengths")
    if direction == "times_delta":
        denom = float(np.mean(w.weights * gaps.gap))
    else:
        if floor <= 0:
            raise ValidationError(f"gap floor must be > 0, got {floor}")
        denom = float(np.mean(w.weights / np.maximum(gaps.gap, floor)))
    if denom <= 0:
        raise ValidationError(
            f"selection ratio denominator is {denom!r} for direction {direction!r}; "
            "weights and gaps have no overlap (all weighted gaps are zero)"
        )
    return float(np.sqrt(variance_proxy(w, nuis)) / denom)


def make_weights(
    spec: str, nuis: NuisanceSet, gap_floor: float = DEFAULT_GAP_FLOOR
) -> WeightScheme:
    """Build a weight scheme from its CLI name: `uniform`, `w0`, or `w0_dp:<p>`."""
    if spec == "uniform":
        return uniform_weights(nuis.n)
    if spec == "w0":
        return homoskedastic_weights(nuis)
    if spec.startswith("w0_dp:"):
        try:
            power = float(spec.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad weight power in {spec!r}") from None
        base = homoskedastic_weights(nuis)
        return curvature_scaled_weights(base, gap_statistics(nuis), power, floor=gap_floor)
    raise ValidationError(
        f"unknown weight scheme {spec!r}; expected uniform, w0, or w0_dp:<p>"
    )
