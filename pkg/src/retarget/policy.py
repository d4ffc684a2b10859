"""Policy search over weighted doubly robust values, plus regret evaluation.

Policies map covariates to actions. Finite classes are scored exhaustively;
the linear-threshold class is scored exactly (hyperplane enumeration through
point subsets) at desk scale and by a seeded multi-start heuristic beyond it.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .data import Dataset
from .errors import EstimationError, ValidationError
from .pseudo import PseudoOutcomes
from .weights import WeightScheme

EXACT_MAX_N = 500
EXACT_MAX_D = 4
_BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class ConstantPolicy:
    """Always plays one action."""

    action: int

    def act(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.full(x.shape[0], self.action, dtype=int)


@dataclass(frozen=True)
class LinearPolicy:
    """Binary threshold rule: action 1 when theta @ [1, x] > 0, else 0."""

    theta: np.ndarray  # (d+1,)

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float)
        if t.ndim != 1 or t.size < 2 or not np.all(np.isfinite(t)):
            raise ValidationError(f"theta must be a finite vector of length d+1, got {t!r}")
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    def act(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.theta.size - 1:
            raise ValidationError(
                f"policy expects {self.theta.size - 1} covariates, got {x.shape[1]}"
            )
        margin = self.theta[0] + x @ self.theta[1:]
        return (margin > 0).astype(int)


Policy = ConstantPolicy | LinearPolicy


@dataclass(frozen=True)
class PolicyClass:
    """Searchable policy set: an explicit finite list, or all linear thresholds."""

    kind: str  # "finite" | "linear"
    policies: tuple = ()
    d: int = 0

    @classmethod
    def finite(cls, policies) -> "PolicyClass":
        policies = tuple(policies)
        if not policies:
            raise ValidationError("finite policy class must be nonempty")
        return cls(kind="finite", policies=policies)

    @classmethod
    def linear(cls, d: int) -> "PolicyClass":
        if d < 1:
            raise ValidationError(f"covariate dimension must be >= 1, got {d}")
        return cls(kind="linear", d=d)

    @property
    def size(self) -> int:
        if self.kind != "finite":
            raise ValidationError("size is defined only for finite classes")
        return len(self.policies)


@dataclass(frozen=True)
class LearnResult:
    best: Policy
    best_value: float
    second_best_value: float | None = None
    value_gap: float | None = None
    tied: bool = False
    exact: bool = True
    best_index: int | None = None
    values: np.ndarray | None = None


def weighted_value(pi: Policy, w: WeightScheme, pseudo: PseudoOutcomes, data: Dataset) -> float:
    """Weighted sample mean of the score column the policy selects per row."""
    if w.n != data.n or pseudo.n != data.n:
        raise ValidationError("weights and pseudo-outcomes must cover the dataset")
    actions = np.asarray(pi.act(data.covariates))
    if actions.shape != (data.n,):
        raise ValidationError(f"policy returned shape {actions.shape}, expected ({data.n},)")
    if actions.min() < 0 or actions.max() >= data.m:
        raise ValidationError("policy returned an action outside {0..m-1}")
    return float(np.mean(w.weights * pseudo.values[np.arange(data.n), actions]))


def learn_finite(
    policy_class: PolicyClass, w: WeightScheme, pseudo: PseudoOutcomes, data: Dataset
) -> LearnResult:
    """Exhaustively score a finite class; ties go to the lowest index.

    The value gap is the best value minus the best value among policies
    strictly outside the argmax set; it is 0 (and flagged tied) when every
    policy attains the maximum.
    """
    if policy_class.kind != "finite":
        raise ValidationError("learn_finite requires a finite policy class")
    values = np.array(
        [weighted_value(pi, w, pseudo, data) for pi in policy_class.policies]
    )
    best_idx = int(np.argmax(values))
    best_value = float(values[best_idx])
    at_max = values == best_value
    tied = int(at_max.sum()) > 1
    outside = values[~at_max]
    gap = float(best_value - outside.max()) if outside.size else 0.0
    if values.size >= 2:
        second = float(np.partition(values, -2)[-2])
    else:
        second = None
    return LearnResult(
        best=policy_class.policies[best_idx],
        best_value=best_value,
        second_best_value=second,
        value_gap=gap,
        tied=tied,
        exact=True,
        best_index=best_idx,
        values=values,
    )


def _gains(w: WeightScheme, pseudo: PseudoOutcomes, data: Dataset):
    """Per-row contributions so any 0/1 labeling's value is base + labels . gain."""
    if data.m != 2:
        raise ValidationError(f"linear policy search requires m=2, got m={data.m}")
    if w.n != data.n or pseudo.n != data.n:
        raise ValidationError("weights and pseudo-outcomes must cover the dataset")
    base = float(np.mean(w.weights * pseudo.values[:, 0]))
    gain = w.weights * (pseudo.values[:, 1] - pseudo.values[:, 0]) / data.n
    return base, gain


def _lex_smaller(a: np.ndarray, b: np.ndarray) -> bool:
    for x, y in zip(a, b):
        if x != y:
            return x < y
    return False


def _unit(theta: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(theta))
    if norm == 0:
        raise EstimationError("degenerate zero policy parameter")
    return theta / norm


def _realize_labels(z: np.ndarray, theta0: np.ndarray, boundary: np.ndarray,
                    signs: np.ndarray, labels: np.ndarray) -> np.ndarray | None:
    """Nudge theta0 off the boundary rows so each lands on its requested side;
    returns None when no verified parameter exists (degenerate geometry)."""
    margins = z @ theta0
    if boundary.size == 0:
        theta = theta0
    else:
        v = np.linalg.pinv(z[boundary])  # column k satisfies z[boundary[k]] @ v_k = 1
        direction = v @ signs
        off = np.delete(np.abs(margins), boundary)
        cross = float(np.abs(z @ direction).max())
        if cross == 0:
            return None
        lo = 4.0 * max(float(np.abs(margins[boundary]).max()), 1e-15)
        hi = 0.5 * float(off.min()) / cross if off.size else max(2.0 * lo, 1e-6)
        if lo > hi:
            return None
        theta = theta0 + 0.5 * (lo + hi) * direction
    if np.array_equal(z @ theta > 0, labels):
        return theta
    return None


def _threshold_candidates_1d(z: np.ndarray):
    """All labelings a 1-d threshold rule can realize: upper and lower sets of
    the sorted covariate, with cut points between consecutive distinct values."""
    x = z[:, 1]
    distinct = np.unique(x)
    cuts = np.concatenate(
        [[distinct[0] - 1.0], (distinct[:-1] + distinct[1:]) / 2.0, [distinct[-1] + 1.0]]
    )
    labels = x[None, :] > cuts[:, None]
    thetas = [np.array([-c, 1.0]) for c in cuts]
    labels_low = ~labels
    thetas_low = [np.array([c, -1.0]) for c in cuts]
    all_labels = np.vstack([labels, labels_low])
    all_thetas = thetas + thetas_low
    return all_labels, all_thetas


def _learn_linear_exact(w: WeightScheme, pseudo: PseudoOutcomes, data: Dataset) -> LearnResult:
    z = np.hstack([np.ones((data.n, 1)), data.covariates])
    base, gain = _gains(w, pseudo, data)
    const_labels = np.vstack([np.ones(data.n, bool), np.zeros(data.n, bool)])
    const_thetas = [np.array([1.0] + [0.0] * data.d), np.array([-1.0] + [0.0] * data.d)]

    if data.d == 1:
        lab, thetas = _threshold_candidates_1d(z)
        label_rows = np.vstack([const_labels, lab])
        values = base + label_rows @ gain
        best_value = float(values.max())
        tie_rows = np.flatnonzero(values == best_value)
        best_theta = None
        for r in tie_rows:
            theta = const_thetas[r] if r < 2 else thetas[r - 2]
            if not np.array_equal(z @ theta > 0, label_rows[r]):
                continue
            theta = _unit(theta)
            if best_theta is None or _lex_smaller(theta, best_theta):
                best_theta = theta
        if best_theta is None:
            raise EstimationError("could not realize the optimal threshold labeling")
        policy = LinearPolicy(theta=best_theta)
        return LearnResult(best=policy, best_value=_policy_value(policy, w, pseudo, data), exact=True)

    # General position: the optimum lies in some cell of the arrangement of
    # row hyperplanes {theta : theta . z_i = 0}; every cell touches a null
    # direction of some d-subset, so sweep those directions and every side
    # assignment of their boundary rows.
    scale = max(float(np.abs(z).max()), 1.0)
    tol = _BOUNDARY_TOL * scale
    best_value = -np.inf
    # Degenerate instances (all gains zero) tie every labeling; the pool cap
    # bounds memory while the fixed enumeration order keeps ties deterministic.
    tie_cap = 64
    tie_pool: list[tuple] = []
    for labels, theta in zip(const_labels, const_thetas):
        value = base + float(gain[labels].sum())
        if value > best_value:
            best_value = value
            tie_pool = [(None, None, None, labels, theta)]
        elif value == best_value and len(tie_pool) < tie_cap:
            tie_pool.append((None, None, None, labels, theta))
    for subset in combinations(range(data.n), data.d):
        rows = z[list(subset)]
        _, sv, vt = np.linalg.svd(rows)
        if sv[-1] <= 1e-12 * max(sv[0], 1.0):
            continue  # degenerate subset; its cells are reachable from others
        theta0 = vt[-1]
        margins = z @ theta0
        boundary = np.flatnonzero(np.abs(margins) <= tol)
        if boundary.size > data.d + 4:
            continue
        for orient in (1.0, -1.0):
            oriented = orient * margins
            for side in product((1.0, -1.0), repeat=boundary.size):
                labels = oriented > 0
                signs = np.asarray(side)
                labels[boundary] = signs > 0
                value = base + float(gain[labels].sum())
                if value > best_value:
                    best_value = value
                    tie_pool = [(orient * theta0, boundary, signs, labels, None)]
                elif value == best_value and len(tie_pool) < tie_cap:
                    tie_pool.append((orient * theta0, boundary, signs, labels, None))
    best_theta = None
    for theta0, boundary, signs, labels, ready in tie_pool:
        theta = ready
        if theta is None:
            theta = _realize_labels(z, theta0, boundary, signs, labels)
            if theta is None:
                continue
        theta = _unit(theta)
        if best_theta is None or _lex_smaller(theta, best_theta):
            best_theta = theta
    if best_theta is None:
        raise EstimationError("could not realize the optimal labeling numerically")
    policy = LinearPolicy(theta=best_theta)
    return LearnResult(best=policy, best_value=_policy_value(policy, w, pseudo, data), exact=True)


def _policy_value(policy, w, pseudo, data) -> float:
    rows = np.arange(data.n)
    return float(np.mean(w.weights * pseudo.values[rows, policy.act(data.covariates)]))


def _refine_coordinate(z, theta, j, base, gain, max_grid=201):
    """Best value over theta_j with other coordinates fixed: piecewise constant
    in theta_j, so scan midpoints between (subsampled) sign-change breakpoints."""
    zj = z[:, j]
    rest = z @ theta - theta[j] * zj
    nonzero = np.abs(zj) > 1e-12
    if not nonzero.any():
        return theta, base + float(gain[rest > 0].sum())
    breaks = np.unique(-rest[nonzero] / zj[nonzero])
    if breaks.size > max_grid:
        take = np.linspace(0, breaks.size - 1, max_grid).astype(int)
        breaks = breaks[take]
    mids = np.concatenate([[breaks[0] - 1.0], (breaks[:-1] + breaks[1:]) / 2.0, [breaks[-1] + 1.0]])
    labels = rest[None, :] + mids[:, None] * zj[None, :] > 0
    values = base + labels @ gain
    k = int(np.argmax(values))
    out = theta.copy()
    out[j] = mids[k]
    return out, float(values[k])


def _learn_linear_approx(w, pseudo, data, seed, n_starts=32, max_passes=20) -> LearnResult:
    z = np.hstack([np.ones((data.n, 1)), data.covariates])
    base, gain = _gains(w, pseudo, data)
    rng = np.random.default_rng(seed)
    starts = [np.array([1.0] + [0.0] * data.d), np.array([-1.0] + [0.0] * data.d)]
    starts += [rng.standard_normal(data.d + 1) for _ in range(n_starts)]
    best_value = -np.inf
    best_theta = None
    for theta in starts:
        value = base + float(gain[z @ theta > 0].sum())
        for _ in range(max_passes):
            improved = False
            for j in range(data.d + 1):
                theta, new_value = _refine_coordinate(z, theta, j, base, gain)
                if new_value > value + 1e-12:
                    value = new_value
                    improved = True
            if not improved:
                break
        cand = _unit(theta)
        if value > best_value:
            best_value, best_theta = value, cand
        elif value == best_value and _lex_smaller(cand, best_theta):
            best_theta = cand
    policy = LinearPolicy(theta=best_theta)
    return LearnResult(best=policy, best_value=_policy_value(policy, w, pseudo, data), exact=False)


def learn_linear(
    w: WeightScheme,
    pseudo: PseudoOutcomes,
    data: Dataset,
    seed: int = 0,
    force_approx: bool = False,
) -> LearnResult:
    """Maximize the weighted value over linear threshold policies (m=2).

    Uses the exact enumeration when d <= 4 and n <= 500; otherwise a seeded
    multi-start coordinate search, flagged exact=False. Value ties are broken
    toward the lexicographically smallest unit-norm parameter vector.
    """
    if force_approx or data.d > EXACT_MAX_D or data.n > EXACT_MAX_N:
        return _learn_linear_approx(w, pseudo, data, seed)
    return _learn_linear_exact(w, pseudo, data)


def learn(
    policy_class: PolicyClass,
    w: WeightScheme,
    pseudo: PseudoOutcomes,
    data: Dataset,
    seed: int = 0,
) -> LearnResult:
    if policy_class.kind == "finite":
        return learn_finite(policy_class, w, pseudo, data)
    if policy_class.kind == "linear":
        return learn_linear(w, pseudo, data, seed=seed)
    raise ValidationError(f"unknown policy class kind {policy_class.kind!r}")


def true_regret(
    pi: Policy,
    scenario,
    population=None,
    n_eval: int = 100_000,
    seed: int = 0,
) -> float:
    """Monte Carlo regret of a policy on a synthetic scenario.

    Draws covariates from the scenario's law and averages the shortfall of the
    policy's true arm mean against the pointwise-best arm mean, optionally
    weighted by a population weight function of the covariates.
    """
    rng = np.random.default_rng(seed)
    x = scenario.sample_covariates(n_eval, rng)
    mu = scenario.mean_matrix(x)
    chosen = mu[np.arange(x.shape[0]), np.asarray(pi.act(x))]
    shortfall = mu.max(axis=1) - chosen
    if population is None:
        return float(shortfall.mean())
    wts = np.asarray(population(x), dtype=float)
    if wts.shape != shortfall.shape or np.any(wts < 0) or wts.sum() <= 0:
        raise ValidationError("population weights must be nonnegative with positive sum")
    return float(np.sum(wts * shortfall) / wts.sum())


def load_policy_class(path: str) -> PolicyClass:
    """Read a finite policy class from a text file.

    Each nonempty, non-comment line is either `const,<action>` or a
    comma-separated parameter vector theta_0,...,theta_d.
    """
    policies: list[Policy] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            body = line.strip()
            if not body or body.startswith("#"):
                continue
            parts = [tok.strip() for tok in body.split(",")]
            if parts[0] == "const":
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: expected const,<action>")
                policies.append(ConstantPolicy(action=int(parts[1])))
                continue
            try:
                theta = np.array([float(tok) for tok in parts])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric policy parameter") from None
            policies.append(LinearPolicy(theta=theta))
    if not policies:
        raise ValidationError(f"{path}: no policies found")
    return PolicyClass.finite(policies)
