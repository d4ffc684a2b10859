"""Nuisance models: propensity, per-arm outcome means, residual variances.

All models are linear/logistic in [1, x]. `cross_fit` produces out-of-fold
predictions for every observation, or passes through oracle-supplied values.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FoldAssignment
from .errors import EstimationError, ValidationError

VARIANCE_FLOOR = 1e-12
_NEWTON_TOL = 1e-8
_NEWTON_MAX_ITER = 100


def add_intercept(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.hstack([np.ones((x.shape[0], 1)), x])


@dataclass(frozen=True)
class NuisanceSet:
    """Per-observation, per-arm nuisance predictions.

    propensity rows are probability vectors (sum to 1 within 1e-9, entries in
    (0,1)); variance entries are nonnegative.
    """

    propensity: np.ndarray    # (n, m)
    outcome_mean: np.ndarray  # (n, m)
    variance: np.ndarray      # (n, m)
    provenance: str

    def __post_init__(self):
        p = np.asarray(self.propensity, dtype=float)
        mu = np.asarray(self.outcome_mean, dtype=float)
        v = np.asarray(self.variance, dtype=float)
        if p.ndim != 2 or p.shape != mu.shape or p.shape != v.shape:
            raise ValidationError(
                f"nuisance matrices must share an (n, m) shape, got "
                f"{p.shape}, {mu.shape}, {v.shape}"
            )
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(v))):
            raise ValidationError("nuisance matrices must be finite")
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValidationError("propensity entries must lie strictly inside (0, 1)")
        row_sums = p.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > 1e-9:
            bad = int(np.argmax(np.abs(row_sums - 1.0)))
            raise ValidationError(f"propensity row {bad} sums to {row_sums[bad]!r}, not 1")
        if np.any(v < 0.0):
            raise ValidationError("variance entries must be nonnegative")
        for name, arr in (("propensity", p), ("outcome_mean", mu), ("variance", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.propensity.shape[0]

    @property
    def m(self) -> int:
        return self.propensity.shape[1]


@dataclass(frozen=True)
class OracleNuisances:
    """Known nuisance values supplied externally; cross_fit passes them through."""

    propensity: np.ndarray
    outcome_mean: np.ndarray
    variance: np.ndarray | None = None


@dataclass(frozen=True)
class NuisanceConfig:
    folds: int = 2
    ridge_lambda: float = 0.0
    propensity_clip: float = 0.01
    variance_mode: str = "pooled"  # "pooled" or "per_arm"
    oracle_nuisances: OracleNuisances | None = None

    def __post_init__(self):
        if self.variance_mode not in ("pooled", "per_arm"):
            raise ValidationError(
                f"variance_mode must be 'pooled' or 'per_arm', got {self.variance_mode!r}"
            )
        if not 0.0 < self.propensity_clip < 0.5:
            raise ValidationError(f"propensity_clip must be in (0, 0.5), got {self.propensity_clip}")
        if self.ridge_lambda < 0.0:
            raise ValidationError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")


class PropensityModel:
    """Multinomial logistic model on [1, x], fitted by Newton's method.

    The last arm is the reference class (coefficients pinned to zero).
    Predictions are clipped into [clip, 1-clip] and renormalized.
    """

    def __init__(self, coef: np.ndarray, m: int, clip: float, converged: bool):
        self.coef = coef  # (d+1, m) with reference column all zero
        self.m = m
        self.clip = clip
        self.converged = converged

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = add_intercept(x)
        scores = z @ self.coef
        scores -= scores.max(axis=1, keepdims=True)
        p = np.exp(scores)
        p /= p.sum(axis=1, keepdims=True)
        p = np.clip(p, self.clip, 1.0 - self.clip)
        return p / p.sum(axis=1, keepdims=True)


def fit_propensity(train: Dataset, clip: float = 0.01) -> PropensityModel:
    """Fit arm-assignment probabilities by Newton steps on the multinomial
    log-likelihood, stopping when the gradient infinity-norm drops below 1e-8
    or after 100 iterations (the latter yields a flagged, usable model).
    """
    counts = train.arm_counts()
    if np.any(counts == 0):
        missing = int(np.argmax(counts == 0))
        raise EstimationError(f"arm {missing} absent from training data")
    m = train.m
    z = add_intercept(train.covariates)
    n, p = z.shape
    k = m - 1  # free classes
    onehot = np.zeros((n, k))
    for j in range(k):
        onehot[:, j] = train.actions == j

    coef = np.zeros((p, m))
    converged = False
    for _ in range(_NEWTON_MAX_ITER):
        scores = z @ coef
        scores -= scores.max(axis=1, keepdims=True)
        prob = np.exp(scores)
        prob /= prob.sum(axis=1, keepdims=True)
        grad = z.T @ (onehot - prob[:, :k])  # (p, k)
        if np.max(np.abs(grad)) < _NEWTON_TOL:
            converged = True
            break
        hess = np.empty((k * p, k * p))
        for j in range(k):
            for l in range(k):
                w = prob[:, j] * ((1.0 if j == l else 0.0) - prob[:, l])
                hess[j * p:(j + 1) * p, l * p:(l + 1) * p] = -(z.T * w) @ z
        # Small damping keeps the step solvable when classes separate.
        a = -hess
        a[np.diag_indices_from(a)] += 1e-10 * (1.0 + np.trace(a) / a.shape[0])
        step = np.linalg.solve(a, grad.T.ravel()).reshape(k, p).T
        coef[:, :k] += step
    if not converged:
        warnings.warn(
            "propensity Newton solver hit the 100-iteration cap without "
            "meeting the gradient tolerance; returning the last iterate",
            RuntimeWarning,
            stacklevel=2,
        )
    return PropensityModel(coef=coef, m=m, clip=clip, converged=converged)


class OutcomeModel:
    """Linear mean model for one arm: x -> beta @ [1, x]."""

    def __init__(self, beta: np.ndarray, arm: int):
        self.beta = beta
        self.arm = arm

    def predict(self, x: np.ndarray) -> np.ndarray:
        return add_intercept(x) @ self.beta


def fit_outcome_regression(train: Dataset, arm: int, ridge: float = 0.0) -> OutcomeModel:
    """Least-squares fit of the outcome on [1, x] over the rows with the given
    arm, with an optional ridge penalty lambda * ||beta||^2 on all coefficients.
    """
    if not 0 <= arm < train.m:
        raise ValidationError(f"arm {arm} outside {{0..{train.m - 1}}}")
    if ridge < 0:
        raise ValidationError(f"ridge penalty must be >= 0, got {ridge}")
    rows = np.flatnonzero(train.actions == arm)
    if rows.size == 0:
        raise EstimationError(f"arm {arm} has no observations")
    z = add_intercept(train.covariates[rows])
    y = train.outcomes[rows]
    gram = z.T @ z
    if ridge > 0:
        gram = gram + ridge * np.eye(z.shape[1])
    elif np.linalg.matrix_rank(gram) < z.shape[1]:
        raise EstimationError(
            f"singular Gram matrix for arm {arm} ({rows.size} rows, "
            f"{z.shape[1]} coefficients); pass ridge_lambda > 0"
        )
    beta = np.linalg.solve(gram, z.T @ y)
    return OutcomeModel(beta=beta, arm=arm)


def estimate_variance(
    train: Dataset, models: list[OutcomeModel], mode: str = "pooled"
) -> np.ndarray:
    """Residual-variance estimates per arm, constant in x.

    per_arm: mean squared residual on each arm. pooled: one value shared by
    all arms. Both floored at 1e-12. Returns a length-m vector either way.
    """
    if mode not in ("pooled", "per_arm"):
        raise ValidationError(f"variance mode must be 'pooled' or 'per_arm', got {mode!r}")
    if len(models) != train.m:
        raise ValidationError(f"expected {train.m} mean models, got {len(models)}")
    sq_by_arm = []
    for arm, model in enumerate(models):
        rows = np.flatnonzero(train.actions == arm)
        if rows.size == 0:
            raise EstimationError(f"arm {arm} has no observations for variance estimation")
        resid = train.outcomes[rows] - model.predict(train.covariates[rows])
        sq_by_arm.append(resid**2)
    if mode == "pooled":
        pooled = float(np.mean(np.concatenate(sq_by_arm)))
        out = np.full(train.m, pooled)
    else:
        out = np.array([float(np.mean(sq)) for sq in sq_by_arm])
    return np.maximum(out, VARIANCE_FLOOR)


def _subset(data: Dataset, rows: np.ndarray) -> Dataset:
    return Dataset(
        covariates=data.covariates[rows],
        actions=data.actions[rows],
        outcomes=data.outcomes[rows],
        m=data.m,
    )


def _oracle_passthrough(data: Dataset, config: NuisanceConfig) -> NuisanceSet:
    oracle = config.oracle_nuisances
    prop = np.asarray(oracle.propensity, dtype=float)
    mu = np.asarray(oracle.outcome_mean, dtype=float)
    expected = (data.n, data.m)
    if prop.shape != expected or mu.shape != expected:
        raise ValidationError(
            f"oracle matrices must have shape {expected}, got {prop.shape} and {mu.shape}"
        )
    if oracle.variance is not None:
        var = np.asarray(oracle.variance, dtype=float)
        if var.shape != expected:
            raise ValidationError(f"oracle variance must have shape {expected}, got {var.shape}")
        var = np.maximum(var, VARIANCE_FLOOR)
    else:
        resid = data.outcomes - mu[np.arange(data.n), data.actions]
        if config.variance_mode == "pooled":
            var = np.full(expected, max(float(np.mean(resid**2)), VARIANCE_FLOOR))
        else:
            var = np.empty(expected)
            for arm in range(data.m):
                rows = data.actions == arm
                if not rows.any():
                    raise EstimationError(f"arm {arm} has no observations for variance estimation")
                var[:, arm] = max(float(np.mean(resid[rows] ** 2)), VARIANCE_FLOOR)
    return NuisanceSet(propensity=prop, outcome_mean=mu, variance=var, provenance="oracle")


def cross_fit(data: Dataset, folds: FoldAssignment, config: NuisanceConfig = NuisanceConfig()) -> NuisanceSet:
    """Out-of-fold nuisance predictions for every observation.

    Each observation's predictions come from models trained on the other
    folds, so no row influences its own nuisances. With `config.oracle_nuisances` set,
    the supplied values pass through unchanged (no clipping, no refitting).
    """
    if config.oracle_nuisances is not None:
        return _oracle_passthrough(data, config)
    if folds.n != data.n:
        raise ValidationError(f"fold assignment covers {folds.n} rows, dataset has {data.n}")
    n, m = data.n, data.m
    prop = np.empty((n, m))
    mu = np.empty((n, m))
    var = np.empty((n, m))
    for fold in range(folds.n_folds):
        held_out = folds.members(fold)
        train = _subset(data, folds.complement(fold))
        try:
            prop_model = fit_propensity(train, clip=config.propensity_clip)
            mean_models = [
                fit_outcome_regression(train, arm, ridge=config.ridge_lambda)
                for arm in range(m)
            ]
            fold_var = estimate_variance(train, mean_models, mode=config.variance_mode)
        except (ValidationError, EstimationError) as exc:
            raise type(exc)(f"fold {fold}: {exc}") from exc
        x_out = data.covariates[held_out]
        prop[held_out] = prop_model.predict_proba(x_out)
        for arm, model in enumerate(mean_models):
            mu[held_out, arm] = model.predict(x_out)
        var[held_out] = fold_var
    return NuisanceSet(
        propensity=prop,
        outcome_mean=mu,
        variance=var,
        provenance=f"fitted(K={folds.n_folds})",
    )


def load_oracle_nuisances(path: str) -> OracleNuisances:
    """Read oracle nuisances from CSV with columns phi_0..phi_{m-1},
    mu_0..mu_{m-1}, and optionally var_0..var_{m-1}.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        phi_cols = sorted([h for h in header if h.startswith("phi_")], key=lambda s: int(s[4:]))
        mu_cols = sorted([h for h in header if h.startswith("mu_")], key=lambda s: int(s[3:]))
        var_cols = sorted([h for h in header if h.startswith("var_")], key=lambda s: int(s[4:]))
        if not phi_cols or len(phi_cols) != len(mu_cols):
            raise ValidationError(
                f"{path}: need matching phi_*/mu_* column groups, got {header}"
            )
        if var_cols and len(var_cols) != len(phi_cols):
            raise ValidationError(f"{path}: var_* columns must match phi_* count")
        idx = {name: header.index(name) for name in header}
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    def block(cols: list[str]) -> np.ndarray:
        try:
            return np.array([[float(r[idx[c]]) for c in cols] for r in rows])
        except ValueError as exc:
            raise ValidationError(f"{path}: non-numeric cell: {exc}") from None

    return OracleNuisances(
        propensity=block(phi_cols),
        outcome_mean=block(mu_cols),
        variance=block(var_cols) if var_cols else None,
    )
