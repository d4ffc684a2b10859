"""Dataset container, CSV ingestion, and fold assignment for cross-fitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observational sample of (covariates, action, outcome) triples.

    Actions are dense integer labels in {0..m-1}; for binary problems the
    convention is 1 = treated, 0 = untreated.
    """

    covariates: np.ndarray  # (n, d) float
    actions: np.ndarray     # (n,) int, values in {0..m-1}
    outcomes: np.ndarray    # (n,) float
    m: int

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim != 2:
            raise ValidationError(f"covariates must be 2-d, got shape {x.shape}")
        a = np.asarray(self.actions, dtype=int)
        y = np.asarray(self.outcomes, dtype=float)
        n = x.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one observation")
        if a.shape != (n,) or y.shape != (n,):
            raise ValidationError(
                f"length mismatch: covariates n={n}, actions {a.shape}, outcomes {y.shape}"
            )
        if self.m < 2:
            raise ValidationError(f"action count m must be >= 2, got {self.m}")
        if a.min() < 0 or a.max() >= self.m:
            bad = int(np.argmax((a < 0) | (a >= self.m)))
            raise ValidationError(
                f"action label {a[bad]} at row {bad} outside {{0..{self.m - 1}}}"
            )
        if not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise ValidationError(f"non-finite covariate at row {i}, column x{j + 1}")
        if not np.all(np.isfinite(y)):
            i = int(np.argmax(~np.isfinite(y)))
            raise ValidationError(f"non-finite outcome at row {i}")
        object.__setattr__(self, "covariates", _freeze(x))
        object.__setattr__(self, "actions", _freeze(a))
        object.__setattr__(self, "outcomes", _freeze(y))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def arm_counts(self) -> np.ndarray:
        return np.bincount(self.actions, minlength=self.m)


@dataclass(frozen=True)
class FoldAssignment:
    """Balanced fold labels for cross-fitting; fold sizes differ by at most 1."""

    fold_of: np.ndarray  # (n,) int in {0..n_folds-1}
    n_folds: int

    def __post_init__(self):
        f = np.asarray(self.fold_of, dtype=int)
        if self.n_folds < 2:
            raise ValidationError(f"fold count must be >= 2, got {self.n_folds}")
        sizes = np.bincount(f, minlength=self.n_folds)
        if f.min() < 0 or f.max() >= self.n_folds or np.any(sizes == 0):
            raise ValidationError("every fold index in {0..K-1} must appear at least once")
        if sizes.max() - sizes.min() > 1:
            raise ValidationError(f"fold sizes must differ by at most 1, got {sizes.tolist()}")
        object.__setattr__(self, "fold_of", _freeze(f))

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


@dataclass(frozen=True)
class CsvSchema:
    """Column naming for dataset files: covariates x1..xd, action `a`, outcome `y`."""

    action: str = "a"
    outcome: str = "y"
    covariate_prefix: str = "x"
    covariates: tuple[str, ...] | None = None

    def covariate_names(self, header: list[str]) -> list[str]:
        if self.covariates is not None:
            return list(self.covariates)
        names = [h for h in header if h not in (self.action, self.outcome)]
        expected = [f"{self.covariate_prefix}{i + 1}" for i in range(len(names))]
        if names != expected:
            raise ValidationError(
                f"covariate columns must be named {self.covariate_prefix}1.."
                f"{self.covariate_prefix}{len(names)} in order, got {names}"
            )
        return names


def load_dataset(path: str, schema: CsvSchema = CsvSchema(), m: int | None = None) -> Dataset:
    """Read a comma-separated dataset file into a validated Dataset.

    The file must carry a header row; the action column must parse as a
    nonnegative integer and every other referenced column as a finite float.
    `m` defaults to (max action label + 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        for col in (schema.action, schema.outcome):
            if col not in header:
                raise ValidationError(f"{path}: missing column {col!r}")
        xcols = schema.covariate_names(header)
        for col in xcols:
            if col not in header:
                raise ValidationError(f"{path}: missing column {col!r}")
        idx = {name: header.index(name) for name in header}
        xs, acts, ys = [], [], []
        for rownum, row in enumerate(reader):
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: row {rownum} has {len(row)} cells, header has {len(header)}"
                )
            try:
                xs.append([float(row[idx[c]]) for c in xcols])
                ys.append(float(row[idx[schema.outcome]]))
            except ValueError as exc:
                raise ValidationError(f"{path}: non-numeric cell at row {rownum}: {exc}") from None
            raw_a = row[idx[schema.action]]
            try:
                a_val = int(raw_a)
            except ValueError:
                raise ValidationError(
                    f"{path}: action {raw_a!r} at row {rownum} is not an integer"
                ) from None
            if a_val < 0:
                raise ValidationError(f"{path}: action label {a_val} at row {rownum} is negative")
            acts.append(a_val)
        if not acts:
            raise ValidationError(f"{path}: no data rows")
        if not np.all(np.isfinite(ys)):
            bad = int(np.argmax(~np.isfinite(np.asarray(ys))))
            raise ValidationError(f"{path}: non-finite outcome at row {bad}, column {schema.outcome!r}")
        x_arr = np.asarray(xs, dtype=float)
        if not np.all(np.isfinite(x_arr)):
            i, j = np.argwhere(~np.isfinite(x_arr))[0]
            raise ValidationError(f"{path}: non-finite covariate at row {i}, column {xcols[j]!r}")
    inferred = max(acts) + 1
    m_final = inferred if m is None else m
    if m_final < 2:
        m_final = 2
    return Dataset(covariates=x_arr, actions=np.asarray(acts), outcomes=np.asarray(ys), m=m_final)


def save_dataset(data: Dataset, path: str, schema: CsvSchema = CsvSchema()) -> None:
    """Write a Dataset so that load_dataset reproduces it bit-exactly.

    Floats are written with repr, which round-trips IEEE doubles.
    """
    xcols = [f"{schema.covariate_prefix}{i + 1}" for i in range(data.d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(xcols + [schema.action, schema.outcome])
        for i in range(data.n):
            row = [repr(float(v)) for v in data.covariates[i]]
            row.append(str(int(data.actions[i])))
            row.append(repr(float(data.outcomes[i])))
            writer.writerow(row)


def make_folds(
    n: int, n_folds: int, seed: int, actions: np.ndarray | None = None
) -> FoldAssignment:
    """Assign each of n observations to one of `n_folds` balanced folds.

    Deterministic in (n, n_folds, seed): a seeded uniform shuffle followed by a
    round-robin split. Passing `actions` shuffles within each arm first so the
    arms spread evenly across folds; overall balance is preserved either way.
    """
    if n_folds < 2:
        raise ValidationError(f"fold count must be >= 2, got {n_folds}")
    if n_folds > n:
        raise ValidationError(f"fold count {n_folds} exceeds sample size {n}")
    rng = np.random.default_rng(seed)
    if actions is None:
        order = rng.permutation(n)
    else:
        a = np.asarray(actions)
        if a.shape != (n,):
            raise ValidationError(f"actions must have shape ({n},), got {a.shape}")
        parts = [rng.permutation(np.flatnonzero(a == lab)) for lab in np.unique(a)]
        order = np.concatenate(parts)
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % n_folds
    return FoldAssignment(fold_of=fold_of, n_folds=n_folds)
