"""Synthetic data generating processes and the replicated regret benchmark."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, make_folds
from .errors import ValidationError
from .nuisance import VARIANCE_FLOOR, NuisanceConfig, NuisanceSet, cross_fit
from .policy import learn_linear
from .pseudo import dr_pseudo_outcomes
from .weights import make_weights

DEFAULT_SCHEMES = ("uniform", "w0", "w0_dp:1", "w0_dp:2", "w0_dp:-1", "w0_dp:-2")
_FOLD_SEED_OFFSET = 500_000_011
_REGRET_SEED_OFFSET = 900_000_007


@dataclass(frozen=True)
class ScenarioSpec:
    """Declared synthetic DGP.

    Covariates are drawn from a uniform box [-1, 1]^d or a standard normal;
    arm probabilities are a softmax of per-arm linear logits in [1, x]; arm
    means are polynomials in per-coordinate powers of x up to mean_degree;
    noise is Gaussian with a per-arm standard deviation.
    """

    name: str
    d: int
    m: int
    covariate_law: str           # "uniform" | "normal"
    propensity_coef: np.ndarray  # (m, d+1) softmax logits
    mean_coef: np.ndarray        # (m, 1 + d*mean_degree)
    noise_sd: np.ndarray         # (m,)
    mean_degree: int = 1

    def __post_init__(self):
        pc = np.atleast_2d(np.asarray(self.propensity_coef, dtype=float))
        mc = np.atleast_2d(np.asarray(self.mean_coef, dtype=float))
        sd = np.broadcast_to(np.asarray(self.noise_sd, dtype=float), (self.m,)).copy()
        if self.covariate_law not in ("uniform", "normal"):
            raise ValidationError(f"covariate_law must be uniform or normal, got {self.covariate_law!r}")
        if self.d < 1 or self.m < 2 or self.mean_degree < 1:
            raise ValidationError("need d >= 1, m >= 2, mean_degree >= 1")
        if pc.shape != (self.m, self.d + 1):
            raise ValidationError(f"propensity_coef must be ({self.m}, {self.d + 1}), got {pc.shape}")
        k = 1 + self.d * self.mean_degree
        if mc.shape != (self.m, k):
            raise ValidationError(f"mean_coef must be ({self.m}, {k}), got {mc.shape}")
        if np.any(sd < 0):
            raise ValidationError("noise_sd must be nonnegative")
        if not (np.all(np.isfinite(pc)) and np.all(np.isfinite(mc)) and np.all(np.isfinite(sd))):
            raise ValidationError("scenario coefficients must be finite")
        for name, arr in (("propensity_coef", pc), ("mean_coef", mc), ("noise_sd", sd)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def sample_covariates(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.covariate_law == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, self.d))
        return rng.standard_normal(size=(n, self.d))

    def _poly_features(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        cols = [np.ones((x.shape[0], 1))]
        cols += [x**p for p in range(1, self.mean_degree + 1)]
        return np.hstack(cols)

    def mean_matrix(self, x: np.ndarray) -> np.ndarray:
        return self._poly_features(x) @ self.mean_coef.T

    def propensity_matrix(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        z = np.hstack([np.ones((x.shape[0], 1)), x])
        logits = z @ self.propensity_coef.T
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        p = np.clip(p, 1e-12, None)
        return p / p.sum(axis=1, keepdims=True)

    def to_jsonable(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "m": self.m,
            "covariate_law": self.covariate_law,
            "propensity_coef": self.propensity_coef.tolist(),
            "mean_coef": self.mean_coef.tolist(),
            "noise_sd": self.noise_sd.tolist(),
            "mean_degree": self.mean_degree,
        }


def generate(scenario: ScenarioSpec, n: int, seed: int) -> tuple[Dataset, NuisanceSet]:
    """Draw a dataset from the scenario, plus its true nuisances as an oracle set."""
    if n < 1:
        raise ValidationError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    x = scenario.sample_covariates(n, rng)
    prob = scenario.propensity_matrix(x)
    draws = rng.random(n)
    actions = (prob.cumsum(axis=1) < draws[:, None]).sum(axis=1)
    actions = np.minimum(actions, scenario.m - 1)
    mu = scenario.mean_matrix(x)
    noise = rng.standard_normal(n) * scenario.noise_sd[actions]
    outcomes = mu[np.arange(n), actions] + noise
    data = Dataset(covariates=x, actions=actions, outcomes=outcomes, m=scenario.m)
    variance = np.maximum(
        np.broadcast_to(scenario.noise_sd**2, (n, scenario.m)), VARIANCE_FLOOR
    )
    oracle = NuisanceSet(
        propensity=prob, outcome_mean=mu, variance=variance, provenance="oracle"
    )
    return data, oracle


def default_scenarios() -> list[ScenarioSpec]:
    """Three shipped binary scenarios with qualitatively different overlap.

    S-A places the optimal decision boundary where overlap is strongest, so
    retargeted weights should beat uniform ones; S-B places it deep in a
    weak-overlap region, reversing the ordering; S-C keeps propensities mild
    so the schemes should be close.
    """
    return [
        ScenarioSpec(
            name="S-A",
            d=1,
            m=2,
            covariate_law="uniform",
            propensity_coef=np.array([[0.0, 0.0], [0.0, 3.0]]),
            mean_coef=np.array([[0.0, 0.0], [0.0, 0.5]]),
            noise_sd=np.array([1.0, 1.0]),
            mean_degree=1,
        ),
        ScenarioSpec(
            name="S-B",
            d=1,
            m=2,
            covariate_law="uniform",
            propensity_coef=np.array([[0.0, 0.0], [3.0, 3.0]]),
            mean_coef=np.array([[0.0, 0.0], [-0.5, 1.0]]),
            noise_sd=np.array([0.75, 0.75]),
            mean_degree=1,
        ),
        ScenarioSpec(
            name="S-C",
            d=1,
            m=2,
            covariate_law="uniform",
            propensity_coef=np.array([[0.0, 0.0], [0.0, 0.5]]),
            mean_coef=np.array([[0.0, 0.0], [0.0, 0.6]]),
            noise_sd=np.array([1.0, 1.0]),
            mean_degree=1,
        ),
    ]


def load_scenarios(path: str) -> list[ScenarioSpec]:
    """Read scenarios from a JSON file holding a list of scenario objects."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid scenario JSON: {exc}") from None
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{path}: expected a nonempty list of scenario objects")
    out = []
    for entry in raw:
        try:
            out.append(
                ScenarioSpec(
                    name=str(entry["name"]),
                    d=int(entry["d"]),
                    m=int(entry.get("m", 2)),
                    covariate_law=str(entry.get("covariate_law", "uniform")),
                    propensity_coef=np.asarray(entry["propensity_coef"], dtype=float),
                    mean_coef=np.asarray(entry["mean_coef"], dtype=float),
                    noise_sd=np.asarray(entry["noise_sd"], dtype=float),
                    mean_degree=int(entry.get("mean_degree", 1)),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"{path}: scenario missing key {exc}") from None
    return out


@dataclass(frozen=True)
class BenchmarkRow:
    scenario: str
    scheme: str
    mean_regret: float
    std_regret: float  # nan when reps < 2
    reps: int
    n: int
    seed: int


@dataclass(frozen=True)
class BenchmarkReport:
    rows: tuple[BenchmarkRow, ...]

    def cell(self, scenario: str, scheme: str) -> BenchmarkRow:
        for row in self.rows:
            if row.scenario == scenario and row.scheme == scheme:
                return row
        raise KeyError((scenario, scheme))


def _replicate(
    scenario: ScenarioSpec,
    schemes: tuple[str, ...],
    n: int,
    seed: int,
    n_folds: int,
    regret_draws: int,
    oracle_nuisances: bool,
    nuisance_config: NuisanceConfig,
) -> np.ndarray:
    """One replication: generate, cross-fit, learn per scheme, true regret."""
    data, oracle = generate(scenario, n, seed)
    if oracle_nuisances:
        nuis = oracle
    else:
        folds = make_folds(n, n_folds, seed=seed + _FOLD_SEED_OFFSET)
        nuis = cross_fit(data, folds, nuisance_config)
    pseudo = dr_pseudo_outcomes(data, nuis)
    eval_rng = np.random.default_rng(seed + _REGRET_SEED_OFFSET)
    x_eval = scenario.sample_covariates(regret_draws, eval_rng)
    mu_eval = scenario.mean_matrix(x_eval)
    best_eval = mu_eval.max(axis=1)
    out = np.empty(len(schemes))
    for s, spec in enumerate(schemes):
        w = make_weights(spec, nuis)
        result = learn_linear(w, pseudo, data, seed=seed)
        chosen = mu_eval[np.arange(x_eval.shape[0]), result.best.act(x_eval)]
        out[s] = float(np.mean(best_eval - chosen))
    return out


def run_benchmark(
    scenarios: list[ScenarioSpec],
    schemes: tuple[str, ...] = DEFAULT_SCHEMES,
    reps: int = 100,
    n: int = 500,
    base_seed: int = 0,
    n_folds: int = 2,
    regret_draws: int = 20_000,
    oracle_nuisances: bool = False,
    threads: int = 1,
    nuisance_config: NuisanceConfig | None = None,
) -> BenchmarkReport:
    """Replicated policy-learning benchmark over scenarios and weight schemes.

    Replication r uses seed base_seed + r; the report is a pure function of
    the arguments (replications may run concurrently, aggregation order is
    fixed). Regret is evaluated on the unweighted population.
    """
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    if not scenarios:
        raise ValidationError("need at least one scenario")
    schemes = tuple(schemes)
    if not schemes:
        raise ValidationError("need at least one weight scheme")
    config = nuisance_config or NuisanceConfig(folds=n_folds)
    rows = []
    for scenario in scenarios:
        regrets = np.empty((reps, len(schemes)))

        def one(r: int, scn=scenario) -> tuple[int, np.ndarray]:
            return r, _replicate(
                scn, schemes, n, base_seed + r, n_folds, regret_draws,
                oracle_nuisances, config,
            )

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for r, values in pool.map(one, range(reps)):
                    regrets[r] = values
        else:
            for r in range(reps):
                regrets[r] = one(r)[1]
        for s, scheme in enumerate(schemes):
            col = regrets[:, s]
            rows.append(
                BenchmarkRow(
                    scenario=scenario.name,
                    scheme=scheme,
                    mean_regret=float(col.mean()),
                    std_regret=float(col.std(ddof=1)) if reps >= 2 else math.nan,
                    reps=reps,
                    n=n,
                    seed=base_seed,
                )
            )
    return BenchmarkReport(rows=tuple(rows))


def _cell_text(mean: float, std: float) -> str:
    std_text = "n/a" if math.isnan(std) else f"{std:.3f}"
    return f"{mean:.3f} ({std_text})"


def render_report(report: BenchmarkReport, fmt: str = "csv") -> str:
    """Serialize a report: `csv` (long form, 6-significant-digit numbers) or
    `markdown` (scenario-by-scheme grid of `mean (std)` cells)."""
    if not report.rows:
        raise ValidationError("cannot render an empty report")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario", "scheme", "mean_regret", "std_regret", "R", "n", "seed"])
        for row in report.rows:
            writer.writerow(
                [
                    row.scenario,
                    row.scheme,
                    format(row.mean_regret, ".6g"),
                    "" if math.isnan(row.std_regret) else format(row.std_regret, ".6g"),
                    row.reps,
                    row.n,
                    row.seed,
                ]
            )
        return buf.getvalue()
    if fmt == "markdown":
        scenarios = list(dict.fromkeys(row.scenario for row in report.rows))
        schemes = list(dict.fromkeys(row.scheme for row in report.rows))
        lines = ["| scenario | " + " | ".join(schemes) + " |"]
        lines.append("|" + " --- |" * (len(schemes) + 1))
        for scn in scenarios:
            cells = []
            for scheme in schemes:
                row = report.cell(scn, scheme)
                cells.append(_cell_text(row.mean_regret, row.std_regret))
            lines.append(f"| {scn} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown report format {fmt!r}; expected csv or markdown")


def load_report(path: str) -> BenchmarkReport:
    """Read back a CSV report written by render_report (comment lines allowed)."""
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(io.StringIO("".join(lines)))
    rows = []
    for rec in reader:
        try:
            rows.append(
                BenchmarkRow(
                    scenario=rec["scenario"],
                    scheme=rec["scheme"],
                    mean_regret=float(rec["mean_regret"]),
                    std_regret=float(rec["std_regret"]) if rec["std_regret"] else math.nan,
                    reps=int(rec["R"]),
                    n=int(rec["n"]),
                    seed=int(rec["seed"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed report row {rec!r}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path}: no report rows")
    return BenchmarkReport(rows=tuple(rows))
