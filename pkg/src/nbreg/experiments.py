"""Simulation grid, cross-validation, and the train/test benchmark pipeline.

A scenario draws a sparse coefficient vector, an AR(1)-correlated Gaussian
design, and negative binomial counts, fits the penalized estimator at a
configured penalty level, and aggregates estimation error / support
recovery over replications.  Every experiment is a pure function of its
spec including the seed: each replication owns an independent random
substream spawned from (master seed, replication index), so results do not
depend on execution order and replications may run in parallel.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data_io import StandardizationRecord, standardize_columns
from .errors import ConfigError, DomainError, NumericError
from .model import Dataset, NBModel, gradient, nb_sample, v_weights
from .penalty import PenaltyChoice, lambda_asymptotic, lambda_exact
from .solver import FitConfig, FitResult, fit

__all__ = [
    "ScenarioSpec",
    "MetricsSummary",
    "CVSpec",
    "Metrics",
    "PipelineReport",
    "gen_design",
    "gen_truth",
    "metrics",
    "run_scenario",
    "nb_deviance",
    "default_lambda_grid",
    "cross_validate",
    "prediction_error",
    "train_test_pipeline",
]


@dataclass
class ScenarioSpec:
    """One cell of the simulation grid.

    ``s`` nonzero coefficients are drawn uniformly from ``beta_range``
    (resampled when below 0.1 in magnitude, which keeps support-recovery
    metrics well posed); the design has covariance rho^|j-k|.
    """

    n: int
    p: int
    r: float
    rho: float
    s: int
    reps: int
    seed: int
    penalty: PenaltyChoice
    beta_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self) -> None:
        if self.s > self.p or self.s < 0:
            raise ConfigError("s must lie in [0, p]")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not 0.0 <= abs(self.rho) < 1.0:
            raise ConfigError("|rho| must be below 1")
        if self.n < 2 or self.p < 1:
            raise ConfigError("need n >= 2 and p >= 1")
        if self.r <= 0:
            raise ConfigError("r must be positive")


@dataclass
class MetricsSummary:
    """Replication averages for one scenario (SD of the estimation error)."""

    est_error_mean: float
    est_error_sd: float
    sensitivity: float
    specificity: float
    n_failed: int = 0


@dataclass
class CVSpec:
    """K-fold cross-validation settings for penalty-level selection."""

    lambda_grid: tuple[float, ...]
    folds: int = 10
    score: str = "deviance"
    seed: int = 0

    def __post_init__(self) -> None:
        self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
        if len(self.lambda_grid) == 0 or any(v <= 0 for v in self.lambda_grid):
            raise ConfigError("lambda_grid must hold positive values")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.score not in ("deviance", "prediction_error"):
            raise ConfigError("score must be 'deviance' or 'prediction_error'")


class Metrics(NamedTuple):
    l1_error: float
    sensitivity: float
    specificity: float


def gen_design(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Draw n rows from N(0, Sigma) with Sigma_jk = rho^|j-k| and standardize
    the columns (exact zero mean, unit mean square)."""
    if not abs(rho) < 1.0:
        raise DomainError("|rho| must be below 1")
    idx = np.arange(p)
    sigma = rho ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(sigma)
    raw = rng.standard_normal((n, p)) @ chol.T
    X, _, _, _ = standardize_columns(raw)
    return X


def gen_truth(
    p: int,
    s: int,
    beta_range: tuple[float, float],
    rng: np.random.Generator,
    min_magnitude: float = 0.1,
) -> np.ndarray:
    """Sparse coefficient vector: s support positions chosen uniformly
    without replacement, values uniform on beta_range with magnitudes below
    ``min_magnitude`` resampled."""
    if s > p or s < 0:
        raise DomainError("s must lie in [0, p]")
    lo, hi = float(beta_range[0]), float(beta_range[1])
    if hi < lo:
        raise DomainError("beta_range must be ordered (lo, hi)")
    if s > 0 and max(abs(lo), abs(hi)) < min_magnitude:
        raise ConfigError("beta_range lies entirely below the magnitude floor")
    beta = np.zeros(p)
    support = rng.choice(p, size=s, replace=False)
    for j in support:
        value = rng.uniform(lo, hi)
        attempts = 0
        while abs(value) < min_magnitude:
            value = rng.uniform(lo, hi)
            attempts += 1
            if attempts > 10_000:
                raise ConfigError("could not draw a coefficient above the floor")
        beta[j] = value
    return beta


def metrics(beta_hat: np.ndarray, beta_true: np.ndarray) -> Metrics:
    """(l1 error, sensitivity, specificity) of an estimate against the truth.

    Sensitivity is the selected fraction of true nonzeros (1 when there are
    none); specificity is the unselected fraction of true zeros (1 when
    there are none).  Selection is the exact zero pattern of beta_hat.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta_true = np.asarray(beta_true, dtype=float)
    if beta_hat.shape != beta_true.shape:
        raise DomainError("estimate and truth must have equal length")
    true_support = beta_true != 0.0
    selected = beta_hat != 0.0
    l1 = float(np.abs(beta_hat - beta_true).sum())
    n_true = int(true_support.sum())
    n_null = beta_true.shape[0] - n_true
    sens = float((true_support & selected).sum() / n_true) if n_true else 1.0
    spec = float((~true_support & ~selected).sum() / n_null) if n_null else 1.0
    return Metrics(l1_error=l1, sensitivity=sens, specificity=spec)


def _resolve_lambda(
    penalty: PenaltyChoice,
    data: Dataset,
    truth: NBModel,
    rng: np.random.Generator,
) -> float:
    if penalty.kind == "fixed":
        return float(penalty.lam)
    if penalty.kind == "asymptotic":
        _, v_n = v_weights(truth, data)
        return lambda_asymptotic(v_n, data.n, data.p, penalty.c, penalty.alpha)
    if penalty.kind == "exact":
        return lambda_exact(
            data, truth, penalty.c, penalty.alpha, penalty.mc_reps, rng
        )
    raise ConfigError(
        "cross-validated penalties need a data split; use cross_validate or "
        "train_test_pipeline"
    )


def _one_replication(spec: ScenarioSpec, seed_child) -> tuple[Metrics | None, float]:
    rng = np.random.default_rng(seed_child)
    beta_true = gen_truth(spec.p, spec.s, spec.beta_range, rng)
    X = gen_design(spec.n, spec.p, spec.rho, rng)
    truth = NBModel(r=spec.r, beta=beta_true)
    y = nb_sample(spec.r, np.exp(X @ beta_true), rng)
    data = Dataset(X=X, y=y, standardized=True)
    lam = _resolve_lambda(spec.penalty, data, truth, rng)
    result = fit(data, spec.r, FitConfig(lam=lam))
    if not result.converged:
        return None, lam
    return metrics(result.beta_hat, beta_true), lam


def run_scenario(spec: ScenarioSpec, n_jobs: int = 1) -> MetricsSummary:
    """Run all replications of one scenario and aggregate the metrics.

    Deterministic given ``spec.seed`` regardless of ``n_jobs``.  Solver
    failures are dropped from the averages and counted; more than 20%
    failures aborts with NumericError.
    """
    children = np.random.SeedSequence(spec.seed).spawn(spec.reps)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(lambda ch: _one_replication(spec, ch), children))
    else:
        outcomes = [_one_replication(spec, ch) for ch in children]

    collected = [m for m, _ in outcomes if m is not None]
    n_failed = spec.reps - len(collected)
    if len(collected) < 0.8 * spec.reps:
        raise NumericError(
            f"only {len(collected)}/{spec.reps} replications converged"
        )
    errors = np.array([m.l1_error for m in collected])
    return MetricsSummary(
        est_error_mean=float(errors.mean()),
        est_error_sd=float(errors.std(ddof=1)) if errors.size > 1 else 0.0,
        sensitivity=float(np.mean([m.sensitivity for m in collected])),
        specificity=float(np.mean([m.specificity for m in collected])),
        n_failed=n_failed,
    )


def nb_deviance(r: float, mu: np.ndarray, y: np.ndarray) -> float:
    """Mean negative binomial deviance of counts y against fitted means mu."""
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
    dev = 2.0 * (term - (y + r) * np.log((y + r) / (mu + r)))
    return float(dev.mean())


def default_lambda_grid(
    data: Dataset, r: float, size: int = 20, ratio: float = 1e-3
) -> tuple[float, ...]:
    """Log-spaced grid from the all-zero penalty level lam_max down to
    ratio * lam_max."""
    lam_max = float(np.abs(gradient(NBModel(r, np.zeros(data.p)), data)).max())
    if lam_max <= 0:
        lam_max = 1.0
    return tuple(np.geomspace(lam_max, lam_max * ratio, size))


def _held_out_score(
    score: str, r: float, mu: np.ndarray, y: np.ndarray
) -> float:
    if score == "deviance":
        return nb_deviance(r, mu, y)
    return float(np.mean((y - mu) ** 2))


def cross_validate(
    data: Dataset,
    r: float,
    cv: CVSpec,
    unpenalized: tuple[int, ...] = (),
) -> tuple[float, list[tuple[float, float]]]:
    """K-fold selection of the penalty level.

    Fold assignment is a seeded random partition; each grid value is scored
    by the mean held-out score over folds, and ties go to the larger
    (sparser) penalty.  Returns (lambda_star, score table in grid order).
    """
    if cv.folds > data.n:
        raise ConfigError("more folds than rows")
    rng = np.random.default_rng(cv.seed)
    assignment = np.array_split(rng.permutation(data.n), cv.folds)

    grid = np.asarray(cv.lambda_grid, dtype=float)
    order = np.argsort(-grid)  # descending for warm starts
    fold_scores = np.zeros((len(grid), cv.folds))
    for k, holdout in enumerate(assignment):
        mask = np.ones(data.n, dtype=bool)
        mask[holdout] = False
        train = Dataset(
            X=data.X[mask],
            y=data.y[mask],
            standardized=None,
            feature_names=data.feature_names,
        )
        warm = None
        for pos in order:
            lam = float(grid[pos])
            result = fit(
                train,
                r,
                FitConfig(lam=lam, unpenalized=unpenalized),
                beta_init=warm,
            )
            warm = result.beta_hat
            mu_holdout = np.exp(data.X[holdout] @ result.beta_hat)
            fold_scores[pos, k] = _held_out_score(
                cv.score, r, mu_holdout, data.y[holdout]
            )

    mean_scores = fold_scores.mean(axis=1)
    best_score = mean_scores.min()
    lambda_star = float(grid[mean_scores == best_score].max())
    table = [(float(grid[i]), float(mean_scores[i])) for i in range(len(grid))]
    return lambda_star, table


def prediction_error(model: NBModel, test: Dataset) -> float:
    """Mean squared error between held-out counts and fitted means."""
    if test.n < 1:
        raise DomainError("test set is empty")
    mu = np.exp(test.X @ model.beta)
    return float(np.mean((test.y - mu) ** 2))


@dataclass
class PipelineReport:
    """Everything the train/test pipeline produces for one run.

    ``rows`` lists (variable, penalized coefficient or None when exactly
    zero, unpenalized coefficient) on the original variable scale, starting
    with the intercept row when one was fitted.
    """

    lambda_star: float
    score_table: list[tuple[float, float]]
    pe_penalized: float
    pe_unpenalized: float
    rows: list[tuple[str, float | None, float]]
    converged: bool
    train_rows: int
    test_rows: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "score_table": [list(pair) for pair in self.score_table],
            "pe_penalized": self.pe_penalized,
            "pe_unpenalized": self.pe_unpenalized,
            "coefficients": [
                {"variable": name, "penalized": pen, "unpenalized": unpen}
                for name, pen, unpen in self.rows
            ],
            "converged": self.converged,
            "train_rows": self.train_rows,
            "test_rows": self.test_rows,
            "seed": self.seed,
        }


def train_test_pipeline(
    data: Dataset,
    r: float,
    split: tuple[int, int, int],
    cv: CVSpec,
    intercept: bool = True,
) -> PipelineReport:
    """Seeded split, CV on the training part, final fits, held-out error.

    The split draws train and test rows without replacement.  Training
    covariates are standardized and the same record is applied to the test
    rows; an unpenalized intercept column is prepended when requested.  Both
    the penalized fit (at the CV-selected level) and the unpenalized MLE are
    evaluated by mean squared prediction error on the test rows, and
    coefficients are reported on the original variable scale with exact
    zeros left blank.
    """
    train_size, test_size, seed = (int(v) for v in split)
    if train_size < 2 or test_size < 1:
        raise ConfigError("need at least two training rows and one test row")
    if train_size + test_size > data.n:
        raise ConfigError(
            f"split needs {train_size + test_size} rows, data has {data.n}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    train_idx = perm[:train_size]
    test_idx = perm[train_size : train_size + test_size]

    X_train, means, scales, constant = standardize_columns(data.X[train_idx])
    record = StandardizationRecord(
        means=means, scales=scales, constant=constant, feature_names=data.feature_names
    )
    X_test = record.apply(data.X[test_idx])

    names = list(
        data.feature_names
        if data.feature_names is not None
        else (f"x{j}" for j in range(data.p))
    )
    unpenalized: tuple[int, ...] = ()
    if intercept:
        X_train = np.column_stack([np.ones(train_size), X_train])
        X_test = np.column_stack([np.ones(test_size), X_test])
        names = ["Intercept"] + names
        unpenalized = (0,)

    train = Dataset(X=X_train, y=data.y[train_idx], standardized=None)
    test = Dataset(X=X_test, y=data.y[test_idx], standardized=None)

    lambda_star, table = cross_validate(train, r, cv, unpenalized=unpenalized)
    final = fit(train, r, FitConfig(lam=lambda_star, unpenalized=unpenalized))
    mle = fit(train, r, FitConfig(lam=0.0, max_iter=20000))

    pe_pen = prediction_error(NBModel(r, final.beta_hat), test)
    pe_mle = prediction_error(NBModel(r, mle.beta_hat), test)

    def original_scale(beta: np.ndarray) -> np.ndarray:
        if intercept:
            slopes, icept = record.original_scale_coefficients(beta[1:], beta[0])
            return np.concatenate([[icept], slopes])
        slopes, _ = record.original_scale_coefficients(beta, 0.0)
        return slopes

    pen_orig = original_scale(final.beta_hat)
    mle_orig = original_scale(mle.beta_hat)
    rows: list[tuple[str, float | None, float]] = []
    for j, name in enumerate(names):
        raw_zero = final.beta_hat[j] == 0.0
        rows.append(
            (name, None if raw_zero else float(pen_orig[j]), float(mle_orig[j]))
        )

    return PipelineReport(
        lambda_star=lambda_star,
        score_table=table,
        pe_penalized=pe_pen,
        pe_unpenalized=pe_mle,
        rows=rows,
        converged=bool(final.converged and mle.converged),
        train_rows=train_size,
        test_rows=test_size,
        seed=seed,
    )
