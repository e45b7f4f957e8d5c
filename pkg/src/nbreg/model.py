"""Negative binomial count model: likelihood, derivatives, and sampling.

A count response y given a covariate row x follows NB(r, mu) with
mu = exp(x' beta) and a known dispersion r > 0, so

    E[y | x] = mu,        Var[y | x] = mu * (1 + mu / r).

Smaller r means more overdispersion; as r -> infinity the distribution
approaches Poisson(mu).  The fitted objective everywhere in this package is
the average negative log-likelihood ``loss`` below (constant terms in beta
dropped), and all derivative formulas are exact derivatives of it.

Numerical conventions: log(r + e^eta) is always evaluated with
``np.logaddexp``, which branches internally so that values stay finite for
eta anywhere in [-700, 700].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NumericError

__all__ = [
    "Dataset",
    "NBModel",
    "LinearPredictor",
    "linear_predictor",
    "nb_log_pmf",
    "nb_pmf",
    "nb_sample",
    "loss",
    "gradient",
    "gradient_factored",
    "hessian_quadratic_form",
    "hessian_matrix",
    "third_derivative_form",
    "standardized_residuals",
    "v_weights",
]

# Tolerances for the column-standardization invariant: mean within 1e-10 of 0
# and mean square within 1e-8 of 1.  A column whose mean square is ~0 is a
# degenerate (constant-zero) column and is exempt from the unit-scale check.
MEAN_TOL = 1e-10
MEANSQ_TOL = 1e-8
_DEGENERATE_MEANSQ = 1e-16


def _standardization_violation(X: np.ndarray) -> str | None:
    means = X.mean(axis=0)
    meansq = (X * X).mean(axis=0)
    for j in range(X.shape[1]):
        if abs(means[j]) > MEAN_TOL:
            return f"column {j} has mean {means[j]:.3e}"
        if meansq[j] > _DEGENERATE_MEANSQ and abs(meansq[j] - 1.0) > MEANSQ_TOL:
            return f"column {j} has mean square {meansq[j]:.6g}"
    return None


@dataclass(frozen=True)
class Dataset:
    """Design matrix of real covariates plus non-negative integer counts.

    Parameters
    ----------
    X : (n, p) array of covariates.
    y : (n,) array of counts; must be integer-valued and >= 0.
    standardized : True asserts every column has mean 0 and mean square 1
        (constant all-zero columns exempt) and raises if violated; None
        auto-detects; False records nothing.
    feature_names : optional column names, used by reports.
    """

    X: np.ndarray
    y: np.ndarray
    standardized: bool | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DomainError("X must be a 2-d array")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DomainError("X must have at least one row and one column")
        if not np.all(np.isfinite(X)):
            raise DomainError("X contains non-finite entries")
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DomainError("y must be a 1-d array with one entry per row of X")
        if not np.all(np.isfinite(y)):
            raise DomainError("y contains non-finite entries")
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise DomainError("responses must be non-negative integers")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))
        flag = self.standardized
        if flag is None:
            flag = _standardization_violation(X) is None
        elif flag:
            violation = _standardization_violation(X)
            if violation is not None:
                raise DomainError(f"data marked standardized but {violation}")
        object.__setattr__(self, "standardized", bool(flag))
        if self.feature_names is not None:
            names = tuple(str(name) for name in self.feature_names)
            if len(names) != X.shape[1]:
                raise DomainError("feature_names length must equal the column count")
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class NBModel:
    """Dispersion r > 0 and coefficient vector beta (finite, length p)."""

    r: float
    beta: np.ndarray

    def __post_init__(self) -> None:
        r = float(self.r)
        if not math.isfinite(r) or r <= 0.0:
            raise DomainError("dispersion r must be a positive finite real")
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if beta.ndim != 1:
            raise DomainError("beta must be a 1-d vector")
        if not np.all(np.isfinite(beta)):
            raise DomainError("beta contains non-finite entries")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "beta", beta)

    @property
    def p(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class LinearPredictor:
    """Linear predictor eta_i = x_i' beta and fitted mean mu_i = exp(eta_i)."""

    eta: np.ndarray
    mu: np.ndarray

    def __post_init__(self) -> None:
        eta = np.asarray(self.eta, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if eta.shape != mu.shape:
            raise DomainError("eta and mu must have the same shape")
        if np.any(mu <= 0.0):
            raise DomainError("mu must be strictly positive")
        expected = np.exp(eta)
        if np.any(np.abs(mu - expected) > 1e-12 * np.maximum(mu, expected)):
            raise DomainError("mu must equal exp(eta) to 1e-12 relative")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "mu", mu)


def linear_predictor(model: NBModel, data: Dataset) -> LinearPredictor:
    eta = data.X @ model.beta
    return LinearPredictor(eta=eta, mu=np.exp(eta))


def _check_positive(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} must be positive and finite")
    return arr


def nb_log_pmf(y, r, mu):
    """Log probability mass of NB(r, mu) at count y.

    Evaluated entirely in log space so that large counts or means do not
    overflow.  Arguments broadcast like numpy ufuncs.
    """
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise DomainError("y must be finite")
    if np.any(y_arr < 0) or np.any(y_arr != np.floor(y_arr)):
        raise DomainError("y must be a non-negative integer count")
    r_arr = _check_positive("r", r)
    mu_arr = _check_positive("mu", mu)
    log_denom = np.logaddexp(np.log(r_arr), np.log(mu_arr))
    out = (
        gammaln(r_arr + y_arr)
        - gammaln(r_arr)
        - gammaln(y_arr + 1.0)
        + r_arr * (np.log(r_arr) - log_denom)
        + y_arr * (np.log(mu_arr) - log_denom)
    )
    if out.ndim == 0:
        return float(out)
    return out


def nb_pmf(y, r, mu):
    """Probability mass of NB(r, mu) at count y, in [0, 1]."""
    out = np.exp(nb_log_pmf(y, r, mu))
    if np.ndim(out) == 0:
        return float(out)
    return out


def nb_sample(r, mu, rng: np.random.Generator, size=None):
    """Draw counts from NB(r, mu) via the gamma-Poisson mixture.

    A rate g ~ Gamma(shape=r, scale=mu/r) is drawn first and the count is
    Poisson(g); the result has mean mu and variance mu * (1 + mu / r).
    ``mu`` may be an array, in which case one count is drawn per entry
    (or per entry of ``size`` after broadcasting).
    """
    r_arr = _check_positive("r", r)
    mu_arr = _check_positive("mu", mu)
    lam = rng.gamma(shape=r_arr, scale=mu_arr / r_arr, size=size)
    return rng.poisson(lam)


def _eta_and_logdenom(model: NBModel, data: Dataset):
    eta = data.X @ model.beta
    return eta, np.logaddexp(math.log(model.r), eta)


def _raise_nonfinite(values: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericError(f"non-finite {what} at observation {int(bad[0])}")


def loss(model: NBModel, data: Dataset) -> float:
    """Average negative log-likelihood (terms free of beta dropped).

    loss(beta) = -(1/n) sum_i [ y_i (eta_i - log(r + e^eta_i))
                                - r log(r + e^eta_i) ].
    """
    eta, log_denom = _eta_and_logdenom(model, data)
    terms = data.y * (eta - log_denom) - model.r * log_denom
    _raise_nonfinite(terms, "loss contribution")
    return float(-np.mean(terms))


def gradient(model: NBModel, data: Dataset) -> np.ndarray:
    """Gradient of ``loss`` at ``model.beta``.

    Uses the simplified per-observation weight r (y - mu) / (r + mu).
    """
    eta = data.X @ model.beta
    mu = np.exp(eta)
    resid = model.r * ((data.y - mu) / (model.r + mu))
    _raise_nonfinite(resid, "gradient contribution")
    return -(data.X.T @ resid) / data.n


def gradient_factored(model: NBModel, data: Dataset) -> np.ndarray:
    """Gradient assembled as -(1/n) sum_i x_i * v_i * eps_i.

    Here v_i = sqrt(r mu_i / (mu_i + r)) and eps_i is the standardized
    residual; the product collapses algebraically to the weight used by
    ``gradient``, and the two functions agree to 1e-12 relative.  Kept as a
    separate code path so the factorization itself is testable.
    """
    eta, log_denom = _eta_and_logdenom(model, data)
    log_r = math.log(model.r)
    v = np.exp(0.5 * (log_r + eta - log_denom))
    sd = np.exp(0.5 * (eta + log_denom - log_r))
    eps = (data.y - np.exp(eta)) / sd
    weights = v * eps
    _raise_nonfinite(weights, "gradient contribution")
    return -(data.X.T @ weights) / data.n


def _hessian_obs_weights(model: NBModel, data: Dataset) -> np.ndarray:
    # r * mu * (y + r) / (r + mu)^2, grouped so each factor stays bounded.
    eta = data.X @ model.beta
    mu = np.exp(eta)
    return model.r * (mu / (model.r + mu)) * ((data.y + model.r) / (model.r + mu))


def hessian_quadratic_form(model: NBModel, data: Dataset, v: np.ndarray) -> float:
    """Quadratic form v' H v of the loss Hessian; non-negative for all inputs.

    H[v, v] = (1/n) sum_i (x_i' v)^2 * r mu_i (y_i + r) / (r + mu_i)^2.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (data.p,):
        raise DomainError("v must be a vector of length p")
    if not np.all(np.isfinite(v)):
        raise DomainError("v contains non-finite entries")
    w = _hessian_obs_weights(model, data)
    _raise_nonfinite(w, "curvature weight")
    xv = data.X @ v
    return float(np.mean(w * xv * xv))


def hessian_matrix(model: NBModel, data: Dataset) -> np.ndarray:
    """Full p x p Hessian of ``loss`` at ``model.beta``."""
    w = _hessian_obs_weights(model, data)
    _raise_nonfinite(w, "curvature weight")
    return (data.X.T * w) @ data.X / data.n


def third_derivative_form(
    model: NBModel, data: Dataset, u: np.ndarray, v: np.ndarray
) -> float:
    """Trilinear form of the third derivative of ``loss`` along (u, v, v).

    T[u, v, v] = (1/n) sum_i (x_i' u)(x_i' v)^2
                 * r mu_i (y_i + r)(r - mu_i) / (r + mu_i)^3,
    and |T[u, v, v]| <= max|x_ij| * ||u||_1 * H[v, v].
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (data.p,) or v.shape != (data.p,):
        raise DomainError("u and v must be vectors of length p")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise DomainError("u or v contains non-finite entries")
    eta = data.X @ model.beta
    mu = np.exp(eta)
    w = (
        model.r
        * (mu / (model.r + mu))
        * ((data.y + model.r) / (model.r + mu))
        * ((model.r - mu) / (model.r + mu))
    )
    _raise_nonfinite(w, "third-derivative weight")
    xu = data.X @ u
    xv = data.X @ v
    return float(np.mean(xu * xv * xv * w))


def standardized_residuals(model: NBModel, data: Dataset) -> np.ndarray:
    """Residuals (y_i - mu_i) / sqrt(mu_i (r + mu_i) / r).

    The denominator is the conditional standard deviation of y_i, so under
    the model at the true beta each residual has mean 0 and variance 1.
    """
    eta, log_denom = _eta_and_logdenom(model, data)
    sd = np.exp(0.5 * (eta + log_denom - math.log(model.r)))
    out = (data.y - np.exp(eta)) / sd
    _raise_nonfinite(out, "residual")
    return out


def v_weights(model: NBModel, data: Dataset) -> tuple[np.ndarray, float]:
    """Per-observation weights v_i = sqrt(r mu_i / (mu_i + r)) and their max.

    Each v_i lies in (0, sqrt(r)); the maximum drives the asymptotic
    penalty-level rule.
    """
    eta, log_denom = _eta_and_logdenom(model, data)
    v = np.exp(0.5 * (math.log(model.r) + eta - log_denom))
    return v, float(v.max())
