"""Independent reference implementations used to cross-check the library.

Everything here deliberately avoids the library's own code paths: the pmf
and loss oracles run in 50-digit arithmetic via mpmath, the normal quantile
oracle bisects a series-based CDF, the MLE oracle is a damped Newton method
with its own derivative code, and the penalty-quantile oracle enumerates a
truncated outcome space exactly.
"""

from __future__ import annotations

import mpmath as mp
import numpy as np

mp.mp.dps = 50


def pmf_oracle(y: int, r: float, mu: float) -> float:
    """[r/(r+mu)]^r * Gamma(r+y) / (Gamma(r) y!) * [mu/(r+mu)]^y in 50-digit
    arithmetic."""
    r_ = mp.mpf(r)
    mu_ = mp.mpf(mu)
    y_ = int(y)
    value = (
        (r_ / (r_ + mu_)) ** r_
        * mp.gamma(r_ + y_)
        / (mp.gamma(r_) * mp.factorial(y_))
        * (mu_ / (r_ + mu_)) ** y_
    )
    return float(value)


def loss_oracle(X: np.ndarray, y: np.ndarray, beta: np.ndarray, r: float) -> float:
    """Term-by-term average negative log-likelihood in extended precision."""
    r_ = mp.mpf(r)
    total = mp.mpf(0)
    for i in range(X.shape[0]):
        eta = mp.mpf(0)
        for j in range(X.shape[1]):
            eta += mp.mpf(X[i, j]) * mp.mpf(beta[j])
        log_denom = mp.log(r_ + mp.e**eta)
        total += mp.mpf(int(y[i])) * (eta - log_denom) - r_ * log_denom
    return float(-total / X.shape[0])


def normal_cdf_series(x) -> mp.mpf:
    """Phi(x) from the error-function series, in extended precision."""
    return (mp.mpf(1) + mp.erf(mp.mpf(x) / mp.sqrt(2))) / 2


def inverse_cdf_oracle(q: float, tol: float = 1e-13) -> float:
    """Bisection of the series CDF; accurate to ``tol`` in x."""
    q_ = mp.mpf(q)
    lo, hi = mp.mpf(-40), mp.mpf(40)
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if normal_cdf_series(mid) < q_:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def newton_mle(
    X: np.ndarray, y: np.ndarray, r: float, tol: float = 1e-11, max_iter: int = 200
) -> np.ndarray:
    """Unpenalized MLE by damped Newton with Hessian-based steps.

    Loss, gradient and Hessian are written out here from the model formulas
    rather than imported, so this is an independent route to the optimum.
    """
    n, p = X.shape
    beta = np.zeros(p)

    def nll(b):
        eta = X @ b
        log_denom = np.logaddexp(np.log(r), eta)
        return float(-np.mean(y * (eta - log_denom) - r * log_denom))

    def grad(b):
        mu = np.exp(X @ b)
        return -(X.T @ (r * (y - mu) / (r + mu))) / n

    def hess(b):
        mu = np.exp(X @ b)
        w = r * mu * (y + r) / (r + mu) ** 2
        return (X.T * w) @ X / n

    value = nll(beta)
    for _ in range(max_iter):
        g = grad(beta)
        if np.abs(g).max() <= tol:
            break
        step = np.linalg.solve(hess(beta), g)
        scale = 1.0
        while scale > 1e-12:
            trial = beta - scale * step
            trial_value = nll(trial)
            if trial_value <= value:
                break
            scale *= 0.5
        beta = beta - scale * step
        value = nll(beta)
    return beta


def enumerated_score_quantile(
    X: np.ndarray,
    beta: np.ndarray,
    r: float,
    q: float,
    y_max: int = 50,
) -> float:
    """Exact lower quantile of V = ||grad loss(beta)||_inf over the outcome
    space truncated at y_max per observation, weighting each outcome by its
    product pmf (renormalized over the truncation).

    Only usable for tiny (n, p); cost is (y_max + 1)^n.
    """
    n, p = X.shape
    mu = np.exp(X @ beta)
    counts = np.arange(y_max + 1)
    # per-observation pmf table via the 50-digit oracle
    pmf_table = np.array(
        [[pmf_oracle(int(k), r, float(mu[i])) for k in counts] for i in range(n)]
    )
    grids = np.meshgrid(*([counts] * n), indexing="ij")
    y_all = np.stack([g.ravel() for g in grids], axis=1).astype(float)
    weights = np.ones(y_all.shape[0])
    for i in range(n):
        weights *= pmf_table[i, y_all[:, i].astype(int)]
    weights /= weights.sum()
    scores = r * ((y_all - mu) / (r + mu))
    v_values = np.abs(scores @ X).max(axis=1) / n
    order = np.argsort(v_values)
    cumulative = np.cumsum(weights[order])
    idx = int(np.searchsorted(cumulative, q))
    idx = min(idx, v_values.shape[0] - 1)
    return float(v_values[order][idx])
