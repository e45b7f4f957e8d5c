"""Empirical checks of the consistency conditions and error bounds.

Given a concrete instance (design, counts, data-generating coefficients)
these routines measure the quantities the theory is stated in terms of:

* sparsity s and design sup-norm R;
* a restricted-eigenvalue constant phi0^2, estimated as the minimum of the
  loss-Hessian Rayleigh quotient over directions sampled from the cone
  ||delta_Sc||_1 <= gamma ||delta_S||_1 (a Monte-Carlo estimate that upper
  bounds the true constant, and is labelled as such);
* the derived constants C, R_tilde, h and the resulting bounds on
  ||beta_hat - beta*||_1 and on the loss gap;
* the sub-exponential tail behaviour of the standardized residuals.

The guarantees only claim anything on the event {lam >= c V} combined with
the penalty-smallness condition lam * s <= (c-1)^2 phi0^2 / (6 c R (c+1));
callers check both via ``check_conditions`` before reading the verdicts of
``verify_bounds``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .model import (
    Dataset,
    NBModel,
    hessian_matrix,
    loss,
    nb_sample,
    standardized_residuals,
)
from .solver import FitResult

__all__ = [
    "ConditionReport",
    "TheoremLedger",
    "BoundsCheck",
    "TailDiagnostic",
    "check_conditions",
    "theorem_ledger",
    "verify_bounds",
    "tail_diagnostic",
]


@dataclass(frozen=True)
class ConditionReport:
    """Measured ingredients of the consistency conditions on one instance.

    ``re_phi0_sq`` is a sampled upper bound on the true restricted
    eigenvalue constant.  ``full_sphere_fallback`` marks the degenerate
    empty-support case, where the minimum is taken over the whole sphere
    instead of the cone.  ``lambda_smallness_ok`` is None when no penalty
    level was supplied.
    """

    s: int
    R: float
    re_phi0_sq: float
    gamma: float
    c3_ok: bool
    lambda_smallness_ok: bool | None
    n_cone_samples: int
    full_sphere_fallback: bool = False


@dataclass(frozen=True)
class TheoremLedger:
    """Constants and bounds derived from a ConditionReport.

    Identities:  C = 2 c1 c (c+1) / (c-1)^2,
                 R_tilde = 2 c R sqrt(s) / (c-1),
                 h = 2 c (c+1) lam R s / ((c-1)^2 phi0^2),
    and the bounds are C lam s / phi0^2 and C lam^2 s / phi0^2.
    """

    c: float
    c1: float
    C: float
    R_tilde: float
    h: float
    bound_l1: float
    bound_loss: float


@dataclass(frozen=True)
class BoundsCheck:
    """Verdicts of the error bounds for one fitted instance."""

    l1_ok: bool
    loss_ok: bool
    cone_ok: bool
    slack_l1: float
    slack_loss: float


@dataclass(frozen=True)
class TailDiagnostic:
    """Empirical exceedance table of |standardized residual| > a."""

    thresholds: np.ndarray
    exceedance: np.ndarray
    w1_hat: float
    tail_r_squared: float


def _sample_cone_direction(
    rng: np.random.Generator,
    support: np.ndarray,
    complement: np.ndarray,
    gamma: float,
    p: int,
) -> np.ndarray:
    # delta_S uniform on the unit sphere of the support block; delta_Sc
    # uniform in the l1 ball of radius gamma * ||delta_S||_1, which piles
    # samples near the cone boundary where the minimum typically sits.
    s = support.shape[0]
    delta = np.zeros(p)
    d_s = rng.standard_normal(s)
    d_s /= np.linalg.norm(d_s)
    delta[support] = d_s
    k = complement.shape[0]
    if k > 0:
        weights = rng.exponential(size=k)
        weights /= weights.sum()
        signs = rng.choice((-1.0, 1.0), size=k)
        radius = gamma * np.abs(d_s).sum() * rng.uniform() ** (1.0 / k)
        delta[complement] = signs * weights * radius
    return delta


def check_conditions(
    data: Dataset,
    truth: NBModel,
    gamma: float,
    n_cone_samples: int,
    rng: np.random.Generator,
    lam: float | None = None,
    c: float | None = None,
) -> ConditionReport:
    """Measure s, R, and the cone-restricted curvature on one instance.

    The support is read off ``truth.beta``.  When ``lam`` and ``c`` are
    given, also evaluates the penalty-smallness condition
    lam * s <= (c-1)^2 phi0^2 / (6 c R (c+1)).
    An empty support makes the cone degenerate; the curvature minimum is
    then taken over the full unit sphere and flagged.
    """
    if not gamma > 1.0:
        raise DomainError("gamma must exceed 1")
    if n_cone_samples < 1:
        raise ConfigError("n_cone_samples must be positive")
    support = np.flatnonzero(truth.beta)
    complement = np.setdiff1d(np.arange(data.p), support)
    s = int(support.shape[0])
    R = float(np.abs(data.X).max())
    H = hessian_matrix(truth, data)

    best = math.inf
    fallback = s == 0
    for _ in range(n_cone_samples):
        if fallback:
            delta = rng.standard_normal(data.p)
            delta /= np.linalg.norm(delta)
            ref = 1.0
        else:
            delta = _sample_cone_direction(rng, support, complement, gamma, data.p)
            ref = float(delta[support] @ delta[support])
        ratio = float(delta @ H @ delta) / ref
        if ratio < best:
            best = ratio

    smallness: bool | None = None
    if lam is not None and c is not None:
        if not c > 1.0:
            raise DomainError("c must exceed 1")
        smallness = bool(
            lam * s <= (c - 1.0) ** 2 * best / (6.0 * c * R * (c + 1.0))
        )

    return ConditionReport(
        s=s,
        R=R,
        re_phi0_sq=best,
        gamma=float(gamma),
        c3_ok=bool(math.sqrt(data.n) < data.p),
        lambda_smallness_ok=smallness,
        n_cone_samples=int(n_cone_samples),
        full_sphere_fallback=fallback,
    )


def theorem_ledger(
    report: ConditionReport, lam: float, c: float, c1: float = 3.0
) -> TheoremLedger:
    """Fill in the derived constants and error bounds for one instance."""
    if not c > 1.0:
        raise DomainError("c must exceed 1")
    if not 2.0 < c1 <= 3.0:
        raise DomainError("c1 must lie in (2, 3]")
    if lam < 0.0 or not np.isfinite(lam):
        raise DomainError("lam must be a non-negative finite real")
    phi0_sq = report.re_phi0_sq
    if phi0_sq <= 0.0:
        raise DomainError("re_phi0_sq must be positive to form the bounds")
    big_c = 2.0 * c1 * c * (c + 1.0) / (c - 1.0) ** 2
    r_tilde = 2.0 * c * report.R * math.sqrt(report.s) / (c - 1.0)
    h = 2.0 * c * (c + 1.0) * lam * report.R * report.s / ((c - 1.0) ** 2 * phi0_sq)
    return TheoremLedger(
        c=float(c),
        c1=float(c1),
        C=big_c,
        R_tilde=r_tilde,
        h=h,
        bound_l1=big_c * lam * report.s / phi0_sq,
        bound_loss=big_c * lam * lam * report.s / phi0_sq,
    )


def verify_bounds(
    data: Dataset,
    truth: NBModel,
    fit_result: FitResult,
    ledger: TheoremLedger,
) -> BoundsCheck:
    """Check the fitted error against the ledger bounds on one draw.

    Meaningful when the caller has certified lam >= c V for this draw and
    the smallness condition via ``check_conditions``; outside those
    hypotheses the verdicts are reported but nothing is claimed.
    The cone check uses gamma = (c+1)/(c-1).
    """
    delta = fit_result.beta_hat - truth.beta
    l1 = float(np.abs(delta).sum())
    loss_gap = abs(loss(NBModel(truth.r, fit_result.beta_hat), data) - loss(truth, data))
    support = truth.beta != 0.0
    gamma = (ledger.c + 1.0) / (ledger.c - 1.0)
    lhs_cone = float(np.abs(delta[~support]).sum())
    rhs_cone = gamma * float(np.abs(delta[support]).sum())
    tol = 1e-12 * max(1.0, rhs_cone)
    return BoundsCheck(
        l1_ok=bool(l1 <= ledger.bound_l1),
        loss_ok=bool(loss_gap <= ledger.bound_loss),
        cone_ok=bool(lhs_cone <= rhs_cone + tol),
        slack_l1=ledger.bound_l1 - l1,
        slack_loss=ledger.bound_loss - loss_gap,
    )


def tail_diagnostic(
    model: NBModel,
    data: Dataset,
    a_grid: np.ndarray,
    mc_reps: int,
    rng: np.random.Generator,
) -> TailDiagnostic:
    """Exceedance frequencies P(|eps| > a) of the standardized residuals.

    Fresh counts are resampled from the model conditional on the design,
    all residuals pooled, and the upper half of the threshold grid is used
    to fit log P(|eps| > a) ~ intercept - a / w1, giving an empirical decay
    scale ``w1_hat`` and the fit's R^2 as a linearity score.
    """
    if mc_reps < 10_000:
        raise ConfigError("mc_reps must be at least 10^4 for a stable tail")
    a = np.sort(np.asarray(a_grid, dtype=float))
    if a.size == 0 or np.any(a < 0):
        raise DomainError("a_grid must hold non-negative thresholds")
    mu = np.exp(data.X @ model.beta)
    draws_per_rep = max(1, mc_reps // data.n)
    y_sim = nb_sample(model.r, mu, rng, size=(draws_per_rep, data.n))
    sd = np.sqrt(mu * (model.r + mu) / model.r)
    eps = np.abs((y_sim - mu) / sd).ravel()
    freq = np.array([np.mean(eps > thr) for thr in a])

    tail_mask = (a >= np.median(a)) & (freq > 0)
    if tail_mask.sum() < 3:
        tail_mask = freq > 0
    slope, intercept = np.polyfit(a[tail_mask], np.log(freq[tail_mask]), 1)
    fitted = intercept + slope * a[tail_mask]
    resid = np.log(freq[tail_mask]) - fitted
    total = np.log(freq[tail_mask]) - np.log(freq[tail_mask]).mean()
    ss_tot = float(total @ total)
    r_sq = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    w1_hat = -1.0 / slope if slope < 0 else math.inf
    return TailDiagnostic(
        thresholds=a,
        exceedance=freq,
        w1_hat=float(w1_hat),
        tail_r_squared=float(r_sq),
    )
