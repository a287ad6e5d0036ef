"""Tests for schedule-imbalance bias in the random-effects fit.

When home and away appearances are unbalanced (some teams host more than
they travel), the random-effects home advantage absorbs part of the team
strengths.  The statistics here measure how strongly the estimated team
effects line up with the schedule imbalance pattern: under a balanced or
strength-agnostic schedule the quadratic form below is asymptotically
chi-square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from ._linalg import svd_rank
from .mixed import MixedEffectsHfa
from .schedule import ScheduleMatrix

_SING_TOL = 1e-10


@dataclass(frozen=True)
class DiagnosticResult:
    """Outcome of a schedule-bias test.

    ``applicable`` is False when the test is undefined for the input
    (balanced schedule, zero team-effect variance, singular covariance);
    ``reason`` then says why and the numeric fields are None.
    """

    statistic: float | None
    dof: int
    p_value: float | None
    applicable: bool
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "dof": self.dof,
            "p_value": self.p_value,
            "applicable": self.applicable,
            "reason": self.reason,
        }


def _not_applicable(reason: str, dof: int = 0) -> DiagnosticResult:
    return DiagnosticResult(statistic=None, dof=dof, p_value=None,
                            applicable=False, reason=reason)


def schedule_bias_statistic(fit: MixedEffectsHfa,
                            sm: ScheduleMatrix) -> DiagnosticResult:
    """One-degree chi-square test aligning BLUPs with net home counts.

    The statistic is ``(net'eta_hat)^2 / (sigma2_g_hat * net'net)`` where
    ``net`` is the per-team home-minus-away game count.  Large values mean
    the teams that host most are systematically the stronger ones, which
    biases the random-effects home advantage.
    """
    if fit.teams_ != sm.teams:
        raise ValueError("fit and schedule refer to different teams")
    net = sm.net_home.astype(float)
    ssq = int(sm.net_home @ sm.net_home)
    if ssq == 0:
        return _not_applicable("balanced schedule: every net home count is zero")
    if fit.boundary_ or fit.sigma2_g_ <= 0.0:
        return _not_applicable("no team-effect variance estimated "
                               "(variance component at zero)", dof=1)
    v = float(net @ fit.eta_)
    statistic = v * v / (fit.sigma2_g_ * ssq)
    p_value = float(stats.chi2.sf(statistic, 1))
    return DiagnosticResult(statistic=statistic, dof=1, p_value=p_value,
                            applicable=True)


def general_bias_statistic(X: np.ndarray, Z: np.ndarray, R: np.ndarray,
                           G: np.ndarray, eta: np.ndarray) -> DiagnosticResult:
    """Quadratic-form version for arbitrary fixed/random designs.

    Computes ``v' M^{-1} v`` with ``A = X'R^{-1}Z``, ``v = A eta`` and
    ``M = A G A'``, referred to chi-square with ``rank(A)`` degrees of
    freedom.  With an intercept-only X and scalar covariances this reduces
    exactly to :func:`schedule_bias_statistic` (the residual variance
    cancels).

    Raises
    ------
    ValueError
        If R is not positive definite or G is not symmetric PSD.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and X.shape[1] != 1:
        X = X.T
    Z = np.asarray(Z, dtype=float)
    R = np.asarray(R, dtype=float)
    G = np.asarray(G, dtype=float)
    eta = np.asarray(eta, dtype=float)
    n, p = X.shape
    if Z.shape[0] != n or R.shape != (n, n) or G.shape != (Z.shape[1],) * 2:
        raise ValueError("dimension mismatch among X, Z, R, G")
    if not np.allclose(R, R.T, atol=1e-12 * max(1.0, float(np.abs(R).max()))):
        raise ValueError("R must be symmetric positive definite")
    try:
        cho = linalg.cho_factor(R, lower=True)
    except linalg.LinAlgError:
        raise ValueError("R must be symmetric positive definite") from None
    if not np.allclose(G, G.T, atol=1e-12 * max(1.0, float(np.abs(G).max()))):
        raise ValueError("G must be symmetric positive semidefinite")
    g_eigs = np.linalg.eigvalsh(G)
    if g_eigs[0] < -1e-10 * max(1.0, abs(g_eigs[-1])):
        raise ValueError("G must be symmetric positive semidefinite")

    A = X.T @ linalg.cho_solve(cho, Z)
    s = np.linalg.svd(A, compute_uv=False)
    dof = svd_rank(A.shape, s)
    if dof == 0:
        return _not_applicable(
            "schedule is balanced for every fixed-effect column "
            "(X'R^{-1}Z = 0)")
    M = A @ G @ A.T
    sv = np.linalg.svd(M, compute_uv=False)
    # Guard both relative rank deficiency and absolute cancellation: M's
    # entries are sums of products of scale ||A||^2 ||G||, so anything of
    # that scale times _SING_TOL is indistinguishable from rounding noise
    # (a 1x1 M defeats the ratio test alone).
    floor = _SING_TOL * max(float(s[0]) ** 2 * float(g_eigs[-1]), 0.0)
    if sv[0] <= 0.0 or sv[-1] / sv[0] < _SING_TOL or sv[-1] <= floor:
        return _not_applicable(
            "contrast covariance is singular; statistic undefined", dof=dof)
    v = A @ eta
    statistic = float(v @ np.linalg.solve(M, v))
    p_value = float(stats.chi2.sf(statistic, dof))
    return DiagnosticResult(statistic=statistic, dof=dof, p_value=p_value,
                            applicable=True)
