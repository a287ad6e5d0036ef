"""Fixed team-effects model for home advantage.

Fits ``d = lambda * 1 + Z beta + eps`` by least squares.  The team-effect
columns of ``W = [1 | Z]`` are rank-deficient (any constant can be shifted
between teams), so the fit uses the minimum-norm pseudoinverse solution;
the home-advantage intercept and all pairwise team differences are
invariant to that gauge choice whenever they are estimable at all.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._linalg import minimum_norm_lstsq
from .schedule import EstimabilityError, ScheduleMatrix, check_estimability

_CONTRAST_TOL = 1e-8


class FixedEffectsHfa(BaseEstimator):
    """Least-squares home advantage with one fixed effect per team.

    Fitted attributes
    -----------------
    lambda_ : float
        Estimated home advantage (points).
    beta_ : ndarray, shape (n_teams,)
        Minimum-norm team effects; only differences are meaningful.
    sigma2_ : float
        Residual variance estimate, RSS / dof_resid (NaN when saturated).
    se_lambda_ : float
    ci95_ : tuple of float
        Central 95% interval for lambda using a t reference with
        ``dof_resid_`` degrees of freedom.
    rank_ : int
        Numerical rank of ``[1 | Z]``.
    dof_resid_ : int
    """

    def fit(self, schedule: ScheduleMatrix, y=None) -> "FixedEffectsHfa":
        report = check_estimability(schedule)
        if not report.lambda_estimable:
            raise EstimabilityError(
                "home advantage is not identified by this schedule "
                f"(rank {report.rank_W} design)")
        d = schedule.d
        n = schedule.n_games
        W = np.hstack([np.ones((n, 1)), schedule.Z])
        theta, rank, (U_r, s_r, Vt_r) = minimum_norm_lstsq(W, d)

        fitted = W @ theta
        rss = float(np.sum((d - fitted) ** 2))
        dof = n - rank
        sigma2 = rss / dof if dof > 0 else math.nan

        # Var(lambda_hat) = sigma2 * [(W'W)^+]_{11} = sigma2 * sum_j V[0,j]^2 / s_j^2
        v_first = Vt_r[:, 0]
        var_unit = float(np.sum((v_first / s_r) ** 2))
        se = math.sqrt(sigma2 * var_unit) if dof > 0 else math.nan
        if dof > 0:
            half = float(stats.t.ppf(0.975, dof)) * se
            ci = (theta[0] - half, theta[0] + half)
        else:
            ci = (math.nan, math.nan)

        self.teams_ = schedule.teams
        self.lambda_ = float(theta[0])
        self.beta_ = theta[1:].copy()
        self.sigma2_ = sigma2
        self.se_lambda_ = se
        self.ci95_ = ci
        self.rank_ = rank
        self.dof_resid_ = dof
        self.n_games_ = n
        self.residuals_ = d - fitted
        self._svd = (s_r, Vt_r)
        self._w_scale = float(np.abs(W).max())
        return self

    def predict(self, schedule: ScheduleMatrix) -> np.ndarray:
        """Fitted mean margin for each game of a schedule on the same teams."""
        check_is_fitted(self, "lambda_")
        if schedule.teams != self.teams_:
            raise ValueError("schedule team set differs from the fitted one")
        return self.lambda_ + schedule.Z @ self.beta_

    def pairwise_difference(self, team_a: str | int, team_b: str | int):
        """Estimate and standard error of ``beta_a - beta_b``.

        Raises EstimabilityError when the schedule never connects the two
        teams (directly or through common opponents), in which case the
        contrast depends on the arbitrary gauge.
        """
        check_is_fitted(self, "lambda_")
        ia = self._team_index(team_a)
        ib = self._team_index(team_b)
        if ia == ib:
            return 0.0, 0.0
        c = np.zeros(1 + len(self.teams_))
        c[1 + ia] = 1.0
        c[1 + ib] = -1.0
        s_r, Vt_r = self._svd
        # Estimable iff c is (numerically) in the row space of W.
        coeffs = Vt_r @ c
        proj = Vt_r.T @ coeffs
        if np.abs(proj - c).max() > _CONTRAST_TOL * max(1.0, self._w_scale):
            raise EstimabilityError(
                f"difference between {self.teams_[ia]!r} and "
                f"{self.teams_[ib]!r} is not identified by this schedule")
        estimate = float(self.beta_[ia] - self.beta_[ib])
        se = math.sqrt(self.sigma2_ * float(np.sum((coeffs / s_r) ** 2)))
        return estimate, se

    def to_dict(self) -> dict:
        """JSON-friendly summary of the fit."""
        check_is_fitted(self, "lambda_")
        return {
            "lambda_hat": self.lambda_,
            "se_lambda": _none_if_nan(self.se_lambda_),
            "sigma2_hat": _none_if_nan(self.sigma2_),
            "dof_resid": self.dof_resid_,
            "rank_W": self.rank_,
            "ci95": [_none_if_nan(self.ci95_[0]), _none_if_nan(self.ci95_[1])],
        }

    def _team_index(self, team: str | int) -> int:
        if isinstance(team, str):
            try:
                return self.teams_.index(team)
            except ValueError:
                raise KeyError(f"unknown team {team!r}") from None
        if not 0 <= team < len(self.teams_):
            raise IndexError(f"team index {team} out of range")
        return int(team)


def _none_if_nan(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x
