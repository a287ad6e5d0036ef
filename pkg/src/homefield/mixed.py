"""Random team-effects model for home advantage, fit by REML.

Model: ``d | eta ~ N(lambda * 1 + Z eta, sigma2 I)`` with
``eta ~ N(0, sigma2_g I)``.  Variance components are estimated by an EM
iteration on the restricted likelihood; each step solves the mixed-model
normal equations

    [[n, z'], [z, Z'Z + k I]] [lambda, eta]' = [1'd, Z'd]',   k = sigma2/sigma2_g.

All per-iteration work is O(n_teams) after a one-time eigendecomposition
of ``Z'Z``: in eigencoordinates the coefficient matrix is an arrow matrix
whose Schur complement, BLUPs, traces, and determinant are sums over
eigenvalues.  Null directions of ``Z'Z`` are exactly orthogonal to both
``Z'1`` and ``Z'd`` (if Sv = 0 then Zv = 0, hence v'Z'1 = v'Z'd = 0), so
those coordinates are pinned to zero rather than left to floating-point
noise; this keeps the solve stable even at extreme variance ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .schedule import ScheduleMatrix

_LOG_2PI = math.log(2.0 * math.pi)
_TINY = 1e-300


@dataclass(frozen=True)
class _ZFactor:
    """Eigendecomposition of Z'Z plus the pieces that depend only on Z."""

    n: int
    N: int
    lam: np.ndarray     # eigenvalues of Z'Z, ascending, clamped at 0
    Q: np.ndarray       # orthonormal eigenvectors, columns match lam
    zt: np.ndarray      # Q' Z'1, exactly 0 on null directions

    @classmethod
    def from_schedule(cls, sm: ScheduleMatrix) -> "_ZFactor":
        S = sm.Z.T @ sm.Z
        lam, Q = np.linalg.eigh(S)
        lam = np.clip(lam, 0.0, None)
        null = lam <= lam[-1] * len(lam) * np.finfo(float).eps
        lam = np.where(null, 0.0, lam)
        zt = Q.T @ sm.net_home.astype(float)
        zt = np.where(null, 0.0, zt)
        return cls(n=sm.n_games, N=sm.n_teams, lam=lam, Q=Q, zt=zt)


@dataclass(frozen=True)
class _Response:
    """The d-dependent sufficient statistics for one response vector."""

    rt: np.ndarray      # Q' Z'd, exactly 0 on null directions
    sum_d: float        # 1'd
    dd: float           # d'd
    rss0: float         # sum (d_i - dbar)^2


def _make_response(factor: _ZFactor, Z: np.ndarray, d: np.ndarray) -> _Response:
    d = np.asarray(d, dtype=float)
    rt = factor.Q.T @ (Z.T @ d)
    rt = np.where(factor.lam == 0.0, 0.0, rt)
    sum_d = float(d.sum())
    dd = float(d @ d)
    return _Response(rt=rt, sum_d=sum_d, dd=dd,
                     rss0=dd - sum_d * sum_d / factor.n)


@dataclass(frozen=True)
class _Solve:
    """One solve of the mixed-model equations at a fixed variance ratio k."""

    lambda_hat: float
    u: np.ndarray       # BLUP of eta in eigencoordinates
    c_lambda: float     # (1,1) element of the inverse coefficient matrix
    tr_cuu: float       # trace of the eta block of the inverse
    logdet_c: float
    quad: float         # d'd - lambda_hat 1'd - u'rt  (the REML quadratic * sigma2)
    ee: float           # squared norm of conditional residuals d - lambda 1 - Z eta


def _solve_mme(factor: _ZFactor, resp: _Response, k: float) -> _Solve:
    if not (k > 0.0) or math.isinf(k):
        # k = inf corresponds to sigma2_g = 0: no team effects.
        lam_hat = resp.sum_d / factor.n
        u = np.zeros(factor.N)
        return _Solve(lambda_hat=lam_hat, u=u, c_lambda=1.0 / factor.n,
                      tr_cuu=0.0, logdet_c=math.inf,
                      quad=resp.dd - lam_hat * resp.sum_d, ee=resp.rss0)
    denom = factor.lam + k
    s = factor.n - float(np.sum(factor.zt ** 2 / denom))
    lam_hat = (resp.sum_d - float(np.sum(factor.zt * resp.rt / denom))) / s
    u = (resp.rt - lam_hat * factor.zt) / denom
    zu = float(factor.zt @ u)
    ru = float(resp.rt @ u)
    uSu = float(np.sum(factor.lam * u * u))
    ee = (resp.dd + lam_hat * lam_hat * factor.n + uSu
          - 2.0 * lam_hat * resp.sum_d - 2.0 * ru + 2.0 * lam_hat * zu)
    tr_cuu = float(np.sum(1.0 / denom)
                   + np.sum((factor.zt / denom) ** 2) / s)
    logdet_c = float(np.sum(np.log(denom))) + math.log(s)
    quad = resp.dd - lam_hat * resp.sum_d - ru
    return _Solve(lambda_hat=lam_hat, u=u, c_lambda=1.0 / s, tr_cuu=tr_cuu,
                  logdet_c=logdet_c, quad=max(quad, 0.0), ee=max(ee, 0.0))


def _loglik(factor: _ZFactor, resp: _Response, sigma2_g: float,
            sigma2: float, sol: _Solve | None = None) -> float:
    """Restricted log-likelihood at the given variance components."""
    n, N = factor.n, factor.N
    if sigma2 <= 0.0:
        raise ValueError("sigma2 must be positive")
    if sigma2_g < 0.0:
        raise ValueError("sigma2_g must be nonnegative")
    if sigma2_g == 0.0:
        m2 = ((n - 1) * (_LOG_2PI + math.log(sigma2)) + math.log(n)
              + resp.rss0 / sigma2)
        return -0.5 * m2
    k = sigma2 / sigma2_g
    if sol is None:
        sol = _solve_mme(factor, resp, k)
    m2 = ((n - 1) * (_LOG_2PI + math.log(sigma2)) - N * math.log(k)
          + sol.logdet_c + sol.quad / sigma2)
    return -0.5 * m2


@dataclass
class _EmResult:
    lambda_hat: float
    eta: np.ndarray
    sigma2_g: float
    sigma2: float
    se_lambda: float
    loglik: float
    trace: np.ndarray
    n_iter: int
    converged: bool
    boundary: bool


def _intercept_only(factor: _ZFactor, resp: _Response, trace: list,
                    n_iter: int, converged: bool) -> _EmResult:
    """Boundary fit with sigma2_g = 0: plain sample mean and variance."""
    n = factor.n
    lam_hat = resp.sum_d / n
    sigma2 = resp.rss0 / (n - 1)
    loglik = (_loglik(factor, resp, 0.0, sigma2) if sigma2 > 0.0 else math.inf)
    trace = list(trace) + [loglik]
    se = math.sqrt(sigma2 / n)
    return _EmResult(lambda_hat=lam_hat, eta=np.zeros(factor.N),
                     sigma2_g=0.0, sigma2=sigma2, se_lambda=se,
                     loglik=loglik, trace=np.asarray(trace), n_iter=n_iter,
                     converged=converged, boundary=True)


def _em_reml(factor: _ZFactor, resp: _Response, *, max_iter: int,
             rel_tol: float, var_floor: float, accelerate: bool) -> _EmResult:
    n, N = factor.n, factor.N
    if n < 2:
        raise ValueError("REML needs at least two games")
    var_d = resp.rss0 / (n - 1)
    if var_d <= 0.0:
        # Constant margins: the only sane answer is the boundary fit.
        return _intercept_only(factor, resp, [], 0, True)
    floor = var_floor * var_d
    sigma2_g = sigma2 = var_d / 2.0
    trace: list[float] = []
    prev_l = None
    converged = False
    n_iter = 0
    # Likelihood of the best sigma2_g = 0 fit; a constant of the data.  EM
    # approaches a zero optimum at a sub-geometric crawl, so once the
    # iteration is creeping downward in sigma2_g and even an optimistic
    # (Aitken-extrapolated, doubled) projection of its remaining climb
    # cannot beat the exact boundary fit, jump there.  The jump is taken
    # only on a verified likelihood improvement (l_bound >= current l), so
    # the trace stays monotone.
    l_bound = _loglik(factor, resp, 0.0, resp.rss0 / (n - 1))
    dl_prev = None
    for n_iter in range(1, max_iter + 1):
        sol = _solve_mme(factor, resp, sigma2 / sigma2_g)
        l = _loglik(factor, resp, sigma2_g, sigma2, sol)
        trace.append(l)
        # EM updates: conditional expectations of eta'eta and eps'eps.
        k = sigma2 / sigma2_g
        new_g = (float(sol.u @ sol.u) + sigma2 * sol.tr_cuu) / N
        new_e = (sol.ee + sigma2 * ((1 + N) - k * sol.tr_cuu)) / n
        new_e = max(new_e, floor)
        if accelerate and new_g > floor:
            new_g = _px_step(factor, resp, sol, sigma2_g, sigma2, new_g, new_e)
        if new_g < floor:
            return _intercept_only(factor, resp, trace, n_iter, True)
        rel = max(abs(new_g - sigma2_g) / max(sigma2_g, _TINY),
                  abs(new_e - sigma2) / max(sigma2, _TINY))
        creeping_down = new_g < sigma2_g and rel < 1e-3
        dl = (l - prev_l) if prev_l is not None else None
        if creeping_down and dl is not None and dl_prev is not None \
                and 0.0 <= dl <= dl_prev and dl_prev > 0.0:
            rho = dl / dl_prev
            projected = 2.0 * dl * rho / (1.0 - rho) if rho < 1.0 else math.inf
            if l_bound >= l + projected:
                return _intercept_only(factor, resp, trace, n_iter, True)
        sigma2_g, sigma2 = new_g, new_e
        dl_prev = dl
        prev_l = l
        if rel < rel_tol or (dl is not None
                             and abs(dl) < 1e-12 * max(1.0, abs(l))):
            converged = True
            break
    sol = _solve_mme(factor, resp, sigma2 / sigma2_g)
    l = _loglik(factor, resp, sigma2_g, sigma2, sol)
    trace.append(l)
    eta = factor.Q @ sol.u
    se = math.sqrt(sigma2 * sol.c_lambda)
    return _EmResult(lambda_hat=sol.lambda_hat, eta=eta, sigma2_g=sigma2_g,
                     sigma2=sigma2, se_lambda=se, loglik=l,
                     trace=np.asarray(trace), n_iter=n_iter,
                     converged=converged, boundary=False)


def _px_step(factor: _ZFactor, resp: _Response, sol: _Solve, sigma2_g: float,
             sigma2: float, new_g: float, new_e: float) -> float:
    """Parameter-expanded rescaling of the sigma2_g update.

    The expanded model scales eta by alpha; its M-step gives a multiplier
    for the variance update.  The rescaled candidate is kept only when it
    actually raises the restricted likelihood, so acceleration can never
    break monotonicity.
    """
    k = sigma2 / sigma2_g
    denom = factor.lam + k
    frac = float(np.sum(factor.zt ** 2 / denom))
    s = factor.n - frac
    num = (float(resp.rt @ sol.u) - sol.lambda_hat * float(factor.zt @ sol.u)
           + sigma2 * frac / s)
    den = (float(np.sum(factor.lam * sol.u ** 2))
           + sigma2 * (float(np.sum(factor.lam / denom))
                       + float(np.sum(factor.lam * factor.zt ** 2 / denom ** 2)) / s))
    if den <= 0.0 or num <= 0.0:
        return new_g
    candidate = (num / den) ** 2 * new_g
    l_plain = _loglik(factor, resp, new_g, new_e)
    l_cand = _loglik(factor, resp, candidate, new_e)
    return candidate if l_cand > l_plain else new_g


class MixedEffectsHfa(BaseEstimator):
    """REML home advantage with random team effects.

    Parameters
    ----------
    max_iter : int, default 5000
        EM iteration budget.
    rel_tol : float, default 1e-10
        Stop when both variance components change by less than this
        relative amount in one step.
    var_floor : float, default 1e-12
        Fraction of the margin variance below which ``sigma2_g`` is
        treated as zero (boundary fit) and ``sigma2`` is floored.
    accelerate : bool, default False
        Use the likelihood-guarded parameter-expanded EM step.

    Fitted attributes
    -----------------
    lambda_, se_lambda_, ci95_ : the home-advantage estimate; the interval
        uses the normal 1.96 multiplier.
    sigma2_g_, sigma2_ : variance components.
    eta_ : ndarray, BLUPs of the team effects (sum of each connected
        schedule component is zero by construction).
    reml_loglik_, loglik_trace_, n_iter_, converged_, boundary_ :
        optimizer diagnostics; the trace is nondecreasing.
    """

    def __init__(self, max_iter: int = 5000, rel_tol: float = 1e-10,
                 var_floor: float = 1e-12, accelerate: bool = False):
        self.max_iter = max_iter
        self.rel_tol = rel_tol
        self.var_floor = var_floor
        self.accelerate = accelerate

    def fit(self, schedule: ScheduleMatrix, y=None) -> "MixedEffectsHfa":
        factor = _ZFactor.from_schedule(schedule)
        resp = _make_response(factor, schedule.Z, schedule.d)
        res = _em_reml(factor, resp, max_iter=self.max_iter,
                       rel_tol=self.rel_tol, var_floor=self.var_floor,
                       accelerate=self.accelerate)
        self.teams_ = schedule.teams
        self.lambda_ = res.lambda_hat
        self.eta_ = res.eta
        self.sigma2_g_ = res.sigma2_g
        self.sigma2_ = res.sigma2
        self.se_lambda_ = res.se_lambda
        self.ci95_ = (res.lambda_hat - 1.96 * res.se_lambda,
                      res.lambda_hat + 1.96 * res.se_lambda)
        self.reml_loglik_ = res.loglik
        self.loglik_trace_ = res.trace
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        self.boundary_ = res.boundary
        self.n_games_ = schedule.n_games
        return self

    def predict(self, schedule: ScheduleMatrix) -> np.ndarray:
        """Conditional mean margin (BLUP-based) for games on the same teams."""
        check_is_fitted(self, "lambda_")
        if schedule.teams != self.teams_:
            raise ValueError("schedule team set differs from the fitted one")
        return self.lambda_ + schedule.Z @ self.eta_

    def conditional_residuals(self, schedule: ScheduleMatrix) -> np.ndarray:
        """d - lambda_hat 1 - Z eta_hat for the fitted schedule."""
        return schedule.d - self.predict(schedule)

    def to_dict(self) -> dict:
        check_is_fitted(self, "lambda_")
        return {
            "lambda_hat": self.lambda_,
            "se_lambda": self.se_lambda_,
            "sigma2_g": self.sigma2_g_,
            "sigma2": self.sigma2_,
            "eta_blup": [float(v) for v in self.eta_],
            "reml_loglik": _finite_or_none(self.reml_loglik_),
            "iterations": self.n_iter_,
            "converged": self.converged_,
            "boundary": self.boundary_,
            "ci95": [self.ci95_[0], self.ci95_[1]],
        }


def henderson_solve(sm: ScheduleMatrix, ratio: float):
    """Solve the mixed-model equations at a fixed variance ratio.

    Parameters
    ----------
    sm : ScheduleMatrix
    ratio : float
        k = sigma2 / sigma2_g.  ``inf`` is accepted and yields the
        no-team-effects solution.

    Returns
    -------
    lambda_hat : float
    eta : ndarray, shape (n_teams,)
    c_lambda : float
        The (1,1) entry of the inverse coefficient matrix, so that
        Var(lambda_hat) = sigma2 * c_lambda.
    """
    if ratio <= 0.0:
        raise ValueError("variance ratio must be positive")
    factor = _ZFactor.from_schedule(sm)
    resp = _make_response(factor, sm.Z, sm.d)
    sol = _solve_mme(factor, resp, ratio)
    return sol.lambda_hat, factor.Q @ sol.u, sol.c_lambda


def reml_loglik(sm: ScheduleMatrix, sigma2_g: float, sigma2: float) -> float:
    """Restricted log-likelihood of the variance pair on this schedule."""
    factor = _ZFactor.from_schedule(sm)
    resp = _make_response(factor, sm.Z, sm.d)
    return _loglik(factor, resp, sigma2_g, sigma2)


def _finite_or_none(x: float):
    return x if math.isfinite(x) else None
