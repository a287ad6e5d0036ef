"""Synthetic leagues and resampling studies of estimator bias.

The resampling scheme holds the schedule fixed, rebuilds margins as

    y = lambda0 * 1 + Z eta* + e*

where ``e*`` is an iid-with-replacement draw from the fitted conditional
residuals and ``eta*`` is either the fitted team BLUPs (so the strength /
schedule alignment is preserved) or a uniform random permutation of them
(destroying the alignment but keeping the strength distribution).  Both
estimators are refit from scratch on every replicate, so the study sees
the full estimation pipeline, variance components included.

Replicate streams are spawned from a single ``SeedSequence``, so results
are reproducible and independent of how replicates are scheduled across
worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .diagnostics import schedule_bias_statistic
from .fixed import FixedEffectsHfa
from .mixed import MixedEffectsHfa
from .schedule import ScheduleMatrix

MODES = ("fixed_schedule", "shuffled_teams")


@dataclass(frozen=True)
class LeagueSpec:
    """Recipe for a synthetic league schedule.

    ``home_bias`` is the probability that the stronger team of a pairing
    hosts: 0.5 gives a strength-agnostic schedule, 1.0 the worst case
    where the best teams always play at home.
    """

    n_teams: int
    games_per_team: int
    sigma2_g: float = 4.0
    home_bias: float = 0.5

    def __post_init__(self) -> None:
        if self.n_teams < 2:
            raise ValueError("need at least two teams")
        if self.games_per_team < 1:
            raise ValueError("games_per_team must be positive")
        if (self.n_teams * self.games_per_team) % 2 != 0:
            raise ValueError(
                "n_teams * games_per_team must be even to pair every game")
        if not 0.0 <= self.home_bias <= 1.0:
            raise ValueError("home_bias must lie in [0, 1]")
        if self.sigma2_g < 0.0:
            raise ValueError("sigma2_g must be nonnegative")


@dataclass(frozen=True)
class League:
    """A generated schedule plus the team strengths that shaped it."""

    schedule: ScheduleMatrix
    eta_true: np.ndarray


def _round_robin_rounds(n_teams: int) -> list[list[tuple[int, int]]]:
    """Circle-method rounds; a dummy slot absorbs byes for odd counts."""
    slots = list(range(n_teams))
    dummy = None
    if n_teams % 2 == 1:
        dummy = n_teams
        slots.append(dummy)
    m = len(slots)
    rounds = []
    order = slots[:]
    for _ in range(m - 1):
        pairs = [(order[i], order[m - 1 - i]) for i in range(m // 2)]
        rounds.append([(a, b) for a, b in pairs if dummy not in (a, b)])
        order = [order[0]] + [order[-1]] + order[1:-1]
    return rounds


def generate_league(spec: LeagueSpec, rng: np.random.Generator) -> League:
    """Draw team strengths and build a schedule with the given hosting bias.

    Pairings come from cycling round-robin rounds, taking a pairing only
    while both teams are below their game quota; margins are left at zero
    for the caller to fill in (``schedule.with_margins``).
    """
    N = spec.n_teams
    eta = rng.normal(0.0, math.sqrt(spec.sigma2_g), size=N)
    counts = np.zeros(N, dtype=int)
    target = spec.games_per_team
    pairings: list[tuple[int, int]] = []
    rounds = _round_robin_rounds(N)
    while counts.min() < target:
        progressed = False
        for rnd in rounds:
            for a, b in rnd:
                if counts[a] < target and counts[b] < target:
                    pairings.append((a, b))
                    counts[a] += 1
                    counts[b] += 1
                    progressed = True
        if not progressed:
            raise ValueError("schedule quota cannot be met exactly "
                             f"({counts.min()}..{counts.max()} of {target})")
    n = len(pairings)
    Z = np.zeros((n, N))
    for i, (a, b) in enumerate(pairings):
        stronger, weaker = (a, b) if eta[a] >= eta[b] else (b, a)
        if rng.random() < spec.home_bias:
            home, away = stronger, weaker
        else:
            home, away = weaker, stronger
        Z[i, home], Z[i, away] = 1.0, -1.0
    width = len(str(N - 1))
    teams = tuple(f"T{j:0{width}d}" for j in range(N))
    sm = ScheduleMatrix(d=np.zeros(n), Z=Z, teams=teams,
                        net_home=Z.sum(axis=0).astype(np.int64))
    return League(schedule=sm, eta_true=eta)


@dataclass(frozen=True)
class SimSpec:
    """Resampling-study settings: replicate count, mode, seed, truth."""

    n_reps: int
    mode: str = "fixed_schedule"
    seed: int | None = None
    lambda0: float | None = None  # default: the base fit's estimate

    def __post_init__(self) -> None:
        if self.n_reps < 1:
            raise ValueError("n_reps must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class SimulationReport:
    """Per-replicate draws and summaries from one resampling study."""

    mode: str
    lambda0: float
    seed: int | None
    n_reps: int
    lambda_fixed: np.ndarray
    se_fixed: np.ndarray
    cover_fixed: np.ndarray
    lambda_mixed: np.ndarray
    se_mixed: np.ndarray
    cover_mixed: np.ndarray
    boundary: np.ndarray
    converged: np.ndarray
    diag_stat: np.ndarray        # NaN where the diagnostic is undefined
    diag_p: np.ndarray
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def _ok(self) -> np.ndarray:
        return ~np.isnan(self.lambda_fixed)

    def mean(self, model: str) -> float:
        return float(np.mean(self._draws(model)))

    def mc_se(self, model: str) -> float:
        draws = self._draws(model)
        return float(np.std(draws, ddof=1) / math.sqrt(draws.size))

    def bias(self, model: str) -> float:
        return self.mean(model) - self.lambda0

    def coverage(self, model: str) -> float:
        cover = (self.cover_fixed if model == "fixed" else self.cover_mixed)
        return float(np.mean(cover[self._ok()]))

    def t_p(self, model: str) -> float | None:
        """Two-sided one-sample t-test of the draws against lambda0."""
        draws = self._draws(model)
        if np.std(draws, ddof=1) == 0.0:
            return None
        return float(stats.ttest_1samp(draws, self.lambda0).pvalue)

    def _draws(self, model: str) -> np.ndarray:
        if model not in ("fixed", "mixed"):
            raise ValueError("model must be 'fixed' or 'mixed'")
        arr = self.lambda_fixed if model == "fixed" else self.lambda_mixed
        return arr[self._ok()]

    def summary(self) -> dict:
        out = {"mode": self.mode, "lambda0": self.lambda0,
               "n_reps": self.n_reps, "n_failed": self.n_failed,
               "seed": self.seed}
        for model in ("fixed", "mixed"):
            out[model] = {
                "mean": self.mean(model),
                "bias": self.bias(model),
                "mc_se": self.mc_se(model),
                "coverage95": self.coverage(model),
                "t_p_vs_lambda0": self.t_p(model),
            }
        ok = self._ok()
        applicable = ok & ~np.isnan(self.diag_stat)
        out["mixed"]["boundary_rate"] = float(np.mean(self.boundary[ok]))
        out["mixed"]["nonconverged"] = int(np.sum(~self.converged[ok]))
        out["diagnostic"] = {
            "n_applicable": int(np.sum(applicable)),
            "reject_rate_05": (float(np.mean(self.diag_p[applicable] < 0.05))
                               if applicable.any() else None),
            "median_p": (float(np.median(self.diag_p[applicable]))
                         if applicable.any() else None),
        }
        return out


def run_resampling(sm: ScheduleMatrix, base_fit: MixedEffectsHfa,
                   spec: SimSpec, n_jobs: int = 1) -> SimulationReport:
    """Refit both estimators on resampled margins; see the module docstring.

    Replicates that raise are recorded, not fatal, unless more than 1% of
    them fail.  Non-converged mixed fits still contribute (flagged in the
    report): dropping them would bias the study toward easy samples.
    """
    if base_fit.teams_ != sm.teams:
        raise ValueError("base fit and schedule refer to different teams")
    lambda0 = spec.lambda0 if spec.lambda0 is not None else base_fit.lambda_
    resid = sm.d - (base_fit.lambda_ + sm.Z @ base_fit.eta_)
    eta_base = base_fit.eta_
    n = sm.n_games
    R = spec.n_reps

    children = np.random.SeedSequence(spec.seed).spawn(R)
    cols = {name: np.full(R, np.nan) for name in
            ("lf", "sf", "lm", "sm_", "ds", "dp")}
    cover_f = np.zeros(R, dtype=bool)
    cover_m = np.zeros(R, dtype=bool)
    boundary = np.zeros(R, dtype=bool)
    converged = np.ones(R, dtype=bool)
    failures: list[tuple[int, str]] = []

    def one(r: int) -> None:
        rng = np.random.default_rng(children[r])
        # Draw order is part of the protocol: permutation first, then
        # residual indices, so the two modes consume identical streams.
        if spec.mode == "shuffled_teams":
            eta_star = rng.permutation(eta_base)
        else:
            eta_star = eta_base
        idx = rng.integers(0, n, size=n)
        y = lambda0 + sm.Z @ eta_star + resid[idx]
        rep = sm.with_margins(y)
        fixed = FixedEffectsHfa().fit(rep)
        mixed = MixedEffectsHfa().fit(rep)
        diag = schedule_bias_statistic(mixed, rep)
        cols["lf"][r] = fixed.lambda_
        cols["sf"][r] = fixed.se_lambda_
        cols["lm"][r] = mixed.lambda_
        cols["sm_"][r] = mixed.se_lambda_
        cover_f[r] = fixed.ci95_[0] <= lambda0 <= fixed.ci95_[1]
        cover_m[r] = mixed.ci95_[0] <= lambda0 <= mixed.ci95_[1]
        boundary[r] = mixed.boundary_
        converged[r] = mixed.converged_
        if diag.applicable:
            cols["ds"][r] = diag.statistic
            cols["dp"][r] = diag.p_value

    def safe(r: int) -> None:
        try:
            one(r)
        except Exception as exc:  # noqa: BLE001 - per-replicate isolation
            failures.append((r, f"{type(exc).__name__}: {exc}"))

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(safe, range(R)))
    else:
        for r in range(R):
            safe(r)

    if len(failures) > 0.01 * R:
        raise RuntimeError(
            f"{len(failures)} of {R} replicates failed; first: "
            f"{failures[0][1]}")
    return SimulationReport(
        mode=spec.mode, lambda0=lambda0, seed=spec.seed, n_reps=R,
        lambda_fixed=cols["lf"], se_fixed=cols["sf"], cover_fixed=cover_f,
        lambda_mixed=cols["lm"], se_mixed=cols["sm_"], cover_mixed=cover_m,
        boundary=boundary, converged=converged,
        diag_stat=cols["ds"], diag_p=cols["dp"],
        failures=sorted(failures))


def run_league_study(league: LeagueSpec, n_reps: int, lambda0: float,
                     sigma2: float, seed: int | None = None,
                     n_jobs: int = 1) -> SimulationReport:
    """Fit both estimators on freshly generated leagues.

    Unlike :func:`run_resampling`, every replicate draws new team
    strengths, a new schedule shaped by them, and new game noise, so the
    replicate means estimate unconditional bias of each estimator under
    the league's scheduling policy.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be positive")
    if sigma2 <= 0.0:
        raise ValueError("sigma2 must be positive")
    R = n_reps
    children = np.random.SeedSequence(seed).spawn(R)
    cols = {name: np.full(R, np.nan) for name in
            ("lf", "sf", "lm", "sm_", "ds", "dp")}
    cover_f = np.zeros(R, dtype=bool)
    cover_m = np.zeros(R, dtype=bool)
    boundary = np.zeros(R, dtype=bool)
    converged = np.ones(R, dtype=bool)
    failures: list[tuple[int, str]] = []
    sigma = math.sqrt(sigma2)

    def one(r: int) -> None:
        rng = np.random.default_rng(children[r])
        lg = generate_league(league, rng)
        sm_rep = lg.schedule
        noise = rng.normal(0.0, sigma, size=sm_rep.n_games)
        y = lambda0 + sm_rep.Z @ lg.eta_true + noise
        sm_rep = sm_rep.with_margins(y)
        fixed = FixedEffectsHfa().fit(sm_rep)
        mixed = MixedEffectsHfa().fit(sm_rep)
        diag = schedule_bias_statistic(mixed, sm_rep)
        cols["lf"][r] = fixed.lambda_
        cols["sf"][r] = fixed.se_lambda_
        cols["lm"][r] = mixed.lambda_
        cols["sm_"][r] = mixed.se_lambda_
        cover_f[r] = fixed.ci95_[0] <= lambda0 <= fixed.ci95_[1]
        cover_m[r] = mixed.ci95_[0] <= lambda0 <= mixed.ci95_[1]
        boundary[r] = mixed.boundary_
        converged[r] = mixed.converged_
        if diag.applicable:
            cols["ds"][r] = diag.statistic
            cols["dp"][r] = diag.p_value

    def safe(r: int) -> None:
        try:
            one(r)
        except Exception as exc:  # noqa: BLE001 - per-replicate isolation
            failures.append((r, f"{type(exc).__name__}: {exc}"))

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(safe, range(R)))
    else:
        for r in range(R):
            safe(r)

    if len(failures) > 0.01 * R:
        raise RuntimeError(
            f"{len(failures)} of {R} replicates failed; first: "
            f"{failures[0][1]}")
    return SimulationReport(
        mode="fresh_leagues", lambda0=lambda0, seed=seed, n_reps=R,
        lambda_fixed=cols["lf"], se_fixed=cols["sf"], cover_fixed=cover_f,
        lambda_mixed=cols["lm"], se_mixed=cols["sm_"], cover_mixed=cover_m,
        boundary=boundary, converged=converged,
        diag_stat=cols["ds"], diag_p=cols["dp"],
        failures=sorted(failures))
