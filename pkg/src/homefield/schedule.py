"""Game ingestion and schedule design matrices.

A season of games is encoded as a response vector of home margins ``d``
(home score minus away score) and an incidence matrix ``Z`` with one row
per game holding +1 in the home team's column and -1 in the away team's
column.  Everything downstream (the fixed- and random-team-effect models,
the schedule-bias diagnostics, the resampling studies) consumes this pair.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from ._linalg import svd_rank

GAMES_HEADER = ("season", "date", "home_team", "away_team",
                "home_score", "away_score", "neutral")
CONFERENCES_HEADER = ("season", "team", "conference")

_TRUTHY = {"1", "true", "t", "yes"}
_FALSY = {"0", "false", "f", "no", ""}


class ParseError(ValueError):
    """Malformed input; the message names the offending 1-based line."""


class EstimabilityError(ValueError):
    """Raised when a requested quantity is not identified by the schedule."""


@dataclass(frozen=True)
class Game:
    """One game: teams, final scores, and whether the site was neutral."""

    season: int
    home_team: str
    away_team: str
    home_score: int
    away_score: int
    neutral: bool = False

    def __post_init__(self) -> None:
        if self.home_team == self.away_team:
            raise ValueError(f"self-game: {self.home_team!r} listed as both teams")
        if self.home_score < 0 or self.away_score < 0:
            raise ValueError("scores must be nonnegative")

    @property
    def margin(self) -> float:
        """Home margin of victory (negative when the road team won)."""
        return float(self.home_score - self.away_score)


@dataclass(frozen=True)
class GameSet:
    """An ordered, immutable collection of games."""

    games: tuple[Game, ...]
    label: str = ""

    def __len__(self) -> int:
        return len(self.games)

    def __iter__(self) -> Iterator[Game]:
        return iter(self.games)

    def seasons(self) -> tuple[int, ...]:
        return tuple(sorted({g.season for g in self.games}))


class ConferenceMap:
    """(season, team) -> conference membership lookup.

    A team may belong to at most one conference per season; conflicting
    rows are rejected at construction.
    """

    def __init__(self, entries: Mapping[tuple[int, str], str] | None = None):
        self._entries: dict[tuple[int, str], str] = {}
        if entries:
            for (season, team), conference in entries.items():
                self.add(season, team, conference)

    def add(self, season: int, team: str, conference: str) -> None:
        key = (season, team)
        existing = self._entries.get(key)
        if existing is not None and existing != conference:
            raise ValueError(
                f"team {team!r} mapped to both {existing!r} and "
                f"{conference!r} in season {season}")
        self._entries[key] = conference

    def get(self, season: int, team: str) -> str | None:
        return self._entries.get((season, team))

    def __len__(self) -> int:
        return len(self._entries)

    def conferences(self) -> tuple[str, ...]:
        return tuple(sorted(set(self._entries.values())))


@dataclass(frozen=True)
class ScheduleMatrix:
    """Margins ``d`` and the +-1 home/away incidence matrix ``Z``.

    Attributes
    ----------
    d : ndarray, shape (n,)
        Home margin per game, points.
    Z : ndarray, shape (n, N)
        Row i holds +1 for game i's home team, -1 for its away team.
    teams : tuple of str
        Column order of ``Z`` (lexicographically sorted team names).
    net_home : ndarray of int, shape (N,)
        Column sums of ``Z``: home-game count minus away-game count
        per team.  All zero exactly when the schedule is balanced.
    """

    d: np.ndarray
    Z: np.ndarray
    teams: tuple[str, ...]
    net_home: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        net = np.asarray(self.net_home, dtype=np.int64)
        if Z.ndim != 2 or d.ndim != 1 or Z.shape[0] != d.shape[0]:
            raise ValueError("d and Z shapes disagree")
        if Z.shape[1] != len(self.teams) or net.shape[0] != len(self.teams):
            raise ValueError("team count disagrees with Z / net_home")
        if not np.isin(Z, (-1.0, 0.0, 1.0)).all():
            raise ValueError("Z entries must lie in {-1, 0, +1}")
        if not ((Z == 1).sum(axis=1) == 1).all() or not ((Z == -1).sum(axis=1) == 1).all():
            raise ValueError("each row of Z must have exactly one +1 and one -1")
        if not np.array_equal(Z.sum(axis=0).astype(np.int64), net):
            raise ValueError("net_home must equal the column sums of Z")
        for arr in (d, Z, net):
            arr.flags.writeable = False
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "net_home", net)
        object.__setattr__(self, "teams", tuple(self.teams))

    @property
    def n_games(self) -> int:
        return self.d.shape[0]

    @property
    def n_teams(self) -> int:
        return len(self.teams)

    def with_margins(self, d: np.ndarray) -> "ScheduleMatrix":
        """Same schedule, new response vector (used by simulators)."""
        d = np.asarray(d, dtype=float)
        if d.shape != self.d.shape:
            raise ValueError(f"expected {self.d.shape[0]} margins, got {d.shape}")
        return ScheduleMatrix(d=d, Z=self.Z, teams=self.teams,
                              net_home=self.net_home, label=self.label)


@dataclass(frozen=True)
class EstimabilityReport:
    lambda_estimable: bool
    rank_W: int


@dataclass(frozen=True)
class IntraconferenceSplit:
    """Result of splitting a GameSet into intraconference subsets."""

    by_conference: dict[str, GameSet]
    n_dropped_unmapped: int = 0
    n_dropped_crossconference: int = 0
    n_dropped_neutral: int = 0

    @property
    def n_dropped(self) -> int:
        """Games dropped for conference reasons (unmapped or cross-conference)."""
        return self.n_dropped_unmapped + self.n_dropped_crossconference


def _split_row(row: list[str], expected: int, line_num: int) -> list[str]:
    if len(row) != expected:
        raise ParseError(
            f"line {line_num}: expected {expected} fields, got {len(row)}")
    return [f.strip() for f in row]


def _parse_int(value: str, what: str, line_num: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"line {line_num}: non-integer {what}: {value!r}") from None


def parse_games(stream: Iterable[str]) -> GameSet:
    """Parse a games CSV into a GameSet, preserving row order.

    Expected header: ``season,date,home_team,away_team,home_score,
    away_score,neutral``.  The date field may be empty and is ignored.
    Lines starting with ``#`` are treated as comments.

    Raises
    ------
    ParseError
        On a missing/incorrect header or any malformed row; the message
        names the 1-based line number.
    """
    reader = csv.reader(_skip_comments(stream))
    try:
        header = next(row for row in reader if row)
    except StopIteration:
        raise ParseError("line 1: missing header") from None
    if tuple(h.strip() for h in header) != GAMES_HEADER:
        raise ParseError(
            f"line {reader.line_num}: expected header {','.join(GAMES_HEADER)}")
    games: list[Game] = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        fields = _split_row(row, len(GAMES_HEADER), line)
        season = _parse_int(fields[0], "season", line)
        home, away = fields[2], fields[3]
        home_score = _parse_int(fields[4], "score", line)
        away_score = _parse_int(fields[5], "score", line)
        flag = fields[6].lower()
        if flag in _TRUTHY:
            neutral = True
        elif flag in _FALSY:
            neutral = False
        else:
            raise ParseError(f"line {line}: bad neutral flag {fields[6]!r}")
        try:
            game = Game(season=season, home_team=home, away_team=away,
                        home_score=home_score, away_score=away_score,
                        neutral=neutral)
        except ValueError as exc:
            raise ParseError(f"line {line}: {exc}") from None
        games.append(game)
    return GameSet(games=tuple(games))


def parse_conferences(stream: Iterable[str]) -> ConferenceMap:
    """Parse a conference membership CSV (``season,team,conference``)."""
    reader = csv.reader(_skip_comments(stream))
    try:
        header = next(row for row in reader if row)
    except StopIteration:
        raise ParseError("line 1: missing header") from None
    if tuple(h.strip() for h in header) != CONFERENCES_HEADER:
        raise ParseError(
            f"line {reader.line_num}: expected header {','.join(CONFERENCES_HEADER)}")
    cm = ConferenceMap()
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        fields = _split_row(row, len(CONFERENCES_HEADER), line)
        season = _parse_int(fields[0], "season", line)
        try:
            cm.add(season, fields[1], fields[2])
        except ValueError as exc:
            raise ParseError(f"line {line}: {exc}") from None
    return cm


def _skip_comments(stream: Iterable[str]) -> Iterator[str]:
    # Comment lines become blank lines (not dropped) so that the reader's
    # line numbers keep matching the original file in error messages.
    for line in stream:
        yield "\n" if line.lstrip().startswith("#") else line


def filter_intraconference(gs: GameSet, cm: ConferenceMap,
                           drop_neutral: bool = True) -> IntraconferenceSplit:
    """Split games by conference, keeping only intraconference matchups.

    A game is kept under conference C exactly when both teams map to C in
    the game's season.  Neutral-site games are removed first when
    ``drop_neutral`` is set.  Unmapped and cross-conference games are
    dropped and counted, never fatal: real feeds are messy.
    """
    kept: dict[str, list[Game]] = {}
    n_neutral = n_unmapped = n_cross = 0
    for game in gs:
        if drop_neutral and game.neutral:
            n_neutral += 1
            continue
        home_conf = cm.get(game.season, game.home_team)
        away_conf = cm.get(game.season, game.away_team)
        if home_conf is None or away_conf is None:
            n_unmapped += 1
            continue
        if home_conf != away_conf:
            n_cross += 1
            continue
        kept.setdefault(home_conf, []).append(game)
    by_conference = {
        conf: GameSet(games=tuple(games), label=conf)
        for conf, games in sorted(kept.items())
    }
    return IntraconferenceSplit(by_conference=by_conference,
                                n_dropped_unmapped=n_unmapped,
                                n_dropped_crossconference=n_cross,
                                n_dropped_neutral=n_neutral)


def split_by_season(gs: GameSet) -> dict[int, GameSet]:
    """Partition a GameSet by season, labels extended with the year."""
    by_season: dict[int, list[Game]] = {}
    for game in gs:
        by_season.setdefault(game.season, []).append(game)
    prefix = f"{gs.label} " if gs.label else ""
    return {
        season: GameSet(games=tuple(games), label=f"{prefix}{season}")
        for season, games in sorted(by_season.items())
    }


def build_design(gs: GameSet) -> ScheduleMatrix:
    """Construct the margin vector and +-1 design matrix for a GameSet.

    Teams are ordered lexicographically by name so that identical inputs
    always produce identical matrices.
    """
    if len(gs) == 0:
        raise ValueError("cannot build a design matrix from an empty GameSet")
    teams = sorted({t for g in gs for t in (g.home_team, g.away_team)})
    index = {team: j for j, team in enumerate(teams)}
    n, N = len(gs), len(teams)
    Z = np.zeros((n, N))
    d = np.empty(n)
    for i, game in enumerate(gs):
        Z[i, index[game.home_team]] = 1.0
        Z[i, index[game.away_team]] = -1.0
        d[i] = game.margin
    net_home = Z.sum(axis=0).astype(np.int64)
    return ScheduleMatrix(d=d, Z=Z, teams=tuple(teams), net_home=net_home,
                          label=gs.label)


def check_estimability(sm: ScheduleMatrix, tol: float | None = None) -> EstimabilityReport:
    """Decide whether the home-advantage intercept is identified.

    The intercept column of ``W = [1 | Z]`` is estimable exactly when the
    first coordinate vector lies in the row space of ``W``; this is tested
    by projecting it onto that row space and comparing.  The projection
    test is numerically stabler than comparing two computed ranks.
    """
    W = np.hstack([np.ones((sm.n_games, 1)), sm.Z])
    if tol is None:
        tol = 1e-8 * float(np.abs(W).max())
    _, s, Vt = np.linalg.svd(W, full_matrices=False)
    rank = svd_rank(W.shape, s)
    Vr = Vt[:rank]
    # e1' (W+ W) = (row 0 of the projector V_r' V_r)
    proj = Vr.T @ Vr[:, 0]
    e1 = np.zeros(W.shape[1])
    e1[0] = 1.0
    estimable = bool(np.abs(proj - e1).max() < tol)
    return EstimabilityReport(lambda_estimable=estimable, rank_W=rank)
