"""Parsing, conference filtering, and design-matrix construction."""

import io

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from conftest import balanced_pairs, schedule_from_pairs
from homefield.schedule import (EstimabilityError, Game, GameSet, ParseError,
                                ScheduleMatrix, build_design,
                                check_estimability, filter_intraconference,
                                parse_conferences, parse_games,
                                split_by_season)

GAMES_CSV = """\
season,date,home_team,away_team,home_score,away_score,neutral
# a comment line
2019,2019-09-01,AAA,BBB,28,14,0
2019,,BBB,CCC,10,13,false
2019,2019-10-01,AAA,CCC,21,21,true
2020,2020-09-05,CCC,AAA,7,30,no
"""

CONF_CSV = """\
season,team,conference
2019,AAA,East
2019,BBB,East
2019,CCC,West
2020,AAA,East
2020,CCC,East
"""


def test_parse_games_happy_path():
    gs = parse_games(io.StringIO(GAMES_CSV))
    assert len(gs) == 4
    g = gs.games[0]
    assert (g.season, g.home_team, g.away_team) == (2019, "AAA", "BBB")
    assert g.margin == 14.0
    assert not g.neutral
    assert gs.games[2].neutral
    assert gs.seasons() == (2019, 2020)


def test_parse_games_rejects_bad_header():
    with pytest.raises(ParseError, match="expected header"):
        parse_games(io.StringIO("season,home,away\n"))
    with pytest.raises(ParseError, match="line 1"):
        parse_games(io.StringIO(""))


def test_parse_games_reports_line_numbers():
    bad_fields = GAMES_CSV + "2020,x,AAA,BBB,1\n"
    with pytest.raises(ParseError, match="line 7"):
        parse_games(io.StringIO(bad_fields))
    bad_score = GAMES_CSV + "2020,x,AAA,BBB,one,2,0\n"
    with pytest.raises(ParseError, match="non-integer score"):
        parse_games(io.StringIO(bad_score))
    bad_flag = GAMES_CSV + "2020,x,AAA,BBB,1,2,maybe\n"
    with pytest.raises(ParseError, match="bad neutral flag"):
        parse_games(io.StringIO(bad_flag))


def test_game_validation():
    with pytest.raises(ValueError, match="self-game"):
        Game(season=2019, home_team="AAA", away_team="AAA",
             home_score=1, away_score=0)
    with pytest.raises(ValueError, match="nonnegative"):
        Game(season=2019, home_team="AAA", away_team="BBB",
             home_score=-1, away_score=0)
    # negative margins are fine; negative scores are not
    g = Game(season=2019, home_team="AAA", away_team="BBB",
             home_score=0, away_score=9)
    assert g.margin == -9.0


def test_parse_games_self_game_names_line():
    bad = GAMES_CSV + "2020,x,AAA,AAA,1,2,0\n"
    with pytest.raises(ParseError, match="line 7.*self-game"):
        parse_games(io.StringIO(bad))


def test_parse_conferences_and_conflict():
    cm = parse_conferences(io.StringIO(CONF_CSV))
    assert cm.get(2019, "AAA") == "East"
    assert cm.get(2019, "CCC") == "West"
    assert cm.get(2020, "CCC") == "East"    # moved between seasons
    assert cm.get(2019, "ZZZ") is None
    conflict = CONF_CSV + "2019,AAA,West\n"
    with pytest.raises(ParseError, match="line 7"):
        parse_conferences(io.StringIO(conflict))


def test_filter_intraconference_counts():
    gs = parse_games(io.StringIO(GAMES_CSV))
    cm = parse_conferences(io.StringIO(CONF_CSV))
    split = filter_intraconference(gs, cm)
    # 2019 AAA-BBB is intra-East; 2019 BBB-CCC crosses; the neutral game
    # is dropped before anything else; 2020 CCC-AAA is intra-East.
    assert split.n_dropped_neutral == 1
    assert split.n_dropped_crossconference == 1
    assert split.n_dropped_unmapped == 0
    east = split.by_conference["East"]
    assert len(east) == 2
    assert {g.season for g in east} == {2019, 2020}

    kept_neutral = filter_intraconference(gs, cm, drop_neutral=False)
    assert kept_neutral.n_dropped_neutral == 0
    # the neutral AAA-CCC game is cross-conference in 2019 anyway
    assert kept_neutral.n_dropped_crossconference == 2


def test_filter_unmapped_games_counted():
    gs = parse_games(io.StringIO(GAMES_CSV))
    cm = parse_conferences(io.StringIO("season,team,conference\n2019,AAA,East\n"))
    split = filter_intraconference(gs, cm)
    # BBB unmapped in 2019 (twice); nothing mapped at all in 2020
    assert split.n_dropped_unmapped == 3
    assert split.by_conference == {}


def test_split_by_season_partitions():
    gs = parse_games(io.StringIO(GAMES_CSV))
    per = split_by_season(gs)
    assert sorted(per) == [2019, 2020]
    assert len(per[2019]) == 3
    assert len(per[2020]) == 1
    assert all(g.season == 2019 for g in per[2019])


def test_build_design_layout():
    gs = parse_games(io.StringIO(GAMES_CSV))
    sm = build_design(split_by_season(gs)[2019])
    assert sm.teams == ("AAA", "BBB", "CCC")   # lexicographic
    assert sm.n_games == 3 and sm.n_teams == 3
    assert_array_equal(sm.Z[0], [1.0, -1.0, 0.0])
    assert_array_equal(sm.Z[1], [0.0, 1.0, -1.0])
    assert_array_equal(sm.d, [14.0, -3.0, 0.0])
    assert_array_equal(sm.net_home, sm.Z.sum(axis=0).astype(int))


def test_build_design_empty_errors():
    with pytest.raises(ValueError, match="empty"):
        build_design(GameSet(games=()))


def test_schedule_matrix_validation():
    Z = np.zeros((2, 3))
    Z[0, 0], Z[0, 1] = 1.0, -1.0
    Z[1, 1], Z[1, 2] = 1.0, -1.0
    good = ScheduleMatrix(d=np.zeros(2), Z=Z, teams=("a", "b", "c"),
                          net_home=Z.sum(axis=0).astype(np.int64))
    assert not good.Z.flags.writeable
    assert not good.d.flags.writeable

    bad = Z.copy()
    bad[0, 2] = 1.0
    with pytest.raises(ValueError):
        ScheduleMatrix(d=np.zeros(2), Z=bad, teams=("a", "b", "c"),
                       net_home=bad.sum(axis=0).astype(np.int64))
    with pytest.raises(ValueError):
        ScheduleMatrix(d=np.zeros(2), Z=Z, teams=("a", "b", "c"),
                       net_home=np.array([5, 0, -5], dtype=np.int64))


def test_with_margins_replaces_only_d():
    sm = schedule_from_pairs([(0, 1), (1, 2), (2, 0)])
    new = sm.with_margins([1.0, 2.0, 3.0])
    assert_array_equal(new.d, [1.0, 2.0, 3.0])
    assert new.teams == sm.teams
    assert_array_equal(new.Z, sm.Z)
    with pytest.raises(ValueError):
        sm.with_margins([1.0])


def test_estimability_balanced_cycle():
    rng = np.random.default_rng(0)
    sm = schedule_from_pairs(balanced_pairs(rng, 6, rounds=2))
    report = check_estimability(sm)
    assert report.lambda_estimable
    # [1|Z] loses exactly one rank to the constant team-shift null vector
    assert report.rank_W == 6


def test_estimability_one_directional_bipartite():
    # Group {0,1} always hosts group {2,3}: shifting hosts up by c and
    # visitors down by c while dropping the intercept by 2c is invisible,
    # so the home advantage is confounded with the group split.
    sm = schedule_from_pairs([(0, 2), (0, 3), (1, 2), (1, 3)])
    report = check_estimability(sm)
    assert not report.lambda_estimable


def test_estimability_restored_by_return_game():
    pairs = [(0, 2), (0, 3), (1, 2), (1, 3), (2, 0)]
    assert check_estimability(schedule_from_pairs(pairs)).lambda_estimable


def test_estimability_error_is_value_error():
    assert issubclass(EstimabilityError, ValueError)
    assert issubclass(ParseError, ValueError)
