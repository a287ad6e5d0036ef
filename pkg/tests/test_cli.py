"""End-to-end checks of the command-line pipeline."""

import hashlib
import json
import re

import numpy as np
import pytest

from homefield.cli import main


def _write_games(path, seasons, conf_teams, seed=0, lambda0=3.0,
                 round_robin=True, n_games=40):
    """Write a games CSV; round_robin=True gives balanced schedules."""
    rng = np.random.default_rng(seed)
    lines = ["season,date,home_team,away_team,home_score,away_score,neutral"]
    for season in seasons:
        for teams in conf_teams.values():
            eta = {t: rng.normal(0.0, 8.0) for t in teams}
            if round_robin:
                pairs = [(h, a) for h in teams for a in teams if h != a]
            else:
                pairs = []
                for _ in range(n_games):
                    h, a = rng.choice(len(teams), size=2, replace=False)
                    pairs.append((teams[h], teams[a]))
            for k, (h, a) in enumerate(pairs):
                margin = lambda0 + eta[h] - eta[a] + rng.normal(0.0, 5.0)
                hs = max(0, 21 + int(round(margin)))
                lines.append(f"{season},{season}-10-{k % 28 + 1:02d},"
                             f"{h},{a},{hs},21,0")
    path.write_text("\n".join(lines) + "\n")


def _write_conferences(path, seasons, conf_teams):
    lines = ["season,team,conference"]
    for season in seasons:
        for conf, teams in conf_teams.items():
            for t in teams:
                lines.append(f"{season},{t},{conf}")
    path.write_text("\n".join(lines) + "\n")


def _write_series(path, n_conf=4, years=range(2010, 2016), seed=0):
    rng = np.random.default_rng(seed)
    lines = ["year,conference,lambda_hat,se"]
    for j in range(n_conf):
        for yr in years:
            lam = 2.5 - 0.05 * (yr - 2017) + rng.normal(0.0, 0.4)
            lines.append(f"{yr},C{j},{lam:.6f},0.5")
    path.write_text("\n".join(lines) + "\n")


def _data_rows(csv_path):
    """Rows of a CLI CSV, past the comment block and the header."""
    lines = [ln for ln in csv_path.read_text().splitlines()
             if ln and not ln.startswith("#")]
    return lines[0], lines[1:]


TEAMS_2CONF = {"EAST": [f"E{i}" for i in range(6)],
               "WEST": [f"W{i}" for i in range(6)]}


@pytest.fixture()
def two_conf_inputs(tmp_path):
    games = tmp_path / "games.csv"
    confs = tmp_path / "conferences.csv"
    _write_games(games, (2015, 2016), TEAMS_2CONF, seed=1)
    _write_conferences(confs, (2015, 2016), TEAMS_2CONF)
    return games, confs


def test_phase1_per_conference_row_counts(two_conf_inputs, tmp_path):
    games, confs = two_conf_inputs
    out = tmp_path / "out"
    rc = main(["phase1", "--games", str(games), "--conferences", str(confs),
               "--model", "both", "--out-dir", str(out)])
    assert rc == 0
    header, rows = _data_rows(out / "hfa_series.csv")
    assert header == "year,conference,lambda_hat,se"
    assert len(rows) == 4            # 2 seasons x 2 conferences
    _, mixed_rows = _data_rows(out / "hfa_series_mixed.csv")
    assert len(mixed_rows) == 4
    report = json.loads((out / "fits.json").read_text())
    assert len(report["groups"]) == 4
    for row in rows:
        year, conf, lam, se = row.split(",")
        assert conf in ("EAST", "WEST")
        float(lam), float(se)        # plain '.'-decimal numbers


def test_phase1_full_season_row_counts(two_conf_inputs, tmp_path):
    games, _ = two_conf_inputs
    out = tmp_path / "out"
    rc = main(["phase1", "--games", str(games), "--full-season",
               "--model", "fixed", "--out-dir", str(out)])
    assert rc == 0
    _, rows = _data_rows(out / "hfa_series.csv")
    assert len(rows) == 2            # one pooled row per season
    assert all(r.split(",")[1] == "ALL" for r in rows)


def test_phase1_missing_conferences_is_usage_error(two_conf_inputs, tmp_path):
    games, _ = two_conf_inputs
    with pytest.raises(SystemExit) as err:
        main(["phase1", "--games", str(games), "--per-conference",
              "--out-dir", str(tmp_path / "out")])
    assert err.value.code == 2


def test_phase1_unreadable_input_fails(tmp_path):
    rc = main(["phase1", "--games", str(tmp_path / "missing.csv"),
               "--full-season", "--out-dir", str(tmp_path / "out")])
    assert rc == 1


def test_phase1_nonestimable_group_omitted_with_warning(tmp_path, capsys):
    # ONEWAY's A-teams always host its B-teams, so the home advantage is
    # confounded with the A-vs-B strength split; GOOD is a balanced cycle.
    lines = ["season,date,home_team,away_team,home_score,away_score,neutral"]
    for h, a in [("A1", "B1"), ("A1", "B2"), ("A2", "B1"), ("A2", "B2")]:
        lines.append(f"2015,2015-10-01,{h},{a},24,21,0")
    good = ["G1", "G2", "G3"]
    for i in range(3):
        lines.append(f"2015,2015-10-02,{good[i]},{good[(i + 1) % 3]},28,14,0")
        lines.append(f"2015,2015-10-03,{good[(i + 1) % 3]},{good[i]},20,17,0")
    games = tmp_path / "games.csv"
    games.write_text("\n".join(lines) + "\n")
    confs = tmp_path / "conferences.csv"
    rows = ["season,team,conference"]
    rows += [f"2015,{t},ONEWAY" for t in ("A1", "A2", "B1", "B2")]
    rows += [f"2015,{t},GOOD" for t in good]
    confs.write_text("\n".join(rows) + "\n")

    out = tmp_path / "out"
    rc = main(["phase1", "--games", str(games), "--conferences", str(confs),
               "--model", "both", "--out-dir", str(out)])
    assert rc == 0
    err = capsys.readouterr().err
    assert "not estimable" in err
    _, fixed_rows = _data_rows(out / "hfa_series.csv")
    assert [r.split(",")[1] for r in fixed_rows] == ["GOOD"]
    _, mixed_rows = _data_rows(out / "hfa_series_mixed.csv")
    assert [r.split(",")[1] for r in mixed_rows] == ["GOOD", "ONEWAY"]


def test_diagnose_median_row_and_json(tmp_path):
    games = tmp_path / "games.csv"
    confs = tmp_path / "conferences.csv"
    teams = {"EAST": [f"E{i}" for i in range(8)],
             "WEST": [f"W{i}" for i in range(8)]}
    _write_games(games, (2015,), teams, seed=5, round_robin=False, n_games=48)
    _write_conferences(confs, (2015,), teams)
    out = tmp_path / "out"
    rc = main(["diagnose", "--games", str(games), "--conferences", str(confs),
               "--out-dir", str(out)])
    assert rc == 0
    header, rows = _data_rows(out / "diagnostics.csv")
    assert header == "scope,statistic,dof,p_value,applicable,reason"
    assert len(rows) == 3 and rows[-1].startswith("MEDIAN,")
    report = json.loads((out / "diagnostics.json").read_text())
    assert len(report["groups"]) == 2
    applicable = [g for g in report["groups"] if g["diagnostic"]["applicable"]]
    assert applicable, "expected at least one applicable scope for this seed"
    ps = sorted(g["diagnostic"]["p_value"] for g in applicable)
    assert report["median_p"] == pytest.approx(float(np.median(ps)))
    median_cell = rows[-1].split(",")[3]
    assert float(median_cell) == pytest.approx(report["median_p"])


def test_diagnose_balanced_league_not_applicable(two_conf_inputs, tmp_path):
    games, confs = two_conf_inputs   # round robin: every net home count 0
    out = tmp_path / "out"
    rc = main(["diagnose", "--games", str(games), "--conferences", str(confs),
               "--out-dir", str(out)])
    assert rc == 0
    report = json.loads((out / "diagnostics.json").read_text())
    assert all(not g["diagnostic"]["applicable"] for g in report["groups"])
    assert report["median_p"] is None
    _, rows = _data_rows(out / "diagnostics.csv")
    assert rows[-1].split(",")[3] == ""   # empty median cell


def test_simulate_zero_reps_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--league", "--reps", "0",
              "--out-dir", str(tmp_path)])
    assert err.value.code == 2


def test_simulate_league_and_games_are_exclusive(two_conf_inputs, tmp_path):
    games, _ = two_conf_inputs
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--league", "--games", str(games),
              "--out-dir", str(tmp_path)])
    assert err.value.code == 2


def test_simulate_needs_a_source(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--reps", "5", "--out-dir", str(tmp_path)])
    assert err.value.code == 2


def test_simulate_ambiguous_group_fails(two_conf_inputs, tmp_path, capsys):
    games, confs = two_conf_inputs
    rc = main(["simulate", "--games", str(games), "--conferences", str(confs),
               "--reps", "4", "--seed", "1", "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "narrow with --season/--conference" in capsys.readouterr().err


def test_simulate_games_source_runs(two_conf_inputs, tmp_path):
    games, confs = two_conf_inputs
    out = tmp_path / "out"
    rc = main(["simulate", "--games", str(games), "--conferences", str(confs),
               "--season", "2015", "--conference", "EAST", "--mode", "shuffled",
               "--reps", "6", "--seed", "11", "--out-dir", str(out)])
    assert rc == 0
    payload = json.loads((out / "simulation.json").read_text())
    assert payload["summary"]["mode"] == "shuffled_teams"
    assert payload["season"] == 2015 and payload["conference"] == "EAST"
    _, rows = _data_rows(out / "draws.csv")
    assert len(rows) == 6


def test_simulate_same_seed_same_bytes(tmp_path):
    argv = ["simulate", "--league", "--n-teams", "6", "--games-per-team", "4",
            "--reps", "8", "--seed", "7"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out-dir", str(out_a)]) == 0
    assert main(argv + ["--out-dir", str(out_b), "--threads", "4"]) == 0
    for name in ("simulation.json", "draws.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_simulate_draws_and_prints_seed_when_absent(tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["simulate", "--league", "--n-teams", "6", "--games-per-team",
               "4", "--reps", "5", "--out-dir", str(out)])
    assert rc == 0
    match = re.search(r"seed: (\d+) \(drawn; pass --seed \1 to reproduce\)",
                      capsys.readouterr().err)
    assert match is not None
    seed = int(match.group(1))
    payload = json.loads((out / "simulation.json").read_text())
    assert payload["metadata"]["seed"] == seed
    out2 = tmp_path / "out2"
    rc = main(["simulate", "--league", "--n-teams", "6", "--games-per-team",
               "4", "--reps", "5", "--seed", str(seed),
               "--out-dir", str(out2)])
    assert rc == 0
    assert (out / "draws.csv").read_bytes() == (out2 / "draws.csv").read_bytes()


def test_phase1_output_feeds_phase2(tmp_path):
    teams = {f"C{j}": [f"C{j}T{i}" for i in range(5)] for j in range(3)}
    games = tmp_path / "games.csv"
    confs = tmp_path / "conferences.csv"
    seasons = (2014, 2015, 2016)
    _write_games(games, seasons, teams, seed=3)
    _write_conferences(confs, seasons, teams)
    p1 = tmp_path / "p1"
    assert main(["phase1", "--games", str(games), "--conferences", str(confs),
                 "--model", "fixed", "--out-dir", str(p1)]) == 0
    p2 = tmp_path / "p2"
    rc = main(["phase2", "--series", str(p1 / "hfa_series.csv"),
               "--design", "random-coef", "--out-dir", str(p2)])
    assert rc == 0
    report = json.loads((p2 / "trend.json").read_text())
    assert report["random_coef"]["converged"]
    assert len(report["random_coef"]["alpha"]) == 2
    _, rows = _data_rows(p2 / "fitted_lines.csv")
    assert rows[0].startswith("POPULATION,")
    assert [r.split(",")[0] for r in rows[1:]] == ["C0", "C1", "C2"]


def test_phase2_two_conferences_suggest_fixed_trend(tmp_path, capsys):
    series = tmp_path / "series.csv"
    _write_series(series, n_conf=2)
    rc = main(["phase2", "--series", str(series), "--design", "random-coef",
               "--out-dir", str(tmp_path / "out")])
    assert rc == 1
    assert "fixed-trend" in capsys.readouterr().err


def test_phase2_fixed_trend_with_lrt(tmp_path):
    series = tmp_path / "series.csv"
    _write_series(series, n_conf=2)
    out = tmp_path / "out"
    rc = main(["phase2", "--series", str(series), "--design", "fixed-trend",
               "--trend-model", "full", "--lrt-against", "common_trend",
               "--out-dir", str(out)])
    assert rc == 0
    report = json.loads((out / "trend.json").read_text())
    assert report["fixed_trend"]["model"] == "full"
    lrt_block = report["lrt"]
    assert lrt_block["dof"] == 2 and 0.0 <= lrt_block["p_value"] <= 1.0
    _, rows = _data_rows(out / "fitted_lines.csv")
    assert [r.split(",")[0] for r in rows] == ["C0", "C1"]


def test_phase2_boundary_test_thread_invariant(tmp_path):
    series = tmp_path / "series.csv"
    _write_series(series, n_conf=4)
    argv = ["phase2", "--series", str(series), "--boundary-sims", "19",
            "--seed", "5"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out-dir", str(out_a)]) == 0
    assert main(argv + ["--out-dir", str(out_b), "--threads", "3"]) == 0
    assert ((out_a / "trend.json").read_bytes()
            == (out_b / "trend.json").read_bytes())
    report = json.loads((out_a / "trend.json").read_text())
    assert report["boundary_test"]["n_sim"] == 19
    assert 0.0 < report["boundary_test"]["p_value"] <= 1.0


def test_metadata_block_contents(two_conf_inputs, tmp_path):
    games, confs = two_conf_inputs
    out = tmp_path / "out"
    main(["phase1", "--games", str(games), "--conferences", str(confs),
          "--out-dir", str(out)])
    meta = json.loads((out / "fits.json").read_text())["metadata"]
    assert set(meta) == {"command", "version", "inputs", "seed"}
    assert meta["command"].startswith("homefield phase1")
    assert "--out-dir" not in meta["command"]
    assert meta["inputs"]["games"] == hashlib.sha256(
        games.read_bytes()).hexdigest()
    head = (out / "hfa_series.csv").read_text().splitlines()[0]
    assert head == f"# command: {meta['command']}"


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    assert capsys.readouterr().out.strip().startswith("homefield ")
