"""Command-line pipeline: per-season fits, diagnostics, simulations, trends.

Four subcommands mirror the analysis stages:

* ``phase1``   - fit per-season home advantage, per conference or pooled
                 over the full season; write the estimate series (CSV) and
                 full fit reports (JSON).
* ``diagnose`` - schedule-imbalance chi-square test per scope, with a
                 median-p summary row.
* ``simulate`` - bias study of the estimators, resampling one fitted
                 group or generating synthetic leagues.
* ``phase2``   - trend models over a phase1 series.

Every machine-readable output embeds a metadata block (command, package
version, input digests, seed) and never embeds timestamps or thread
counts, so a rerun with the same seed is byte-identical no matter how
many worker threads are used.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import schedule_bias_statistic
from .fixed import FixedEffectsHfa
from .mixed import MixedEffectsHfa
from .schedule import (EstimabilityError, GameSet, ParseError, build_design,
                       check_estimability, filter_intraconference,
                       parse_conferences, parse_games, split_by_season)
from .simulate import (LeagueSpec, SimSpec, run_league_study, run_resampling)
from .trend import (FixedTrendModel, HfaSeries, RandomCoefficientTrend,
                    boundary_test_g, lrt)

_TREND_MODELS = ("full", "common_trend", "no_trend")
_MODE_ALIASES = {"fixed": "fixed_schedule", "fixed_schedule": "fixed_schedule",
                 "shuffled": "shuffled_teams", "shuffled_teams": "shuffled_teams"}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _metadata(args: argparse.Namespace, inputs: dict[str, Path],
              seed: int | None) -> dict:
    # The reconstructed command omits --threads and --out-dir: neither may
    # change output bytes, only where they go or how fast they arrive.
    parts = ["homefield", args.subcommand]
    for key, value in sorted(vars(args).items()):
        if key.startswith("_") or value is None:
            continue
        if key in ("subcommand", "func", "threads", "out_dir", "seed"):
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                parts.append(flag)
        else:
            parts.extend([flag, str(value)])
    if seed is not None:
        parts.extend(["--seed", str(seed)])
    return {
        "command": " ".join(parts),
        "version": __version__,
        "inputs": {name: _sha256(path) for name, path in sorted(inputs.items())},
        "seed": seed,
    }


def _meta_comment_lines(meta: dict) -> list[str]:
    lines = [f"# command: {meta['command']}", f"# version: {meta['version']}"]
    for name, digest in meta["inputs"].items():
        lines.append(f"# input {name}: sha256:{digest}")
    if meta["seed"] is not None:
        lines.append(f"# seed: {meta['seed']}")
    return lines


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")


def _write_csv(path: Path, meta: dict, header: str, rows: list[str]) -> None:
    lines = _meta_comment_lines(meta) + [header] + rows
    path.write_text("\n".join(lines) + "\n")


def _csv_num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def _resolve_seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    seed = int(np.random.SeedSequence().entropy) % (2 ** 63)
    print(f"seed: {seed} (drawn; pass --seed {seed} to reproduce)",
          file=sys.stderr)
    return seed


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _load_groups(args: argparse.Namespace):
    """Parse inputs into (season, scope-label, GameSet) groups.

    Per-conference scope keeps intraconference games split by conference;
    full-season scope pools every game of a season under the label ALL.
    """
    games_path = Path(args.games)
    with open(games_path, encoding="utf-8") as fh:
        games = parse_games(fh)
    inputs = {"games": games_path}
    if args.full_season:
        kept = games.games
        if not args.keep_neutral:
            n_neutral = sum(g.neutral for g in kept)
            kept = tuple(g for g in kept if not g.neutral)
            if n_neutral:
                print(f"dropped {n_neutral} neutral-site games",
                      file=sys.stderr)
        by_conf = {"ALL": GameSet(games=kept, label="ALL")}
    else:
        if args.conferences is None:
            args._sub.error("--per-conference requires --conferences")
        conf_path = Path(args.conferences)
        with open(conf_path, encoding="utf-8") as fh:
            cmap = parse_conferences(fh)
        inputs["conferences"] = conf_path
        split = filter_intraconference(games, cmap,
                                       drop_neutral=not args.keep_neutral)
        if split.n_dropped or split.n_dropped_neutral:
            print(f"dropped {split.n_dropped_unmapped} unmapped, "
                  f"{split.n_dropped_crossconference} cross-conference, "
                  f"{split.n_dropped_neutral} neutral-site games",
                  file=sys.stderr)
        by_conf = split.by_conference
    groups = []
    for conf in sorted(by_conf):
        for season, gs in split_by_season(by_conf[conf]).items():
            if len(gs) >= args.min_games:
                groups.append((season, conf, gs))
    groups.sort()
    if not groups:
        raise ParseError("no (season, conference) group met --min-games")
    return groups, inputs


def _fit_group(gs: GameSet, model: str) -> dict:
    sm = build_design(gs)
    report = check_estimability(sm)
    out = {
        "n_games": sm.n_games,
        "n_teams": sm.n_teams,
        "lambda_estimable": report.lambda_estimable,
        "rank_W": report.rank_W,
        "fixed": None,
        "mixed": None,
    }
    if model in ("fixed", "both") and report.lambda_estimable:
        out["fixed"] = FixedEffectsHfa().fit(sm).to_dict()
    if model in ("mixed", "both") and sm.n_games >= 2:
        out["mixed"] = MixedEffectsHfa().fit(sm).to_dict()
    return out


def cmd_phase1(args: argparse.Namespace) -> int:
    groups, inputs = _load_groups(args)
    meta = _metadata(args, inputs, seed=None)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = []
    for season, conf, gs in groups:
        entry = {"season": season, "conference": conf}
        try:
            entry.update(_fit_group(gs, args.model))
        except (EstimabilityError, ValueError) as exc:
            print(f"skipping {season}/{conf}: {exc}", file=sys.stderr)
            continue
        if not entry["lambda_estimable"]:
            print(f"{season}/{conf}: home advantage not estimable from "
                  "this schedule; row omitted from the fixed-model series",
                  file=sys.stderr)
        results.append(entry)

    primary = "fixed" if args.model in ("fixed", "both") else "mixed"
    header = "year,conference,lambda_hat,se"

    def series_rows(which: str) -> list[str]:
        rows = []
        for entry in results:
            fit = entry[which]
            if fit is None:
                continue
            rows.append(f"{entry['season']},{entry['conference']},"
                        f"{_csv_num(fit['lambda_hat'])},"
                        f"{_csv_num(fit['se_lambda'])}")
        return rows

    rows = series_rows(primary)
    _write_csv(out_dir / "hfa_series.csv", meta, header, rows)
    if args.model == "both":
        _write_csv(out_dir / "hfa_series_mixed.csv", meta, header,
                   series_rows("mixed"))
    _write_json(out_dir / "fits.json", {"metadata": meta, "groups": results})
    print(f"wrote {len(rows)} series rows over {len(results)} groups "
          f"to {out_dir}", file=sys.stderr)
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    groups, inputs = _load_groups(args)
    meta = _metadata(args, inputs, seed=None)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results = []
    p_values = []
    for season, conf, gs in groups:
        sm = build_design(gs)
        if sm.n_games < 2:
            continue
        fit = MixedEffectsHfa().fit(sm)
        diag = schedule_bias_statistic(fit, sm)
        results.append({"season": season, "conference": conf,
                        "scope": f"{season}/{conf}",
                        "n_games": sm.n_games,
                        "diagnostic": diag.to_dict()})
        if diag.applicable:
            p_values.append(diag.p_value)
    median_p = float(np.median(p_values)) if p_values else None
    _write_json(out_dir / "diagnostics.json",
                {"metadata": meta, "groups": results, "median_p": median_p})
    header = "scope,statistic,dof,p_value,applicable,reason"
    rows = []
    for entry in results:
        d = entry["diagnostic"]
        reason = (d["reason"] or "").replace(",", ";")
        rows.append(f"{entry['scope']},{_csv_num(d['statistic'])},{d['dof']},"
                    f"{_csv_num(d['p_value'])},{d['applicable']},{reason}")
    rows.append(f"MEDIAN,,,{_csv_num(median_p)},,"
                f"median p over {len(p_values)} applicable scopes")
    _write_csv(out_dir / "diagnostics.csv", meta, header, rows)
    print(f"wrote diagnostics for {len(results)} scopes to {out_dir}",
          file=sys.stderr)
    return 0


def _simulate_from_league(args: argparse.Namespace, seed: int):
    spec = LeagueSpec(n_teams=args.n_teams,
                      games_per_team=args.games_per_team,
                      sigma2_g=args.sigma2_g, home_bias=args.home_bias)
    lambda0 = 3.0 if args.lambda0 is None else args.lambda0
    report = run_league_study(spec, n_reps=args.reps, lambda0=lambda0,
                              sigma2=args.sigma2, seed=seed,
                              n_jobs=args.threads)
    source = {"league": {"n_teams": spec.n_teams,
                         "games_per_team": spec.games_per_team,
                         "sigma2_g": spec.sigma2_g,
                         "home_bias": spec.home_bias,
                         "sigma2": args.sigma2, "lambda0": lambda0}}
    return report, source, {}


def _simulate_from_games(args: argparse.Namespace, seed: int):
    groups, inputs = _load_groups(args)
    chosen = [(s, c, g) for s, c, g in groups
              if (args.season is None or s == args.season)
              and (args.conference is None or c == args.conference)]
    if not chosen:
        raise ParseError("no group matches the --season/--conference filter")
    if len(chosen) > 1:
        raise ParseError(
            f"{len(chosen)} groups match; narrow with --season/--conference")
    season, conf, gs = chosen[0]
    sm = build_design(gs)
    base = MixedEffectsHfa().fit(sm)
    spec = SimSpec(n_reps=args.reps, mode=_MODE_ALIASES[args.mode], seed=seed,
                   lambda0=args.lambda0)
    report = run_resampling(sm, base, spec, n_jobs=args.threads)
    source = {"season": season, "conference": conf,
              "base_fit": base.to_dict()}
    return report, source, inputs


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.league:
        if args.games is not None:
            args._sub.error("--league and --games are mutually exclusive")
    elif args.games is None:
        args._sub.error("provide a games file or --league")

    seed = _resolve_seed(args)
    report, source, inputs = (_simulate_from_league(args, seed) if args.league
                              else _simulate_from_games(args, seed))
    meta = _metadata(args, inputs, seed=seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    payload = {"metadata": meta, **source, "summary": report.summary()}
    _write_json(out_dir / "simulation.json", payload)
    header = ("rep,lambda_fixed,se_fixed,cover_fixed,"
              "lambda_mixed,se_mixed,cover_mixed,boundary,converged,"
              "diag_stat,diag_p")
    rows = []
    for r in range(report.n_reps):
        rows.append(",".join([
            str(r),
            _csv_num(report.lambda_fixed[r]), _csv_num(report.se_fixed[r]),
            str(bool(report.cover_fixed[r])),
            _csv_num(report.lambda_mixed[r]), _csv_num(report.se_mixed[r]),
            str(bool(report.cover_mixed[r])),
            str(bool(report.boundary[r])), str(bool(report.converged[r])),
            _csv_num(report.diag_stat[r]), _csv_num(report.diag_p[r]),
        ]))
    _write_csv(out_dir / "draws.csv", meta, header, rows)
    print(f"simulated {report.n_reps} replicates "
          f"({report.n_failed} failed) to {out_dir}", file=sys.stderr)
    return 0


def cmd_phase2(args: argparse.Namespace) -> int:
    series_path = Path(args.series)
    with open(series_path, encoding="utf-8") as fh:
        series = HfaSeries.from_csv(fh)
    inputs = {"series": series_path}
    seed = _resolve_seed(args) if args.boundary_sims else None
    meta = _metadata(args, inputs, seed=seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    payload: dict = {"metadata": meta}
    if args.design == "random-coef":
        rc = RandomCoefficientTrend(time_origin=args.time_origin).fit(series)
        payload["random_coef"] = rc.to_dict()
        header = "conference,intercept,slope"
        rows = [f"POPULATION,{_csv_num(rc.alpha_[0])},{_csv_num(rc.alpha_[1])}"]
        for name in rc.conferences_:
            b0, b1 = rc.predict_line(name)
            rows.append(f"{name},{_csv_num(b0)},{_csv_num(b1)}")
        _write_csv(out_dir / "fitted_lines.csv", meta, header, rows)
    else:
        fit = FixedTrendModel(model=args.trend_model,
                              time_origin=args.time_origin,
                              reference=args.reference).fit(series)
        payload["fixed_trend"] = {"model": args.trend_model, **fit.to_dict()}
        if args.lrt_against is not None:
            reduced = FixedTrendModel(model=args.lrt_against,
                                      time_origin=args.time_origin,
                                      reference=args.reference).fit(series)
            payload["lrt"] = {"full": args.trend_model,
                              "reduced": args.lrt_against,
                              **lrt(fit, reduced).to_dict()}
        header = "conference,intercept,slope"
        rows = []
        for name in series.conference_names():
            b0, b1 = fit.predict_line(name)
            rows.append(f"{name},{_csv_num(b0)},{_csv_num(b1)}")
        _write_csv(out_dir / "fitted_lines.csv", meta, header, rows)
    if args.boundary_sims:
        result = boundary_test_g(series, n_sim=args.boundary_sims, seed=seed,
                                 n_jobs=args.threads,
                                 time_origin=args.time_origin)
        payload["boundary_test"] = result.to_dict()
    _write_json(out_dir / "trend.json", payload)
    print(f"wrote trend report to {out_dir}", file=sys.stderr)
    return 0


def _add_scope_options(sub: argparse.ArgumentParser,
                       games_required: bool = True) -> None:
    sub.add_argument("--games", required=games_required, default=None,
                     help="games CSV (season,date,home_team,away_team,"
                          "home_score,away_score,neutral)")
    sub.add_argument("--conferences", default=None,
                     help="membership CSV (season,team,conference)")
    scope = sub.add_mutually_exclusive_group()
    scope.add_argument("--per-conference", dest="full_season",
                       action="store_false",
                       help="fit each conference separately within each "
                            "season (default; requires --conferences)")
    scope.add_argument("--full-season", dest="full_season",
                       action="store_true",
                       help="pool all of a season's games into one group")
    sub.set_defaults(full_season=False)
    sub.add_argument("--keep-neutral", action="store_true",
                     help="keep neutral-site games instead of dropping them")
    sub.add_argument("--min-games", type=_positive_int, default=1,
                     help="skip groups with fewer games than this")
    sub.add_argument("--out-dir", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homefield",
        description="Home advantage estimation and trend analysis "
                    "from game margins.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p1 = subs.add_parser("phase1",
                         help="fit per-season home advantage series")
    _add_scope_options(p1)
    p1.add_argument("--model", choices=("fixed", "mixed", "both"),
                    default="both")
    p1.set_defaults(func=cmd_phase1, _sub=p1)

    pd = subs.add_parser("diagnose", help="schedule-imbalance diagnostics")
    _add_scope_options(pd)
    pd.set_defaults(func=cmd_diagnose, _sub=pd)

    ps = subs.add_parser("simulate",
                         help="bias study on resampled or synthetic data")
    _add_scope_options(ps, games_required=False)
    ps.add_argument("--season", type=int, default=None,
                    help="season to resample (games-file source)")
    ps.add_argument("--conference", default=None,
                    help="conference to resample (games-file source)")
    ps.add_argument("--mode", choices=tuple(_MODE_ALIASES),
                    default="fixed_schedule",
                    help="resampling mode for a games-file source")
    ps.add_argument("--league", action="store_true",
                    help="simulate fresh synthetic leagues instead of "
                         "resampling a games file")
    ps.add_argument("--n-teams", type=_positive_int, default=20,
                    help="league size (with --league)")
    ps.add_argument("--games-per-team", type=_positive_int, default=10,
                    help="schedule length (with --league)")
    ps.add_argument("--sigma2-g", type=float, default=4.0,
                    help="team-strength variance (with --league)")
    ps.add_argument("--home-bias", type=float, default=0.5,
                    help="chance the stronger team hosts (with --league)")
    ps.add_argument("--sigma2", type=float, default=100.0,
                    help="game noise variance (with --league)")
    ps.add_argument("--reps", type=_positive_int, default=500)
    ps.add_argument("--lambda0", type=float, default=None,
                    help="true home advantage for the replicates (default: "
                         "the base fit's estimate, or 3.0 with --league)")
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--threads", type=_positive_int, default=1)
    ps.set_defaults(func=cmd_simulate, _sub=ps)

    p2 = subs.add_parser("phase2", help="trend models over a phase1 series")
    p2.add_argument("--series", required=True,
                    help="series CSV (year,conference,lambda_hat,se)")
    p2.add_argument("--design", choices=("random-coef", "fixed-trend"),
                    default="random-coef")
    p2.add_argument("--trend-model", choices=_TREND_MODELS, default="full",
                    help="which fixed-trend mean structure (with "
                         "--design fixed-trend)")
    p2.add_argument("--time-origin", type=float, default=2017.0)
    p2.add_argument("--reference", default=None,
                    help="reference conference for the two-conference "
                         "fixed-trend models")
    p2.add_argument("--lrt-against", choices=("common_trend", "no_trend"),
                    default=None,
                    help="likelihood-ratio test of --trend-model against "
                         "this reduced model")
    p2.add_argument("--boundary-sims", type=int, default=0,
                    help="run the zero-variance boundary test with this "
                         "many null simulations")
    p2.add_argument("--seed", type=int, default=None)
    p2.add_argument("--threads", type=_positive_int, default=1)
    p2.add_argument("--out-dir", default=".", help="output directory")
    p2.set_defaults(func=cmd_phase2, _sub=p2)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, EstimabilityError, ValueError, KeyError,
            RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
