"""Home-field advantage estimation from game margins.

Phase I fits per-season, per-conference home advantage under fixed and
random team-effect models, checks schedules for the imbalance that biases
the random-effects fit, and quantifies that bias by resampling.  Phase II
models the resulting advantage series over time.
"""

from .diagnostics import (
    DiagnosticResult,
    general_bias_statistic,
    schedule_bias_statistic,
)
from .fixed import FixedEffectsHfa
from .mixed import MixedEffectsHfa, henderson_solve, reml_loglik
from .schedule import (
    ConferenceMap,
    EstimabilityError,
    EstimabilityReport,
    Game,
    GameSet,
    ParseError,
    ScheduleMatrix,
    build_design,
    check_estimability,
    filter_intraconference,
    parse_conferences,
    parse_games,
    split_by_season,
)
from .simulate import (
    League,
    LeagueSpec,
    SimSpec,
    SimulationReport,
    generate_league,
    run_league_study,
    run_resampling,
)
from .trend import (
    BoundaryTestResult,
    FixedTrendModel,
    HfaSeries,
    LrtResult,
    RandomCoefficientTrend,
    boundary_test_g,
    lrt,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryTestResult",
    "ConferenceMap",
    "DiagnosticResult",
    "EstimabilityError",
    "EstimabilityReport",
    "FixedEffectsHfa",
    "FixedTrendModel",
    "Game",
    "GameSet",
    "HfaSeries",
    "League",
    "LeagueSpec",
    "LrtResult",
    "MixedEffectsHfa",
    "ParseError",
    "RandomCoefficientTrend",
    "ScheduleMatrix",
    "SimSpec",
    "SimulationReport",
    "boundary_test_g",
    "build_design",
    "check_estimability",
    "filter_intraconference",
    "general_bias_statistic",
    "generate_league",
    "henderson_solve",
    "lrt",
    "parse_conferences",
    "parse_games",
    "reml_loglik",
    "run_league_study",
    "run_resampling",
    "schedule_bias_statistic",
    "split_by_season",
    "__version__",
]
