"""Numerical solver for Dynkin stopping games with one-sided incomplete information."""

from .chain import CFLError, ChainModel, build_chain, moment_audit, sample_path, step_expectation
from .config import load_spec, parse_spec
from .dual import BudgetExceeded, MeasureTree, Splitting, dual_minimize, enumerate_splittings, game_value_given_measure
from .model import GameSpec, SpecError, StopKind, StopOutcome, payoff, two_state_example, validate_spec
from .simplex import (
    SimplexFunction,
    SimplexGrid,
    biconjugate,
    convex_envelope,
    fenchel_conjugate,
    lambda_min_discrete,
    supporting_slopes,
)
from .sim import EpisodeRecord, exploitability_scan, run_episodes
from .solver import (
    ValueField,
    complete_info_solve,
    dp_backward,
    obstacle_clip,
    terminal_slice,
    viscosity_residual_check,
)
from .strategy import (
    InformedStrategy,
    StoppingRegion,
    best_response_value,
    build_strategy,
    conditional_measure,
    extract_region,
    informed_stop_rule,
)

__version__ = "0.1.0"
