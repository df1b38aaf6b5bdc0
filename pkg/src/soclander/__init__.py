"""Moonlander-style control task with a two-layer sense-of-control agent.

The package provides the deterministic task world, the sensorimotor and
cognitive control layers with their low- and high-level sense of control,
an experiment grid harness, and a session service for human play over a
newline-delimited JSON protocol.
"""

from .agent import AgentConfig, Episode, replay, run_episode
from .beliefs import (
    DiscreteDistribution,
    LayerBelief,
    argmax_state,
    belief_update,
    entropy,
    free_energy,
    kalman_gain,
    kl_divergence,
    precision_of_error,
    smoothed,
)
from .config import Scalars, load_scalars
from .environment import (
    DisturbanceZone,
    Level,
    Obstacle,
    Observation,
    Ship,
    WorldState,
    builtin_levels,
    crash_check,
    env_step,
    load_level,
    make_world,
    observe,
)
from .harness import (
    GridSpec,
    RunMetrics,
    StrategyChangeEvent,
    detect_strategy_changes,
    grid_conditions,
    run_grid,
    soc_window_stats,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
