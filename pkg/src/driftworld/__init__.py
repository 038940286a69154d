"""driftworld: a seeded open-ended world simulator with drifting
interaction laws, resolution-limited embodied agents, reachable goal
generation, and a learning-metric evaluation harness.

Everything downstream of a generation spec is deterministic: worlds,
problems, episodes, traces, and reports are pure functions of seeds and
configuration, and disclosure traces replay bit for bit.
"""

from .config import EpisodeConfig, RunConfig, load_config
from .dynamics import StepParams, eval_law, momentum, snapshot, snapshot_hash, step
from .errors import (
    ConfigError,
    ContractViolation,
    DriftworldError,
    InsufficientDataError,
    ProtocolError,
)
from .harness import (
    EpisodeResult,
    Slot,
    StageReport,
    oracle_calibration,
    replay_trace,
    run_episode,
    run_stage1,
    run_stage2,
)
from .interface import BodySpec, SenseGrid, grid_distance, sense
from .metrics import AgentMetrics, MetricParams, compute_metrics, rank_agents
from .problems import (
    Problem,
    ProblemParams,
    ScoreParams,
    check_solved,
    generate_problem,
    hit_score,
    normalized_score,
    null_baseline,
)
from .worldgen import (
    CausationGrammar,
    CausationLaw,
    DriftSchedule,
    GenSpec,
    World,
    apply_drift,
    generate_world,
    sample_law,
)

__version__ = "0.1.0"

__all__ = [
    "AgentMetrics", "BodySpec", "CausationGrammar", "CausationLaw",
    "ConfigError", "ContractViolation", "DriftworldError", "DriftSchedule",
    "EpisodeConfig", "EpisodeResult", "GenSpec", "InsufficientDataError",
    "MetricParams", "Problem", "ProblemParams", "ProtocolError", "RunConfig",
    "ScoreParams", "SenseGrid", "Slot", "StageReport", "StepParams", "World",
    "apply_drift", "check_solved", "compute_metrics", "eval_law",
    "generate_problem", "generate_world", "grid_distance", "hit_score",
    "load_config", "momentum", "normalized_score", "null_baseline",
    "oracle_calibration", "rank_agents", "replay_trace", "run_episode",
    "run_stage1", "run_stage2", "sample_law", "sense", "snapshot",
    "snapshot_hash", "step",
]
