"""Whittle-index task offloading for large-scale edge computing.

Core pieces: the physical energy/channel model (:mod:`edgebandit.mec`),
the per-arm task dynamics (:mod:`edgebandit.dynamics`), the closed-form
index with its independent MDP oracle and the relaxed performance bound
(:mod:`edgebandit.whittle`), the selection policies
(:mod:`edgebandit.policies`), online estimators of unknown savings
(:mod:`edgebandit.learning`), and the experiment harness
(:mod:`edgebandit.harness`).
"""

from .config import ConfigError, ExperimentCell, SimConfig, preset_cells
from .dynamics import IDLE, ActionVector, PenaltyFn, SystemState, TaskGenerator, TaskSpec, TaskState
from .harness import (
    RunRecord,
    build_scenario,
    emit_csv,
    read_csv,
    run_episode,
    run_experiment,
)
from .learning import NIGParams, PriorSpec, mh_estimate, mle_estimate, nig_sample, nig_update
from .mec import ChannelEnvironment, EnergyFigures, UserProfile
from .policies import PolicyKind, build_stlw_dag, kahn_topo_sort, select
from .whittle import (
    ArmChain,
    IndexInput,
    SubsidizedArmMDP,
    indexability_check,
    relaxed_upper_bound,
    single_arm_value_iteration,
    subsidy_threshold,
    whittle_index,
)

__version__ = "0.1.0"
