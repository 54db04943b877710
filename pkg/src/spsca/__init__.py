"""Static-power side-channel simulation and CPA evaluation for AES state registers."""

from .aes import encrypt, encrypt_batch, final_round, invert_key_schedule, key_schedule
from .cpa import CPA, AttackResult, PowerModel, StreamingPearson, attack, pearson
from .design import (DesignSpec, Plain, Primitive, StateRegisterConfig, StrengthPolicy,
                     area, generate_baseline, generate_design)
from .experiments import (ExperimentConfig, GridMode, GridResult, Study, emit_summary,
                          run_baseline_sweep, run_grid)
from .leakage import CellType, DriveStrength, LeakageTable, PinState, default_table, load_table
from .sampling import NTTDEstimator, NttdEstimate, SamplingPlan, estimate_nttd, success_rate
from .simulate import SimOptions, StaticPowerSimulator, TraceSet, generate_traces

__version__ = "0.1.0"

__all__ = [
    "encrypt", "encrypt_batch", "final_round", "invert_key_schedule", "key_schedule",
    "CPA", "AttackResult", "PowerModel", "StreamingPearson", "attack", "pearson",
    "DesignSpec", "Plain", "Primitive", "StateRegisterConfig", "StrengthPolicy", "area",
    "generate_baseline", "generate_design",
    "ExperimentConfig", "GridMode", "GridResult", "Study", "emit_summary",
    "run_baseline_sweep", "run_grid",
    "CellType", "DriveStrength", "LeakageTable", "PinState", "default_table", "load_table",
    "NTTDEstimator", "NttdEstimate", "SamplingPlan", "estimate_nttd", "success_rate",
    "SimOptions", "StaticPowerSimulator", "TraceSet", "generate_traces",
]
