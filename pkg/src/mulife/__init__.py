"""mulife: multiplier lifetime analysis under NBTI stress.

Builds gate-level netlists for adders and multipliers over a minimal
{INV, NAND2, NOR2} cell basis, profiles per-PMOS stress probabilities under
configurable workloads and input-transform policies, models threshold-voltage
aging with process variation, and evaluates mitigation strategies (ideal
selector tables, synthesized selector modules, ensembles, TRNG/ZBP/DVFS
baselines) standalone and inside a systolic-array Monte Carlo harness.
"""

__version__ = "0.1.0"

from .netlist import GateKind, Gate, Netlist, PmosSite, build_ripple_adder, build_multiplier, pmos_sites, validate
from .logicsim import WorkloadSpec, StressProfile, evaluate, stressed_sites, profile_alpha, negate
from .aging import AgingParams, PvSample, F2FSet, delta_vth, vth_at, on_current_ratio, site_lifetime, circuit_lifetime, sample_pv
from .oracle import OracleTable, static_stress, build_oracle, apply_transform
from .selector import SelectorFn, Ensemble, OverheadReport, bit_scores, synthesize, f1, build_ensemble, dispatch, overhead
from .systolic import SAConfig, Mitigation, PEStates, LifetimeStats, matmul, sa_lifetime, monte_carlo
from .bench import DvfsParams, ExperimentConfig, trng_policy, zbp_policy, dvfs_lifetime, run

__all__ = [
    "GateKind", "Gate", "Netlist", "PmosSite",
    "build_ripple_adder", "build_multiplier", "pmos_sites", "validate",
    "WorkloadSpec", "StressProfile", "evaluate", "stressed_sites", "profile_alpha", "negate",
    "AgingParams", "PvSample", "F2FSet", "delta_vth", "vth_at", "on_current_ratio",
    "site_lifetime", "circuit_lifetime", "sample_pv",
    "OracleTable", "static_stress", "build_oracle", "apply_transform",
    "SelectorFn", "Ensemble", "OverheadReport", "bit_scores", "synthesize", "f1",
    "build_ensemble", "dispatch", "overhead",
    "SAConfig", "Mitigation", "PEStates", "LifetimeStats", "matmul", "sa_lifetime", "monte_carlo",
    "DvfsParams", "ExperimentConfig", "trng_policy", "zbp_policy", "dvfs_lifetime", "run",
]
