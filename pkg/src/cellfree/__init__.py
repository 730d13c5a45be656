"""Joint downlink precoding for cell-free massive MIMO networks.

Computes minimum-power joint precoders under per-AP power and CSI-sharing
constraints by power control over a virtual dual uplink, MMSE-family
precoder synthesis, and projected-subgradient tuning of the per-AP
multipliers, all evaluated over Monte-Carlo channel ensembles.
"""

from cellfree.scenario import (
    GeometryConfig,
    NetworkScenario,
    assign_clusters,
    dbm_to_watts,
    generate_scenario,
)
from cellfree.channel import (
    ChannelStatistics,
    CsiEnsemble,
    empirical_mean,
    rayleigh_statistics,
    sample_ensemble,
)
from cellfree.metrics import (
    SinrBreakdown,
    StochasticPrecoder,
    dl_rate,
    dl_sinr,
    per_ap_powers,
    sigma_norm_sq,
    ul_sinr,
)
from cellfree.precoders import (
    LocalTeamPrecoder,
    MmseParams,
    centralized_mmse,
    full_mmse,
    local_mmse_stage,
    local_scalar_baseline,
    local_team_mmse,
    mse_objective,
    pi_matrix,
    solve_correction_stage,
    tmmse_residual,
)
from cellfree.duality import (
    DualState,
    FeasibilityVerdict,
    PowerCoupling,
    SolverOptions,
    assemble_downlink_precoder,
    fixed_point_map,
    partial_dual_value,
    recover_downlink_powers,
    solve_uplink_powers,
    subgradient_ascent,
    u_k,
)
from cellfree.experiment import (
    ExperimentResult,
    ExperimentSpec,
    emit_results,
    rate_to_gamma,
    run_experiment,
)

__version__ = "0.1.0"
