"""Dual-uplink machinery: power control, power recovery, multiplier ascent.

The minimum-power precoding problem under SINR targets and per-AP power
budgets is solved through its partial Lagrangian dual: for multipliers
lambda the inner problem is a virtual uplink with per-AP noise
sigma = 1 + lambda, solved by fixed-point power control with implicit
MMSE combining; downlink powers are recovered from the uplink solution
through a pair of coupled linear systems; and lambda is tuned by a
projected subgradient ascent with the early stops of a feasibility test.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from cellfree.channel import CsiEnsemble
from cellfree.metrics import (
    StochasticPrecoder,
    dl_sinr_all,
    effective_channels,
    per_ap_powers,
)
from cellfree.precoders import (
    MmseParams,
    centralized_mmse,
    full_mmse,
    local_scalar_baseline,
    local_team_mmse,
    solve_checked,
)

FAMILIES = ("full", "centralized", "local", "local_scalar")


class SinrUnreachable(RuntimeError):
    """A target SINR cannot be met: some UE has no coherent signal."""

    def __init__(self, ues):
        self.ues = tuple(int(k) for k in np.atleast_1d(ues))
        super().__init__(f"no coherent uplink signal for UE(s) {self.ues}")


class ConvergenceError(RuntimeError):
    """An iteration budget was exhausted without meeting its tolerance."""


@dataclass
class DualState:
    """Multipliers and the matching dual-uplink coefficients."""

    lam: np.ndarray                 # (L,) multipliers, >= 0
    p: np.ndarray                   # (K,) virtual uplink powers
    dual_value: float = float("nan")

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if np.any(self.lam < 0):
            raise ValueError("multipliers must be nonnegative")

    @property
    def sigma(self) -> np.ndarray:
        return 1.0 + self.lam


@dataclass
class PowerCoupling:
    """Linear systems linking uplink and downlink power control.

    B[k, j] = E[|h_k^H v_j|^2]; D is diagonal with
    D_kk = (1 + 1/gamma_k) |E[h_k^H v_k]|^2.
    """

    B: np.ndarray
    D: np.ndarray                   # (K,) diagonal entries
    cond: float = float("nan")


@dataclass
class FeasibilityVerdict:
    """Outcome of the feasibility test with its certificate."""

    status: str                     # feasible | infeasible_sinr | infeasible_power | inconclusive
    powers: np.ndarray = None       # achieved per-AP powers
    sinrs: np.ndarray = None        # achieved downlink SINRs
    lam: np.ndarray = None
    p: np.ndarray = None
    q: np.ndarray = None
    trajectory: list = field(default_factory=list)
    outer_iterations: int = 0
    restarts_used: int = 0
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


@dataclass
class SolverOptions:
    """Stopping rules and step sizes for the nested solvers."""

    inner_tol: float = 1e-8             # componentwise relative tolerance on p
    inner_max_iter: int = 500
    alpha_schedule: tuple = (10.0, 17.0, 5.0)
    outer_max_iter: int = 500           # per restart
    stagnation_window: int = 20
    stagnation_eps: float = 1e-6        # best-dual improvement threshold
    cert_tol: float = 1e-6              # certificate tolerance (power and SINR)


@dataclass
class UplinkSolution:
    """Converged uplink powers with the maximizing combiners.

    Combiner columns are normalized to unit sigma-weighted expected norm,
    so downlink power recovery can equate per-UE powers with q directly.
    """

    p: np.ndarray
    combiners: StochasticPrecoder
    u: np.ndarray                    # achieved uplink SINRs at p
    sigma: np.ndarray
    iterations: int
    p_trajectory: list
    status: str = "converged"        # converged | cap_exceeded


def synthesize_combiners(ens: CsiEnsemble, params: MmseParams, clusters: tuple,
                         family: str) -> StochasticPrecoder:
    """MMSE-family combining matrix for the declared information constraint."""
    if family == "full":
        return full_mmse(ens, params)
    if family == "centralized":
        return centralized_mmse(ens, params, clusters)
    if family == "local":
        return local_team_mmse(ens, params, clusters).precoder
    if family == "local_scalar":
        return local_scalar_baseline(ens, params, clusters).precoder
    raise ValueError(f"unknown precoder family {family!r}")


def _ul_sinr_terms(V: np.ndarray, ens: CsiEnsemble, sigma: np.ndarray):
    """Per-column signal means, second moments, and sigma-weighted norms."""
    G = effective_channels(ens.H, V)                    # (S, K, K): h_j^H v_k
    b = np.einsum("skk->sk", G).mean(axis=0)            # E[h_k^H v_k]
    second = (np.abs(G) ** 2).mean(axis=0)              # (j, k)
    norms = np.einsum("l,slnk->k", sigma, np.abs(V) ** 2) / V.shape[0]
    return b, second, norms


def ul_sinr_values(V: np.ndarray, p: np.ndarray, sigma: np.ndarray,
                   ens: CsiEnsemble) -> np.ndarray:
    """All K uplink SINRs of a combining matrix (0 where the signal dies)."""
    b, second, norms = _ul_sinr_terms(V, ens, sigma)
    signal = p * np.abs(b) ** 2
    denom = p @ second - signal + norms
    out = np.zeros_like(signal)
    ok = (signal > 0) & (denom > 0)
    out[ok] = signal[ok] / denom[ok]
    return out


def u_k(p, sigma, ens: CsiEnsemble, clusters: tuple, family: str, k: int):
    """Best achievable uplink SINR of UE k and its maximizing combiner.

    Realizes the SINR supremum through the MMSE-family minimizer for the
    given (p, sigma).  Returns (value, v_k) with value 0 flagging a UE with
    no coherent signal (ill-posed instance).
    """
    params = MmseParams(p=p, sigma=sigma)
    V = synthesize_combiners(ens, params, clusters, family)
    vals = ul_sinr_values(V.T, params.p, params.sigma, ens)
    return float(vals[k]), V.column(k)


def fixed_point_map(p, sigma, ens: CsiEnsemble, gammas, clusters: tuple,
                    family: str) -> np.ndarray:
    """One sweep of the interference fixed point: gamma_k p_k / u_k(p, sigma)."""
    p = np.asarray(p, dtype=float)
    params = MmseParams(p=p, sigma=sigma)
    V = synthesize_combiners(ens, params, clusters, family)
    u = ul_sinr_values(V.T, params.p, params.sigma, ens)
    if np.any(u <= 0):
        raise SinrUnreachable(np.flatnonzero(u <= 0))
    return np.asarray(gammas, dtype=float) * p / u


def _normalize_columns(V: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    norms = np.einsum("l,slnk->k", sigma, np.abs(V) ** 2) / V.shape[0]
    if np.any(norms <= 0):
        raise SinrUnreachable(np.flatnonzero(norms <= 0))
    return V / np.sqrt(norms)[None, None, None, :]


def solve_uplink_powers(sigma, ens: CsiEnsemble, gammas, clusters: tuple,
                        family: str, p_init=None, tol: float = 1e-8,
                        max_iter: int = 500, power_cap: float = None,
                        ) -> UplinkSolution:
    """Fixed-point power control to the unique minimum uplink powers.

    Iterates p <- gamma * p / u(p, sigma) until the componentwise relative
    change drops below ``tol``; at exit u_k(p*, sigma) = gamma_k within the
    same tolerance.  With ``power_cap`` set, iterates whose total power
    crosses the cap stop early with status "cap_exceeded" (infeasible SINR
    targets make the iterates diverge).  Raises SinrUnreachable when some
    UE has no coherent signal at all.
    """
    sigma = np.asarray(sigma, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    K = gammas.shape[0]
    p = np.full(K, 1.0) if p_init is None else np.asarray(p_init, dtype=float).copy()
    if np.any(p <= 0):
        raise ValueError("initial powers must be positive")
    trajectory = [p.copy()]
    for it in range(1, max_iter + 1):
        p_next = fixed_point_map(p, sigma, ens, gammas, clusters, family)
        trajectory.append(p_next.copy())
        if power_cap is not None and p_next.sum() > power_cap:
            return UplinkSolution(p=p_next, combiners=None, u=None, sigma=sigma,
                                  iterations=it, p_trajectory=trajectory,
                                  status="cap_exceeded")
        if not np.all(np.isfinite(p_next)) or p_next.max() > 1e30:
            raise ConvergenceError(
                "uplink powers diverged; the SINR targets appear unreachable")
        progress = np.max(np.abs(p_next - p) / p)
        p = p_next
        if progress <= tol:
            break
    else:
        raise ConvergenceError(
            f"fixed point did not reach tol={tol} in {max_iter} iterations")
    params = MmseParams(p=p, sigma=sigma)
    V = synthesize_combiners(ens, params, clusters, family)
    u = ul_sinr_values(V.T, p, sigma, ens)
    V_norm = StochasticPrecoder(T=_normalize_columns(V.T, sigma),
                                constraint=V.constraint, clusters=V.clusters)
    return UplinkSolution(p=p, combiners=V_norm, u=u, sigma=sigma,
                          iterations=it, p_trajectory=trajectory)


def power_coupling(V: StochasticPrecoder, ens: CsiEnsemble,
                   gammas) -> PowerCoupling:
    """Coupling matrices of the uplink/downlink power-control systems."""
    G = effective_channels(ens.H, V.T)
    B = (np.abs(G) ** 2).mean(axis=0)
    b = np.einsum("skk->sk", G).mean(axis=0)
    D = (1.0 + 1.0 / np.asarray(gammas, dtype=float)) * np.abs(b) ** 2
    M = np.diag(D) - B
    return PowerCoupling(B=B, D=D, cond=float(np.linalg.cond(M)))


def recover_downlink_powers(V: StochasticPrecoder, p, ens: CsiEnsemble,
                            gammas) -> tuple:
    """Downlink powers q solving (D - B) q = (D - B^T) p.

    Expects combiner columns with unit sigma-weighted norm (as returned by
    solve_uplink_powers), in which case scaling column k by sqrt(q_k) meets
    every SINR target and the uplink and downlink total powers coincide.
    Near-singular coupling is reported: it flags an infeasibility artifact.
    """
    coupling = power_coupling(V, ens, gammas)
    M = np.diag(coupling.D) - coupling.B
    rhs = (np.diag(coupling.D) - coupling.B.T) @ np.asarray(p, dtype=float)
    if coupling.cond > 1e12:
        warnings.warn(
            f"downlink power recovery is near singular (cond {coupling.cond:.2e}); "
            "likely an infeasibility artifact")
    q = np.real(solve_checked(M, rhs.astype(complex), context="downlink power recovery"))
    return q, coupling


def assemble_downlink_precoder(V: StochasticPrecoder, q) -> StochasticPrecoder:
    """Scale combiner columns by sqrt(q_k) to obtain the downlink precoder."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("downlink powers must be nonnegative")
    return V.scaled_columns(np.sqrt(q))


@dataclass
class DualEvaluation:
    """Partial dual function value with its subgradient and minimizer."""

    status: str                     # ok | infeasible_sinr | cap_exceeded
    d_tilde: float = None           # None encodes +infinity (infeasible SINR set)
    g: np.ndarray = None            # (L,) subgradient: per-AP power minus budget
    precoder: StochasticPrecoder = None
    p: np.ndarray = None
    q: np.ndarray = None
    inner_iterations: int = 0


def partial_dual_value(lam, ens: CsiEnsemble, gammas, budgets, clusters: tuple,
                       family: str, p_init=None, opts: SolverOptions = None,
                       power_cap: float = None) -> DualEvaluation:
    """Evaluate the partial dual at multipliers lam.

    Runs the dual-uplink fixed point at sigma = 1 + lam, recovers downlink
    powers, and assembles the minimum-weighted-power precoder; the dual
    value is its sigma-weighted total power minus lam . budgets, and the
    subgradient collects per-AP power overshoots.  An unreachable SINR set
    is reported through the status (never as a float sentinel).
    """
    opts = opts or SolverOptions()
    lam = np.asarray(lam, dtype=float)
    budgets = np.asarray(budgets, dtype=float)
    sigma = 1.0 + lam
    try:
        sol = solve_uplink_powers(sigma, ens, gammas, clusters, family,
                                  p_init=p_init, tol=opts.inner_tol,
                                  max_iter=opts.inner_max_iter,
                                  power_cap=power_cap)
    except SinrUnreachable:
        return DualEvaluation(status="infeasible_sinr")
    if sol.status == "cap_exceeded":
        return DualEvaluation(status="cap_exceeded", p=sol.p,
                              inner_iterations=sol.iterations)
    q, _ = recover_downlink_powers(sol.combiners, sol.p, ens, gammas)
    T = assemble_downlink_precoder(sol.combiners, q)
    ap_powers = per_ap_powers(T)
    d_tilde = float(sigma @ ap_powers - lam @ budgets)
    return DualEvaluation(status="ok", d_tilde=d_tilde, g=ap_powers - budgets,
                          precoder=T, p=sol.p, q=q,
                          inner_iterations=sol.iterations)


def default_power_init(gammas, gains) -> np.ndarray:
    """Pre-test initialization gamma_k / sum_l kappa_{l,k}.

    Guarantees the first sweep does not decrease any power, so the total
    uplink power grows monotonically toward the SINR-feasibility optimum
    (or diverges when the targets are unreachable).
    """
    return np.asarray(gammas, dtype=float) / np.asarray(gains, dtype=float).sum(axis=0)


def sum_power_pretest(ens: CsiEnsemble, gammas, budgets, clusters: tuple,
                      gains, family: str, opts: SolverOptions = None):
    """Feasibility under the aggregate budget sum(budgets) (multipliers at 0).

    Returns (verdict_status, evaluation): "feasible" with the lam = 0 dual
    evaluation when the fixed point settles below the total budget;
    "infeasible_power" when the monotone total power crosses it;
    "infeasible_sinr" when some UE has no coherent signal.
    """
    opts = opts or SolverOptions()
    budgets = np.asarray(budgets, dtype=float)
    p_sum = float(budgets.sum())
    p0 = default_power_init(gammas, gains)
    evaluation = partial_dual_value(np.zeros(budgets.shape[0]), ens, gammas,
                                    budgets, clusters, family, p_init=p0,
                                    opts=opts, power_cap=p_sum)
    if evaluation.status == "ok":
        return "feasible", evaluation
    if evaluation.status == "cap_exceeded":
        return "infeasible_power", evaluation
    return "infeasible_sinr", evaluation


def _certificate(verdict_status, lam, evaluation, ens, budgets, reason,
                 trajectory, outer_iterations, restarts_used) -> FeasibilityVerdict:
    powers = sinrs = q = p = None
    if evaluation is not None and evaluation.precoder is not None:
        powers = per_ap_powers(evaluation.precoder)
        sinrs = dl_sinr_all(evaluation.precoder, ens)
        q, p = evaluation.q, evaluation.p
    return FeasibilityVerdict(status=verdict_status, powers=powers, sinrs=sinrs,
                              lam=None if lam is None else np.asarray(lam, float),
                              p=p, q=q, trajectory=trajectory,
                              outer_iterations=outer_iterations,
                              restarts_used=restarts_used, reason=reason)


def subgradient_ascent(ens: CsiEnsemble, gammas, budgets, clusters: tuple,
                       gains, family: str,
                       opts: SolverOptions = None) -> FeasibilityVerdict:
    """Feasibility test by projected subgradient ascent on the multipliers.

    Stage 1 tests the SINR targets against the aggregate budget (monotone
    fixed point from the canonical initialization, early stop on crossing
    the total budget).  Stage 2 ascends lam with steps alpha / sqrt(i),
    stopping early when the dual value exceeds the total budget (infeasible)
    or the subgradient turns nonpositive (feasible, with certificate).  On
    stagnation the incumbent is checked against the certificate tolerance;
    remaining step-size constants from the schedule restart the ascent.
    Exhausted restarts yield "inconclusive".
    """
    opts = opts or SolverOptions()
    gammas = np.asarray(gammas, dtype=float)
    budgets = np.asarray(budgets, dtype=float)
    L = budgets.shape[0]
    p_sum = float(budgets.sum())

    try:
        status, evaluation = sum_power_pretest(ens, gammas, budgets, clusters,
                                               gains, family, opts)
    except ConvergenceError as err:
        return _certificate("inconclusive", None, None, ens, budgets,
                            reason=f"pre-test stalled: {err}", trajectory=[],
                            outer_iterations=0, restarts_used=0)
    if status != "feasible":
        return _certificate(status, None, None, ens, budgets,
                            reason="sum-power pre-test", trajectory=[],
                            outer_iterations=0, restarts_used=0)

    trajectory = []
    total_outer = 0
    warm_p = evaluation.p
    for restart, alpha0 in enumerate(opts.alpha_schedule):
        lam = np.zeros(L)
        current = evaluation if restart == 0 else None
        best_d = -np.inf
        best_eval, best_lam = None, None
        window = []
        for i in range(1, opts.outer_max_iter + 1):
            if current is None:
                try:
                    current = partial_dual_value(lam, ens, gammas, budgets,
                                                 clusters, family,
                                                 p_init=warm_p, opts=opts)
                except ConvergenceError as err:
                    return _certificate("inconclusive", lam, None, ens, budgets,
                                        reason=f"inner solve stalled: {err}",
                                        trajectory=trajectory,
                                        outer_iterations=total_outer,
                                        restarts_used=restart)
                if current.status != "ok":
                    return _certificate("inconclusive", lam, None, ens, budgets,
                                        reason=f"inner solve failed ({current.status})",
                                        trajectory=trajectory,
                                        outer_iterations=total_outer,
                                        restarts_used=restart)
            total_outer += 1
            warm_p = current.p
            alpha = alpha0 / np.sqrt(i)
            trajectory.append({
                "restart": restart, "iter": i, "alpha": alpha,
                "lambda": lam.tolist(), "d_tilde": current.d_tilde,
                "max_ap_power": float((current.g + budgets).max()),
            })
            if current.d_tilde > best_d:
                best_d = current.d_tilde
                best_eval, best_lam = current, lam.copy()
            if current.d_tilde > p_sum:
                return _certificate("infeasible_power", lam, None, ens, budgets,
                                    reason="dual value exceeded the total budget",
                                    trajectory=trajectory,
                                    outer_iterations=total_outer,
                                    restarts_used=restart)
            if np.all(current.g <= 0):
                return _certificate("feasible", lam, current, ens, budgets,
                                    reason="nonpositive subgradient",
                                    trajectory=trajectory,
                                    outer_iterations=total_outer,
                                    restarts_used=restart)
            window.append(best_d)
            if len(window) > opts.stagnation_window:
                window.pop(0)
                if window[-1] - window[0] < opts.stagnation_eps:
                    break
            gnorm = float(np.linalg.norm(current.g))
            lam = np.maximum(lam + (alpha / gnorm) * current.g, 0.0)
            current = None
        # stagnation (or iteration budget): accept the incumbent if it
        # meets the certificate tolerance, else restart with the next alpha
        if best_eval is not None:
            powers = per_ap_powers(best_eval.precoder)
            sinrs = dl_sinr_all(best_eval.precoder, ens)
            if (np.all(powers <= budgets + opts.cert_tol)
                    and np.all(sinrs >= gammas - opts.cert_tol)):
                return _certificate("feasible", best_lam, best_eval, ens, budgets,
                                    reason="stagnation with certified incumbent",
                                    trajectory=trajectory,
                                    outer_iterations=total_outer,
                                    restarts_used=restart)
    return _certificate("inconclusive", best_lam, None, ens, budgets,
                        reason="restart schedule exhausted",
                        trajectory=trajectory, outer_iterations=total_outer,
                        restarts_used=len(opts.alpha_schedule))


def write_trajectory(trajectory, stream) -> None:
    """Emit one JSON document per outer iteration (lambda, dual value, power)."""
    for record in trajectory:
        stream.write(json.dumps(record) + "\n")
