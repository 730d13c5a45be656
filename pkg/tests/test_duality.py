import io
import json

import numpy as np
import pytest

from cellfree.channel import ChannelStatistics, CsiEnsemble, sample_ensemble
from cellfree.metrics import StochasticPrecoder, dl_sinr, per_ap_powers, sigma_norm_sq
from cellfree.duality import (
    DualState,
    SinrUnreachable,
    SolverOptions,
    assemble_downlink_precoder,
    fixed_point_map,
    partial_dual_value,
    power_coupling,
    recover_downlink_powers,
    solve_uplink_powers,
    subgradient_ascent,
    sum_power_pretest,
    u_k,
    write_trajectory,
)

from helpers import build_product_ensemble, crandn, random_served_stats


def scalar_ensemble(h=1.0, S=4):
    H = np.full((S, 1, 1, 1), h, dtype=complex)
    return CsiEnsemble(H=H, Hhat=H.copy(), err_cov=np.zeros((1, 1, 1, 1)))


def unknown_csi_stats(L, K, N, gains=1.0):
    """Every link completely unknown: estimates collapse to the zero mean."""
    eye = np.eye(N, dtype=complex)
    cov = gains * np.tile(eye, (L, K, 1, 1))
    return ChannelStatistics(mu=np.zeros((L, K, N)), cov=cov, err_cov=cov.copy())


def test_dual_state_invariants():
    state = DualState(lam=[0.5, 0.0], p=[1.0, 2.0], dual_value=3.0)
    assert np.allclose(state.sigma, [1.5, 1.0])
    with pytest.raises(ValueError):
        DualState(lam=[-0.1], p=[1.0])


def test_u_k_scalar():
    ens = scalar_ensemble()
    val, v = u_k([3.0], [2.0], ens, ((0,),), "local", 0)
    assert val == pytest.approx(1.5, rel=1e-12)
    assert v.shape == (4, 1, 1)


def test_u_k_all_unknown_flags_zero():
    ens = sample_ensemble(unknown_csi_stats(2, 2, 1), S=16, seed=0)
    val, _ = u_k([1.0, 1.0], [1.0, 1.0], ens, ((0, 1), (0, 1)), "local", 0)
    assert val == 0.0


def test_u_k_monotonicity():
    rng = np.random.default_rng(1)
    stats, clusters, _ = random_served_stats(rng, L=2, K=2, N=1, cluster_size=2)
    ens = sample_ensemble(stats, S=32, seed=2)
    ps = [0.5, 1.0, 2.0, 4.0]
    vals = [u_k([p, 1.0], [1.0, 1.0], ens, clusters, "local", 0)[0] for p in ps]
    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
    sigmas = [0.5, 1.0, 2.0, 4.0]
    vals = [u_k([1.0, 1.0], [s, 1.0], ens, clusters, "local", 0)[0] for s in sigmas]
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_fixed_point_map_scalar():
    ens = scalar_ensemble()
    for p0 in (0.1, 1.0, 50.0):
        p1 = fixed_point_map([p0], [2.0], ens, [3.0], ((0,),), "local")
        assert p1[0] == pytest.approx(6.0, rel=1e-12)
    # fixed point maps to itself
    p1 = fixed_point_map([6.0], [2.0], ens, [3.0], ((0,),), "local")
    assert p1[0] == pytest.approx(6.0, rel=1e-12)


def test_fixed_point_map_unreachable_target():
    ens = sample_ensemble(unknown_csi_stats(1, 1, 1), S=8, seed=3)
    with pytest.raises(SinrUnreachable):
        fixed_point_map([1.0], [1.0], ens, [1.0], ((0,),), "local")


def test_monotone_iterates_from_canonical_init():
    rng = np.random.default_rng(4)
    stats, clusters, gains = random_served_stats(rng, L=3, K=3, N=1, cluster_size=2)
    ens = sample_ensemble(stats, S=32, seed=5)
    gammas = np.full(3, 0.8)
    p = gammas / gains.sum(axis=0)
    sums = [p.sum()]
    for _ in range(10):
        p = fixed_point_map(p, np.ones(3), ens, gammas, clusters, "local")
        sums.append(p.sum())
    assert all(a <= b + 1e-12 for a, b in zip(sums, sums[1:]))


def test_solve_uplink_powers_scalar():
    ens = scalar_ensemble()
    sol = solve_uplink_powers([2.0], ens, [3.0], ((0,),), "local", tol=1e-9)
    assert abs(sol.p[0] - 6.0) <= 1e-9
    assert sol.iterations <= 3
    assert abs(sol.u[0] - 3.0) <= 1e-9
    assert sigma_norm_sq(sol.combiners.column(0), [2.0]) == pytest.approx(1.0)


def test_solve_uplink_powers_orthogonal_users_decouple():
    # deterministic orthogonal channels: each UE solves its own scalar problem
    H = np.zeros((2, 1, 2, 2), dtype=complex)
    H[:, 0, 0, 0] = 1.3
    H[:, 0, 1, 1] = 0.6
    ens = CsiEnsemble(H=H, Hhat=H.copy(), err_cov=np.zeros((1, 2, 2, 2)))
    gammas = [2.0, 0.5]
    sigma = [1.7]
    sol = solve_uplink_powers(sigma, ens, gammas, ((0,), (0,)), "full", tol=1e-12)
    for k, (g, a) in enumerate(zip(gammas, (1.3, 0.6))):
        single = CsiEnsemble(H=H[:, :, :, k:k + 1], Hhat=H[:, :, :, k:k + 1],
                             err_cov=np.zeros((1, 1, 2, 2)))
        ref = solve_uplink_powers(sigma, single, [g], ((0,),), "full", tol=1e-12)
        assert sol.p[k] == pytest.approx(ref.p[0], rel=1e-9)
        assert sol.p[k] == pytest.approx(g * sigma[0] / a ** 2, rel=1e-9)


def test_solve_uplink_powers_early_stop_on_cap():
    ens = sample_ensemble(unknown_csi_stats(2, 2, 1), S=16, seed=6)
    # estimates are zero, but give UE 0 a served link so u > 0 while the
    # other keeps diverging... here all links unknown: flag immediately
    with pytest.raises(SinrUnreachable):
        solve_uplink_powers([1.0, 1.0], ens, [1.0, 1.0], ((0, 1), (0, 1)),
                            "local", power_cap=10.0)


def test_fixed_point_geometric_convergence():
    rng = np.random.default_rng(7)
    for trial in range(6):
        L = int(rng.integers(1, 5))
        K = int(rng.integers(1, 5))
        N = int(rng.integers(1, 3))
        stats, clusters, _ = random_served_stats(rng, L=L, K=K, N=N)
        ens = sample_ensemble(stats, S=64, seed=100 + trial)
        gammas = rng.uniform(0.2, 1.0, K)
        family = ("local", "centralized")[trial % 2]
        sol = solve_uplink_powers(np.ones(L), ens, gammas, clusters, family,
                                  tol=1e-12, max_iter=2000)
        p_star = sol.p
        errs = [np.linalg.norm(p - p_star) for p in sol.p_trajectory]
        floor = 1e-9 * (1 + np.linalg.norm(p_star))
        ratios = [e2 / e1 for e1, e2 in zip(errs[3:], errs[4:])
                  if e1 > floor and e2 > 0]
        assert all(r < 1.0 for r in ratios)
        assert np.max(np.abs(sol.u - gammas)) <= 1e-6


def test_recover_single_user_and_symmetric_coupling():
    # K = 1: D - B is scalar and coincides with its transpose, so q = p
    ens = scalar_ensemble()
    sol = solve_uplink_powers([2.0], ens, [3.0], ((0,),), "local", tol=1e-12)
    q, coupling = recover_downlink_powers(sol.combiners, sol.p, ens, [3.0])
    assert q[0] == pytest.approx(sol.p[0], rel=1e-10)
    assert np.isfinite(coupling.cond)
    # symmetric B (matched filtering on a deterministic channel): q = p
    # for any p, since |h_k^H h_j| = |h_j^H h_k|
    rng = np.random.default_rng(8)
    H = np.broadcast_to(crandn(rng, (1, 2, 2)), (3, 1, 2, 2)).copy()
    ens2 = CsiEnsemble(H=H, Hhat=H.copy(), err_cov=np.zeros((1, 2, 2, 2)))
    V = StochasticPrecoder(T=H.copy())
    coupling = power_coupling(V, ens2, [1.0, 1.0])
    assert np.allclose(coupling.B, coupling.B.T, atol=1e-12)
    p = rng.uniform(0.5, 2.0, 2)
    q, _ = recover_downlink_powers(V, p, ens2, [1.0, 1.0])
    assert np.allclose(q, p, rtol=1e-10)


def test_recover_conserves_total_power():
    rng = np.random.default_rng(9)
    stats, clusters, _ = random_served_stats(rng, L=2, K=2, N=1, cluster_size=2)
    ens = sample_ensemble(stats, S=32, seed=10)
    gammas = [0.7, 1.1]
    sol = solve_uplink_powers(np.array([1.0, 1.5]), ens, gammas, clusters,
                              "local", tol=1e-13)
    q, _ = recover_downlink_powers(sol.combiners, sol.p, ens, gammas)
    assert q.sum() == pytest.approx(sol.p.sum(), rel=1e-10)


def test_assemble_downlink_precoder():
    ens = scalar_ensemble()
    sol = solve_uplink_powers([2.0], ens, [3.0], ((0,),), "local", tol=1e-12)
    q, _ = recover_downlink_powers(sol.combiners, sol.p, ens, [3.0])
    T = assemble_downlink_precoder(sol.combiners, q)
    assert dl_sinr(T, ens, 0) == pytest.approx(3.0, abs=1e-9)
    # zero power produces a zero column
    T0 = assemble_downlink_precoder(sol.combiners, [0.0])
    assert np.allclose(T0.T, 0.0)
    # per-AP powers decompose over scaled columns
    rng = np.random.default_rng(11)
    stats, clusters, _ = random_served_stats(rng, L=2, K=2, N=2, cluster_size=2)
    ens2 = sample_ensemble(stats, S=16, seed=12)
    sol2 = solve_uplink_powers(np.ones(2), ens2, [0.5, 0.5], clusters, "local")
    q2 = np.array([0.4, 2.5])
    T2 = assemble_downlink_precoder(sol2.combiners, q2)
    expected = np.zeros(2)
    for k in range(2):
        col = sol2.combiners.column(k)
        expected += q2[k] * (np.abs(col) ** 2).sum(axis=2).mean(axis=0)
    assert np.allclose(per_ap_powers(T2, ens2), expected, rtol=1e-12)


def test_partial_dual_value_at_zero():
    # lam = 0: the dual value is the minimum total power under the SINR
    # constraints alone; for the scalar chain with gamma = 3 it equals 3
    ens = scalar_ensemble()
    ev = partial_dual_value(np.zeros(1), ens, [3.0], [10.0], ((0,),), "local")
    assert ev.status == "ok"
    assert ev.d_tilde == pytest.approx(3.0, abs=1e-8)
    assert ev.q[0] == pytest.approx(3.0, abs=1e-8)
    assert np.allclose(ev.g, per_ap_powers(ev.precoder) - 10.0)


def test_partial_dual_infeasible_status():
    ens = sample_ensemble(unknown_csi_stats(1, 1, 1), S=8, seed=13)
    ev = partial_dual_value(np.zeros(1), ens, [1.0], [1.0], ((0,),), "local")
    assert ev.status == "infeasible_sinr"
    assert ev.d_tilde is None


def test_weak_duality_against_feasible_probe():
    rng = np.random.default_rng(14)
    prod = build_product_ensemble(rng, L=2, K=2, N=1, groups_per_ap=2)
    clusters = ((0, 1), (0, 1))
    gammas = [0.6, 0.9]
    opts = SolverOptions(inner_tol=1e-11)
    base = partial_dual_value(np.zeros(2), prod.ens, gammas, [1.0, 1.0],
                              clusters, "local", opts=opts)
    probe_power = float(per_ap_powers(base.precoder).sum())
    budgets = per_ap_powers(base.precoder) * 1.5     # probe is now feasible
    for _ in range(5):
        lam = rng.uniform(0.0, 2.0, 2)
        ev = partial_dual_value(lam, prod.ens, gammas, budgets, clusters,
                                "local", opts=opts)
        assert ev.d_tilde <= probe_power + 1e-8


def test_dual_concavity_and_subgradient_inequality():
    rng = np.random.default_rng(15)
    prod = build_product_ensemble(rng, L=2, K=2, N=1, groups_per_ap=2)
    clusters = ((0, 1), (0, 1))
    gammas = [0.5, 0.8]
    budgets = np.array([2.0, 3.0])
    opts = SolverOptions(inner_tol=1e-12, inner_max_iter=3000)

    def d(lam):
        ev = partial_dual_value(lam, prod.ens, gammas, budgets, clusters,
                                "local", opts=opts)
        assert ev.status == "ok"
        return ev.d_tilde, ev.g

    for _ in range(5):
        lam1 = rng.uniform(0.0, 1.5, 2)
        lam2 = rng.uniform(0.0, 1.5, 2)
        t = rng.uniform(0.1, 0.9)
        d1, g1 = d(lam1)
        d2, _ = d(lam2)
        dm, _ = d(t * lam1 + (1 - t) * lam2)
        assert dm >= t * d1 + (1 - t) * d2 - 1e-8
        # supergradient inequality of the concave dual
        assert d2 <= d1 + g1 @ (lam2 - lam1) + 1e-8


def test_subgradient_feasible_at_first_iteration():
    rng = np.random.default_rng(16)
    stats, clusters, gains = random_served_stats(rng, L=2, K=2, N=2, cluster_size=2)
    ens = sample_ensemble(stats, S=32, seed=17)
    gammas = np.array([0.5, 0.5])
    probe = partial_dual_value(np.zeros(2), ens, gammas, [1.0, 1.0], clusters,
                               "local")
    budgets = per_ap_powers(probe.precoder) * 10.0
    verdict = subgradient_ascent(ens, gammas, budgets, clusters, gains, "local")
    assert verdict.feasible
    assert verdict.outer_iterations == 1
    assert np.all(verdict.powers <= budgets + 1e-9)
    assert np.all(verdict.sinrs >= gammas - 1e-6)


def test_subgradient_detects_unreachable_sinr():
    ens = sample_ensemble(unknown_csi_stats(2, 2, 1), S=16, seed=18)
    gains = np.ones((2, 2))
    verdict = subgradient_ascent(ens, np.array([50.0, 50.0]), np.array([1.0, 1.0]),
                                 ((0, 1), (0, 1)), gains, "local")
    assert verdict.status == "infeasible_sinr"


def test_subgradient_detects_power_infeasibility():
    rng = np.random.default_rng(19)
    stats, clusters, gains = random_served_stats(rng, L=2, K=2, N=1, cluster_size=2)
    ens = sample_ensemble(stats, S=32, seed=20)
    gammas = np.array([1.0, 1.0])
    probe = partial_dual_value(np.zeros(2), ens, gammas, [1.0, 1.0], clusters,
                               "local")
    budgets = np.full(2, probe.d_tilde / 10.0)       # well below the optimum
    verdict = subgradient_ascent(ens, gammas, budgets, clusters, gains, "local")
    assert verdict.status == "infeasible_power"


def test_best_dual_running_max_nondecreasing_and_trajectory_log():
    rng = np.random.default_rng(21)
    stats, clusters, gains = random_served_stats(rng, L=2, K=3, N=1, cluster_size=2)
    ens = sample_ensemble(stats, S=32, seed=22)
    gammas = np.full(3, 0.8)
    probe = partial_dual_value(np.zeros(2), ens, gammas, [1.0, 1.0], clusters,
                               "local")
    # budgets slightly below the unconstrained per-AP powers force a few
    # ascent steps before any verdict
    budgets = per_ap_powers(probe.precoder) * np.array([0.9, 1.1])
    verdict = subgradient_ascent(ens, gammas, budgets, clusters, gains, "local")
    values = [rec["d_tilde"] for rec in verdict.trajectory]
    running = np.maximum.accumulate(values)
    assert np.all(np.diff(running) >= -1e-12)
    stream = io.StringIO()
    write_trajectory(verdict.trajectory, stream)
    lines = [json.loads(line) for line in stream.getvalue().splitlines()]
    assert len(lines) == len(verdict.trajectory)
    assert {"iter", "alpha", "lambda", "d_tilde", "max_ap_power"} <= set(lines[0])


def test_sum_power_pretest_statuses():
    rng = np.random.default_rng(23)
    stats, clusters, gains = random_served_stats(rng, L=2, K=2, N=1, cluster_size=2)
    ens = sample_ensemble(stats, S=32, seed=24)
    gammas = np.array([0.5, 0.5])
    status, ev = sum_power_pretest(ens, gammas, np.array([50.0, 50.0]),
                                   clusters, gains, "local")
    assert status == "feasible" and ev.status == "ok"
    status, _ = sum_power_pretest(ens, gammas, np.array([1e-6, 1e-6]),
                                  clusters, gains, "local")
    assert status == "infeasible_power"


def test_feasible_certificates_satisfy_contracts():
    rng = np.random.default_rng(25)
    found = 0
    for trial in range(8):
        stats, clusters, gains = random_served_stats(rng, L=2, K=2, N=2,
                                                     cluster_size=2)
        ens = sample_ensemble(stats, S=32, seed=200 + trial)
        gammas = rng.uniform(0.3, 0.8, 2)
        probe = partial_dual_value(np.zeros(2), ens, gammas, [1.0, 1.0],
                                   clusters, "local")
        budgets = per_ap_powers(probe.precoder) * rng.uniform(1.05, 2.0)
        verdict = subgradient_ascent(ens, gammas, budgets, clusters, gains,
                                     "local")
        if not verdict.feasible:
            continue
        found += 1
        assert np.all(verdict.powers <= budgets + 1e-6)
        assert np.all(verdict.sinrs >= gammas - 1e-6)
        assert verdict.q.sum() == pytest.approx(verdict.p.sum(), rel=1e-6)
    assert found >= 4
