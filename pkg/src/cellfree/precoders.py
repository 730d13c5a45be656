"""Parametrized MMSE precoder/combiner family.

All members minimize the same regularized mean-square error, parametrized
by virtual uplink powers p and per-AP regularizers sigma, under different
CSI-sharing constraints: full shared CSI (regularized channel inversion),
cluster-wise centralized CSI, and local CSI (a per-AP MMSE stage coupled
through deterministic statistical corrections).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from cellfree.channel import CsiEnsemble
from cellfree.metrics import StochasticPrecoder, sigma_norm_sq

COND_WARN = 1e12


@dataclass
class MmseParams:
    """Virtual uplink powers p (K,) and per-AP noise/regularizers sigma (L,)."""

    p: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if np.any(self.p <= 0) or np.any(self.sigma <= 0):
            raise ValueError("p and sigma must be strictly positive")


@dataclass
class LocalTeamPrecoder:
    """Local MMSE stages plus the deterministic correction that couples them.

    ``stages[s, l]`` is the N x K local MMSE matrix of AP l in sample s;
    ``corrections[l, :, k]`` is the correction vector c_{l,k} (zero for
    non-serving APs); ``pi[l]`` is the K x K coupling matrix of AP l.
    The assembled column is v_{l,k} = stages[s, l] @ corrections[l, :, k].
    """

    stages: np.ndarray
    corrections: np.ndarray
    pi: np.ndarray
    clusters: tuple
    cond: float = float("nan")       # worst correction-system condition number

    @property
    def precoder(self) -> StochasticPrecoder:
        T = np.einsum("slnm,lmk->slnk", self.stages, self.corrections)
        return StochasticPrecoder(T=T, constraint="local", clusters=self.clusters)


def solve_checked(A: np.ndarray, B: np.ndarray, context: str = "linear solve",
                  resid_tol: float = 1e-10) -> np.ndarray:
    """Direct dense solve with a relative residual check and cond warning."""
    X = np.linalg.solve(A, B)
    resid = np.linalg.norm(A @ X - B)
    scale = np.linalg.norm(B) + np.linalg.norm(A) * np.linalg.norm(X)
    if not np.isfinite(resid) or resid > resid_tol * max(scale, 1e-300):
        cond = np.linalg.cond(A)
        warnings.warn(
            f"{context}: relative residual {resid / max(scale, 1e-300):.2e} "
            f"exceeds {resid_tol:.0e} (cond={cond:.2e})"
        )
    return X


def _block_sigma(sigma: np.ndarray, N: int) -> np.ndarray:
    """diag(sigma_1 I_N, ..., sigma_L I_N) as a dense diagonal."""
    return np.diag(np.repeat(sigma, N)).astype(complex)


def _weighted_err_cov(ens: CsiEnsemble, p: np.ndarray) -> np.ndarray:
    """(L, N, N) per-AP error loading sum_k p_k err_cov[l, k]."""
    return np.einsum("k,lknm->lnm", p, ens.err_cov)


def full_mmse(ens: CsiEnsemble, params: MmseParams) -> StochasticPrecoder:
    """Regularized channel inversion with perfect shared CSI.

    Per sample, V = (H P H^H + Sigma)^{-1} H P^{1/2} with the true channel
    playing the role of the shared estimate.
    """
    L, N, K = ens.dims
    H = ens.aggregate("H")                                # (S, LN, K)
    P = params.p
    A = np.einsum("smk,k,snk->smn", H, P, H.conj())
    A += _block_sigma(params.sigma, N)[None, :, :]
    V = np.linalg.solve(A, H * np.sqrt(P)[None, None, :])
    return StochasticPrecoder(T=V.reshape(ens.S, L, N, K), constraint="unconstrained")


def centralized_mmse(ens: CsiEnsemble, params: MmseParams,
                     clusters: tuple) -> StochasticPrecoder:
    """Cluster-wise MMSE from shared estimates with error-covariance loading.

    Column k solves, on the rows of its serving APs only,
    (Hhat_k P Hhat_k^H + sum_j p_j Psi_j + Sigma) v = sqrt(p_k) hhat_k,
    so the inversion size is N |L_k| rather than N L.
    """
    L, N, K = ens.dims
    S = ens.S
    P, sigma = params.p, params.sigma
    err = _weighted_err_cov(ens, P)                       # (L, N, N)
    T = np.zeros((S, L, N, K), dtype=complex)
    for k in range(K):
        cluster = tuple(clusters[k])
        Q = len(cluster)
        sub = ens.Hhat[:, cluster]                        # (S, Q, N, K)
        Hk = sub.reshape(S, Q * N, K)
        A = np.einsum("smj,j,snj->smn", Hk, P, Hk.conj())
        load = np.zeros((Q * N, Q * N), dtype=complex)
        for i, l in enumerate(cluster):
            block = slice(i * N, (i + 1) * N)
            load[block, block] = err[l] + sigma[l] * np.eye(N)
        A += load[None, :, :]
        v = np.linalg.solve(A, np.sqrt(P[k]) * Hk[:, :, k, None])[..., 0]
        for i, l in enumerate(cluster):
            T[:, l, :, k] = v[:, i * N:(i + 1) * N]
    return StochasticPrecoder(T=T, constraint="centralized", clusters=tuple(clusters))


def local_mmse_stage(ens: CsiEnsemble, params: MmseParams, l: int) -> np.ndarray:
    """Per-sample local MMSE stage of AP l, shape (S, N, K).

    V_l = (Hhat_l P Hhat_l^H + sum_k p_k Psi_{l,k} + sigma_l I)^{-1}
          Hhat_l P^{1/2}.
    """
    _, N, K = ens.dims
    P = params.p
    Hl = ens.Hhat[:, l]                                   # (S, N, K)
    A = np.einsum("smk,k,snk->smn", Hl, P, Hl.conj())
    A += (np.einsum("k,knm->nm", P, ens.err_cov[l])
          + params.sigma[l] * np.eye(N))[None, :, :]
    return np.linalg.solve(A, Hl * np.sqrt(P)[None, None, :])


def pi_matrix(ens: CsiEnsemble, params: MmseParams, l: int,
              stage: np.ndarray = None) -> np.ndarray:
    """Coupling matrix Pi_l = E[P^{1/2} Hhat_l^H V_l], shape (K, K)."""
    if stage is None:
        stage = local_mmse_stage(ens, params, l)
    prod = np.einsum("snk,snm->skm", ens.Hhat[:, l].conj(), stage)
    return np.sqrt(params.p)[:, None] * prod.mean(axis=0)


def _correction_system(pi: np.ndarray, cluster: tuple, k: int):
    K = pi.shape[1]
    Q = len(cluster)
    A = np.zeros((Q * K, Q * K), dtype=complex)
    rhs = np.zeros(Q * K, dtype=complex)
    for i in range(Q):
        rhs[i * K + k] = 1.0
        for j in range(Q):
            A[i * K:(i + 1) * K, j * K:(j + 1) * K] = (
                np.eye(K) if i == j else pi[cluster[j]])
    return A, rhs


def solve_correction_stage(pi: np.ndarray, clusters: tuple, k: int) -> np.ndarray:
    """Correction vectors c_{l,k} for UE k from the per-AP coupling matrices.

    Solves the block system c_{l,k} + sum_{j in L_k \\ l} Pi_j c_{j,k} = e_k
    over the serving APs; rows of non-serving APs are zero.  Returns an
    (L, K) array whose row l is c_{l,k}.
    """
    L, K = pi.shape[0], pi.shape[1]
    cluster = tuple(clusters[k])
    A, rhs = _correction_system(pi, cluster, k)
    sol = solve_checked(A, rhs, context=f"correction stage (UE {k})")
    c = np.zeros((L, K), dtype=complex)
    for i, l in enumerate(cluster):
        c[l] = sol[i * K:(i + 1) * K]
    return c


def local_team_mmse(ens: CsiEnsemble, params: MmseParams,
                    clusters: tuple) -> LocalTeamPrecoder:
    """Optimal local-CSI precoder: local MMSE stages plus corrections."""
    L, N, K = ens.dims
    stages = np.stack([local_mmse_stage(ens, params, l) for l in range(L)], axis=1)
    pi = np.stack([pi_matrix(ens, params, l, stages[:, l]) for l in range(L)])
    corrections = np.zeros((L, K, K), dtype=complex)
    worst_cond = 0.0
    for k in range(K):
        corrections[:, :, k] = solve_correction_stage(pi, clusters, k)
        A, _ = _correction_system(pi, tuple(clusters[k]), k)
        worst_cond = max(worst_cond, float(np.linalg.cond(A)))
    if worst_cond > COND_WARN:
        warnings.warn(f"correction systems are near singular (cond {worst_cond:.2e})")
    return LocalTeamPrecoder(stages=stages, corrections=corrections, pi=pi,
                             clusters=tuple(clusters), cond=worst_cond)


def local_scalar_baseline(ens: CsiEnsemble, params: MmseParams,
                          clusters: tuple) -> LocalTeamPrecoder:
    """Local MMSE with a single tunable coefficient per serving AP.

    The correction is restricted to c_{l,k} e_k; the scalars solve the
    correction system projected onto the e_k coordinate.
    """
    L, N, K = ens.dims
    stages = np.stack([local_mmse_stage(ens, params, l) for l in range(L)], axis=1)
    pi = np.stack([pi_matrix(ens, params, l, stages[:, l]) for l in range(L)])
    corrections = np.zeros((L, K, K), dtype=complex)
    worst_cond = 0.0
    for k in range(K):
        cluster = tuple(clusters[k])
        Q = len(cluster)
        A = np.eye(Q, dtype=complex)
        for i in range(Q):
            for j in range(Q):
                if i != j:
                    A[i, j] = pi[cluster[j]][k, k]
        a = solve_checked(A, np.ones(Q, dtype=complex),
                          context=f"scalar correction (UE {k})")
        worst_cond = max(worst_cond, float(np.linalg.cond(A)))
        for i, l in enumerate(cluster):
            corrections[l, k, k] = a[i]
    return LocalTeamPrecoder(stages=stages, corrections=corrections, pi=pi,
                             clusters=tuple(clusters), cond=worst_cond)


def mse_objective(v: np.ndarray, ens: CsiEnsemble, params: MmseParams,
                  k: int) -> float:
    """Regularized MSE E||P^{1/2} H^H v - e_k||^2 + E||v||_sigma^2."""
    _, _, K = ens.dims
    G = np.einsum("slnj,sln->sj", ens.H.conj(), np.asarray(v, dtype=complex))
    r = np.sqrt(params.p)[None, :] * G
    r[:, k] -= 1.0
    return float((np.abs(r) ** 2).sum(axis=1).mean() + sigma_norm_sq(v, params.sigma))


def tmmse_residual(precoder: StochasticPrecoder, ens: CsiEnsemble,
                   params: MmseParams, k: int) -> float:
    """Violation of the local-CSI optimality conditions for UE k.

    Checks v_{l,k} = V_l (e_k - sum_{j in L_k \\ l} P^{1/2} E[Hhat_j^H v_{j,k}])
    for every serving AP, with the conditional expectation collapsed to the
    unconditional mean (exact under cross-AP independence and local CSI).
    Returns the worst empirical root-mean-square mismatch over serving APs.
    """
    L, N, K = ens.dims
    cluster = tuple(precoder.clusters[k])
    v = precoder.column(k)                                 # (S, L, N)
    # per-AP mean estimate-weighted response m_l = E[Hhat_l^H v_{l,k}]
    m = np.einsum("slnj,sln->slj", ens.Hhat.conj(), v).mean(axis=0)  # (L, K)
    worst = 0.0
    e_k = np.zeros(K)
    e_k[k] = 1.0
    for l in cluster:
        target = e_k.astype(complex)
        for j in cluster:
            if j != l:
                target = target - np.sqrt(params.p) * m[j]
        rhs = local_mmse_stage(ens, params, l) @ target    # (S, N)
        gap = float(np.sqrt((np.abs(v[:, l] - rhs) ** 2).sum(axis=1).mean()))
        worst = max(worst, gap)
    return worst


def save_precoder(precoder, path) -> None:
    """Persist a precoder (and correction stage when present) as npz."""
    if isinstance(precoder, LocalTeamPrecoder):
        np.savez_compressed(path, stages=precoder.stages,
                            corrections=precoder.corrections, pi=precoder.pi,
                            clusters=np.array(precoder.clusters, dtype=object),
                            kind=np.array("local_team"))
    else:
        np.savez_compressed(path, T=precoder.T,
                            constraint=np.array(precoder.constraint),
                            kind=np.array("stochastic"))


def load_precoder(path):
    with np.load(path, allow_pickle=True) as data:
        if str(data["kind"]) == "local_team":
            clusters = tuple(tuple(c) for c in data["clusters"])
            return LocalTeamPrecoder(stages=data["stages"],
                                     corrections=data["corrections"],
                                     pi=data["pi"], clusters=clusters)
        return StochasticPrecoder(T=data["T"], constraint=str(data["constraint"]))
