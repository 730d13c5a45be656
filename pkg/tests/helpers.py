"""Shared test fixtures: crafted ensembles and independent oracles.

The product ensembles built here realize the CSI model exactly under the
empirical measure: estimates are independent across APs (sample index set
is a cartesian product over per-AP atoms), estimation errors are +/- pairs
with exact zero conditional mean, and the per-column conditional error
second moment is constant and equal to the declared covariance.  On such
ensembles the closed-form precoder stages are the exact minimizers of the
empirical objective, so equality-style assertions are legitimate.
"""

import itertools

import numpy as np

from cellfree.channel import ChannelStatistics, CsiEnsemble


def crandn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_psd(rng, n, scale=1.0):
    A = crandn(rng, (n, n))
    return scale * (A @ A.conj().T + 0.1 * np.eye(n))


class ProductEnsemble:
    """Exact-structure ensemble plus the per-AP estimate group labels."""

    def __init__(self, ens, groups):
        self.ens = ens
        self.groups = groups            # (L, S) int array: estimate atom per sample


def build_product_ensemble(rng, L=2, K=2, N=1, groups_per_ap=2,
                           est_scale=1.0, err_scale=0.5, nonzero_mean=True):
    """Cartesian-product ensemble with +/- error pairs per estimate atom.

    Per AP: ``groups_per_ap`` random estimate matrices, each emitted twice
    with error +c_l and -c_l for a fixed per-AP error template c_l;
    samples enumerate the product over APs.  S = (2 * groups_per_ap)^L.
    """
    atoms = []
    err_cov = np.zeros((L, K, N, N), dtype=complex)
    for l in range(L):
        mean = est_scale * crandn(rng, (N, K)) if nonzero_mean else 0.0
        ests = [mean + est_scale * crandn(rng, (N, K))
                for _ in range(groups_per_ap)]
        c = err_scale * crandn(rng, (N, K))
        for k in range(K):
            err_cov[l, k] = np.outer(c[:, k], c[:, k].conj())
        atoms.append([(g, ests[g], sign * c)
                      for g in range(groups_per_ap) for sign in (+1.0, -1.0)])
    combos = list(itertools.product(*atoms))
    S = len(combos)
    H = np.zeros((S, L, N, K), dtype=complex)
    Hhat = np.zeros((S, L, N, K), dtype=complex)
    groups = np.zeros((L, S), dtype=int)
    for s, combo in enumerate(combos):
        for l, (g, est, err) in enumerate(combo):
            Hhat[s, l] = est
            H[s, l] = est + err
            groups[l, s] = g
    ens = CsiEnsemble(H=H, Hhat=Hhat, err_cov=err_cov)
    return ProductEnsemble(ens, groups)


def measurable_probe(rng, prod: ProductEnsemble, clusters, k, scale=1.0):
    """Random combiner for UE k obeying the local-CSI measurability constraint.

    One random vector per (serving AP, estimate group), broadcast to the
    samples of that group; zero rows elsewhere.
    """
    S, L, N, _ = prod.ens.H.shape
    v = np.zeros((S, L, N), dtype=complex)
    for l in clusters[k]:
        n_groups = prod.groups[l].max() + 1
        values = scale * crandn(rng, (n_groups, N))
        v[:, l, :] = values[prod.groups[l]]
    return v


def ls_oracle_local(prod: ProductEnsemble, params, clusters, k):
    """Dense least-squares minimizer of the empirical MSE under local CSI.

    Unknowns are one N-vector per (serving AP, estimate group); the
    objective stacks the per-sample residuals P^{1/2} H^H v - e_k (weighted
    1/sqrt(S)) and the sigma-weighted norm rows.  Independent of the
    production solver: no MMSE stage, no coupling matrices.
    """
    ens = prod.ens
    S, L, N, K = ens.H.shape
    p, sigma = params.p, params.sigma
    cluster = tuple(clusters[k])
    # unknown layout: for each serving AP, groups_per_ap blocks of size N
    offsets, total = {}, 0
    for l in cluster:
        n_groups = prod.groups[l].max() + 1
        offsets[l] = (total, n_groups)
        total += n_groups * N

    rows_obj = S * K
    rows_norm = total
    A = np.zeros((rows_obj + rows_norm, total), dtype=complex)
    b = np.zeros(rows_obj + rows_norm, dtype=complex)
    for s in range(S):
        for j in range(K):
            r = s * K + j
            for l in cluster:
                base, _ = offsets[l]
                g = prod.groups[l, s]
                cols = slice(base + g * N, base + (g + 1) * N)
                A[r, cols] = np.sqrt(p[j]) * ens.H[s, l, :, j].conj() / np.sqrt(S)
            if j == k:
                b[r] = 1.0 / np.sqrt(S)
    r = rows_obj
    for l in cluster:
        base, n_groups = offsets[l]
        counts = np.bincount(prod.groups[l], minlength=n_groups)
        for g in range(n_groups):
            w = np.sqrt(sigma[l] * counts[g] / S)
            for n in range(N):
                A[r, base + g * N + n] = w
                r += 1
    x = np.linalg.lstsq(A, b, rcond=None)[0]

    v = np.zeros((S, L, N), dtype=complex)
    for l in cluster:
        base, n_groups = offsets[l]
        blocks = x[base:base + n_groups * N].reshape(n_groups, N)
        v[:, l, :] = blocks[prod.groups[l]]
    return v


def random_served_stats(rng, L, K, N, gain_low=0.5, gain_high=4.0,
                        cluster_size=None):
    """Random zero-mean statistics with perfect CSI on random clusters.

    Mirrors the simulation CSI model: serving links perfectly estimated,
    all other links completely unknown.
    """
    gains = rng.uniform(gain_low, gain_high, size=(L, K))
    Q = cluster_size or max(1, L // 2)
    order = np.argsort(-gains, axis=0, kind="stable")
    clusters = tuple(tuple(int(l) for l in order[:Q, k]) for k in range(K))
    eye = np.eye(N, dtype=complex)
    cov = gains[:, :, None, None] * eye
    err = cov.copy()
    for k, cluster in enumerate(clusters):
        for l in cluster:
            err[l, k] = 0.0
    stats = ChannelStatistics(mu=np.zeros((L, K, N), dtype=complex),
                              cov=cov, err_cov=err)
    return stats, clusters, gains
