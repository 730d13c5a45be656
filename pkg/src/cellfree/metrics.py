"""Ergodic SINR/rate metrics and transmit powers over a CSI ensemble.

Downlink SINRs use the hardening bound (expectations inside the ratio,
unit noise); uplink SINRs use the use-and-then-forget bound with
sigma-weighted combiner norms.  All expectations are empirical averages
over the ensemble's sample axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cellfree.channel import CsiEnsemble


@dataclass
class StochasticPrecoder:
    """Sample-indexed precoding (or combining) matrices, shape (S, L, N, K).

    ``constraint`` declares the information constraint the columns respect:
    "unconstrained" (perfect shared CSI), "centralized" (estimates shared
    within each cluster), or "local" (each AP block a function of its own
    estimates only).  Blocks of APs outside ``clusters[k]`` are zero in
    column k whenever clusters are declared.
    """

    T: np.ndarray
    constraint: str = "unconstrained"
    clusters: tuple = None

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=complex)
        if self.T.ndim != 4:
            raise ValueError("T must be (S, L, N, K)")
        if self.constraint not in ("unconstrained", "centralized", "local"):
            raise ValueError(f"unknown constraint tag {self.constraint!r}")

    @property
    def S(self) -> int:
        return self.T.shape[0]

    def column(self, k: int) -> np.ndarray:
        """(S, L, N) stochastic vector for UE k."""
        return self.T[:, :, :, k]

    def scaled_columns(self, scale: np.ndarray) -> "StochasticPrecoder":
        """New precoder with column k multiplied by scale[k]."""
        return StochasticPrecoder(
            T=self.T * np.asarray(scale)[None, None, None, :],
            constraint=self.constraint, clusters=self.clusters,
        )


@dataclass
class SinrBreakdown:
    """Terms of one UE's hardening-bound SINR."""

    b: complex                # useful-signal mean E[h_k^H t_k]
    var: float                # V(h_k^H t_k), clamped at 0
    interf: np.ndarray        # E[|h_k^H t_j|^2] for j != k (own entry 0)
    noise: float = 1.0

    @property
    def sinr(self) -> float:
        denom = self.var + float(np.sum(self.interf)) + self.noise
        return float(abs(self.b) ** 2 / denom)


def effective_channels(H: np.ndarray, T: np.ndarray) -> np.ndarray:
    """G[s, j, k] = h_j[s]^H t_k[s] for all UE channels j and columns k."""
    return np.einsum("slnj,slnk->sjk", H.conj(), T)


def _precoder_array(T) -> np.ndarray:
    return T.T if isinstance(T, StochasticPrecoder) else np.asarray(T, dtype=complex)


def sinr_breakdown(T, ens: CsiEnsemble, k: int) -> SinrBreakdown:
    G = effective_channels(ens.H, _precoder_array(T))
    b = G[:, k, :].mean(axis=0)
    second = (np.abs(G[:, k, :]) ** 2).mean(axis=0)
    var = max(float(second[k] - abs(b[k]) ** 2), 0.0)
    interf = second.copy()
    interf[k] = 0.0
    return SinrBreakdown(b=complex(b[k]), var=var, interf=interf)


def dl_sinr(T, ens: CsiEnsemble, k: int) -> float:
    """Hardening-bound downlink SINR of UE k (0 if the signal mean vanishes)."""
    return sinr_breakdown(T, ens, k).sinr


def dl_sinr_all(T, ens: CsiEnsemble) -> np.ndarray:
    """All K downlink SINRs in one pass."""
    G = effective_channels(ens.H, _precoder_array(T))
    K = G.shape[1]
    b = np.einsum("skk->sk", G).mean(axis=0)
    second = (np.abs(G) ** 2).mean(axis=0)          # (K, K): rows j, cols k
    signal = np.abs(b) ** 2
    denom = second.sum(axis=1) - signal + 1.0       # variance + interference + noise
    return signal / denom


def dl_rate(T, ens: CsiEnsemble, k: int) -> float:
    """Hardening-bound rate log2(1 + SINR) in b/s/Hz."""
    return float(np.log2(1.0 + dl_sinr(T, ens, k)))


def sigma_norm_sq(v: np.ndarray, sigma: np.ndarray) -> float:
    """Sigma-weighted expected squared norm sum_l sigma_l E||v_l||^2."""
    v = np.asarray(v)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    per_ap = (np.abs(v) ** 2).sum(axis=2).mean(axis=0)   # (L,)
    return float(per_ap @ sigma)


def ul_sinr(v: np.ndarray, p: np.ndarray, sigma: np.ndarray,
            ens: CsiEnsemble, k: int) -> float:
    """Use-and-then-forget uplink SINR of UE k for combiner v (S, L, N).

    Returns 0 for an identically zero combiner (no coherent signal).  The
    value is invariant to nonzero scaling of v.
    """
    v = np.asarray(v, dtype=complex)
    p = np.asarray(p, dtype=float)
    noise = sigma_norm_sq(v, sigma)
    if noise == 0.0:
        return 0.0
    G = np.einsum("slnj,sln->sj", ens.H.conj(), v)       # h_j^H v per sample
    b = G[:, k].mean()
    second = (np.abs(G) ** 2).mean(axis=0)
    signal = p[k] * abs(b) ** 2
    denom = float(p @ second) - signal + noise           # p_k*var + interference + noise
    return float(signal / denom) if signal > 0.0 else 0.0


def per_ap_powers(T, ens: CsiEnsemble = None) -> np.ndarray:
    """Per-AP transmit powers: entry l is sum_k E||t_{l,k}||^2."""
    arr = _precoder_array(T)
    return (np.abs(arr) ** 2).sum(axis=(2, 3)).mean(axis=0)
