"""Channel statistics and Monte-Carlo CSI ensembles.

Every expectation in the SINR and MMSE expressions is realized as a sample
average over one frozen ensemble of channel/estimate pairs, so that the
power-control and multiplier iterations see deterministic statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cellfree.scenario import NetworkScenario, psd_sqrt


@dataclass
class ChannelStatistics:
    """Per-link channel means, covariances, and estimation-error covariances.

    Shapes: mu (L, K, N) complex, cov and err_cov (L, K, N, N) Hermitian PSD
    with err_cov <= cov in the PSD order.
    """

    mu: np.ndarray
    cov: np.ndarray
    err_cov: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=complex)
        self.cov = np.asarray(self.cov, dtype=complex)
        self.err_cov = np.asarray(self.err_cov, dtype=complex)
        L, K, N = self.mu.shape
        if self.cov.shape != (L, K, N, N) or self.err_cov.shape != (L, K, N, N):
            raise ValueError("covariance arrays must be (L, K, N, N)")

    @property
    def dims(self):
        L, K, N = self.mu.shape
        return L, K, N

    def validate(self, tol: float = 1e-9) -> None:
        """Check Hermitian PSD covariances and err_cov <= cov (PSD order)."""
        for name, arr in (("cov", self.cov), ("err_cov", self.err_cov)):
            if not np.allclose(arr, arr.conj().swapaxes(-1, -2), atol=tol):
                raise ValueError(f"{name} is not Hermitian")
            w = np.linalg.eigvalsh(arr)
            if np.any(w < -tol):
                raise ValueError(f"{name} is not PSD")
        gap = np.linalg.eigvalsh(self.cov - self.err_cov)
        if np.any(gap < -tol):
            raise ValueError("err_cov exceeds cov in the PSD order")


@dataclass
class CsiEnsemble:
    """Sample-indexed true channels and per-AP estimates.

    ``H`` and ``Hhat`` have shape (S, L, N, K); ``H[s, l]`` is the local
    channel of AP l in sample s.  ``err_cov`` carries the declared
    estimation-error covariances used by the MMSE precoder formulas, and
    ``mode`` declares whether the estimates are shared ("centralized")
    or stay at their AP ("local").
    """

    H: np.ndarray
    Hhat: np.ndarray
    err_cov: np.ndarray
    mode: str = "local"
    seed: object = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=complex)
        self.Hhat = np.asarray(self.Hhat, dtype=complex)
        self.err_cov = np.asarray(self.err_cov, dtype=complex)
        if self.H.shape != self.Hhat.shape or self.H.ndim != 4:
            raise ValueError("H and Hhat must both be (S, L, N, K)")
        if self.mode not in ("local", "centralized"):
            raise ValueError("mode must be 'local' or 'centralized'")

    @property
    def S(self) -> int:
        return self.H.shape[0]

    @property
    def dims(self):
        _, L, N, K = self.H.shape
        return L, N, K

    def aggregate(self, which: str = "H") -> np.ndarray:
        """(S, L*N, K) stacked view, AP blocks in index order."""
        arr = self.H if which == "H" else self.Hhat
        S, L, N, K = arr.shape
        return arr.reshape(S, L * N, K)


def empirical_mean(values: np.ndarray, axis: int = 0):
    """Sample mean along the sample axis (deterministic summation order)."""
    values = np.asarray(values)
    if values.shape[axis] == 0:
        raise ValueError("empty ensemble")
    return values.mean(axis=axis)


def empirical_se(values: np.ndarray, axis: int = 0):
    """Monte-Carlo standard error of the sample mean.

    The sample count behind every expectation is a free parameter; this
    quantifies how well a given ensemble size approximates it.
    """
    values = np.asarray(values)
    S = values.shape[axis]
    if S == 0:
        raise ValueError("empty ensemble")
    if S == 1:
        return np.zeros_like(np.abs(values).mean(axis=axis))
    centered = values - values.mean(axis=axis, keepdims=True)
    var = (np.abs(centered) ** 2).sum(axis=axis) / (S - 1)
    return np.sqrt(var / S)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_ensemble(stats: ChannelStatistics, S: int, seed) -> CsiEnsemble:
    """Draw S independent channel/estimate pairs per AP-UE link.

    Estimates and errors are drawn independently (Hhat ~ CN(mu, cov-err_cov),
    Z ~ CN(0, err_cov)) and the true channel is their sum, so the estimate
    is exactly uncorrelated with its error.  Raises if cov - err_cov is not
    PSD.
    """
    if S < 1:
        raise ValueError("need at least one sample")
    L, K, N = stats.dims
    rng = np.random.default_rng(seed)
    Hhat = np.empty((S, L, N, K), dtype=complex)
    H = np.empty((S, L, N, K), dtype=complex)
    for l in range(L):
        for k in range(K):
            est_root = psd_sqrt(stats.cov[l, k] - stats.err_cov[l, k])
            err_root = psd_sqrt(stats.err_cov[l, k])
            est = stats.mu[l, k] + complex_normal(rng, (S, N)) @ est_root.T
            err = complex_normal(rng, (S, N)) @ err_root.T
            Hhat[:, l, :, k] = est
            H[:, l, :, k] = est + err
    return CsiEnsemble(H=H, Hhat=Hhat, err_cov=stats.err_cov, seed=seed)


def rayleigh_statistics(scn: NetworkScenario) -> ChannelStatistics:
    """Zero-mean uncorrelated statistics with served-only channel knowledge.

    cov_{l,k} = gain_{l,k} * I; the estimation error is zero for serving APs
    (perfect CSI) and equals the full covariance otherwise (the estimate
    collapses to the zero mean).
    """
    L, K, N = scn.L, scn.K, scn.N
    eye = np.eye(N, dtype=complex)
    mu = np.zeros((L, K, N), dtype=complex)
    cov = scn.gains[:, :, None, None] * eye
    err_cov = cov.copy()
    for k, cluster in enumerate(scn.clusters):
        for l in cluster:
            err_cov[l, k] = 0.0
    return ChannelStatistics(mu=mu, cov=cov, err_cov=err_cov)


def save_ensemble(ens: CsiEnsemble, path) -> None:
    """Persist an ensemble (npz container keyed by its seed) for replay."""
    np.savez_compressed(
        path, H=ens.H, Hhat=ens.Hhat, err_cov=ens.err_cov,
        mode=np.array(ens.mode), seed=np.array(repr(ens.seed)),
    )


def load_ensemble(path) -> CsiEnsemble:
    with np.load(path) as data:
        return CsiEnsemble(
            H=data["H"], Hhat=data["Hhat"], err_cov=data["err_cov"],
            mode=str(data["mode"]), seed=str(data["seed"]),
        )
