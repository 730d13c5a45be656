"""Network scenario generation: geometry, channel gains, clusters, budgets.

APs sit on a regular sqrt(L) x sqrt(L) grid centered in a square service
area; UEs are dropped uniformly at random.  Channel gains follow a
3GPP-like urban-microcell model with correlated log-normal shadow fading,
normalized by the thermal noise power so that all SINR expressions can use
a unit noise term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
import yaml


def dbm_to_watts(x):
    """Convert a power level in dBm to linear watts."""
    return 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)


@dataclass
class GeometryConfig:
    """Geometry and propagation parameters for one network layout."""

    L: int = 16                    # number of APs (perfect square, grid layout)
    N: int = 4                     # antennas per AP
    K: int = 16                    # number of single-antenna UEs
    area_m: float = 1000.0         # side length of the square service area [m]
    height_m: float = 10.0         # AP-UE height difference, floors the distance [m]
    pathloss_slope_db: float = 35.3
    pathloss_const_db: float = -34.5
    shadow_std_db: float = 7.82    # shadow fading deviation rho [dB]
    shadow_corr_m: float = 13.0    # shadow correlation distance [m]
    bandwidth_hz: float = 100e6
    noise_figure_db: float = 7.0
    cluster_size: int = 4          # Q strongest APs serve each UE
    power_dbm: float = 30.0        # per-AP power budget
    sinr_target: float = 1.0       # default gamma, usually overridden per sweep

    def __post_init__(self):
        if self.L < 1 or self.N < 1 or self.K < 1:
            raise ValueError("L, N, K must be positive")
        if round(self.L ** 0.5) ** 2 != self.L:
            raise ValueError("L must be a perfect square for the grid layout")
        if not (1 <= self.cluster_size <= self.L):
            raise ValueError("cluster size must satisfy 1 <= Q <= L")
        for name in ("area_m", "height_m", "shadow_corr_m", "bandwidth_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.shadow_std_db < 0:
            raise ValueError("shadow_std_db must be nonnegative")
        if self.sinr_target <= 0:
            raise ValueError("sinr_target must be positive")

    @property
    def noise_dbm(self) -> float:
        """Thermal noise power -174 + 10 log10(B) + F [dBm]."""
        return -174.0 + 10.0 * np.log10(self.bandwidth_hz) + self.noise_figure_db


@dataclass
class NetworkScenario:
    """One realized network: geometry, gains, clusters, budgets, targets.

    Gains are linear and noise-normalized (the SINR noise term is 1).
    ``clusters[k]`` lists the serving APs of UE k by decreasing gain.
    """

    L: int
    N: int
    K: int
    P: np.ndarray                  # (L,) per-AP power budgets, linear watts
    gamma: np.ndarray              # (K,) SINR targets
    clusters: tuple                # K tuples of AP indices
    gains: np.ndarray              # (L, K) linear noise-normalized gains
    ap_pos: np.ndarray = field(default=None, repr=False)   # (L, 2) [m]
    ue_pos: np.ndarray = field(default=None, repr=False)   # (K, 2) [m]
    noise_dbm: float = float("nan")

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.gains = np.asarray(self.gains, dtype=float)
        if self.P.shape != (self.L,) or self.gamma.shape != (self.K,):
            raise ValueError("budget/target vectors have wrong length")
        if self.gains.shape != (self.L, self.K):
            raise ValueError("gains must be an (L, K) matrix")
        if np.any(self.P <= 0) or np.any(self.gamma <= 0):
            raise ValueError("budgets and SINR targets must be positive")
        if not np.all(np.isfinite(self.gains)) or np.any(self.gains <= 0):
            raise ValueError("gains must be strictly positive and finite")
        if len(self.clusters) != self.K:
            raise ValueError("one cluster set per UE required")
        self.clusters = tuple(tuple(int(l) for l in c) for c in self.clusters)
        for c in self.clusters:
            if len(c) == 0 or any(l < 0 or l >= self.L for l in c):
                raise ValueError("cluster sets must be nonempty subsets of the APs")


def ap_grid_positions(L: int, area_m: float) -> np.ndarray:
    """Centers of a sqrt(L) x sqrt(L) grid of square cells tiling the area."""
    side = int(round(L ** 0.5))
    edges = np.linspace(0.0, area_m, side + 1)
    centers = (edges[:-1] + edges[1:]) / 2
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def shadow_covariance(ue_pos: np.ndarray, rho_db: float, corr_m: float) -> np.ndarray:
    """K x K shadow-fading covariance: rho^2 * 2^(-delta_ki / corr_m)."""
    diff = ue_pos[:, None, :] - ue_pos[None, :, :]
    delta = np.sqrt(np.sum(diff ** 2, axis=-1))
    return rho_db ** 2 * np.power(2.0, -delta / corr_m)


def psd_sqrt(mat: np.ndarray, clip_tol: float = 1e-10) -> np.ndarray:
    """Hermitian PSD square root, clipping small negative eigenvalues at zero.

    Raises if the matrix is indefinite beyond rounding noise.
    """
    w, v = np.linalg.eigh(mat)
    scale = max(abs(w[-1]), 1.0)
    if w[0] < -clip_tol * scale:
        raise np.linalg.LinAlgError("matrix is not positive semidefinite")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def assign_clusters(gains: np.ndarray, Q: int) -> tuple:
    """Cluster of the Q strongest APs per UE, ties broken by lowest AP index.

    Each returned tuple is ordered by decreasing gain.
    """
    L, K = gains.shape
    if not (1 <= Q <= L):
        raise ValueError("need 1 <= Q <= L")
    # stable sort on negated gains keeps the lowest AP index first among ties
    order = np.argsort(-gains, axis=0, kind="stable")
    return tuple(tuple(int(l) for l in order[:Q, k]) for k in range(K))


def link_distances(cfg: GeometryConfig, ap_pos, ue_pos) -> np.ndarray:
    """(L, K) AP-UE distances including the height difference."""
    diff = ap_pos[:, None, :] - ue_pos[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1) + cfg.height_m ** 2)


def channel_gains_db(cfg: GeometryConfig, dist_m, shadow_db) -> np.ndarray:
    """3GPP-like gain in dB, normalized by the noise power."""
    return (-cfg.pathloss_slope_db * np.log10(dist_m)
            + cfg.pathloss_const_db + shadow_db - cfg.noise_dbm)


def generate_scenario(cfg: GeometryConfig, seed) -> NetworkScenario:
    """Draw one network realization (UE drop + shadow fading) from a seed."""
    rng = np.random.default_rng(seed)
    ap_pos = ap_grid_positions(cfg.L, cfg.area_m)
    ue_pos = rng.uniform(0.0, cfg.area_m, size=(cfg.K, 2))

    # correlated shadow fading: same kernel across UEs, independent across APs
    cov_root = psd_sqrt(shadow_covariance(ue_pos, cfg.shadow_std_db, cfg.shadow_corr_m))
    shadow_db = (cov_root @ rng.standard_normal((cfg.K, cfg.L))).T

    gains_db = channel_gains_db(cfg, link_distances(cfg, ap_pos, ue_pos), shadow_db)
    gains = 10.0 ** (gains_db / 10.0)
    clusters = assign_clusters(gains, cfg.cluster_size)
    return NetworkScenario(
        L=cfg.L, N=cfg.N, K=cfg.K,
        P=np.full(cfg.L, float(dbm_to_watts(cfg.power_dbm))),
        gamma=np.full(cfg.K, cfg.sinr_target),
        clusters=clusters, gains=gains,
        ap_pos=ap_pos, ue_pos=ue_pos, noise_dbm=cfg.noise_dbm,
    )


def load_geometry_config(path) -> GeometryConfig:
    """Read a GeometryConfig from a YAML file (section: geometry)."""
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    section = doc.get("geometry", doc)
    return GeometryConfig(**section)


def save_scenario(scn: NetworkScenario, path) -> None:
    """Write all scenario fields (including gains) to JSON for exact replay."""
    doc = {
        "L": scn.L, "N": scn.N, "K": scn.K,
        "P": scn.P.tolist(),
        "gamma": scn.gamma.tolist(),
        "clusters": [list(c) for c in scn.clusters],
        "gains": scn.gains.tolist(),
        "ap_pos": None if scn.ap_pos is None else scn.ap_pos.tolist(),
        "ue_pos": None if scn.ue_pos is None else scn.ue_pos.tolist(),
        "noise_dbm": scn.noise_dbm,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_scenario(path) -> NetworkScenario:
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("ap_pos", "ue_pos"):
        if doc.get(key) is not None:
            doc[key] = np.asarray(doc[key], dtype=float)
    doc["P"] = np.asarray(doc["P"], dtype=float)
    doc["gamma"] = np.asarray(doc["gamma"], dtype=float)
    doc["gains"] = np.asarray(doc["gains"], dtype=float)
    doc["clusters"] = tuple(tuple(c) for c in doc["clusters"])
    return NetworkScenario(**doc)


def geometry_to_dict(cfg: GeometryConfig) -> dict:
    return asdict(cfg)
