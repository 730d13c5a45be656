"""Experiment runner: feasibility sweeps over UE drops.

For each drop a child seed derives one scenario and one frozen CSI
ensemble, shared by every (gamma, precoder, mode) cell of the sweep.
Per-AP cells run the full multiplier ascent; sum-power cells run only the
aggregate-budget pre-test.  Inconclusive drops are recorded and excluded
from the feasibility rate.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from cellfree.scenario import GeometryConfig, generate_scenario, geometry_to_dict
from cellfree.channel import rayleigh_statistics, sample_ensemble
from cellfree.duality import (
    ConvergenceError,
    SolverOptions,
    subgradient_ascent,
    sum_power_pretest,
)

PRECODER_FAMILIES = {
    "centralized": "centralized",
    "local": "local",
    "local_scalar_baseline": "local_scalar",
}
MODES = ("per_ap", "sum_power")


def rate_to_gamma(R: float) -> float:
    """SINR target for a rate target in b/s/Hz: gamma = 2^R - 1."""
    if R < 0:
        raise ValueError("rate targets must be nonnegative")
    return float(2.0 ** R - 1.0)


@dataclass
class ExperimentSpec:
    """One sweep: scenario family x SINR targets x precoders x power modes."""

    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    gammas: tuple = (1.0,)
    precoders: tuple = ("centralized", "local")
    modes: tuple = ("per_ap", "sum_power")
    drops: int = 100
    samples: int = 100
    seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)
    log_trajectories: bool = False
    jobs: int = 1

    def __post_init__(self):
        self.gammas = tuple(float(g) for g in self.gammas)
        self.precoders = tuple(self.precoders)
        self.modes = tuple(self.modes)
        if not self.gammas or not self.precoders or not self.modes:
            raise ValueError("sweep axes must be nonempty")
        if any(g <= 0 for g in self.gammas):
            raise ValueError("SINR targets must be positive")
        for name in self.precoders:
            if name not in PRECODER_FAMILIES:
                raise ValueError(f"unknown precoder type {name!r}")
        for mode in self.modes:
            if mode not in MODES:
                raise ValueError(f"unknown power-constraint mode {mode!r}")
        if self.drops < 1 or self.samples < 1:
            raise ValueError("drops and samples must be >= 1")


@dataclass
class ExperimentResult:
    """Aggregated cells plus the per-drop verdict records."""

    spec: dict
    cells: list
    records: list
    trajectories: list = field(default_factory=list)


def drop_seed(master_seed: int, drop: int) -> np.random.SeedSequence:
    """Independent, individually reproducible child seed for one drop."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(drop,))


def run_drop(spec: ExperimentSpec, drop: int):
    """All sweep cells for one UE drop on one shared ensemble."""
    scn_seed, ens_seed = drop_seed(spec.seed, drop).spawn(2)
    scn = generate_scenario(spec.geometry, scn_seed)
    stats = rayleigh_statistics(scn)
    ens = sample_ensemble(stats, spec.samples, ens_seed)
    records, trajectories = [], []
    for gamma in spec.gammas:
        gam_vec = np.full(scn.K, gamma)
        for name in spec.precoders:
            family = PRECODER_FAMILIES[name]
            for mode in spec.modes:
                start = time.perf_counter()
                trajectory = []
                try:
                    if mode == "sum_power":
                        status, _ = sum_power_pretest(
                            ens, gam_vec, scn.P, scn.clusters, scn.gains,
                            family, spec.solver)
                        iterations = 0
                    else:
                        verdict = subgradient_ascent(
                            ens, gam_vec, scn.P, scn.clusters, scn.gains,
                            family, spec.solver)
                        status = verdict.status
                        iterations = verdict.outer_iterations
                        trajectory = verdict.trajectory
                except ConvergenceError:
                    status, iterations = "inconclusive", 0
                records.append({
                    "drop": drop, "gamma": gamma, "precoder": name,
                    "mode": mode, "status": status, "iterations": iterations,
                    "seconds": time.perf_counter() - start,
                })
                if spec.log_trajectories and trajectory:
                    trajectories.append({
                        "drop": drop, "gamma": gamma, "precoder": name,
                        "mode": mode, "trajectory": trajectory,
                    })
    return records, trajectories


def _aggregate(spec: ExperimentSpec, records: list) -> list:
    cells = []
    for gamma in spec.gammas:
        for name in spec.precoders:
            for mode in spec.modes:
                rows = [r for r in records
                        if r["gamma"] == gamma and r["precoder"] == name
                        and r["mode"] == mode]
                feasible = sum(r["status"] == "feasible" for r in rows)
                excluded = sum(r["status"] == "inconclusive" for r in rows)
                counted = len(rows) - excluded
                cells.append({
                    "gamma": gamma,
                    "rate": float(np.log2(1.0 + gamma)),
                    "precoder": name,
                    "mode": mode,
                    "feasible": feasible,
                    "drops": len(rows),
                    "excluded": excluded,
                    "rate_feasible": feasible / counted if counted else 0.0,
                    "mean_iterations": (sum(r["iterations"] for r in rows) / len(rows)
                                        if rows else 0.0),
                    "seconds": sum(r["seconds"] for r in rows),
                })
    return cells


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run every cell of the sweep across all drops (optionally in parallel)."""
    records, trajectories = [], []
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futures = [pool.submit(run_drop, spec, d) for d in range(spec.drops)]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [run_drop(spec, d) for d in range(spec.drops)]
    for recs, trajs in outcomes:      # merged deterministically by drop index
        records.extend(recs)
        trajectories.extend(trajs)
    spec_doc = {
        "geometry": geometry_to_dict(spec.geometry),
        "gammas": list(spec.gammas), "precoders": list(spec.precoders),
        "modes": list(spec.modes), "drops": spec.drops,
        "samples": spec.samples, "seed": spec.seed,
        "solver": asdict(spec.solver),
    }
    return ExperimentResult(spec=spec_doc, cells=_aggregate(spec, records),
                            records=records, trajectories=trajectories)


CSV_COLUMNS = ("gamma", "rate", "precoder", "mode", "feasible", "drops",
               "excluded", "rate_feasible")


def emit_results(result: ExperimentResult, csv_path, json_path=None) -> None:
    """Write the aggregated table (stable column order) and the full record."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for cell in result.cells:
            writer.writerow([cell[c] for c in CSV_COLUMNS])
    if json_path is not None:
        doc = {"spec": result.spec, "cells": result.cells,
               "records": result.records}
        with open(json_path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
