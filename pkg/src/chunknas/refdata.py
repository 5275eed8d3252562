"""Bundled data: reference measurement rows and the oracle-comparison suite."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .accel import EnergyCoeffs, fit_energy_coeffs
from .search_space import OpCounts


def _load_json(name: str) -> dict:
    path = resources.files("chunknas").joinpath("data", name)
    return json.loads(path.read_text())


@lru_cache(maxsize=None)
def reference_tables() -> dict:
    return _load_json("reference_results.json")


@lru_cache(maxsize=None)
def bundled_workloads() -> dict:
    return _load_json("workloads.json")


def op_row(tables: dict, dataset: str, method: str) -> dict:
    for row in tables["op_energy_rows"]:
        if row["dataset"] == dataset and row["method"] == method:
            return row
    raise KeyError(f"no op row for {dataset}/{method}")


def row_ops(row: dict) -> OpCounts:
    return OpCounts(row["mults_m"], row["shifts_m"], row["adds_m"])


def energy_fit_rows(tables: dict, groups: tuple[str, ...] = ("mult_based", "mult_free")):
    return [
        (row_ops(r), r["energy_mj"])
        for r in tables["op_energy_rows"]
        if r["group"] in groups
    ]


@lru_cache(maxsize=None)
def default_energy_coeffs() -> EnergyCoeffs:
    """Per-op energy calibrated by least squares on the reference rows."""
    return fit_energy_coeffs(energy_fit_rows(reference_tables()))
