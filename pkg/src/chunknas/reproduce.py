"""Executable consistency checks against the bundled reference measurements.

Four arithmetic suites (operation-count identities, throughput/FPS
identities, the per-op energy fit, resource accounting) plus the search
ablation suite on the bundled workloads. Each check reports a residual so
failures are diagnosable, and the whole harness never raises on a failed
check: failures are report content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from . import cosearch as cs
from .accel import EnergyCoeffs, HardwareBudget, chunk_lut, fit_energy_coeffs
from .refdata import energy_fit_rows, op_row, row_ops
from .search_space import LayerDescriptor, MacProfile, ops_from_macs

THROUGHPUT_TOL = 0.005
ENERGY_TOL = 0.02
ORACLE_RATIO_MIN = 0.95
NODE_RATIO_MIN = 10.0


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    residual: float | None = None

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        res = f" residual={self.residual:.4g}" if self.residual is not None else ""
        return f"[{mark}] {self.suite}: {self.name}{res} ({self.detail})"

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "residual": self.residual,
        }


def check_counting_identities(tables: dict) -> list[CheckResult]:
    """The fixed MAC-to-op counting rules reproduce the published op columns
    of the multiplication-free rows exactly (integer-scaled)."""
    out = []
    for fix in tables["counting_identities"]:
        ops = ops_from_macs(
            fix["conv_macs_m"] * 1e6,
            fix["shift_macs_m"] * 1e6,
            fix["adder_macs_m"] * 1e6,
        )
        ok = round(ops.adds * 100) == round(fix["expected_adds_m"] * 100)
        detail = f"adds {ops.adds:.2f} M vs {fix['expected_adds_m']:.2f} M"
        if "expected_shifts_m" in fix:
            ok = ok and round(ops.shifts * 100) == round(fix["expected_shifts_m"] * 100)
            detail += f", shifts {ops.shifts:.2f} M vs {fix['expected_shifts_m']:.2f} M"
        out.append(
            CheckResult("op-count", fix["name"], ok, detail,
                        abs(ops.adds - fix["expected_adds_m"]))
        )
    # Multiplication-based rows must satisfy adds == mults, shifts == 0.
    bad = [
        f"{r['dataset']}/{r['method']}"
        for r in tables["op_energy_rows"]
        if r["group"] == "mult_based" and (r["mults_m"] != r["adds_m"] or r["shifts_m"] != 0)
    ]
    out.append(
        CheckResult("op-count", "mult_based_rows_mults_equal_adds", not bad,
                    "violations: " + (", ".join(bad) if bad else "none"))
    )
    return out


def _latency_half_ulp(printed: str) -> float:
    """Half the last printed decimal place, in ms."""
    printed = printed.strip()
    decimals = len(printed.split(".")[1]) if "." in printed else 0
    return 0.5 * 10 ** (-decimals)


def check_throughput_fps(tables: dict, tol: float = THROUGHPUT_TOL) -> list[CheckResult]:
    """Throughput = ops/latency and FPS = 1/latency against the printed
    columns, honoring the rounding precision of the printed latency: the row
    passes if a latency inside the printed value's rounding interval
    reproduces both printed columns within ``tol``."""
    out = []
    for row in tables["hw_rows"]:
        ref = op_row(tables, row["dataset"], row.get("ops_ref", row["method"]))
        ops_m = ref["mults_m"] + ref["shifts_m"] + ref["adds_m"]
        lat = float(row["latency_ms"])
        half = _latency_half_ulp(row["latency_ms"])
        gops, fps = row["gops"], row["fps"]
        # ops_m [Mops] / latency [ms] gives GOPS directly.
        lo = max(lat - half, ops_m / (gops * (1 + tol)), 1000.0 / (fps * (1 + tol)))
        hi = min(lat + half, ops_m / (gops * (1 - tol)), 1000.0 / (fps * (1 - tol)))
        passed = lo <= hi
        mid_gops = ops_m / lat
        mid_fps = 1000.0 / lat
        residual = max(abs(mid_gops - gops) / gops, abs(mid_fps - fps) / fps)
        out.append(
            CheckResult(
                "throughput-fps",
                f"{row['dataset']}/{row['method']}",
                passed,
                f"ops {ops_m:.2f} M, lat {row['latency_ms']} ms -> "
                f"{mid_gops:.1f} GOPS vs {gops}, {mid_fps:.1f} FPS vs {fps}",
                residual,
            )
        )
    return out


def check_energy_fit(tables: dict, tol: float = ENERGY_TOL) -> tuple[list[CheckResult], EnergyCoeffs]:
    coeffs = fit_energy_coeffs(energy_fit_rows(tables))
    out = [
        CheckResult(
            "energy-fit", "coefficients", True,
            f"e_mult={coeffs.e_mult:.4g}, e_shift={coeffs.e_shift:.4g}, "
            f"e_add={coeffs.e_add:.4g} mJ/Mop",
        )
    ]
    for row in tables["op_energy_rows"]:
        if row["group"] == "cosearched":
            row_tol = tol  # held-out predictions
        elif row["group"] == "mult_based":
            row_tol = 0.01  # fit residuals on the multiplication-based rows
        else:
            continue
        pred = coeffs.energy_mj(row_ops(row))
        rel = abs(pred - row["energy_mj"]) / row["energy_mj"]
        out.append(
            CheckResult(
                "energy-fit",
                f"{row['dataset']}/{row['method']}",
                rel <= row_tol,
                f"predicted {pred:.4f} mJ vs {row['energy_mj']:.3f} mJ",
                rel,
            )
        )
    return out, coeffs


def _mac_profile_from_ops(row: dict) -> MacProfile:
    adder_macs = (row["adds_m"] - row["mults_m"] - row["shifts_m"]) / 2.0
    return MacProfile(
        int(round(row["mults_m"] * 1e6)),
        int(round(row["shifts_m"] * 1e6)),
        int(round(adder_macs * 1e6)),
    )


def check_resources(tables: dict, budget: HardwareBudget | None = None) -> list[CheckResult]:
    """Per-PE cost accounting plus the LUT range of MAC-balanced full-size
    configurations."""
    if budget is None:
        budget = HardwareBudget()
    rc = tables["resource_check"]
    pe_c = rc["pe_conv"]
    out = [
        CheckResult(
            "resources", "dsp_packing",
            math.ceil(0.5 * pe_c) == rc["expected_dsp"],
            f"{pe_c} conv PEs -> {math.ceil(0.5 * pe_c)} DSP (expect {rc['expected_dsp']})",
        )
    ]
    lo, hi = rc["klut_band"]
    for entry in rc["eq9_band_rows"]:
        row = op_row(tables, entry["dataset"], entry["method"])
        macs = _mac_profile_from_ops(row)
        _, _, pe_s, pe_a = cs.eq9_pe_init(macs, pe_c)
        klut = chunk_lut(pe_c, pe_s, pe_a, budget.lut_overhead) / 1000.0
        in_band = lo <= klut <= hi
        out.append(
            CheckResult(
                "resources",
                f"eq9_band/{entry['dataset']}/{entry['method']}",
                in_band == entry["in_band"],
                f"pe_s={pe_s}, pe_a={pe_a} -> {klut:.2f} kLUT "
                f"({'in' if in_band else 'out of'} [{lo}, {hi}], expected "
                f"{'in' if entry['in_band'] else 'out'})",
            )
        )
    return out


@dataclass
class WorkloadComparison:
    name: str
    thr_full: float
    thr_fine_only: float
    thr_coarse_only: float
    thr_oracle: float
    ratio: float
    exact_equal: bool
    nodes_search: int
    nodes_oracle: int
    node_ratio: float
    ordering_ok: bool
    equality_expected: bool
    ordering_expected: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "thr_full_gops": self.thr_full,
            "thr_fine_only_gops": self.thr_fine_only,
            "thr_coarse_only_gops": self.thr_coarse_only,
            "thr_oracle_gops": self.thr_oracle,
            "ratio_vs_oracle": self.ratio,
            "exact_equal": self.exact_equal,
            "nodes_search": self.nodes_search,
            "nodes_oracle": self.nodes_oracle,
            "node_ratio": self.node_ratio,
            "ordering_ok": self.ordering_ok,
            "equality_expected": self.equality_expected,
            "ordering_expected": self.ordering_expected,
        }


def compare_workloads(
    suite: dict,
    coeffs: EnergyCoeffs,
    node_cap: int = cs.DEFAULT_NODE_CAP,
) -> list[WorkloadComparison]:
    """Run full / fine-only / coarse-only search and the joint oracle on
    every workload of a suite file."""
    budget = HardwareBudget.from_dict(suite["budget"])
    grid = suite["grid"]
    results = []
    for wl in suite["workloads"]:
        layers = [LayerDescriptor.from_dict(d) for d in wl["layers"]]
        full = cs.search_accelerator_layers(layers, budget, coeffs)
        fine_only = cs.search_accelerator_layers(layers, budget, coeffs, coarse_phase=False)
        coarse_only = cs.search_accelerator_layers(layers, budget, coeffs, fine_phase=False)
        oracle = cs.oracle_layers(layers, budget, coeffs, grid, node_cap)
        thr = full.report.throughput_gops
        ordering_ok = (
            thr >= fine_only.report.throughput_gops - 1e-9
            and fine_only.report.throughput_gops >= coarse_only.report.throughput_gops - 1e-9
        )
        results.append(
            WorkloadComparison(
                name=wl["name"],
                thr_full=thr,
                thr_fine_only=fine_only.report.throughput_gops,
                thr_coarse_only=coarse_only.report.throughput_gops,
                thr_oracle=oracle.report.throughput_gops,
                ratio=thr / oracle.report.throughput_gops,
                exact_equal=thr == oracle.report.throughput_gops,
                nodes_search=full.stats.evaluated_nodes,
                nodes_oracle=oracle.stats.joint_space_nodes,
                node_ratio=oracle.stats.joint_space_nodes / full.stats.evaluated_nodes,
                ordering_ok=ordering_ok,
                equality_expected=wl.get("equality_expected", False),
                ordering_expected=wl.get("ordering_expected", True),
            )
        )
    return results


def check_ablation(comparisons: Sequence[WorkloadComparison]) -> list[CheckResult]:
    out = []
    for c in comparisons:
        if c.ordering_expected:
            out.append(
                CheckResult(
                    "ablation-ordering", c.name, c.ordering_ok,
                    f"full {c.thr_full:.2f} >= fine-only {c.thr_fine_only:.2f} "
                    f">= coarse-only {c.thr_coarse_only:.2f} GOPS",
                )
            )
        out.append(
            CheckResult(
                "oracle-ratio", c.name,
                c.ratio >= ORACLE_RATIO_MIN and c.node_ratio >= NODE_RATIO_MIN
                and (c.exact_equal or not c.equality_expected),
                f"ratio {c.ratio:.4f}, nodes {c.nodes_search} vs {c.nodes_oracle:.3g} "
                f"(x{c.node_ratio:.0f})" + (", exact equality" if c.exact_equal else ""),
                1.0 - c.ratio,
            )
        )
    return out


@dataclass
class Report:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [c.line() for c in self.checks]
        n_fail = sum(not c.passed for c in self.checks)
        out.append(f"{len(self.checks) - n_fail}/{len(self.checks)} checks passed")
        return out

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def run_reference_checks(
    tables: dict,
    workload_suite: dict | None = None,
    budget: HardwareBudget | None = None,
) -> Report:
    report = Report()
    report.checks += check_counting_identities(tables)
    report.checks += check_throughput_fps(tables)
    energy_checks, coeffs = check_energy_fit(tables)
    report.checks += energy_checks
    report.checks += check_resources(tables, budget)
    if workload_suite is not None:
        comparisons = compare_workloads(workload_suite, coeffs)
        report.checks += check_ablation(comparisons)
    return report
