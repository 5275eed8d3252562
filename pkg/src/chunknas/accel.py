"""Analytical cost model of the three-chunk accelerator.

Each chunk (conv / shift / adder) is a PE array fed from a shared global
buffer; a layer's cycle count is max(compute, memory) under double buffering.
Compute cycles follow the tiled-loop model: number of tiles times
ceil(tile work / PE count). Memory cycles charge DRAM traffic under the
stationary-operand reuse rule of the chosen loop order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from .search_space import LayerDescriptor, LayerType, OpCounts, count_ops

BRAM_BITS = 36864  # one 36 Kb block

LUT_PER_PE = {LayerType.CONV: 37, LayerType.SHIFT: 34, LayerType.ADDER: 29}
DSP_PER_CONV_PE = 0.5  # two 8-bit multiplications packed per DSP


class TileExceedsBuffer(ValueError):
    pass


class EmptyFeasibleSet(ValueError):
    pass


class InfeasibleBudget(ValueError):
    pass


class SingularSystem(ValueError):
    pass


class LoopOrder(IntEnum):
    """Canonical ordering doubles as the tie-break preference."""

    WS = 0  # weights resident per tile
    OS = 1  # output tile accumulated in place
    IS = 2  # input tile resident
    RS = 3  # filter rows resident, input rows slide

    @classmethod
    def from_name(cls, name: "str | int | LoopOrder") -> "LoopOrder":
        if isinstance(name, LoopOrder):
            return name
        if isinstance(name, int):
            return cls(name)
        return cls[name.strip().upper()]


@dataclass(frozen=True)
class Dataflow:
    loop_order: LoopOrder
    tiling: tuple[int, int, int, int, int]  # (t_n, t_cin, t_cout, t_h, t_w)

    def __post_init__(self):
        object.__setattr__(self, "loop_order", LoopOrder.from_name(self.loop_order))
        t = tuple(int(v) for v in self.tiling)
        if len(t) != 5 or min(t) < 1:
            raise ValueError(f"tiling must be five positive ints, got {self.tiling}")
        object.__setattr__(self, "tiling", t)

    def to_dict(self) -> dict:
        return {"loop_order": self.loop_order.name, "tiling": list(self.tiling)}

    @classmethod
    def from_dict(cls, d: dict) -> "Dataflow":
        return cls(LoopOrder.from_name(d["loop_order"]), tuple(d["tiling"]))


@dataclass(frozen=True)
class ChunkConfig:
    chunk_kind: LayerType
    pe_count: int
    dataflow: Dataflow

    def __post_init__(self):
        object.__setattr__(self, "chunk_kind", LayerType.from_code(self.chunk_kind))
        if self.pe_count < 1:
            raise ValueError("pe_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "chunk_kind": self.chunk_kind.short,
            "pe_count": self.pe_count,
            "dataflow": self.dataflow.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkConfig":
        return cls(LayerType.from_code(d["chunk_kind"]), d["pe_count"],
                   Dataflow.from_dict(d["dataflow"]))


@dataclass(frozen=True)
class AcceleratorConfig:
    chunk_c: ChunkConfig
    chunk_s: ChunkConfig
    chunk_a: ChunkConfig
    gb_bytes: int

    def assert_fits(self, budget: "HardwareBudget") -> None:
        dsp, lut, _ = resource_usage(self, budget.lut_overhead)
        if dsp > budget.dsp_total:
            raise InfeasibleBudget(f"{dsp} DSP exceeds the {budget.dsp_total} available")
        if lut > budget.lut_total:
            raise InfeasibleBudget(f"{lut} LUT exceeds the {budget.lut_total} available")
        if self.gb_bytes > budget.gb_bytes_max:
            raise InfeasibleBudget(
                f"{self.gb_bytes} B buffer exceeds the {budget.gb_bytes_max} B of block RAM"
            )

    def chunk_for(self, op_type: LayerType) -> ChunkConfig:
        return {
            LayerType.CONV: self.chunk_c,
            LayerType.SHIFT: self.chunk_s,
            LayerType.ADDER: self.chunk_a,
        }[op_type]

    def chunks(self) -> tuple[ChunkConfig, ChunkConfig, ChunkConfig]:
        return (self.chunk_c, self.chunk_s, self.chunk_a)

    def to_dict(self) -> dict:
        return {
            "chunk_c": self.chunk_c.to_dict(),
            "chunk_s": self.chunk_s.to_dict(),
            "chunk_a": self.chunk_a.to_dict(),
            "gb_bytes": self.gb_bytes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcceleratorConfig":
        return cls(
            ChunkConfig.from_dict(d["chunk_c"]),
            ChunkConfig.from_dict(d["chunk_s"]),
            ChunkConfig.from_dict(d["chunk_a"]),
            d["gb_bytes"],
        )


@dataclass(frozen=True)
class HardwareBudget:
    """Platform resources; defaults model the Kria KV260 at 200 MHz."""

    dsp_total: int = 1248
    lut_total: int = 117_000
    bram_bits_total: int = 288 * BRAM_BITS
    dram_bandwidth: float = 8.0  # bytes per cycle
    frequency_hz: float = 200e6
    act_bits: int = 8
    conv_w_bits: int = 8
    shift_w_bits: int = 4
    adder_w_bits: int = 8
    conv_out_bits: int = 15
    shift_out_bits: int = 15
    adder_out_bits: int = 9
    dsp_reserve_frac: float = 0.437  # share of DSPs granted to the conv chunk
    lut_overhead: int = 11_000      # control/interconnect calibration constant

    def __post_init__(self):
        if min(self.dsp_total, self.lut_total, self.bram_bits_total) <= 0:
            raise ValueError("resource counts must be positive")
        if self.dram_bandwidth <= 0 or self.frequency_hz <= 0:
            raise ValueError("bandwidth and frequency must be positive")

    @property
    def gb_bytes_max(self) -> int:
        return self.bram_bits_total // 8

    @property
    def usable_dsp(self) -> int:
        return int(self.dsp_total * self.dsp_reserve_frac)

    def weight_bits(self, op_type: LayerType) -> int:
        return {
            LayerType.CONV: self.conv_w_bits,
            LayerType.SHIFT: self.shift_w_bits,
            LayerType.ADDER: self.adder_w_bits,
        }[op_type]

    def out_bits(self, op_type: LayerType) -> int:
        return {
            LayerType.CONV: self.conv_out_bits,
            LayerType.SHIFT: self.shift_out_bits,
            LayerType.ADDER: self.adder_out_bits,
        }[op_type]

    def to_dict(self) -> dict:
        return {
            "dsp_total": self.dsp_total,
            "lut_total": self.lut_total,
            "bram_bits_total": self.bram_bits_total,
            "dram_bandwidth_bytes_per_cycle": self.dram_bandwidth,
            "frequency_hz": self.frequency_hz,
            "act_bits": self.act_bits,
            "conv_w_bits": self.conv_w_bits,
            "shift_w_bits": self.shift_w_bits,
            "adder_w_bits": self.adder_w_bits,
            "conv_out_bits": self.conv_out_bits,
            "shift_out_bits": self.shift_out_bits,
            "adder_out_bits": self.adder_out_bits,
            "dsp_reserve_frac": self.dsp_reserve_frac,
            "lut_overhead": self.lut_overhead,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareBudget":
        defaults = cls()
        return cls(
            dsp_total=d.get("dsp_total", defaults.dsp_total),
            lut_total=d.get("lut_total", defaults.lut_total),
            bram_bits_total=d.get("bram_bits_total", defaults.bram_bits_total),
            dram_bandwidth=d.get("dram_bandwidth_bytes_per_cycle", defaults.dram_bandwidth),
            frequency_hz=d.get("frequency_hz", defaults.frequency_hz),
            act_bits=d.get("act_bits", defaults.act_bits),
            conv_w_bits=d.get("conv_w_bits", defaults.conv_w_bits),
            shift_w_bits=d.get("shift_w_bits", defaults.shift_w_bits),
            adder_w_bits=d.get("adder_w_bits", defaults.adder_w_bits),
            conv_out_bits=d.get("conv_out_bits", defaults.conv_out_bits),
            shift_out_bits=d.get("shift_out_bits", defaults.shift_out_bits),
            adder_out_bits=d.get("adder_out_bits", defaults.adder_out_bits),
            dsp_reserve_frac=d.get("dsp_reserve_frac", defaults.dsp_reserve_frac),
            lut_overhead=d.get("lut_overhead", defaults.lut_overhead),
        )


@dataclass(frozen=True)
class EnergyCoeffs:
    """mJ per million operations."""

    e_mult: float
    e_shift: float
    e_add: float

    def __post_init__(self):
        if min(self.e_mult, self.e_shift, self.e_add) <= 0:
            raise ValueError("energy coefficients must be positive")
        if self.e_mult <= self.e_add:
            raise ValueError("a multiplication must cost more than an addition")

    def energy_mj(self, ops: OpCounts) -> float:
        return self.e_mult * ops.mults + self.e_shift * ops.shifts + self.e_add * ops.adds

    def to_dict(self) -> dict:
        return {"e_mult": self.e_mult, "e_shift": self.e_shift, "e_add": self.e_add}

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyCoeffs":
        return cls(d["e_mult"], d["e_shift"], d["e_add"])


def fit_energy_coeffs(rows: Sequence[tuple[OpCounts, float]]) -> EnergyCoeffs:
    """Least-squares fit of energy = e_mult*mults + e_shift*shifts + e_add*adds."""
    if len(rows) < 3:
        raise SingularSystem(f"need at least 3 rows, got {len(rows)}")
    a = np.array([[ops.mults, ops.shifts, ops.adds] for ops, _ in rows], dtype=np.float64)
    b = np.array([e for _, e in rows], dtype=np.float64)
    if np.linalg.matrix_rank(a) < 3:
        raise SingularSystem("op-count rows are rank deficient")
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    return EnergyCoeffs(float(coef[0]), float(coef[1]), float(coef[2]))


def resource_usage(cfg: AcceleratorConfig, lut_overhead: int = 0) -> tuple[int, int, float]:
    """(dsp, lut, bram_blocks) for a configuration.

    DSP packing halves the conv PE count; LUTs are linear in PE counts plus a
    fixed overhead; BRAM is reported fractionally in 36 Kb blocks.
    """
    dsp = math.ceil(DSP_PER_CONV_PE * cfg.chunk_c.pe_count)
    lut = (
        LUT_PER_PE[LayerType.CONV] * cfg.chunk_c.pe_count
        + LUT_PER_PE[LayerType.SHIFT] * cfg.chunk_s.pe_count
        + LUT_PER_PE[LayerType.ADDER] * cfg.chunk_a.pe_count
        + lut_overhead
    )
    bram_blocks = cfg.gb_bytes * 8 / BRAM_BITS
    return dsp, lut, bram_blocks


def chunk_lut(pe_c: int, pe_s: int, pe_a: int, lut_overhead: int = 0) -> int:
    return (
        LUT_PER_PE[LayerType.CONV] * pe_c
        + LUT_PER_PE[LayerType.SHIFT] * pe_s
        + LUT_PER_PE[LayerType.ADDER] * pe_a
        + lut_overhead
    )


# ---------------------------------------------------------------------------
# Tiled-loop latency model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _LayerGeom:
    """Static per-layer quantities used by the latency model."""

    ci: int       # reduction channels (in_channels / groups)
    co: int
    h: int        # output rows
    w: int
    kernel: int
    stride: int
    dense: bool   # groups == 1
    in_ch_total: int
    act_bytes: float
    w_bytes: float
    out_bytes: float

    @property
    def macs(self) -> int:
        return self.ci * self.co * self.kernel ** 2 * self.h * self.w


def _geom(layer: LayerDescriptor, budget: HardwareBudget) -> _LayerGeom:
    return _LayerGeom(
        ci=layer.in_channels // layer.groups,
        co=layer.out_channels,
        h=layer.out_h,
        w=layer.out_w,
        kernel=layer.kernel,
        stride=layer.stride,
        dense=layer.groups == 1,
        in_ch_total=layer.in_channels,
        act_bytes=budget.act_bits / 8,
        w_bytes=budget.weight_bits(layer.op_type) / 8,
        out_bytes=budget.out_bits(layer.op_type) / 8,
    )


def _clamp_tiles(g: _LayerGeom, tiling):
    _, t_ci, t_co, t_h, t_w = tiling
    return (
        np.minimum(t_ci, g.ci),
        np.minimum(t_co, g.co),
        np.minimum(t_h, g.h),
        np.minimum(t_w, g.w),
    )


def _tile_bytes(g: _LayerGeom, tci, tco, th, tw):
    """(input, weight, output) bytes of one live tile set."""
    in_h = (th - 1) * g.stride + g.kernel
    in_w = (tw - 1) * g.stride + g.kernel
    in_ch = tci if g.dense else tco
    in_bytes = in_ch * in_h * in_w * g.act_bytes
    w_bytes = tco * tci * g.kernel ** 2 * g.w_bytes
    out_bytes = tco * th * tw * g.out_bytes
    return in_bytes, w_bytes, out_bytes


def _working_set(g: _LayerGeom, tci, tco, th, tw):
    in_b, w_b, o_b = _tile_bytes(g, tci, tco, th, tw)
    return 2.0 * (in_b + w_b + o_b)  # double buffered


def _ceil_div(a, b):
    return -(-a // b)


def _layer_cycles(g: _LayerGeom, tci, tco, th, tw, pe_count: int, bandwidth: float):
    """Cycle counts for all four loop orders; returns (compute, {order: cycles})."""
    n_ci = _ceil_div(g.ci, tci)
    n_co = _ceil_div(g.co, tco)
    n_h = _ceil_div(g.h, th)
    n_w = _ceil_div(g.w, tw)
    tiles = n_ci * n_co * n_h * n_w
    tile_macs = tci * tco * th * tw * g.kernel ** 2
    compute = tiles * _ceil_div(tile_macs, pe_count)

    in_b, w_b, o_b = _tile_bytes(g, tci, tco, th, tw)
    dist_w = n_co * n_ci
    dist_o = n_co * n_h * n_w
    dist_i = (n_ci if g.dense else n_co) * n_h * n_w
    traffic = {
        LoopOrder.WS: dist_w * w_b + tiles * (in_b + o_b),
        LoopOrder.OS: dist_o * o_b + tiles * (in_b + w_b),
        LoopOrder.IS: dist_i * in_b + tiles * (w_b + o_b),
        LoopOrder.RS: dist_w * w_b + dist_i * in_b + tiles * o_b,
    }
    cycles = {}
    for order, t in traffic.items():
        mem = np.ceil(t / bandwidth)
        cycles[order] = np.maximum(compute, mem)
    return compute, cycles


def layer_latency(
    layer: LayerDescriptor,
    chunk: ChunkConfig,
    gb_bytes: int,
    budget: HardwareBudget,
) -> int:
    """Cycles to run one layer on its chunk: max(compute, memory)."""
    if layer.op_type is not chunk.chunk_kind:
        raise ValueError(f"layer type {layer.op_type} does not match chunk {chunk.chunk_kind}")
    g = _geom(layer, budget)
    tci, tco, th, tw = _clamp_tiles(g, chunk.dataflow.tiling)
    ws = _working_set(g, tci, tco, th, tw)
    if ws > gb_bytes:
        raise TileExceedsBuffer(
            f"tile working set {ws:.0f} B exceeds buffer {gb_bytes} B"
        )
    _, cycles = _layer_cycles(g, tci, tco, th, tw, chunk.pe_count, budget.dram_bandwidth)
    return int(cycles[chunk.dataflow.loop_order])


def _pow2_ladder(limit: int) -> list[int]:
    vals = []
    v = 1
    while v < limit:
        vals.append(v)
        v *= 2
    vals.append(limit)
    return sorted(set(vals))


def tiling_candidates(layers: Sequence[LayerDescriptor]) -> list[tuple[int, ...]]:
    """Power-of-two ladder per dimension up to the assigned set's max dims."""
    if not layers:
        return [(1, 1, 1, 1, 1)]
    ci = max(l.in_channels // l.groups for l in layers)
    co = max(l.out_channels for l in layers)
    h = max(l.out_h for l in layers)
    w = max(l.out_w for l in layers)
    out = []
    for tci in _pow2_ladder(ci):
        for tco in _pow2_ladder(co):
            for th in _pow2_ladder(h):
                for tw in _pow2_ladder(w):
                    out.append((1, tci, tco, th, tw))
    return out


@dataclass
class ChunkEval:
    """Best dataflow for (chunk kind, layer set, pe) plus search accounting."""

    dataflow: Dataflow
    cycles: int
    min_gb: int
    nodes: int
    feasible_dataflows: int


def evaluate_dataflows(
    kind: LayerType,
    layers: Sequence[LayerDescriptor],
    pe_count: int,
    gb_bytes: int,
    budget: HardwareBudget,
) -> ChunkEval:
    """Vectorized sweep of all (loop order, tiling) dataflows for one chunk.

    Selection key: total cycles, then smaller buffer demand, then the
    canonical loop-order preference WS < OS < IS < RS, then lexicographic
    tiling. Raises EmptyFeasibleSet when no tiling fits the buffer.
    """
    if not layers:
        return ChunkEval(Dataflow(LoopOrder.WS, (1, 1, 1, 1, 1)), 0, 0, 1, 4)
    for layer in layers:
        if layer.op_type is not kind:
            raise ValueError(f"layer {layer} assigned to chunk {kind}")
    tilings = tiling_candidates(layers)
    arr = np.asarray(tilings, dtype=np.int64)  # (A, 5)
    t_ci, t_co, t_h, t_w = arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4]
    a = len(tilings)
    total = {order: np.zeros(a, dtype=np.float64) for order in LoopOrder}
    feasible = np.ones(a, dtype=bool)
    ws_max = np.zeros(a, dtype=np.float64)
    for layer in layers:
        g = _geom(layer, budget)
        tci = np.minimum(t_ci, g.ci)
        tco = np.minimum(t_co, g.co)
        th = np.minimum(t_h, g.h)
        tw = np.minimum(t_w, g.w)
        ws = _working_set(g, tci, tco, th, tw)
        feasible &= ws <= gb_bytes
        ws_max = np.maximum(ws_max, ws)
        _, cycles = _layer_cycles(g, tci, tco, th, tw, pe_count, budget.dram_bandwidth)
        for order in LoopOrder:
            total[order] += cycles[order]
    nodes = 4 * a
    if not feasible.any():
        raise EmptyFeasibleSet(
            f"no tiling fits a {gb_bytes} B buffer for chunk {kind.short}"
        )
    best = None
    n_feasible = int(feasible.sum()) * 4
    for order in LoopOrder:
        cyc = np.where(feasible, total[order], np.inf)
        idx = int(np.argmin(cyc))
        cand_cycles = cyc[idx]
        # Refine ties within this order deterministically.
        tied = np.flatnonzero(cyc == cand_cycles)
        key = min((ws_max[i], tuple(arr[i])) for i in tied)
        entry = (float(cand_cycles), key[0], int(order), key[1])
        if best is None or entry < best:
            best = entry
    cycles_v, ws_v, order_idx, tiling = best
    return ChunkEval(
        dataflow=Dataflow(LoopOrder(order_idx), tiling),
        cycles=int(cycles_v),
        min_gb=math.ceil(ws_v),
        nodes=nodes,
        feasible_dataflows=n_feasible,
    )


def enumerate_dataflows(
    chunk_kind: LayerType,
    layers: Sequence[LayerDescriptor],
    pe_count: int,
    gb_bytes: int,
    budget: HardwareBudget,
) -> list[Dataflow]:
    """All feasible dataflows in canonical order (loop order, then tiling)."""
    tilings = tiling_candidates(layers)
    feasible_tilings = []
    for t in tilings:
        ok = True
        for layer in layers:
            g = _geom(layer, budget)
            tci, tco, th, tw = _clamp_tiles(g, t)
            if _working_set(g, tci, tco, th, tw) > gb_bytes:
                ok = False
                break
        if ok:
            feasible_tilings.append(t)
    if not feasible_tilings:
        raise EmptyFeasibleSet(f"no tiling fits a {gb_bytes} B buffer")
    return [
        Dataflow(order, t)
        for order in LoopOrder
        for t in feasible_tilings
    ]


def min_gb_size(cfg: AcceleratorConfig, layers: Sequence[LayerDescriptor],
                budget: HardwareBudget) -> int:
    """Smallest buffer (bytes) that admits every assigned layer's tile set."""
    worst = 0.0
    for layer in layers:
        chunk = cfg.chunk_for(layer.op_type)
        g = _geom(layer, budget)
        tci, tco, th, tw = _clamp_tiles(g, chunk.dataflow.tiling)
        worst = max(worst, _working_set(g, tci, tco, th, tw))
    return math.ceil(worst)


@dataclass(frozen=True)
class PerfReport:
    latency_s: float
    throughput_gops: float
    fps: float
    gops_per_klut: float
    gops_per_dsp: float
    energy_mj: float
    dsp: int
    lut: int
    bram_blocks: float
    per_chunk_time_s: tuple[float, float, float]
    ops: OpCounts

    def validate(self) -> None:
        total_ops = self.ops.total * 1e6
        assert abs(self.throughput_gops * self.latency_s * 1e9 - total_ops) <= 1e-6 * total_ops + 1e-9
        assert abs(self.fps * self.latency_s - 1.0) <= 1e-9
        assert abs(self.latency_s - max(self.per_chunk_time_s)) <= 1e-15

    def to_dict(self) -> dict:
        return {
            "latency_s": self.latency_s,
            "throughput_gops": self.throughput_gops,
            "fps": self.fps,
            "gops_per_klut": self.gops_per_klut,
            "gops_per_dsp": self.gops_per_dsp,
            "energy_mj": self.energy_mj,
            "dsp": self.dsp,
            "lut": self.lut,
            "bram_blocks": self.bram_blocks,
            "per_chunk_time_s": list(self.per_chunk_time_s),
            "ops_m": {"mults": self.ops.mults, "shifts": self.ops.shifts, "adds": self.ops.adds},
        }


def chunk_cycle_totals(
    layers: Sequence[LayerDescriptor],
    cfg: AcceleratorConfig,
    budget: HardwareBudget,
) -> dict[LayerType, int]:
    totals = {LayerType.CONV: 0, LayerType.SHIFT: 0, LayerType.ADDER: 0}
    for layer in layers:
        chunk = cfg.chunk_for(layer.op_type)
        totals[layer.op_type] += layer_latency(layer, chunk, cfg.gb_bytes, budget)
    return totals


def pipeline_perf(
    layers: Sequence[LayerDescriptor],
    assignment: Sequence[LayerType] | None,
    cfg: AcceleratorConfig,
    budget: HardwareBudget,
    coeffs: EnergyCoeffs,
) -> PerfReport:
    """Steady-state pipeline report: the per-image interval is the largest
    per-chunk busy time, since each chunk streams its own layer set."""
    if assignment is not None:
        if len(assignment) != len(layers):
            raise ValueError("assignment length mismatch")
        for layer, kind in zip(layers, assignment):
            if LayerType.from_code(kind) is not layer.op_type:
                raise ValueError("assignment must map each layer to its type's chunk")
    totals = chunk_cycle_totals(layers, cfg, budget)
    times = tuple(
        totals[k] / budget.frequency_hz
        for k in (LayerType.CONV, LayerType.SHIFT, LayerType.ADDER)
    )
    latency = max(times)
    if latency <= 0:
        raise ValueError("empty workload: no cycles on any chunk")
    ops = count_ops(layers)
    thr = ops.total * 1e6 / latency / 1e9
    dsp, lut, bram = resource_usage(cfg, budget.lut_overhead)
    report = PerfReport(
        latency_s=latency,
        throughput_gops=thr,
        fps=1.0 / latency,
        gops_per_klut=thr / (lut / 1000.0),
        gops_per_dsp=thr / dsp,
        energy_mj=coeffs.energy_mj(ops),
        dsp=dsp,
        lut=lut,
        bram_blocks=bram,
        per_chunk_time_s=times,
        ops=ops,
    )
    report.validate()
    return report
