"""Numpy forward engine for randomly initialized hybrid networks.

Only inference at init time is needed (zero-shot scoring), so layers carry
plain arrays: Gaussian weights for conv/adder, (sign, exponent) pairs for
shift layers. Every layer output runs through per-batch batch norm (no
affine) and ReLU except the last executed layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .search_space import (
    BlockInfo,
    LayerDescriptor,
    LayerType,
    NUM_HEAD_LAYERS,
    SearchSpace,
    SubNetwork,
    expand_blocks,
)

BN_EPS = 1e-5
SHIFT_P_MIN = -6
SHIFT_P_MAX = 1


class ShapeMismatch(ValueError):
    pass


class NonFiniteScore(ArithmeticError):
    """NaN/Inf appeared in activations; callers treat the candidate as worst."""


def quantize_shift(w, p_min: int = SHIFT_P_MIN, p_max: int = SHIFT_P_MAX):
    """Power-of-two quantization: s = sign(w), p = round(log2|w|) clamped.

    Zeros map to (+1, p_min), the most attenuating representable value.
    Accepts scalars or arrays; returns (sign, exponent) of matching shape.
    """
    w = np.asarray(w, dtype=np.float64)
    s = np.where(w < 0, -1, 1).astype(np.int8)
    mag = np.abs(w)
    with np.errstate(divide="ignore"):
        p = np.rint(np.log2(mag, where=mag > 0, out=np.full(mag.shape, float(p_min))))
    p = np.clip(p, p_min, p_max).astype(np.int32)
    if w.ndim == 0:
        return int(s), int(p)
    return s, p


def shift_weight_value(s, p) -> np.ndarray:
    return np.asarray(s, dtype=np.float32) * np.exp2(np.asarray(p, dtype=np.float32))


def _pad_same(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    _, _, h, w = x.shape
    out_h = -(-h // stride)
    out_w = -(-w // stride)
    pad_h = max((out_h - 1) * stride + kernel - h, 0)
    pad_w = max((out_w - 1) * stride + kernel - w, 0)
    if pad_h == 0 and pad_w == 0:
        return x
    return np.pad(
        x,
        ((0, 0), (0, 0), (pad_h // 2, pad_h - pad_h // 2), (pad_w // 2, pad_w - pad_w // 2)),
    )


def _patches(x: np.ndarray, kernel: int, stride: int):
    """Extract sliding windows: (B, C, H, W) -> (B, C, k*k, OH*OW) contiguous."""
    xp = _pad_same(x, kernel, stride)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    b, c, oh, ow, _, _ = win.shape
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c, kernel * kernel, oh * ow)
    return cols, oh, ow


@dataclass
class HybridLayer:
    desc: LayerDescriptor
    weight: np.ndarray              # float32; for shift layers equals sign * 2**exp
    shift_sign: np.ndarray | None = None
    shift_exp: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        d = self.desc
        if x.shape[1] != d.in_channels or x.shape[2] != d.in_h or x.shape[3] != d.in_w:
            raise ShapeMismatch(
                f"expected input (B, {d.in_channels}, {d.in_h}, {d.in_w}), got {x.shape}"
            )
        if d.op_type is LayerType.ADDER:
            return self._forward_adder(x)
        return self._forward_conv(x)

    def _forward_conv(self, x: np.ndarray) -> np.ndarray:
        d = self.desc
        if d.groups == 1:
            cols, oh, ow = _patches(x, d.kernel, d.stride)
            b = x.shape[0]
            wmat = self.weight.reshape(d.out_channels, -1)
            out = wmat @ cols.reshape(b, d.in_channels * d.kernel ** 2, oh * ow)
            return out.reshape(b, d.out_channels, oh, ow)
        if d.groups == d.in_channels and d.out_channels == d.in_channels:
            cols, oh, ow = _patches(x, d.kernel, d.stride)
            w = self.weight.reshape(d.out_channels, d.kernel ** 2)
            out = np.einsum("bckp,ck->bcp", cols, w, optimize=True)
            return out.reshape(x.shape[0], d.out_channels, oh, ow)
        raise NotImplementedError(f"unsupported groups={d.groups}")

    def _forward_adder(self, x: np.ndarray) -> np.ndarray:
        d = self.desc
        cols, oh, ow = _patches(x, d.kernel, d.stride)
        b = x.shape[0]
        if d.groups == 1:
            k = d.in_channels * d.kernel ** 2
            flat = np.ascontiguousarray(
                cols.reshape(b, k, oh * ow).transpose(0, 2, 1)
            ).reshape(b * oh * ow, k)
            wmat = self.weight.reshape(d.out_channels, k)
            dist = cdist(flat, wmat, metric="cityblock")
            out = -dist.reshape(b, oh * ow, d.out_channels).transpose(0, 2, 1)
            return out.astype(x.dtype).reshape(b, d.out_channels, oh, ow)
        if d.groups == d.in_channels and d.out_channels == d.in_channels:
            w = self.weight.reshape(d.out_channels, d.kernel ** 2)
            diff = cols - w[None, :, :, None]
            np.abs(diff, out=diff)
            out = -diff.sum(axis=2)
            return out.reshape(b, d.out_channels, oh, ow)
        raise NotImplementedError(f"unsupported groups={d.groups}")


@dataclass
class HybridNet:
    layers: list[HybridLayer]
    blocks: list[BlockInfo]
    input_resolution: int
    num_head_layers: int = NUM_HEAD_LAYERS
    bn_sample_var: list[np.ndarray] = field(default_factory=list)

    @property
    def in_channels(self) -> int:
        return self.layers[0].desc.in_channels

    def feature_forward(self, x: np.ndarray, record_stats: bool = False) -> np.ndarray:
        """Run all layers before the classifier head (the zero-shot extractor)."""
        return self._run(x, len(self.layers) - self.num_head_layers, record_stats)

    def forward(self, x: np.ndarray, record_stats: bool = False) -> np.ndarray:
        feats = self._run(x, len(self.layers) - self.num_head_layers, record_stats,
                          final_is_raw=False)
        # Head: MBPool conv at feature resolution, global pool, classifier.
        head = self.layers[-self.num_head_layers:]
        y = head[0].forward(feats)
        y = _batch_norm(y, None)
        y = np.maximum(y, 0.0)
        y = y.mean(axis=(2, 3), keepdims=True)
        return head[1].forward(y)

    def _run(self, x: np.ndarray, n_layers: int, record_stats: bool,
             final_is_raw: bool = True) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels \
                or x.shape[2] != self.input_resolution or x.shape[3] != self.input_resolution:
            raise ShapeMismatch(
                f"expected (B, {self.in_channels}, {self.input_resolution}, "
                f"{self.input_resolution}), got {x.shape}"
            )
        if record_stats:
            self.bn_sample_var = []
        if x.dtype not in (np.float32, np.float64):
            x = x.astype(np.float32)
        block_starts = {b.first_layer: b for b in self.blocks}
        residual_stack: BlockInfo | None = None
        saved = None
        for idx in range(n_layers):
            blk = block_starts.get(idx)
            if blk is not None and blk.residual_channels:
                residual_stack = blk
                saved = x
            x = self.layers[idx].forward(x)
            is_last = idx == n_layers - 1
            if not (is_last and final_is_raw):
                stats = self.bn_sample_var if record_stats else None
                x = _batch_norm(x, stats)
                x = np.maximum(x, 0.0)
            if residual_stack is not None and idx == residual_stack.first_layer + residual_stack.num_layers - 1:
                x = x + saved
                residual_stack = None
                saved = None
        if not np.all(np.isfinite(x)):
            raise NonFiniteScore("non-finite activations")
        return x


def _batch_norm(x: np.ndarray, sample_var_sink: list | None) -> np.ndarray:
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    if sample_var_sink is not None:
        # Per-sample spatial variance per channel, pre-normalization: (B, C).
        sample_var_sink.append(x.var(axis=(2, 3)).astype(np.float64))
    return (x - mean) / np.sqrt(var + BN_EPS)


def instantiate(
    net: SubNetwork,
    space: SearchSpace,
    seed: int,
    p_min: int = SHIFT_P_MIN,
    p_max: int = SHIFT_P_MAX,
) -> HybridNet:
    """Expand a genome and draw He-style N(0, 2/fan_in) weights; shift-layer
    weights are then snapped to signed powers of two."""
    layers_desc, blocks = expand_blocks(space, net)
    rng = np.random.default_rng(seed)
    layers = []
    for d in layers_desc:
        fan_in = (d.in_channels // d.groups) * d.kernel ** 2
        shape = (d.out_channels, d.in_channels // d.groups, d.kernel, d.kernel)
        w = rng.standard_normal(shape, dtype=np.float32) * np.float32(np.sqrt(2.0 / fan_in))
        if d.op_type is LayerType.SHIFT:
            s, p = quantize_shift(w, p_min, p_max)
            layers.append(HybridLayer(d, shift_weight_value(s, p), s, p))
        else:
            layers.append(HybridLayer(d, w.astype(np.float32)))
    return HybridNet(layers=layers, blocks=blocks, input_resolution=space.input_resolution)
