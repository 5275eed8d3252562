"""Training-free architecture scoring.

Two complementary proxies are combined by rank: a connectivity score computed
analytically from channel topology (trainability) and a perturbation-
sensitivity score measured on a randomly initialized network (expressivity).
Rank 0 is best on each metric, so lower combined values are better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import BN_EPS, HybridNet, NonFiniteScore
from .search_space import SearchSpace, SubNetwork, expand_blocks

ZEN_ALPHA = 0.01
ZEN_BATCH = 16
ZEN_REPEATS = 1


class AllTied(ValueError):
    """Rank correlation is undefined: every pair is tied in x or in y."""


@dataclass(frozen=True)
class ZeroShotScore:
    nn_degree: float
    zen_score: float
    combined_rank: int


def nn_degree(space: SearchSpace, net: SubNetwork) -> float:
    """Connectivity score over IRB blocks.

    Per block: (sum of layer output channels) / (layer count)
    + (residual channels) / (sum of layer input channels). No tensors needed;
    the value depends only on channel topology.
    """
    layers, blocks = expand_blocks(space, net)
    total = 0.0
    for blk in blocks:
        members = layers[blk.first_layer : blk.first_layer + blk.num_layers]
        out_sum = sum(l.out_channels for l in members)
        in_sum = sum(l.in_channels for l in members)
        total += out_sum / blk.num_layers
        if blk.residual_channels:
            total += blk.residual_channels / in_sum
    return total


def nn_degree_terms(out_channels: Sequence[int], in_channels: Sequence[int],
                    residual: int) -> float:
    """Single-block form, exposed for fixture tests."""
    if len(out_channels) != len(in_channels) or not out_channels:
        raise ValueError("need equal, non-empty channel lists")
    term = sum(out_channels) / len(out_channels)
    if residual:
        term += residual / sum(in_channels)
    return term


def zen_score(
    net: HybridNet,
    alpha: float = ZEN_ALPHA,
    batch: int = ZEN_BATCH,
    repeats: int = ZEN_REPEATS,
    rng: np.random.Generator | None = None,
) -> float:
    """Gaussian-complexity score of the feature extractor.

    log E||f(x) - f(x + alpha*eps)||_F over fresh Gaussian draws, plus the
    batch-norm term: for every normalization layer i and batch sample k,
    log sqrt(mean_j var[k, j] + eps). The epsilon matches the BN stabilizer
    and keeps 1x1 feature maps finite.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if batch < 2:
        raise ValueError("batch must be >= 2")
    if rng is None:
        rng = np.random.default_rng(0)
    res = net.input_resolution
    draws = [
        (
            rng.standard_normal((batch, net.in_channels, res, res), dtype=np.float32),
            rng.standard_normal((batch, net.in_channels, res, res), dtype=np.float32),
        )
        for _ in range(repeats)
    ]
    score = _zen_from_draws(net, draws, alpha)
    if score is None:
        # Deep stacks of contractive layers can shrink the perturbation
        # below float32 resolution; redo the same draws in float64.
        draws64 = [(x.astype(np.float64), e.astype(np.float64)) for x, e in draws]
        score = _zen_from_draws(net, draws64, alpha)
    if score is None:
        raise NonFiniteScore("perturbation response is exactly zero")
    return score


def _zen_from_draws(net: HybridNet, draws, alpha: float) -> float | None:
    """Score for fixed input draws; None when the delta underflows to zero."""
    deltas = []
    bn_term = None
    for r, (x, eps) in enumerate(draws):
        y0 = net.feature_forward(x, record_stats=(r == 0))
        if r == 0:
            bn_term = _bn_log_term(net.bn_sample_var)
        y1 = net.feature_forward(x + alpha * eps)
        deltas.append(float(np.linalg.norm((y0 - y1).ravel())))
    mean_delta = float(np.mean(deltas))
    if not math.isfinite(mean_delta) or not math.isfinite(bn_term):
        raise NonFiniteScore(f"non-finite score terms ({mean_delta}, {bn_term})")
    if mean_delta <= 0:
        return None
    score = math.log(mean_delta) + bn_term
    if not math.isfinite(score):
        raise NonFiniteScore(f"non-finite score {score}")
    return score


def zen_perturbation_term(net: HybridNet, alpha: float, batch: int,
                          rng: np.random.Generator) -> float:
    """First term only (no BN statistics), for linearity fixtures."""
    res = net.input_resolution
    x = rng.standard_normal((batch, net.in_channels, res, res), dtype=np.float32)
    eps = rng.standard_normal((batch, net.in_channels, res, res), dtype=np.float32)
    y0 = net.feature_forward(x)
    y1 = net.feature_forward(x + alpha * eps)
    return math.log(float(np.linalg.norm((y0 - y1).ravel())))


def _bn_log_term(sample_vars: list[np.ndarray]) -> float:
    total = 0.0
    for var in sample_vars:
        # var has shape (batch, channels); one log term per sample.
        total += float(np.sum(0.5 * np.log(var.mean(axis=1) + BN_EPS)))
    return total


def rank_of(value: float, population: Sequence[float]) -> int:
    """Number of strictly greater scores; 0 means best. Ties share a rank."""
    return sum(1 for v in population if v > value)


def combined_score(
    candidate: tuple[float, float],
    population: Sequence[tuple[float, float]],
) -> int:
    """Rank-sum of (nn_degree, zen_score) within a population; lower is better."""
    nn_vals = [p[0] for p in population]
    zen_vals = [p[1] for p in population]
    return rank_of(candidate[0], nn_vals) + rank_of(candidate[1], zen_vals)


def combined_ranks(scores: Sequence[tuple[float, float]]) -> list[int]:
    """Combined rank for every member of a population (vector form)."""
    nn_vals = np.asarray([s[0] for s in scores], dtype=np.float64)
    zen_vals = np.asarray([s[1] for s in scores], dtype=np.float64)
    nn_rank = (nn_vals[None, :] > nn_vals[:, None]).sum(axis=1)
    zen_rank = (zen_vals[None, :] > zen_vals[:, None]).sum(axis=1)
    return [int(r) for r in nn_rank + zen_rank]


def kendall_tau(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Tie-corrected tau-b: (C - D) / sqrt((C+D+Tx) * (C+D+Ty))."""
    if len(xs) != len(ys):
        raise ValueError("sequences must have equal length")
    if len(xs) < 2:
        raise ValueError("need at least two observations")
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), k=1)
    prod = dx[iu] * dy[iu]
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))
    ties_x = int(np.sum((dx[iu] == 0) & (dy[iu] != 0)))
    ties_y = int(np.sum((dy[iu] == 0) & (dx[iu] != 0)))
    denom = math.sqrt(
        (concordant + discordant + ties_x) * (concordant + discordant + ties_y)
    )
    if denom == 0:
        raise AllTied("all pairs tied; tau undefined")
    return (concordant - discordant) / denom
