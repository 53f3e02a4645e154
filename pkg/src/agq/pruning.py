"""Activation-aware token pruning.

Token importance is the attention probability each token assigns to the
start token (position 0), averaged over heads. A progressive schedule prunes
at m layers with per-layer ratio gamma = 1 - (1 - beta)^(1/m) so cumulative
survivors equal 1 - beta; sparsity is the layer-averaged pruned fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_store import as_tensor2d, slice_rows

ROW_SUM_TOL = 1e-4


class PruneError(Exception):
    pass


@dataclass(frozen=True)
class AttentionMap:
    """Per-head causal probability matrices, shape (heads, T, T)."""

    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.ndim != 3 or p.shape[1] != p.shape[2]:
            raise PruneError("attention map must be (heads, T, T)")

    @property
    def heads(self) -> int:
        return self.probs.shape[0]

    @property
    def tokens(self) -> int:
        return self.probs.shape[1]


def validate_map(m: AttentionMap) -> None:
    """Reject non-causal or non-normalized maps."""
    p = m.probs
    upper = np.triu(np.ones((m.tokens, m.tokens), dtype=bool), k=1)
    if np.any(p[:, upper] != 0):
        raise PruneError("attention map is not causal")
    row_sums = p.sum(axis=2)
    if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
        raise PruneError("attention rows do not sum to 1")


@dataclass(frozen=True)
class TokenImportance:
    scores: np.ndarray  # start-token attentivity per token, in [0, 1]


def score_tokens(m: AttentionMap) -> TokenImportance:
    """Head-mean of each token's attention probability on position 0."""
    validate_map(m)
    return TokenImportance(scores=m.probs[:, :, 0].mean(axis=0))


@dataclass(frozen=True)
class PruneSchedule:
    total_layers: int
    prune_layers: tuple[int, ...]
    final_ratio: float  # beta: cumulative fraction pruned after all stages
    per_layer_ratio: float  # gamma

    def __post_init__(self):
        m = len(self.prune_layers)
        expected = 1.0 - (1.0 - self.final_ratio) ** (1.0 / m)
        if abs(self.per_layer_ratio - expected) > 1e-12:
            raise PruneError("per-layer ratio inconsistent with final ratio")


def make_schedule(n: int, start_layer: int, beta: float, m: int) -> PruneSchedule:
    """Place m prune layers evenly from start_layer to the last layer."""
    if not 0.0 <= beta < 1.0:
        raise PruneError(f"final ratio must be in [0, 1), got {beta}")
    if m < 1:
        raise PruneError("need at least one prune layer")
    if start_layer + m > n:
        raise PruneError(f"cannot fit {m} prune layers starting at {start_layer} in {n}")
    layers = np.unique(np.round(np.linspace(start_layer, n - 1, m)).astype(int))
    if len(layers) != m:  # rounding collision; fall back to consecutive slots
        layers = np.arange(start_layer, start_layer + m)
    gamma = 1.0 - (1.0 - beta) ** (1.0 / m)
    return PruneSchedule(
        total_layers=n,
        prune_layers=tuple(int(l) for l in layers),
        final_ratio=beta,
        per_layer_ratio=gamma,
    )


def default_start_layer(n: int) -> int:
    """Early layers attend locally, so pruning starts a quarter of the way in."""
    return max(1, n // 4)


def prune_step(x, scores: TokenImportance, gamma: float):
    """Drop the floor(gamma * (T - 1)) least important non-start tokens.

    The start token is never pruned. Ties are broken by dropping the later
    position first. Returns the sliced tensor and the kept indices.
    """
    x = as_tensor2d(x)
    t = x.shape[0]
    s = np.asarray(scores.scores, dtype=np.float64)
    if len(s) != t:
        raise PruneError(f"score length {len(s)} != token count {t}")
    n_drop = math.floor(gamma * (t - 1))
    if n_drop <= 0:
        return x, list(range(t))
    candidates = sorted(range(1, t), key=lambda i: (s[i], -i))
    dropped = set(candidates[:n_drop])
    kept = [i for i in range(t) if i not in dropped]
    return slice_rows(x, kept), kept


def sparsity(kept_fractions, n: int) -> float:
    """Layer-averaged pruned fraction: 1 - mean of remaining fractions."""
    r = np.asarray(list(kept_fractions), dtype=np.float64)
    if r.size == 0:
        raise PruneError("need at least one layer fraction")
    if np.any(r <= 0) or np.any(r > 1):
        raise PruneError("remaining fractions must lie in (0, 1]")
    return float(1.0 - r.sum() / n)
