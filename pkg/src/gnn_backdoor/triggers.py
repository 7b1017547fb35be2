"""Trigger construction: Erdős–Rényi subgraph triggers and fixed-value feature triggers."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .graph import canonical_edges


def round_half_up(x: float) -> int:
    # guard against representation error such as 0.05 * 2891 = 144.54999...
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True, eq=False)
class TriggerGraph:
    node_count: int
    edges: np.ndarray
    density: float
    seed: int

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def describe(self) -> str:
        edges = " ".join(f"{a}-{b}" for a, b in self.edges)
        return f"kind=subgraph t={self.node_count} rho={self.density} seed={self.seed} edges={edges}"

    def digest(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FeatureTrigger:
    indices: np.ndarray
    fill_value: float = 1.0

    def describe(self) -> str:
        idx = " ".join(str(int(i)) for i in self.indices)
        return f"kind=feature n={len(self.indices)} fill={self.fill_value} indices={idx}"

    def digest(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]


def trigger_size_from_gamma(avg_nodes: float, gamma: float) -> int:
    if not 0.0 < gamma <= 1.0:
        raise ArgumentError(f"gamma must lie in (0, 1], got {gamma}")
    if avg_nodes <= 0:
        raise ArgumentError("avg_nodes must be positive")
    return max(2, round_half_up(gamma * avg_nodes))


def generate_er_trigger(t: int, rho: float, seed: int) -> TriggerGraph:
    """Gilbert G(t, rho): each of the C(t, 2) pairs is kept independently with probability rho."""
    if t < 2:
        raise ArgumentError("trigger needs at least 2 nodes")
    if not 0.0 <= rho <= 1.0:
        raise ArgumentError(f"rho must lie in [0, 1], got {rho}")
    iu, ju = np.triu_indices(t, k=1)
    keep = np.random.default_rng(seed).random(len(iu)) < rho
    return TriggerGraph(t, canonical_edges(np.stack([iu[keep], ju[keep]], axis=1)), float(rho), int(seed))


def feature_trigger_size(feature_dim: int, fraction: float) -> int:
    if feature_dim < 1:
        raise ArgumentError("feature_dim must be >= 1")
    return max(1, round_half_up(fraction * feature_dim))


def build_feature_trigger(indices: Sequence[int], fill_value: float = 1.0, feature_dim: int | None = None) -> FeatureTrigger:
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size == 0:
        raise ArgumentError("feature trigger needs at least one index")
    if len(np.unique(idx)) != len(idx):
        raise ArgumentError("duplicate feature index in trigger")
    if idx.min() < 0 or (feature_dim is not None and idx.max() >= feature_dim):
        raise ArgumentError("feature index out of range")
    return FeatureTrigger(np.sort(idx), float(fill_value))
