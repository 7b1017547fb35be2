"""Importance scores for trigger placement.

``explain_graph`` learns a soft edge mask that preserves the model's own
prediction (GNNExplainer-style); ``node_importance`` reduces it to per-node
scores. ``explain_node_features`` ranks input features for a single node by a
non-negative HSIC Lasso fitted on the node's N-hop neighbourhood
(GraphLIME-style).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateInputError, ExplainerDivergedError, InsufficientSamplesError
from .graph import Graph, NodeTaskDataset
from .models import GnnModel, _khop_nodes, arc_weights, collate, predict_nodes


@dataclass
class ExplainerConfig:
    iterations: int = 100
    step_size: float = 0.01
    mask_size_weight: float = 0.005
    mask_entropy_weight: float = 1.0
    hop_count: int = 2
    top_features: int = 10
    kernel_bandwidth_rule: str = "median"
    hsic_lambda: float = 0.01
    output_kernel: str = "delta"
    max_samples: int = 100
    solver_max_iter: int = 2000
    solver_tol: float = 1e-9
    batch_size: int = 64
    seed: int = 0


@dataclass
class ImportanceScores:
    kind: str  # "node-importance" | "feature-importance"
    scores: np.ndarray
    subject: int

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise ValueError("importance scores must be finite")
        if self.kind == "node-importance" and s.size and (s.min() < 0 or s.max() > 1 + 1e-12):
            raise ValueError("node importance must lie in [0, 1]")
        if self.kind == "feature-importance" and s.size and s.min() < 0:
            raise ValueError("feature importance must be non-negative")
        self.scores = s


@dataclass
class EdgeMask:
    edges: np.ndarray  # (m, 2) canonical pairs, aligned with weights
    weights: np.ndarray
    objective: float
    initial_objective: float

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {(int(a), int(b)): float(w) for (a, b), w in zip(self.edges, self.weights)}


# --------------------------------------------------------------------------- edge-mask explainer


def _init_logits(graph: Graph, seed: int, subject: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed) * 1_000_003 + int(subject))
    std = math.sqrt(2.0) * math.sqrt(2.0 / (2 * max(graph.node_count, 1)))
    return 1.0 + std * torch.randn(graph.edge_count, generator=gen, dtype=torch.float32)


def _objectives(model, batch, logits, target, cfg: ExplainerConfig) -> torch.Tensor:
    mask = torch.sigmoid(logits)
    out = model(batch, edge_weight=arc_weights(mask))
    ce = F.cross_entropy(out, target, reduction="none")
    g = batch.num_graphs
    eg = batch.edge_graph
    size = torch.zeros(g, dtype=mask.dtype).index_add_(0, eg, mask)
    m = mask.clamp(1e-15, 1 - 1e-15)
    ent = -m * torch.log(m) - (1 - m) * torch.log(1 - m)
    counts = torch.zeros(g, dtype=mask.dtype).index_add_(0, eg, torch.ones_like(mask)).clamp(min=1.0)
    ent_mean = torch.zeros(g, dtype=mask.dtype).index_add_(0, eg, ent) / counts
    return ce + cfg.mask_size_weight * size + cfg.mask_entropy_weight * ent_mean


def explain_graphs(
    model: GnnModel, graphs: Sequence[Graph], config: ExplainerConfig | None = None, subjects: Sequence[int] | None = None
) -> list[EdgeMask]:
    """Explain several graphs at once.

    Graphs in a batch are disjoint and Adam updates are elementwise, so each
    result equals what a one-graph call with the same subject id would return.
    """
    cfg = config or ExplainerConfig()
    subjects = list(range(len(graphs))) if subjects is None else list(subjects)
    results: list[EdgeMask] = []
    model.eval()
    for start in range(0, len(graphs), cfg.batch_size):
        chunk = list(graphs[start:start + cfg.batch_size])
        subj = subjects[start:start + cfg.batch_size]
        for g in chunk:
            if g.node_count == 0:
                raise DegenerateInputError("cannot explain an empty graph")
        batch = collate(chunk)
        with torch.no_grad():
            target = model(batch).argmax(dim=-1)
        logits = torch.cat([_init_logits(g, cfg.seed, s) for g, s in zip(chunk, subj)]).requires_grad_(True)
        opt = torch.optim.Adam([logits], lr=cfg.step_size)
        best_obj = torch.full((len(chunk),), math.inf, dtype=torch.float64)
        best_logits = logits.detach().clone()
        eg = batch.edge_graph
        initial = None
        for it in range(cfg.iterations + 1):
            obj = _objectives(model, batch, logits, target, cfg)
            if not torch.all(torch.isfinite(obj)):
                raise ExplainerDivergedError(f"non-finite explainer objective at iteration {it}")
            od = obj.detach().double()
            if initial is None:
                initial = od.clone()
            improved = od < best_obj
            best_obj = torch.where(improved, od, best_obj)
            if bool(improved.any()) and logits.numel():
                sel = improved[eg]
                best_logits[sel] = logits.detach()[sel]
            if it == cfg.iterations or logits.numel() == 0:
                break
            (grad,) = torch.autograd.grad(obj.sum(), [logits])
            opt.zero_grad()
            logits.grad = grad
            opt.step()
        weights = torch.sigmoid(best_logits).numpy().astype(np.float64)
        offset = 0
        for k, g in enumerate(chunk):
            w = weights[offset:offset + g.edge_count]
            offset += g.edge_count
            results.append(EdgeMask(g.edges.copy(), w, float(best_obj[k]), float(initial[k])))
    return results


def explain_graph(model: GnnModel, graph: Graph, config: ExplainerConfig | None = None, subject: int = 0) -> EdgeMask:
    return explain_graphs(model, [graph], config, [subject])[0]


def node_importance(
    edge_mask: EdgeMask | Mapping[tuple[int, int], float], node_count: int, subject: int = 0
) -> ImportanceScores:
    """Score each node by the mask mass of its incident edges, scaled so the maximum is 1.

    Normalisation is skipped when every sum is zero; isolated nodes score 0.
    """
    items: Iterable = edge_mask.as_dict().items() if isinstance(edge_mask, EdgeMask) else edge_mask.items()
    scores = np.zeros(node_count, dtype=np.float64)
    for (a, b), w in items:
        scores[a] += w
        scores[b] += w
    top = scores.max() if node_count else 0.0
    if top > 0:
        scores = scores / top
    return ImportanceScores("node-importance", scores, subject)


# --------------------------------------------------------------------------- HSIC Lasso explainer


def _center(K: np.ndarray) -> np.ndarray:
    """H K H for a stack of square matrices (last two axes)."""
    return K - K.mean(axis=-1, keepdims=True) - K.mean(axis=-2, keepdims=True) + K.mean(axis=(-1, -2), keepdims=True)


def _median_bandwidth(dist: np.ndarray) -> np.ndarray:
    """Median of the non-zero pairwise distances of each feature (upper triangle)."""
    n = dist.shape[-1]
    iu = np.triu_indices(n, k=1)
    d = dist[:, iu[0], iu[1]]
    d = np.where(d > 0, d, np.nan)
    with np.errstate(all="ignore"):
        med = np.nanmedian(d, axis=1)
    return np.where(np.isfinite(med) & (med > 0), med, 1.0)


def feature_kernels(X: np.ndarray, rule: str = "median") -> np.ndarray:
    """Centred, Frobenius-normalised Gaussian kernels, one per column of ``X``: shape (d, n, n)."""
    dist = np.abs(X.T[:, :, None] - X.T[:, None, :])
    if rule != "median":
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    sigma = _median_bandwidth(dist)
    K = _center(np.exp(-(dist**2) / (2.0 * sigma[:, None, None] ** 2)))
    norms = np.sqrt((K**2).sum(axis=(1, 2)))
    with np.errstate(all="ignore"):
        K = np.where(norms[:, None, None] > 1e-12, K / norms[:, None, None], 0.0)
    return K


def output_kernel(pred_labels: np.ndarray, probs: np.ndarray | None = None, kind: str = "delta") -> np.ndarray:
    if kind == "delta":
        L = (pred_labels[:, None] == pred_labels[None, :]).astype(np.float64)
    elif kind == "gaussian":
        d2 = ((probs[:, None, :] - probs[None, :, :]) ** 2).sum(-1)
        iu = np.triu_indices(len(probs), k=1)
        pos = d2[iu][d2[iu] > 0]
        s2 = float(np.median(pos)) if pos.size else 1.0
        L = np.exp(-d2 / (2.0 * s2))
    else:
        raise ValueError(f"unknown output kernel {kind!r}")
    L = _center(L)
    nrm = np.sqrt((L**2).sum())
    return L / nrm if nrm > 1e-12 else np.zeros_like(L)


def nonneg_lasso_cd(gram: np.ndarray, corr: np.ndarray, lam: float, max_iter: int = 2000, tol: float = 1e-9) -> np.ndarray:
    """Minimise 0.5 a'Ga - c'a + lam*sum(a) over a >= 0 by cyclic coordinate descent."""
    d = len(corr)
    a = np.zeros(d)
    if d == 0:
        return a
    diag = np.diag(gram).copy()
    active = diag > 1e-15
    resid = corr.copy()  # c - G a
    for _ in range(max_iter):
        delta = 0.0
        for k in np.flatnonzero(active):
            new = max(0.0, a[k] + (resid[k] - lam) / diag[k])
            step = new - a[k]
            if step != 0.0:
                resid -= step * gram[:, k]
                a[k] = new
                delta = max(delta, abs(step))
        if delta < tol:
            break
    return a


def hsic_lasso(X: np.ndarray, L: np.ndarray, lam: float, rule: str = "median", max_iter: int = 2000, tol: float = 1e-9) -> np.ndarray:
    """Non-negative HSIC Lasso coefficients of each column of ``X`` against centred output kernel ``L``.

    Columns that are constant over the samples receive exactly 0.
    """
    n, d = X.shape
    coef = np.zeros(d)
    varying = np.flatnonzero(X.max(axis=0) > X.min(axis=0))
    if varying.size == 0 or not np.any(L):
        return coef
    K = feature_kernels(X[:, varying], rule).reshape(len(varying), n * n)
    gram = K @ K.T
    corr = K @ L.ravel()
    coef[varying] = nonneg_lasso_cd(gram, corr, lam, max_iter, tol)
    return coef


def neighborhood_samples(graph: Graph, node: int, hops: int, max_samples: int, seed: int, neighbors=None) -> np.ndarray:
    neighbors = graph.neighbors() if neighbors is None else neighbors
    hood = _khop_nodes(neighbors, int(node), hops)
    if len(hood) > max_samples:
        rng = np.random.default_rng([int(seed), int(node)])
        others = hood[hood != node]
        keep = rng.choice(others, size=max_samples - 1, replace=False)
        hood = np.sort(np.concatenate([[node], keep]))
    return hood


def explain_node_features(
    model: GnnModel | None,
    dataset: NodeTaskDataset,
    node: int,
    config: ExplainerConfig | None = None,
    *,
    probs: np.ndarray | None = None,
    neighbors=None,
) -> ImportanceScores:
    """Per-feature importance for ``node`` from its N-hop neighbourhood.

    ``probs`` may carry precomputed model probabilities for every node, which
    avoids one forward pass per explained node.
    """
    cfg = config or ExplainerConfig()
    graph = dataset.graph
    if probs is None:
        probs = predict_nodes(model, graph)
    hood = neighborhood_samples(graph, node, cfg.hop_count, cfg.max_samples, cfg.seed, neighbors)
    if len(hood) < 2:
        raise InsufficientSamplesError(f"node {node} has fewer than 2 samples in its {cfg.hop_count}-hop neighbourhood")
    X = graph.node_features[hood].astype(np.float64)
    p = probs[hood]
    L = output_kernel(p.argmax(axis=1), p, cfg.output_kernel)
    coef = hsic_lasso(X, L, cfg.hsic_lambda, cfg.kernel_bandwidth_rule, cfg.solver_max_iter, cfg.solver_tol)
    return ImportanceScores("feature-importance", coef, int(node))


def top_features(scores: ImportanceScores, n: int) -> np.ndarray:
    """Indices of the ``n`` largest coefficients (ties to the lower index)."""
    order = np.lexsort((np.arange(len(scores.scores)), -scores.scores))
    return np.sort(order[:n])


def write_importance(path: str | Path, scores: Iterable[ImportanceScores]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("subject\tkind\tindex\tscore\n")
        for s in scores:
            for i, v in enumerate(s.scores):
                fh.write(f"{s.subject}\t{s.kind}\t{i}\t{v:.10g}\n")
    return path
