"""Message-passing GNNs (GIN, GraphSAGE, GAT), readout, training and inference.

All layers accept an optional per-arc weight so that the edge-mask explainer
can run the same forward pass on a soft-masked graph.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointVersionError, DegenerateInputError, ShapeError, TrainingDivergedError
from .graph import Graph, GraphDataset, NodeTaskDataset

ARCHITECTURES = ("GIN", "GraphSAGE", "GAT")
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    architecture: str = "GIN"
    layer_count: int = 3
    hidden_dim: int = 64
    attention_heads: int = 8
    readout: str = "sum"
    learning_rate: float = 0.01
    epochs: int = 200
    dropout: float = 0.0
    seed: int = 0
    batch_size: int = 32
    weight_decay: float = 0.0
    gin_eps: float = 0.0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.layer_count < 1 or self.hidden_dim < 1 or self.attention_heads < 1:
            raise ValueError("layer_count, hidden_dim and attention_heads must be positive")
        if self.readout not in ("sum", "mean"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0 and learning_rate > 0")

    @classmethod
    def graph_default(cls, architecture: str = "GIN", **kw) -> ModelConfig:
        base = dict(architecture=architecture, layer_count=3, hidden_dim=64, readout="sum", epochs=200)
        if architecture == "GAT":
            base["layer_count"] = 2
        base.update(kw)
        return cls(**base)

    @classmethod
    def node_default(cls, architecture: str = "GAT", **kw) -> ModelConfig:
        base = dict(
            architecture=architecture,
            layer_count=2,
            hidden_dim=64,
            attention_heads=8,
            epochs=300,
            dropout=0.5,
            weight_decay=5e-4,
        )
        base.update(kw)
        return cls(**base)


# --------------------------------------------------------------------------- batching


@dataclass
class GraphBatch:
    x: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    batch: torch.Tensor
    num_graphs: int
    edge_graph: torch.Tensor = field(default=None)  # graph id of each undirected edge
    edge_count: int = 0  # undirected edges; arcs 0..m-1 and m..2m-1 mirror each other


def collate(graphs: Sequence[Graph], dtype=torch.float32) -> GraphBatch:
    xs, srcs, dsts, bs, egs, fwd, bwd = [], [], [], [], [], [], []
    offset = 0
    for k, g in enumerate(graphs):
        xs.append(torch.as_tensor(g.node_features, dtype=dtype))
        e = torch.as_tensor(g.edges, dtype=torch.long) + offset
        fwd.append(e)
        bs.append(torch.full((g.node_count,), k, dtype=torch.long))
        egs.append(torch.full((g.edge_count,), k, dtype=torch.long))
        offset += g.node_count
    e = torch.cat(fwd) if fwd else torch.zeros((0, 2), dtype=torch.long)
    src = torch.cat([e[:, 0], e[:, 1]])
    dst = torch.cat([e[:, 1], e[:, 0]])
    return GraphBatch(
        x=torch.cat(xs) if xs else torch.zeros((0, 0), dtype=dtype),
        src=src,
        dst=dst,
        batch=torch.cat(bs) if bs else torch.zeros(0, dtype=torch.long),
        num_graphs=len(graphs),
        edge_graph=torch.cat(egs) if egs else torch.zeros(0, dtype=torch.long),
        edge_count=int(e.shape[0]),
    )


def arc_weights(edge_mask: torch.Tensor | None) -> torch.Tensor | None:
    """Expand a per-undirected-edge mask to the mirrored arc layout of :func:`collate`."""
    if edge_mask is None:
        return None
    return torch.cat([edge_mask, edge_mask])


# --------------------------------------------------------------------------- layers


def _scatter_sum(values: torch.Tensor, index: torch.Tensor, size: int) -> torch.Tensor:
    out = values.new_zeros((size,) + values.shape[1:])
    return out.index_add_(0, index, values)


class GINLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, eps: float = 0.0):
        super().__init__()
        self.eps = eps
        self.lin1 = nn.Linear(in_dim, out_dim)
        self.lin2 = nn.Linear(out_dim, out_dim)

    def forward(self, x, src, dst, weight=None):
        msg = x[src] if weight is None else x[src] * weight.unsqueeze(-1)
        h = (1.0 + self.eps) * x + _scatter_sum(msg, dst, x.shape[0])
        return self.lin2(F.relu(self.lin1(h)))


class SAGELayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.lin_self = nn.Linear(in_dim, out_dim)
        self.lin_neigh = nn.Linear(in_dim, out_dim, bias=False)

    def neighbor_mean(self, x, src, dst, weight=None):
        msg = x[src] if weight is None else x[src] * weight.unsqueeze(-1)
        deg = _scatter_sum(torch.ones_like(dst, dtype=x.dtype), dst, x.shape[0]).clamp(min=1.0)
        return _scatter_sum(msg, dst, x.shape[0]) / deg.unsqueeze(-1)

    def forward(self, x, src, dst, weight=None):
        return self.lin_self(x) + self.lin_neigh(self.neighbor_mean(x, src, dst, weight))


class GATLayer(nn.Module):
    """Multi-head attention over each node's neighbours plus itself; heads concatenated."""

    def __init__(self, in_dim: int, out_dim: int, heads: int, negative_slope: float = 0.2):
        super().__init__()
        self.heads = heads
        self.head_dim = max(1, math.ceil(out_dim / heads))
        self.out_dim = out_dim
        self.negative_slope = negative_slope
        self.lin = nn.Linear(in_dim, heads * self.head_dim, bias=False)
        self.att_src = nn.Parameter(torch.empty(heads, self.head_dim))
        self.att_dst = nn.Parameter(torch.empty(heads, self.head_dim))
        self.bias = nn.Parameter(torch.zeros(heads * self.head_dim))
        self.proj = None if heads * self.head_dim == out_dim else nn.Linear(heads * self.head_dim, out_dim)

    def forward(self, x, src, dst, weight=None):
        n = x.shape[0]
        loops = torch.arange(n, device=x.device)
        src = torch.cat([src, loops])
        dst = torch.cat([dst, loops])
        h = self.lin(x).view(n, self.heads, self.head_dim)
        score = (h * self.att_src).sum(-1)[src] + (h * self.att_dst).sum(-1)[dst]
        score = F.leaky_relu(score, self.negative_slope)
        idx = dst.unsqueeze(-1).expand_as(score)
        smax = torch.full((n, self.heads), -torch.inf, dtype=x.dtype).scatter_reduce(
            0, idx, score, reduce="amax", include_self=True
        )
        ex = torch.exp(score - smax[dst].detach())
        alpha = ex / _scatter_sum(ex, dst, n)[dst]
        if weight is not None:
            alpha = alpha * torch.cat([weight, weight.new_ones(n)]).unsqueeze(-1)
        out = _scatter_sum(h[src] * alpha.unsqueeze(-1), dst, n).reshape(n, -1) + self.bias
        return out if self.proj is None else self.proj(out)


def aggregate_layer(layer: nn.Module, x: torch.Tensor, src, dst, weight=None) -> torch.Tensor:
    in_dim = layer.lin1.in_features if isinstance(layer, GINLayer) else (
        layer.lin_self.in_features if isinstance(layer, SAGELayer) else layer.lin.in_features
    )
    if x.shape[-1] != in_dim:
        raise ShapeError(f"layer expects feature dim {in_dim}, got {x.shape[-1]}")
    return layer(x, src, dst, weight)


def readout(z: torch.Tensor | np.ndarray, mode: str = "sum", batch: torch.Tensor | None = None, num_graphs: int = 1):
    """Pool node embeddings into graph embeddings (sum or mean over rows)."""
    as_numpy = isinstance(z, np.ndarray)
    zt = torch.as_tensor(z)
    if zt.shape[0] == 0:
        raise DegenerateInputError("readout of an empty graph")
    if batch is None:
        out = zt.sum(0) if mode == "sum" else zt.mean(0)
        return out.numpy() if as_numpy else out
    pooled = _scatter_sum(zt, batch, num_graphs)
    if mode == "mean":
        counts = _scatter_sum(torch.ones_like(batch, dtype=zt.dtype), batch, num_graphs).clamp(min=1.0)
        pooled = pooled / counts.unsqueeze(-1)
    return pooled


# --------------------------------------------------------------------------- model


def _dropout(x: torch.Tensor, p: float, generator: torch.Generator | None) -> torch.Tensor:
    if p <= 0.0 or generator is None:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


class GnnModel(nn.Module):
    def __init__(self, config: ModelConfig, in_dim: int, class_count: int, task: str = "graph"):
        super().__init__()
        if task not in ("graph", "node"):
            raise ValueError(f"unknown task {task!r}")
        self.config = config
        self.in_dim = in_dim
        self.class_count = class_count
        self.task = task
        dims = [in_dim] + [config.hidden_dim] * config.layer_count
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            if config.architecture == "GIN":
                layers.append(GINLayer(a, b, config.gin_eps))
            elif config.architecture == "GraphSAGE":
                layers.append(SAGELayer(a, b))
            else:
                layers.append(GATLayer(a, b, config.attention_heads))
        self.layers = nn.ModuleList(layers)
        h = config.hidden_dim
        if task == "graph":
            self.head = nn.Sequential(nn.Linear(h, h), nn.ReLU(), nn.Linear(h, class_count))
        else:
            self.head = nn.Sequential(nn.Linear(h, class_count))
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for name, p in self.named_parameters():
                if p.dim() >= 2 or name.endswith(("att_src", "att_dst")):
                    fan_in, fan_out = p.shape[-1], p.shape[0]
                    bound = math.sqrt(6.0 / (fan_in + fan_out))
                    p.copy_((torch.rand(p.shape, generator=gen, dtype=p.dtype) * 2 - 1) * bound)
                else:
                    p.zero_()

    def embed(self, batch: GraphBatch, edge_weight=None, generator=None) -> torch.Tensor:
        if batch.x.shape[-1] != self.in_dim:
            raise ShapeError(f"model expects feature dim {self.in_dim}, got {batch.x.shape[-1]}")
        z = batch.x
        for layer in self.layers:
            z = _dropout(z, self.config.dropout, generator)
            z = F.relu(layer(z, batch.src, batch.dst, edge_weight))
        return z

    def forward(self, batch: GraphBatch, edge_weight=None, generator=None) -> torch.Tensor:
        z = self.embed(batch, edge_weight, generator)
        if self.task == "graph":
            if z.shape[0] == 0:
                raise DegenerateInputError("cannot classify an empty graph")
            z = readout(z, self.config.readout, batch.batch, batch.num_graphs)
        return self.head(z)


def build_model(config: ModelConfig, in_dim: int, class_count: int, task: str = "graph") -> GnnModel:
    return GnnModel(config, in_dim, class_count, task)


# --------------------------------------------------------------------------- training


def _check_loss(loss: torch.Tensor, epoch: int) -> float:
    val = float(loss.detach())
    if not math.isfinite(val):
        raise TrainingDivergedError(epoch, val)
    return val


def train(model: GnnModel, data: GraphDataset | NodeTaskDataset, config: ModelConfig | None = None):
    """Minimise cross-entropy with Adam. Returns ``(model, loss_history)``.

    Graph tasks use shuffled mini-batches of whole graphs; node tasks take one
    full-graph step per epoch with the loss restricted to ``train_mask``.
    """
    config = config or model.config
    gen = torch.Generator().manual_seed(int(config.seed) + 1)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    history: list[float] = []
    model.train()
    if isinstance(data, NodeTaskDataset):
        if data.graph.node_labels is None:
            raise DegenerateInputError("node task has no labels")
        batch = collate([data.graph])
        y = torch.as_tensor(data.graph.node_labels, dtype=torch.long)
        mask = torch.as_tensor(data.train_mask)
        if not bool(mask.any()) and config.epochs:
            raise DegenerateInputError("empty training mask")
        for epoch in range(config.epochs):
            opt.zero_grad()
            loss = F.cross_entropy(model(batch, generator=gen)[mask], y[mask])
            history.append(_check_loss(loss, epoch))
            loss.backward()
            opt.step()
    else:
        graphs = list(data.graphs)
        if not graphs and config.epochs:
            raise DegenerateInputError("empty training set")
        labels = torch.as_tensor([g.graph_label for g in graphs], dtype=torch.long)
        for epoch in range(config.epochs):
            order = torch.randperm(len(graphs), generator=gen).tolist()
            total = 0.0
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                batch = collate([graphs[i] for i in idx])
                opt.zero_grad()
                loss = F.cross_entropy(model(batch, generator=gen), labels[idx])
                total += _check_loss(loss, epoch) * len(idx)
                loss.backward()
                opt.step()
            history.append(total / len(graphs))
    model.eval()
    return model, history


# --------------------------------------------------------------------------- inference


@torch.no_grad()
def predict_graphs(model: GnnModel, graphs: Sequence[Graph], batch_size: int = 256) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, len(graphs), batch_size):
        logits = model(collate(graphs[start:start + batch_size]))
        out.append(torch.softmax(logits.double(), dim=-1).numpy())
    if not out:
        return np.zeros((0, model.class_count))
    return np.concatenate(out)


def predict_graph(model: GnnModel, graph: Graph) -> np.ndarray:
    return predict_graphs(model, [graph])[0]


@torch.no_grad()
def predict_nodes(model: GnnModel, graph: Graph) -> np.ndarray:
    model.eval()
    return torch.softmax(model(collate([graph])).double(), dim=-1).numpy()


def _khop_nodes(neighbors: list[np.ndarray], center: int, hops: int) -> np.ndarray:
    seen = {center}
    frontier = [center]
    for _ in range(hops):
        nxt = []
        for u in frontier:
            for v in neighbors[u]:
                if v not in seen:
                    seen.add(int(v))
                    nxt.append(int(v))
        frontier = nxt
    return np.array(sorted(seen), dtype=np.int64)


@torch.no_grad()
def predict_nodes_with_overrides(
    model: GnnModel, graph: Graph, nodes: Sequence[int], rows: np.ndarray, chunk: int = 128
) -> np.ndarray:
    """Class probabilities of each ``nodes[i]`` when only its own feature row is replaced by ``rows[i]``.

    Each prediction is computed on the node's receptive field (``layer_count``
    hops), so the modification of one node never leaks into another's output.
    """
    model.eval()
    neighbors = graph.neighbors()
    hops = model.config.layer_count
    index_of = np.full(graph.node_count, -1, dtype=np.int64)
    out = np.zeros((len(nodes), model.class_count))
    for start in range(0, len(nodes), chunk):
        subs, centers, offset = [], [], 0
        for i in range(start, min(start + chunk, len(nodes))):
            v = int(nodes[i])
            keep = _khop_nodes(neighbors, v, hops)
            index_of[keep] = np.arange(len(keep))
            e = graph.edges
            sel = (index_of[e[:, 0]] >= 0) & (index_of[e[:, 1]] >= 0) if len(e) else np.zeros(0, dtype=bool)
            feats = graph.node_features[keep].copy()
            feats[index_of[v]] = rows[i]
            subs.append(Graph(len(keep), index_of[e[sel]], feats))
            centers.append(offset + index_of[v])
            offset += len(keep)
            index_of[keep] = -1
        probs = torch.softmax(model(collate(subs)).double(), dim=-1).numpy()
        out[start:start + len(subs)] = probs[centers]
    return out


def accuracy(model: GnnModel, data, mask: np.ndarray | None = None) -> float:
    """Fraction of correct argmax predictions (graph dataset, or node dataset over ``mask``/test_mask)."""
    if isinstance(data, NodeTaskDataset):
        mask = data.test_mask if mask is None else mask
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise DegenerateInputError("accuracy over an empty split")
        pred = predict_nodes(model, data.graph).argmax(axis=1)
        return float(np.mean(pred[idx] == data.graph.node_labels[idx]))
    graphs = list(data)
    if not graphs:
        raise DegenerateInputError("accuracy over an empty split")
    pred = predict_graphs(model, graphs).argmax(axis=1)
    return float(np.mean(pred == np.array([g.graph_label for g in graphs])))


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(model: GnnModel, path: str | Path) -> Path:
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "in_dim": model.in_dim,
        "class_count": model.class_count,
        "task": model.task,
    }
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path: str | Path) -> GnnModel:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"checkpoint version {meta.get('version')} != supported {CHECKPOINT_VERSION}"
            )
        model = GnnModel(ModelConfig(**meta["config"]), meta["in_dim"], meta["class_count"], meta["task"])
        state = {k[len("param/"):]: torch.as_tensor(data[k]) for k in data.files if k.startswith("param/")}
    model.load_state_dict(state)
    model.eval()
    return model
