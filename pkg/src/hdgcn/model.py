"""HDGCN layers, classifier heads, checkpoints and the Chebyshev oracle."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CapabilityError, CheckpointError, ConfigError, DimensionError
from .graph import Graph, spmm
from .mvcattn import AttentionTrace, MVCAttnWeights, glorot, mvc_attention
from .tensor import (
    ACTIVATIONS,
    Parameter,
    Tensor,
    add,
    add_n,
    apply_activation,
    dropout,
    layer_norm_rows,
    matmul,
    max_rows,
    mean_rows,
    mul,
)

CHEB_GUARD = 200


@dataclass
class HDGCNConfig:
    K: int = 6
    L: int = 1
    d_in: int = 300
    d_k: int = 64
    M: int = 10
    activation: str = "relu"
    mode: str = "dynamic"
    num_classes: int = 2
    task: str = "node"
    dropout: float = 0.0
    norm_eps: float = 1e-5

    def validate(self) -> "HDGCNConfig":
        if self.K < 0 or self.K % 2:
            raise ConfigError(f"K must be a non-negative even number, got {self.K}")
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        for name in ("d_in", "d_k", "M", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.mode not in ("dynamic", "static"):
            raise ConfigError(f"mode must be 'dynamic' or 'static', got {self.mode!r}")
        if self.task not in ("node", "graph"):
            raise ConfigError(f"task must be 'node' or 'graph', got {self.task!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "HDGCNConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class OrderWeights:
    wk: Parameter
    mvc: MVCAttnWeights | None = None

    def parameters(self) -> list[Parameter]:
        return [self.wk] + (self.mvc.parameters() if self.mvc else [])


@dataclass
class LayerWeights:
    w0: Parameter
    orders: list[OrderWeights]
    norm_gain: Parameter
    norm_bias: Parameter

    @classmethod
    def init(cls, d_in: int, cfg: HDGCNConfig, rng: np.random.Generator, prefix: str = "layer0") -> "LayerWeights":
        d = cfg.d_k
        orders = []
        for k in range(1, cfg.K // 2 + 1):
            wk = Parameter(f"{prefix}.w{k}", glorot(rng, d, d))
            mvc = MVCAttnWeights.init(d, cfg.M, rng, prefix=f"{prefix}.mvc{k}") if cfg.mode == "dynamic" else None
            orders.append(OrderWeights(wk, mvc))
        return cls(
            w0=Parameter(f"{prefix}.w0", glorot(rng, d_in, d)),
            orders=orders,
            norm_gain=Parameter(f"{prefix}.norm_gain", np.ones((1, d))),
            norm_bias=Parameter(f"{prefix}.norm_bias", np.zeros((1, d))),
        )

    def parameters(self) -> list[Parameter]:
        out = [self.w0]
        for o in self.orders:
            out.extend(o.parameters())
        return out + [self.norm_gain, self.norm_bias]


@dataclass
class NodeHead:
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    @classmethod
    def init(cls, d: int, num_classes: int, rng: np.random.Generator) -> "NodeHead":
        return cls(
            Parameter("head.w1", glorot(rng, d, d)),
            Parameter("head.b1", np.zeros((1, d))),
            Parameter("head.w2", glorot(rng, d, num_classes)),
            Parameter("head.b2", np.zeros((1, num_classes))),
        )

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class GraphHead:
    f1_w: Parameter
    f1_b: Parameter
    f2_w: Parameter
    f2_b: Parameter
    out_w: Parameter
    out_b: Parameter

    @classmethod
    def init(cls, d: int, num_classes: int, rng: np.random.Generator) -> "GraphHead":
        return cls(
            Parameter("readout.f1_w", glorot(rng, d, d)),
            Parameter("readout.f1_b", np.zeros((1, d))),
            Parameter("readout.f2_w", glorot(rng, d, d)),
            Parameter("readout.f2_b", np.zeros((1, d))),
            Parameter("head.w", glorot(rng, d, num_classes)),
            Parameter("head.b", np.zeros((1, num_classes))),
        )

    def parameters(self) -> list[Parameter]:
        return [self.f1_w, self.f1_b, self.f2_w, self.f2_b, self.out_w, self.out_b]


@dataclass
class ModelOutput:
    node_embeddings: Tensor
    logits: Tensor
    traces: list[AttentionTrace] = field(default_factory=list)


# ---------------------------------------------------------------------------
# layer pieces
# ---------------------------------------------------------------------------


def prime_cheb_forward(g: Graph, x: Tensor, w0: Tensor, activation: str = "relu") -> Tensor:
    """One-hop GCN layer ``act(A_norm @ x @ w0)``."""
    if x.cols != w0.rows:
        raise DimensionError(f"features of width {x.cols} do not match W0 of shape {w0.shape}")
    # (x @ w0) first keeps the sparse product at width d_k
    return apply_activation(spmm(g.normalized, matmul(x, w0)), activation)


def hd_cheb_unit_forward(
    g: Graph, z_prev: Tensor, weights: OrderWeights, activation: str = "relu", order: int = 1
) -> tuple[Tensor, AttentionTrace]:
    """Attention-driven transition followed by one sparse hop and a filter."""
    if weights.mvc is None:
        raise ConfigError("dynamic unit needs attention weights")
    z_k, trace = mvc_attention(z_prev, weights.mvc, order)
    out = apply_activation(matmul(spmm(g.normalized, z_k), weights.wk), activation)
    return out, trace


def static_cheb_forward(g: Graph, z_prev: Tensor, wk: Tensor, activation: str = "relu", k: int = 1) -> Tensor:
    """Ablation unit: two hops of the static normalised adjacency.

    Chaining ``k`` of these applies ``A_norm ** (2k)`` overall.
    """
    if k < 1:
        raise ValueError(f"order must be >= 1, got {k}")
    a = g.normalized
    return apply_activation(matmul(spmm(a, spmm(a, z_prev)), wk), activation)


def hdgcn_layer_forward(
    g: Graph, x: Tensor, weights: LayerWeights, cfg: HDGCNConfig
) -> tuple[Tensor, list[AttentionTrace]]:
    """Fuse the prime output with ``K/2`` chained unit outputs, then layer-norm."""
    if cfg.K % 2:
        raise ConfigError(f"K must be even, got {cfg.K}")
    if len(weights.orders) != cfg.K // 2:
        raise ConfigError(f"layer has {len(weights.orders)} order blocks, config needs {cfg.K // 2}")
    z0 = prime_cheb_forward(g, x, weights.w0, cfg.activation)
    parts = [z0]
    traces = []
    z = z0
    for k, ow in enumerate(weights.orders, start=1):
        if cfg.mode == "dynamic":
            z, trace = hd_cheb_unit_forward(g, z, ow, cfg.activation, k)
            traces.append(trace)
        else:
            z = static_cheb_forward(g, z, ow.wk, cfg.activation, k)
        parts.append(z)
    fused = add_n(parts) if len(parts) > 1 else z0
    return layer_norm_rows(fused, weights.norm_gain, weights.norm_bias, cfg.norm_eps), traces


def node_classify(h: Tensor, head: NodeHead, activation: str = "relu") -> Tensor:
    hidden = apply_activation(add(matmul(h, head.w1), head.b1), activation)
    return add(matmul(hidden, head.w2), head.b2)


def graph_readout(h: Tensor, head: GraphHead) -> Tensor:
    """Gated mean + max pooling over nodes; returns 1 x d."""
    gate = apply_activation(add(matmul(h, head.f1_w), head.f1_b), "sigmoid")
    value = apply_activation(add(matmul(h, head.f2_w), head.f2_b), "tanh")
    gated = mul(gate, value)
    return add(mean_rows(gated), max_rows(gated))


def graph_classify(h_g: Tensor, head: GraphHead) -> Tensor:
    return add(matmul(h_g, head.out_w), head.out_b)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class HDGCN:
    def __init__(self, cfg: HDGCNConfig, seed: int = 0):
        self.cfg = cfg.validate()
        self.meta: dict = {}
        rng = np.random.default_rng(seed)
        self.layers = [
            LayerWeights.init(cfg.d_in if i == 0 else cfg.d_k, cfg, rng, prefix=f"layer{i}") for i in range(cfg.L)
        ]
        if cfg.task == "node":
            self.head: NodeHead | GraphHead = NodeHead.init(cfg.d_k, cfg.num_classes, rng)
        else:
            self.head = GraphHead.init(cfg.d_k, cfg.num_classes, rng)

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out + self.head.parameters()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def encode(self, g: Graph, training: bool = False, rng: np.random.Generator | None = None) -> tuple[Tensor, list[AttentionTrace]]:
        if g.features is None:
            raise DimensionError("graph has no node features")
        h = g.features
        if h.cols != self.cfg.d_in:
            raise DimensionError(f"graph features have width {h.cols}, model expects d_in={self.cfg.d_in}")
        traces: list[AttentionTrace] = []
        for layer in self.layers:
            if training and self.cfg.dropout > 0:
                h = dropout(h, self.cfg.dropout, rng)
            h, tr = hdgcn_layer_forward(g, h, layer, self.cfg)
            traces.extend(tr)
        if training and self.cfg.dropout > 0:
            h = dropout(h, self.cfg.dropout, rng)
        return h, traces

    def forward(self, g: Graph, training: bool = False, rng: np.random.Generator | None = None) -> ModelOutput:
        h, traces = self.encode(g, training, rng)
        if self.cfg.task == "node":
            logits = node_classify(h, self.head, self.cfg.activation)
        else:
            logits = graph_classify(graph_readout(h, self.head), self.head)
        return ModelOutput(h, logits, traces)

    __call__ = forward

    # -- checkpoints -------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.values.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise CheckpointError(f"parameter names differ: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.values.dtype)
            if arr.shape != p.shape:
                raise CheckpointError(f"parameter {name} has shape {arr.shape}, expected {p.shape}")
            p.values[...] = arr

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        """Write config, parameters and optional JSON-able ``meta`` (data pipeline notes)."""
        payload = {
            "format": "hdgcn-checkpoint/1",
            "config": asdict(self.cfg),
            "meta": meta or {},
            "params": {
                name: {"shape": list(v.shape), "data": [repr(float(x)) for x in v.ravel()]}
                for name, v in self.state_dict().items()
            },
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, expected: HDGCNConfig | None = None) -> "HDGCN":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            if payload.get("format") != "hdgcn-checkpoint/1":
                raise CheckpointError("not an HDGCN checkpoint")
            cfg = HDGCNConfig.from_dict(payload["config"])
            state = {
                name: np.array([float(x) for x in blob["data"]]).reshape(blob["shape"])
                for name, blob in payload["params"].items()
            }
        except (CheckpointError, FileNotFoundError):
            raise
        except (OSError, ValueError, KeyError, TypeError, AttributeError) as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if expected is not None and asdict(expected) != asdict(cfg):
            diff = {k: (v, asdict(expected)[k]) for k, v in asdict(cfg).items() if asdict(expected)[k] != v}
            raise CheckpointError(f"checkpoint config does not match: {diff}")
        model = cls(cfg)
        model.load_state_dict(state)
        model.meta = payload.get("meta") or {}
        return model


# ---------------------------------------------------------------------------
# Chebyshev reference
# ---------------------------------------------------------------------------


def chebyshev_basis(op: np.ndarray, order: int) -> list[np.ndarray]:
    """``T_0 .. T_order`` of a dense operator via the three-term recurrence."""
    op = np.asarray(op, dtype=np.float64)
    n = op.shape[0]
    if n > CHEB_GUARD:
        raise CapabilityError(f"dense Chebyshev reference limited to {CHEB_GUARD} nodes, got {n}")
    basis = [np.eye(n)]
    if order >= 1:
        basis.append(op.copy())
    for _ in range(2, order + 1):
        basis.append(2.0 * op @ basis[-1] - basis[-2])
    return basis


def chebyshev_truncation_reference(op: np.ndarray, x: np.ndarray, thetas: Sequence[float]) -> np.ndarray:
    """``sum_i thetas[i] * T_i(op) @ x``."""
    basis = chebyshev_basis(op, len(thetas) - 1)
    x = np.asarray(x, dtype=np.float64)
    return sum(th * (t @ x) for th, t in zip(thetas, basis))


def tied_thetas(theta_lo: float, theta_hi: float) -> tuple[float, float, float, float]:
    """Cubic coefficients obeying the pairing used to split the filter.

    Returns ``(t0, t1, t2, t3)`` with ``t0 - t2 = -t1 + 3 t3 = theta_lo`` and
    ``2 t2 = -4 t3 = theta_hi``, under which the cubic filter collapses to
    ``theta_lo (I - L) x + L^2 theta_hi (I - L) x``.
    """
    t2 = theta_hi / 2.0
    t3 = -theta_hi / 4.0
    t0 = theta_lo + t2
    t1 = 3.0 * t3 - theta_lo
    return t0, t1, t2, t3


def split_filter(op: np.ndarray, x: np.ndarray, theta_lo: float, theta_hi: float) -> np.ndarray:
    """Two-term form ``theta_lo (I - op) x + op^2 theta_hi (I - op) x``."""
    op = np.asarray(op, dtype=np.float64)
    resid = x - op @ x
    return theta_lo * resid + theta_hi * (op @ (op @ resid))
