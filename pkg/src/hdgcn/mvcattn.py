"""Multi-vote cross-attention between nodes and a small supernode set.

Nodes are pooled into ``M`` supernodes (multi-vote projection), supernodes
attend over nodes to refresh their values (forward cross-attention), and
nodes attend over supernodes to read them back (backward cross-attention).
Attention matrices are ``M x n`` and ``n x M``; no ``n x n`` buffer is built
on the forward path, so cost is linear in the node count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapabilityError, DimensionError
from .graph import DENSE_GUARD
from .tensor import (
    Parameter,
    Tensor,
    layer_norm_rows,
    matmul,
    softmax_rows,
    sum_rows,
    transpose,
    vstack,
)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class MVCAttnWeights:
    votes: list[Parameter]  # M matrices d_k x d_k
    fk: Parameter  # d_k x d_c
    fq: Parameter  # d_c x d_k
    fv: Parameter  # d_k x d_k
    bq: Parameter  # d_k x d_a
    bk: Parameter  # d_a x d_k
    bv: Parameter  # d_k x d_k
    norm_gain: Parameter  # 1 x d_k
    norm_bias: Parameter  # 1 x d_k

    @classmethod
    def init(cls, d_k: int, m: int, rng: np.random.Generator, prefix: str = "mvc", d_c: int | None = None, d_a: int | None = None) -> "MVCAttnWeights":
        if m < 1:
            raise ValueError(f"need at least one supernode, got M={m}")
        d_c = d_k if d_c is None else d_c
        d_a = d_k if d_a is None else d_a

        def p(name, rows, cols):
            return Parameter(f"{prefix}.{name}", glorot(rng, rows, cols))

        votes = [p(f"vote{i}", d_k, d_k) for i in range(m)]
        return cls(
            votes=votes,
            fk=p("fk", d_k, d_c),
            fq=p("fq", d_c, d_k),
            fv=p("fv", d_k, d_k),
            bq=p("bq", d_k, d_a),
            bk=p("bk", d_a, d_k),
            bv=p("bv", d_k, d_k),
            norm_gain=Parameter(f"{prefix}.norm_gain", np.ones((1, d_k))),
            norm_bias=Parameter(f"{prefix}.norm_bias", np.zeros((1, d_k))),
        )

    @property
    def d_k(self) -> int:
        return self.fv.shape[0]

    @property
    def num_supernodes(self) -> int:
        return len(self.votes)

    def parameters(self) -> list[Parameter]:
        return [*self.votes, self.fk, self.fq, self.fv, self.bq, self.bk, self.bv, self.norm_gain, self.norm_bias]


@dataclass
class AttentionTrace:
    """Attention factors of one order: ``a_f`` is M x n, ``a_b`` is n x M."""

    order: int
    a_f: Tensor
    a_b: Tensor

    def to_json(self) -> str:
        return json.dumps(
            {"order": self.order, "a_f": self.a_f.values.tolist(), "a_b": self.a_b.values.tolist()}
        )

    def write(self, directory: str | Path, stem: str | None = None) -> list[Path]:
        """Write ``<stem>.json`` plus one CSV per factor; returns the paths."""
        directory = Path(directory)
        stem = stem or f"trace_k{self.order}"
        paths = [directory / f"{stem}.json", directory / f"{stem}_a_f.csv", directory / f"{stem}_a_b.csv"]
        paths[0].write_text(self.to_json() + "\n", encoding="utf-8")
        write_matrix_csv(paths[1], self.a_f.values)
        write_matrix_csv(paths[2], self.a_b.values)
        return paths

    @classmethod
    def from_json(cls, text: str) -> "AttentionTrace":
        obj = json.loads(text)
        return cls(int(obj["order"]), Tensor(np.array(obj["a_f"])), Tensor(np.array(obj["a_b"])))


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(matrix)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_csv(path: str | Path) -> np.ndarray:
    rows = [[float(v) for v in line.split(",")] for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
    return np.array(rows)


def _check_width(z: Tensor, w: MVCAttnWeights) -> None:
    if z.cols != w.d_k:
        raise DimensionError(f"node embeddings have width {z.cols}, attention expects d_k={w.d_k}")


def mv_proj(z: Tensor, w: MVCAttnWeights, eps: float = 1e-5) -> Tensor:
    """Supernode ``m`` = layer_norm(sum over nodes of ``z_v @ W_m``)."""
    _check_width(z, w)
    pooled = sum_rows(z)
    votes = vstack([matmul(pooled, v) for v in w.votes])
    return layer_norm_rows(votes, w.norm_gain, w.norm_bias, eps)


def forward_cross_attention(z: Tensor, s: Tensor, w: MVCAttnWeights) -> tuple[Tensor, Tensor]:
    """Supernodes attend over nodes. Returns ``(s_hat, a_f)``."""
    _check_width(z, w)
    query = matmul(matmul(s, transpose(w.fq)), transpose(w.fk))
    scores = matmul(query, transpose(z))
    a_f = softmax_rows(scores, math.sqrt(w.d_k))
    s_hat = matmul(matmul(a_f, z), w.fv)
    return s_hat, a_f


def backward_cross_attention(s_hat: Tensor, z: Tensor, w: MVCAttnWeights) -> tuple[Tensor, Tensor]:
    """Nodes attend over supernodes. Returns ``(z_new, a_b)``."""
    _check_width(z, w)
    keys = matmul(matmul(s_hat, w.bq), w.bk)
    scores = matmul(z, transpose(keys))
    a_b = softmax_rows(scores, math.sqrt(w.d_k))
    z_new = matmul(a_b, matmul(s_hat, w.bv))
    return z_new, a_b


def mvc_attention(z: Tensor, w: MVCAttnWeights, order: int = 1) -> tuple[Tensor, AttentionTrace]:
    if z.rows < 1:
        raise DimensionError("attention needs at least one node")
    s = mv_proj(z, w)
    s_hat, a_f = forward_cross_attention(z, s, w)
    z_new, a_b = backward_cross_attention(s_hat, z, w)
    return z_new, AttentionTrace(order, a_f, a_b)


def effective_dynamic_adjacency(trace: AttentionTrace) -> Tensor:
    """Dense ``a_b @ a_f``; diagnostic only."""
    n = trace.a_b.rows
    if n > DENSE_GUARD:
        raise CapabilityError(f"dense dynamic adjacency for {n} nodes exceeds the {DENSE_GUARD} guard")
    return Tensor(trace.a_b.values @ trace.a_f.values)
