"""Graph structures: CSR adjacency, normalisation, sparse products, text graphs.

Also holds the line-oriented graph file format and the two-node feature
alignment analyzer used by the ``propagate`` command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CapabilityError, DataError, DimensionError, ParseError
from .tensor import Tensor, linear_map

DENSE_GUARD = 10_000
MASK_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class SparseAdjacency:
    """Square matrix in CSR form with sorted column indices per row."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]]) -> "SparseAdjacency":
        """Build a symmetric adjacency from undirected ``(i, j, w)`` triples.

        Repeated pairs are merged by summing their weights.
        """
        rows, cols, vals = [], [], []
        for i, j, w in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise DataError(f"edge ({i}, {j}) outside node range [0, {n})")
            if w < 0 or not math.isfinite(w):
                raise DataError(f"edge ({i}, {j}) has invalid weight {w}")
            rows.append(i)
            cols.append(j)
            vals.append(float(w))
            if i != j:
                rows.append(j)
                cols.append(i)
                vals.append(float(w))
        return cls.from_coo(n, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals))

    @classmethod
    def from_coo(cls, n: int, rows: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> "SparseAdjacency":
        # directed triples; duplicates summed
        m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(n, m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(np.float64))

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseAdjacency":
        dense = np.asarray(dense, dtype=np.float64)
        r, c = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], r, c, dense[r, c])

    @classmethod
    def identity(cls, n: int) -> "SparseAdjacency":
        idx = np.arange(n)
        return cls.from_coo(n, idx, idx, np.ones(n))

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, self.col_indices, self.row_offsets), shape=(self.n, self.n))

    @cached_property
    def _csr_t(self) -> sp.csr_matrix:
        return self._csr.T.tocsr()

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    def degrees(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for i in range(self.n):
            lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
            out[i, self.col_indices[lo:hi]] = self.weights[lo:hi]
        return out

    def edges(self) -> list[tuple[int, int, float]]:
        """Upper-triangle ``(i, j, w)`` triples with ``i < j``."""
        out = []
        for i in range(self.n):
            for p in range(self.row_offsets[i], self.row_offsets[i + 1]):
                j = int(self.col_indices[p])
                if i < j:
                    out.append((i, j, float(self.weights[p])))
        return out

    def asymmetric_pair(self) -> tuple[int, int] | None:
        diff = (self._csr - self._csr_t).tocoo()
        bad = np.flatnonzero(diff.data != 0)
        if bad.size == 0:
            return None
        k = bad[0]
        return int(diff.row[k]), int(diff.col[k])

    def pattern(self) -> set[tuple[int, int]]:
        rows = np.repeat(np.arange(self.n), np.diff(self.row_offsets))
        return set(zip(rows.tolist(), self.col_indices.tolist()))

    def dot(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def dot_t(self, x: np.ndarray) -> np.ndarray:
        return self._csr_t @ x


def normalize_adjacency(a: SparseAdjacency) -> SparseAdjacency:
    """Symmetric renormalisation ``(D+I)^-1/2 (A+I) (D+I)^-1/2``."""
    pair = a.asymmetric_pair()
    if pair is not None:
        i, j = pair
        raise DataError(f"adjacency is not symmetric at ({i}, {j})")
    deg = a.degrees() + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    a_hat = (a._csr + sp.identity(a.n, format="csr")).tocoo()
    # pair the degree factors first so (i, j) and (j, i) round identically
    vals = a_hat.data * (inv_sqrt[a_hat.row] * inv_sqrt[a_hat.col])
    return SparseAdjacency.from_coo(a.n, a_hat.row, a_hat.col, vals)


def random_walk_transition(a: SparseAdjacency) -> SparseAdjacency:
    """Row-stochastic ``(D+I)^-1 (A+I)``. Not symmetric on irregular graphs."""
    deg = a.degrees() + 1.0
    a_hat = (a._csr + sp.identity(a.n, format="csr")).tocoo()
    return SparseAdjacency.from_coo(a.n, a_hat.row, a_hat.col, a_hat.data / deg[a_hat.row])


def spmm(a: SparseAdjacency, x: Tensor) -> Tensor:
    if a.n != x.rows:
        raise DimensionError(f"spmm: adjacency {a.n}x{a.n} and features {x.shape}")
    return linear_map(a.dot, a.dot_t, x, op="spmm")


def power_transition(a: SparseAdjacency, k: int) -> Tensor:
    """Dense ``a^k``, built by repeated sparse products on the identity."""
    if k < 1:
        raise ValueError(f"power must be >= 1, got {k}")
    if a.n > DENSE_GUARD:
        raise CapabilityError(
            f"dense power of a {a.n}-node graph exceeds the {DENSE_GUARD} guard; apply spmm iteratively instead"
        )
    out = np.eye(a.n)
    for _ in range(k):
        out = a.dot(out)
    return Tensor(out)


@dataclass
class Graph:
    adjacency: SparseAdjacency
    features: Tensor | None = None
    labels: np.ndarray | None = None
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    tokens: list[str] | None = None
    vocab_index: np.ndarray | None = None

    def __post_init__(self):
        n = self.adjacency.n
        if self.features is not None and self.features.rows != n:
            raise DimensionError(f"features have {self.features.rows} rows for {n} nodes")
        for name, mask in self.masks.items():
            if mask.shape != (n,):
                raise DimensionError(f"mask {name!r} has length {mask.shape[0]} for {n} nodes")
        names = list(self.masks)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                both = np.flatnonzero(self.masks[a] & self.masks[b])
                if both.size:
                    raise DataError(f"node {both[0]} is in both {a!r} and {b!r} masks")

    @property
    def n(self) -> int:
        return self.adjacency.n

    @cached_property
    def normalized(self) -> SparseAdjacency:
        return normalize_adjacency(self.adjacency)


# ---------------------------------------------------------------------------
# text graphs
# ---------------------------------------------------------------------------


def cooccurrence_edges(tokens: Sequence[str], window: int) -> tuple[list[str], set[tuple[int, int]]]:
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    if not tokens:
        raise DataError("cannot build a graph from an empty token list")
    nodes: dict[str, int] = {}
    ids = [nodes.setdefault(t, len(nodes)) for t in tokens]
    edges: set[tuple[int, int]] = set()
    for start in range(max(1, len(ids) - window + 1)):
        span = sorted(set(ids[start:start + window]))
        for a in range(len(span)):
            for b in range(a + 1, len(span)):
                edges.add((span[a], span[b]))
    return list(nodes), edges


def build_cooccurrence_graph(tokens: Sequence[str], window: int = 3, vocab: dict[str, int] | None = None) -> Graph:
    """Unweighted word co-occurrence graph of one document.

    Nodes are the distinct tokens in order of first appearance. When
    ``vocab`` is given, the vocabulary index of each node (``-1`` if missing) goes to ``graph.vocab_index``.
    """
    node_tokens, edges = cooccurrence_edges(tokens, window)
    adj = SparseAdjacency.from_edges(len(node_tokens), ((i, j, 1.0) for i, j in sorted(edges)))
    g = Graph(adj, tokens=node_tokens)
    if vocab is not None:
        g.vocab_index = np.array([vocab.get(t, -1) for t in node_tokens], dtype=np.int64)
    return g


# ---------------------------------------------------------------------------
# propagation analyzer
# ---------------------------------------------------------------------------


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def _unit_rows(h: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    return np.divide(h, norms, out=np.zeros_like(h), where=norms > 0)


def feature_alignment_steps(
    a: SparseAdjacency,
    features: np.ndarray | Tensor,
    src: int,
    dst: int,
    use_transition: bool,
    threshold: float = 0.99,
    max_steps: int = 100,
) -> int | None:
    """Steps of propagation until ``cos(h[src], h[dst]) >= threshold``.

    With the transition, features move under the row-stochastic random-walk
    operator. Without it, the symmetric operator is applied and every row is
    rescaled to unit norm after each step, so no probability mass moves.
    Returns ``None`` if ``max_steps`` is reached first.
    """
    if src == dst:
        raise ValueError("src and dst must differ")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    for node in (src, dst):
        if not 0 <= node < a.n:
            raise DataError(f"node {node} outside [0, {a.n})")
    h = np.array(features.values if isinstance(features, Tensor) else features, dtype=np.float64)
    op = random_walk_transition(a) if use_transition else normalize_adjacency(a)
    if not use_transition:
        h = _unit_rows(h)
    for step in range(max_steps + 1):
        if _cosine(h[src], h[dst]) >= threshold:
            return step
        if step == max_steps:
            break
        h = op.dot(h)
        if not use_transition:
            h = _unit_rows(h)
    return None


def row_variance(h: np.ndarray | Tensor, adjacency: SparseAdjacency | None = None) -> float:
    """Spread of node embeddings around the propagation fixed point.

    Without ``adjacency`` this is the across-node variance averaged over
    columns. With it, rows are measured against the stationary direction
    ``sqrt(deg + 1)`` of the normalised operator, which reduces to the plain
    variance on regular graphs and never increases under that operator.
    """
    h = np.asarray(h.values if isinstance(h, Tensor) else h, dtype=np.float64)
    n = h.shape[0]
    if adjacency is None:
        u = np.ones(n)
    else:
        u = np.sqrt(adjacency.degrees() + 1.0)
    u = u / np.linalg.norm(u)
    resid = h - np.outer(u, u @ h)
    return float((resid * resid).sum() / h.size)


# ---------------------------------------------------------------------------
# graph file format
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    return repr(float(x))


def write_graph(path: str | Path, graph: Graph) -> None:
    """Write the line-oriented graph format (``n``, ``e``, ``x``, ``y``, ``m``)."""
    lines = [f"n {graph.n}"]
    for i, j, w in graph.adjacency.edges():
        lines.append(f"e {i} {j} {format_float(w)}")
    if graph.features is not None:
        for i, row in enumerate(graph.features.values):
            lines.append("x " + str(i) + " " + " ".join(format_float(v) for v in row))
    if graph.labels is not None:
        for i, y in enumerate(graph.labels):
            if y >= 0:
                lines.append(f"y {i} {int(y)}")
    for name in MASK_NAMES:
        mask = graph.masks.get(name)
        if mask is not None:
            lines.extend(f"m {i} {name}" for i in np.flatnonzero(mask))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok!r}", lineno) from None


def _float(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"expected a number, got {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", lineno)
    return v


def read_graph(path: str | Path) -> Graph:
    """Parse a graph file. Unlabelled nodes get label ``-1``."""
    n = None
    edges: list[tuple[int, int, float]] = []
    feats: dict[int, list[float]] = {}
    labels: dict[int, int] = {}
    mask_of: dict[int, str] = {}
    seen_edges: set[tuple[int, int]] = set()

    def node(tok: str, lineno: int) -> int:
        v = _int(tok, lineno)
        if not 0 <= v < n:
            raise ParseError(f"node {v} outside [0, {n})", lineno)
        return v

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            tag = parts[0]
            if n is None and tag != "n":
                raise ParseError("first line must be 'n <count>'", lineno)
            if tag == "n":
                if n is not None:
                    raise ParseError("duplicate 'n' line", lineno)
                if len(parts) != 2:
                    raise ParseError("expected 'n <count>'", lineno)
                n = _int(parts[1], lineno)
                if n < 1:
                    raise ParseError("node count must be positive", lineno)
            elif tag == "e":
                if len(parts) != 4:
                    raise ParseError("expected 'e <i> <j> <weight>'", lineno)
                i, j = node(parts[1], lineno), node(parts[2], lineno)
                if i >= j:
                    raise ParseError(f"edge endpoints must satisfy i < j, got {i} {j}", lineno)
                if (i, j) in seen_edges:
                    raise ParseError(f"duplicate edge {i} {j}", lineno)
                seen_edges.add((i, j))
                w = _float(parts[3], lineno)
                if w < 0:
                    raise ParseError(f"negative weight {w}", lineno)
                edges.append((i, j, w))
            elif tag == "x":
                if len(parts) < 3:
                    raise ParseError("expected 'x <node> <v1> ... <vd>'", lineno)
                i = node(parts[1], lineno)
                if i in feats:
                    raise ParseError(f"duplicate features for node {i}", lineno)
                feats[i] = [_float(t, lineno) for t in parts[2:]]
            elif tag == "y":
                if len(parts) != 3:
                    raise ParseError("expected 'y <node> <class>'", lineno)
                i = node(parts[1], lineno)
                c = _int(parts[2], lineno)
                if c < 0:
                    raise ParseError(f"negative class {c}", lineno)
                if i in labels:
                    raise ParseError(f"duplicate label for node {i}", lineno)
                labels[i] = c
            elif tag == "m":
                if len(parts) != 3 or parts[2] not in MASK_NAMES:
                    raise ParseError("expected 'm <node> <train|val|test>'", lineno)
                i = node(parts[1], lineno)
                if i in mask_of and mask_of[i] != parts[2]:
                    raise DataError(f"line {lineno}: node {i} is in both {mask_of[i]!r} and {parts[2]!r} masks")
                mask_of[i] = parts[2]
            else:
                raise ParseError(f"unknown line tag {tag!r}", lineno)
    if n is None:
        raise ParseError("empty graph file")

    adj = SparseAdjacency.from_edges(n, edges)
    features = None
    if feats:
        widths = {len(v) for v in feats.values()}
        if len(widths) != 1 or len(feats) != n:
            raise DataError(f"feature lines must cover all {n} nodes with one width, got widths {sorted(widths)}")
        features = Tensor(np.array([feats[i] for i in range(n)]))
    y = None
    if labels:
        y = np.full(n, -1, dtype=np.int64)
        for i, c in labels.items():
            y[i] = c
    masks = {}
    for name in MASK_NAMES:
        idx = [i for i, m in mask_of.items() if m == name]
        if idx:
            mask = np.zeros(n, dtype=bool)
            mask[idx] = True
            masks[name] = mask
    return Graph(adj, features, y, masks)
