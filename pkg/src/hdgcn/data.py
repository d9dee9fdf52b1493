"""Dataset loaders: node-classification graph files, labelled text corpora, word vectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .graph import Graph, build_cooccurrence_graph, read_graph
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class NodeDataset:
    graph: Graph
    num_classes: int

    @property
    def feature_dim(self) -> int:
        return self.graph.features.cols


@dataclass
class TextCorpus:
    documents: list[list[str]]
    labels: np.ndarray
    vocab: dict[str, int]
    embeddings: Tensor | None = None
    oov_count: int = 0


@dataclass
class GraphDataset:
    """Per-document graphs with labels and index splits."""

    graphs: list[Graph]
    labels: np.ndarray
    num_classes: int
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].features.cols


def load_node_dataset(path: str | Path, num_classes: int | None = None) -> NodeDataset:
    """Read a graph file and validate it for node classification.

    Unlabelled nodes may appear outside the train split. The normalised
    adjacency is computed eagerly.
    """
    g = read_graph(path)
    if g.features is None:
        g.features = Tensor(np.eye(g.n))
    if g.labels is None:
        raise DataError(f"{path}: node dataset has no label lines")
    seen = int(g.labels.max()) + 1
    num_classes = seen if num_classes is None else num_classes
    if seen > num_classes:
        raise DataError(f"{path}: label {seen - 1} exceeds num_classes={num_classes}")
    for name, mask in g.masks.items():
        unlabelled = np.flatnonzero(mask & (g.labels < 0))
        if unlabelled.size:
            raise DataError(f"{path}: node {unlabelled[0]} in {name!r} split has no label")
    _ = g.normalized
    return NodeDataset(g, num_classes)


def load_word_vectors(path: str | Path, dim: int) -> tuple[dict[str, int], Tensor]:
    """GloVe-style text vectors: ``token v1 ... v_dim`` per line."""
    index: dict[str, int] = {}
    rows: list[list[float]] = []
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ParseError(f"expected {dim + 1} fields, got {len(parts)}", lineno)
            token = parts[0]
            if token in index:
                duplicates += 1
                continue
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric vector entry", lineno) from None
            index[token] = len(rows) - 1
    if duplicates:
        log.warning("%s: %d duplicate tokens ignored (first occurrence kept)", path, duplicates)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return index, Tensor(values)


def read_corpus(path: str | Path) -> tuple[list[list[str]], np.ndarray]:
    docs, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            label, sep, text = line.partition("\t")
            if not sep:
                raise ParseError("expected '<class>\\t<tokens>'", lineno)
            try:
                y = int(label)
            except ValueError:
                raise ParseError(f"class {label!r} is not an integer", lineno) from None
            if y < 0:
                raise ParseError(f"negative class {y}", lineno)
            tokens = text.split()
            if not tokens:
                raise DataError(f"line {lineno}: empty document")
            docs.append(tokens)
            labels.append(y)
    return docs, np.array(labels, dtype=np.int64)


def build_vocab(documents: list[list[str]]) -> dict[str, int]:
    vocab: dict[str, int] = {}
    for doc in documents:
        for t in doc:
            vocab.setdefault(t, len(vocab))
    return vocab


def document_graphs(corpus: TextCorpus, window: int = 3) -> list[Graph]:
    """Co-occurrence graph per document with node features attached.

    With embeddings, rows are looked up by token and missing tokens share a
    zero OOV row. Without them, nodes get one-hot vocabulary features (tokens
    outside the vocabulary get a zero row).
    """
    graphs = []
    oov = 0
    for doc in corpus.documents:
        if corpus.embeddings is not None:
            g = build_cooccurrence_graph(doc, window, corpus.vocab)
            emb = corpus.embeddings.values
            feats = np.zeros((g.n, emb.shape[1]))
            hit = g.vocab_index >= 0
            feats[hit] = emb[g.vocab_index[hit]]
            oov += int((~hit).sum())
        else:
            g = build_cooccurrence_graph(doc, window, corpus.vocab)
            feats = np.zeros((g.n, len(corpus.vocab)))
            hit = np.flatnonzero(g.vocab_index >= 0)
            feats[hit, g.vocab_index[hit]] = 1.0
            oov += g.n - hit.size
        g.features = Tensor(feats)
        graphs.append(g)
    corpus.oov_count = oov
    if oov:
        log.warning("%d document nodes fell back to the OOV row", oov)
    return graphs


def load_text_corpus(
    path: str | Path,
    window: int = 3,
    embeddings: tuple[dict[str, int], Tensor] | None = None,
    vocab: dict[str, int] | None = None,
) -> tuple[TextCorpus, list[Graph]]:
    """Read ``<class>\\t<tokens>`` lines and build one graph per document.

    ``vocab`` fixes the one-hot vocabulary (e.g. the training vocabulary when
    loading a test file); ignored when ``embeddings`` are given.
    """
    docs, labels = read_corpus(path)
    if embeddings is not None:
        vocab, table = embeddings
        corpus = TextCorpus(docs, labels, vocab, table)
    else:
        corpus = TextCorpus(docs, labels, vocab if vocab is not None else build_vocab(docs))
    return corpus, document_graphs(corpus, window)


def split_indices(n: int, val_fraction: float, seed: int) -> dict[str, np.ndarray]:
    """Deterministic train/val split of ``range(n)``."""
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    return {"train": np.sort(order[n_val:]), "val": np.sort(order[:n_val])}
