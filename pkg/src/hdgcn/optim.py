"""AdaBelief and the training driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, UsageError
from .model import HDGCN
from .tensor import Parameter, Tape, backward, cross_entropy_loss, select_rows, vstack

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    seed: int = 0
    batch_size: int = 32
    eval_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("batch_size and eval_every must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdaBeliefState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    s: dict[str, np.ndarray] = field(default_factory=dict)


def adabelief_step(state: AdaBeliefState, params: Sequence[Parameter]) -> None:
    """One in-place AdaBelief update of every parameter.

    m <- b1 m + (1 - b1) g
    s <- b2 s + (1 - b2) (g - m)^2 + eps
    p <- p - lr * m_hat / (sqrt(s_hat) + eps)   (hats are bias-corrected)
    """
    for p in params:
        if p.grad is None:
            raise UsageError(f"parameter {p.name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(g)
            state.s[p.name] = np.zeros_like(g)
        s = state.s[p.name]
        m *= b1
        m += (1.0 - b1) * g
        d = g - m
        s *= b2
        s += (1.0 - b2) * d * d + state.eps
        if state.weight_decay:
            p.values[...] *= 1.0 - state.lr * state.weight_decay
        p.values[...] -= state.lr * (m / c1) / (np.sqrt(s / c2) + state.eps)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def classification_metrics(y_true, y_pred, num_classes: int) -> dict[str, float]:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        return {"accuracy": float("nan"), "macro_f1": float("nan"), "micro_f1": float("nan")}
    acc = float((y_true == y_pred).mean())
    f1s = []
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        if tp + fp + fn == 0:
            continue
        f1s.append(2 * tp / (2 * tp + fp + fn))
    # single-label: micro-F1 coincides with accuracy
    return {"accuracy": acc, "macro_f1": float(np.mean(f1s)), "micro_f1": acc}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[dict]
    best_state: dict[str, np.ndarray]
    best_epoch: int
    metrics: dict[str, float]
    final_state: dict[str, np.ndarray] | None = None


def _node_split(dataset, name):
    mask = dataset.graph.masks.get(name)
    return np.flatnonzero(mask) if mask is not None else np.zeros(0, dtype=np.int64)


def evaluate(model: HDGCN, dataset, split: str) -> dict[str, float]:
    """Accuracy / F1 / loss on one split of a node or graph dataset."""
    if model.cfg.task == "node":
        idx = _node_split(dataset, split)
        if idx.size == 0:
            return classification_metrics([], [], model.cfg.num_classes) | {"loss": float("nan")}
        logits = model(dataset.graph).logits
        rows = select_rows(logits, idx)
        y = dataset.graph.labels[idx]
    else:
        idx = dataset.splits.get(split, np.zeros(0, dtype=np.int64))
        if len(idx) == 0:
            return classification_metrics([], [], model.cfg.num_classes) | {"loss": float("nan")}
        rows = vstack([model(dataset.graphs[i]).logits for i in idx])
        y = dataset.labels[np.asarray(idx)]
    loss = cross_entropy_loss(rows, y).item()
    pred = rows.values.argmax(axis=1)
    return classification_metrics(y, pred, model.cfg.num_classes) | {"loss": loss}


def _graph_batches(train_idx: np.ndarray, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(train_idx)
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def train(model: HDGCN, dataset, cfg: TrainConfig) -> TrainResult:
    """Optimise ``model`` with AdaBelief; keep the best-validation weights.

    Node datasets train full-batch on the train mask; graph datasets train on
    shuffled mini-batches of graphs. Selection ranks epochs by validation
    accuracy then validation loss, falling back to the training split when
    there is no validation split.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdaBeliefState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    node_task = model.cfg.task == "node"
    if node_task:
        train_idx = _node_split(dataset, "train")
        labels = dataset.graph.labels
        if train_idx.size and np.any(labels[train_idx] < 0):
            raise DataError("training nodes must all be labelled")
        has_val = _node_split(dataset, "val").size > 0
    else:
        train_idx = np.asarray(dataset.splits.get("train", []), dtype=np.int64)
        has_val = len(dataset.splits.get("val", [])) > 0
    if train_idx.size == 0:
        raise DataError("training split is empty")

    history: list[dict] = []
    best_key = None
    best_state = model.state_dict()
    best_epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        if node_task:
            batches = [None]
        else:
            batches = list(_graph_batches(train_idx, cfg.batch_size, rng))
        for batch in batches:
            model.zero_grad()
            with Tape():
                if node_task:
                    out = model(dataset.graph, training=True, rng=rng)
                    loss = cross_entropy_loss(select_rows(out.logits, train_idx), labels[train_idx])
                else:
                    logits = vstack([model(dataset.graphs[i], training=True, rng=rng).logits for i in batch])
                    loss = cross_entropy_loss(logits, dataset.labels[batch])
            backward(loss, params)
            adabelief_step(state, params)
            losses.append(loss.item())
        if epoch % cfg.eval_every and epoch != cfg.epochs:
            continue
        tr = evaluate(model, dataset, "train")
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "train_acc": tr["accuracy"]}
        if has_val:
            va = evaluate(model, dataset, "val")
            record["val_loss"] = va["loss"]
            record["val_acc"] = va["accuracy"]
            key = (va["accuracy"], -va["loss"])
        else:
            key = (tr["accuracy"], -tr["loss"])
        history.append(record)
        log.debug("epoch %d %s", epoch, record)
        if best_key is None or key > best_key:
            best_key = key
            best_state = model.state_dict()
            best_epoch = epoch

    final_state = model.state_dict()
    model.load_state_dict(best_state)
    metrics = {}
    for split in ("train", "val", "test"):
        m = evaluate(model, dataset, split)
        metrics[f"{split}_acc"] = m["accuracy"]
        metrics[f"{split}_macro_f1"] = m["macro_f1"]
        metrics[f"{split}_micro_f1"] = m["micro_f1"]
    metrics["best_epoch"] = best_epoch
    return TrainResult(history, best_state, best_epoch, metrics, final_state)
