"""Command line: ``train``, ``eval``, ``inspect`` and ``propagate``.

Every command reads plain files and writes UTF-8 artifacts into one output
directory. Reruns with the same inputs produce the same bytes.

Exit codes: 0 ok, 2 usage or config problem, 3 shape mismatch, 4 corrupt
artifact (checkpoint or data file that fails to parse).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

import numpy as np

from .data import (
    GraphDataset,
    NodeDataset,
    load_node_dataset,
    load_text_corpus,
    load_word_vectors,
    split_indices,
)
from .errors import CheckpointError, ConfigError, DataError, DimensionError, ParseError, UsageError
from .graph import feature_alignment_steps, read_graph
from .model import HDGCN, HDGCNConfig
from .mvcattn import effective_dynamic_adjacency, write_matrix_csv
from .optim import TrainConfig, evaluate, train

log = logging.getLogger("hdgcn")

EXIT_OK, EXIT_USAGE, EXIT_SHAPE, EXIT_CORRUPT = 0, 2, 3, 4
INSPECT_GUARD = 2000  # largest graph whose full dynamic adjacency gets exported


@dataclass
class DataConfig:
    path: str = ""  # node task: graph file
    train: str = ""  # graph task: labelled corpus
    test: str = ""
    embeddings: str = ""
    embedding_dim: int = 300
    window: int = 3
    val_fraction: float = 0.1


@dataclass
class RunConfig:
    task: str = "node"
    out: str = "runs/default"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: HDGCNConfig = field(default_factory=HDGCNConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    explicit: set = field(default_factory=set)  # "section.key" entries set by the user

    def validate(self, base: Path) -> "RunConfig":
        if self.task not in ("node", "graph"):
            raise ConfigError(f"[run] task must be 'node' or 'graph', got {self.task!r}")
        self.model.task = self.task
        self.train.seed = self.seed
        needed = ["path"] if self.task == "node" else ["train"]
        for key in needed + [k for k in ("test", "embeddings") if getattr(self.data, k)]:
            value = getattr(self.data, key)
            if not value:
                raise ConfigError(f"[data] {key} is required for the {self.task} task")
            if not _resolve(base, value).is_file():
                raise ConfigError(f"[data] {key}: no such file {value}")
        if self.data.window < 1:
            raise ConfigError(f"[data] window must be >= 1, got {self.data.window}")
        if not 0.0 <= self.data.val_fraction < 1.0:
            raise ConfigError("[data] val_fraction must lie in [0, 1)")
        self.train.validate()
        return self


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _coerce(cls, raw: dict[str, str], section: str):
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    out = {}
    for key, text in raw.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        kind = hints[key]
        try:
            if kind is int:
                out[key] = int(text)
            elif kind is float:
                out[key] = float(text)
            else:
                out[key] = text
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {kind.__name__}") from None
    return out


def load_run_config(path: str | Path, overrides: list[str] = ()) -> RunConfig:
    """Read an INI run file; ``overrides`` are ``section.key=value`` strings."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config {path}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value)
    unknown = set(parser.sections()) - {"run", "data", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")

    def section(name):
        return dict(parser.items(name)) if parser.has_section(name) else {}

    run_raw = section("run")
    run_kw = _coerce(RunConfig, {k: v for k, v in run_raw.items() if k in ("task", "out", "seed")}, "run")
    extra = set(run_raw) - {"task", "out", "seed"}
    if extra:
        raise ConfigError(f"[run] unknown key {sorted(extra)[0]!r}")
    model_raw = section("model")
    cfg = RunConfig(
        **run_kw,
        data=DataConfig(**_coerce(DataConfig, section("data"), "data")),
        model=HDGCNConfig.from_dict(_coerce(HDGCNConfig, model_raw, "model")),
        train=TrainConfig.from_dict(_coerce(TrainConfig, section("train"), "train")),
        explicit={f"model.{k}" for k in model_raw},
    )
    return cfg.validate(Path(path).resolve().parent)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _embedding_table(data: DataConfig, base: Path):
    if not data.embeddings:
        return None
    return load_word_vectors(_resolve(base, data.embeddings), data.embedding_dim)


def build_dataset(cfg: RunConfig, base: Path) -> tuple[NodeDataset | GraphDataset, dict]:
    """Load the configured data; returns the dataset and checkpoint metadata."""
    data = cfg.data
    if cfg.task == "node":
        explicit_c = cfg.model.num_classes if "model.num_classes" in cfg.explicit else None
        ds = load_node_dataset(_resolve(base, data.path), explicit_c)
        return ds, {"task": "node"}
    table = _embedding_table(data, base)
    corpus, graphs = load_text_corpus(_resolve(base, data.train), data.window, table)
    labels = corpus.labels
    splits = split_indices(len(graphs), data.val_fraction, cfg.seed)
    if data.test:
        test_corpus, test_graphs = load_text_corpus(_resolve(base, data.test), data.window, table, corpus.vocab)
        splits["test"] = np.arange(len(graphs), len(graphs) + len(test_graphs))
        graphs = graphs + test_graphs
        labels = np.concatenate([labels, test_corpus.labels])
    seen = int(labels.max()) + 1
    num_classes = cfg.model.num_classes if "model.num_classes" in cfg.explicit else seen
    if seen > num_classes:
        raise DataError(f"label {seen - 1} exceeds num_classes={num_classes}")
    meta = {"task": "graph", "window": data.window}
    if table is not None:
        meta["embeddings"] = str(_resolve(base, data.embeddings))
        meta["embedding_dim"] = data.embedding_dim
    else:
        meta["vocab"] = sorted(corpus.vocab, key=corpus.vocab.get)
    return GraphDataset(graphs, labels, num_classes, splits), meta


def _fit_model_config(cfg: RunConfig, ds) -> None:
    width = ds.feature_dim
    if "model.d_in" in cfg.explicit and cfg.model.d_in != width:
        raise DimensionError(f"[model] d_in={cfg.model.d_in} but the data has feature width {width}")
    cfg.model.d_in = width
    cfg.model.num_classes = ds.num_classes
    cfg.model.validate()


def dataset_for_checkpoint(model: HDGCN, path: Path) -> NodeDataset | GraphDataset:
    """Rebuild an evaluation dataset with the feature pipeline stored in ``model.meta``."""
    meta = model.meta
    if model.cfg.task == "node":
        ds = load_node_dataset(path, model.cfg.num_classes)
        if not ds.graph.masks.get("test", np.zeros(0, bool)).any():
            ds.graph.masks["test"] = ds.graph.labels >= 0
        return ds
    window = int(meta.get("window", 3))
    if "embeddings" in meta:
        table = load_word_vectors(meta["embeddings"], int(meta["embedding_dim"]))
        corpus, graphs = load_text_corpus(path, window, table)
    else:
        vocab = {tok: i for i, tok in enumerate(meta.get("vocab", []))}
        if not vocab:
            raise CheckpointError("checkpoint lacks the vocabulary needed for one-hot features")
        corpus, graphs = load_text_corpus(path, window, None, vocab)
    if corpus.labels.size and int(corpus.labels.max()) >= model.cfg.num_classes:
        raise DataError(f"label {int(corpus.labels.max())} exceeds the model's {model.cfg.num_classes} classes")
    return GraphDataset(graphs, corpus.labels, model.cfg.num_classes, {"test": np.arange(len(graphs))})


def _check_width(model: HDGCN, ds) -> None:
    width = ds.feature_dim
    if width != model.cfg.d_in:
        raise DimensionError(f"dataset features are {width} wide, checkpoint expects d_in={model.cfg.d_in}")


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return _clean(float(v))
    return v


def dump_json(path: Path, obj) -> None:
    if isinstance(obj, dict):
        obj = {k: _clean(v) for k, v in obj.items()}
    elif isinstance(obj, list):
        obj = [{k: _clean(v) for k, v in row.items()} for row in obj]
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_history_csv(path: Path, history: list[dict]) -> None:
    columns = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in history:
        writer.writerow(["" if rec.get(c) is None else repr(rec[c]) for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or [])
    base = Path(args.config).resolve().parent
    ds, meta = build_dataset(cfg, base)
    _fit_model_config(cfg, ds)
    model = HDGCN(cfg.model, seed=cfg.seed)
    result = train(model, ds, cfg.train)
    out = Path(args.out or _resolve(base, cfg.out))
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "checkpoint.json", meta)
    write_history_csv(out / "history.csv", result.history)
    dump_json(out / "history.json", result.history)
    dump_json(out / "metrics.json", result.metrics)
    dump_json(
        out / "config.json",
        {"run": {"task": cfg.task, "seed": cfg.seed}, "data": asdict(cfg.data), "model": asdict(cfg.model), "train": asdict(cfg.train)},
    )
    print(json.dumps({k: _clean(v) for k, v in result.metrics.items()}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = HDGCN.load(args.checkpoint)
    ds = dataset_for_checkpoint(model, Path(args.dataset))
    _check_width(model, ds)
    m = evaluate(model, ds, "test")
    report = {"accuracy": m["accuracy"], "macro_f1": m["macro_f1"], "micro_f1": m["micro_f1"], "loss": m["loss"]}
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        dump_json(Path(args.out), report)
    print(json.dumps({k: _clean(v) for k, v in report.items()}, sort_keys=True))
    return EXIT_OK


def cmd_inspect(args) -> int:
    model = HDGCN.load(args.checkpoint)
    if model.cfg.mode != "dynamic":
        raise UsageError("static-mode checkpoints have no attention to inspect")
    ds = dataset_for_checkpoint(model, Path(args.dataset))
    _check_width(model, ds)
    if model.cfg.task == "node":
        g, node = ds.graph, args.select
        if not 0 <= node < g.n:
            raise UsageError(f"--select {node} outside the {g.n} nodes")
    else:
        if not 0 <= args.select < len(ds.graphs):
            raise UsageError(f"--select {args.select} outside the {len(ds.graphs)} documents")
        g, node = ds.graphs[args.select], None
    traces = model(g).traces
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, tr in enumerate(traces):
        stem = f"trace_l{i // max(len(model.layers[0].orders), 1)}_k{tr.order}"
        written += tr.write(out, stem)
        if node is not None:
            row = tr.a_b.values[node] @ tr.a_f.values
            write_matrix_csv(out / f"{stem}_row{node}.csv", row[None, :])
            written.append(out / f"{stem}_row{node}.csv")
        if g.n <= INSPECT_GUARD:
            write_matrix_csv(out / f"{stem}_a_d.csv", effective_dynamic_adjacency(tr).values)
            written.append(out / f"{stem}_a_d.csv")
    for p in written:
        print(p)
    return EXIT_OK


def cmd_propagate(args) -> int:
    g = read_graph(args.graph)
    if g.features is None:
        raise UsageError(f"{args.graph} has no 'x' feature lines to align")
    for node in (args.src, args.dst):
        if not 0 <= node < g.n:
            raise UsageError(f"node {node} outside [0, {g.n})")
    if args.src == args.dst:
        raise UsageError("--src and --dst must differ")
    if not 0.0 < args.threshold < 1.0 or args.max_steps < 0:
        raise UsageError("--threshold must lie in (0, 1) and --max-steps must be >= 0")
    kw = {"threshold": args.threshold, "max_steps": args.max_steps}
    with_t = feature_alignment_steps(g.adjacency, g.features, args.src, args.dst, True, **kw)
    without = feature_alignment_steps(g.adjacency, g.features, args.src, args.dst, False, **kw)
    gap = None if with_t is None or without is None else without - with_t
    report = {
        "src": args.src,
        "dst": args.dst,
        "threshold": args.threshold,
        "max_steps": args.max_steps,
        "steps_with_transition": with_t,
        "steps_without": without,
        "gap": gap,
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        dump_json(out, report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdgcn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from an INI run file")
    p.add_argument("config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config entry")
    p.add_argument("--out", help="output directory (defaults to [run] out)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test-split metrics of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="export attention traces")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--select", type=int, required=True, help="node id (node task) or document index (graph task)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser(
        "propagate",
        help="feature alignment steps with and without the random-walk transition",
        description="Without the transition, the symmetric normalised operator is applied and rows are "
        "rescaled to unit norm every step; with it, the row-stochastic random walk is applied.",
    )
    p.add_argument("graph")
    p.add_argument("--src", type=int, required=True)
    p.add_argument("--dst", type=int, required=True)
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--max-steps", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_propagate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"hdgcn {args.command}: {exc}", file=sys.stderr)
        return code


def _exit_code(exc: Exception) -> int | None:
    if isinstance(exc, (ConfigError, UsageError, FileNotFoundError)):
        return EXIT_USAGE
    if isinstance(exc, DimensionError):
        return EXIT_SHAPE
    if isinstance(exc, (CheckpointError, ParseError, DataError)):
        return EXIT_CORRUPT
    return None


if __name__ == "__main__":
    sys.exit(main())
