"""Mini-batch training with Adam, validation-MRR early stopping, and ablations.

Each training triple contributes both query directions. Per query the full
pipeline runs on its own tape; unverified queries (target tail outside the
final visited set) are dropped before backward unless LinkVerify is disabled,
so they contribute exactly zero gradient. Gradients are accumulated in query
order and applied once per batch, which keeps runs bitwise reproducible for a
fixed seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import NumericError, Tape
from .conditioning import AblationFlags, FULL_MODEL, ModelConfig, SELECTION_MODES
from .evaluator import build_filter_index, evaluate
from .graph import InductiveDataset, Triple
from .model import MStarModel
from .params import adam_step, save_checkpoint

CHECKPOINT_FILE = "checkpoint.bin"
HISTORY_FILE = "metrics.json"


class ConfigError(Exception):
    """Malformed configuration file or unknown configuration key."""


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_mrr: float


@dataclass
class TrainRun:
    config: ModelConfig
    ablations: AblationFlags
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_mrr: float = 0.0


@dataclass
class _TrainingQuery:
    query: Triple
    excluded_edge_ids: tuple[int, ...]


def _training_queries(dataset: InductiveDataset, mask_query_edge: bool) -> list[_TrainingQuery]:
    """Both directions of every training triple, with that triple's graph edge
    (and its inverse) marked for exclusion during the query's own forward."""
    graph = dataset.train_graph
    num_rels = graph.num_original_relations
    out = []
    for triple in dataset.train_queries:
        excluded = tuple(graph.query_edge_ids(*triple)) if mask_query_edge else ()
        inverse = Triple(triple.tail, triple.rel + num_rels, triple.head)
        out.append(_TrainingQuery(triple, excluded))
        out.append(_TrainingQuery(inverse, excluded))
    return out


def train_epoch(
    model: MStarModel,
    queries: Sequence[_TrainingQuery],
    flags: AblationFlags,
    rng: np.random.Generator,
) -> float:
    """One pass over the shuffled training queries; returns the mean per-query
    loss over retained (visit-verified) queries."""
    if not queries:
        raise ValueError("empty training set")
    cfg = model.config
    order = rng.permutation(len(queries))
    total_loss = 0.0
    retained = 0
    for batch_start in range(0, len(order), cfg.batch_size):
        batch = order[batch_start : batch_start + cfg.batch_size]
        grads = {}
        for qi in batch:
            tq = queries[qi]
            tape = Tape()
            result = model.forward_query(
                tq.query, tape=tape, flags=flags, exclude_edge_ids=tq.excluded_edge_ids
            )
            if flags.linkverify_on and not result.scored.verified:
                continue
            loss = result.loss()
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise NumericError("non-finite training loss")
            tape.backward(loss)
            total_loss += loss_value
            retained += 1
            for name, tensor in result.wrapped.items():
                if tensor.grad is None:
                    continue
                if name in grads:
                    grads[name] += tensor.grad
                else:
                    grads[name] = tensor.grad
        if grads:
            adam_step(model.params, grads, cfg.lr)
    return total_loss / retained if retained else 0.0


def fit(
    dataset: InductiveDataset,
    config: ModelConfig,
    flags: AblationFlags = FULL_MODEL,
    out_dir: str | os.PathLike | None = None,
    valid_eval_fn: Callable[[MStarModel], float] | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[TrainRun, MStarModel]:
    """Train with early stopping on validation MRR and restore the best epoch.

    ``valid_eval_fn`` overrides the validation metric (used by tests); the
    default evaluates filtered MRR of the validation queries on the train graph.
    """
    model = MStarModel(dataset.train_graph, config)
    run = TrainRun(config=config, ablations=flags)
    queries = _training_queries(dataset, config.mask_query_edge)

    if valid_eval_fn is None:
        filter_index = build_filter_index(
            dataset.train_graph, [dataset.train_queries, dataset.valid_queries]
        )

        def valid_eval_fn(m: MStarModel) -> float:
            if not dataset.valid_queries:
                return 0.0
            return evaluate(
                m, dataset.valid_queries, filter_index=filter_index, flags=flags
            ).mrr

    best_snapshot = model.params.snapshot()
    for epoch in range(1, config.max_epochs + 1):
        epoch_rng = np.random.default_rng([config.seed, epoch])
        train_loss = train_epoch(model, queries, flags, epoch_rng)
        valid_mrr = valid_eval_fn(model)
        run.history.append(EpochStats(epoch, train_loss, valid_mrr))
        if log is not None:
            log(f"epoch {epoch}: train_loss = {train_loss:.6f}, valid_mrr = {valid_mrr:.6f}")
        if valid_mrr > run.best_valid_mrr or run.best_epoch == 0:
            run.best_epoch = epoch
            run.best_valid_mrr = valid_mrr
            best_snapshot = model.params.snapshot()
        elif epoch - run.best_epoch > config.patience:
            break

    model.params.restore(best_snapshot)
    for p in model.params:
        if not np.all(np.isfinite(p.data)):
            raise NumericError(f"non-finite values in parameter {p.name!r}")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, CHECKPOINT_FILE), model.params)
        write_history(os.path.join(out_dir, HISTORY_FILE), run)
    return run, model


def write_history(path: str | os.PathLike, run: TrainRun) -> None:
    payload = {
        "best_epoch": run.best_epoch,
        "best_valid_mrr": run.best_valid_mrr,
        "epochs": [
            {"epoch": s.epoch, "train_loss": s.train_loss, "valid_mrr": s.valid_mrr}
            for s in run.history
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- configuration files -------------------------------------------------------

_CONFIG_SCHEMA: dict[str, Callable[[str], object]] = {
    "embed_dim": int,
    "attn_dim": int,
    "pre_layers": int,
    "prop_layers": int,
    "num_starts": int,
    "num_start_types": int,
    "lr": float,
    "batch_size": int,
    "patience": int,
    "max_epochs": int,
    "seed": int,
    "selection_mode": str,
    "share_relation_encoder": None,  # bool, handled below
    "mask_query_edge": None,
    "selection_on": None,
    "highway_on": None,
    "linkverify_on": None,
}

_BOOL_KEYS = {
    "share_relation_encoder", "mask_query_edge",
    "selection_on", "highway_on", "linkverify_on",
}
_FLAG_KEYS = {"selection_on", "highway_on", "linkverify_on"}


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"key {key!r} expects a boolean, got {raw!r}")


def parse_config_text(text: str, source: str = "<config>") -> tuple[ModelConfig, AblationFlags]:
    """Parse line-oriented ``key = value`` configuration with # comments."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if key in _BOOL_KEYS:
            values[key] = _parse_bool(raw, key)
        else:
            caster = _CONFIG_SCHEMA[key]
            try:
                values[key] = caster(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {raw!r}") from exc
    if "selection_mode" in values and values["selection_mode"] not in SELECTION_MODES:
        raise ConfigError(f"{source}: selection_mode must be one of {SELECTION_MODES}")

    flag_values = {k: values.pop(k) for k in list(values) if k in _FLAG_KEYS}
    try:
        config = ModelConfig(**values)  # type: ignore[arg-type]
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return config, AblationFlags(**flag_values)


def load_config(path: str | os.PathLike) -> tuple[ModelConfig, AblationFlags]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))
