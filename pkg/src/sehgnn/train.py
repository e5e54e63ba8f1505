"""Training loop, evaluation metrics and run reports.

Training consumes only precomputed semantic matrices plus the label table;
it never sees adjacency or edge files. Model selection tracks validation
micro-f1 and the reported test metrics always come from the best validation
epoch, not the last one.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph import LabelTable, SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL
from .model import (
    ModelConfig,
    OptimizerState,
    adam_step,
    forward,
    init_params,
    loss_and_grad,
)

PRECISIONS = {"f64": np.float64, "f32": np.float32}


@dataclass
class RunConfig:
    max_hop_features: int = 2
    max_hop_labels: int = 2
    hidden_dim: int = 64
    dropout: float = 0.5
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    max_epochs: int = 300
    patience: int = 30
    seed: int = 0
    fusion_mode: str = "transformer"
    precision: str = "f64"
    batch_size: int = 0  # 0 = full batch
    attn_scale: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise DataError("weight_decay must be >= 0")
        if self.patience > self.max_epochs and self.max_epochs > 0:
            raise DataError("patience must be <= max_epochs")
        if self.precision not in PRECISIONS:
            raise DataError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.fusion_mode not in ("transformer", "weighted-sum"):
            raise DataError("fusion_mode must be 'transformer' or 'weighted-sum'")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        """Parse a flat `key = value` config file; overrides win over file values."""
        values: dict = {}
        text = Path(path).read_text()
        types = {f.name: f.type for f in fields(cls)}
        casts = {"int": int, "float": float, "str": str, "bool": lambda s: s.lower() in ("1", "true", "yes")}
        for ln, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{ln}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in types:
                raise DataError(f"{path}:{ln}: unknown config key {key!r}")
            try:
                values[key] = casts[types[key]](raw)
            except ValueError as exc:
                raise DataError(f"{path}:{ln}: bad value for {key!r}: {raw!r}") from exc
        if overrides:
            values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class Metrics:
    micro_f1: float
    macro_f1: float
    loss: float
    per_class_precision: list[float]
    per_class_recall: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(probabilities: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> Metrics:
    """Argmax metrics on the masked nodes (ties break to the lowest class).

    micro-f1 equals plain accuracy for single-label classification; macro-f1
    is the unweighted mean of per-class f1 with absent classes counting 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("empty evaluation mask")
    y = np.asarray(labels)[mask]
    if np.any(y < 0):
        raise DataError("every masked node must be labeled")
    p = probabilities[mask] if probabilities.shape[0] == mask.shape[0] else probabilities
    pred = np.argmax(p, axis=1)
    n_classes = p.shape[1]

    micro = float((pred == y).mean())
    precision, recall, f1 = [], [], []
    for c in range(n_classes):
        tp = float(np.sum((pred == c) & (y == c)))
        fp = float(np.sum((pred == c) & (y != c)))
        fn = float(np.sum((pred != c) & (y == c)))
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        precision.append(prec)
        recall.append(rec)
        f1.append(2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0)
    loss = float(-np.log(np.maximum(p[np.arange(y.shape[0]), y], 1e-300)).mean())
    return Metrics(micro, float(np.mean(f1)), loss, precision, recall)


@dataclass
class TrainReport:
    epochs: int
    best_epoch: int
    val_micro_f1: float
    test_micro_f1: float
    test_macro_f1: float
    epoch_ms_mean: float
    precompute_ms: float
    history: list[dict] = field(default_factory=list)
    epoch_ms: list[float] = field(default_factory=list)
    test_metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def strip_wallclock(self) -> dict:
        """Report content with wall-clock fields removed (for determinism checks)."""
        doc = self.to_dict()
        doc.pop("epoch_ms_mean", None)
        doc.pop("epoch_ms", None)
        doc.pop("precompute_ms", None)
        return doc


def train(matrices, labels: LabelTable, config: RunConfig,
          precompute_ms: float = 0.0, num_classes: int | None = None):
    """Run the epoch loop on precomputed semantic matrices.

    Returns (params from the best validation epoch, TrainReport).
    """
    train_idx = labels.indices(SPLIT_TRAIN)
    val_idx = labels.indices(SPLIT_VAL)
    test_mask = labels.mask(SPLIT_TEST)
    if train_idx.size == 0:
        raise DataError("empty train split")
    if num_classes is None:
        label_widths = [m.matrix.shape[1] for m in matrices if m.metapath.kind == "label"]
        num_classes = label_widths[0] if label_widths else int(max(labels.labels.max() + 1, 2))

    dt = config.dtype
    arrays = [np.ascontiguousarray(m.matrix, dtype=dt) for m in matrices]
    specs = [(m.path_id, m.matrix.shape[1]) for m in matrices]
    mcfg = ModelConfig(
        hidden_dim=config.hidden_dim,
        num_classes=int(num_classes),
        fusion=config.fusion_mode,
        dropout=config.dropout,
        attn_scale=config.attn_scale,
        dtype=dt,
    )
    params = init_params(specs, mcfg, config.seed)
    state = OptimizerState.for_params(params, config.learning_rate, config.weight_decay)
    drop_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    batch_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xBA7C]))
    y = labels.labels

    best = {"epoch": 0, "val_micro": -1.0, "params": params.copy()}
    history: list[dict] = []
    epoch_ms: list[float] = []

    for epoch in range(1, config.max_epochs + 1):
        tic = time.perf_counter()
        if config.batch_size and config.batch_size < train_idx.size:
            order = batch_rng.permutation(train_idx)
            losses = []
            for s in range(0, order.size, config.batch_size):
                batch = order[s:s + config.batch_size]
                loss, grads = loss_and_grad(params, arrays, batch, y, train_mode=True, rng=drop_rng)
                adam_step(params, grads, state)
                losses.append(loss)
            train_loss = float(np.mean(losses))
        else:
            train_loss, grads = loss_and_grad(params, arrays, train_idx, y, train_mode=True, rng=drop_rng)
            adam_step(params, grads, state)
        epoch_ms.append((time.perf_counter() - tic) * 1000.0)

        if val_idx.size:
            val_probs, _ = forward(params, arrays, val_idx, train_mode=False)
            val = evaluate(val_probs, y[val_idx], np.ones(val_idx.size, dtype=bool))
            val_micro, val_macro = val.micro_f1, val.macro_f1
        else:
            val_micro = val_macro = float("nan")
        history.append(
            {"epoch": epoch, "train_loss": train_loss,
             "val_micro_f1": val_micro, "val_macro_f1": val_macro}
        )
        if val_idx.size and val_micro > best["val_micro"]:
            best = {"epoch": epoch, "val_micro": val_micro, "params": params.copy()}
        if val_idx.size and epoch - max(best["epoch"], 1) >= config.patience:
            break

    # without a validation split there is no model selection: keep the final params
    best_params = best["params"] if best["epoch"] else params
    if test_mask.any():
        test_probs, _ = forward(best_params, arrays, np.nonzero(test_mask)[0], train_mode=False)
        test = evaluate(test_probs, y[test_mask], np.ones(int(test_mask.sum()), dtype=bool))
        test_dict = test.to_dict()
        test_micro, test_macro = test.micro_f1, test.macro_f1
    else:
        test_dict, test_micro, test_macro = {}, float("nan"), float("nan")

    report = TrainReport(
        epochs=len(history),
        best_epoch=best["epoch"],
        val_micro_f1=best["val_micro"] if best["epoch"] else float("nan"),
        test_micro_f1=test_micro,
        test_macro_f1=test_macro,
        epoch_ms_mean=float(np.mean(epoch_ms)) if epoch_ms else 0.0,
        precompute_ms=precompute_ms,
        history=history,
        epoch_ms=epoch_ms,
        test_metrics=test_dict,
        config={f.name: getattr(config, f.name) for f in fields(RunConfig)},
    )
    return best_params, report
