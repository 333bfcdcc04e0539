"""Losses, Adam, the training loop, evaluation metrics and the ablation grid."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DivergenceError, EvaluationError, LabelError, NonFiniteError, ShapeError, StateError
from .graph import GraphSample, drop_area_nodes, to_batch
from .models import ARCHS, GraphModel, ModelConfig
from .pose_data import ACTION_NAMES, DatasetSplit, balance_classes, derive_group_label

log = logging.getLogger(__name__)

LOSS_MODES = ("single", "multi")
GRID_EPOCHS = (10, 20, 50)
GRID_HEADER = ("arch", "loss_mode", "with_objects", "epochs", "test_accuracy")


def fmt6(x: float) -> str:
    return f"{x:.6g}"


# ------------------------------------------------------------------ losses


def cross_entropy(logits: ad.Tensor, labels) -> ad.Tensor:
    """Mean negative log-likelihood; ``labels`` are class indices 0..C-1."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [B, C] logits, got {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelError(f"labels must lie in 0..{logits.shape[1] - 1}")
    return ad.neg(ad.mean(ad.pick(ad.log_softmax(logits), labels)))


def multi_task_loss(action_logits: ad.Tensor, group_logits: ad.Tensor, action_labels, group_labels,
                    lambda_group: float = 1.0) -> ad.Tensor:
    """``CE(action) + lambda * CE(group)``; action labels are 1..4, group labels 0..1."""
    action_labels = np.asarray(action_labels, dtype=np.int64)
    group_labels = np.asarray(group_labels, dtype=np.int64)
    if lambda_group < 0:
        raise ConfigError("lambda_group must be >= 0")
    expected = np.array([derive_group_label(int(a)) for a in action_labels], dtype=np.int64)
    if not np.array_equal(expected, group_labels):
        raise LabelError("group labels are inconsistent with action labels")
    loss = cross_entropy(action_logits, action_labels - 1)
    return loss + cross_entropy(group_logits, group_labels) * lambda_group


class Adam:
    def __init__(self, params: Sequence[ad.Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def optimizer_step(opt: Adam) -> None:
    opt.step()


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-3
    loss_mode: str = "single"
    lambda_group: float = 1.0
    seed: int = 0
    arch: str = "gcn_gru"
    with_objects: bool = True
    balance: bool = False

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be single or multi, got {self.loss_mode!r}")
        if self.lambda_group < 0:
            raise ConfigError("lambda_group must be >= 0")
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")


# ----------------------------------------------------------------- metrics


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows true class, columns predicted class
    names: tuple[str, ...] = tuple(ACTION_NAMES[k] for k in sorted(ACTION_NAMES))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else float("nan")

    @classmethod
    def from_labels(cls, true, pred, num_classes: int, offset: int, names) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(true) - offset, np.asarray(pred) - offset), 1)
        return cls(counts, tuple(names))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.names)
        writer.writerows(self.counts.tolist())
        return buf.getvalue()


@dataclass
class LossCurve:
    records: list[tuple[int, float, float, float]] = field(default_factory=list)

    def add(self, epoch: int, train_loss: float, val_loss: float, val_acc: float) -> None:
        self.records.append((epoch, train_loss, val_loss, val_acc))

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_acc"]
        for e, tl, vl, va in self.records:
            lines.append(f"{e},{fmt6(tl)},{fmt6(vl)},{fmt6(va)}")
        return "\n".join(lines) + "\n"


@dataclass
class EvalResult:
    accuracy: float
    confusion: ConfusionMatrix
    group_confusion: ConfusionMatrix | None
    n: int


# -------------------------------------------------------------------- loop


def _arrays(samples: Sequence[GraphSample], dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = to_batch(samples, dtype)
    y = np.array([s.action_label for s in samples], dtype=np.int64)
    g = np.array([derive_group_label(int(a)) for a in y], dtype=np.int64)
    return x, y, g


def _batch_loss(model: GraphModel, x, y, g, cfg: TrainConfig, rng) -> ad.Tensor:
    action, group = model.forward(x, rng)
    if cfg.loss_mode == "multi":
        return multi_task_loss(action, group, y, g, cfg.lambda_group)
    return cross_entropy(action, y - 1)


def _check_nodes(model: GraphModel, samples: Sequence[GraphSample]) -> None:
    for s in samples:
        if s.nodes.shape[1] != model.num_nodes:
            raise ShapeError(f"sample {s.id!r} has {s.nodes.shape[1]} nodes, model expects {model.num_nodes}")


def _eval_loss(model: GraphModel, x, y, g, cfg: TrainConfig, batch: int = 64) -> tuple[float, float]:
    total, correct = 0.0, 0
    with ad.no_grad():
        for start in range(0, len(x), batch):
            sl = slice(start, start + batch)
            action, group = model.forward(x[sl])
            if cfg.loss_mode == "multi":
                loss = multi_task_loss(action, group, y[sl], g[sl], cfg.lambda_group)
            else:
                loss = cross_entropy(action, y[sl] - 1)
            total += loss.item() * len(y[sl])
            correct += int((np.argmax(action.data, axis=1) + 1 == y[sl]).sum())
    return total / len(x), correct / len(x)


def train(model: GraphModel, split: DatasetSplit, cfg: TrainConfig,
          on_epoch: Callable[[int, tuple], None] | None = None) -> tuple[GraphModel, LossCurve]:
    """Mini-batch Adam for ``cfg.epochs`` epochs; returns the final-epoch model in eval mode."""
    if not split.train:
        raise EvaluationError("training split is empty")
    if model.config.multi_task != (cfg.loss_mode == "multi"):
        raise ConfigError("model head layout does not match the loss mode")
    _check_nodes(model, list(split.train) + list(split.val))
    train_set = balance_classes(split.train, cfg.seed) if cfg.balance else list(split.train)
    x, y, g = _arrays(train_set, model.dtype)
    xv, yv, gv = _arrays(split.val, model.dtype) if split.val else (None, None, None)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    curve = LossCurve()
    n = len(x)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            try:
                with ad.Tape() as tape:
                    loss = _batch_loss(model, x[idx], y[idx], g[idx], cfg, dropout_rng)
                    value = loss.item()
                    if not math.isfinite(value):
                        raise DivergenceError(f"non-finite loss at epoch {epoch}")
                    ad.backward(loss, tape)
            except NonFiniteError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}: {exc}") from exc
            opt.step()
            running += value * len(idx)
        model.eval()
        if xv is not None:
            val_loss, val_acc = _eval_loss(model, xv, yv, gv, cfg)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        record = (epoch, running / n, val_loss, val_acc)
        curve.add(*record)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", *record)
        if on_epoch is not None:
            on_epoch(epoch, record)
    return model.eval(), curve


def evaluate(model: GraphModel, samples: Sequence[GraphSample]) -> EvalResult:
    if not samples:
        raise EvaluationError("cannot evaluate on an empty sample set")
    if model.training:
        raise StateError("evaluate needs an eval-mode model")
    _check_nodes(model, samples)
    x, y, g = _arrays(samples, model.dtype)
    pred, gpred = model.predict(x)
    cm = ConfusionMatrix.from_labels(y, pred, 4, 1, [ACTION_NAMES[k] for k in sorted(ACTION_NAMES)])
    gcm = None
    if gpred is not None:
        gcm = ConfusionMatrix.from_labels(g, gpred, 2, 0, ["non_interaction", "interaction"])
    return EvalResult(cm.accuracy, cm, gcm, len(samples))


# -------------------------------------------------------------------- grid


@dataclass(frozen=True)
class GridCell:
    index: int
    arch: str
    loss_mode: str
    with_objects: bool
    epochs: int


@dataclass
class GridRow:
    cell: GridCell
    test_accuracy: float | None
    error: str | None = None

    def csv_fields(self) -> list[str]:
        c = self.cell
        acc = "error" if self.test_accuracy is None else fmt6(self.test_accuracy)
        return [c.arch, c.loss_mode, str(c.with_objects).lower(), str(c.epochs), acc]


@dataclass(frozen=True)
class GridConfig:
    seed: int = 1
    archs: tuple[str, ...] = ARCHS
    loss_modes: tuple[str, ...] = LOSS_MODES
    object_modes: tuple[bool, ...] = (False, True)
    epochs: tuple[int, ...] = GRID_EPOCHS
    batch_size: int = 16
    learning_rate: float = 1e-3
    lambda_group: float = 1.0
    balance: bool = False
    dtype: str = "float32"
    link_mode: str = "full_links"
    # extra ModelConfig fields, e.g. smaller blocks for quick runs
    model_overrides: tuple[tuple[str, object], ...] = ()


def grid_cells(cfg: GridConfig) -> list[GridCell]:
    cells = []
    for arch in cfg.archs:
        for loss in cfg.loss_modes:
            for obj in cfg.object_modes:
                for ep in cfg.epochs:
                    cells.append(GridCell(len(cells), arch, loss, obj, ep))
    return cells


def _split_for(split: DatasetSplit, with_objects: bool) -> DatasetSplit:
    if with_objects:
        return split
    return DatasetSplit(drop_area_nodes(split.train), drop_area_nodes(split.val),
                        drop_area_nodes(split.test), split.seed, list(split.warnings))


def run_cell(cell: GridCell, split: DatasetSplit, cfg: GridConfig) -> GridRow:
    seed = cfg.seed + cell.index
    try:
        data = _split_for(split, cell.with_objects)
        mcfg = ModelConfig(arch=cell.arch, multi_task=cell.loss_mode == "multi", with_objects=cell.with_objects,
                           link_mode=cfg.link_mode, dtype=cfg.dtype, seed=seed, **dict(cfg.model_overrides))
        tcfg = TrainConfig(epochs=cell.epochs, batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                           loss_mode=cell.loss_mode, lambda_group=cfg.lambda_group, seed=seed,
                           arch=cell.arch, with_objects=cell.with_objects, balance=cfg.balance)
        model, _ = train(GraphModel(mcfg), data, tcfg)
        return GridRow(cell, evaluate(model, data.test).accuracy)
    except Exception as exc:  # a failed cell is recorded and the grid continues
        log.warning("grid cell %d failed: %s", cell.index, exc)
        return GridRow(cell, None, f"{type(exc).__name__}: {exc}")


def run_ablation_grid(split: DatasetSplit, cfg: GridConfig, jobs: int = 1,
                      on_row: Callable[[GridRow], None] | None = None) -> list[GridRow]:
    """Train and test every cell; ``split`` holds with-objects samples (area nodes are dropped as needed)."""
    cells = grid_cells(cfg)
    rows: list[GridRow] = []
    if jobs <= 1:
        for cell in cells:
            rows.append(run_cell(cell, split, cfg))
            if on_row is not None:
                on_row(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, cell, split, cfg) for cell in cells]
            for fut in futures:
                rows.append(fut.result())
                if on_row is not None:
                    on_row(rows[-1])
    return sorted(rows, key=lambda r: r.cell.index)


def grid_to_csv(rows: Sequence[GridRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(GRID_HEADER)
    for row in sorted(rows, key=lambda r: r.cell.index):
        writer.writerow(row.csv_fields())
    return buf.getvalue()

