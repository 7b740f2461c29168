"""Training and evaluation loops."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import ops
from .autodiff import Graph
from .backbone import SmallBackboneSpec, build_small_backbone, small_backbone_forward
from .config import TrainConfig
from .data import (
    Dataset,
    augment,
    batches,
    check_channels,
    load_dataset,
    preprocess,
    synth_position_dataset,
)
from .errors import ConfigError, NumericError
from .heads import HeadKind, HeadParams, HeadSpec, build_head, head_forward
from .optim import SgdState, lr_at, sgd_step
from .snapshot import load_snapshot, save_snapshot
from .tensor import Tensor

log = logging.getLogger(__name__)

CSV_FIELDS = ("epoch", "lr", "train_loss", "train_top1", "val_top1", "val_top5", "wall_seconds")


@dataclass
class MetricsRow:
    epoch: int
    lr: float
    train_loss: float
    train_top1: float
    val_top1: float
    val_top5: float
    wall_seconds: float

    def __post_init__(self):
        for name in ("train_top1", "val_top1", "val_top5"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise NumericError(f"{name}={v} outside [0, 1]")
        if self.val_top1 > self.val_top5:
            raise NumericError(f"top1 {self.val_top1} exceeds top5 {self.val_top5}")

    def csv_cells(self) -> list[str]:
        return [str(self.epoch)] + [format(float(getattr(self, f)), ".6g") for f in CSV_FIELDS[1:]]


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow(r.csv_cells())
    return buf.getvalue()


@dataclass
class Model:
    backbone_spec: SmallBackboneSpec
    backbone: dict[str, Tensor]
    head_spec: HeadSpec
    head: HeadParams
    precision: str
    class_names: list[str]
    preprocess: str = "none"
    rescale: float = 1.0

    def parameters(self) -> dict[str, Tensor]:
        out = {f"backbone/{k}": v for k, v in self.backbone.items()}
        out.update({f"head/{k}": v for k, v in self.head.tensors.items()})
        return out

    def with_parameters(self, params: dict[str, Tensor]) -> "Model":
        bb = {k.split("/", 1)[1]: v for k, v in params.items() if k.startswith("backbone/")}
        hd = {k.split("/", 1)[1]: v for k, v in params.items() if k.startswith("head/")}
        head = HeadParams(self.head.kind, hd, self.head.seed, dict(self.head.init))
        return Model(self.backbone_spec, bb, self.head_spec, head, self.precision, self.class_names,
                     self.preprocess, self.rescale)

    def features(self, x, params=None):
        p = params if params is not None else self.backbone
        return small_backbone_forward(x, self.backbone_spec, p)

    def logits(self, x, mode="infer", rng=None, params=None):
        """``params`` maps the names of :meth:`parameters` to Tensors or Nodes."""
        if params is None:
            bb, hd = self.backbone, self.head.tensors
        else:
            bb = {k.split("/", 1)[1]: v for k, v in params.items() if k.startswith("backbone/")}
            hd = {k.split("/", 1)[1]: v for k, v in params.items() if k.startswith("head/")}
        return head_forward(self.features(x, bb), hd, self.head_spec, mode, rng)

    def constrained(self) -> tuple[str, ...]:
        return tuple(f"head/{n}" for n in self.head.constrained())

    def meta(self) -> dict:
        return {
            "backbone_stages": self.backbone_spec.stages_text(),
            "input_side": self.backbone_spec.input_side,
            "input_channels": self.backbone_spec.input_channels,
            "head_kind": self.head_spec.kind.value,
            "classes": self.head_spec.classes,
            "pool_kernel": self.head_spec.pool_kernel,
            "dropout_rate": self.head_spec.dropout_rate,
            "class_names": list(self.class_names),
            "preprocess": self.preprocess,
            "rescale": self.rescale,
            "head_seed": self.head.seed,
        }

    def save(self, path) -> Path:
        return save_snapshot(path, self.parameters(), self.meta(), self.precision)

    @classmethod
    def load(cls, path) -> "Model":
        tensors, meta, precision = load_snapshot(path)
        bspec = SmallBackboneSpec(
            SmallBackboneSpec.parse_stages(meta["backbone_stages"]), meta["input_side"], meta["input_channels"]
        )
        hspec = HeadSpec(HeadKind.parse(meta["head_kind"]), meta["classes"], meta["pool_kernel"], meta["dropout_rate"])
        model = cls(bspec, {}, hspec, HeadParams(hspec.kind, {}, meta.get("head_seed")), precision,
                    meta["class_names"], meta["preprocess"], meta["rescale"])
        return model.with_parameters(tensors)


def build_model(cfg: TrainConfig, class_names: list[str]) -> Model:
    bspec = cfg.backbone_spec()
    fm = bspec.output_spec()
    hspec = HeadSpec(cfg.head_kind, len(class_names), cfg.pool, cfg.dropout_rate)
    backbone = build_small_backbone(bspec, cfg.init_seed, cfg.precision)
    head = build_head(fm, hspec, cfg.init_seed + 1, cfg.precision)
    return Model(bspec, backbone, hspec, head, cfg.precision, list(class_names), cfg.preprocess, cfg.rescale)


def datasets_for(cfg: TrainConfig) -> tuple[Dataset, Dataset]:
    if cfg.synth != "none":
        rng_train = np.random.default_rng([cfg.synth_seed, 0])
        rng_val = np.random.default_rng([cfg.synth_seed, 1])
        train = synth_position_dataset(cfg.grid, cfg.synth, cfg.n_train_per_class, cfg.noise_std, rng_train,
                                       "train", cfg.synth_channels)
        val = synth_position_dataset(cfg.grid, cfg.synth, cfg.n_val_per_class, cfg.noise_std, rng_val,
                                     "val", cfg.synth_channels)
        return train, val
    train = load_dataset(cfg.train_dir, cfg.image_side, "train", cfg.rescale)
    val = load_dataset(cfg.val_dir, cfg.image_side, "val", cfg.rescale) if cfg.val_dir else train
    if val.class_names != train.class_names:
        raise ConfigError("train and val class directories differ")
    check_channels(train, cfg.input_channels)
    check_channels(val, cfg.input_channels)
    return train, val


def topk_hits(logits: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Per-sample hit flags; ties rank the smaller class index first."""
    k = min(k, logits.shape[1])
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def predict(logits: np.ndarray) -> np.ndarray:
    return np.argsort(-logits, axis=1, kind="stable")[:, 0]


def evaluate(model: Model, ds: Dataset, batch_size: int = 70) -> tuple[float, float]:
    if ds.num_classes != model.head_spec.classes:
        raise ConfigError(f"dataset has {ds.num_classes} classes, model expects {model.head_spec.classes}")
    if len(ds) == 0:
        return 0.0, 0.0

    def prep(img, _i):
        return preprocess(img, model.preprocess)

    hits1 = hits5 = 0
    for x, y in batches(ds, batch_size, None, transform=prep, precision=model.precision):
        logits = model.logits(x).data
        hits1 += int(topk_hits(logits, y, 1).sum())
        hits5 += int(topk_hits(logits, y, 5).sum())
    return hits1 / len(ds), hits5 / len(ds)


def fit(
    cfg: TrainConfig,
    train_ds: Dataset | None = None,
    val_ds: Dataset | None = None,
    on_epoch: Callable[[MetricsRow], None] | None = None,
) -> tuple[Model, list[MetricsRow]]:
    if train_ds is None:
        train_ds, val_ds = datasets_for(cfg)
    val_ds = val_ds if val_ds is not None else train_ds
    model = build_model(cfg, train_ds.class_names)
    params = model.parameters()
    nonneg = model.constrained()
    state = SgdState(momentum=cfg.momentum, current_lr=cfg.lr_initial)
    sched = cfg.schedule()
    aug = cfg.augment_config()
    rows: list[MetricsRow] = []

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        state.current_lr = lr_at(epoch, sched)

        def transform(img, i, _epoch=epoch):
            return augment(img, aug, np.random.default_rng([cfg.augment_seed, _epoch, i]))

        loss_sum = 0.0
        correct = 0
        for b, (x, y) in enumerate(batches(train_ds, cfg.batch_size, cfg.shuffle_seed, epoch, transform,
                                           cfg.precision)):
            g = Graph()
            nodes = {k: g.param(v, name=k) for k, v in params.items()}
            rng = np.random.default_rng([cfg.dropout_seed, epoch, b])
            try:
                logits = model.logits(g.leaf(x), "train", rng, nodes)
                loss = ops.softmax_cross_entropy(logits, y)
                grads = g.backward(loss)
                params, state = sgd_step(params, {k: grads[n.id] for k, n in nodes.items()}, state, nonneg)
            except NumericError as exc:
                raise NumericError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            loss_sum += loss.value.item() * len(y)
            correct += int(topk_hits(logits.value.data, y, 1).sum())

        model = model.with_parameters(params)
        val1, val5 = evaluate(model, val_ds, cfg.batch_size)
        wall = time.perf_counter() - t0 if cfg.record_wall_time else 0.0
        row = MetricsRow(epoch, state.current_lr, loss_sum / len(train_ds), correct / len(train_ds), val1, val5, wall)
        log.info("epoch %d lr %.6g loss %.4f train %.4f val %.4f/%.4f", epoch, row.lr, row.train_loss,
                 row.train_top1, val1, val5)
        rows.append(row)
        if on_epoch:
            on_epoch(row)
    return model, rows


def run_training(cfg: TrainConfig, out_dir) -> tuple[Path, Path, list[MetricsRow]]:
    """Train and write ``metrics.csv``, ``model.snap`` and the resolved ``config.ini`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, rows = fit(cfg)
    csv_path = out / "metrics.csv"
    csv_path.write_text(metrics_csv(rows))
    snap_path = model.save(out / "model.snap")
    cfg.save(out / "config.ini")
    return csv_path, snap_path, rows
