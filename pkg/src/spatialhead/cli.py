"""Command-line entry point.

Verbs: params, train, eval, gradcheck, gradcam, synth, registry. Exit codes:
0 success, 2 config error, 3 data error, 4 numeric error (including a failed
gradient check), 5 internal contract error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .backbone import REGISTRY, feature_map_spec, registry_lookup
from .config import TrainConfig
from .data import load_dataset, preprocess, resize_bilinear, synth_position_dataset, write_dataset
from .errors import ConfigError, FrameworkError, NumericError
from .gradcam import HeatMap, export_heatmap, feature_grad, grad_cam
from .gradsuite import STEP, TOL, run_suite
from .heads import HeadKind, HeadSpec, head_forward, head_param_count
from .pnm import read_image
from .published import check_all
from .tensor import Tensor
from .train import Model, evaluate, run_training


def _out(line: str = "") -> None:
    print(line, flush=True)


# ---------------------------------------------------------------------------
# params


def cmd_params(args) -> int:
    if args.table:
        if args.table != "paper":
            raise ConfigError(f"unknown table {args.table!r}; only 'paper' is available")
        t0 = time.perf_counter()
        results = check_all()
        current = None
        for row, base, head, ok in results:
            if row.table != current:
                current = row.table
                _out(f"== {current}")
            pool = f" pool {row.pool_kernel}" if row.pool_kernel else ""
            _out(f"{'PASS' if ok else 'FAIL'} {row.backbone:<12} {row.kind.value + pool:<26} "
                 f"base={base:,} head={head:,} total={base + head:,} expected={row.expected:,}")
        failed = sum(not ok for *_, ok in results)
        _out(f"{len(results) - failed}/{len(results)} rows match ({time.perf_counter() - t0:.3f}s)")
        return 0 if failed == 0 else 1

    if not (args.backbone and args.side and args.classes and args.head):
        raise ConfigError("params needs --backbone, --side, --classes and --head (or --table paper)")
    entry = registry_lookup(args.backbone)
    fm = feature_map_spec(entry, args.side)
    kind = HeadKind.parse(args.head)
    spec = HeadSpec(kind, args.classes, args.pool if kind.pooled else None)
    head = head_param_count(fm, spec)
    _out(f"backbone   {entry.name} ({entry.base_params:,})")
    _out(f"feature    {fm.height}x{fm.width}x{fm.channels}")
    _out(f"head       {kind.value} (+{head:,})")
    _out(f"total      {entry.base_params + head:,}")
    return 0


# ---------------------------------------------------------------------------
# train / eval


def _overrides(args) -> dict[str, str]:
    return {k[len("cfg__"):]: v for k, v in vars(args).items() if k.startswith("cfg__") and v is not None}


def _load_config(args) -> TrainConfig:
    overrides = _overrides(args)
    if args.config:
        return TrainConfig.load(args.config, overrides)
    return TrainConfig.from_ini("", overrides)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    csv_path, snap_path, rows = run_training(cfg, args.out)
    if rows:
        last = rows[-1]
        _out(f"epoch {last.epoch}: loss={last.train_loss:.6g} val_top1={last.val_top1:.6g} "
             f"val_top5={last.val_top5:.6g}")
    _out(f"metrics  {csv_path}")
    _out(f"snapshot {snap_path}")
    return 0


def cmd_eval(args) -> int:
    model = Model.load(args.snapshot)
    rescale = model.rescale if args.rescale is None else args.rescale
    ds = load_dataset(args.data, model.backbone_spec.input_side, "val", rescale)
    top1, top5 = evaluate(model, ds, args.batch_size)
    _out(f"top1 {top1:.6g}")
    _out(f"top5 {top5:.6g}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    results = run_suite(args.step, args.tol, args.seed)
    worst_name, worst = max(results, key=lambda r: r[1].max_rel_error)
    for name, rep in results:
        _out(f"{name:<28} {rep}")
    failed = [n for n, r in results if not r.passed]
    _out(f"{len(results) - len(failed)}/{len(results)} pass at tol {args.tol:g} "
         f"({time.perf_counter() - t0:.2f}s); worst {worst_name} {worst.max_rel_error:.3e} at {worst.worst}")
    if failed:
        raise NumericError(f"gradient check failed for {', '.join(failed)}; worst {worst_name} at {worst.worst}")
    return 0


# ---------------------------------------------------------------------------
# gradcam


def model_input(model: Model, image_path, rescale: float | None = None) -> Tensor:
    img = read_image(image_path)
    side = model.backbone_spec.input_side
    img = resize_bilinear(img, side) * (model.rescale if rescale is None else rescale)
    if img.shape[2] != model.backbone_spec.input_channels:
        raise ConfigError(f"image has {img.shape[2]} channels, model expects {model.backbone_spec.input_channels}")
    return Tensor(preprocess(img, model.preprocess)[None], model.precision)


def model_heatmap(model: Model, x: Tensor, class_index: int) -> HeatMap:
    fm = model.features(x)
    grad = feature_grad(fm, lambda f: head_forward(f, model.head.tensors, model.head_spec, "infer"), class_index)
    return grad_cam(fm, grad, class_index)


def heatmap_name(image_path, kind: HeadKind, class_index: int) -> str:
    return f"{Path(image_path).stem}_{kind.value}_{class_index}.pgm"


def cmd_gradcam(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    models = [Model.load(args.snapshot)]
    if args.compare:
        if args.compare.lower() != "gap":
            raise ConfigError("--compare only supports 'gap'")
        if not args.gap_snapshot:
            raise ConfigError("--compare gap needs --gap-snapshot")
        models.append(Model.load(args.gap_snapshot))
    for model in models:
        hm = model_heatmap(model, model_input(model, args.image, args.rescale), args.class_index)
        path = export_heatmap(hm, out_dir / heatmap_name(args.image, model.head_spec.kind, args.class_index),
                              args.upscale)
        _out(f"{model.head_spec.kind.value:<24} {hm.values.shape[0]}x{hm.values.shape[1]} -> {path}")
    return 0


# ---------------------------------------------------------------------------
# synth / registry


def cmd_synth(args) -> int:
    rng = np.random.default_rng([args.seed, 0 if args.split == "train" else 1])
    ds = synth_position_dataset(args.grid, args.classes, args.n_per_class, args.noise_std, rng, args.split,
                                args.channels)
    written = write_dataset(ds, args.out)
    _out(f"wrote {len(written)} images in {ds.num_classes} classes under {args.out}")
    return 0


def cmd_registry(args) -> int:
    _out(f"{'name':<12} {'base_params':>12} {'channels':>9} {'stride':>7}")
    for e in REGISTRY.values():
        _out(f"{e.name:<12} {e.base_params:>12,} {e.out_channels:>9} {e.output_stride:>7}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("config overrides (take precedence over the file)")
    for key, (section, _typ) in TrainConfig.keys().items():
        group.add_argument(f"--{section}.{key}", dest=f"cfg__{section}.{key}", metavar="V", default=None)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatialhead", description="Spatial classification heads on a numpy autodiff core.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("params", help="parameter accounting for registered backbones")
    sp.add_argument("--table", help="'paper' checks every published total")
    sp.add_argument("--backbone")
    sp.add_argument("--side", type=int)
    sp.add_argument("--classes", type=int)
    sp.add_argument("--head", help="head kind, e.g. GAP or AVG_DW_NONNEG")
    sp.add_argument("--pool", type=int, default=2)
    sp.set_defaults(func=cmd_params)

    sp = sub.add_parser("train", help="train from an INI config")
    sp.add_argument("config", nargs="?")
    sp.add_argument("--out", default="run")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="top-1/top-5 of a snapshot on a class-per-directory dataset")
    sp.add_argument("snapshot")
    sp.add_argument("data")
    sp.add_argument("--batch-size", type=int, default=70)
    sp.add_argument("--rescale", type=float, help="pixel scale; defaults to the snapshot's data.rescale")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op and head kind")
    sp.add_argument("--step", type=float, default=STEP)
    sp.add_argument("--tol", type=float, default=TOL)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("gradcam", help="export a Grad-CAM heatmap as PGM")
    sp.add_argument("snapshot")
    sp.add_argument("image")
    sp.add_argument("--class", dest="class_index", type=int, required=True)
    sp.add_argument("--out", default=".")
    sp.add_argument("--upscale", type=int, default=1)
    sp.add_argument("--compare", help="'gap' also renders --gap-snapshot")
    sp.add_argument("--gap-snapshot")
    sp.add_argument("--rescale", type=float, help="pixel scale; defaults to the snapshot's data.rescale")
    sp.set_defaults(func=cmd_gradcam)

    sp = sub.add_parser("synth", help="write a synthetic position dataset as PGM files")
    sp.add_argument("out")
    sp.add_argument("--grid", type=int, default=7)
    sp.add_argument("--classes", default="quadrant", choices=("quadrant", "per_cell"))
    sp.add_argument("--n-per-class", type=int, default=50)
    sp.add_argument("--noise-std", type=float, default=0.0)
    sp.add_argument("--channels", type=int, default=1)
    sp.add_argument("--seed", type=int, default=4)
    sp.add_argument("--split", default="train", choices=("train", "val"))
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("registry", help="list registered backbones")
    sp.set_defaults(func=cmd_registry)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except FrameworkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
