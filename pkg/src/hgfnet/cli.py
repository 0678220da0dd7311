"""Command-line surface: train, eval, predict-map, and the ablation matrix.

Heavy imports happen inside main() so the HGF_THREADS environment variable
can pin BLAS thread counts before numpy loads (HGF_THREADS=1 gives strictly
deterministic runs). Exit codes: 0 success, 2 data/format, 3 config,
64 usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_USAGE = 64

TRAIN_DEFAULTS = {
    "epochs": 50,
    "batch_size": 64,
    "lr": 1e-3,
    "weight_decay": 1e-6,
    "loss": "afl",
    "seed": 0,
    "gamma_base": 2.0,
    "gamma_scale": 2.0,
    "sfl_alpha": 1.0,
    "sfl_gamma": 2.0,
    "eval_batch_size": 64,
}

# Reference table layout: three baseline columns stay unpopulated, the SSFT
# column is implicitly the SFL cell's transform, and the two loss columns pin
# the transform to the joint 3D mode.
ABLATION_CELLS = {
    "MHSA": None,
    "Wavelets": None,
    "GFNet": None,
    "SpFT": {"transform_mode": "spft", "loss": "sfl"},
    "SFT": {"transform_mode": "sft", "loss": "sfl"},
    "SSFT": {"transform_mode": "ssft", "loss": "sfl"},
    "SFL": "SSFT",  # alias: same configuration, shown under the loss heading
    "AFL": {"transform_mode": "ssft", "loss": "afl"},
}


def _configure_threads():
    n = os.environ.get("HGF_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, n)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: UsageError: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hgfnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a run-config JSON")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--overwrite", action="store_true")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True,
                        help="cube header JSON or run-config JSON")
    p_eval.add_argument("--split", required=True, choices=["train", "val", "test"])
    p_eval.add_argument("--out", default=None, help="output directory (default: checkpoint's)")
    p_eval.add_argument("--overwrite", action="store_true")

    p_map = sub.add_parser("predict-map", help="render a classification map")
    p_map.add_argument("--checkpoint", required=True)
    p_map.add_argument("--data", required=True)
    p_map.add_argument("--full-scene", action="store_true",
                       help="classify unlabeled pixels too")
    p_map.add_argument("--out", default=None)
    p_map.add_argument("--overwrite", action="store_true")

    p_abl = sub.add_parser("ablate", help="run the transform/loss ablation matrix")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--seeds", type=int, default=3)
    p_abl.add_argument("--overwrite", action="store_true")
    return parser


def _read_json(path, what):
    from .errors import FormatError

    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read {what} {path}: {e}") from e


def _resolve_run_config(raw: dict, config_path: str) -> dict:
    from .errors import ConfigError

    if "data" not in raw or "output_dir" not in raw:
        raise ConfigError("run config needs 'data' and 'output_dir' sections")
    cfg = {
        "data": dict(raw["data"]),
        "model": dict(raw.get("model", {})),
        "training": {**TRAIN_DEFAULTS, **raw.get("training", {})},
        "output_dir": raw["output_dir"],
    }
    data = cfg["data"]
    if ("synthetic" in data) == ("header" in data):
        raise ConfigError("data section needs exactly one of 'synthetic' or 'header'")
    data.setdefault("patch", 9)
    data.setdefault("band_stride", 1)
    if data.get("split_seed") is None:
        data["split_seed"] = cfg["training"]["seed"]
    if "header" in data and not os.path.isabs(data["header"]):
        data["header"] = os.path.join(os.path.dirname(os.path.abspath(config_path)), data["header"])
    if not os.path.isabs(cfg["output_dir"]):
        cfg["output_dir"] = os.path.join(os.path.dirname(os.path.abspath(config_path)),
                                         cfg["output_dir"])
    if cfg["training"]["loss"] not in ("ce", "sfl", "afl"):
        raise ConfigError(f"training.loss must be ce|sfl|afl, got {cfg['training']['loss']!r}")
    return cfg


def _prepare_dataset(data_cfg: dict):
    """Run config data section -> (cube, split PatchDataset)."""
    from .data import (SplitSpec, band_subsample, extract_patches, load_cube,
                       normalize_cube, split, synthesize_cube)

    if "header" in data_cfg:
        cube = load_cube(data_cfg["header"])
    else:
        synth = dict(data_cfg["synthetic"])
        cube = synthesize_cube(
            num_classes=synth["classes"], bands=synth["bands"], height=synth["height"],
            width=synth["width"], imbalance_ratio=synth.get("imbalance_ratio", 1.0),
            noise_std=synth.get("noise_std", 0.1), seed=synth.get("seed", 0))
    cube = normalize_cube(cube)
    if data_cfg.get("band_stride", 1) > 1:
        cube = band_subsample(cube, data_cfg["band_stride"])
    dataset = extract_patches(cube, data_cfg["patch"])
    dataset = split(dataset, SplitSpec(seed=data_cfg["split_seed"]))
    return cube, dataset


def _model_config(cfg: dict, cube) -> "object":
    from .model import ModelConfig

    return ModelConfig(
        bands=cube.bands,
        patch_h=cfg["data"]["patch"],
        patch_w=cfg["data"]["patch"],
        num_classes=cube.classes,
        seed=cfg["training"]["seed"],
        **cfg["model"],
    )


def _git_describe():
    import subprocess

    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        return out.stdout.strip() or None
    except OSError:
        return None


def _write_atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _refuse_clobber(paths, overwrite):
    from .errors import ConfigError

    if overwrite:
        return
    existing = [p for p in paths if os.path.exists(p)]
    if existing:
        raise ConfigError(f"refusing to overwrite {existing[0]} (pass --overwrite)")


def _train_one(cfg: dict, out_dir: str = None, echo=print):
    """Shared pipeline for cmd_train and ablation cells; returns run info."""
    import numpy as np

    from .metrics import confusion, scores
    from .model import build, parameter_count, save_checkpoint
    from .training import class_stats, evaluate, fit, make_loss_fn, uniform_stats

    tr = cfg["training"]
    cube, dataset = _prepare_dataset(cfg["data"])
    train_xy = dataset.subset("train")
    val_xy = dataset.subset("val")
    test_xy = dataset.subset("test")

    stats = class_stats(train_xy[1], cube.classes, tr["gamma_base"], tr["gamma_scale"])
    mconfig = _model_config(cfg, cube)
    model = build(mconfig)

    t0 = time.perf_counter()
    result = fit(
        model, train_xy, val_xy, stats,
        loss=tr["loss"], epochs=tr["epochs"], batch_size=tr["batch_size"],
        lr=tr["lr"], weight_decay=tr["weight_decay"], seed=tr["seed"],
        sfl_alpha=tr["sfl_alpha"], sfl_gamma=tr["sfl_gamma"],
        log=lambda r: echo(
            f"epoch {r['epoch']:3d}  train_loss {r['train_loss']:.4f}  "
            f"val_loss {r['val_loss']:.4f}  val_oa {r['val_oa']:.4f}"),
    )
    wall_s = time.perf_counter() - t0

    loss_fn = make_loss_fn(tr["loss"], stats, tr["sfl_alpha"], tr["sfl_gamma"])
    eval_metrics = {}
    for name, (px, py) in (("val", val_xy), ("test", test_xy)):
        _, _, preds = evaluate(model, px, py, None, tr["eval_batch_size"])
        eval_metrics[name] = scores(confusion(py, preds, cube.classes))

    if tr["loss"] == "afl":
        loss_params = {"alpha": stats.alpha.tolist(), "gamma": stats.gamma.tolist()}
    elif tr["loss"] == "sfl":
        u = uniform_stats(cube.classes, tr["sfl_alpha"], tr["sfl_gamma"])
        loss_params = {"alpha": u.alpha.tolist(), "gamma": u.gamma.tolist()}
    else:
        loss_params = {}

    info = {
        "config": cfg,
        "git_describe": _git_describe(),
        "seed": tr["seed"],
        "parameter_count": parameter_count(model),
        "class_counts": stats.counts.tolist(),
        "loss": {"kind": tr["loss"], **loss_params},
        "epochs": result.epochs,
        "final": {
            "best_epoch": result.best_epoch,
            "best_val_oa": result.best_val_oa,
            "val": eval_metrics["val"],
            "test": eval_metrics["test"],
        },
        "wall_s": wall_s,
    }

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = os.path.join(out_dir, "checkpoint.hgfc")
        save_checkpoint(model, ckpt, extra={"run_config": cfg})
        _write_atomic(os.path.join(out_dir, "epochs.jsonl"),
                      "".join(json.dumps(r) + "\n" for r in result.epochs))
        _write_atomic(os.path.join(out_dir, "metadata.json"), json.dumps(info, indent=2))
        from .report import save_loss_curves

        save_loss_curves(result.epochs, os.path.join(out_dir, "loss_curves.png"))
    return info, model


def cmd_train(args) -> int:
    cfg = _resolve_run_config(_read_json(args.config, "run config"), args.config)
    out_dir = cfg["output_dir"]
    outputs = [os.path.join(out_dir, n) for n in
               ("checkpoint.hgfc", "epochs.jsonl", "metadata.json", "loss_curves.png")]
    _refuse_clobber(outputs, args.overwrite)
    info, _ = _train_one(cfg, out_dir)
    final = info["final"]
    print(f"best epoch {final['best_epoch']}  val_oa {final['best_val_oa']:.4f}  "
          f"test_oa {final['test']['oa']:.4f}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def _load_eval_data(data_path: str, ckpt_meta: dict):
    """Resolve --data (cube header or run config) into a split dataset."""
    from .errors import FormatError

    raw = _read_json(data_path, "data description")
    if "data_file" in raw:
        run_cfg = (ckpt_meta.get("extra") or {}).get("run_config", {})
        data_cfg = {
            "header": data_path,
            "patch": run_cfg.get("data", {}).get("patch", 9),
            "band_stride": run_cfg.get("data", {}).get("band_stride", 1),
            "split_seed": run_cfg.get("data", {}).get("split_seed", 0),
        }
    elif "data" in raw:
        data_cfg = _resolve_run_config(raw, data_path)["data"]
    else:
        raise FormatError(f"{data_path} is neither a cube header nor a run config")
    return _prepare_dataset(data_cfg)


def cmd_eval(args) -> int:
    from .errors import ConfigError
    from .metrics import confusion, scores
    from .model import checkpoint_meta, load_checkpoint
    from .report import format_class_table, save_confusion_figure
    from .training import evaluate

    meta = checkpoint_meta(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    cube, dataset = _load_eval_data(args.data, meta)
    cfgm = model.config
    if cube.bands != cfgm.bands:
        raise ConfigError(f"cube has {cube.bands} bands, checkpoint expects {cfgm.bands}")
    patch = dataset.patches.shape[-1]
    if (patch, patch) != (cfgm.patch_h, cfgm.patch_w):
        raise ConfigError(f"patch {patch} does not match checkpoint {cfgm.patch_h}")
    if cube.classes != cfgm.num_classes:
        raise ConfigError(f"cube has {cube.classes} classes, checkpoint expects {cfgm.num_classes}")

    px, py = dataset.subset(args.split)
    _, _, preds = evaluate(model, px, py, None)
    result = scores(confusion(py, preds, cube.classes))

    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"metrics_{args.split}.json")
    fig_path = os.path.join(out_dir, f"confusion_{args.split}.png")
    _refuse_clobber([json_path, fig_path], args.overwrite)
    _write_atomic(json_path, json.dumps(result, indent=2))
    save_confusion_figure(result["confusion"], fig_path)

    print(format_class_table(result))
    print(f"metrics written to {json_path}")
    return EXIT_OK


def cmd_predict_map(args) -> int:
    import numpy as np

    from .data import HsiCube, extract_patches
    from .errors import ConfigError
    from .model import checkpoint_meta, load_checkpoint
    from .report import render_label_map, write_ppm
    from .training import predict_probs

    meta = checkpoint_meta(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    cube, _ = _load_eval_data(args.data, meta)
    cfgm = model.config
    if cube.bands != cfgm.bands:
        raise ConfigError(f"cube has {cube.bands} bands, checkpoint expects {cfgm.bands}")
    if cfgm.patch_h != cfgm.patch_w:
        raise ConfigError("prediction maps need square patches")

    target = cube
    if args.full_scene:
        target = HsiCube(values=cube.values, gt=np.ones_like(cube.gt), classes=cube.classes)
    dataset = extract_patches(target, cfgm.patch_h)
    probs = predict_probs(model, dataset.patches)
    preds = probs.argmax(axis=1) + 1

    labels = np.zeros((cube.height, cube.width), dtype=np.int64)
    labels[dataset.coords[:, 0], dataset.coords[:, 1]] = preds

    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    raster_path = os.path.join(out_dir, "predicted_labels.i32")
    ppm_path = os.path.join(out_dir, "predicted_map.ppm")
    _refuse_clobber([raster_path, ppm_path], args.overwrite)
    labels.astype("<i4").tofile(raster_path)
    write_ppm(ppm_path, render_label_map(labels, cube.classes))
    print(f"map written to {ppm_path} ({cube.width}x{cube.height}, {cube.classes} classes)")
    return EXIT_OK


def cmd_ablate(args) -> int:
    import numpy as np

    from .report import ablation_csv, format_ablation_table, save_ablation_figure

    cfg = _resolve_run_config(_read_json(args.config, "run config"), args.config)
    out_dir = cfg["output_dir"]
    outputs = [os.path.join(out_dir, n) for n in
               ("ablation.json", "ablation.csv", "ablation.png")]
    _refuse_clobber(outputs, args.overwrite)
    os.makedirs(out_dir, exist_ok=True)

    base_seed = cfg["training"]["seed"]
    runs = {}
    for name, cell in ABLATION_CELLS.items():
        if cell is None or isinstance(cell, str):
            continue
        runs[name] = []
        for rep in range(args.seeds):
            rep_cfg = json.loads(json.dumps(cfg))
            rep_cfg["training"]["seed"] = base_seed + rep
            rep_cfg["data"]["split_seed"] = base_seed + rep
            rep_cfg["training"]["loss"] = cell["loss"]
            rep_cfg["model"]["transform_mode"] = cell["transform_mode"]
            print(f"[{name} seed {base_seed + rep}] training...")
            info, _ = _train_one(rep_cfg, out_dir=None, echo=lambda s: None)
            runs[name].append({
                "seed": base_seed + rep,
                "loss": info["loss"],
                "test": info["final"]["test"],
            })

    table = {}
    for name, cell in ABLATION_CELLS.items():
        key = cell if isinstance(cell, str) else name
        if cell is None:
            table[name] = None
            continue
        reps = runs[key]
        table[name] = {m: float(np.median([r["test"][m] for r in reps]))
                       for m in ("kappa", "oa", "aa")}

    _write_atomic(os.path.join(out_dir, "ablation.json"),
                  json.dumps({"config": cfg, "seeds": args.seeds, "runs": runs,
                              "table": table}, indent=2))
    _write_atomic(os.path.join(out_dir, "ablation.csv"), ablation_csv(table))
    save_ablation_figure(table, os.path.join(out_dir, "ablation.png"))
    print(format_ablation_table(table))
    print(f"outputs in {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    _configure_threads()
    parser = _build_parser()
    args = parser.parse_args(argv)

    from .errors import ConfigError, DataError, DomainError, FormatError, ShapeError, TapeError

    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "predict-map": cmd_predict_map,
        "ablate": cmd_ablate,
    }
    try:
        return handlers[args.command](args)
    except (FormatError, DataError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ShapeError, DomainError, TapeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
