"""Command-line front end.

Subcommands: synth, preprocess, train, predict, evaluate, verify.
Exit codes: 0 success, 1 operational failure, 2 usage/config error.

Settings merge three sources with precedence flags > config file > defaults;
the config file is one flat JSON object. Every emitted JSON document carries
the tool version and the effective configuration, so a run can be reproduced
from its summary alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, grading, imgproc, nnet, verify


class UsageError(Exception):
    """Bad flags, config values, or missing input paths (exit code 2)."""


CONFIG_DEFAULTS = {
    # pipeline
    "mask_threshold": 10,
    "median_kernel": 3,
    "clahe_tiles": 8,
    "clahe_clip": 2.0,
    "output_side": imgproc.TENSOR_SIDE,
    # training
    "learning_rate": 3e-4,
    "epochs": 40,
    "batch_size": 32,
    "seed": 42,
    "optimizer": "adam",
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "dropout_rate": 0.2,
    "freeze_backbone": True,
    # split
    "val_fraction": 0.2,
    "stratified": True,
    # synthetic data
    "per_class": 100,
    "side": 64,
    "noise_sd": 5.0,
}

_PIPELINE_KEYS = ("mask_threshold", "median_kernel", "clahe_tiles", "clahe_clip", "output_side")
_TRAIN_KEYS = ("learning_rate", "epochs", "batch_size", "seed", "optimizer",
               "adam_beta1", "adam_beta2", "adam_eps", "dropout_rate")


def _parse_u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2**64), got {value}")
    return value


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - set(CONFIG_DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {sorted(unknown)}")
    return cfg


def _effective_config(args: argparse.Namespace) -> dict:
    eff = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        eff.update(_load_config_file(args.config))
    for key in CONFIG_DEFAULTS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            eff[key] = flag_value
    return eff


def _pipeline_config(eff: dict) -> imgproc.PipelineConfig:
    try:
        return imgproc.PipelineConfig(**{k: eff[k] for k in _PIPELINE_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _train_config(eff: dict) -> nnet.TrainConfig:
    try:
        return nnet.TrainConfig(**{k: eff[k] for k in _TRAIN_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _split_spec(eff: dict) -> data.SplitSpec:
    try:
        return data.SplitSpec(val_fraction=eff["val_fraction"], seed=eff["seed"],
                              stratified=eff["stratified"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} not found: {p}")
    return p


def _emit(summary: dict, out_path: Path | None = None) -> None:
    text = json.dumps(summary, indent=2)
    if out_path is not None:
        out_path.write_text(text + "\n", encoding="utf-8")
    print(text)


def _summary(command: str, eff: dict, **fields) -> dict:
    return {"tool_version": __version__, "command": command, "config": eff, **fields}


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    eff = _effective_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        manifest = data.materialize_synth(out_dir, n_per_class=eff["per_class"],
                                          side=eff["side"], noise_sd=eff["noise_sd"],
                                          seed=eff["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    dist = data.class_distribution(manifest)
    _emit(_summary("synth", eff,
                   n_images=len(manifest),
                   per_class_counts=list(dist.counts),
                   out_dir=str(out_dir),
                   manifest=str(out_dir / "manifest.csv"),
                   images_dir=str(out_dir / "images")),
          out_dir / "synth_summary.json")
    return 0


def cmd_preprocess(args) -> int:
    eff = _effective_config(args)
    cfg = _pipeline_config(eff)
    manifest_path = _require_file(args.manifest, "manifest")
    images_dir = _require_dir(args.images, "image directory")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        manifest = data.load_manifest(manifest_path)
    except data.ManifestError as exc:
        raise UsageError(str(exc)) from exc
    previews_dir = None
    if args.previews:
        previews_dir = out_dir / "previews"
        previews_dir.mkdir(exist_ok=True)
    ok = 0
    failures = []
    per_class = [0] * grading.GRADE_COUNT
    for id_code, grade in manifest.entries:
        try:
            img = data.load_png(images_dir / f"{id_code}.png")
            stages = imgproc.preprocess_stages(img, cfg)
            imgproc.write_fundus_tensor(out_dir / f"{id_code}.fdt", stages["tensor"])
            if previews_dir is not None:
                data.save_png(stages["enhanced"], previews_dir / f"{id_code}.png")
        except (ValueError, OSError) as exc:
            failures.append({"id_code": id_code, "error": str(exc)})
            continue
        ok += 1
        per_class[grade] += 1
    _emit(_summary("preprocess", eff,
                   n_ok=ok,
                   n_failed=len(failures),
                   per_class_counts=per_class,
                   failures=failures,
                   out_dir=str(out_dir)),
          out_dir / "preprocess_summary.json")
    return 1 if failures else 0


def _load_tensor_dataset(tensor_dir: Path, manifest: data.Manifest):
    missing = [i for i, _ in manifest.entries if not (tensor_dir / f"{i}.fdt").is_file()]
    if missing:
        raise UsageError(f"missing tensor files in {tensor_dir}: {missing[:10]}"
                         + (" ..." if len(missing) > 10 else ""))
    return {i: imgproc.read_fundus_tensor(tensor_dir / f"{i}.fdt") for i, _ in manifest.entries}


def cmd_train(args) -> int:
    eff = _effective_config(args)
    train_cfg = _train_config(eff)
    split_spec = _split_spec(eff)
    manifest_path = _require_file(args.manifest, "manifest")
    tensor_dir = _require_dir(args.tensors, "tensor directory")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        manifest = data.load_manifest(manifest_path)
        train_m, val_m = data.stratified_split(manifest, split_spec)
    except data.ManifestError as exc:
        raise UsageError(str(exc)) from exc
    tensors = _load_tensor_dataset(tensor_dir, manifest)
    shape = next(iter(tensors.values())).shape
    if len(shape) != 3 or shape[0] != 3 or shape[1] != shape[2]:
        raise UsageError(f"tensors must be (3, s, s), got {shape}")
    for i, t in tensors.items():
        if t.shape != shape:
            raise UsageError(f"tensor {i} has shape {t.shape}, expected {shape}")
    net = nnet.build_reference_model(shape[1], seed=train_cfg.seed,
                                     dropout_rate=train_cfg.dropout_rate)
    if eff["freeze_backbone"]:
        net.freeze_backbone()
    train_set = [(tensors[i], g) for i, g in train_m.entries]
    val_set = [(tensors[i], g) for i, g in val_m.entries]
    log = nnet.train(net, train_set, train_cfg, val_data=val_set)
    log_path = out_dir / "trainlog.jsonl"
    with open(log_path, "w", encoding="utf-8") as f:
        for rec in log:
            f.write(json.dumps({"epoch": rec.epoch, "loss": rec.loss,
                                "val_qwk": rec.val_qwk}) + "\n")
    net.eval_mode()
    ckpt_path = out_dir / "model.ckpt"
    nnet.save_checkpoint(ckpt_path, net, seed=train_cfg.seed, epoch=len(log))
    _emit(_summary("train", eff,
                   n_train=len(train_set),
                   n_val=len(val_set),
                   epochs_run=len(log),
                   final_loss=log[-1].loss if log else None,
                   final_val_qwk=log[-1].val_qwk if log else None,
                   checkpoint=str(ckpt_path),
                   trainlog=str(log_path)),
          out_dir / "train_summary.json")
    return 0


def cmd_predict(args) -> int:
    eff = _effective_config(args)
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    if bool(args.tensors) == bool(args.images):
        raise UsageError("exactly one of --tensors or --images is required")
    try:
        net, _meta = nnet.load_checkpoint(ckpt_path)
    except nnet.CheckpointError as exc:
        raise UsageError(str(exc)) from exc
    if args.tensors:
        src = _require_dir(args.tensors, "tensor directory")
        paths = sorted(src.glob("*.fdt"))
        if not paths:
            raise UsageError(f"no .fdt files in {src}")
        batch_inputs = [(p.stem, lambda p=p: imgproc.read_fundus_tensor(p)) for p in paths]
    else:
        src = _require_dir(args.images, "image directory")
        paths = sorted(src.glob("*.png"))
        if not paths:
            raise UsageError(f"no .png files in {src}")
        cfg = _pipeline_config(eff)
        batch_inputs = [(p.stem, lambda p=p: imgproc.preprocess(data.load_png(p), cfg))
                        for p in paths]
    rows = []
    chunk = 64
    for lo in range(0, len(batch_inputs), chunk):
        part = batch_inputs[lo:lo + chunk]
        tensors = []
        for id_code, loader in part:
            t = loader()
            if t.shape != net.input_shape:
                raise ValueError(f"{id_code}: tensor shape {t.shape} does not match "
                                 f"checkpoint input {net.input_shape}")
            tensors.append(t)
        preds = nnet.predict(net, np.stack(tensors))
        rows.extend((id_code, score, grade)
                    for (id_code, _), (score, grade) in zip(part, preds))
    out_csv = Path(args.out)
    if out_csv.parent and not out_csv.parent.exists():
        out_csv.parent.mkdir(parents=True, exist_ok=True)
    data.write_predictions_csv(out_csv, rows)
    _emit(_summary("predict", eff, n=len(rows), out_csv=str(out_csv)))
    return 0


def cmd_evaluate(args) -> int:
    eff = _effective_config(args)
    truth_path = _require_file(args.truth, "truth CSV")
    pred_path = _require_file(args.pred, "prediction CSV")
    try:
        truth = data.load_manifest(truth_path)
        preds = data.read_predictions_csv(pred_path)
    except data.ManifestError as exc:
        raise UsageError(str(exc)) from exc
    report = grading.evaluate_joined(list(truth.entries), preds)
    summary = _summary("evaluate", eff, **report.to_json_dict())
    _emit(summary, Path(args.out) if args.out else None)
    return 0


def cmd_verify(args) -> int:
    results = verify.run_verification(weight_exponent=args.qwk_weight_exponent,
                                      seed=args.seed if args.seed is not None else 2024)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} verification suites passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drgrade",
                                     description="Fundus preprocessing, ordinal-regression "
                                                 "training, and QWK evaluation.")
    parser.add_argument("--version", action="version", version=f"drgrade {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", type=Path, help="flat JSON config file")
        p.add_argument("--seed", type=_parse_u64, help="u64 seed for all randomness")

    p = sub.add_parser("synth", help="materialize a synthetic graded dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--side", type=int)
    p.add_argument("--noise-sd", dest="noise_sd", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="run the preprocessing pipeline over a dataset")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--images", required=True, help="directory of <id_code>.png files")
    p.add_argument("--out", required=True, help="output directory for .fdt tensors")
    p.add_argument("--previews", action="store_true",
                   help="also write post-CLAHE grayscale PNG previews")
    p.add_argument("--mask-threshold", dest="mask_threshold", type=int)
    p.add_argument("--median-kernel", dest="median_kernel", type=int)
    p.add_argument("--clahe-tiles", dest="clahe_tiles", type=int)
    p.add_argument("--clahe-clip", dest="clahe_clip", type=float)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="stratified split + ordinal-regression training")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--tensors", required=True, help="directory of preprocessed .fdt tensors")
    p.add_argument("--out", required=True, help="output directory (checkpoint, logs)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--stratified", dest="stratified", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--freeze-backbone", dest="freeze_backbone",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="train only the head (default: frozen backbone)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score preprocessed tensors or raw images")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tensors", help="directory of .fdt tensors")
    p.add_argument("--images", help="directory of raw .png images (preprocessed on the fly)")
    p.add_argument("--out", required=True, help="output prediction CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="QWK/accuracy/MSE report from truth + prediction CSVs")
    common(p)
    p.add_argument("--truth", required=True, help="truth CSV (id_code,diagnosis)")
    p.add_argument("--pred", required=True, help="prediction CSV (id_code,score[,grade])")
    p.add_argument("--out", help="also write the report JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="run the built-in oracle suites")
    common(p)
    p.add_argument("--qwk-weight-exponent", dest="qwk_weight_exponent", type=float,
                   default=2.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
