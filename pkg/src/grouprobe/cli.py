"""Command-line entry point: seeded experiment orchestration (annotate ->
train -> eval), eta sweeps, multi-seed averaging, and report persistence.

Subcommands: synth, annotate, train, eval, run, sweep, report. Exit codes:
0 success, 2 validation/config error, 1 runtime failure. GROUPROBE_THREADS
caps how many seeds run concurrently.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .annotators import annotation_quality, erm_confidence_annotate, kmeans_cluster, map_clusters_to_attributes, pca_reduce
from .errors import GrouprobeError, SchemaError, ValidationError
from .metrics import eval_report, format_report_table
from .synth import SynthConfig, gen_spurious_dataset
from .tensor_io import (
    DatasetBundle,
    load_bundle,
    read_sample_table,
    save_bundle,
    validate_bundle,
    write_sample_table,
)
from .trainer import TrainConfig, forward_probs, load_head, save_head, train
from .zeroshot import annotate_attributes, form_groups

ANNOTATORS = ("zeroshot", "kmeans", "erm-confidence", "none")


@dataclass
class ExperimentConfig:
    """Flat experiment description; every key can live in the config file."""

    bundle: str = ""
    out: str = "runs/exp"
    seeds: tuple = (0, 1, 2)
    annotator: str = "zeroshot"
    scale: float = 30.0
    kmeans_dims: int = 8
    kmeans_seed: int = 0
    kmeans_iters: int = 100
    kmeans_tol: float = 1e-6
    kmeans_reduce: bool = True
    erm_seed: int = 0
    method: str = "dpt"
    eta: float = 5.0
    momentum: float = 0.3
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    epochs: int = 50
    batch_size: int = 64
    gdro_step: float = 0.01
    init: str = "random"
    select: str = "final"
    train_group_source: str = "pseudo"
    eval_group_source: str = "true"
    sweep_param: str = ""
    sweep_values: tuple = ()
    annotation_cache: str = ""  # defaults to <out>/annotations

    def validate(self) -> None:
        if not self.bundle:
            raise ValidationError("config needs a bundle path")
        if not Path(self.bundle).exists():
            raise ValidationError(f"bundle path {self.bundle!r} does not exist")
        if not self.seeds:
            raise ValidationError("need at least one seed")
        if self.annotator not in ANNOTATORS:
            raise ValidationError(f"unknown annotator {self.annotator!r}; choose from {ANNOTATORS}")
        for src in (self.train_group_source, self.eval_group_source):
            if src not in ("pseudo", "true"):
                raise ValidationError(f"group source must be 'pseudo' or 'true', got {src!r}")
        self.train_config(seed=int(self.seeds[0]))  # surfaces TrainConfig errors early

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            method=self.method,
            eta=self.eta,
            momentum=self.momentum,
            scale=self.scale,
            lr_start=self.lr_start,
            lr_end=self.lr_end,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=seed,
            gdro_step=self.gdro_step,
            init=self.init,
            select=self.select,
        )


_CONFIG_TYPES = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    if key not in _CONFIG_TYPES:
        raise ValidationError(f"unknown config key {key!r}")
    current = getattr(ExperimentConfig(), key)
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValidationError(f"config key {key}: expected true/false, got {raw!r}")
    if isinstance(current, tuple):
        items = [p.strip() for p in raw.split(",") if p.strip()]
        if key == "seeds":
            return tuple(int(p) for p in items)
        return tuple(float(p) for p in items)
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw


def parse_config_file(path) -> ExperimentConfig:
    """Parse the flat ``key = value`` config format ('#' starts a comment)."""
    cfg = ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} does not exist")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        try:
            setattr(cfg, key, _coerce(key, raw))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return cfg


def _json_dump(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def annotation_fingerprint(bundle_dir, cfg: ExperimentConfig) -> str:
    """Hash of bundle bytes + annotator + its parameters; eta etc. excluded."""
    h = hashlib.sha256()
    bundle_dir = Path(bundle_dir)
    for rel in ("images.emb", "samples.csv", "prompts/class.emb", "prompts/attr.emb", "prompts/manifest.json"):
        p = bundle_dir / rel
        if p.exists():
            h.update(rel.encode())
            h.update(p.read_bytes())
    params = {"annotator": cfg.annotator, "scale": cfg.scale}
    if cfg.annotator == "kmeans":
        params.update(
            dims=cfg.kmeans_dims,
            seed=cfg.kmeans_seed,
            iters=cfg.kmeans_iters,
            tol=cfg.kmeans_tol,
            reduce=cfg.kmeans_reduce,
        )
    if cfg.annotator == "erm-confidence":
        params.update(erm_seed=cfg.erm_seed, epochs=cfg.epochs, lr_start=cfg.lr_start, lr_end=cfg.lr_end)
    h.update(json.dumps(params, sort_keys=True).encode())
    return h.hexdigest()[:16]


def run_annotator(bundle: DatasetBundle, cfg: ExperimentConfig, splits=("train", "val")) -> np.ndarray:
    """Produce pseudo-attribute labels for the requested splits.

    Returns a full-length s_pseudo column (-1 outside the annotated rows).
    """
    samples = bundle.samples
    mask = np.zeros(samples.n, dtype=bool)
    for split in splits:
        mask |= samples.split_mask(split)
    num_attrs = bundle.prompts.num_attributes
    out = np.full(samples.n, -1, dtype=np.int64)

    if cfg.annotator == "zeroshot":
        out[mask] = annotate_attributes(
            bundle.images.values[mask], bundle.prompts.attr_embeddings, scale=cfg.scale
        )
        return out

    if cfg.annotator == "kmeans":
        feats = bundle.images.values[mask]
        if cfg.kmeans_reduce and cfg.kmeans_dims < feats.shape[1]:
            feats = pca_reduce(feats, cfg.kmeans_dims).projected
        result = kmeans_cluster(
            feats, num_attrs, seed=cfg.kmeans_seed, max_iters=cfg.kmeans_iters, tol=cfg.kmeans_tol
        )
        labels = result.assignments
        zs = annotate_attributes(bundle.images.values[mask], bundle.prompts.attr_embeddings, scale=cfg.scale)
        _, labels, _ = map_clusters_to_attributes(labels, zs)
        out[mask] = labels
        return out

    if cfg.annotator == "erm-confidence":
        erm_cfg = cfg.train_config(seed=cfg.erm_seed)
        erm_cfg = dataclasses.replace(erm_cfg, method="erm", select="final")
        head, _ = train(bundle, None, erm_cfg)
        probs = forward_probs(head, bundle.images.values[mask])
        zs = annotate_attributes(bundle.images.values[mask], bundle.prompts.attr_embeddings, scale=cfg.scale)
        out[mask] = erm_confidence_annotate(probs, samples, num_attrs, mask=mask, zs_reference=zs)
        return out

    raise ValidationError(f"annotator {cfg.annotator!r} cannot produce labels here")


def ensure_annotation(bundle: DatasetBundle, cfg: ExperimentConfig, bundle_dir, cache_dir) -> tuple[DatasetBundle, str]:
    """Reuse existing or cached pseudo-annotations, else compute and cache them."""
    samples = bundle.samples
    need = samples.split_mask("train") | samples.split_mask("val")
    if np.all(samples.s_pseudo[need] >= 0):
        return bundle, "preexisting"
    if cfg.annotator == "none":
        raise ValidationError("annotator 'none' but the bundle lacks s_pseudo on train/val rows")
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    fp = annotation_fingerprint(bundle_dir, cfg)
    cached = cache_dir / f"{fp}.csv"
    if cached.exists():
        table = read_sample_table(cached)
        return DatasetBundle(bundle.images, table, bundle.prompts), str(cached)
    s_pseudo = run_annotator(bundle, cfg)
    table = samples.with_pseudo(s_pseudo)
    write_sample_table(table, cached)
    return DatasetBundle(bundle.images, table, bundle.prompts), str(cached)


def _write_weight_trajectory(report, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "batch", "group", "w"])
        for epoch, batch, w in report.weight_trajectory:
            for grp, value in enumerate(w):
                writer.writerow([epoch, batch, grp, repr(float(value))])


def _run_single_seed(bundle: DatasetBundle, cfg: ExperimentConfig, seed: int, out_dir: Path) -> dict:
    entry: dict = {"seed": seed, "status": "ok"}
    stage = "form-groups"
    try:
        samples = bundle.samples
        k = bundle.prompts.num_classes
        s = bundle.prompts.num_attributes
        train_mask = samples.split_mask("train")
        groups = None
        if cfg.method != "erm" or cfg.select == "best-val-wg":
            groups = form_groups(samples, s, source=cfg.train_group_source, num_classes=k, mask=train_mask)
        val_groups = None
        val_mask = samples.split_mask("val")
        if val_mask.any() and np.all(samples.s_pseudo[val_mask] >= 0):
            val_groups = form_groups(samples, s, source="pseudo", num_classes=k, mask=val_mask)

        stage = "train"
        head, report = train(bundle, groups, cfg.train_config(seed), val_groups=val_groups)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "head"
        save_head(
            head,
            ckpt,
            meta={"method": cfg.method, "seed": seed, "eta": cfg.eta, "m": cfg.momentum},
        )
        report.checkpoint_path = str(ckpt)
        entry["checkpoint"] = str(ckpt)
        weights_csv = out_dir / "weights.csv"
        _write_weight_trajectory(report, weights_csv)
        entry["weights"] = str(weights_csv)
        _json_dump(
            {
                "epoch_losses": report.epoch_losses,
                "val_worst_group": report.val_worst_group,
                "selected_epoch": report.selected_epoch,
            },
            out_dir / "train_report.json",
        )

        stage = "eval"
        entry["reports"] = {}
        for split in ("val", "test"):
            if not samples.split_mask(split).any():
                continue
            source = cfg.eval_group_source
            if source == "true" and np.any(samples.s_true[samples.split_mask(split)] < 0):
                source = "pseudo"
            rep = eval_report(head, bundle, split, group_source=source)
            payload = rep.to_dict(method=cfg.method, seed=seed, eta=cfg.eta, group_source=source)
            path = out_dir / f"report_{split}.json"
            _json_dump(payload, path)
            entry["reports"][split] = str(path)
        return entry
    except Exception as exc:  # recorded per-seed; remaining seeds still run
        return {"seed": seed, "status": "failed", "stage": stage, "error": f"{type(exc).__name__}: {exc}"}


def _aggregate(entries: list) -> dict:
    sums: dict = {}
    counts: dict = {}
    for entry in entries:
        if entry.get("status") != "ok":
            continue
        for split, path in entry.get("reports", {}).items():
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            agg = sums.setdefault(split, {"wg": 0.0, "avg": 0.0, "gap": 0.0})
            for key in agg:
                agg[key] += data[key]
            counts[split] = counts.get(split, 0) + 1
    return {
        split: {key: value / counts[split] for key, value in agg.items()}
        for split, agg in sums.items()
    }


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Full pipeline over every seed; returns (and writes) the run manifest."""
    cfg.validate()
    out_root = Path(cfg.out)
    out_root.mkdir(parents=True, exist_ok=True)
    bundle = load_bundle(cfg.bundle)
    report = validate_bundle(bundle)
    if not report.ok:
        raise ValidationError(f"bundle failed validation:\n{report}")
    cache_dir = cfg.annotation_cache or (out_root / "annotations")
    bundle, annotation_ref = ensure_annotation(bundle, cfg, cfg.bundle, cache_dir)

    threads = max(1, int(os.environ.get("GROUPROBE_THREADS", "1")))
    seeds = [int(s) for s in cfg.seeds]
    if threads == 1:
        entries = [_run_single_seed(bundle, cfg, seed, out_root / f"seed{seed}") for seed in seeds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_run_single_seed, bundle, cfg, seed, out_root / f"seed{seed}")
                for seed in seeds
            ]
            entries = [f.result() for f in futures]

    manifest = {
        "version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": dataclasses.asdict(cfg),
        "annotation": annotation_ref,
        "seeds": entries,
        "aggregate": _aggregate(entries),
    }
    _json_dump(manifest, out_root / "manifest.json")
    return manifest


SWEEPABLE = ("eta", "momentum", "lr_start", "lr_end", "epochs", "batch_size", "gdro_step")


def run_sweep(cfg: ExperimentConfig) -> dict:
    """One child experiment per sweep value, sharing the annotation cache."""
    cfg.validate()
    if not cfg.sweep_param:
        raise ValidationError("sweep needs sweep_param (and sweep_values)")
    if cfg.sweep_param not in SWEEPABLE:
        raise ValidationError(f"cannot sweep {cfg.sweep_param!r}; choose from {SWEEPABLE}")
    if not cfg.sweep_values:
        raise ValidationError("sweep needs a nonempty sweep_values list")
    out_root = Path(cfg.out)
    cache_dir = cfg.annotation_cache or str(out_root / "annotations")
    children = []
    for value in cfg.sweep_values:
        child = dataclasses.replace(
            cfg,
            sweep_param="",
            sweep_values=(),
            annotation_cache=str(cache_dir),
            out=str(out_root / f"{cfg.sweep_param}={value:g}"),
        )
        if isinstance(getattr(cfg, cfg.sweep_param), int):
            setattr(child, cfg.sweep_param, int(value))
        else:
            setattr(child, cfg.sweep_param, float(value))
        manifest = run_experiment(child)
        children.append(
            {
                "value": value,
                "out": child.out,
                "manifest": str(Path(child.out) / "manifest.json"),
                "aggregate": manifest["aggregate"],
            }
        )
    sweep_manifest = {
        "version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": dataclasses.asdict(cfg),
        "param": cfg.sweep_param,
        "children": children,
    }
    _json_dump(sweep_manifest, out_root / "sweep_manifest.json")
    return sweep_manifest


def emit_report(manifest: dict) -> tuple[str, dict]:
    """Aligned text table plus a JSON mirror of a run or sweep manifest."""
    rows = []
    if "children" in manifest:
        for child in manifest["children"]:
            for split, agg in sorted(child["aggregate"].items()):
                rows.append(
                    {
                        "method": f"{manifest['config']['method']} ({manifest['param']}={child['value']:g})",
                        "split": split,
                        **agg,
                    }
                )
    else:
        method = manifest["config"]["method"]
        aggregate = manifest.get("aggregate", {})
        for split in ("val", "test"):
            agg = aggregate.get(split)
            if agg is None:
                rows.append({"method": method, "split": split, "wg": None, "avg": None, "gap": None})
            else:
                rows.append({"method": method, "split": split, **agg})
    return format_report_table(rows), {"rows": rows}


# ---------------------------------------------------------------------------
# argparse wiring


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic spurious-correlation bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=1000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--attrs", type=int, default=2)
    p.add_argument("--rho", type=float, default=0.95)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.5)
    p.add_argument("--sigma", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)


def _add_annotate(sub):
    p = sub.add_parser("annotate", help="pseudo-annotate spurious attributes")
    p.add_argument("--bundle", required=True)
    p.add_argument("--annotator", choices=[a for a in ANNOTATORS if a != "none"], default="zeroshot")
    p.add_argument("--splits", default="train,val")
    p.add_argument("--scale", type=float, default=30.0)
    p.add_argument("--kmeans-dims", type=int, default=8)
    p.add_argument("--kmeans-seed", type=int, default=0)
    p.add_argument("--kmeans-iters", type=int, default=100)
    p.add_argument("--kmeans-tol", type=float, default=1e-6)
    p.add_argument("--no-reduce", action="store_true", help="skip PCA before k-means")
    p.add_argument("--out", default="", help="output CSV (default: rewrite the bundle's samples.csv)")


def _add_train(sub):
    p = sub.add_parser("train", help="train a classifier head on a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("erm", "group-balanced", "dpt", "gdro"), default="dpt")
    p.add_argument("--eta", type=float, default=5.0)
    p.add_argument("--momentum", type=float, default=0.3)
    p.add_argument("--scale", type=float, default=30.0)
    p.add_argument("--lr-start", type=float, default=1e-3)
    p.add_argument("--lr-end", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gdro-step", type=float, default=0.01)
    p.add_argument("--init", choices=("random", "prompt"), default="random")
    p.add_argument("--select", choices=("final", "best-val-wg"), default="final")
    p.add_argument("--group-source", choices=("pseudo", "true"), default="pseudo")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a trained head")
    p.add_argument("--bundle", required=True)
    p.add_argument("--head", required=True, help="checkpoint base path (without .emb/.json)")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--group-source", choices=("true", "pseudo"), default="true")
    p.add_argument("--out", default="", help="optional JSON output path")


def _add_run(sub):
    p = sub.add_parser("run", help="full pipeline: annotate, train, eval over seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, action="append", help="override seeds (repeatable)")
    p.add_argument("--eta", type=float)
    p.add_argument("--method")
    p.add_argument("--annotator")
    p.add_argument("--out")


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="run one experiment per sweep value")
    p.add_argument("--config", required=True)
    p.add_argument("--param", help="override sweep_param")
    p.add_argument("--values", help="override sweep_values, comma-separated")
    p.add_argument("--out")


def _add_report(sub):
    p = sub.add_parser("report", help="format a manifest as a table + JSON")
    p.add_argument("--manifest", required=True)
    p.add_argument("--json-out", default="", help="optional path for the JSON mirror")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grouprobe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_synth, _add_annotate, _add_train, _add_eval, _add_run, _add_sweep, _add_report):
        add(sub)
    return parser


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        d=args.d,
        n_train=args.n_train,
        n_val=args.n_val,
        n_test=args.n_test,
        num_classes=args.classes,
        num_attrs=args.attrs,
        rho=args.rho,
        alpha=args.alpha,
        beta=args.beta,
        sigma=args.sigma,
        seed=args.seed,
    )
    bundle = gen_spurious_dataset(cfg)
    save_bundle(bundle, args.out)
    print(f"wrote bundle to {args.out} ({bundle.images.n} samples, d={bundle.images.d})")
    return 0


def _cmd_annotate(args) -> int:
    bundle = load_bundle(args.bundle)
    cfg = ExperimentConfig(
        bundle=args.bundle,
        annotator=args.annotator,
        scale=args.scale,
        kmeans_dims=args.kmeans_dims,
        kmeans_seed=args.kmeans_seed,
        kmeans_iters=args.kmeans_iters,
        kmeans_tol=args.kmeans_tol,
        kmeans_reduce=not args.no_reduce,
    )
    splits = tuple(s.strip() for s in args.splits.split(",") if s.strip())
    s_pseudo = run_annotator(bundle, cfg, splits=splits)
    mask = np.zeros(bundle.samples.n, dtype=bool)
    for split in splits:
        mask |= bundle.samples.split_mask(split)
    table = bundle.samples.with_pseudo(s_pseudo[mask], mask=mask)
    out = args.out or (Path(args.bundle) / "samples.csv")
    write_sample_table(table, out)
    print(f"annotated {int(mask.sum())} rows with {args.annotator}; wrote {out}")
    if np.all(table.s_true[mask] >= 0):
        quality = annotation_quality(
            table.s_pseudo[mask], table, bundle.prompts.num_attributes, mask=mask
        )
        print(
            f"attribute prediction: overall {quality.overall:.3f}, "
            f"worst-group {quality.worst_group:.3f}"
        )
    return 0


def _cmd_train(args) -> int:
    bundle = load_bundle(args.bundle)
    report = validate_bundle(bundle)
    if not report.ok:
        raise ValidationError(f"bundle failed validation:\n{report}")
    samples = bundle.samples
    k, s = bundle.prompts.num_classes, bundle.prompts.num_attributes
    train_mask = samples.split_mask("train")
    groups = None
    if args.method != "erm":
        groups = form_groups(samples, s, source=args.group_source, num_classes=k, mask=train_mask)
    val_groups = None
    val_mask = samples.split_mask("val")
    if val_mask.any() and np.all(samples.s_pseudo[val_mask] >= 0):
        val_groups = form_groups(samples, s, source="pseudo", num_classes=k, mask=val_mask)
    cfg = TrainConfig(
        method=args.method,
        eta=args.eta,
        momentum=args.momentum,
        scale=args.scale,
        lr_start=args.lr_start,
        lr_end=args.lr_end,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        gdro_step=args.gdro_step,
        init=args.init,
        select=args.select,
    )
    head, train_rep = train(bundle, groups, cfg, val_groups=val_groups)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "head"
    save_head(head, ckpt, meta={"method": args.method, "seed": args.seed, "eta": args.eta, "m": args.momentum})
    _write_weight_trajectory(train_rep, out / "weights.csv")
    print(f"trained {args.method} head -> {ckpt}.emb (final epoch loss {train_rep.epoch_losses[-1]:.4f})")
    return 0


def _cmd_eval(args) -> int:
    bundle = load_bundle(args.bundle)
    head, meta = load_head(args.head)
    rep = eval_report(head, bundle, args.split, group_source=args.group_source)
    payload = rep.to_dict(
        method=meta.get("method", "?"), seed=meta.get("seed", -1), eta=meta.get("eta", None)
    )
    text = format_report_table([{"method": payload["method"], "split": args.split, **payload}])
    print(text)
    if args.out:
        _json_dump(payload, args.out)
        print(f"wrote {args.out}")
    return 0


def _config_from_args(args) -> ExperimentConfig:
    cfg = parse_config_file(args.config)
    if getattr(args, "seed", None):
        cfg.seeds = tuple(args.seed)
    for key in ("eta", "method", "annotator", "out"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "param", None):
        cfg.sweep_param = args.param
    if getattr(args, "values", None):
        cfg.sweep_values = tuple(float(v) for v in args.values.split(","))
    return cfg


def _cmd_run(args) -> int:
    manifest = run_experiment(_config_from_args(args))
    text, _ = emit_report(manifest)
    print(text)
    failed = [e for e in manifest["seeds"] if e.get("status") != "ok"]
    if failed:
        for entry in failed:
            print(f"seed {entry['seed']} failed at {entry['stage']}: {entry['error']}", file=sys.stderr)
        return 1
    return 0


def _cmd_sweep(args) -> int:
    manifest = run_sweep(_config_from_args(args))
    text, _ = emit_report(manifest)
    print(text)
    return 0


def _cmd_report(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    text, mirror = emit_report(manifest)
    print(text)
    if args.json_out:
        _json_dump(mirror, args.json_out)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "annotate": _cmd_annotate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GrouprobeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
