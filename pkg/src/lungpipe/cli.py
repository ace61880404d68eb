"""Command-line entry point wiring the stages into full workflows.

Subcommands: preprocess, segment, detect, build-dataset, train-malignancy,
train-fp, run-pipeline, evaluate, phantom.  Runs are driven by a JSON config
(one file per run, versioned schema) and emit a manifest recording the config
hash, seeds, input hashes and library versions, so a run can be reproduced
bit-exactly.  Errors exit nonzero with a machine-readable JSON object on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__, phantom
from .annotations import split_stratified
from .detection import DogConfig, detect_candidates, with_features
from .errors import ConfigError, DataError, LungPipeError
from .evaluation import pr_curve, weighted_metrics
from .neural import (
    ArchitectureSpec,
    AugmentationConfig,
    TrainConfig,
    build_model,
    load_model,
    predict_proba,
    save_model,
    train,
)
from .pipeline import (
    IntegrationMode,
    aggregate_cohort,
    default_grids,
    featurize_candidates,
    grid_search_cv,
    small_grids,
)
from .segmentation import segment_lungs
from .volume import (
    CtVolume,
    clip_and_normalize,
    extract_cube,
    load_volume,
    resample_isotropic,
    save_volume,
)

CONFIG_SCHEMA_VERSION = 1
CANDIDATE_CSV_COLUMNS = (
    "scan_id",
    "z",
    "y",
    "x",
    "radius_mm",
    "response",
    "power",
    "relative_z",
)


@dataclass
class RunConfig:
    """Every stage parameter for one end-to-end run."""

    schema_version: int = CONFIG_SCHEMA_VERSION
    scans: str = ""  # directory of .mhd volumes
    truth: str = ""  # CSV with scan_id,label columns (label 0/1)
    out: str = ""  # output directory (optional; report returned either way)
    mode: str = "baseline"  # baseline | class | prob | model
    mal_model: str = ""  # malignancy checkpoint, required unless baseline
    fp_model: str = ""  # optional false-positive-reduction checkpoint
    fp_threshold: float = 0.5
    clip_lo: float = -1000.0
    clip_hi: float = 400.0
    spacing: float = 1.0  # mm, isotropic resample target
    seg_threshold: float = -320.0  # HU
    d_min: float = 5.0  # mm
    d_max: float = 60.0  # mm
    steps: int = 5
    det_threshold: float = 0.15
    overlap: float = 0.9
    cv_folds: int = 5
    grids: str = "small"  # small | full
    decision_threshold: float = 0.5
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        cfg = cls.from_dict(data)
        # resolve relative paths against the config file location
        base = os.path.dirname(os.path.abspath(path))
        for key in ("scans", "truth", "out", "mal_model", "fp_model"):
            value = getattr(cfg, key)
            if value and not os.path.isabs(value):
                setattr(cfg, key, os.path.join(base, value))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


def validate_config(cfg: RunConfig) -> list[str]:
    """Collect constraint violations; each names the offending key."""
    v = []
    if cfg.schema_version != CONFIG_SCHEMA_VERSION:
        v.append(f"schema_version: expected {CONFIG_SCHEMA_VERSION}, got {cfg.schema_version}")
    if not cfg.scans:
        v.append("scans: required (directory of .mhd volumes)")
    elif not os.path.isdir(cfg.scans):
        v.append(f"scans: directory does not exist: {cfg.scans}")
    if not cfg.truth:
        v.append("truth: required (CSV of scan_id,label)")
    elif not os.path.isfile(cfg.truth):
        v.append(f"truth: file does not exist: {cfg.truth}")
    if cfg.mode not in [m.value for m in IntegrationMode]:
        v.append(f"mode: must be one of baseline/class/prob/model, got {cfg.mode!r}")
    elif cfg.mode != "baseline":
        if not cfg.mal_model:
            v.append(f"mal_model: required for mode {cfg.mode!r}")
        elif not os.path.isfile(cfg.mal_model):
            v.append(f"mal_model: checkpoint does not exist: {cfg.mal_model}")
    if cfg.fp_model and not os.path.isfile(cfg.fp_model):
        v.append(f"fp_model: checkpoint does not exist: {cfg.fp_model}")
    if not cfg.clip_lo < cfg.clip_hi:
        v.append(f"clip_lo/clip_hi: need clip_lo < clip_hi, got [{cfg.clip_lo}, {cfg.clip_hi}]")
    if cfg.spacing <= 0:
        v.append(f"spacing: must be > 0, got {cfg.spacing}")
    if not 0 < cfg.d_min < cfg.d_max:
        v.append(f"d_min/d_max: need 0 < d_min < d_max, got ({cfg.d_min}, {cfg.d_max})")
    if cfg.steps < 2:
        v.append(f"steps: must be >= 2, got {cfg.steps}")
    if not 0 < cfg.overlap <= 1:
        v.append(f"overlap: must lie in (0, 1], got {cfg.overlap}")
    for key in ("det_threshold", "fp_threshold", "decision_threshold"):
        value = getattr(cfg, key)
        if not np.isfinite(value):
            v.append(f"{key}: must be finite, got {value}")
    for key in ("fp_threshold", "decision_threshold"):
        value = getattr(cfg, key)
        if not 0 <= value <= 1:
            v.append(f"{key}: must lie in [0, 1], got {value}")
    if cfg.cv_folds < 2:
        v.append(f"cv_folds: must be >= 2, got {cfg.cv_folds}")
    if cfg.grids not in ("small", "full"):
        v.append(f"grids: must be 'small' or 'full', got {cfg.grids!r}")
    return v


def _hash_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _versions() -> dict:
    import scipy
    import sklearn
    import torch

    return {
        "lungpipe": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sklearn": sklearn.__version__,
        "torch": torch.__version__,
    }


def read_truth_csv(path: str) -> dict:
    """Patient truth CSV (scan_id,label) as a scan_id -> 0/1 dict."""
    truth = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            truth[row["scan_id"]] = int(row["label"])
    if not truth:
        raise ConfigError(f"{path}: truth CSV is empty")
    return truth


def _process_scan(path: str, cfg: RunConfig):
    """Run one scan through preprocess, segment and detect.

    Returns (scan_id, candidates, cubes); candidates carry power/relative_z.
    """
    stage = "load"
    try:
        volume = load_volume(path)
        scan_id = volume.scan_id
        stage = "resample"
        volume = resample_isotropic(volume, (cfg.spacing,) * 3)
        stage = "segment"
        mask = segment_lungs(volume, threshold=cfg.seg_threshold)
        stage = "normalize"
        normalized = clip_and_normalize(volume, cfg.clip_lo, cfg.clip_hi)
        stage = "detect"
        dog = DogConfig(cfg.d_min, cfg.d_max, cfg.steps, cfg.det_threshold, cfg.overlap)
        candidates = with_features(detect_candidates(normalized, mask, dog), normalized, mask)
        stage = "extract"
        cubes = [extract_cube(normalized, c.center_world) for c in candidates]
        return scan_id, candidates, cubes
    except LungPipeError as exc:
        raise LungPipeError(
            f"stage {stage!r} failed for scan {os.path.basename(path)}: {exc}"
        ) from exc


def run_end_to_end(cfg: RunConfig) -> dict:
    """Execute the full pipeline over a scan directory and return the report.

    Stages: preprocess, segment, detect, optional FP reduction, featurize,
    grid-search CV classification, patient aggregation, evaluation.  Per-scan
    failures are recorded in the report's ``errors`` list and the remaining
    scans still contribute (partial results are preserved).
    """
    violations = validate_config(cfg)
    if violations:
        raise ConfigError("invalid config: " + "; ".join(violations))
    truth = read_truth_csv(cfg.truth)
    scan_paths = sorted(glob.glob(os.path.join(cfg.scans, "*.mhd")))
    if not scan_paths:
        raise ConfigError(f"scans: no .mhd volumes found in {cfg.scans}")

    mal_model = load_model(cfg.mal_model) if cfg.mode != "baseline" else None
    fp_model = load_model(cfg.fp_model) if cfg.fp_model else None

    candidates, cubes, errors = [], [], []
    for path in scan_paths:
        try:
            scan_id, scan_cands, scan_cubes = _process_scan(path, cfg)
        except LungPipeError as exc:
            errors.append({"scan": os.path.basename(path), "error": str(exc)})
            continue
        if scan_id not in truth:
            errors.append({"scan": scan_id, "error": "scan missing from truth CSV"})
            continue
        candidates.extend(scan_cands)
        cubes.extend(scan_cubes)

    if fp_model is not None and candidates:
        scores = predict_proba(fp_model, cubes)
        scores = np.atleast_1d(scores)
        keep = [i for i, s in enumerate(scores) if s >= cfg.fp_threshold]
        candidates = [candidates[i] for i in keep]
        cubes = [cubes[i] for i in keep]

    nodule_ids = []
    per_scan_counter = {}
    for cand in candidates:
        n = per_scan_counter.get(cand.scan_id, 0)
        per_scan_counter[cand.scan_id] = n + 1
        nodule_ids.append(f"{cand.scan_id}#{n}")

    X = featurize_candidates(candidates, cfg.mode, mal_model, cubes)
    y = np.array([truth[c.scan_id] for c in candidates])
    groups = [c.scan_id for c in candidates]
    grids = small_grids() if cfg.grids == "small" else default_grids()
    cv = grid_search_cv(X, y, groups, grids, k=cfg.cv_folds, seed=cfg.seed)
    positive = list(cv.best_model.classes_).index(1)
    probs = cv.best_model.predict_proba(X)[:, positive]

    per_patient = {scan_id: [] for scan_id in truth}
    for nodule_id, cand, prob in zip(nodule_ids, candidates, probs):
        per_patient[cand.scan_id].append((nodule_id, float(prob)))
    patients = aggregate_cohort(per_patient, threshold=cfg.decision_threshold)

    label_of = {p.patient_id: p.label for p in patients}
    y_true = ["cancer" if truth[s] else "non-cancer" for s in sorted(truth)]
    y_pred = [label_of[s] for s in sorted(truth)]
    metrics = weighted_metrics(y_true, y_pred, ["cancer", "non-cancer"])

    report = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "cv": [row.as_dict() for row in cv.rows],
        "best": {"family": cv.best_family, "params": cv.best_params},
        "nodules": [
            {
                "nodule_id": nid,
                "scan_id": c.scan_id,
                "center_zyx_mm": [float(v) for v in c.center_world],
                "radius_mm": float(c.radius),
                "probability": float(p),
            }
            for nid, c, p in zip(nodule_ids, candidates, probs)
        ],
        "patients": [p.as_dict() for p in patients],
        "metrics": metrics.as_dict(),
        "errors": errors,
        "manifest": {
            "config_hash": _hash_json(cfg.to_dict()),
            "seed": cfg.seed,
            "input_hashes": {os.path.basename(p): _hash_file(p) for p in scan_paths},
            "truth_hash": _hash_file(cfg.truth),
            "versions": _versions(),
        },
    }
    if cfg.out:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        with open(os.path.join(cfg.out, "manifest.json"), "w") as fh:
            json.dump(report["manifest"], fh, indent=2, sort_keys=True)
    return report


# ---------------------------------------------------------------------------
# dataset (de)serialization helpers


def save_cube_dataset(triples, path: str) -> None:
    """Write (VoxelCube, label, subject) triples to one .npz archive."""
    np.savez_compressed(
        path,
        values=np.stack([t[0].values for t in triples]),
        labels=np.array([t[1] for t in triples]),
        subjects=np.array([t[2] for t in triples]),
    )


def load_cube_dataset(path: str):
    """Read a cube dataset written by save_cube_dataset."""
    archive = np.load(path, allow_pickle=False)
    values = archive["values"].astype(np.float32)
    labels = [str(l) for l in archive["labels"]]
    subjects = [str(s) for s in archive["subjects"]]
    from .volume import VoxelCube

    cubes = [
        VoxelCube(v, (16.0, 16.0, 16.0), subject)
        for v, subject in zip(values, subjects)
    ]
    return cubes, labels, subjects


def _grouped_train_val(cubes, labels, subjects, train_frac=0.75, seed=0):
    """Subject-disjoint stratified train/validation split."""
    split = split_stratified(list(zip(subjects, labels)), train_frac=train_frac, seed=seed)
    train_ids = set(split.train_scan_ids)
    train_idx = [i for i, s in enumerate(subjects) if s in train_ids]
    val_idx = [i for i, s in enumerate(subjects) if s not in train_ids]
    if not train_idx or not val_idx:
        raise DataError(
            f"grouped split left {'train' if not train_idx else 'validation'} side "
            f"empty ({len(set(subjects))} subjects at train_frac={train_frac}); "
            "add subjects or adjust train_frac"
        )
    return (
        [cubes[i] for i in train_idx],
        [labels[i] for i in train_idx],
        [cubes[i] for i in val_idx],
        [labels[i] for i in val_idx],
    )


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_phantom(args) -> dict:
    os.makedirs(args.out, exist_ok=True)
    scan_dir = os.path.join(args.out, "scans")
    os.makedirs(scan_dir, exist_ok=True)
    if args.spec:
        with open(args.spec) as fh:
            spec = phantom.spec_from_dict(json.load(fh))
        volume, truth = phantom.generate_ct(spec, seed=args.seed)
        cohort = [(volume, {**truth, "label": 0})]
    else:
        cohort = phantom.generate_cohort(
            args.count, seed=args.seed, shape=tuple(args.shape), cancer_frac=args.cancer_frac
        )
    truth_rows = []
    for volume, truth in cohort:
        save_volume(volume, os.path.join(scan_dir, f"{volume.scan_id}.mhd"), "MET_SHORT")
        truth_rows.append(
            {
                "scan_id": volume.scan_id,
                "label": truth.get("label", 0),
                "nodules": [
                    {"center": list(n.center), "radius": n.radius, "label": n.label}
                    for n in truth["nodules"]
                ],
            }
        )
    with open(os.path.join(args.out, "truth.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scan_id", "label"])
        for row in truth_rows:
            writer.writerow([row["scan_id"], row["label"]])
    with open(os.path.join(args.out, "truth.json"), "w") as fh:
        json.dump(truth_rows, fh, indent=2)
    return {"scans": len(cohort), "out": args.out}


def _cmd_preprocess(args) -> dict:
    volume = load_volume(args.input)
    volume = resample_isotropic(volume, (args.spacing,) * 3)
    volume = clip_and_normalize(volume, args.clip_lo, args.clip_hi)
    save_volume(volume, args.out, "MET_FLOAT")
    return {"out": args.out, "shape": list(volume.shape)}


def _cmd_segment(args) -> dict:
    volume = load_volume(args.input)
    mask = segment_lungs(volume, threshold=args.threshold)
    mask_volume = CtVolume(
        mask.mask.astype(np.uint8), volume.spacing, volume.origin, volume.scan_id
    )
    save_volume(mask_volume, args.out, "MET_UCHAR")
    return {"out": args.out, "lung_voxels": int(mask.mask.sum())}


def _cmd_detect(args) -> dict:
    volume = load_volume(args.input)
    volume = resample_isotropic(volume, (args.spacing,) * 3)
    mask = segment_lungs(volume, threshold=args.seg_threshold)
    normalized = clip_and_normalize(volume, args.clip_lo, args.clip_hi)
    dog = DogConfig(args.d_min, args.d_max, args.steps, args.threshold, args.overlap)
    candidates = with_features(detect_candidates(normalized, mask, dog), normalized, mask)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CANDIDATE_CSV_COLUMNS)
        for c in candidates:
            writer.writerow(
                [c.scan_id, *(f"{v:.3f}" for v in c.center_world), f"{c.radius:.3f}",
                 f"{c.response:.5f}", f"{c.power:.5f}", f"{c.relative_z:.5f}"]
            )
    return {"out": args.out, "candidates": len(candidates)}


def _cmd_build_dataset(args) -> dict:
    if args.fp:
        triples = phantom.generate_fp_dataset(args.n_per_class, seed=args.seed)
    else:
        triples = phantom.generate_cube_dataset(
            args.n_per_class, scheme=args.scheme, separability=args.separability, seed=args.seed
        )
    save_cube_dataset(triples, args.out)
    counts = {}
    for _, label, _ in triples:
        counts[label] = counts.get(label, 0) + 1
    return {"out": args.out, "counts": counts}


def _train_from_dataset(args, spec: ArchitectureSpec, cfg: TrainConfig, class_order):
    cubes, labels, subjects = load_cube_dataset(args.dataset)
    tr_c, tr_l, va_c, va_l = _grouped_train_val(
        cubes, labels, subjects, train_frac=args.train_frac, seed=cfg.seed
    )
    model = build_model(spec, class_order, seed=cfg.seed)
    model = train(model, tr_c, tr_l, va_c, va_l, cfg)
    save_model(model, args.out)
    last = model.training_log[-1]
    return {
        "out": args.out,
        "epochs": len(model.training_log),
        "val_loss": last["val_loss"],
        "val_acc": last["val_acc"],
    }


def _cmd_train_malignancy(args) -> dict:
    class_order = ["1and2", "4", "5"] if args.scheme == "1and245" else ["1", "4", "5"]
    spec = ArchitectureSpec(
        kind=args.arch, conv_filters=tuple(args.filters), dense_units=args.dense_units
    )
    augmentation = None if args.no_augment else AugmentationConfig(factor=args.augment_factor)
    cfg = TrainConfig(
        learning_rate=args.lr,
        max_epochs=args.epochs,
        seed=args.seed,
        augmentation=augmentation,
    )
    return _train_from_dataset(args, spec, cfg, class_order)


def _cmd_train_fp(args) -> dict:
    spec = ArchitectureSpec(
        kind="residual",
        conv_filters=(args.filters[0],),
        dense_units=args.dense_units,
        residual_depth=args.depth,
        n_outputs=1,
        output_kind="sigmoid",
    )
    augmentation = None if args.no_augment else AugmentationConfig(
        shear=0.2, shift=0.5, factor=args.augment_factor
    )
    cfg = TrainConfig(
        learning_rate=args.lr,
        max_epochs=args.epochs,
        loss="binary-cross-entropy",
        seed=args.seed,
        augmentation=augmentation,
    )
    cubes, labels, subjects = load_cube_dataset(args.dataset)
    labels = [int(l != "0") for l in labels]
    tr_c, tr_l, va_c, va_l = _grouped_train_val(
        cubes, labels, subjects, train_frac=args.train_frac, seed=cfg.seed
    )
    model = build_model(spec, ["nodule"], seed=cfg.seed)
    model = train(model, tr_c, tr_l, va_c, va_l, cfg)
    save_model(model, args.out)
    last = model.training_log[-1]
    return {"out": args.out, "epochs": len(model.training_log), "val_acc": last["val_acc"]}


def _cmd_run_pipeline(args) -> dict:
    if args.config:
        cfg = RunConfig.from_json(args.config)
    else:
        cfg = RunConfig()
    for key in ("scans", "truth", "out", "mode", "mal_model", "fp_model", "seed", "grids"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    report = run_end_to_end(cfg)
    return {
        "patients": len(report["patients"]),
        "nodules": len(report["nodules"]),
        "weighted_f1": report["metrics"]["weighted_f1"],
        "report_hash": _hash_json(report),
        "out": cfg.out or None,
    }


def _cmd_validate_config(args) -> dict:
    cfg = RunConfig.from_json(args.config)
    violations = validate_config(cfg)
    return {"ok": not violations, "violations": violations}


def _cmd_evaluate(args) -> dict:
    with open(args.pred) as fh:
        report = json.load(fh)
    truth = read_truth_csv(args.truth)
    pred = {p["patient_id"]: p for p in report["patients"]}
    missing = sorted(set(truth) - set(pred))
    if missing:
        raise ConfigError(f"predictions missing for scan(s): {missing}")
    scan_ids = sorted(truth)
    y_true = ["cancer" if truth[s] else "non-cancer" for s in scan_ids]
    y_pred = [pred[s]["label"] for s in scan_ids]
    metrics = weighted_metrics(y_true, y_pred, ["cancer", "non-cancer"])
    labels = [bool(truth[s]) for s in scan_ids]
    scores = [pred[s]["probability"] for s in scan_ids]
    points = pr_curve(labels, scores) if any(labels) and not all(labels) else []
    result = {"metrics": metrics.as_dict(), "pr_curve": [list(p) for p in points]}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots()
        if points:
            precision, recall = zip(*points)
            ax.plot(recall, precision, marker="o")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1.05)
        ax.set_ylim(0, 1.05)
        fig.savefig(args.plot, dpi=120)
        plt.close(fig)
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lungpipe", description="Lung nodule detection and cancer classification pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic CT scans with ground truth")
    p.add_argument("--spec", default=None, help="phantom spec JSON (single scan)")
    p.add_argument("--count", type=int, default=1, help="number of cohort scans")
    p.add_argument("--cancer-frac", type=float, default=0.5)
    p.add_argument("--shape", type=int, nargs=3, default=[96, 128, 128])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_phantom)

    p = sub.add_parser("preprocess", help="resample isotropic and normalize intensities")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--clip-lo", type=float, default=-1000.0)
    p.add_argument("--clip-hi", type=float, default=400.0)
    p.set_defaults(handler=_cmd_preprocess)

    p = sub.add_parser("segment", help="extract the lung mask from an HU volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=-320.0)
    p.set_defaults(handler=_cmd_segment)

    p = sub.add_parser("detect", help="detect nodule candidates, write a CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--seg-threshold", type=float, default=-320.0)
    p.add_argument("--clip-lo", type=float, default=-1000.0)
    p.add_argument("--clip-hi", type=float, default=400.0)
    p.add_argument("--d-min", type=float, default=5.0)
    p.add_argument("--d-max", type=float, default=60.0)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--threshold", type=float, default=0.15)
    p.add_argument("--overlap", type=float, default=0.9)
    p.set_defaults(handler=_cmd_detect)

    p = sub.add_parser("build-dataset", help="generate a labeled cube dataset (.npz)")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--scheme", choices=["145", "1and245"], default="145")
    p.add_argument("--separability", choices=["size", "texture", "mixed"], default="size")
    p.add_argument("--fp", action="store_true", help="binary nodule-vs-background dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_build_dataset)

    p = sub.add_parser("train-malignancy", help="train a 3-class malignancy CNN")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=["shallow", "deeper"], default="shallow")
    p.add_argument("--scheme", choices=["145", "1and245"], default="145")
    p.add_argument("--filters", type=int, nargs=3, default=[32, 64, 128])
    p.add_argument("--dense-units", type=int, default=128)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--train-frac", type=float, default=0.75)
    p.add_argument("--augment-factor", type=int, default=10)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_train_malignancy)

    p = sub.add_parser("train-fp", help="train the residual false-positive-reduction CNN")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filters", type=int, nargs="+", default=[16])
    p.add_argument("--dense-units", type=int, default=64)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--lr", type=float, default=0.0001)
    p.add_argument("--train-frac", type=float, default=0.75)
    p.add_argument("--augment-factor", type=int, default=10)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_train_fp)

    p = sub.add_parser("run-pipeline", help="full pipeline over a scan directory")
    p.add_argument("--config", default=None, help="run config JSON")
    p.add_argument("--scans", default=None)
    p.add_argument("--truth", default=None)
    p.add_argument("--mode", choices=["baseline", "class", "prob", "model"], default=None)
    p.add_argument("--mal-model", dest="mal_model", default=None)
    p.add_argument("--fp-model", dest="fp_model", default=None)
    p.add_argument("--grids", choices=["small", "full"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory for report + manifest")
    p.set_defaults(handler=_cmd_run_pipeline)

    p = sub.add_parser("validate-config", help="check a run config without running")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=_cmd_validate_config)

    p = sub.add_parser("evaluate", help="score a pipeline report against truth labels")
    p.add_argument("--pred", required=True, help="report.json from run-pipeline")
    p.add_argument("--truth", required=True, help="CSV of scan_id,label")
    p.add_argument("--out", default=None, help="metrics JSON output path")
    p.add_argument("--plot", default=None, help="write a precision-recall plot PNG")
    p.set_defaults(handler=_cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.handler(args)
    except (LungPipeError, OSError, ValueError, json.JSONDecodeError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
