"""``inkdx`` command line: ingest, rasterize, prep-images, synth, train, run, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from . import __version__
from .core import (
    DataError,
    InkdxError,
    InkWarning,
    Modality,
    load_manifest,
    param_digest,
    parse_classes,
    read_recording,
)

log = logging.getLogger("inkdx")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(InkdxError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunConfig:
    """Effective parameters of one invocation: flags over config file over environment."""

    command: str
    params: dict

    @property
    def digest(self) -> str:
        return param_digest("cli", self.command, self.params)


def _effective(args: argparse.Namespace, drop=("func", "log_level", "jobs", "dry_run")) -> dict:
    params = {k: v for k, v in vars(args).items() if k not in drop}
    params["weights"] = params.get("weights") or os.environ.get("INKDX_WEIGHTS")
    return params


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    from .ingest import get_adapter, ingest

    spec = get_adapter(args.dataset, args.spec)
    m = ingest(args.root, spec, args.out)
    print(json.dumps({"dataset": m.dataset_name, "entries": len(m),
                      "classes": m.class_counts(), "tasks": m.task_counts()}))
    return EXIT_OK


def _render_params(args):
    from .raster import RenderParams

    return RenderParams(margin_frac=args.margin, r_min_px=args.rmin, r_max_px=args.rmax,
                        opacity=args.opacity, include_pen_up=args.include_pen_up)


def cmd_rasterize(args) -> int:
    from .pipeline import png_digest, save_png
    from .raster import render

    params = _render_params(args)
    m = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = params.digest()
    written = skipped = 0
    for e in m.entries:
        if e.modality is not Modality.TIMESERIES:
            raise DataError(f"{e.sample_id}: rasterize expects time-series entries")
        target = out / f"{e.sample_id}.png"
        if target.exists() and png_digest(target) == digest:
            skipped += 1
            continue
        rec = read_recording(m.resolve(e), subject_id=e.subject_id, task_id=e.task_id,
                             source_dataset=m.dataset_name)
        save_png(render(rec, params, e.sample_id), target)
        written += 1
    _write_json(out / "params.json", {"digest": digest, "render": asdict(params),
                                      "samples": len(m)})
    print(json.dumps({"written": written, "skipped": skipped, "digest": digest}))
    return EXIT_OK


def cmd_prep_images(args) -> int:
    from .imageprep import PrepParams, prep_image
    from .pipeline import png_digest, save_png

    params = PrepParams(luminosity_target=args.luminosity, blur_radius=args.blur)
    m = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = params.digest()
    written = skipped = 0
    for e in m.entries:
        if e.modality is not Modality.IMAGE:
            raise DataError(f"{e.sample_id}: prep-images expects image entries")
        target = out / f"{e.sample_id}.png"
        if target.exists() and png_digest(target) == digest:
            skipped += 1
            continue
        save_png(prep_image(m.resolve(e), params, e.sample_id), target)
        written += 1
    _write_json(out / "params.json", {"digest": digest, "prep": asdict(params),
                                      "steps": ["resize", "luminosity", "blur"],
                                      "samples": len(m)})
    print(json.dumps({"written": written, "skipped": skipped, "digest": digest}))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import PROFILES, generate_cohort, write_cohort

    if args.profile not in PROFILES:
        raise UsageError(f"unknown profile {args.profile!r}; choose from {sorted(PROFILES)}")
    m, recs = generate_cohort(args.n, PROFILES[args.profile], args.seed,
                              dataset_name=args.dataset_name,
                              samples_per_subject=args.samples_per_subject)
    write_cohort(m, recs, args.out)
    print(json.dumps({"entries": len(m), "classes": m.class_counts()}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .experiments import DatasetView, ExperimentSpec, RunContext, RunSettings, route_split
    from .metrics import classification_metrics
    from .model import ClassifierConfig, build_classifier, save_checkpoint
    from .pipeline import ImageCache, ImagePipeline
    from .train import TrainConfig, evaluate, train_fold

    classes = parse_classes(args.classes)
    rc = RunConfig("train", _effective(args))
    out = Path(args.out)
    done = _read_json(out / "metrics.json")
    if done and done.get("digest") == rc.digest:
        print(json.dumps({"status": "up-to-date", "digest": rc.digest}))
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    settings = RunSettings(
        classes=classes, seed=args.seed,
        model=ClassifierConfig(pretrained_weights=args.weights or "", seed=args.seed,
                               standardize_features=args.standardize_features),
        train=TrainConfig(lr=args.lr, max_epochs=args.max_epochs, patience=args.patience,
                          seed=args.seed, freeze_backbone=args.freeze_backbone),
    )
    view = Path(args.manifest).resolve()
    ctx = RunContext({"data": DatasetView(str(view))}, settings)
    spec = ExperimentSpec("train", "data", ("data",), ("data",), classes, seed=args.seed)
    train, val, test = route_split(ctx, spec, "data", args.fold)
    ctx.plan("data", classes, args.seed).save(out / "fold_plan.json")
    cache = ImageCache(ImagePipeline())
    m = ctx.manifest("data")
    index = {c: i for i, c in enumerate(classes)}

    def arrays(entries):
        import numpy as np

        return cache.batch(m, entries), np.array([index[e.label] for e in entries], dtype=int)

    model = build_classifier(settings.model)
    _, rec = train_fold(model, arrays(train), arrays(val), settings.train)
    save_checkpoint(model, out / "checkpoint.pt", extra={"run_digest": rc.digest})
    _write_json(out / "train_log.json", {"digest": rc.digest, **rec.to_json()})
    result = evaluate(model, *arrays(test))
    metrics = classification_metrics(result["y_true"], result["y_pred"], labels=[0, 1])
    _write_json(out / "metrics.json", {
        "digest": rc.digest, "fold": args.fold, "classes": [c.value for c in classes],
        "train_set": m.dataset_name, "eval_set": m.dataset_name, "metrics": metrics,
        "predictions": [{"sample_id": e.sample_id, "y_true": t, "y_pred": p}
                        for e, t, p in zip(test, result["y_true"], result["y_pred"])],
    })
    print(json.dumps({"digest": rc.digest, **metrics}))
    return EXIT_OK


def _load_config(config: str, weights: str | None):
    from .experiments import load_suite_config

    cfg = load_suite_config(config)
    if weights:
        cfg.settings.model = replace(cfg.settings.model, pretrained_weights=weights)
    return cfg


def _run_one_spec(config: str, weights: str | None, suite: str, name: str, out: str) -> str:
    from .experiments import RunContext, ResNetBackend, run_matrix

    cfg = _load_config(config, weights)
    specs = {s.name: s for s in _expand(cfg, suite)}
    ctx = RunContext.from_config(cfg)
    run_matrix([specs[name]], ctx, ResNetBackend(cfg.settings), out)
    return name


def _expand(cfg, suite):
    from .experiments import expand_matrix, expand_nls_suite

    return expand_matrix(cfg) if suite == "matrix" else expand_nls_suite(cfg)


def cmd_run(args) -> int:
    from .experiments import RunContext, ResNetBackend, dry_run_plan, emit_report, run_matrix

    cfg = _load_config(args.config, args.weights)
    specs = _expand(cfg, args.suite)
    if args.dry_run:
        for line in dry_run_plan(specs, cfg.settings.k):
            print(line)
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "plan.json", {"suite": args.suite, "columns": list(cfg.columns),
                                    "specs": [s.name for s in specs]})
    ctx = RunContext.from_config(cfg)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futures = [pool.submit(_run_one_spec, args.config, args.weights, args.suite, s.name,
                                   str(out))
                       for s in specs]
            for f in futures:
                log.info("finished %s", f.result())
    results = run_matrix(specs, ctx, ResNetBackend(cfg.settings), out)
    cells = [c for s in specs for c in s.cells()]
    written = emit_report(results, out, columns=cfg.columns or None, expected_cells=cells)
    print(json.dumps({"cells": len(cells), "written": {k: str(v) for k, v in written.items()}}))
    return EXIT_OK


def cmd_report(args) -> int:
    from .experiments import ExperimentResult, emit_report

    src = Path(args.results)
    files = sorted((src / "results").glob("*.json")) if (src / "results").is_dir() else []
    if not files:
        raise DataError(f"no result files under {src / 'results'}")
    results = [ExperimentResult.from_json(json.loads(p.read_text())) for p in files]
    # keep the row order of the run that produced the files
    plan = _read_json(src / "plan.json") or {}
    order = {name: i for i, name in enumerate(plan.get("specs", []))}
    results.sort(key=lambda r: order.get(r.spec["name"], len(order)))
    columns = args.columns.split(",") if args.columns else (plan.get("columns") or None)
    written = emit_report(results, args.out or src, columns=columns)
    print(json.dumps({k: str(v) for k, v in written.items()}))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="inkdx", description="Handwriting time-series/image classification "
                "pipeline for PD/AD screening experiments.")
    p.add_argument("--version", action="version", version=f"inkdx {__version__}")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("ingest", help="build a manifest from a source corpus")
    s.add_argument("--dataset", required=True, help="preset name: handpd, newhandpd, parkd, "
                   "pahaw, nls (or any name with --spec)")
    s.add_argument("--root", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="adapter spec JSON overriding the preset")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("rasterize", help="render time-series recordings to PNG")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--opacity", type=float, default=0.10)
    s.add_argument("--rmin", type=float, default=0.75)
    s.add_argument("--rmax", type=float, default=3.0)
    s.add_argument("--margin", type=float, default=0.05)
    s.add_argument("--include-pen-up", action="store_true")
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("prep-images", help="resize, brighten and blur scanned drawings")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--luminosity", type=float, default=275.0)
    s.add_argument("--blur", type=float, default=1.0)
    s.set_defaults(func=cmd_prep_images)

    s = sub.add_parser("synth", help="generate a synthetic spiral cohort")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=60, help="subjects per class")
    s.add_argument("--profile", default="pd-vs-ctl")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dataset-name", default="synthetic")
    s.add_argument("--samples-per-subject", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train and test one cross-validation fold")
    s.add_argument("--manifest", required=True)
    s.add_argument("--classes", required=True, help="PD,CTL or AD,CTL")
    s.add_argument("--fold", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--weights", help="backbone weights: file, 'imagenet' or 'none' "
                   "(default: $INKDX_WEIGHTS, else imagenet)")
    s.add_argument("--lr", type=float, default=1e-5)
    s.add_argument("--max-epochs", type=int, default=50)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--freeze-backbone", action="store_true")
    s.add_argument("--standardize-features", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("run", help="run an experiment suite from a config file")
    s.add_argument("--suite", required=True, choices=["nls-tasks", "matrix"])
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="runs")
    s.add_argument("--weights")
    s.add_argument("--dry-run", action="store_true", help="print the job plan and exit")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (one spec each)")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="re-emit tables from stored results")
    s.add_argument("--results", required=True, help="directory given as --out to 'run'")
    s.add_argument("--out")
    s.add_argument("--columns", help="comma-separated column order for the transfer table")
    s.set_defaults(func=cmd_report)
    return p


def _fail(exc: BaseException, code: int, category: str) -> int:
    msg = " ".join(str(exc).split())
    print(f"inkdx: error[{category}] {type(exc).__name__}: {msg}", file=sys.stderr)
    return code


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(exc, EXIT_USAGE, "usage")
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    warnings.simplefilter("default", InkWarning)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE, "usage")
    except DataError as exc:
        return _fail(exc, EXIT_DATA, "data")
    except Exception as exc:  # noqa: BLE001 - every other failure maps to one exit code
        return _fail(exc, EXIT_RUNTIME, "runtime")


def main() -> None:
    sys.exit(dispatch())
