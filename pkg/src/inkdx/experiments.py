"""Experiment matrices: per-task NLS runs and mono / multi / cross-dataset transfer.

An :class:`ExperimentSpec` names training and evaluation dataset *views* (a
manifest plus an optional task filter). Fold plans are built once per
underlying manifest, so two views of the same corpus (all NLS tasks versus the
spiral subset) always agree on which subjects are test subjects in fold ``i``.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import yaml

from .core import (
    NLS_SPIRAL_TASKS,
    NLS_TASKS,
    DataError,
    DatasetManifest,
    DiagnosticClass,
    InvalidParams,
    ManifestEntry,
    load_manifest,
    param_digest,
    parse_classes,
)
from .imageprep import PrepParams
from .metrics import aggregate_folds, as_percent, classification_metrics
from .model import ClassifierConfig, build_classifier, reset_head
from .pipeline import ImageCache, ImagePipeline
from .raster import RenderParams
from .splits import FoldPlan, holdout_split, make_fold_plan, materialize_split
from .train import TrainConfig, evaluate, extract_features, train_fold

log = logging.getLogger(__name__)

CV5 = "cv5"
EXTERNAL = "train_once_eval_external"
PROTOCOLS = (CV5, EXTERNAL)
MULTI_ROW = "Multi-dataset"
MULTI_SPIRALS_ROW = "Multi-dataset-Spirals"
CROSS_ROW = "Cross-dataset"
MODEL_NAME = "ResNet50+MLP"


class SpecConflict(DataError):
    pass


class MissingTask(DataError):
    pass


class IncompleteResults(DataError):
    pass


class LeakageError(DataError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DatasetView:
    manifest: str
    tasks: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    row: str
    train_sets: tuple[str, ...]
    eval_sets: tuple[str, ...]
    classes: tuple[DiagnosticClass, DiagnosticClass]
    protocol: str = CV5
    seed: int = 0
    task_filter: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise InvalidParams(f"protocol must be one of {PROTOCOLS}")
        if self.protocol == EXTERNAL and set(self.train_sets) & set(self.eval_sets):
            raise SpecConflict(f"{self.name}: evaluation sets "
                               f"{sorted(set(self.train_sets) & set(self.eval_sets))} "
                               "also appear in the training sets")

    def cells(self) -> list[tuple[str, str]]:
        return [(self.row, e) for e in self.eval_sets]


@dataclass
class RunSettings:
    classes: tuple[DiagnosticClass, DiagnosticClass] = (DiagnosticClass.PD, DiagnosticClass.CTL)
    seed: int = 0
    k: int = 5
    cross_val_fraction: float = 0.1
    model: ClassifierConfig = ClassifierConfig()
    train: TrainConfig = TrainConfig()
    render: RenderParams = RenderParams()
    prep: PrepParams = PrepParams()

    def digest(self) -> str:
        return param_digest("settings", self)


@dataclass
class SuiteConfig:
    """Parsed ``run --config`` file."""

    datasets: dict[str, DatasetView]
    settings: RunSettings
    columns: tuple[str, ...] = ()
    multi_all: tuple[str, ...] = ()
    nls: str | None = None
    nls_tasks: tuple[str, ...] = NLS_TASKS
    class_pairs: tuple[tuple[DiagnosticClass, DiagnosticClass], ...] = ()


def _settings_from(d: dict) -> RunSettings:
    s = RunSettings()
    if "classes" in d:
        s.classes = parse_classes(d["classes"])
    s.seed = int(d.get("seed", s.seed))
    s.k = int(d.get("k", s.k))
    s.cross_val_fraction = float(d.get("cross_val_fraction", s.cross_val_fraction))
    train = dict(d.get("train", {}))
    if "betas" in train:
        train["betas"] = tuple(train["betas"])
    s.model = replace(ClassifierConfig(seed=s.seed), **d.get("model", {}))
    s.train = replace(TrainConfig(seed=s.seed), **train)
    s.render = replace(RenderParams(), **d.get("render", {}))
    s.prep = replace(PrepParams(), **d.get("prep", {}))
    return s


def load_suite_config(path: str | Path) -> SuiteConfig:
    path = Path(path)
    text = path.read_text()
    raw = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    base = path.parent
    datasets = {}
    for name, d in raw.get("datasets", {}).items():
        d = {"manifest": d} if isinstance(d, str) else d
        mpath = Path(d["manifest"])
        mpath = mpath if mpath.is_absolute() else base / mpath
        tasks = d.get("tasks")
        if tasks == "spirals":
            tasks = NLS_SPIRAL_TASKS
        datasets[name] = DatasetView(str(mpath), None if tasks is None else tuple(tasks))
    pairs = tuple(parse_classes(p) for p in raw.get("class_pairs", []))
    cfg = SuiteConfig(
        datasets=datasets,
        settings=_settings_from(raw),
        columns=tuple(raw.get("columns", ())),
        multi_all=tuple(raw.get("multi_all", ())),
        nls=raw.get("nls"),
        nls_tasks=tuple(raw.get("nls_tasks", NLS_TASKS)),
        class_pairs=pairs,
    )
    for name in (*cfg.columns, *cfg.multi_all, *([cfg.nls] if cfg.nls else [])):
        if name not in datasets:
            raise InvalidParams(f"config references undefined dataset {name!r}")
    return cfg


def expand_matrix(cfg: SuiteConfig) -> list[ExperimentSpec]:
    """Mono rows for every column, the two multi-dataset rows, one cross spec per column."""
    cols = cfg.columns
    if not cols:
        raise InvalidParams("matrix config needs a non-empty 'columns' list")
    s = cfg.settings
    specs = [ExperimentSpec(f"mono-{c}", c, (c,), cols, s.classes, CV5, s.seed) for c in cols]
    specs.append(ExperimentSpec("multi-dataset", MULTI_ROW, cfg.multi_all or cols, cols,
                                s.classes, CV5, s.seed))
    specs.append(ExperimentSpec("multi-dataset-spirals", MULTI_SPIRALS_ROW, cols, cols,
                                s.classes, CV5, s.seed))
    for c in cols:
        specs.append(ExperimentSpec(f"cross-{c}", CROSS_ROW, tuple(x for x in cols if x != c),
                                    (c,), s.classes, EXTERNAL, s.seed))
    return specs


def expand_nls_suite(cfg: SuiteConfig) -> list[ExperimentSpec]:
    if not cfg.nls:
        raise InvalidParams("nls-tasks config needs an 'nls' dataset name")
    pairs = cfg.class_pairs or ((DiagnosticClass.PD, DiagnosticClass.CTL),
                                (DiagnosticClass.AD, DiagnosticClass.CTL))
    return [ExperimentSpec(f"nls-{t}-{a.value}-vs-{b.value}", t, (cfg.nls,), (cfg.nls,), (a, b),
                           CV5, cfg.settings.seed, (t,))
            for a, b in pairs for t in cfg.nls_tasks]


# --------------------------------------------------------------------------
# execution


@dataclass
class Job:
    spec: ExperimentSpec
    fold: int | None
    train: dict[str, list[ManifestEntry]]
    val: dict[str, list[ManifestEntry]]
    test: dict[str, list[ManifestEntry]]


class Backend(Protocol):
    def fit_predict(self, job: Job, ctx: "RunContext") -> dict[str, tuple[list, list]]:
        """Train on the job's train/val pools; return (y_true, y_pred) per eval set."""


@dataclass
class RunContext:
    datasets: dict[str, DatasetView]
    settings: RunSettings
    manifests: dict[str, DatasetManifest] = field(default_factory=dict)
    plans: dict[tuple, FoldPlan] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: SuiteConfig) -> "RunContext":
        return cls(cfg.datasets, cfg.settings)

    def manifest(self, view_name: str) -> DatasetManifest:
        view = self._view(view_name)
        m = self.manifests.get(view.manifest)
        if m is None:
            m = self.manifests[view.manifest] = load_manifest(view.manifest)
        return m

    def _view(self, name: str) -> DatasetView:
        try:
            return self.datasets[name]
        except KeyError:
            raise InvalidParams(f"unknown dataset view {name!r}") from None

    def source_key(self, view_name: str) -> str:
        return self._view(view_name).manifest

    def view_entries(self, view_name: str, classes, task_filter=None) -> list[ManifestEntry]:
        view = self._view(view_name)
        tasks = task_filter or view.tasks
        return list(self.manifest(view_name).filter(classes=classes, tasks=tasks).entries)

    def plan(self, view_name: str, classes, seed: int, task_filter=None) -> FoldPlan:
        key = (self.source_key(view_name), tuple(c.value for c in classes), seed, task_filter)
        plan = self.plans.get(key)
        if plan is None:
            m = self.manifest(view_name)
            if task_filter:
                m = m.filter(tasks=task_filter)
            plan = self.plans[key] = make_fold_plan(m, classes, self.settings.k, seed)
        return plan

    def manifest_digest(self, view_name: str) -> str:
        return hashlib.sha256(Path(self.source_key(view_name)).read_bytes()).hexdigest()[:16]


def check_tasks(ctx: RunContext, spec: ExperimentSpec) -> None:
    if not spec.task_filter:
        return
    for name in spec.train_sets:
        present = set(ctx.manifest(name).task_counts())
        for t in spec.task_filter:
            if t not in present:
                raise MissingTask(t)


def route_split(ctx: RunContext, spec: ExperimentSpec, view: str, fold: int):
    plan = ctx.plan(view, spec.classes, spec.seed, spec.task_filter)
    entries = ctx.view_entries(view, spec.classes, spec.task_filter)
    sub = DatasetManifest(view, False, tuple(entries))
    return materialize_split(plan, fold, sub)


def jobs_for(spec: ExperimentSpec, ctx: RunContext) -> list[Job]:
    check_tasks(ctx, spec)
    if spec.protocol == CV5:
        jobs = []
        for f in range(ctx.settings.k):
            train, val, test = {}, {}, {}
            for v in spec.train_sets:
                train[v], val[v], _ = route_split(ctx, spec, v, f)
            for v in spec.eval_sets:
                test[v] = route_split(ctx, spec, v, f)[2]
            jobs.append(Job(spec, f, train, val, test))
        return jobs
    shared = {ctx.source_key(v) for v in spec.train_sets} & {ctx.source_key(v)
                                                             for v in spec.eval_sets}
    if shared:
        raise SpecConflict(f"{spec.name}: training and evaluation sets share corpora {sorted(shared)}")
    pool = {v: ctx.view_entries(v, spec.classes, spec.task_filter) for v in spec.train_sets}
    # namespace the holdout by source corpus, not by view
    by_source: dict[str, list[ManifestEntry]] = {}
    for v, entries in pool.items():
        by_source.setdefault(ctx.source_key(v), []).extend(entries)
    tr_src, va_src = holdout_split(by_source, ctx.settings.cross_val_fraction, spec.seed)
    val_ids = {(k, e.sample_id) for k, es in va_src.items() for e in es}
    train = {v: [e for e in es if (ctx.source_key(v), e.sample_id) not in val_ids]
             for v, es in pool.items()}
    val = {v: [e for e in es if (ctx.source_key(v), e.sample_id) in val_ids]
           for v, es in pool.items()}
    test = {v: ctx.view_entries(v, spec.classes, spec.task_filter) for v in spec.eval_sets}
    return [Job(spec, None, train, val, test)]


def audit_job(job: Job, ctx: RunContext) -> None:
    """Subject-level leakage check across every constituent corpus."""

    def subjects(pools):
        return {(ctx.source_key(v), e.subject_id) for v, es in pools.items() for e in es}

    tr, va, te = subjects(job.train), subjects(job.val), subjects(job.test)
    for a, b, what in ((tr, te, "train/test"), (va, te, "validation/test"),
                       (tr, va, "train/validation")):
        both = a & b
        if both:
            raise LeakageError(f"{job.spec.name} fold {job.fold}: {len(both)} subjects shared "
                               f"between {what}, e.g. {sorted(both)[0]}")


@dataclass
class ExperimentResult:
    spec: dict
    digest: str
    folds: list[dict]  # {"fold", "eval_set", "metrics", "n"}
    aggregates: dict[str, dict]  # eval_set -> metric -> {mean, std, n}
    extras: dict = field(default_factory=dict)

    @property
    def row(self) -> str:
        return self.spec["row"]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentResult":
        return cls(d["spec"], d["digest"], d["folds"], d["aggregates"], d.get("extras", {}))


def spec_digest(spec: ExperimentSpec, ctx: RunContext, backend_tag: str = "resnet") -> str:
    views = sorted(set(spec.train_sets) | set(spec.eval_sets))
    return param_digest("experiment", spec, ctx.settings,
                        {v: (ctx.datasets[v], ctx.manifest_digest(v)) for v in views},
                        backend_tag)


def run_experiment(spec: ExperimentSpec, ctx: RunContext, backend: Backend) -> ExperimentResult:
    folds = []
    for job in jobs_for(spec, ctx):
        audit_job(job, ctx)
        preds = backend.fit_predict(job, ctx)
        for ev in spec.eval_sets:
            y_true, y_pred = preds[ev]
            if not y_true:
                raise IncompleteResults(f"{spec.name}: no evaluation samples for {ev} "
                                        f"in fold {job.fold}")
            folds.append({"fold": job.fold, "eval_set": ev, "n": len(y_true),
                          "metrics": classification_metrics(y_true, y_pred, labels=[0, 1])})
        log.info("%s fold %s done", spec.name, job.fold)
    aggregates = {ev: aggregate_folds([f["metrics"] for f in folds if f["eval_set"] == ev])
                  for ev in spec.eval_sets}
    spec_json = json.loads(json.dumps(asdict(spec), default=lambda o: o.value))
    return ExperimentResult(spec_json, spec_digest(spec, ctx), folds, aggregates)


def run_matrix(specs: Sequence[ExperimentSpec], ctx: RunContext, backend: Backend,
               out: str | Path | None = None,
               on_result: Callable[[ExperimentResult], None] | None = None
               ) -> list[ExperimentResult]:
    """Run every spec; with ``out`` given, completed specs are stored and reused by digest."""
    results = []
    for spec in specs:
        res = None
        target = Path(out) / "results" / f"{spec.name}.json" if out is not None else None
        if target is not None and target.exists():
            cached = ExperimentResult.from_json(json.loads(target.read_text()))
            if cached.digest == spec_digest(spec, ctx):
                log.info("%s: up to date, skipping", spec.name)
                res = cached
        if res is None:
            res = run_experiment(spec, ctx, backend)
            if target is not None:
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(json.dumps(res.to_json(), indent=2) + "\n")
        if on_result:
            on_result(res)
        results.append(res)
    return results


def run_nls_task_suite(ctx: RunContext, nls_view: str, classes, seed: int, backend: Backend,
                       tasks: Sequence[str] = NLS_TASKS, out=None) -> list[ExperimentResult]:
    present = set(ctx.manifest(nls_view).task_counts())
    for t in tasks:
        if t not in present:
            raise MissingTask(t)
    specs = [ExperimentSpec(f"nls-{t}-{classes[0].value}-vs-{classes[1].value}", t, (nls_view,),
                            (nls_view,), tuple(classes), CV5, seed, (t,)) for t in tasks]
    return run_matrix(specs, ctx, backend, out)


def dry_run_plan(specs: Sequence[ExperimentSpec], k: int = 5) -> list[str]:
    lines = []
    n_cells = n_jobs = 0
    for s in specs:
        jobs = k if s.protocol == CV5 else 1
        n_jobs += jobs
        for row, ev in s.cells():
            n_cells += 1
            lines.append(f"cell {n_cells:3d}: spec={s.name} row={row!r} eval={ev!r} "
                         f"protocol={s.protocol} jobs={jobs}")
    lines.append(f"total: {len(specs)} specs, {n_jobs} training jobs, {n_cells} cells")
    return lines


# --------------------------------------------------------------------------
# backend


class ResNetBackend:
    """Fine-tunes (or, with a frozen backbone, head-trains) one classifier per job."""

    tag = "resnet"

    def __init__(self, settings: RunSettings, cache: ImageCache | None = None):
        self.settings = settings
        self.cache = cache or ImageCache(ImagePipeline(settings.render, settings.prep))
        self._frozen_model = None
        self._features: dict[tuple, object] = {}
        self.last_logs: list = []

    def _pixels_labels(self, ctx: RunContext, pools: dict[str, list[ManifestEntry]], classes):
        index = {c: i for i, c in enumerate(classes)}
        pixels, labels, keys = [], [], []
        for v, entries in pools.items():
            if not entries:
                continue
            pixels.append(self.cache.batch(ctx.manifest(v), entries))
            labels.extend(index[e.label] for e in entries)
            keys.extend((ctx.source_key(v), e.sample_id) for e in entries)
        px = np.concatenate(pixels) if pixels else np.zeros((0, 224, 224), np.uint8)
        return px, np.asarray(labels, dtype=np.int64), keys

    def _feature_batch(self, model, pixels, keys):
        import torch

        missing = [i for i, k in enumerate(keys) if k not in self._features]
        if missing:
            feats = extract_features(model, pixels[missing])
            for i, f in zip(missing, feats):
                self._features[keys[i]] = f
        return torch.stack([self._features[k] for k in keys])

    def fit_predict(self, job: Job, ctx: RunContext) -> dict[str, tuple[list, list]]:
        s = self.settings
        classes = job.spec.classes
        tr_px, tr_y, tr_keys = self._pixels_labels(ctx, job.train, classes)
        va_px, va_y, va_keys = self._pixels_labels(ctx, job.val, classes)
        seed = job.spec.seed * 1000 + (job.fold if job.fold is not None else 999)
        cfg = replace(s.train, seed=seed)
        out = {}
        if s.train.freeze_backbone:
            if self._frozen_model is None:
                self._frozen_model = build_classifier(s.model)
            model = self._frozen_model
            reset_head(model, seed)
            tr_f = self._feature_batch(model, tr_px, tr_keys)
            va_f = self._feature_batch(model, va_px, va_keys)
            _, rec = train_fold(model, (tr_px, tr_y), (va_px, va_y), cfg,
                                train_features=tr_f, val_features=va_f)
            for ev, entries in job.test.items():
                px, y, keys = self._pixels_labels(ctx, {ev: entries}, classes)
                r = evaluate(model, px, y, features=self._feature_batch(model, px, keys))
                out[ev] = (r["y_true"], r["y_pred"])
        else:
            model = build_classifier(replace(s.model, seed=seed))
            _, rec = train_fold(model, (tr_px, tr_y), (va_px, va_y), cfg)
            for ev, entries in job.test.items():
                px, y, _ = self._pixels_labels(ctx, {ev: entries}, classes)
                r = evaluate(model, px, y)
                out[ev] = (r["y_true"], r["y_pred"])
        self.last_logs.append({"spec": job.spec.name, "fold": job.fold, **rec.to_json()})
        return out


# --------------------------------------------------------------------------
# reports


def _bold_best(values: list[float | None]) -> int | None:
    """Index of the best value as displayed (one-decimal percent); ties go to the earlier row."""
    best, best_i = None, None
    for i, v in enumerate(values):
        v = None if v is None else round(100 * v, 1)
        if v is not None and (best is None or v > best):
            best, best_i = v, i
    return best_i


def _cell_value(res: ExperimentResult, ev: str, metric: str) -> float:
    return res.aggregates[ev][metric]["mean"]


def transfer_grid(results: Sequence[ExperimentResult], columns: Sequence[str],
                  metric: str = "macro_f1") -> tuple[list[str], dict[tuple[str, str], float]]:
    """Rows in first-seen order and (row, column) -> value, one value per declared cell."""
    rows: list[str] = []
    cells: dict[tuple[str, str], float] = {}
    for res in results:
        if res.row not in rows:
            rows.append(res.row)
        for ev in res.spec["eval_sets"]:
            if ev not in res.aggregates:
                raise IncompleteResults(f"{res.spec['name']}: no result for {ev}")
            cells[(res.row, ev)] = _cell_value(res, ev, metric)
    return rows, cells


def format_markdown_table(header: Sequence[str], rows: Sequence[Sequence[str]],
                          title: str = "") -> str:
    lines = [f"{title}\n" if title else ""]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "|".join("---" for _ in header) + "|")
    lines.extend("| " + " | ".join(r) + " |" for r in rows)
    return "\n".join(lines).lstrip("\n") + "\n"


def render_transfer_table(results, columns, metric: str = "macro_f1") -> str:
    rows, cells = transfer_grid(results, columns, metric)
    text = {}
    for c in columns:
        vals = [cells.get((r, c)) for r in rows]
        best = _bold_best(vals)
        for i, r in enumerate(rows):
            v = vals[i]
            s = "-" if v is None else as_percent(v)
            text[(r, c)] = f"**{s}**" if i == best else s
    body = [[r] + [text[(r, c)] for c in columns] for r in rows]
    return format_markdown_table(["Training set", *columns], body,
                                 "F1 (%) per training set and evaluation dataset")


def render_task_table(results, title: str) -> str:
    rows = []
    accs = [_cell_value(r, r.spec["eval_sets"][0], "unweighted_accuracy") for r in results]
    f1s = [_cell_value(r, r.spec["eval_sets"][0], "macro_f1") for r in results]
    ba, bf = _bold_best(accs), _bold_best(f1s)
    for i, r in enumerate(results):
        a, f = as_percent(accs[i]), as_percent(f1s[i])
        rows.append([r.row, f"**{a}**" if i == ba else a, f"**{f}**" if i == bf else f])
    return format_markdown_table(["Task", "Acc", "F1"], rows, title)


def render_validation_table(results) -> str:
    rows = []
    for r in results:
        if len(r.spec["train_sets"]) == 1 and r.spec["train_sets"][0] in r.aggregates:
            ds = r.spec["train_sets"][0]
            rows.append([ds, MODEL_NAME, as_percent(_cell_value(r, ds, "unweighted_accuracy"))])
    return format_markdown_table(["Dataset", "Model", "Acc"], rows,
                                 "Unweighted accuracy (%) trained and tested on each dataset")


def emit_report(results: Sequence[ExperimentResult], out: str | Path, *,
                columns: Sequence[str] | None = None,
                expected_cells: Sequence[tuple[str, str]] | None = None) -> dict[str, Path]:
    """Write results.json plus markdown tables; returns the written paths by kind."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if not results:
        raise IncompleteResults("no results to report")
    if expected_cells is not None:
        have = {(r.row, ev) for r in results for ev in r.aggregates}
        missing = [c for c in expected_cells if c not in have]
        if missing:
            raise IncompleteResults(f"{len(missing)} cells missing, e.g. {missing[0]}")
    written = {}
    path = out / "results.json"
    n_cells = sum(len(r.aggregates) for r in results)
    path.write_text(json.dumps({"cells": n_cells, "results": [r.to_json() for r in results]},
                               indent=2) + "\n")
    written["results"] = path

    task_runs = [r for r in results if r.spec.get("task_filter")]
    matrix_runs = [r for r in results if not r.spec.get("task_filter")]
    by_pair: dict[str, list[ExperimentResult]] = {}
    for r in task_runs:
        by_pair.setdefault(" vs ".join(r.spec["classes"]), []).append(r)
    for pair, rs in by_pair.items():
        p = out / f"table_tasks_{pair.replace(' vs ', '_vs_')}.md"
        p.write_text(render_task_table(rs, f"{pair} per task (%)"))
        written[f"tasks:{pair}"] = p
    if matrix_runs:
        cols = list(columns) if columns else list(
            dict.fromkeys(ev for r in matrix_runs for ev in r.spec["eval_sets"]))
        p = out / "table_transfer.md"
        p.write_text(render_transfer_table(matrix_runs, cols))
        written["transfer"] = p
        p = out / "table_validation.md"
        p.write_text(render_validation_table(matrix_runs))
        written["validation"] = p
    return written
