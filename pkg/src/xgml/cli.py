"""Command-line driver: ``xgml <subcommand> [flags]``.

Output directory layout (``--out``)::

    graphs/<subject>.xgmlg        build-graphs
    group_stats/<G>.json, <G>_edges.csv
    model/model.xgmlm, eval_report.json, scatter_<outcome>.csv
    importance/importance_report.json and plot CSVs
    provenance_<stage>.json       deterministic: hashes, config, versions
    run_log.jsonl                 timings (not deterministic, kept apart)

A ``--config`` file (JSON or TOML) overrides command-line flags.  Thread
count resolves as config, then ``--threads``, then ``XGML_THREADS``, then
the number of logical cores.

Exit codes: 0 success, 1 some subjects failed (or a stage failed at run
time), 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._config import parse_config_text
from .dtw import LOCAL_COSTS, DtwConfig
from .exceptions import InvalidManifest, InvalidSpec, XgmlError
from .graph import (
    DEFAULT_THRESHOLDS,
    build_subject_graph,
    flatten,
    group_graph,
    read_graph,
    write_edge_list,
    write_graph,
    write_group_report,
)
from .importance import build_report, holdout_permutation_importance, permutation_importance, write_report
from .ingest import GROUPS, OUTCOMES, extract_roi_samples, read_atlas_table, read_manifest, read_scores, read_volume
from .model import (
    DEFAULT_C,
    DEFAULT_EPSILON,
    DEFAULT_GAMMA_FACTORS,
    MultiOutputSVR,
    SvrHyperParams,
    grid_search_5fold,
    loocv_evaluate,
    make_grid,
)
from .synth import default_spec, generate_cohort, load_spec, write_cohort

log = logging.getLogger("xgml")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("synth", "build-graphs", "group-stats", "train-eval", "importance")
GRAPH_SUFFIX = ".xgmlg"
EDGE_DISPLAY_THRESHOLD = 0.70


class ConfigError(XgmlError):
    pass


@dataclass
class RunConfig:
    command: str
    out: Path
    manifest: Path | None = None
    seed: int = 42
    trim: float = 0.1
    dtw_cost: str = "absolute_difference"
    repeats: int = 20
    threads: int | None = None
    holdout: bool = False
    c_grid: list = field(default_factory=lambda: list(DEFAULT_C))
    gamma_factors: list = field(default_factory=lambda: list(DEFAULT_GAMMA_FACTORS))
    epsilon_grid: list = field(default_factory=lambda: list(DEFAULT_EPSILON))
    spec: Path | None = None  # synth spec file
    severity_shift: float | None = None

    def validate(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not 0 <= self.trim < 0.5:
            raise ConfigError("trim must be in [0, 0.5)")
        if self.dtw_cost not in LOCAL_COSTS:
            raise ConfigError(f"dtw-cost must be one of {LOCAL_COSTS}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for name in ("c_grid", "gamma_factors", "epsilon_grid"):
            values = getattr(self, name)
            if not values or any(not isinstance(v, (int, float)) or v < 0 for v in values):
                raise ConfigError(f"{name} must be a non-empty list of non-negative numbers")
        if self.command != "synth" and self.manifest is None:
            raise ConfigError(f"{self.command} needs --manifest")
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {self.out} is not writable: {exc}") from exc
        if not os.access(self.out, os.W_OK):
            raise ConfigError(f"output directory {self.out} is not writable")

    def resolved_threads(self) -> int:
        if self.threads:
            return self.threads
        env = os.environ.get("XGML_THREADS")
        if env:
            try:
                value = int(env)
            except ValueError as exc:
                raise ConfigError(f"XGML_THREADS={env!r} is not an integer") from exc
            if value < 1:
                raise ConfigError("XGML_THREADS must be >= 1")
            return value
        return os.cpu_count() or 1

    def public(self) -> dict:
        # provenance view without paths or thread count, so reruns elsewhere compare byte for byte;
        # the manifest and spec files are recorded by content hash instead
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k in ("out", "threads", "manifest", "spec"):
            d.pop(k)
        return d


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xgml", description="Metabolic distance graphs and outcome prediction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--manifest", type=Path, help="cohort manifest JSON")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--trim", type=float, default=0.1, help="trimmed-mean fraction per tail")
        p.add_argument("--dtw-cost", default="absolute_difference", choices=LOCAL_COSTS)
        p.add_argument("--repeats", type=int, default=20, help="permutation repeats")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--holdout", action="store_true", help="importance on leave-one-out predictions")
        p.add_argument("--config", type=Path, help="JSON/TOML file; its keys override flags")
        if name == "synth":
            p.add_argument("--spec", type=Path, help="synthetic cohort spec (JSON/TOML)")
            p.add_argument("--severity-shift", type=float, default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {f.name: getattr(args, f.name) for f in fields(RunConfig) if hasattr(args, f.name)}
    if args.config is not None:
        try:
            overrides = parse_config_text(args.config.read_text(), args.config.suffix)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)} - {"command"}
        for key, value in overrides.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key in ("out", "manifest", "spec") and value is not None:
                value = (args.config.parent / value) if not Path(value).is_absolute() else Path(value)
            values[key] = value
    try:
        cfg = RunConfig(**values)
        cfg.out, cfg.seed, cfg.repeats = Path(cfg.out), int(cfg.seed), int(cfg.repeats)
        cfg.trim = float(cfg.trim)
        for key in ("manifest", "spec"):
            if getattr(cfg, key) is not None:
                setattr(cfg, key, Path(getattr(cfg, key)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# provenance


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    import sklearn

    return {
        "xgml": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "numba": numba.__version__,
    }


def write_provenance(cfg: RunConfig, stage: str, inputs: dict, extra: dict | None = None) -> None:
    files = {"manifest": cfg.manifest, "spec": cfg.spec, **inputs}
    record = {
        "stage": stage,
        "config": cfg.public(),
        "seed": cfg.seed,
        "inputs": {name: sha256_file(p) for name, p in sorted(files.items()) if p is not None and Path(p).exists()},
        "versions": _versions(),
        **(extra or {}),
    }
    (cfg.out / f"provenance_{stage}.json").write_text(json.dumps(record, indent=2, sort_keys=True))


def log_timing(cfg: RunConfig, stage: str, seconds: float, **info) -> None:
    entry = {"stage": stage, "seconds": round(seconds, 3), "unix_time": time.time(), **info}
    with open(cfg.out / "run_log.jsonl", "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# shared loading


def _load_manifest(cfg: RunConfig):
    try:
        return read_manifest(cfg.manifest)
    except FileNotFoundError as exc:
        raise ConfigError(f"manifest not found: {cfg.manifest}") from exc
    except InvalidManifest as exc:
        raise ConfigError(str(exc)) from exc


def _graph_dir(cfg):
    return cfg.out / "graphs"


def load_cohort_features(cfg: RunConfig, manifest, need_scores=True):
    """Subjects with a graph file, their feature rows, scores and groups."""
    ids, rows, groups, region_ids = [], [], [], None
    for s in manifest.subjects:
        path = _graph_dir(cfg) / f"{s.subject_id}{GRAPH_SUFFIX}"
        if not path.exists():
            log.warning("no graph for %s, skipping", s.subject_id)
            continue
        g = read_graph(path)
        ids.append(s.subject_id)
        rows.append(flatten(g))
        groups.append(s.group)
    if not ids:
        raise ConfigError(f"no graph files under {_graph_dir(cfg)}; run build-graphs first")
    if manifest.atlas_table_path is not None:
        region_ids = read_atlas_table(manifest.atlas_table_path).label_ids
    X = np.vstack(rows)
    Y = None
    if need_scores:
        if manifest.scores_path is None:
            raise ConfigError("manifest has no scores_path")
        scores = read_scores(manifest.scores_path)
        missing = [sid for sid in ids if sid not in scores]
        if missing:
            raise ConfigError(f"no scores for subjects {missing}")
        Y = np.vstack([scores[sid] for sid in ids])
    return ids, X, Y, groups, region_ids


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.spec is not None:
        try:
            spec = load_spec(cfg.spec)
        except (OSError, ValueError, InvalidSpec) as exc:
            raise ConfigError(f"bad synth spec {cfg.spec}: {exc}") from exc
    else:
        spec = default_spec(seed=cfg.seed)
    if cfg.severity_shift is not None:
        spec.severity_shift = cfg.severity_shift
    try:
        spec.validate()
    except InvalidSpec as exc:
        raise ConfigError(str(exc)) from exc
    manifest = write_cohort(generate_cohort(spec), cfg.out)
    write_provenance(cfg, "synth", {}, {"synth_spec": spec.to_dict()})
    print(manifest)
    return EXIT_OK


def cmd_build_graphs(cfg: RunConfig) -> int:
    manifest = _load_manifest(cfg)
    if manifest.atlas_path is None or manifest.atlas_table_path is None:
        raise ConfigError("manifest needs atlas_path and atlas_table_path")
    try:
        atlas = read_volume(manifest.atlas_path, "label")
        table = read_atlas_table(manifest.atlas_table_path)
    except (OSError, XgmlError) as exc:
        raise ConfigError(f"cannot load atlas: {exc}") from exc
    dtw_cfg = DtwConfig(cfg.dtw_cost)
    threads = cfg.resolved_threads()
    out = _graph_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    subjects, failures, inputs = {}, {}, {"atlas": manifest.atlas_path, "atlas_table": manifest.atlas_table_path}
    for s in manifest.subjects:
        t0 = time.perf_counter()
        try:
            scan = read_volume(s.scan_path, "intensity")
            regions = extract_roi_samples(scan, atlas, table)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                graph, prov = build_subject_graph(regions, dtw_cfg, threads)
            write_graph(graph, out / f"{s.subject_id}{GRAPH_SUFFIX}")
        except (OSError, XgmlError) as exc:
            failures[s.subject_id] = f"{type(exc).__name__}: {exc}"
            log.error("subject %s failed: %s", s.subject_id, exc)
            continue
        inputs[f"scan:{s.subject_id}"] = s.scan_path
        subjects[s.subject_id] = {
            "regions": prov,
            "warnings": sorted({str(w.message) for w in caught}),
        }
        log_timing(cfg, "build-graphs", time.perf_counter() - t0, subject=s.subject_id)
    write_provenance(cfg, "build_graphs", inputs, {"subjects": subjects, "failures": failures})
    if failures:
        print(f"{len(failures)} of {len(manifest.subjects)} subjects failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_group_stats(cfg: RunConfig) -> int:
    manifest = _load_manifest(cfg)
    ids, X, _, groups, region_ids = load_cohort_features(cfg, manifest, need_scores=False)
    out = cfg.out / "group_stats"
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for g in GROUPS:
        members = [read_graph(_graph_dir(cfg) / f"{sid}{GRAPH_SUFFIX}", region_ids) for sid, grp in zip(ids, groups) if grp == g]
        if not members:
            log.warning("group %s has no subjects; omitted from the report", g)
            continue
        gg = group_graph(members, cfg.trim, g)
        reports[g] = write_group_report(gg, out / f"{g}.json", DEFAULT_THRESHOLDS)
        write_edge_list(gg, out / f"{g}_edges.csv", EDGE_DISPLAY_THRESHOLD)
    (out / "summary.json").write_text(json.dumps(reports, indent=2, sort_keys=True))
    inputs = {f"graph:{sid}": _graph_dir(cfg) / f"{sid}{GRAPH_SUFFIX}" for sid in ids}
    write_provenance(cfg, "group_stats", inputs)
    return EXIT_OK


def cmd_train_eval(cfg: RunConfig) -> int:
    manifest = _load_manifest(cfg)
    ids, X, Y, _, region_ids = load_cohort_features(cfg, manifest)
    t0 = time.perf_counter()
    grid = make_grid(X, cfg.c_grid, cfg.gamma_factors, cfg.epsilon_grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        search = grid_search_5fold(X, Y, grid, seed=cfg.seed)
        report = loocv_evaluate(X, Y, search.best, OUTCOMES, ids)
        model = MultiOutputSVR(params=search.best, outcome_names=list(OUTCOMES)).fit(X, Y)
    out = cfg.out / "model"
    report.write(out)
    model.save(out / "model.xgmlm", extra={"subject_ids": ids, "region_ids": region_ids})
    inputs = {f"graph:{sid}": _graph_dir(cfg) / f"{sid}{GRAPH_SUFFIX}" for sid in ids}
    inputs["scores"] = manifest.scores_path
    write_provenance(cfg, "train_eval", inputs, {"selected": [asdict(p) for p in search.best]})
    log_timing(cfg, "train-eval", time.perf_counter() - t0)
    for o in report.per_outcome:
        print(f"{o.name}\tr={o.pearson_r:.3f}")
    return EXIT_OK


def cmd_importance(cfg: RunConfig) -> int:
    manifest = _load_manifest(cfg)
    ids, X, Y, groups, region_ids = load_cohort_features(cfg, manifest)
    model_path = cfg.out / "model" / "model.xgmlm"
    if not model_path.exists():
        raise ConfigError(f"{model_path} not found; run train-eval first")
    model = MultiOutputSVR.load(model_path)
    table = read_atlas_table(manifest.atlas_table_path) if manifest.atlas_table_path else None
    t0 = time.perf_counter()
    if cfg.holdout:
        params = [SvrHyperParams(est.C, est.gamma_, est.epsilon) for est in model.estimators_]
        result = holdout_permutation_importance(X, Y, params, cfg.repeats, cfg.seed, tol=model.tol, max_iter=model.max_iter)
    else:
        result = permutation_importance(model, X, Y, cfg.repeats, cfg.seed)
    region_ids = region_ids or list(range(1, len(model.standardizer_.mean_) + 1))
    report = build_report(result, model.outcome_names_, region_ids, X, groups, table)
    write_report(report, cfg.out / "importance", model.outcome_names_, table)
    write_provenance(cfg, "importance", {"model": model_path, "scores": manifest.scores_path})
    log_timing(cfg, "importance", time.perf_counter() - t0)
    return EXIT_OK


HANDLERS = {
    "synth": cmd_synth,
    "build-graphs": cmd_build_graphs,
    "group-stats": cmd_group_stats,
    "train-eval": cmd_train_eval,
    "importance": cmd_importance,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except XgmlError as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
