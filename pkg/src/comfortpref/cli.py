"""Command-line entry point: staged batch runs driven by a YAML config.

Every stage reads the artifacts of earlier stages from the run directory,
writes its own outputs there, prints a one-line summary and refreshes
``manifest.json`` (content hashes of every file in the run directory).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable

import yaml

from . import __version__
from .errors import ComfortPrefError, ConfigError, InvalidConfig, MissingArtifact
from .evaluation import (
    EvalConfig,
    EvalData,
    EvalReport,
    SplitPlan,
    coldstart_curve,
    eval_grouped,
    eval_individual,
    sensor_summary,
    write_coldstart,
    write_sensor_summary,
    zone_forecast,
)
from .features import DEFAULT_FEATURE_SETS, FeatureMatrix, feature_set, write_featuresets
from .forest import ForestConfig, RandomForestModel, fit_forest
from .fusion import FusionConfig, fuse_dataset, read_fused, write_fused, write_stats
from .ingest import (
    load_localization,
    load_sensor_readings,
    load_votes,
    load_wearable,
    load_zones,
    write_localization,
    write_rejects,
    write_sensor_readings,
    write_votes,
    write_wearable,
    write_zones,
)
from .schema import DIMENSIONS
from .synth import Archetype, SimConfig, simulate, write_simulation
from .tendency import OCCUPANT, ROOM, kmeans_fit, room_profiles, vote_ratios, write_clusters, write_tendencies

INPUT_KEYS = ("votes", "sensors", "localization", "wearable", "zones")
STAGES = ("simulate", "ingest", "fuse", "cluster", "featurize", "train", "evaluate", "coldstart", "forecast")
MANIFEST = "manifest.json"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "timezone": "Asia/Singapore",
    "inputs": None,
    "simulate": {},
    "fusion": {"env_window": 900, "wearable_window": 300, "localization_window": 600},
    "cluster": {"k": 9, "restarts": 10, "merge_empty": True},
    "features": {
        "sets": [s.name for s in DEFAULT_FEATURE_SETS],
        "dimensions": list(DIMENSIONS),
        "room_encoding": "ratios",
        "min_votes": 5,
    },
    "forest": {"n_trees": 1000, "max_features": "sqrt", "min_samples_split": 2, "bootstrap": True},
    "evaluate": {"training_scope": "train", "individual": True},
    "coldstart": {"enabled": False, "sets": ["FS4"], "permutations": 20, "ks": None, "history_mode": "zero"},
    "forecast": {"zones": None, "step": 1800, "support_window": 3600, "include": ["Time"]},
}


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key != "simulate":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_path(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted!r}: {key!r} is not a mapping")
    node[keys[-1]] = value


@dataclass
class RunConfig:
    """Resolved settings of one run plus its output directory."""

    raw: dict
    out: Path
    base_dir: Path

    @classmethod
    def load(cls, path: str | None, out: str, overrides: dict[str, Any] | None = None) -> RunConfig:
        doc: dict = {}
        base_dir = Path.cwd()
        if path:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file {path!r} not found")
            try:
                doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            base_dir = p.resolve().parent
        for dotted, value in (overrides or {}).items():
            _set_path(doc, dotted, value)
        raw = _merge(DEFAULTS, doc)
        cfg = cls(raw, Path(out), base_dir)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            int(self.raw["seed"])
            self.fusion_config()
            self.forest_config()
            self.eval_config()
            for name in self.raw["features"]["sets"] + self.raw["coldstart"]["sets"]:
                feature_set(name)
            for dim in self.raw["features"]["dimensions"]:
                if dim not in DIMENSIONS:
                    raise ConfigError(f"unknown dimension {dim!r}")
            if self.raw["inputs"] is not None:
                missing = [k for k in INPUT_KEYS if k not in self.raw["inputs"]]
                unknown = sorted(set(self.raw["inputs"]) - set(INPUT_KEYS))
                if missing or unknown:
                    raise ConfigError(f"inputs need exactly {list(INPUT_KEYS)}; missing {missing}, unknown {unknown}")
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def dimensions(self) -> list[str]:
        return list(self.raw["features"]["dimensions"])

    @property
    def specs(self):
        return [feature_set(n) for n in self.raw["features"]["sets"]]

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(**self.raw["fusion"])

    def forest_config(self) -> ForestConfig:
        return ForestConfig(master_seed=self.seed, **self.raw["forest"])

    def eval_config(self) -> EvalConfig:
        f, c, fc = self.raw["features"], self.raw["coldstart"], self.raw["forecast"]
        return EvalConfig(
            forest=self.forest_config(),
            timezone=self.raw["timezone"],
            room_encoding=f["room_encoding"],
            training_scope=self.raw["evaluate"]["training_scope"],
            min_votes=int(f["min_votes"]),
            history_mode=c["history_mode"],
            permutations=int(c["permutations"]),
            seed=self.seed,
            forecast_step=int(fc["step"]),
            support_window=int(fc["support_window"]),
        )

    def sim_config(self) -> SimConfig:
        doc = dict(self.raw["simulate"])
        known = {f.name for f in fields(SimConfig)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown simulate keys {unknown}")
        if "archetypes" in doc:
            doc["archetypes"] = tuple(Archetype(**a) for a in doc["archetypes"])
        for key in ("votes_per_day", "vote_hours", "archetype_mix"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        doc.setdefault("seed", self.seed)
        doc.setdefault("timezone", self.raw["timezone"])
        try:
            return SimConfig(**doc)
        except (TypeError, InvalidConfig) as exc:
            raise ConfigError(f"invalid simulate section: {exc}") from exc

    def input_paths(self) -> dict[str, Path]:
        if self.raw["inputs"] is None:
            synth = self.out / "synth"
            paths = {k: synth / n for k, n in _SYNTH_FILES.items()}
            if not all(p.is_file() for p in paths.values()):
                raise ConfigError("no inputs configured and no simulated data in the run directory; run simulate first")
            return paths
        paths = {k: (self.base_dir / v).resolve() for k, v in self.raw["inputs"].items()}
        missing = [str(p) for p in paths.values() if not p.is_file()]
        if missing:
            raise ConfigError(f"input files not found: {missing}")
        return paths

    def fingerprint(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


_SYNTH_FILES = {
    "votes": "votes.csv",
    "sensors": "sensors.csv",
    "localization": "localization.csv",
    "wearable": "wearable.csv",
    "zones": "zones.geojson",
}


# ---------------------------------------------------------------------------
# artifacts


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run the {stage} stage first")
    return path


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(cfg: RunConfig, stage: str) -> Path:
    """Hash every file under the run directory; no timestamps, so reruns compare equal."""
    path = cfg.out / MANIFEST
    stages: list[str] = []
    if path.is_file():
        stages = json.loads(path.read_text(encoding="utf-8")).get("stages", [])
    if stage not in stages:
        stages.append(stage)
    files = {
        p.relative_to(cfg.out).as_posix(): _sha256(p)
        for p in sorted(cfg.out.rglob("*"))
        if p.is_file() and p.name != MANIFEST
    }
    doc = {
        "version": __version__,
        "seed": cfg.seed,
        "config_sha256": cfg.fingerprint(),
        "stages": sorted(stages, key=STAGES.index),
        "files": files,
    }
    _write_json(path, doc)
    return path


def _load_records(cfg: RunConfig):
    return read_fused(_require(cfg.out / "fused" / "fused.csv", "fuse"))


def _load_plan(cfg: RunConfig) -> SplitPlan:
    path = _require(cfg.out / "features" / "split.json", "featurize")
    return SplitPlan.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _model_path(cfg: RunConfig, spec_name: str, dim: str) -> Path:
    return cfg.out / "models" / f"grouped_{spec_name}_{dim}.cprf"


# ---------------------------------------------------------------------------
# stages


def stage_simulate(cfg: RunConfig) -> str:
    sim = simulate(cfg.sim_config())
    paths = write_simulation(cfg.out / "synth", sim)
    return f"simulate: {len(sim.votes)} votes, {len(sim.readings)} readings, {len(sim.zones.ids)} zones -> {paths['votes'].parent}"


def stage_ingest(cfg: RunConfig) -> str:
    paths = cfg.input_paths()
    zones = load_zones(paths["zones"])
    loaded = {
        "votes": load_votes(paths["votes"]),
        "sensors": load_sensor_readings(paths["sensors"], zones=zones),
        "localization": load_localization(paths["localization"]),
        "wearable": load_wearable(paths["wearable"]),
    }
    out = cfg.out / "ingest"
    out.mkdir(parents=True, exist_ok=True)
    write_votes(out / "votes.csv", loaded["votes"].records)
    write_sensor_readings(out / "sensors.csv", loaded["sensors"].records)
    write_localization(out / "localization.csv", loaded["localization"].records)
    write_wearable(out / "wearable.csv", loaded["wearable"].records)
    write_zones(out / "zones.geojson", zones)
    write_rejects(out / "rejects.csv", [r for res in loaded.values() for r in res.rejects])
    summary = {
        name: {"total": res.total_rows, "accepted": len(res.records), "rejected": len(res.rejects)}
        for name, res in loaded.items()
    }
    summary["zones"] = {"total": len(zones.ids), "accepted": len(zones.ids), "rejected": 0}
    _write_json(out / "ingest_summary.json", summary)
    parts = ", ".join(f"{n} {s['accepted']}/{s['total']}" for n, s in summary.items())
    return f"ingest: accepted {parts}"


def stage_fuse(cfg: RunConfig) -> str:
    src = cfg.out / "ingest"
    zones = load_zones(_require(src / "zones.geojson", "ingest"))
    votes = load_votes(_require(src / "votes.csv", "ingest")).records
    readings = load_sensor_readings(_require(src / "sensors.csv", "ingest"), zones=zones).records
    fixes = load_localization(_require(src / "localization.csv", "ingest")).records
    wearables = load_wearable(_require(src / "wearable.csv", "ingest")).records
    records, stats = fuse_dataset(votes, fixes, readings, wearables, zones, cfg.fusion_config())
    out = cfg.out / "fused"
    out.mkdir(parents=True, exist_ok=True)
    write_fused(out / "fused.csv", records)
    write_stats(out / "fusion_stats.json", stats)
    write_sensor_summary(out / "sensor_summary.csv", sensor_summary(records))
    return f"fuse: {len(records)} fused records of {stats.total_votes} votes, {stats.env_matched} env-matched"


def stage_cluster(cfg: RunConfig) -> str:
    records = _load_records(cfg)
    c = cfg.raw["cluster"]
    occupants = vote_ratios(records, OCCUPANT)
    rooms = room_profiles(records)
    out = cfg.out / "cluster"
    out.mkdir(parents=True, exist_ok=True)
    write_tendencies(out / "tendencies.csv", occupants + rooms)
    model = kmeans_fit(occupants, k=int(c["k"]), seed=cfg.seed, restarts=int(c["restarts"]), merge_empty=bool(c["merge_empty"]))
    write_clusters(out / "clusters.json", {OCCUPANT: model})
    dropped = ",".join(model.dropped_classes) or "none"
    return f"cluster: {len(occupants)} occupants, {len(rooms)} {ROOM}s, {model.k} clusters (dropped classes: {dropped})"


def stage_featurize(cfg: RunConfig) -> str:
    records = _load_records(cfg)
    data = EvalData(records, cfg.eval_config())
    out = cfg.out / "features"
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "split.json", data.plan.to_dict())
    specs = cfg.specs
    write_featuresets(out / "featuresets.json", specs, cfg.raw["features"]["room_encoding"])
    exclusions = {}
    for spec in specs:
        for dim in cfg.dimensions:
            train, test, excl = data.matrices(spec, dim, data.all_train, data.all_test)
            train.to_csv(out / f"features_{spec.name}_{dim}_train.csv")
            test.to_csv(out / f"features_{spec.name}_{dim}_test.csv")
            exclusions[f"{spec.name}/{dim}"] = excl
    _write_json(out / "exclusions.json", exclusions)
    n_train = sum(len(v) for v in data.plan.train.values())
    n_test = sum(len(v) for v in data.plan.test.values())
    return (
        f"featurize: {len(data.plan.occupants)} occupants, {n_train} train / {n_test} test votes, "
        f"{len(specs) * len(cfg.dimensions)} matrix pairs"
    )


def stage_train(cfg: RunConfig) -> str:
    src = cfg.out / "features"
    _load_plan(cfg)
    out = cfg.out / "models"
    out.mkdir(parents=True, exist_ok=True)
    forest_cfg = cfg.forest_config()
    count = 0
    for spec in cfg.specs:
        for dim in cfg.dimensions:
            train = FeatureMatrix.from_csv(_require(src / f"features_{spec.name}_{dim}_train.csv", "featurize"), dim, spec.name)
            model = fit_forest(train, forest_cfg)
            model.save(_model_path(cfg, spec.name, dim))
            count += 1
    return f"train: {count} grouped forests of {forest_cfg.n_trees} trees -> {out}"


def stage_evaluate(cfg: RunConfig) -> str:
    plan = _load_plan(cfg)
    data = EvalData(_load_records(cfg), cfg.eval_config(), plan)
    report = EvalReport()
    for dim in cfg.dimensions:
        for spec in cfg.specs:
            model = RandomForestModel.load(_require(_model_path(cfg, spec.name, dim), "train"))
            report.entries.append(eval_grouped(data, spec, dim, model=model))
            if cfg.raw["evaluate"]["individual"]:
                report.entries.append(eval_individual(data, spec, dim))
    report.write_json(cfg.out / "eval_report.json")
    best = []
    for dim in cfg.dimensions:
        grouped = [e for e in report.entries if e.dimension == dim and e.model_kind == "grouped"]
        top = max(grouped, key=lambda e: e.f1_micro)
        best.append(f"{dim} {top.f1_micro:.3f} ({top.feature_set})")
    return f"evaluate: {len(report.entries)} scores; best grouped F1 " + ", ".join(best)


def stage_coldstart(cfg: RunConfig) -> str:
    plan = _load_plan(cfg)
    c = cfg.raw["coldstart"]
    data = EvalData(_load_records(cfg), cfg.eval_config(), plan)
    curves = []
    for name in c["sets"]:
        for dim in cfg.dimensions:
            curves.append(coldstart_curve(data, feature_set(name), dim, ks=c["ks"]))
    write_coldstart(cfg.out / "coldstart_curves.csv", curves)
    points = sum(len(cv.points) for cv in curves)
    return f"coldstart: {len(curves)} curves, {points} points, {data.cfg.permutations} permutations per k"


def stage_forecast(cfg: RunConfig) -> str:
    records = _load_records(cfg)
    fc = cfg.raw["forecast"]
    zones = fc["zones"] or sorted({r.zone_id for r in records})
    out = cfg.out / "forecast"
    out.mkdir(parents=True, exist_ok=True)
    ecfg = cfg.eval_config()
    low = total = 0
    for zone in zones:
        for dim in cfg.dimensions:
            forecast = zone_forecast(records, zone, dim, ecfg, include=fc["include"])
            forecast.to_csv(out / f"forecast_{zone}_{dim}.csv")
            low += sum(p.low_confidence for p in forecast.points)
            total += len(forecast.points)
    return f"forecast: {len(zones)} zones x {len(cfg.dimensions)} dimensions, {low}/{total} grid points low-confidence"


STAGE_FUNCS: dict[str, Callable[[RunConfig], str]] = {
    "simulate": stage_simulate,
    "ingest": stage_ingest,
    "fuse": stage_fuse,
    "cluster": stage_cluster,
    "featurize": stage_featurize,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "coldstart": stage_coldstart,
    "forecast": stage_forecast,
}


def run_stage(cfg: RunConfig, stage: str) -> str:
    cfg.out.mkdir(parents=True, exist_ok=True)
    line = STAGE_FUNCS[stage](cfg)
    write_manifest(cfg, stage)
    return line


def pipeline_stages(cfg: RunConfig) -> list[str]:
    """Stages a full run executes: simulate only without inputs, coldstart only on request."""
    stages = [s for s in STAGES if s != "coldstart" or cfg.raw["coldstart"]["enabled"]]
    if cfg.raw["inputs"] is not None:
        stages.remove("simulate")
    return stages


# ---------------------------------------------------------------------------
# argument parsing


def _parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", default="run", help="run directory (default: ./run)")
    common.add_argument("--seed", type=int, help="master seed for simulation, clustering, forests and sampling")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value, e.g. forest.n_trees=200 (repeatable)")
    common.add_argument("--n-trees", type=int, help="shortcut for forest.n_trees")
    common.add_argument("--feature-sets", help="comma-separated feature sets, e.g. FS4,FS6")
    common.add_argument("--dimensions", help="comma-separated dimensions, e.g. thermal,light")

    parser = argparse.ArgumentParser(prog="comfortpref", description="Comfort preference modeling pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "generate a synthetic dataset with ground truth",
        "ingest": "validate and canonicalize the five input files",
        "fuse": "attach zone, environment and wearable data to each vote",
        "cluster": "tendency vectors and k-means clusters",
        "featurize": "temporal split and feature matrices",
        "train": "fit the grouped forests",
        "evaluate": "grouped and individual F1 report",
        "coldstart": "cold-start curves",
        "forecast": "per-zone preference forecast over a week",
        "pipeline": "run every stage in order",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text)
        if name == "pipeline":
            p.add_argument("--coldstart", action="store_true", help="include the cold-start stage")
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    out = dict(_parse_override(o) for o in args.overrides)
    if args.seed is not None:
        out["seed"] = args.seed
    if args.n_trees is not None:
        out["forest.n_trees"] = args.n_trees
    if args.feature_sets:
        out["features.sets"] = [s.strip() for s in args.feature_sets.split(",") if s.strip()]
    if args.dimensions:
        out["features.dimensions"] = [s.strip() for s in args.dimensions.split(",") if s.strip()]
    if getattr(args, "coldstart", False):
        out["coldstart.enabled"] = True
    return out


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, MissingArtifact):
        return 3
    return 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.out, _overrides(args))
        stages = pipeline_stages(cfg) if args.command == "pipeline" else [args.command]
        for stage in stages:
            print(run_stage(cfg, stage), flush=True)
    except (ComfortPrefError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return _exit_code(exc)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
