"""Pipeline commands over an output directory, driven by a JSON config.

Layout of the output directory::

    world.json                 synthetic world description
    axes/<feature>.json        fitted feature axes
    pairs/<feature>/           shifted-pairs datasets
    models/<feature>/          trained shifters (+ history.csv, metrics.json)
    reports/                   evaluation reports
    compare/<feature>/         architecture comparison tables
    shifted/                   latents written by ``shift``
    manifests/<command>.json   run manifests (config, seeds, input/output hashes)

Every stage seed is derived from the master seed and the stage name, so a
stage can be re-run alone and produce byte-identical outputs.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, npyio
from .axis import fit_feature_axis, load_axis, save_axis, shift_multi
from .errors import InvalidArgument, MissingArtifact
from .evalharness import EvalConfig, report_filename, run_multi_feature_eval, write_report
from .numerics import sample_gaussian_latents
from .pairs import build_pair_tuples, expand_tuples, load_dataset, save_dataset, split_dataset
from .shifter import (ARCH_NAMES, TrainConfig, build_arch, chain_shift, evaluate_metrics, forward,
                      load_model, param_count, save_model, train)
from .world import SyntheticWorld, WorldConfig, external_scorer, ground_truth_axis, make_world, score_batch

CLASSIFIER_NOTE = ("external scorer: classifier error propagates into counts and is not modelled here")


def derive_seed(master: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(master)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class AxisSettings:
    n_samples: int = 10000
    use_arctanh: bool = True
    epsilon: float = 1e-6


@dataclass(frozen=True)
class PairSettings:
    n_candidates: int = 10000
    threshold: float = 0.5
    multiplier: float = 1.0
    fourth_pair: str = "removal"
    split: tuple[float, ...] = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class ExternalSettings:
    request_dir: str
    d: int
    timeout: float = 60.0
    m: int | None = None
    feature_names: tuple[str, ...] | None = None


@dataclass(frozen=True)
class EvalSettings:
    n_samples: int = 1000
    threshold: float = 0.5
    features: tuple[str, ...] | None = None
    # baseline multiplier per feature name; missing features use 1.0
    multipliers: dict | None = None
    mode: str = "single"


@dataclass(frozen=True)
class PipelineConfig:
    world: WorldConfig | None = field(default_factory=WorldConfig)
    external: ExternalSettings | None = None
    features: tuple[str, ...] | None = None
    axis: AxisSettings = AxisSettings()
    pairs: PairSettings = PairSettings()
    arch: str = "a"
    train: TrainConfig = TrainConfig()
    eval: EvalSettings = EvalSettings()
    out: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def _build(cls, data, name):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise InvalidArgument(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InvalidArgument(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise InvalidArgument(f"config section {name!r}: {exc}") from exc


def config_from_dict(data: dict, seed: int | None = None, out: str | None = None) -> PipelineConfig:
    """Build a config; explicit ``seed``/``out`` arguments override the file."""
    data = dict(data)
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise InvalidArgument(f"unknown top-level config keys: {sorted(unknown)}")
    master = int(seed if seed is not None else data.get("seed", 0))
    external = _build(ExternalSettings, data.get("external"), "external")
    world = None
    if external is None:
        world_data = dict(data.get("world") or {})
        world_data.setdefault("seed", derive_seed(master, "world"))
        world = _build(WorldConfig, world_data, "world").resolved()
    features = data.get("features")
    return PipelineConfig(
        world=world,
        external=external,
        features=tuple(features) if features is not None else None,
        axis=_build(AxisSettings, data.get("axis", {}), "axis"),
        pairs=_build(PairSettings, data.get("pairs", {}), "pairs"),
        arch=data.get("arch", "a"),
        train=_build(TrainConfig, data.get("train", {}), "train"),
        eval=_build(EvalSettings, data.get("eval", {}), "eval"),
        out=str(out if out is not None else data.get("out", "runs/default")),
        seed=master,
    )


def load_config(path=None, seed: int | None = None, out: str | None = None) -> PipelineConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: config is not valid JSON ({exc})") from exc
    return config_from_dict(data, seed=seed, out=out)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Tracks inputs/outputs/seeds of one command and writes its manifest."""

    def __init__(self, cfg: PipelineConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.root = Path(cfg.out)
        self.root.mkdir(parents=True, exist_ok=True)
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.seeds: dict[str, int] = {}

    def seed(self, stage: str) -> int:
        s = derive_seed(self.cfg.seed, stage)
        self.seeds[stage] = s
        return s

    def require(self, rel: str, producer: str) -> Path:
        p = self.root / rel
        if not p.exists():
            raise MissingArtifact(f"{p} not found; run `latentshift {producer}` first")
        self.inputs.append(p)
        return p

    def produced(self, path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def _hashes(self, paths):
        out = {}
        for p in paths:
            files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
            for f in files:
                out[str(f.relative_to(self.root)) if f.is_relative_to(self.root) else str(f)] = _sha256(f)
        return dict(sorted(out.items()))

    def finish(self, summary: dict | None = None) -> dict:
        manifest = {
            "command": self.command,
            "version": __version__,
            "master_seed": self.cfg.seed,
            "stage_seeds": self.seeds,
            "config": self.cfg.to_dict(),
            "inputs": self._hashes(self.inputs),
            "outputs": self._hashes(self.outputs),
            "summary": summary or {},
        }
        mdir = self.root / "manifests"
        mdir.mkdir(exist_ok=True)
        (mdir / f"{self.command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return manifest


def _world_payload(world: SyntheticWorld) -> dict:
    return {
        "config": world.config.to_dict(),
        "linear_directions": world.linear_directions.tolist(),
        "curvature_directions": world.curvature_directions.tolist(),
    }


def get_scorer(run: Run):
    cfg = run.cfg
    if cfg.external is not None:
        ext = cfg.external
        return external_scorer(ext.request_dir, ext.timeout, d=ext.d, m=ext.m, feature_names=ext.feature_names)
    path = run.require("world.json", "world")
    stored = json.loads(path.read_text())
    world = make_world(WorldConfig.from_dict(stored["config"]))
    if stored != _world_payload(world):
        raise InvalidArgument(f"{path} does not match the world its config generates")
    if world.config != cfg.world.resolved():
        raise InvalidArgument(f"{path} was created from a different world config; re-run `latentshift world`")
    return world


def _features(cfg: PipelineConfig, scorer, only: Sequence[str] | None = None) -> list[tuple[int, str]]:
    names = list(scorer.feature_names)
    wanted = list(only) if only else list(cfg.features or names)
    for f in wanted:
        if f not in names:
            raise InvalidArgument(f"unknown feature {f!r}; scorer features are {names}")
    return [(names.index(f), f) for f in wanted]


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_world(cfg: PipelineConfig) -> dict:
    if cfg.world is None:
        raise InvalidArgument("`world` needs a synthetic world config, not an external scorer")
    run = Run(cfg, "world")
    world = make_world(cfg.world)
    path = run.produced(run.root / "world.json")
    _write_json(path, _world_payload(world))
    summary = {"d": world.d, "m": world.m, "features": list(world.feature_names)}
    run.finish(summary)
    return summary


def cmd_fit_axis(cfg: PipelineConfig, features: Sequence[str] | None = None) -> dict:
    run = Run(cfg, "fit-axis")
    scorer = get_scorer(run)
    summary = {}
    for j, name in _features(cfg, scorer, features):
        z = sample_gaussian_latents(cfg.axis.n_samples, scorer.d, run.seed(f"axis:{name}"))
        scores = score_batch(scorer, z)[:, j]
        axis = fit_feature_axis(z, scores, cfg.axis.use_arctanh, cfg.axis.epsilon, feature_name=name)
        path = run.produced(run.root / "axes" / f"{name}.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        save_axis(axis, path)
        info = {"fit_r2": axis.fit_r2, "n_fit": axis.n_fit}
        if isinstance(scorer, SyntheticWorld) and scorer.is_linear(j):
            info["cosine_to_ground_truth"] = float(axis.direction @ ground_truth_axis(scorer, j))
        summary[name] = info
    run.finish(summary)
    return summary


def cmd_build_pairs(cfg: PipelineConfig, features: Sequence[str] | None = None) -> dict:
    run = Run(cfg, "build-pairs")
    scorer = get_scorer(run)
    p = cfg.pairs
    summary = {}
    for j, name in _features(cfg, scorer, features):
        axis = load_axis(run.require(f"axes/{name}.json", "fit-axis"))
        tuples = build_pair_tuples(scorer, axis, j, p.n_candidates, p.threshold, p.multiplier,
                                   seed=run.seed(f"pairs:{name}"))
        ds = expand_tuples(tuples, p.fourth_pair)
        out = run.produced(run.root / "pairs" / name)
        save_dataset(ds, out)
        summary[name] = {**tuples.diagnostics, "tuple_count": ds.tuple_count, "n_samples": len(ds)}
    run.finish(summary)
    return summary


def _train_one(run: Run, name: str, arch: str, tcfg: TrainConfig, stage: str):
    ds = load_dataset(run.require(f"pairs/{name}", "build-pairs"))
    train_set, valid_set, test_set = split_dataset(ds, run.cfg.pairs.split, seed=run.seed(f"split:{name}"))
    spec = build_arch(arch, ds.d, ds.k)
    model, history = train(train_set, valid_set, spec, replace(tcfg, seed=run.seed(stage)))
    metrics = evaluate_metrics(model, test_set) if len(test_set) else None
    return model, history, metrics


def cmd_train(cfg: PipelineConfig, features: Sequence[str] | None = None, arch: str | None = None) -> dict:
    run = Run(cfg, "train")
    arch = arch or cfg.arch
    names = list(features) if features else None
    if names is None:
        names = [f for _, f in _features(cfg, get_scorer(run))]
    summary = {}
    for name in names:
        model, history, metrics = _train_one(run, name, arch, cfg.train, f"train:{name}:{arch}")
        out = run.root / "models" / name
        save_model(model, out)
        (out / "history.csv").write_text(history.to_csv())
        info = {"arch": arch, "params": param_count(model.spec),
                "initial_valid_loss": history.initial_valid_loss,
                "final_valid_loss": history.valid_loss[-1] if history.valid_loss else None}
        if metrics is not None:
            info.update(metrics._asdict())
        _write_json(out / "metrics.json", info)
        run.produced(out)
        summary[name] = info
    run.finish(summary)
    return summary


def cmd_shift(cfg: PipelineConfig, input_path, method: str, features: Sequence[str],
              labels: Sequence[float] | None = None, multiplier: float = 1.0, output=None) -> dict:
    run = Run(cfg, "shift")
    src = Path(input_path)
    if not src.exists():
        raise MissingArtifact(f"{src} not found")
    run.inputs.append(src)
    z = npyio.read_npy(src, ndim=2).astype(np.float64)
    if not features:
        raise InvalidArgument("shift needs at least one --feature")
    if method == "axis":
        axes = [load_axis(run.require(f"axes/{f}.json", "fit-axis")) for f in features]
        shifted = shift_multi(z, axes, [multiplier] * len(axes))
    elif method in ("model", "chain"):
        if method == "model" and len(features) != 1:
            raise InvalidArgument("method 'model' takes exactly one feature; use 'chain' for several")
        models = [load_model(run.require(f"models/{f}", "train")) for f in features]
        labs = list(labels) if labels else [1.0] * len(models)
        if len(labs) == 1 and len(models) > 1:
            labs = labs * len(models)
        shifted = chain_shift(z, models, labs) if method == "chain" else forward(models[0], z, labs[0])
    else:
        raise InvalidArgument(f"unknown shift method {method!r}; choose axis, model or chain")
    out = Path(output) if output else run.root / "shifted" / f"{method}_{'+'.join(features)}.npy"
    out.parent.mkdir(parents=True, exist_ok=True)
    npyio.write_npy(out, shifted)
    run.produced(out)
    summary = {"method": method, "features": list(features), "n": int(z.shape[0]), "output": str(out)}
    run.finish(summary)
    return summary


def cmd_eval(cfg: PipelineConfig, mode: str | None = None, fmt: str = "csv",
             features: Sequence[str] | None = None) -> dict:
    run = Run(cfg, "eval")
    scorer = get_scorer(run)
    mode = mode or cfg.eval.mode
    chosen = _features(cfg, scorer, features or cfg.eval.features)
    if mode == "single":
        groups = [[c] for c in chosen]
    elif mode == "multi":
        groups = [chosen]
    else:
        raise InvalidArgument(f"unknown eval mode {mode!r}; choose single or multi")
    reports_dir = run.root / "reports"
    reports_dir.mkdir(exist_ok=True)
    summary = {}
    for group in groups:
        names = [n for _, n in group]
        axes = [load_axis(run.require(f"axes/{n}.json", "fit-axis")) for n in names]
        models = [load_model(run.require(f"models/{n}", "train")) for n in names]
        mult = tuple(float((cfg.eval.multipliers or {}).get(n, 1.0)) for n in names)
        ecfg = EvalConfig(n_samples=cfg.eval.n_samples, threshold=cfg.eval.threshold,
                          features=tuple(names), multipliers=mult, seed=run.seed("eval"))
        report = run_multi_feature_eval(scorer, axes, models, [j for j, _ in group], ecfg)
        if cfg.external is not None:
            report.notes = CLASSIFIER_NOTE
        path = reports_dir / report_filename(report, fmt)
        write_report(report, path, fmt)
        run.produced(path)
        summary["+".join(names)] = report.counts
    run.finish(summary)
    return summary


def compare_architectures(train_set, valid_set, test_set, tcfg: TrainConfig, seed_for,
                          archs: Sequence[str] = ARCH_NAMES):
    rows, curves = [], {}
    for arch in archs:
        spec = build_arch(arch, train_set.d, train_set.k)
        model, history = train(train_set, valid_set, spec, replace(tcfg, seed=seed_for(arch)))
        m = evaluate_metrics(model, test_set)
        rows.append({"architecture": arch, "mse": m.mse, "mae": m.mae, "r2": m.r2,
                     "params": param_count(spec)})
        curves[arch] = [history.initial_valid_loss, *history.valid_loss]
    return rows, curves


def cmd_compare(cfg: PipelineConfig, feature: str | None = None, fmt: str = "csv") -> dict:
    run = Run(cfg, "compare")
    if feature is None:
        feature = (cfg.features or _default_feature_names(run))[0]
    ds = load_dataset(run.require(f"pairs/{feature}", "build-pairs"))
    train_set, valid_set, test_set = split_dataset(ds, cfg.pairs.split, seed=run.seed(f"split:{feature}"))
    if len(test_set) == 0:
        raise InvalidArgument("dataset too small: the test split is empty")
    rows, curves = compare_architectures(train_set, valid_set, test_set, cfg.train,
                                         lambda a: run.seed(f"compare:{feature}:{a}"))
    out = run.root / "compare" / feature
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        table = out / "compare.json"
        _write_json(table, {"feature": feature, "rows": rows, "valid_loss": curves})
    else:
        table = out / "compare.csv"
        lines = ["architecture,mse,mae,r2,params"]
        lines += [f"{r['architecture']},{r['mse']!r},{r['mae']!r},{r['r2']!r},{r['params']}" for r in rows]
        table.write_text("\n".join(lines) + "\n")
        hist = out / "compare_history.csv"
        epochs = len(next(iter(curves.values())))
        hlines = ["epoch," + ",".join(curves)]
        hlines += [f"{e}," + ",".join(repr(curves[a][e]) for a in curves) for e in range(epochs)]
        hist.write_text("\n".join(hlines) + "\n")
        run.produced(hist)
    run.produced(table)
    summary = {"feature": feature, "rows": rows}
    run.finish(summary)
    return summary


def _default_feature_names(run: Run) -> list[str]:
    return [f for _, f in _features(run.cfg, get_scorer(run))]


def run_all(cfg: PipelineConfig, fmt: str = "csv") -> dict:
    """world (if synthetic) -> fit-axis -> build-pairs -> train -> eval."""
    results = {}
    if cfg.world is not None:
        results["world"] = cmd_world(cfg)
    results["fit-axis"] = cmd_fit_axis(cfg)
    results["build-pairs"] = cmd_build_pairs(cfg)
    results["train"] = cmd_train(cfg)
    results["eval"] = cmd_eval(cfg, fmt=fmt)
    return results
