"""A/B evaluation: threshold-count features over original, baseline and LFS populations."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .axis import FeatureAxis, shift_multi
from .errors import FormatError, InvalidArgument
from .numerics import sample_gaussian_latents
from .shifter import ShifterModel, chain_shift
from .world import FeatureScorer, score_batch

POPULATIONS = ("original", "baseline", "lfs")


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int = 1000
    threshold: float = 0.5
    features: tuple[str, ...] = ()
    multipliers: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvalidArgument("n_samples must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidArgument(f"threshold must lie in (0, 1), got {self.threshold}")


@dataclass
class EvalReport:
    feature_names: list[str]
    added_features: list[str]
    n_samples: int
    counts: dict[str, list[int]]
    mean_scores: dict[str, list[float]]
    config: dict = field(default_factory=dict)
    notes: str = ""

    def count(self, population: str, feature: str) -> int:
        return self.counts[population][self.feature_names.index(feature)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        try:
            return cls(**data)
        except TypeError as exc:
            raise FormatError(f"malformed evaluation report: {exc}") from exc


def count_present(scores: np.ndarray, threshold: float) -> np.ndarray:
    """Per-column count of scores strictly above the threshold."""
    return np.sum(scores > threshold, axis=0)


def run_multi_feature_eval(scorer: FeatureScorer, axes: Sequence[FeatureAxis],
                           models: Sequence[ShifterModel], feature_indices: Sequence[int],
                           cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Baseline adds every axis at once; LFS chains the models in the given order."""
    if not len(axes) == len(models) == len(feature_indices):
        raise InvalidArgument("axes, models and feature indices must have equal length")
    for j in feature_indices:
        if not 0 <= j < scorer.m:
            raise InvalidArgument(f"feature index {j} out of range for m={scorer.m}")
    multipliers = cfg.multipliers if cfg.multipliers is not None else (1.0,) * len(axes)
    if len(multipliers) != len(axes):
        raise InvalidArgument(f"{len(multipliers)} baseline multipliers for {len(axes)} features")

    z = sample_gaussian_latents(cfg.n_samples, scorer.d, cfg.seed)
    populations = {
        "original": z,
        "baseline": shift_multi(z, list(axes), multipliers),
        "lfs": chain_shift(z, list(models)),
    }
    counts, means = {}, {}
    for name, latents in populations.items():
        scores = score_batch(scorer, latents)
        counts[name] = [int(c) for c in count_present(scores, cfg.threshold)]
        means[name] = [float(x) for x in scores.mean(axis=0)]

    names = list(scorer.feature_names)
    echo = asdict(cfg)
    echo["features"] = [names[j] for j in feature_indices]
    echo["multipliers"] = list(multipliers)
    return EvalReport(
        feature_names=names,
        added_features=[names[j] for j in feature_indices],
        n_samples=cfg.n_samples,
        counts=counts,
        mean_scores=means,
        config=echo,
    )


def run_single_feature_eval(scorer: FeatureScorer, axis: FeatureAxis, model: ShifterModel,
                            feature_index: int, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    return run_multi_feature_eval(scorer, [axis], [model], [feature_index], cfg)


def report_csv(report: EvalReport) -> str:
    """Rows are tracked features, columns are approaches."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["feature", *POPULATIONS])
    for j, name in enumerate(report.feature_names):
        writer.writerow([name, *(report.counts[p][j] for p in POPULATIONS)])
    return buf.getvalue()


def report_filename(report: EvalReport, fmt: str) -> str:
    feats = "+".join(report.added_features) or "none"
    return f"eval_seed{report.config.get('seed', 0)}_{feats}.{fmt}"


def write_report(report: EvalReport, path, fmt: str = "csv") -> None:
    if fmt == "csv":
        text = report_csv(report)
    elif fmt == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    else:
        raise InvalidArgument(f"unknown report format {fmt!r}")
    Path(path).write_text(text)


def read_report(path) -> EvalReport:
    try:
        return EvalReport.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
