"""Shifted-pairs dataset: negatives, their verified shifts, and the 4x expansion."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import npyio
from .axis import FeatureAxis, shift
from .errors import EmptyDatasetError, FormatError, InvalidArgument
from .numerics import rng_for, sample_gaussian_latents
from .world import FeatureScorer, score_batch

DEFAULT_THRESHOLD = 0.5
FOURTH_PAIR_MODES = ("removal", "identity")
MANIFEST = "manifest.json"
_FILES = {"inputs": "inputs.npy", "labels": "labels.npy", "targets": "targets.npy"}


@dataclass(frozen=True)
class PairTuple:
    z_minus: np.ndarray
    z_plus: np.ndarray
    feature_name: str


@dataclass(frozen=True)
class PairSample:
    input_latent: np.ndarray
    label: float
    target_latent: np.ndarray


@dataclass(frozen=True, eq=False)
class PairTuples:
    """Accepted (z_minus, z_plus) tuples stored as two aligned (n, d) arrays."""

    z_minus: np.ndarray
    z_plus: np.ndarray
    feature_name: str
    threshold: float = DEFAULT_THRESHOLD
    multiplier: float = 1.0
    seed: int | None = None
    axis_fingerprint: str = ""
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.z_minus.shape[0]

    def __getitem__(self, i) -> PairTuple:
        return PairTuple(self.z_minus[i], self.z_plus[i], self.feature_name)

    def __iter__(self) -> Iterator[PairTuple]:
        return (self[i] for i in range(len(self)))


def build_pair_tuples(scorer: FeatureScorer, axis: FeatureAxis, feature_index: int, n_candidates: int,
                      threshold: float = DEFAULT_THRESHOLD, multiplier: float = 1.0, seed: int = 0,
                      batch_size: int = 4096) -> PairTuples:
    """Keep candidates scoring below threshold whose shift along the axis scores above it.

    Candidates are scored in batches; accepted tuples keep candidate order.
    """
    if not 0.0 < threshold < 1.0:
        raise InvalidArgument(f"threshold must lie in (0, 1), got {threshold}")
    if n_candidates < 1:
        raise InvalidArgument("need at least one candidate")
    if not 0 <= feature_index < scorer.m:
        raise InvalidArgument(f"feature index {feature_index} out of range for m={scorer.m}")
    if axis.d != scorer.d:
        raise InvalidArgument(f"axis has d={axis.d}, scorer has d={scorer.d}")

    candidates = sample_gaussian_latents(n_candidates, scorer.d, seed)
    kept_minus, kept_plus = [], []
    n_negative = 0
    for start in range(0, n_candidates, batch_size):
        z = candidates[start:start + batch_size]
        neg = z[score_batch(scorer, z)[:, feature_index] < threshold]
        n_negative += neg.shape[0]
        if neg.shape[0] == 0:
            continue
        shifted = shift(neg, axis, multiplier)
        ok = score_batch(scorer, shifted)[:, feature_index] > threshold
        kept_minus.append(neg[ok])
        kept_plus.append(shifted[ok])

    n_accepted = sum(k.shape[0] for k in kept_minus)
    diagnostics = {
        "n_candidates": n_candidates,
        "n_negative": n_negative,
        "n_accepted": n_accepted,
        "negative_rate": n_negative / n_candidates,
        "shift_success_rate": n_accepted / n_negative if n_negative else 0.0,
        "yield": n_accepted / n_candidates,
    }
    if n_accepted == 0:
        raise EmptyDatasetError(
            "no tuples accepted: "
            f"{n_negative}/{n_candidates} candidates passed the negative filter, "
            f"0/{n_negative} shifted latents passed the positive filter",
            diagnostics,
        )
    return PairTuples(
        z_minus=np.concatenate(kept_minus),
        z_plus=np.concatenate(kept_plus),
        feature_name=axis.feature_name,
        threshold=threshold,
        multiplier=multiplier,
        seed=seed,
        axis_fingerprint=axis.fingerprint(),
        diagnostics=diagnostics,
    )


@dataclass(frozen=True, eq=False)
class PairsDataset:
    """Training samples (input latent, label) -> target latent as aligned arrays.

    ``tuple_count`` is set for a full expansion (and then always equals a
    quarter of the sample count) and is None for splits.
    """

    feature_name: str
    d: int
    threshold: float
    multiplier: float
    inputs: np.ndarray   # (N, d)
    labels: np.ndarray   # (N, 1)
    targets: np.ndarray  # (N, d)
    tuple_count: int | None
    seed: int | None = None
    axis_fingerprint: str = ""
    fourth_pair: str = "removal"

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.inputs.shape != (n, self.d) or self.targets.shape != (n, self.d):
            raise InvalidArgument(f"inputs/targets must both be (N, {self.d})")
        if self.labels.ndim != 2 or self.labels.shape[0] != n:
            raise InvalidArgument("labels must be an (N, k) matrix")
        if self.tuple_count is not None and n != 4 * self.tuple_count:
            raise InvalidArgument(f"{n} samples is not 4 x {self.tuple_count} tuples")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def k(self) -> int:
        return self.labels.shape[1]

    @property
    def samples(self) -> list[PairSample]:
        return [self.sample(i) for i in range(len(self))]

    def sample(self, i: int) -> PairSample:
        return PairSample(self.inputs[i], float(self.labels[i, 0]), self.targets[i])

    def subset(self, index) -> "PairsDataset":
        return PairsDataset(
            feature_name=self.feature_name, d=self.d, threshold=self.threshold, multiplier=self.multiplier,
            inputs=self.inputs[index], labels=self.labels[index], targets=self.targets[index],
            tuple_count=None, seed=self.seed, axis_fingerprint=self.axis_fingerprint,
            fourth_pair=self.fourth_pair,
        )

    def manifest(self) -> dict:
        return {
            "feature_name": self.feature_name,
            "d": self.d,
            "threshold": self.threshold,
            "multiplier": self.multiplier,
            "tuple_count": self.tuple_count,
            "n_samples": len(self),
            "seed": self.seed,
            "axis_fingerprint": self.axis_fingerprint,
            "fourth_pair": self.fourth_pair,
            "files": dict(_FILES),
        }


def expand_tuples(tuples: PairTuples | Sequence[PairTuple], fourth_pair: str = "removal") -> PairsDataset:
    """Four samples per tuple, in this order:

        (z_minus, 1) -> z_plus
        (z_plus,  1) -> z_plus
        (z_minus, 0) -> z_minus
        (z_plus,  0) -> z_minus   (or -> z_plus with fourth_pair="identity")
    """
    if fourth_pair not in FOURTH_PAIR_MODES:
        raise InvalidArgument(f"fourth_pair must be one of {FOURTH_PAIR_MODES}")
    if isinstance(tuples, PairTuples):
        zm, zp, name = tuples.z_minus, tuples.z_plus, tuples.feature_name
        meta = dict(threshold=tuples.threshold, multiplier=tuples.multiplier, seed=tuples.seed,
                    axis_fingerprint=tuples.axis_fingerprint)
    else:
        tuples = list(tuples)
        if not tuples:
            raise InvalidArgument("cannot expand an empty tuple list")
        dims = {np.shape(t.z_minus) for t in tuples} | {np.shape(t.z_plus) for t in tuples}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise InvalidArgument(f"inconsistent latent dimensions across tuples: {sorted(dims)}")
        zm = np.stack([t.z_minus for t in tuples]).astype(np.float64)
        zp = np.stack([t.z_plus for t in tuples]).astype(np.float64)
        name = tuples[0].feature_name
        meta = dict(threshold=DEFAULT_THRESHOLD, multiplier=1.0, seed=None, axis_fingerprint="")
    n, d = zm.shape
    if n == 0:
        raise InvalidArgument("cannot expand an empty tuple list")

    last_target = zm if fourth_pair == "removal" else zp
    inputs = np.stack([zm, zp, zm, zp], axis=1).reshape(4 * n, d)
    targets = np.stack([zp, zp, zm, last_target], axis=1).reshape(4 * n, d)
    labels = np.tile(np.array([1.0, 1.0, 0.0, 0.0]), n).reshape(4 * n, 1)
    return PairsDataset(feature_name=name, d=d, inputs=inputs, labels=labels, targets=targets,
                        tuple_count=n, fourth_pair=fourth_pair, **meta)


def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    sizes = [int(np.floor(f * n)) for f in fractions[:-1]]
    return sizes + [n - sum(sizes)]


def split_dataset(ds: PairsDataset, fractions: Sequence[float] = (0.8, 0.1, 0.1),
                  seed: int = 0) -> tuple[PairsDataset, ...]:
    if len(ds) == 0:
        raise InvalidArgument("cannot split an empty dataset")
    fractions = tuple(float(f) for f in fractions)
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidArgument(f"split fractions must be non-negative and sum to 1, got {fractions}")
    order = rng_for(seed).permutation(len(ds))
    cuts = np.cumsum(split_sizes(len(ds), fractions))[:-1]
    return tuple(ds.subset(idx) for idx in np.split(order, cuts))


def save_dataset(ds: PairsDataset, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    npyio.write_npy(path / _FILES["inputs"], ds.inputs)
    npyio.write_npy(path / _FILES["labels"], ds.labels)
    npyio.write_npy(path / _FILES["targets"], ds.targets)
    (path / MANIFEST).write_text(json.dumps(ds.manifest(), indent=2) + "\n")


def load_dataset(path) -> PairsDataset:
    path = Path(path)
    try:
        meta = json.loads((path / MANIFEST).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path / MANIFEST}: not valid JSON ({exc})") from exc
    try:
        files = meta["files"]
        d = int(meta["d"])
        n = int(meta["n_samples"])
        inputs = npyio.read_npy(path / files["inputs"], ndim=2)
        labels = npyio.read_npy(path / files["labels"], ndim=2)
        targets = npyio.read_npy(path / files["targets"], ndim=2)
        if inputs.shape != (n, d) or targets.shape != (n, d) or labels.shape[0] != n:
            raise FormatError(
                f"{path}: array shapes {inputs.shape}, {labels.shape}, {targets.shape} "
                f"disagree with manifest (n={n}, d={d})"
            )
        return PairsDataset(
            feature_name=meta["feature_name"], d=d, threshold=float(meta["threshold"]),
            multiplier=float(meta["multiplier"]), inputs=inputs.astype(np.float64),
            labels=labels.astype(np.float64), targets=targets.astype(np.float64),
            tuple_count=meta["tuple_count"], seed=meta.get("seed"),
            axis_fingerprint=meta.get("axis_fingerprint", ""), fourth_pair=meta.get("fourth_pair", "removal"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed dataset manifest ({exc})") from exc
