"""Baseline editing: regress feature scores on latents, shift along the slope."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateAxisError, FormatError, InvalidArgument
from .numerics import as_batch, ols_fit

DEFAULT_EPSILON = 1e-6
_UNIT_TOL = 1e-9


def amplify_scores(p, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """arctanh(2p - 1), clamped away from +-1.

    For a sigmoid output this is exactly half the pre-sigmoid logit.
    """
    if not 0.0 < epsilon < 0.5:
        raise InvalidArgument(f"epsilon must lie in (0, 0.5), got {epsilon}")
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidArgument("probabilities must lie in [0, 1]")
    return np.arctanh(np.clip(2.0 * p - 1.0, -1.0 + epsilon, 1.0 - epsilon))


@dataclass(frozen=True, eq=False)
class FeatureAxis:
    feature_name: str
    direction: np.ndarray
    intercept: float
    fit_r2: float
    n_fit: int
    arctanh_used: bool

    def __post_init__(self):
        direction = np.array(self.direction, dtype=np.float64)
        if direction.ndim != 1 or not np.all(np.isfinite(direction)):
            raise InvalidArgument("axis direction must be a finite 1-D vector")
        if abs(np.linalg.norm(direction) - 1.0) > _UNIT_TOL:
            raise InvalidArgument(f"axis direction must have unit norm, got {np.linalg.norm(direction)!r}")
        direction.setflags(write=False)
        object.__setattr__(self, "direction", direction)

    @property
    def d(self) -> int:
        return self.direction.shape[0]

    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.direction, dtype="<f8").tobytes()).hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, FeatureAxis):
            return NotImplemented
        return (
            self.feature_name == other.feature_name
            and np.array_equal(self.direction, other.direction)
            and self.intercept == other.intercept
            and self.fit_r2 == other.fit_r2
            and self.n_fit == other.n_fit
            and self.arctanh_used == other.arctanh_used
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "feature_name": self.feature_name,
            "d": self.d,
            "direction": [float(x) for x in self.direction],
            "intercept": float(self.intercept),
            "fit_r2": float(self.fit_r2),
            "n_fit": int(self.n_fit),
            "arctanh_used": bool(self.arctanh_used),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureAxis":
        try:
            direction = np.array(data["direction"], dtype=np.float64)
            if direction.shape != (int(data["d"]),):
                raise FormatError(f"axis declares d={data['d']} but direction has shape {direction.shape}")
            return cls(
                feature_name=str(data["feature_name"]),
                direction=direction,
                intercept=float(data["intercept"]),
                fit_r2=float(data["fit_r2"]),
                n_fit=int(data["n_fit"]),
                arctanh_used=bool(data["arctanh_used"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed feature axis record: {exc}") from exc


def save_axis(axis: FeatureAxis, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(axis.to_dict(), indent=2) + "\n")


def load_axis(path) -> FeatureAxis:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a JSON object")
    return FeatureAxis.from_dict(data)


def fit_feature_axis(latents, scores, use_arctanh: bool = True, epsilon: float = DEFAULT_EPSILON,
                     feature_name: str = "feature") -> FeatureAxis:
    """Fit scores ~ latents @ beta + intercept and keep beta / |beta| as the axis."""
    z = as_batch(latents)
    y = np.asarray(scores, dtype=np.float64).ravel()
    if use_arctanh:
        y = amplify_scores(y, epsilon)
    fit = ols_fit(z, y)
    norm = np.linalg.norm(fit.slopes)
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateAxisError("regression slopes are zero; scores do not vary with the latent")
    return FeatureAxis(
        feature_name=feature_name,
        direction=fit.slopes / norm,
        intercept=fit.intercept,
        fit_r2=fit.r_squared,
        n_fit=z.shape[0],
        arctanh_used=bool(use_arctanh),
    )


def shift(z, axis: FeatureAxis, multiplier: float = 1.0) -> np.ndarray:
    """z + multiplier * direction, for a single vector or a (n, d) batch."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != axis.d:
        raise InvalidArgument(f"latent dimension {z.shape[-1]} does not match axis dimension {axis.d}")
    return z + multiplier * axis.direction


def shift_multi(z, axes: Sequence[FeatureAxis], multipliers) -> np.ndarray:
    multipliers = np.atleast_1d(np.asarray(multipliers, dtype=np.float64))
    if len(axes) != multipliers.shape[0]:
        raise InvalidArgument(f"{len(axes)} axes but {multipliers.shape[0]} multipliers")
    z = np.asarray(z, dtype=np.float64)
    if not axes:
        return z.copy()
    for ax in axes:
        if ax.d != z.shape[-1]:
            raise InvalidArgument(f"axis {ax.feature_name!r} has d={ax.d}, latent has d={z.shape[-1]}")
    displacement = multipliers @ np.stack([ax.direction for ax in axes])
    return z + displacement
