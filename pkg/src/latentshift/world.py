"""Feature scorers: a synthetic world with known geometry and a file bridge.

The generator and image classifier are collapsed into one map from latent
vectors to per-feature probabilities. A synthetic feature j scores a latent
z as

    sigmoid(gain_j * (a_j . z) + q_j * (u_j . z)**2 + offset_j)

so q_j = 0 gives a hyperplane decision boundary with normal a_j.
"""
from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import expit

from . import npyio
from .errors import FormatError, InvalidArgument, NoGroundTruthAxis, ProtocolError, ScorerTimeout
from .numerics import as_batch, rng_for

DEFAULT_FEATURE_NAMES = ("eyeglasses", "male", "black_hair")
BOUNDARY_KINDS = ("linear", "quadratic")


@runtime_checkable
class FeatureScorer(Protocol):
    d: int
    m: int
    feature_names: tuple[str, ...]

    def score_batch(self, latents: np.ndarray) -> np.ndarray: ...


def _per_feature(value, m, name, default):
    if value is None:
        return tuple([default] * m)
    if np.isscalar(value):
        return tuple([value] * m)
    value = tuple(value)
    if len(value) != m:
        raise InvalidArgument(f"{name} has {len(value)} entries, expected m={m}")
    return value


@dataclass(frozen=True)
class WorldConfig:
    d: int = 32
    m: int = 3
    kinds: tuple[str, ...] | None = None
    offsets: tuple[float, ...] | None = None
    curvatures: tuple[float, ...] | None = None
    gains: tuple[float, ...] | None = None
    # cosine between u_j and a_j; None draws u_j independently of a_j
    curvature_alignment: tuple[float | None, ...] | None = None
    noise_sigma: float = 0.0
    seed: int = 0
    # mutually orthogonal linear directions (features do not interfere when shifted)
    orthogonal: bool = False
    feature_names: tuple[str, ...] | None = None
    latent_norm_clamp: float | None = None

    def resolved(self) -> "WorldConfig":
        """Validate and fill every per-feature field explicitly."""
        if self.d < 2 or self.m < 1:
            raise InvalidArgument(f"world needs d >= 2 and m >= 1, got d={self.d}, m={self.m}")
        m = self.m
        kinds = _per_feature(self.kinds, m, "kinds", "linear")
        for k in kinds:
            if k not in BOUNDARY_KINDS:
                raise InvalidArgument(f"unknown boundary kind {k!r}")
        curv = []
        for kind, q in zip(kinds, _per_feature(self.curvatures, m, "curvatures", None)):
            if kind == "linear":
                if q not in (None, 0, 0.0):
                    raise InvalidArgument("linear features must have zero curvature")
                curv.append(0.0)
            else:
                q = 1.0 if q is None else float(q)
                if q == 0.0:
                    raise InvalidArgument("quadratic features need a non-zero curvature coefficient")
                curv.append(q)
        curv = tuple(curv)
        gains = tuple(float(g) for g in _per_feature(self.gains, m, "gains", 1.0))
        if any(not g > 0 for g in gains):
            raise InvalidArgument("gains must be positive")
        align = _per_feature(self.curvature_alignment, m, "curvature_alignment", None)
        for rho in align:
            if rho is not None and not -1.0 <= rho <= 1.0:
                raise InvalidArgument(f"curvature alignment must lie in [-1, 1], got {rho}")
        if self.feature_names is None:
            names = DEFAULT_FEATURE_NAMES if m == len(DEFAULT_FEATURE_NAMES) else tuple(f"feature{j}" for j in range(m))
        else:
            names = tuple(self.feature_names)
            if len(names) != m or len(set(names)) != m:
                raise InvalidArgument("feature_names must be m distinct names")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be >= 0")
        if self.orthogonal and m > self.d:
            raise InvalidArgument(f"cannot make {m} orthogonal directions in d={self.d}")
        if self.latent_norm_clamp is not None and not self.latent_norm_clamp > 0:
            raise InvalidArgument("latent_norm_clamp must be positive")
        return WorldConfig(
            d=int(self.d), m=int(m), kinds=kinds,
            offsets=tuple(float(c) for c in _per_feature(self.offsets, m, "offsets", 0.0)),
            curvatures=curv, gains=gains, curvature_alignment=align,
            noise_sigma=float(self.noise_sigma), seed=int(self.seed), orthogonal=bool(self.orthogonal),
            feature_names=names, latent_norm_clamp=self.latent_norm_clamp,
        )

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "WorldConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown world config fields: {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()}
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    config: WorldConfig
    linear_directions: np.ndarray  # (m, d)
    curvature_directions: np.ndarray  # (m, d)
    offsets: np.ndarray
    curvatures: np.ndarray
    gains: np.ndarray
    _noise_rng: np.random.Generator = field(repr=False, compare=False, default=None)

    @property
    def d(self) -> int:
        return self.config.d

    @property
    def m(self) -> int:
        return self.config.m

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.config.feature_names

    @property
    def noise_sigma(self) -> float:
        return self.config.noise_sigma

    def is_linear(self, j: int) -> bool:
        return self.curvatures[j] == 0.0

    def logits(self, latents) -> np.ndarray:
        z = as_batch(latents, self.d)
        clamp = self.config.latent_norm_clamp
        if clamp is not None:
            norms = np.linalg.norm(z, axis=1, keepdims=True)
            z = z * np.minimum(1.0, clamp / np.maximum(norms, 1e-300))
        lin = z @ self.linear_directions.T
        quad = (z @ self.curvature_directions.T) ** 2
        return self.gains * lin + self.curvatures * quad + self.offsets

    def score_batch(self, latents) -> np.ndarray:
        logit = self.logits(latents)
        if self.noise_sigma > 0:
            logit = logit + self._noise_rng.normal(0.0, self.noise_sigma, size=logit.shape)
        return np.clip(expit(logit), 0.0, 1.0)

    def __eq__(self, other):
        if not isinstance(other, SyntheticWorld):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.linear_directions, other.linear_directions)
            and np.array_equal(self.curvature_directions, other.curvature_directions)
        )

    __hash__ = None


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def make_world(config: WorldConfig) -> SyntheticWorld:
    cfg = config.resolved()
    rng = rng_for(cfg.seed)
    a = _unit_rows(rng.standard_normal((cfg.m, cfg.d)))
    if cfg.orthogonal:
        # Gram-Schmidt in draw order, so a[0] matches the non-orthogonal world
        q, r = np.linalg.qr(a.T)
        a = (q * np.sign(np.diag(r))).T
    u = _unit_rows(rng.standard_normal((cfg.m, cfg.d)))
    for j, rho in enumerate(cfg.curvature_alignment):
        if rho is None:
            continue
        w = u[j] - (u[j] @ a[j]) * a[j]
        w /= np.linalg.norm(w)
        u[j] = rho * a[j] + np.sqrt(max(0.0, 1.0 - rho * rho)) * w
        u[j] /= np.linalg.norm(u[j])
    for arr in (a, u):
        arr.setflags(write=False)
    return SyntheticWorld(
        config=cfg,
        linear_directions=a,
        curvature_directions=u,
        offsets=np.array(cfg.offsets),
        curvatures=np.array(cfg.curvatures),
        gains=np.array(cfg.gains),
        _noise_rng=rng_for(cfg.seed ^ 0x5EED_0F_401CE),
    )


def score_batch(scorer: FeatureScorer, latents) -> np.ndarray:
    """Validated (n, m) probability matrix for a batch of latents."""
    z = as_batch(latents, scorer.d)
    scores = np.asarray(scorer.score_batch(z), dtype=np.float64)
    # read m after the call: an external scorer learns it from its first reply
    if scores.shape != (z.shape[0], scorer.m):
        raise ProtocolError(f"scorer returned shape {scores.shape}, expected {(z.shape[0], scorer.m)}")
    if not np.all(np.isfinite(scores)) or scores.min() < 0.0 or scores.max() > 1.0:
        raise ProtocolError("scorer returned values outside [0, 1]")
    return scores


def ground_truth_axis(world: SyntheticWorld, j: int) -> np.ndarray:
    if not 0 <= j < world.m:
        raise InvalidArgument(f"feature index {j} out of range for m={world.m}")
    if not world.is_linear(j):
        raise NoGroundTruthAxis(f"feature {world.feature_names[j]!r} has a curved boundary")
    return np.array(world.linear_directions[j])


class ExternalScorer:
    """Scores latents by exchanging NPY files with an outside process.

    Each call writes ``latents-<id>.npy`` (n x d) into ``request_dir`` and
    waits for the responder to write ``scores-<id>.npy`` (n x m). Both
    files are removed once the reply has been read. Responders should
    write the reply under a temporary name and rename it into place.
    """

    def __init__(self, request_dir, timeout: float, d: int, m: int | None = None,
                 feature_names: Sequence[str] | None = None, poll_interval: float = 0.01):
        self.request_dir = Path(request_dir)
        if not self.request_dir.is_dir():
            raise InvalidArgument(f"request directory {self.request_dir} does not exist")
        if timeout <= 0:
            raise InvalidArgument("timeout must be positive")
        self.timeout = float(timeout)
        self.d = int(d)
        self.m = m
        self._names = tuple(feature_names) if feature_names is not None else None
        if self._names is not None:
            if self.m is None:
                self.m = len(self._names)
            elif len(self._names) != self.m:
                raise InvalidArgument("feature_names length does not match m")
        self.poll_interval = poll_interval

    @property
    def feature_names(self) -> tuple[str, ...]:
        if self._names is None:
            if self.m is None:
                raise ProtocolError("feature count unknown until the first reply")
            return tuple(f"feature{j}" for j in range(self.m))
        return self._names

    def score_batch(self, latents) -> np.ndarray:
        z = as_batch(latents, self.d)
        req_id = uuid.uuid4().hex
        req = self.request_dir / f"latents-{req_id}.npy"
        reply = self.request_dir / f"scores-{req_id}.npy"
        npyio.write_npy(req, z)
        deadline = time.monotonic() + self.timeout
        last_error = None
        try:
            while True:
                if reply.exists():
                    try:
                        scores = npyio.read_npy(reply)
                        break
                    except FileNotFoundError:
                        pass
                    except FormatError as exc:
                        last_error = exc  # may still be mid-write
                if time.monotonic() >= deadline:
                    if last_error is not None:
                        raise ProtocolError(f"malformed reply for request {req_id}: {last_error}")
                    raise ScorerTimeout(f"no reply for request {req_id} within {self.timeout:g}s")
                time.sleep(self.poll_interval)
        finally:
            req.unlink(missing_ok=True)
            reply.unlink(missing_ok=True)
        if scores.ndim != 2 or scores.shape[0] != z.shape[0] or (self.m is not None and scores.shape[1] != self.m):
            raise ProtocolError(f"reply shape {scores.shape} does not match request ({z.shape[0]}, {self.m or 'm'})")
        if self.m is None:
            self.m = scores.shape[1]
        return scores.astype(np.float64)


def external_scorer(request_dir, timeout: float, d: int, m: int | None = None,
                    feature_names: Sequence[str] | None = None) -> ExternalScorer:
    return ExternalScorer(request_dir, timeout, d=d, m=m, feature_names=feature_names)
