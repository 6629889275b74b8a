import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from latentshift import npyio
from latentshift.errors import InvalidArgument, NoGroundTruthAxis, ProtocolError, ScorerTimeout
from latentshift.numerics import sample_gaussian_latents
from latentshift.world import (FeatureScorer, WorldConfig, external_scorer, ground_truth_axis, make_world,
                               score_batch)
from responder import Responder


def test_world_is_deterministic():
    assert make_world(WorldConfig(d=32, m=3, seed=1)) == make_world(WorldConfig(d=32, m=3, seed=1))
    assert make_world(WorldConfig(d=32, m=3, seed=1)) != make_world(WorldConfig(d=32, m=3, seed=2))


def test_directions_are_unit(linear_world):
    np.testing.assert_allclose(np.linalg.norm(linear_world.linear_directions, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(linear_world.curvature_directions, axis=1), 1.0, atol=1e-12)


def test_origin_scores_one_half():
    w = make_world(WorldConfig(d=2, m=1, offsets=(0.0,), gains=(1.0,), seed=5))
    assert score_batch(w, np.zeros(2))[0, 0] == 0.5


def test_closed_form_scores(linear_world):
    a = linear_world.linear_directions[0]
    s = score_batch(linear_world, np.stack([10 * a, -10 * a]))[:, 0]
    assert s[0] == pytest.approx(expit(10.0), rel=1e-12)
    assert s[0] == pytest.approx(0.99995, abs=1e-5)
    assert s[1] == pytest.approx(4.54e-5, rel=1e-3)


def test_symmetric_world_splits_half(linear_world):
    s = score_batch(linear_world, sample_gaussian_latents(1000, 32, seed=8))
    assert abs(np.mean(s[:, 0] > 0.5) - 0.5) < 0.05


def test_quadratic_score_non_monotone_along_axis():
    w = make_world(WorldConfig(d=32, m=1, kinds=("quadratic",), curvatures=(2.0,), seed=3))
    a = w.linear_directions[0]
    z0 = sample_gaussian_latents(1, 32, seed=4)[0]
    t = np.linspace(-60, 60, 2401)
    logits = w.logits(z0 + t[:, None] * a)[:, 0]
    steps = np.diff(logits)
    assert steps.min() < 0 < steps.max()


def test_config_validation():
    with pytest.raises(InvalidArgument):
        make_world(WorldConfig(d=1, m=1))
    with pytest.raises(InvalidArgument):
        make_world(WorldConfig(d=4, m=0))
    with pytest.raises(InvalidArgument):
        make_world(WorldConfig(d=4, m=1, kinds=("quadratic",), curvatures=(0.0,)))
    with pytest.raises(InvalidArgument):
        make_world(WorldConfig(d=4, m=1, kinds=("linear",), curvatures=(1.0,)))
    with pytest.raises(InvalidArgument):
        make_world(WorldConfig(d=4, m=2, offsets=(0.0,)))


def test_curvature_alignment():
    w = make_world(WorldConfig(d=16, m=2, kinds=("quadratic", "quadratic"), curvature_alignment=(1.0, 0.3), seed=2))
    cos = np.sum(w.linear_directions * w.curvature_directions, axis=1)
    np.testing.assert_allclose(cos, [1.0, 0.3], atol=1e-12)


def test_config_dict_round_trip():
    cfg = WorldConfig(d=8, m=2, kinds=("linear", "quadratic"), curvatures=(0.0, -1.0), seed=3).resolved()
    assert WorldConfig.from_dict(cfg.to_dict()) == cfg


def test_dimension_mismatch(linear_world):
    with pytest.raises(InvalidArgument):
        score_batch(linear_world, np.zeros((2, 31)))


def test_ground_truth_axis(linear_world):
    for j in range(3):
        a = ground_truth_axis(linear_world, j)
        assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
        assert a @ linear_world.linear_directions[j] == pytest.approx(1.0, abs=1e-12)
    curved = make_world(WorldConfig(d=8, m=1, kinds=("quadratic",), seed=0))
    with pytest.raises(NoGroundTruthAxis):
        ground_truth_axis(curved, 0)


def test_world_satisfies_scorer_protocol(linear_world):
    assert isinstance(linear_world, FeatureScorer)


def test_noise_keeps_scores_valid():
    w = make_world(WorldConfig(d=8, m=2, noise_sigma=3.0, seed=1))
    z = sample_gaussian_latents(500, 8, seed=2)
    s1, s2 = score_batch(w, z), score_batch(w, z)
    assert s1.min() >= 0.0 and s1.max() <= 1.0
    assert not np.array_equal(s1, s2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 50.0),
       kind=st.sampled_from(["linear", "quadratic"]), noise=st.floats(0.0, 5.0))
def test_scores_in_unit_interval(seed, scale, kind, noise):
    w = make_world(WorldConfig(d=6, m=2, kinds=(kind, kind), curvatures=None, noise_sigma=noise, seed=seed))
    s = score_batch(w, scale * sample_gaussian_latents(64, 6, seed + 1))
    assert s.min() >= 0.0 and s.max() <= 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_linear_score_monotone_along_axis(seed):
    w = make_world(WorldConfig(d=8, m=1, gains=(0.5,), seed=seed))
    z = sample_gaussian_latents(1, 8, seed)[0]
    t = np.linspace(-20, 20, 81)
    logits = w.logits(z + t[:, None] * w.linear_directions[0])[:, 0]
    assert np.all(np.diff(logits) > 0)


def test_pure_when_noiseless(linear_world):
    z = sample_gaussian_latents(10, 32, seed=1)
    np.testing.assert_array_equal(score_batch(linear_world, z), score_batch(linear_world, z))


def test_external_echo(tmp_path):
    scorer = external_scorer(tmp_path, timeout=5.0, d=8, m=3)
    z = sample_gaussian_latents(5, 8, seed=1)
    with Responder(tmp_path, m=3) as responder:
        s = score_batch(scorer, z)
    np.testing.assert_array_equal(s, np.full((5, 3), 0.5))
    np.testing.assert_array_equal(responder.requests[0], z.astype(np.float32))
    assert list(tmp_path.iterdir()) == []


def test_external_learns_m_from_reply(tmp_path):
    scorer = external_scorer(tmp_path, timeout=5.0, d=4)
    with Responder(tmp_path, m=2, value=0.25):
        s = score_batch(scorer, np.zeros((3, 4)))
    assert s.shape == (3, 2)
    assert scorer.m == 2


def test_external_timeout(tmp_path):
    scorer = external_scorer(tmp_path, timeout=0.2, d=4, m=1)
    start = time.monotonic()
    with pytest.raises(ScorerTimeout):
        scorer.score_batch(np.zeros((2, 4)))
    assert time.monotonic() - start >= 0.2
    assert list(tmp_path.iterdir()) == []


def test_external_wrong_shape(tmp_path):
    scorer = external_scorer(tmp_path, timeout=5.0, d=4, m=2)
    with Responder(tmp_path, m=2, shape=(7, 2)):
        with pytest.raises(ProtocolError):
            scorer.score_batch(np.zeros((3, 4)))


def test_external_payload_bit_exact(tmp_path):
    z = np.random.default_rng(1).standard_normal((4, 8)).astype(np.float32)
    scorer = external_scorer(tmp_path, timeout=5.0, d=8, m=1)
    with Responder(tmp_path, m=1) as responder:
        scorer.score_batch(z)
    assert responder.requests[0].tobytes() == z.tobytes()


def test_orthogonal_directions():
    plain = make_world(WorldConfig(d=12, m=4, seed=6))
    ortho = make_world(WorldConfig(d=12, m=4, seed=6, orthogonal=True))
    A = ortho.linear_directions
    np.testing.assert_allclose(A @ A.T, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(A[0], plain.linear_directions[0], atol=1e-12)
    assert A[1] @ plain.linear_directions[1] > 0
    with pytest.raises(InvalidArgument):
        make_world(WorldConfig(d=3, m=4, orthogonal=True))
