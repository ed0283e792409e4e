"""Stochastic window transforms: identities, involutions, batch views."""

import numpy as np
import pytest

from metareplay.augment import (AugmentError, ChannelShuffle, Jitter, Negate,
                                Permute, Rotate3D, Scale, TimeFlip, apply,
                                apply_array, default_multitask_kinds,
                                default_simclr_pipeline, kind_from_config,
                                kind_name, paired_views_batch,
                                sample_task_batch, two_views)
from metareplay.data import DomainId, Window


@pytest.fixture
def rng():
    return np.random.default_rng(77)


@pytest.fixture
def win(rng):
    vals = rng.uniform(-0.8, 0.8, size=(3, 64)).astype(np.float32)
    return Window(values=vals, label=2, domain=DomainId(1, "d1"))


# ---------------------------------------------------------------------------
# identities and involutions

def test_jitter_sigma_zero_is_identity(win, rng):
    out = apply(Jitter(sigma=0.0), win, rng)
    np.testing.assert_array_equal(out.values, win.values)


def test_scale_factor_one_is_identity(win, rng):
    out = apply(Scale(low=1.0, high=1.0), win, rng)
    np.testing.assert_allclose(out.values, win.values, atol=1e-7)


def test_permute_one_segment_is_identity(win, rng):
    out = apply(Permute(n_segments=1), win, rng)
    np.testing.assert_array_equal(out.values, win.values)


def test_negate_is_involution(win, rng):
    once = apply_array(Negate(), win.values, rng)
    twice = apply_array(Negate(), once, rng)
    np.testing.assert_array_equal(twice, win.values)
    np.testing.assert_array_equal(once, -win.values)


def test_time_flip_is_involution(win, rng):
    once = apply_array(TimeFlip(), win.values, rng)
    twice = apply_array(TimeFlip(), once, rng)
    np.testing.assert_array_equal(twice, win.values)
    np.testing.assert_array_equal(once, win.values[:, ::-1])


def test_label_and_domain_preserved(win, rng):
    out = apply(Jitter(0.1), win, rng)
    assert out.label == win.label
    assert out.domain == win.domain
    assert out.values.shape == win.values.shape


def test_output_clamped(rng):
    vals = np.full((3, 32), 0.99, dtype=np.float32)
    w = Window(values=vals, label=None, domain=None)
    out = apply(Scale(low=3.0, high=3.0), w, rng)
    assert out.values.max() <= 1.0
    assert out.values.min() >= -1.0


# ---------------------------------------------------------------------------
# rotation

def test_rotate3d_preserves_per_timestep_norms(win, rng):
    out = apply_array(Rotate3D(max_angle_deg=30.0), win.values, rng)
    np.testing.assert_allclose(np.linalg.norm(out, axis=0),
                               np.linalg.norm(win.values, axis=0), atol=1e-5)


def test_rotate3d_applies_one_matrix_for_all_timesteps(win, rng):
    out = apply_array(Rotate3D(45.0), win.values, rng)
    # recover the matrix from 3 timesteps, check it maps the rest too
    a = win.values[:, :3].astype(np.float64)
    b = out[:, :3].astype(np.float64)
    r = b @ np.linalg.inv(a)
    np.testing.assert_allclose(r @ win.values, out, atol=1e-4)


def test_rotate3d_needs_three_channels(rng):
    with pytest.raises(AugmentError, match="3 channels"):
        apply_array(Rotate3D(30.0), np.zeros((2, 16), dtype=np.float32), rng)


def test_permute_preserves_channel_multisets(win, rng):
    out = apply_array(Permute(n_segments=4), win.values, rng)
    for c in range(3):
        np.testing.assert_array_equal(np.sort(out[c]), np.sort(win.values[c]))


def test_channel_shuffle_permutes_rows(win, rng):
    out = apply_array(ChannelShuffle(), win.values, rng)
    got = {out[i].tobytes() for i in range(3)}
    want = {win.values[i].tobytes() for i in range(3)}
    assert got == want


# ---------------------------------------------------------------------------
# parameter validation

def test_invalid_parameters_raise():
    with pytest.raises(AugmentError):
        Jitter(sigma=-0.1)
    with pytest.raises(AugmentError):
        Scale(low=1.2, high=0.9)
    with pytest.raises(AugmentError):
        Permute(n_segments=0)
    with pytest.raises(AugmentError):
        Rotate3D(max_angle_deg=-5.0)


def test_kind_config_round_trip():
    for kind in default_multitask_kinds() + (ChannelShuffle(),):
        name = kind_name(kind)
        assert kind_from_config({"kind": name}) == type(kind)() \
            or kind_from_config({"kind": name}).__class__ is kind.__class__
    assert kind_from_config("negate") == Negate()
    with pytest.raises(AugmentError):
        kind_from_config({"kind": "warp"})


# ---------------------------------------------------------------------------
# views

def test_two_views_identity_pipeline_equals_source(win, rng):
    pipeline = (Jitter(0.0), Scale(1.0, 1.0), Permute(1))
    v1, v2 = two_views(win, pipeline, rng)
    np.testing.assert_allclose(v1.values, win.values, atol=1e-7)
    np.testing.assert_allclose(v2.values, win.values, atol=1e-7)


def test_two_views_same_seed_identical(win):
    pipeline = default_simclr_pipeline()
    a1, a2 = two_views(win, pipeline, np.random.default_rng(5))
    b1, b2 = two_views(win, pipeline, np.random.default_rng(5))
    np.testing.assert_array_equal(a1.values, b1.values)
    np.testing.assert_array_equal(a2.values, b2.values)
    # and the two draws differ from each other
    assert not np.array_equal(a1.values, a2.values)


def test_two_views_negate_only(win, rng):
    v1, v2 = two_views(win, (Negate(),), rng)
    np.testing.assert_array_equal(v1.values, -win.values)
    np.testing.assert_array_equal(v2.values, -win.values)


def test_two_views_empty_pipeline_raises(win, rng):
    with pytest.raises(AugmentError):
        two_views(win, (), rng)


def test_paired_views_layout(rng):
    wins = rng.uniform(-0.5, 0.5, size=(4, 3, 32)).astype(np.float32)
    out = paired_views_batch(wins, (Negate(),), rng)
    assert out.shape == (8, 3, 32)
    for i in range(4):
        np.testing.assert_array_equal(out[2 * i], -wins[i])
        np.testing.assert_array_equal(out[2 * i + 1], -wins[i])


def test_paired_views_deterministic(rng):
    wins = rng.uniform(-0.5, 0.5, size=(3, 3, 32)).astype(np.float32)
    a = paired_views_batch(wins, default_simclr_pipeline(),
                           np.random.default_rng(9))
    b = paired_views_batch(wins, default_simclr_pipeline(),
                           np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# detection batches

def test_task_batch_probability_zero(rng):
    wins = rng.uniform(-0.5, 0.5, size=(5, 3, 32)).astype(np.float32)
    out, labels = sample_task_batch(wins, default_multitask_kinds(), rng, p=0.0)
    np.testing.assert_array_equal(labels, 0.0)
    np.testing.assert_array_equal(out, wins)


def test_task_batch_probability_one_negate(rng):
    wins = rng.uniform(-0.5, 0.5, size=(5, 3, 32)).astype(np.float32)
    out, labels = sample_task_batch(wins, (Negate(),), rng, p=1.0)
    np.testing.assert_array_equal(labels, 1.0)
    np.testing.assert_array_equal(out, -wins)


def test_task_batch_label_shape(rng):
    wins = rng.uniform(-0.5, 0.5, size=(7, 3, 32)).astype(np.float32)
    kinds = default_multitask_kinds()
    _, labels = sample_task_batch(wins, kinds, rng)
    assert labels.shape == (7, len(kinds))
    assert set(np.unique(labels)).issubset({0.0, 1.0})


def test_task_batch_rates_near_half():
    rng = np.random.default_rng(123)
    wins = rng.uniform(-0.5, 0.5, size=(200, 3, 16)).astype(np.float32)
    _, labels = sample_task_batch(wins, (Negate(), TimeFlip()), rng, p=0.5)
    rate = labels.mean(axis=0)
    assert np.all(np.abs(rate - 0.5) < 0.12)


def test_task_batch_labels_reflect_application(rng):
    # with deterministic involutions the label tells exactly what happened
    wins = rng.uniform(-0.4, 0.4, size=(50, 3, 16)).astype(np.float32)
    out, labels = sample_task_batch(wins, (Negate(),), rng, p=0.5)
    for i in range(50):
        expect = -wins[i] if labels[i, 0] else wins[i]
        np.testing.assert_array_equal(out[i], expect)
