import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from obdistill.envs import make_env, rollout
from obdistill.features import (AllFeaturesIdle, ArityTooSmall, EmptyProbe, FeatureMask,
                                detect_idle_features, expand_oblique, expand_oblique_batch,
                                feature_count, oblique_pairs)
from obdistill.oracle import builtin_oracle

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_expand_oblique_example():
    assert expand_oblique([1.0, 4.0, 2.5]).tolist() == [3.0, 1.5, -1.5]


def test_constant_vector_gives_zeros():
    assert np.array_equal(expand_oblique([7.0] * 4), np.zeros(6))


def test_pair_order_is_lower_triangle_row_major():
    assert oblique_pairs(3) == [(1, 0), (2, 0), (2, 1)]
    assert len(oblique_pairs(6)) == 15


@pytest.mark.parametrize("m, total", [(2, 3), (6, 21), (8, 36), (28, 406)])
def test_feature_count(m, total):
    assert feature_count(m) == total


def test_single_feature_has_no_pairs():
    with pytest.raises(ArityTooSmall):
        expand_oblique([1.0])


@given(arrays(np.float64, st.integers(2, 12), elements=finite))
def test_expand_matches_pairwise_definition(s):
    out = expand_oblique(s)
    assert out.shape == (len(s) * (len(s) - 1) // 2,)
    for k, (i, j) in enumerate(oblique_pairs(len(s))):
        assert out[k] == s[i] - s[j]


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 6)), elements=finite))
def test_batch_agrees_with_single(X):
    B = expand_oblique_batch(X)
    for row, expanded in zip(X, B):
        assert np.array_equal(expanded, expand_oblique(row))


def test_toypong_probe_drops_paddle_columns():
    env = make_env("toypong")
    states, _ = rollout(builtin_oracle("tracker"), env, 1000, seed=3)
    mask = detect_idle_features(states, 1e-9, env.feature_names)
    dropped = {env.feature_names[i] for i in mask.dropped}
    assert dropped == {"player.x", "enemy.x"}
    assert mask.m == 6
    report = mask.report()
    assert report["candidate_features"] == {"before": 36, "after": 21}


def test_all_varying_gives_identity_mask():
    X = np.random.default_rng(0).normal(size=(50, 4))
    mask = detect_idle_features(X)
    assert mask.keep == (0, 1, 2, 3)
    assert mask == FeatureMask.identity(mask.original_names)


def test_all_idle_warns_and_keeps_everything():
    with pytest.warns(AllFeaturesIdle):
        mask = detect_idle_features(np.ones((10, 3)))
    assert mask.m == 3


def test_empty_probe_rejected():
    with pytest.raises(EmptyProbe):
        detect_idle_features(np.zeros((0, 3)))


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 6)),
              elements=st.sampled_from([0.0, 1.0, -2.5, 3.25])))
def test_mask_keeps_exactly_varying_columns(X):
    kept = [i for i in range(X.shape[1]) if X[:, i].max() - X[:, i].min() > 1e-9]
    if not kept:
        return
    mask = detect_idle_features(X)
    assert list(mask.keep) == kept
    assert mask.apply(X).shape == (X.shape[0], len(kept))


def test_mask_json_roundtrip():
    X = np.array([[0.0, 1.0, 2.0], [1.0, 1.0, 3.0]])
    mask = detect_idle_features(X, feature_names=["a", "b", "c"])
    assert FeatureMask.from_json(mask.to_json()) == mask
    assert mask.names == ("a", "c")
