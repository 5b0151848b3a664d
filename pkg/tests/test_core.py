import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from obdistill.core import (ActionSpec, AggregatedDataset, ArityMismatch, ConfigError,
                            DegenerateWeights, DistillConfig, FeatureRef, NonFiniteValue,
                            StateVector, Transition, candidate_features, uniform_if_degenerate,
                            validate_state)

NAMES4 = ("a", "b", "c", "d")


def test_validate_state_accepts_finite_vector():
    validate_state(StateVector((1.0, 2.0, 3.0, 4.0), NAMES4), 4)


def test_validate_state_arity():
    with pytest.raises(ArityMismatch):
        validate_state(StateVector((1.0, 2.0, 3.0, 4.0), NAMES4), 3)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_state_rejected(bad):
    with pytest.raises(NonFiniteValue):
        validate_state(np.array([0.0, bad]), 2)


def test_state_vector_name_arity():
    with pytest.raises(ArityMismatch):
        StateVector((1.0, 2.0), ("a",))


def test_state_vector_lookup_by_name():
    s = StateVector((0.5, 0.25), ("ball.x", "ball.y"))
    assert s["ball.y"] == 0.25
    assert s.p == 2


def test_action_spec_roundtrip():
    for spec in (ActionSpec.discrete(["NOOP", "UP", "DOWN"]),
                 ActionSpec.continuous([-1.0, -2.0], [1.0, 2.0])):
        assert ActionSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


def test_action_spec_validation():
    spec = ActionSpec.discrete(["A", "B"])
    spec.validate_action(1)
    with pytest.raises(ValueError):
        spec.validate_action(2)
    cont = ActionSpec.continuous([-1.0], [1.0])
    cont.validate_action(np.array([0.5]))
    with pytest.raises(ValueError):
        cont.validate_action(np.array([0.5, 0.5]))


def test_transition_rejects_negative_weight():
    with pytest.raises(ValueError):
        Transition(StateVector((0.0,), ("x",)), 0, -1.0)


def test_feature_ref_canonical_order():
    assert FeatureRef.oblique(0, 2) == FeatureRef.oblique(2, 0)
    ref = FeatureRef.oblique(2, 0)
    assert ref.value(np.array([1.0, 4.0, 2.5])) == 1.5
    assert ref.render(["a", "b", "c"]) == "c - a"
    assert FeatureRef.raw(1).render(["a", "b"]) == "b"
    with pytest.raises(ValueError):
        FeatureRef.oblique(1, 1)


def test_feature_ref_sort_key_puts_raw_first():
    refs = candidate_features(3)
    assert [r.sort_key() for r in refs] == sorted(r.sort_key() for r in refs)
    assert refs[:3] == [FeatureRef.raw(i) for i in range(3)]
    assert [(r.i, r.j) for r in refs[3:]] == [(1, 0), (2, 0), (2, 1)]


@given(st.integers(1, 30))
def test_candidate_feature_count(m):
    assert len(candidate_features(m)) == m + m * (m - 1) // 2
    assert len(candidate_features(m, oblique=False)) == m


def test_config_defaults():
    cfg = DistillConfig()
    assert (cfg.iters, cfg.transitions) == (10, 10_000)


@pytest.mark.parametrize("kwargs", [{"leaves": 1}, {"iters": 0}, {"transitions": 0},
                                    {"subroutine": "bogus"}, {"weight_formula": "x"}])
def test_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        DistillConfig(**kwargs)


def test_dataset_aggregates_and_masks():
    spec = ActionSpec.discrete(["A", "B"])
    ds = AggregatedDataset(3, spec, keep=[0, 2])
    ds.append(np.arange(6.0).reshape(2, 3), [0, 1], [1.0, 2.0])
    ds.append(np.ones((1, 3)), [1], [0.5])
    assert len(ds) == 3
    assert ds.X.shape == (3, 2)
    assert np.array_equal(ds.X[0], [0.0, 2.0])
    assert np.array_equal(ds.weights, [1.0, 2.0, 0.5])
    again = AggregatedDataset.from_json(ds.to_json(), spec, keep=[0, 2])
    assert np.array_equal(again.states, ds.states)
    assert np.array_equal(again.actions, ds.actions)


def test_dataset_rejects_mismatched_batch():
    ds = AggregatedDataset(2, ActionSpec.discrete(["A", "B"]))
    with pytest.raises(ValueError):
        ds.append(np.zeros((2, 2)), [0], [1.0, 1.0])


def test_degenerate_weights_become_uniform():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        w = uniform_if_degenerate(np.zeros(4))
    assert np.array_equal(w, np.ones(4))
    assert any(issubclass(c.category, DegenerateWeights) for c in caught)
