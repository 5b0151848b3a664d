import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from obdistill.core import ActionSpec, DistillConfig
from obdistill.envs import make_env, rollout
from obdistill.imitation import (DAGGER, QDAGGER, DistillAborted, SpecMismatch, TreePolicy,
                                 action_agreement, best_index, compute_sample_weights, distill,
                                 q_spread, select_subroutine)
from obdistill.oracle import LogPolicyQ, QUnavailable, builtin_oracle


class FixedQ:
    has_q = True

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=float)

    def q_values_batch(self, S):
        return self.rows


def test_constant_q_row_weight_zero():
    assert compute_sample_weights(np.zeros((1, 2)), FixedQ([[1.0, 1.0, 1.0]]), QDAGGER)[0] == 0.0


def test_q_row_weight_by_hand():
    assert compute_sample_weights(np.zeros((1, 2)), FixedQ([[2.0, 0.0, 4.0]]), QDAGGER)[0] == 2.0
    assert q_spread(np.array([[2.0, 0.0, 4.0]]), "max-min")[0] == 4.0


@settings(max_examples=50)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(2, 6)),
              elements=st.floats(-1e3, 1e3)))
def test_dagger_weights_exactly_one(S):
    w = compute_sample_weights(S, None, DAGGER)
    assert w.dtype == np.float64 and np.all(w == 1.0)


def test_q_dagger_needs_q():
    with pytest.raises(QUnavailable):
        compute_sample_weights(np.zeros((2, 8)), builtin_oracle("tracker"), QDAGGER)


def test_auto_picks_q_dagger_for_q_network():
    oracle = builtin_oracle("toypong-q")
    sub, q = select_subroutine(oracle, oracle.action_spec, DistillConfig())
    assert sub == QDAGGER and q is oracle


def test_auto_picks_dagger_for_continuous():
    oracle = builtin_oracle("integrator-pd")
    assert select_subroutine(oracle, oracle.action_spec, DistillConfig())[0] == DAGGER


def test_forced_q_dagger_wraps_logits():
    oracle = builtin_oracle("toypong-logits")
    sub, q = select_subroutine(oracle, oracle.action_spec, DistillConfig(subroutine="qdagger"))
    assert sub == QDAGGER and isinstance(q, LogPolicyQ)


def test_forced_q_dagger_without_q_fails():
    oracle = builtin_oracle("tracker")
    with pytest.raises(QUnavailable):
        select_subroutine(oracle, oracle.action_spec, DistillConfig(subroutine="qdagger"))


def test_forced_dagger_always_allowed():
    oracle = builtin_oracle("toypong-q")
    assert select_subroutine(oracle, oracle.action_spec, DistillConfig(subroutine="dagger"))[0] == DAGGER


@pytest.mark.parametrize("scores, idx", [([1, 3, 2], 1), ([3, 1, 3], 2), ([0.5], 0), ([2, 2, 2], 2)])
def test_best_index_ties_go_latest(scores, idx):
    assert best_index(scores) == idx


class Const:
    def __init__(self, a):
        self.a = a

    def act(self, s):
        return self.a


def test_agreement_identity_and_disjoint():
    env = make_env("toypong")
    tracker = builtin_oracle("tracker")
    assert action_agreement(tracker, tracker, env, 3, 0) == 1.0
    assert action_agreement(Const(0), Const(1), env, 3, 0) == 0.0


def test_single_iteration_run():
    run = distill(builtin_oracle("tracker"), make_env("toypong"),
                  DistillConfig(leaves=4, iters=1, transitions=2000, eval_episodes=3))
    assert len(run.trees) == len(run.eval_scores) == 1
    assert run.best_index == 0
    assert run.records[0].rollout_policy == "oracle"


def test_toypong_small_budget():
    env = make_env("toypong")
    run = distill(builtin_oracle("tracker"), env,
                  DistillConfig(leaves=4, iters=3, transitions=3000, eval_episodes=5))
    assert len(run.trees) == 3
    assert [r.rollout_policy for r in run.records] == ["oracle", "tree:1", "tree:2"]
    sizes = [r.dataset_size for r in run.records]
    assert sizes == [3000, 6000, 9000]
    assert run.normalized_score >= 0.95
    assert run.eval_scores[run.best_index] == max(run.eval_scores)
    assert set(run.mask.names) == set(env.feature_names) - {"player.x", "enemy.x"}
    report = json.loads(json.dumps(run.report()))
    assert report["best_index"] == run.best_index


def test_continuous_oracle_regresses():
    env = make_env("integrator")
    run = distill(builtin_oracle("integrator-pd"), env,
                  DistillConfig(leaves=16, iters=2, transitions=2000, eval_episodes=3))
    assert run.subroutine == DAGGER
    assert run.best_tree.mode == "regress"
    a = run.policy().act(np.array([0.5, 0.0]))
    assert a.shape == (1,) and -1.0 <= a[0] <= 1.0


def test_tree_policy_json_roundtrip():
    env = make_env("toypong")
    run = distill(builtin_oracle("tracker"), env,
                  DistillConfig(leaves=4, iters=1, transitions=2000, eval_episodes=2))
    pol = run.policy()
    again = TreePolicy.from_json(json.loads(json.dumps(pol.to_json())))
    states, _ = rollout(pol, env, 500, seed=5)
    assert again.act_batch(states) == [pol.act(s) for s in states]


def test_spec_mismatch():
    with pytest.raises(SpecMismatch):
        distill(builtin_oracle("crop"), make_env("toypong"), DistillConfig(iters=1, transitions=10))


class Flaky:
    """Tracker that breaks after a fixed number of calls."""

    def __init__(self, budget):
        self.inner = builtin_oracle("tracker")
        self.action_spec = self.inner.action_spec
        self.budget = budget
        self.has_q = False

    def act(self, s):
        self.budget -= 1
        if self.budget < 0:
            raise RuntimeError("oracle crashed")
        return self.inner.act(s)

    def act_batch(self, S):
        return [self.act(s) for s in S]


def test_abort_keeps_partial_run():
    with pytest.raises(DistillAborted) as info:
        distill(Flaky(2000 + 1000 + 1000 + 10), make_env("toypong"),
                DistillConfig(leaves=4, iters=3, transitions=1000, eval_episodes=2))
    assert len(info.value.partial.trees) >= 1
