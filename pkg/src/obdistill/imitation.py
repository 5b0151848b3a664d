"""Dagger / Q-Dagger aggregation producing N trees, then best-tree selection."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .cart import ObliqueTree, fit_dataset
from .core import ActionSpec, AggregatedDataset, DistillConfig, ObdistillError
from .envs import Environment, derive_seed, evaluate_return, rollout
from .features import FeatureMask, detect_idle_features
from .oracle import Oracle, QUnavailable, q_from_log_policy

log = logging.getLogger(__name__)

DAGGER = "dagger"
QDAGGER = "qdagger"


class SpecMismatch(ObdistillError, ValueError):
    pass


class DistillAborted(ObdistillError, RuntimeError):
    def __init__(self, message, partial: "ImitationRun"):
        super().__init__(message)
        self.partial = partial


class TreePolicy:
    """A fitted tree acting on full environment states through a feature mask."""

    def __init__(self, tree: ObliqueTree, mask: FeatureMask, action_spec: ActionSpec):
        self.tree = tree
        self.mask = mask
        self.action_spec = action_spec
        keep = mask.keep
        # route on full-state indices directly; no per-call masking
        self._fi = [keep[i] if i >= 0 else -1 for i in tree.feat_i]
        self._fj = [keep[j] if j >= 0 else -1 for j in tree.feat_j]

    def act(self, s):
        t = self.tree
        left, right, thr, fi, fj = t.left, t.right, t.threshold, self._fi, self._fj
        k = 0
        while left[k] >= 0:
            j = fj[k]
            v = s[fi[k]] if j < 0 else s[fi[k]] - s[j]
            k = left[k] if v <= thr[k] else right[k]
        return t.leaf_action(k)

    def act_batch(self, S):
        return list(self.tree.predict_batch(self.mask.apply(S)))

    def to_json(self) -> dict:
        return {"format": "obdistill-tree/1",
                "feature_names": list(self.mask.names),
                "mask": self.mask.to_json(),
                "action_spec": self.action_spec.to_json(),
                "tree": self.tree.to_json()}

    @classmethod
    def from_json(cls, d: dict) -> "TreePolicy":
        if d.get("format") != "obdistill-tree/1":
            raise ValueError("not an obdistill tree file")
        return cls(ObliqueTree.from_json(d["tree"]), FeatureMask.from_json(d["mask"]),
                   ActionSpec.from_json(d["action_spec"]))


def compute_sample_weights(states, oracle: Oracle | None, subroutine: str,
                           formula: str = "mean-min") -> np.ndarray:
    """Per-state weights: all ones for Dagger, Q-spread for Q-Dagger.

    Q-Dagger uses ``mean_a Q(s, a) - min_a Q(s, a)`` (``formula="mean-min"``)
    or ``max_a Q - min_a Q`` (``"max-min"``).
    """
    states = np.asarray(states, dtype=np.float64)
    n = states.shape[0]
    if subroutine == DAGGER:
        return np.ones(n)
    if subroutine != QDAGGER:
        raise ValueError(f"unknown subroutine {subroutine!r}")
    if oracle is None or not oracle.has_q:
        raise QUnavailable("Q-Dagger needs an oracle with Q-values")
    q = np.asarray(oracle.q_values_batch(states), dtype=np.float64).reshape(n, -1)
    return q_spread(q, formula)


def q_spread(q: np.ndarray, formula: str = "mean-min") -> np.ndarray:
    # subtract the minimum first so constant rows give exactly zero
    gap = q - q.min(axis=-1, keepdims=True)
    if formula == "mean-min":
        return gap.mean(axis=-1)
    if formula == "max-min":
        return gap.max(axis=-1)
    raise ValueError(f"unknown weight formula {formula!r}")


def select_subroutine(oracle: Oracle, action_spec: ActionSpec, config: DistillConfig):
    """Return ``(subroutine, oracle_providing_q)``.

    ``auto`` picks Q-Dagger when the oracle has Q-values and actions are
    discrete. Forcing Q-Dagger on a stochastic discrete oracle uses its
    log-policy as the Q-function.
    """
    if config.subroutine == DAGGER:
        return DAGGER, None
    if config.subroutine == "auto":
        if oracle.has_q and action_spec.is_discrete:
            return QDAGGER, oracle
        return DAGGER, None
    if not action_spec.is_discrete:
        raise QUnavailable("Q-Dagger needs a discrete action space")
    if oracle.has_q:
        return QDAGGER, oracle
    if getattr(oracle, "is_stochastic", False):
        return QDAGGER, q_from_log_policy(oracle)
    raise QUnavailable("Q-Dagger forced but the oracle has neither Q-values nor a log-policy")


@dataclass
class IterationRecord:
    iteration: int
    rollout_policy: str
    dataset_size: int
    fit_seconds: float
    leaves: int
    eval_mean: float | None = None
    eval_std: float | None = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ImitationRun:
    config: DistillConfig
    mask: FeatureMask
    action_spec: ActionSpec
    subroutine: str
    trees: list[ObliqueTree] = field(default_factory=list)
    records: list[IterationRecord] = field(default_factory=list)
    eval_scores: list[float] = field(default_factory=list)
    best_index: int | None = None
    oracle_mean: float | None = None
    oracle_std: float | None = None
    dataset: AggregatedDataset | None = None

    @property
    def dataset_final_size(self) -> int:
        return 0 if self.dataset is None else len(self.dataset)

    @property
    def best_tree(self) -> ObliqueTree:
        return self.trees[self.best_index]

    def policy(self, index: int | None = None) -> TreePolicy:
        k = self.best_index if index is None else index
        return TreePolicy(self.trees[k], self.mask, self.action_spec)

    @property
    def normalized_score(self) -> float | None:
        if self.best_index is None or not self.oracle_mean:
            return None
        return self.eval_scores[self.best_index] / self.oracle_mean

    def report(self) -> dict:
        return {
            "config": self.config.to_json(),
            "subroutine": self.subroutine,
            "mask": self.mask.report(),
            "iterations": [r.to_json() for r in self.records],
            "best_index": self.best_index,
            "oracle_eval_mean": self.oracle_mean,
            "oracle_eval_std": self.oracle_std,
            "best_eval_mean": None if self.best_index is None else self.eval_scores[self.best_index],
            "oracle_normalized_score": self.normalized_score,
            "dataset_final_size": self.dataset_final_size,
        }


def best_index(scores) -> int:
    """Index of the maximum score; ties go to the latest iteration."""
    scores = list(scores)
    top = max(scores)
    return max(k for k, s in enumerate(scores) if s == top)


def distill(oracle: Oracle, env: Environment, config: DistillConfig, progress=None) -> ImitationRun:
    """Imitate ``oracle`` on ``env`` and keep the best of ``config.iters`` trees.

    Iteration 1 rolls out the oracle, iteration ``i > 1`` the previous tree.
    States are always relabelled by the oracle and aggregated; each iteration
    refits a tree on everything collected so far.
    """
    spec = env.action_spec
    if oracle.action_spec != spec:
        raise SpecMismatch("oracle and environment action spaces differ")
    subroutine, q_oracle = select_subroutine(oracle, spec, config)
    seed = config.seed

    probe, _ = rollout(oracle, env, config.transitions, derive_seed(seed, "probe"))
    mask = detect_idle_features(probe, config.epsilon, env.feature_names)
    log.info("mask keeps %d of %d features", mask.m, mask.original_p)

    dataset = AggregatedDataset(env.p, spec, mask.keep)
    run = ImitationRun(config, mask, spec, subroutine, dataset=dataset)
    try:
        for i in range(1, config.iters + 1):
            if i == 1:
                policy, source = oracle, "oracle"
            else:
                policy, source = run.policy(len(run.trees) - 1), f"tree:{i - 1}"
            states, _ = rollout(policy, env, config.transitions,
                                derive_seed(seed, "rollout", i))
            labels = oracle.act_batch(states)
            weights = compute_sample_weights(states, q_oracle, subroutine, config.weight_formula)
            dataset.append(states, labels, weights)
            start = time.perf_counter()
            tree = fit_dataset(dataset, config.leaves, oblique=config.oblique)
            elapsed = time.perf_counter() - start
            run.trees.append(tree)
            run.records.append(IterationRecord(i, source, len(dataset), elapsed, tree.n_leaves))
            log.info("iteration %d: %d samples, %d leaves, %.2fs", i, len(dataset),
                     tree.n_leaves, elapsed)
            if progress is not None:
                progress(i, run)

        eval_seed = derive_seed(seed, "best-tree-eval")
        for k in range(len(run.trees)):
            mean, std, _ = evaluate_return(run.policy(k), env, config.eval_episodes,
                                           eval_seed, config.jobs)
            run.eval_scores.append(mean)
            run.records[k].eval_mean = mean
            run.records[k].eval_std = std
        run.best_index = best_index(run.eval_scores)
        run.oracle_mean, run.oracle_std, _ = evaluate_return(
            oracle, env, config.eval_episodes, eval_seed, config.jobs)
    except Exception as exc:
        raise DistillAborted(f"distillation aborted: {exc}", run) from exc
    return run


def action_agreement(policy_a, policy_b, env: Environment, episodes: int, seed: int,
                     atol: float = 1e-6) -> float:
    """Fraction of states visited by ``policy_a`` where both policies agree."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    spec_a = getattr(policy_a, "action_spec", env.action_spec)
    spec_b = getattr(policy_b, "action_spec", env.action_spec)
    if spec_a != spec_b:
        raise SpecMismatch("policies act in different action spaces")
    same = total = 0
    for k in range(episodes):
        s = env.reset(derive_seed(seed, "eval", k))
        done = False
        while not done:
            a = policy_a.act(s)
            b = policy_b.act(s)
            if env.action_spec.is_discrete:
                same += int(a) == int(b)
            else:
                same += float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) <= atol
            total += 1
            s, _, done = env.step(a)
    return same / total
