"""Shared domain types and errors.

Everything in here is a plain value type with construction-time validation.
Hot paths (environments, policies, the tree learner) pass raw ``numpy``
arrays around; :class:`StateVector` is the validated form used at API
boundaries.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ObdistillError(Exception):
    """Base class for every error raised by this package."""


class ArityMismatch(ObdistillError, ValueError):
    pass


class NonFiniteValue(ObdistillError, ValueError):
    pass


class ConfigError(ObdistillError, ValueError):
    pass


class EmptyDataset(ObdistillError, ValueError):
    pass


class DegenerateWeights(UserWarning):
    """All sample weights were zero; uniform weights were used instead."""


# --------------------------------------------------------------------------
# States and actions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StateVector:
    values: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ArityMismatch("state must be a non-empty 1-d vector")
        names = tuple(self.feature_names)
        if len(names) != values.size:
            raise ArityMismatch(
                f"{values.size} values but {len(names)} feature names")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("state contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", names)

    @property
    def p(self) -> int:
        return self.values.size

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.feature_names.index(name)])


def validate_state(s, spec_p: int) -> None:
    """Raise unless ``s`` has ``spec_p`` finite entries.

    ``s`` may be a :class:`StateVector` or anything array-like.
    """
    values = s.values if isinstance(s, StateVector) else np.asarray(s, dtype=np.float64)
    if values.ndim != 1 or values.size != spec_p:
        raise ArityMismatch(f"expected {spec_p} features, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue("state contains non-finite values")


@dataclass(frozen=True)
class ActionSpec:
    kind: str  # "discrete" | "continuous"
    names: tuple[str, ...] = ()
    low: tuple[float, ...] = ()
    high: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "discrete":
            if len(self.names) < 2:
                raise ConfigError("discrete action spaces need n >= 2 actions")
            if len(set(self.names)) != len(self.names):
                raise ConfigError("action names must be unique")
        elif self.kind == "continuous":
            if len(self.low) < 1 or len(self.low) != len(self.high):
                raise ConfigError("continuous actions need matching bounds, dim >= 1")
            if any(not lo < hi for lo, hi in zip(self.low, self.high)):
                raise ConfigError("continuous bounds need lo < hi per dimension")
        else:
            raise ConfigError(f"unknown action kind {self.kind!r}")

    @classmethod
    def discrete(cls, names: Sequence[str]) -> "ActionSpec":
        return cls("discrete", names=tuple(names))

    @classmethod
    def continuous(cls, low: Sequence[float], high: Sequence[float]) -> "ActionSpec":
        return cls("continuous", low=tuple(float(x) for x in low),
                   high=tuple(float(x) for x in high))

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def dim(self) -> int:
        return 1 if self.is_discrete else len(self.low)

    def to_json(self) -> dict:
        if self.is_discrete:
            return {"kind": "discrete", "names": list(self.names)}
        return {"kind": "continuous", "low": list(self.low), "high": list(self.high)}

    @classmethod
    def from_json(cls, d: dict) -> "ActionSpec":
        if d["kind"] == "discrete":
            return cls.discrete(d["names"])
        return cls.continuous(d["low"], d["high"])

    def validate_action(self, a) -> None:
        if self.is_discrete:
            if isinstance(a, (bool, np.bool_)) or not isinstance(a, (int, np.integer)):
                raise ValueError(f"discrete action must be an integer index, got {a!r}")
            if not 0 <= a < self.n:
                raise ValueError(f"action index {a} out of range [0, {self.n})")
        else:
            arr = np.asarray(a, dtype=np.float64).reshape(-1)
            if arr.size != self.dim or not np.all(np.isfinite(arr)):
                raise ValueError(f"continuous action must be {self.dim} finite values")


@dataclass(frozen=True)
class Transition:
    state: StateVector
    oracle_action: object
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise ValueError("weight must be finite and >= 0")
        if isinstance(self.oracle_action, (int, np.integer)):
            if self.oracle_action < 0:
                raise ValueError("discrete action index must be >= 0")
        else:
            arr = np.asarray(self.oracle_action, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError("continuous action must be finite")


# --------------------------------------------------------------------------
# Split features
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureRef:
    """A raw feature ``s[i]`` or an oblique pair ``s[i] - s[j]`` with ``i > j``."""

    i: int
    j: int | None = None

    def __post_init__(self):
        if self.i < 0 or (self.j is not None and self.j < 0):
            raise ValueError("feature indices must be >= 0")
        if self.j is not None and not self.i > self.j:
            raise ValueError("oblique refs are stored canonically with i > j; "
                             "use FeatureRef.oblique()")

    @classmethod
    def raw(cls, i: int) -> "FeatureRef":
        return cls(int(i))

    @classmethod
    def oblique(cls, i: int, j: int) -> "FeatureRef":
        i, j = int(i), int(j)
        if i == j:
            raise ValueError("oblique pair needs two distinct features")
        return cls(max(i, j), min(i, j))

    @property
    def is_oblique(self) -> bool:
        return self.j is not None

    def sort_key(self) -> tuple[int, int, int]:
        # raw refs sort before oblique ones, then by indices
        return (0, self.i, -1) if self.j is None else (1, self.i, self.j)

    def value(self, x) -> float:
        if self.j is None:
            return x[self.i]
        return x[self.i] - x[self.j]

    def column(self, X: np.ndarray) -> np.ndarray:
        if self.j is None:
            return X[:, self.i]
        return X[:, self.i] - X[:, self.j]

    def render(self, names: Sequence[str]) -> str:
        if self.j is None:
            return names[self.i]
        return f"{names[self.i]} - {names[self.j]}"

    def to_json(self) -> dict:
        return {"raw": self.i} if self.j is None else {"oblique": [self.i, self.j]}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureRef":
        if "raw" in d:
            return cls.raw(d["raw"])
        i, j = d["oblique"]
        return cls.oblique(i, j)


def candidate_features(m: int, oblique: bool = True) -> list[FeatureRef]:
    """Raw features then lower-triangle pairs, in canonical (tie-break) order."""
    refs = [FeatureRef.raw(i) for i in range(m)]
    if oblique:
        refs += [FeatureRef(i, j) for i in range(1, m) for j in range(i)]
    return refs


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

SUBROUTINES = ("auto", "dagger", "qdagger")
WEIGHT_FORMULAS = ("mean-min", "max-min")


@dataclass(frozen=True)
class DistillConfig:
    leaves: int = 8
    iters: int = 10
    transitions: int = 10_000
    seed: int = 0
    subroutine: str = "auto"
    eval_episodes: int = 10
    oblique: bool = True
    weight_formula: str = "mean-min"
    epsilon: float = 1e-9
    jobs: int = 1

    def __post_init__(self):
        if self.leaves < 2:
            raise ConfigError("leaves (K) must be >= 2")
        if self.iters < 1:
            raise ConfigError("iters (N) must be >= 1")
        if self.transitions < 1:
            raise ConfigError("transitions (t) must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.subroutine not in SUBROUTINES:
            raise ConfigError(f"subroutine must be one of {SUBROUTINES}")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.weight_formula not in WEIGHT_FORMULAS:
            raise ConfigError(f"weight_formula must be one of {WEIGHT_FORMULAS}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# --------------------------------------------------------------------------
# Aggregated imitation dataset
# --------------------------------------------------------------------------

class AggregatedDataset:
    """Growing Dagger dataset: full states, oracle labels and sample weights.

    ``mask`` selects the columns the tree learner sees (``X``); the full
    states are kept so relabelling can always be checked against the oracle.
    Rows are only ever appended.
    """

    def __init__(self, p: int, action_spec: ActionSpec, keep: Sequence[int] | None = None):
        self.p = int(p)
        self.action_spec = action_spec
        self.keep = np.arange(self.p) if keep is None else np.asarray(keep, dtype=np.intp)
        if self.keep.size == 0 or np.any(self.keep >= self.p):
            raise ArityMismatch("mask indices out of range")
        self._states: list[np.ndarray] = []
        self._actions: list[np.ndarray] = []
        self._weights: list[np.ndarray] = []
        self._cache = None
        self._oblique = None

    def __len__(self) -> int:
        return sum(len(w) for w in self._weights)

    def append(self, states, actions, weights) -> None:
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != self.p:
            raise ArityMismatch(f"expected states of arity {self.p}")
        if not np.all(np.isfinite(states)):
            raise NonFiniteValue("states contain non-finite values")
        n = states.shape[0]
        if self.action_spec.is_discrete:
            actions = np.asarray(actions, dtype=np.int64).reshape(n)
            if np.any((actions < 0) | (actions >= self.action_spec.n)):
                raise ValueError("action index out of range")
        else:
            actions = np.asarray(actions, dtype=np.float64).reshape(n, self.action_spec.dim)
            if not np.all(np.isfinite(actions)):
                raise ValueError("continuous actions must be finite")
        weights = np.asarray(weights, dtype=np.float64).reshape(n)
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("weights must be finite and >= 0")
        self._states.append(states.copy())
        self._actions.append(actions.copy())
        self._weights.append(weights.copy())
        self._cache = None
        self._oblique = None

    def _arrays(self):
        if self._cache is None:
            if not self._weights:
                raise EmptyDataset("dataset is empty")
            self._cache = (np.concatenate(self._states),
                           np.concatenate(self._actions),
                           np.concatenate(self._weights))
        return self._cache

    @property
    def states(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def X(self) -> np.ndarray:
        """Masked states, the columns the tree learner splits on."""
        return self.states[:, self.keep]

    @property
    def actions(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def weights(self) -> np.ndarray:
        return self._arrays()[2]

    @property
    def oblique_values(self) -> np.ndarray:
        # materialized on request only; the learner builds columns lazily
        if self._oblique is None:
            from .features import expand_oblique_batch
            self._oblique = expand_oblique_batch(self.X)
        return self._oblique

    def transitions(self, feature_names: Sequence[str]) -> list[Transition]:
        out = []
        for s, a, w in zip(self.states, self.actions, self.weights):
            action = int(a) if self.action_spec.is_discrete else a.copy()
            out.append(Transition(StateVector(s, tuple(feature_names)), action, float(w)))
        return out

    def to_json(self) -> str:
        rows = []
        for s, a, w in zip(self.states, self.actions, self.weights):
            action = int(a) if self.action_spec.is_discrete else [float(v) for v in a]
            rows.append({"state": [float(v) for v in s], "action": action, "weight": float(w)})
        return json.dumps(rows)

    @classmethod
    def from_json(cls, text: str, action_spec: ActionSpec,
                  keep: Sequence[int] | None = None) -> "AggregatedDataset":
        rows = json.loads(text)
        if not rows:
            raise EmptyDataset("no transitions")
        ds = cls(len(rows[0]["state"]), action_spec, keep)
        ds.append([r["state"] for r in rows], [r["action"] for r in rows],
                  [r["weight"] for r in rows])
        return ds


def uniform_if_degenerate(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() > 0:
        return w
    warnings.warn("all sample weights are zero; falling back to uniform weights",
                  DegenerateWeights, stacklevel=3)
    return np.ones_like(w)
