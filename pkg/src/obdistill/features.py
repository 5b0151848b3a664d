"""Idle-feature masking and two-feature difference expansion."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ObdistillError, StateVector


class EmptyProbe(ObdistillError, ValueError):
    pass


class ArityTooSmall(ObdistillError, ValueError):
    pass


class AllFeaturesIdle(UserWarning):
    pass


@dataclass(frozen=True)
class FeatureMask:
    keep: tuple[int, ...]
    original_p: int
    original_names: tuple[str, ...]
    ranges: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        keep = tuple(int(i) for i in self.keep)
        if not keep:
            raise ValueError("mask must keep at least one feature")
        if any(b <= a for a, b in zip(keep, keep[1:])):
            raise ValueError("mask indices must be strictly increasing")
        if keep[-1] >= self.original_p or keep[0] < 0:
            raise ValueError("mask index out of range")
        if len(self.original_names) != self.original_p:
            raise ValueError("need one name per original feature")
        object.__setattr__(self, "keep", keep)

    @classmethod
    def identity(cls, names: Sequence[str]) -> "FeatureMask":
        return cls(tuple(range(len(names))), len(names), tuple(names))

    @property
    def m(self) -> int:
        return len(self.keep)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.original_names[i] for i in self.keep)

    @property
    def name_map(self) -> dict[int, str]:
        return {i: self.original_names[i] for i in self.keep}

    @property
    def dropped(self) -> tuple[int, ...]:
        kept = set(self.keep)
        return tuple(i for i in range(self.original_p) if i not in kept)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[..., list(self.keep)]

    def report(self) -> dict:
        return {
            "original_p": self.original_p,
            "kept": [self.original_names[i] for i in self.keep],
            "dropped": [self.original_names[i] for i in self.dropped],
            "kept_indices": list(self.keep),
            "ranges": {n: r for n, r in zip(self.original_names, self.ranges)},
            "candidate_features": {
                "before": feature_count(self.original_p),
                "after": feature_count(self.m),
            },
        }

    def to_json(self) -> dict:
        return {"keep": list(self.keep), "original_p": self.original_p,
                "original_names": list(self.original_names),
                "ranges": list(self.ranges)}

    @classmethod
    def from_json(cls, d: dict) -> "FeatureMask":
        return cls(tuple(d["keep"]), d["original_p"], tuple(d["original_names"]),
                   tuple(d.get("ranges", ())))


def detect_idle_features(probe_states, epsilon: float = 1e-9,
                         feature_names: Sequence[str] | None = None) -> FeatureMask:
    """Keep the features whose range over ``probe_states`` exceeds ``epsilon``.

    ``probe_states`` is a list of :class:`StateVector` or an ``(n, p)`` array.
    If every feature is idle all of them are kept and a warning is emitted.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if len(probe_states) < 2:
        raise EmptyProbe("need at least 2 probe states to detect idle features")
    if isinstance(probe_states[0], StateVector):
        names = probe_states[0].feature_names
        S = np.stack([s.values for s in probe_states])
    else:
        S = np.asarray(probe_states, dtype=np.float64)
        names = tuple(feature_names) if feature_names is not None else tuple(
            f"x{i}" for i in range(S.shape[1]))
    ranges = S.max(axis=0) - S.min(axis=0)
    keep = tuple(int(i) for i in np.flatnonzero(ranges > epsilon))
    if not keep:
        warnings.warn("every feature is idle on the probe batch; keeping all",
                      AllFeaturesIdle, stacklevel=2)
        keep = tuple(range(S.shape[1]))
    return FeatureMask(keep, S.shape[1], tuple(names), tuple(float(r) for r in ranges))


def oblique_pairs(m: int) -> list[tuple[int, int]]:
    """Row-major lower triangle: (1,0), (2,0), (2,1), (3,0), ..."""
    return [(i, j) for i in range(1, m) for j in range(i)]


def expand_oblique(s) -> np.ndarray:
    """Pairwise differences ``s[i] - s[j]`` for ``i > j`` in row-major order."""
    values = s.values if isinstance(s, StateVector) else np.asarray(s, dtype=np.float64)
    m = values.shape[-1]
    if m < 2:
        raise ArityTooSmall("oblique expansion needs at least 2 features")
    rows, cols = np.tril_indices(m, k=-1)
    return values[..., rows] - values[..., cols]


def expand_oblique_batch(X: np.ndarray) -> np.ndarray:
    return expand_oblique(np.asarray(X, dtype=np.float64))


def feature_count(m: int) -> int:
    if m < 1:
        raise ValueError("m must be >= 1")
    return m + m * (m - 1) // 2
