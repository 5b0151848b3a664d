"""Brute-force split search, kept deliberately naive.

It shares nothing with the fast learner except the threshold definition, so
it can serve as an independent oracle in tests: every candidate split is
materialized and both children's impurities are recomputed from scratch.
"""
from __future__ import annotations

from collections import defaultdict

from ..core import EmptyDataset, FeatureRef, candidate_features
from .tree import TIE_TOL, NoUsefulSplit, SplitCandidate, midpoint


def _gini(labels, weights):
    total = sum(weights)
    if total <= 0:
        return 0.0, 0.0
    mass = defaultdict(float)
    for a, w in zip(labels, weights):
        mass[a] += w
    return total, 1.0 - sum((v / total) ** 2 for v in mass.values())


def _variance(targets, weights):
    total = sum(weights)
    if total <= 0:
        return 0.0, 0.0
    dims = len(targets[0])
    out = 0.0
    for d in range(dims):
        mean = sum(w * t[d] for t, w in zip(targets, weights)) / total
        out += sum(w * (t[d] - mean) ** 2 for t, w in zip(targets, weights)) / total
    return total, out


def all_splits(X, y, w, mode="classify", refs=None, total_weight=None):
    """Every valid (feature, threshold, decrease, w_left, w_right), unsorted."""
    rows = [list(map(float, r)) for r in X]
    if not rows:
        raise EmptyDataset("need at least one sample")
    if mode == "classify":
        ys = [int(a) for a in y]
        impurity = _gini
    else:
        ys = [[float(v) for v in (t if hasattr(t, "__len__") else [t])] for t in y]
        impurity = _variance
    ws = [float(v) for v in w]
    if refs is None:
        refs = candidate_features(len(rows[0]))
    W, node_imp = impurity(ys, ws)
    total = W if total_weight is None else total_weight
    out = []
    for ref in refs:
        vals = [ref.value(r) for r in rows]
        distinct = sorted(set(vals))
        for a, b in zip(distinct, distinct[1:]):
            thr = midpoint(a, b)
            li = [k for k, v in enumerate(vals) if v <= thr]
            ri = [k for k, v in enumerate(vals) if v > thr]
            wl, gl = impurity([ys[k] for k in li], [ws[k] for k in li])
            wr, gr = impurity([ys[k] for k in ri], [ws[k] for k in ri])
            if wl <= 0 or wr <= 0:
                continue
            dec = (W * node_imp - wl * gl - wr * gr) / total
            out.append((ref, thr, dec, wl, wr))
    return out


def best_split_exhaustive(X, y, w, mode="classify", refs=None,
                          total_weight=None) -> SplitCandidate:
    """Globally best single split under the documented tie-break.

    Candidates whose decrease is within ``TIE_TOL`` of the best are ties;
    among them the smallest ``FeatureRef.sort_key()`` wins, then the lowest
    threshold. Raises :class:`NoUsefulSplit` if no split decreases impurity.
    """
    splits = all_splits(X, y, w, mode, refs, total_weight)
    if not splits:
        raise NoUsefulSplit("no valid split")
    gmax = max(s[2] for s in splits)
    if not gmax > TIE_TOL:
        raise NoUsefulSplit("no split decreases impurity")
    tied = [s for s in splits if s[2] >= gmax - TIE_TOL]
    ref, thr, dec, wl, wr = min(tied, key=lambda s: (FeatureRef.sort_key(s[0]), s[1]))
    return SplitCandidate(ref, thr, dec, wl, wr)
