"""Best-first weighted CART over raw and two-feature difference columns."""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from ..core import (ArityMismatch, EmptyDataset, FeatureRef, ObdistillError,
                    candidate_features, uniform_if_degenerate)
from . import _backend

# decreases within this of the best are ties; a split must beat it to count
TIE_TOL = 1e-12


class SingleLeafTree(ObdistillError, ValueError):
    pass


class NoUsefulSplit(ObdistillError, ValueError):
    pass


@dataclass(frozen=True)
class SplitCandidate:
    feature: FeatureRef
    threshold: float
    impurity_decrease: float
    left_weight: float
    right_weight: float


def midpoint(a: float, b: float) -> float:
    """Threshold between consecutive distinct values ``a < b``.

    Guarantees ``a <= thr < b`` so ``a`` routes left and ``b`` right.
    """
    thr = a / 2.0 + b / 2.0
    if thr >= b or thr < a:
        thr = a
    return float(thr)


class ObliqueTree:
    """Array-backed binary tree. Node 0 is the root; ``left[k] == -1`` marks a leaf.

    Internal nodes route a state left iff ``value(feature)(s) <= threshold``.
    """

    def __init__(self, mode, n_outputs, feat_i, feat_j, threshold, left, right,
                 value, weight, impurity, n_samples, n_features=None):
        if mode not in ("classify", "regress"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.n_outputs = int(n_outputs)
        self.feat_i = list(feat_i)
        self.feat_j = list(feat_j)
        self.threshold = [float(t) for t in threshold]
        self.left = list(left)
        self.right = list(right)
        self.value = [np.asarray(v, dtype=np.float64) for v in value]
        self.weight = [float(x) for x in weight]
        self.impurity = [float(x) for x in impurity]
        self.n_samples = [int(x) for x in n_samples]
        self.n_features = None if n_features is None else int(n_features)
        if mode == "classify":
            self._leaf_action = [int(np.argmax(v)) for v in self.value]
        else:
            self._leaf_action = [v.copy() for v in self.value]
        self._check()

    def _check(self):
        n = len(self.left)
        if n == 0:
            raise ValueError("empty tree")
        seen = set()
        stack = [0]
        while stack:
            k = stack.pop()
            if k in seen:
                raise ValueError("tree nodes must form a tree")
            seen.add(k)
            if (self.left[k] < 0) != (self.right[k] < 0):
                raise ValueError("internal nodes need two children")
            if self.left[k] >= 0:
                stack += [self.left[k], self.right[k]]
        if len(seen) != n:
            raise ValueError("unreachable nodes in tree")

    # -- structure -----------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def n_leaves(self) -> int:
        return sum(1 for k in self.left if k < 0)

    @property
    def n_internal(self) -> int:
        return self.n_nodes - self.n_leaves

    def is_leaf(self, k: int) -> bool:
        return self.left[k] < 0

    def feature(self, k: int) -> FeatureRef:
        j = self.feat_j[k]
        return FeatureRef(self.feat_i[k], None if j < 0 else j)

    def leaf_action(self, k: int):
        return self._leaf_action[k]

    @property
    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            k, d = stack.pop()
            best = max(best, d)
            if self.left[k] >= 0:
                stack += [(self.left[k], d + 1), (self.right[k], d + 1)]
        return best

    def preorder(self) -> list[int]:
        out, stack = [], [0]
        while stack:
            k = stack.pop()
            out.append(k)
            if self.left[k] >= 0:
                stack += [self.right[k], self.left[k]]
        return out

    def internal_nodes(self) -> list[int]:
        return [k for k in self.preorder() if self.left[k] >= 0]

    def features_used(self) -> set[FeatureRef]:
        return {self.feature(k) for k in self.internal_nodes()}

    @property
    def n_features_in(self) -> int:
        used = [max(self.feat_i[k], self.feat_j[k]) for k in self.internal_nodes()]
        return max(used) + 1 if used else 0

    def training_impurity(self) -> float:
        """Weighted mean impurity over leaves, relative to root weight."""
        total = self.weight[0]
        return sum(self.weight[k] * self.impurity[k]
                   for k in range(self.n_nodes) if self.left[k] < 0) / total

    # -- inference -----------------------------------------------------------

    def leaf_index(self, x) -> int:
        left, right = self.left, self.right
        fi, fj, thr = self.feat_i, self.feat_j, self.threshold
        k = 0
        while left[k] >= 0:
            j = fj[k]
            v = x[fi[k]] if j < 0 else x[fi[k]] - x[j]
            k = left[k] if v <= thr[k] else right[k]
        return k

    def predict(self, x):
        if self.n_features is not None and len(x) != self.n_features:
            raise ArityMismatch(f"tree expects {self.n_features} features, got {len(x)}")
        return self._leaf_action[self.leaf_index(x)]

    def apply_batch(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        fi = np.asarray(self.feat_i)
        fj = np.asarray(self.feat_j)
        thr = np.asarray(self.threshold)
        node = np.zeros(n, dtype=np.intp)
        rows = np.arange(n)
        active = left[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            v = X[r, fi[nd]]
            obl = fj[nd] >= 0
            v[obl] = v[obl] - X[r[obl], fj[nd][obl]]
            node[r] = np.where(v <= thr[nd], left[nd], right[nd])
            active = left[node] >= 0
        return node

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        leaves = self.apply_batch(X)
        if self.mode == "classify":
            table = np.asarray(self._leaf_action, dtype=np.int64)
        else:
            table = np.stack(self._leaf_action)
        return table[leaves]

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        nodes = []
        for k in self.preorder():
            common = {"weight": self.weight[k], "impurity": self.impurity[k],
                      "samples": self.n_samples[k],
                      "value": [float(v) for v in self.value[k]]}
            if self.left[k] >= 0:
                nodes.append({"kind": "split", "feature": self.feature(k).to_json(),
                              "threshold": self.threshold[k], **common})
            else:
                action = (self._leaf_action[k] if self.mode == "classify"
                          else [float(a) for a in self._leaf_action[k]])
                nodes.append({"kind": "leaf", "action": action, **common})
        return {"mode": self.mode, "n_outputs": self.n_outputs,
                "n_features": self.n_features, "nodes": nodes}

    @classmethod
    def from_json(cls, d: dict) -> "ObliqueTree":
        nodes = d["nodes"]
        fields = {name: [] for name in ("feat_i", "feat_j", "threshold", "left", "right",
                                        "value", "weight", "impurity", "n_samples")}
        pos = 0

        def build() -> int:
            nonlocal pos
            if pos >= len(nodes):
                raise ValueError("truncated preorder node list")
            nd = nodes[pos]
            pos += 1
            k = len(fields["left"])
            for name in fields:
                fields[name].append(None)
            fields["weight"][k] = nd["weight"]
            fields["impurity"][k] = nd["impurity"]
            fields["n_samples"][k] = nd["samples"]
            fields["value"][k] = nd["value"]
            if nd["kind"] == "split":
                ref = FeatureRef.from_json(nd["feature"])
                fields["feat_i"][k] = ref.i
                fields["feat_j"][k] = -1 if ref.j is None else ref.j
                fields["threshold"][k] = nd["threshold"]
                fields["left"][k] = build()
                fields["right"][k] = build()
            elif nd["kind"] == "leaf":
                fields["feat_i"][k] = -1
                fields["feat_j"][k] = -1
                fields["threshold"][k] = 0.0
                fields["left"][k] = -1
                fields["right"][k] = -1
            else:
                raise ValueError(f"unknown node kind {nd['kind']!r}")
            return k

        build()
        if pos != len(nodes):
            raise ValueError("trailing nodes after a complete tree")
        return cls(d["mode"], d["n_outputs"], **fields, n_features=d.get("n_features"))

    def __eq__(self, other):
        if not isinstance(other, ObliqueTree):
            return NotImplemented
        return self.to_json() == other.to_json()

    def __repr__(self):
        return (f"ObliqueTree(mode={self.mode!r}, leaves={self.n_leaves}, "
                f"depth={self.depth})")


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

class _Problem:
    """Training data plus the per-node statistics the learner needs."""

    def __init__(self, X, y, w, mode, n_outputs, refs, kernel):
        self.X = X
        self.y = y
        self.w = w
        self.mode = mode
        self.n_outputs = n_outputs
        self.refs = refs
        self.kernel = kernel
        self.total = float(w.sum())

    def node_stats(self, idx):
        w = self.w[idx]
        W = float(w.sum())
        if self.mode == "classify":
            hist = np.bincount(self.y[idx], weights=w, minlength=self.n_outputs)
            if W > 0:
                frac = hist / W
                imp = float(1.0 - frac @ frac)
            else:
                imp = 0.0
            return hist, W, max(imp, 0.0)
        Y = self.y[idx]
        mean = (w @ Y) / W if W > 0 else Y.mean(axis=0)
        if W > 0:
            imp = float((w @ ((Y - mean) ** 2)).sum() / W)
        else:
            imp = 0.0
        return mean, W, max(imp, 0.0)

    def is_pure(self, idx) -> bool:
        y = self.y[idx]
        return bool(np.all(y == y[0]))

    def statistics(self, idx, mean=None):
        w = self.w[idx]
        if self.mode == "classify":
            Z = np.zeros((idx.size, self.n_outputs))
            Z[np.arange(idx.size), self.y[idx]] = w
            return Z
        return w[:, None] * (self.y[idx] - mean)

    def best_split(self, idx, mean=None) -> SplitCandidate | None:
        if idx.size < 2 or self.is_pure(idx):
            return None
        Xn = self.X[idx]
        wn = self.w[idx]
        Z = self.statistics(idx, mean)
        kernel = self.kernel
        best = np.full(len(self.refs), -np.inf)
        for f, ref in enumerate(self.refs):
            col = ref.column(Xn)
            order = np.argsort(col, kind="stable")
            dec = kernel(np.ascontiguousarray(col[order]), np.ascontiguousarray(Z[order]),
                         np.ascontiguousarray(wn[order]), self.total)
            if dec.size:
                best[f] = dec.max()
        gmax = best.max()
        if not gmax > TIE_TOL:
            return None
        floor = gmax - TIE_TOL
        f = int(np.flatnonzero(best >= floor)[0])
        ref = self.refs[f]
        col = ref.column(Xn)
        order = np.argsort(col, kind="stable")
        v = np.ascontiguousarray(col[order])
        ws = np.ascontiguousarray(wn[order])
        dec = kernel(v, np.ascontiguousarray(Z[order]), ws, self.total)
        k = int(np.flatnonzero(dec >= floor)[0])
        wl = float(ws[:k + 1].sum())
        return SplitCandidate(ref, midpoint(float(v[k]), float(v[k + 1])), float(dec[k]),
                              wl, float(ws[k + 1:].sum()))


def fit_tree(X, y, weights=None, leaves: int = 8, mode: str = "classify",
             n_outputs: int | None = None, oblique: bool = True,
             kernel: str | None = None) -> ObliqueTree:
    """Grow a tree best-first until ``leaves`` leaves or no useful split remains.

    The frontier leaf whose best split has the largest weighted impurity
    decrease is split next. Classification uses weighted Gini, regression the
    sum of per-output weighted variances. Candidate features are every raw
    column plus, with ``oblique``, every pairwise difference ``x[i] - x[j]``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("need a non-empty 2-d feature matrix")
    n, m = X.shape
    if leaves < 2:
        raise ValueError("leaves must be >= 2")
    if mode == "classify":
        y = np.asarray(y, dtype=np.int64).reshape(n)
        if np.any(y < 0):
            raise ValueError("class labels must be >= 0")
        n_outputs = int(n_outputs if n_outputs is not None else y.max() + 1)
        if y.max() >= n_outputs:
            raise ValueError("class label exceeds n_outputs")
    elif mode == "regress":
        y = np.asarray(y, dtype=np.float64)
        y = y.reshape(n, -1)
        n_outputs = y.shape[1]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(n)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and >= 0")
    w = uniform_if_degenerate(w)

    refs = candidate_features(m, oblique=oblique and m >= 2)
    prob = _Problem(X, y, w, mode, n_outputs, refs, _backend.get_kernel(kernel))

    feat_i, feat_j, thr, left, right = [], [], [], [], []
    value, weight, impurity, n_samples, members = [], [], [], [], []

    def new_node(idx):
        val, W, imp = prob.node_stats(idx)
        for lst, item in ((feat_i, -1), (feat_j, -1), (thr, 0.0), (left, -1),
                          (right, -1), (value, val), (weight, W), (impurity, imp),
                          (n_samples, idx.size), (members, idx)):
            lst.append(item)
        return len(left) - 1

    heap = []

    def push(k):
        cand = prob.best_split(members[k], value[k] if mode == "regress" else None)
        if cand is not None:
            heapq.heappush(heap, (-cand.impurity_decrease, k, cand))

    push(new_node(np.arange(n)))
    n_leaves = 1
    while heap and n_leaves < leaves:
        _, k, cand = heapq.heappop(heap)
        idx = members[k]
        go_left = cand.feature.column(X[idx]) <= cand.threshold
        feat_i[k] = cand.feature.i
        feat_j[k] = -1 if cand.feature.j is None else cand.feature.j
        thr[k] = cand.threshold
        lk = new_node(idx[go_left])
        rk = new_node(idx[~go_left])
        left[k], right[k] = lk, rk
        n_leaves += 1
        push(lk)
        push(rk)

    return ObliqueTree(mode, n_outputs, feat_i, feat_j, thr, left, right,
                       value, weight, impurity, n_samples, n_features=m)


def fit_dataset(dataset, leaves: int, oblique: bool = True,
                kernel: str | None = None) -> ObliqueTree:
    """Fit on an :class:`~obdistill.core.AggregatedDataset` (masked columns)."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    spec = dataset.action_spec
    if spec.is_discrete:
        return fit_tree(dataset.X, dataset.actions, dataset.weights, leaves,
                        "classify", spec.n, oblique, kernel)
    return fit_tree(dataset.X, dataset.actions, dataset.weights, leaves,
                    "regress", None, oblique, kernel)


def node_members(tree: ObliqueTree, X: np.ndarray) -> dict[int, np.ndarray]:
    """Route ``X`` through the tree and return the sample indices reaching each node."""
    X = np.asarray(X, dtype=np.float64)
    out = {0: np.arange(X.shape[0])}
    for k in tree.preorder():
        if tree.is_leaf(k):
            continue
        idx = out[k]
        go = tree.feature(k).column(X[idx]) <= tree.threshold[k]
        out[tree.left[k]] = idx[go]
        out[tree.right[k]] = idx[~go]
    return out


def feature_importance(tree: ObliqueTree) -> dict[FeatureRef, float]:
    """Impurity-decrease importances over the features the tree splits on, summing to 1."""
    internal = tree.internal_nodes()
    if not internal:
        raise SingleLeafTree("a single-leaf tree has no feature importances")
    total = tree.weight[0]
    raw: dict[FeatureRef, float] = {}
    for k in internal:
        l, r = tree.left[k], tree.right[k]
        dec = (tree.weight[k] * tree.impurity[k] - tree.weight[l] * tree.impurity[l]
               - tree.weight[r] * tree.impurity[r]) / total
        ref = tree.feature(k)
        raw[ref] = raw.get(ref, 0.0) + max(dec, 0.0)
    s = sum(raw.values())
    if s <= 0:
        return {ref: 1.0 / len(raw) for ref in sorted(raw, key=FeatureRef.sort_key)}
    return {ref: raw[ref] / s for ref in sorted(raw, key=FeatureRef.sort_key)}

