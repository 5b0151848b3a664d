"""Weighted oblique CART: tree type, learner, importances, brute-force oracle."""
from ._backend import BACKEND, KERNELS, get_kernel
from .exhaustive import best_split_exhaustive
from .tree import (TIE_TOL, NoUsefulSplit, ObliqueTree, SingleLeafTree, SplitCandidate,
                   feature_importance, fit_dataset, fit_tree, midpoint, node_members)

__all__ = [
    "BACKEND", "KERNELS", "get_kernel", "best_split_exhaustive", "TIE_TOL",
    "NoUsefulSplit", "ObliqueTree", "SingleLeafTree", "SplitCandidate",
    "feature_importance", "fit_dataset", "fit_tree", "midpoint", "node_members",
]
