"""Pure numpy split scan. Used when the compiled kernel is unavailable."""
import numpy as np


def cut_decreases(values, Z, w, total):
    """Normalized impurity decrease for every cut between consecutive samples.

    ``values`` is the sorted feature column, ``Z`` the per-sample statistics
    in the same order (weighted one-hot rows for classification, weighted
    centred targets for regression) and ``w`` the weights. Cut ``k`` puts
    samples ``0..k`` on the left. Invalid cuts (equal values either side, or
    a side with zero weight) get ``-inf``.
    """
    n = values.shape[0]
    if n < 2:
        return np.empty(0)
    cumz = np.cumsum(Z, axis=0)
    cumw = np.cumsum(w)
    node = cumz[-1]
    W = cumw[-1]
    left = cumz[:-1]
    wl = cumw[:-1]
    right = node - left
    wr = W - wl
    valid = (values[1:] > values[:-1]) & (wl > 0) & (wr > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (left * left).sum(axis=1) / wl + (right * right).sum(axis=1) / wr
        gain -= float(node @ node) / W
    return np.where(valid, gain / total, -np.inf)
