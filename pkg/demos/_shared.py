"""Helpers shared by the demo scripts."""
import sys
from pathlib import Path

import numpy as np

from clstream.datasets import write_idx


def export_mnist_subset(root, n_train=2000, n_test=1000, seed=0) -> Path:
    """Write a small real MNIST split as IDX files.

    Uses the 5000-image subset bundled with mlxtend, so nothing is downloaded.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError:
        sys.exit("this demo needs mlxtend: pip install mlxtend")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    X, y = mnist_data()
    order = np.random.default_rng(seed).permutation(len(y))
    splits = {"train": order[:n_train], "test": order[n_train:n_train + n_test]}
    for split, ids in splits.items():
        write_idx(root / f"{split}-images-idx3-ubyte", X[ids].reshape(-1, 28, 28))
        write_idx(root / f"{split}-labels-idx1-ubyte", y[ids])
    return root


def sparkline(values, lo=0.0, hi=1.0) -> str:
    ticks = " .:-=+*#%@"
    scaled = (np.clip(values, lo, hi) - lo) / (hi - lo)
    return "".join(ticks[int(v * (len(ticks) - 1))] for v in scaled)
