import numpy as np
import pytest

from clstream.datasets import make_blob_dataset, write_idx


@pytest.fixture(scope="session")
def blobs():
    return make_blob_dataset(10, 60, 16, 4.0, seed=3, test_per_class=30)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """A real 2000/1000 MNIST split written as IDX files (from mlxtend's bundled subset)."""
    data = pytest.importorskip("mlxtend.data")
    X, y = data.mnist_data()
    order = np.random.default_rng(0).permutation(len(y))
    root = tmp_path_factory.mktemp("mnist")
    for split, ids in (("train", order[:2000]), ("test", order[2000:3000])):
        write_idx(root / f"{split}-images-idx3-ubyte", X[ids].reshape(-1, 28, 28))
        write_idx(root / f"{split}-labels-idx1-ubyte", y[ids])
    return root
