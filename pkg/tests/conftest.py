import numpy as np
import pytest

from permcollab.block_cipher import ImageTensor
from permcollab.dataset_io import PlainDataset


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)


def make_image(rng, h=32, w=32, c=3) -> ImageTensor:
    return ImageTensor(rng.integers(0, 256, size=(h, w, c), dtype=np.uint8))


def make_dataset(rng, n=4, h=32, w=32, c=3) -> PlainDataset:
    images = tuple(make_image(rng, h, w, c) for _ in range(n))
    labels = tuple(int(rng.integers(0, 10)) for _ in range(n))
    return PlainDataset(images, labels)


def write_cifar_batch(path, n, rng, labels=None):
    """Standard binary batch: per record 1 label byte + 3072 planar bytes."""
    recs = np.empty((n, 3073), dtype=np.uint8)
    if labels is None:
        recs[:, 0] = rng.integers(0, 10, size=n, dtype=np.uint8)
    else:
        recs[:, 0] = np.asarray(labels, dtype=np.uint8)
    recs[:, 1:] = rng.integers(0, 256, size=(n, 3072), dtype=np.uint8)
    data = recs.tobytes()
    path.write_bytes(data)
    return data


def smooth_image(side=32) -> ImageTensor:
    """A natural-looking gradient-plus-disc image for correlation checks."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    base = 60 + 120 * (xx + yy) / (2 * side - 2)
    disc = ((xx - side / 3) ** 2 + (yy - side / 2.5) ** 2) < (side / 4) ** 2
    arr = np.stack(
        [base + 40 * disc, base - 20 * disc, base[::-1] + 10], axis=2
    )
    return ImageTensor(np.clip(np.rint(arr), 0, 255).astype(np.uint8))
