"""Dataset ingestion and synthesis.

Supported sources:

* MNIST-style IDX files (big-endian, magic 0x00000803 for images and
  0x00000801 for labels); pixels are scaled to [0,1] and labels one-hot
  encoded to dimension 10.
* Feature tables for the CIFAR-10 classifier head: CSV, one row per sample,
  512 float feature columns followed by one integer label column (0..9).
* Synthetic teacher networks and cluster fixtures for oracle tests.

When real MNIST is unavailable, `make_digits_idx` builds a drop-in surrogate
from the scikit-learn handwritten digits (8x8 originals upsampled to 28x28
with seeded affine jitter) and writes canonical IDX files, so the exact same
loading and training path is exercised.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import network
from .errors import FormatError, ShapeError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
FEATURE_DIM = 512
N_CLASSES = 10


@dataclass
class Dataset:
    """Ordered (input, target) pairs; rows are samples."""

    inputs: np.ndarray    # (n, m)
    targets: np.ndarray   # (n, p)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("inputs and targets must be 2-D (rows = samples)")
        if len(self.inputs) != len(self.targets):
            raise ShapeError(
                f"{len(self.inputs)} inputs vs {len(self.targets)} targets")

    def __len__(self):
        return len(self.inputs)

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def target_dim(self):
        return self.targets.shape[1]

    def shuffled(self, seed):
        """New Dataset with rows permuted; a true permutation under the seed."""
        perm = np.random.default_rng([int(seed) & 0x7FFFFFFF, 97]).permutation(len(self))
        return Dataset(self.inputs[perm], self.targets[perm])

    def subset(self, n_or_idx):
        if np.isscalar(n_or_idx):
            return Dataset(self.inputs[:n_or_idx], self.targets[:n_or_idx])
        idx = np.asarray(n_or_idx)
        return Dataset(self.inputs[idx], self.targets[idx])

    def labels(self):
        """Argmax class labels (classification targets only)."""
        return np.argmax(self.targets, axis=1)


def one_hot(labels, n_classes=N_CLASSES):
    labels = np.asarray(labels, dtype=int)
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise FormatError(f"labels outside 0..{n_classes - 1}")
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# --- IDX --------------------------------------------------------------------

def _read_idx_header(f, expect_magic, expect_dims, path):
    head = f.read(4 * (1 + expect_dims))
    if len(head) != 4 * (1 + expect_dims):
        raise FormatError(f"{path}: truncated IDX header")
    fields = struct.unpack(f">{1 + expect_dims}i", head)
    if fields[0] != expect_magic:
        raise FormatError(
            f"{path}: bad magic 0x{fields[0]:08x}, expected 0x{expect_magic:08x}")
    return fields[1:]


def load_idx(images_path, labels_path):
    """Parse an MNIST-style IDX image/label pair into a Dataset."""
    with open(images_path, "rb") as f:
        n, rows, cols = _read_idx_header(f, IMAGE_MAGIC, 3, images_path)
        raw = f.read(n * rows * cols)
        if len(raw) != n * rows * cols:
            raise FormatError(f"{images_path}: truncated pixel data "
                              f"({len(raw)} bytes for {n}x{rows}x{cols})")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    with open(labels_path, "rb") as f:
        (n_labels,) = _read_idx_header(f, LABEL_MAGIC, 1, labels_path)
        raw = f.read(n_labels)
        if len(raw) != n_labels:
            raise FormatError(f"{labels_path}: truncated label data")
        labels = np.frombuffer(raw, dtype=np.uint8)
    if n_labels != n:
        raise FormatError(f"image count {n} != label count {n_labels}")
    return Dataset(pixels.astype(float) / 255.0, one_hot(labels))


def save_idx(images_u8, labels_u8, images_path, labels_path):
    """Write uint8 images (n, rows, cols) and labels (n,) as IDX files."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels_u8 = np.asarray(labels_u8, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    if labels_u8.shape != (n,):
        raise ShapeError("labels must be (n,) matching the image count")
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4i", IMAGE_MAGIC, n, rows, cols))
        f.write(images_u8.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2i", LABEL_MAGIC, n))
        f.write(labels_u8.tobytes())


# --- feature tables ---------------------------------------------------------

def load_feature_table(path):
    """CSV with FEATURE_DIM float columns + one integer label column."""
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: unparseable feature table: {exc}") from exc
    if table.size == 0:
        raise FormatError(f"{path}: empty feature table")
    if table.shape[1] != FEATURE_DIM + 1:
        raise FormatError(f"{path}: expected {FEATURE_DIM + 1} columns "
                          f"(features + label), got {table.shape[1]}")
    return Dataset(table[:, :FEATURE_DIM], one_hot(table[:, FEATURE_DIM].astype(int)))


def save_feature_table(dataset, path):
    rows = np.hstack([dataset.inputs, dataset.labels()[:, None].astype(float)])
    np.savetxt(path, rows, delimiter=",", fmt="%.9g")


# --- synthesis --------------------------------------------------------------

def synth_teacher_dataset(dims, hidden_kinds, output_kind, n_samples, seed):
    """Random teacher net plus data it generated; inputs uniform in [-1,1]^m."""
    teacher = network.init_random(dims, hidden_kinds, output_kind, seed)
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, 31])
    inputs = rng.uniform(-1.0, 1.0, size=(int(n_samples), dims[0]))
    if n_samples == 0:
        targets = np.zeros((0, dims[-1]))
    else:
        targets = teacher.forward(inputs)
    return Dataset(inputs, targets), teacher


def synth_feature_table(n_train, n_test, seed, dim=FEATURE_DIM, spread=0.55):
    """Separable-but-not-linearly-separable cluster fixture.

    Each class consists of two antipodal Gaussian clusters (+mu_c and -mu_c),
    so class means coincide at the origin and a linear classifier fails while
    a one-hidden-layer network separates cleanly.
    """
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, 41])
    centers = rng.normal(size=(N_CLASSES, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)

    def draw(n):
        labels = rng.integers(0, N_CLASSES, size=n)
        signs = rng.choice([-1.0, 1.0], size=n)
        x = centers[labels] * signs[:, None] + spread / np.sqrt(dim) * rng.normal(size=(n, dim))
        return Dataset(x, one_hot(labels))

    return draw(int(n_train)), draw(int(n_test))


def make_digits_idx(out_dir, n_train=12000, n_test=10000, seed=0):
    """Write a 28x28 handwritten-digit IDX quartet derived from sklearn digits.

    The 1797 8x8 originals are split into disjoint train/test base pools, then
    each output sample upsamples one base image to 28x28 and applies a seeded
    affine jitter (rotation within +-12 degrees, shift within +-2 px, scale
    within +-8%). Returns the four file paths (train/test images/labels).

    Requires scipy and scikit-learn (the `fixtures` extra).
    """
    import os

    from scipy import ndimage
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = digits.images / 16.0           # (1797, 8, 8) in [0,1]
    labels = digits.target
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFF, 51])

    pool_perm = rng.permutation(len(images))
    n_test_pool = len(images) // 3
    test_pool, train_pool = pool_perm[:n_test_pool], pool_perm[n_test_pool:]

    def render(pool, count, stream):
        base_idx = pool[stream.integers(0, len(pool), size=count)]
        out = np.empty((count, 28, 28), dtype=np.uint8)
        scale_up = 28.0 / 8.0
        for i, b in enumerate(base_idx):
            big = ndimage.zoom(images[b], scale_up, order=1)
            angle = stream.uniform(-12.0, 12.0)
            zoom = stream.uniform(0.92, 1.08)
            shift = stream.uniform(-2.0, 2.0, size=2)
            c, s = np.cos(np.deg2rad(angle)), np.sin(np.deg2rad(angle))
            mat = np.array([[c, -s], [s, c]]) / zoom
            center = np.array([13.5, 13.5])
            offset = center - mat @ (center + shift)
            warped = ndimage.affine_transform(big, mat, offset=offset, order=1, cval=0.0)
            out[i] = np.clip(warped * 255.0, 0, 255).astype(np.uint8)
        return out, labels[base_idx].astype(np.uint8)

    train_imgs, train_labels = render(train_pool, int(n_train), rng)
    test_imgs, test_labels = render(test_pool, int(n_test), rng)

    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, name) for name in (
        "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")]
    save_idx(train_imgs, train_labels, paths[0], paths[1])
    save_idx(test_imgs, test_labels, paths[2], paths[3])
    return paths


def find_mnist_dir(candidates=None):
    """First directory holding the canonical IDX quartet, or None."""
    import os

    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    if candidates is None:
        candidates = [os.environ.get("LWDL_MNIST_DIR"), "data/mnist"]
    for cand in candidates:
        if cand and all(os.path.exists(os.path.join(cand, n)) for n in names):
            return cand
    return None


def load_idx_dir(dirpath):
    """Load the canonical train/test IDX quartet from one directory."""
    import os

    train = load_idx(os.path.join(dirpath, "train-images-idx3-ubyte"),
                     os.path.join(dirpath, "train-labels-idx1-ubyte"))
    test = load_idx(os.path.join(dirpath, "t10k-images-idx3-ubyte"),
                    os.path.join(dirpath, "t10k-labels-idx1-ubyte"))
    return train, test
