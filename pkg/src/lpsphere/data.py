"""Dataset ingestion: IDX (MNIST-style) binaries, CSV tables and synthetic sets."""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from lpsphere.errors import ConfigError, DataFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SYNTHETIC_KINDS = ("two-gaussians", "xor-grid")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    @property
    def n_classes(self):
        return int(self.y.max()) + 1 if len(self.y) else 0

    def subset(self, idx):
        return Dataset(self.x[idx], self.y[idx])


def _read_idx(path, magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    ndim = 3 if magic == IDX_IMAGES_MAGIC else 1
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated at byte offset {len(raw)}, need 4-byte magic")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        what = "image" if magic == IDX_IMAGES_MAGIC else "label"
        raise DataFormatError(
            f"{path}: expected {what} magic 0x{magic:08x} at byte offset 0, got 0x{found:08x}"
        )
    if len(raw) < header:
        raise DataFormatError(
            f"{path}: truncated at byte offset {len(raw)}, header needs {header} bytes"
        )
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise DataFormatError(
            f"{path}: truncated payload at byte offset {len(raw)}, expected {need} bytes"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=need - header, offset=header).reshape(dims)


def load_idx_images(path):
    """(n, rows, cols) float64 images scaled to [0, 1]."""
    return _read_idx(path, IDX_IMAGES_MAGIC).astype(np.float64) / 255.0


def load_idx_labels(path):
    return _read_idx(path, IDX_LABELS_MAGIC).astype(np.int64)


def load_idx(images_path, labels_path, limit=None):
    """Paired IDX image and label files as a `Dataset` with (n, 1, rows, cols) inputs."""
    x = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if len(x) != len(y):
        raise DataFormatError(f"{len(x)} images but {len(y)} labels")
    if limit is not None:
        x, y = x[:limit], y[:limit]
    return Dataset(x[:, None, :, :], y)


def load_csv(path, label=-1, scale=False):
    """CSV with a header row; `label` is a column name or index.

    Labels are mapped to 0..k-1 in sorted order of their distinct values.
    With `scale` each feature is min-max scaled to [0, 1] (constant columns
    map to 0).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file, expected a header row")
    header = [h.strip() for h in rows[0]]
    if isinstance(label, str) and not label.lstrip("-").isdigit():
        if label not in header:
            raise DataFormatError(f"{path}: missing label column {label!r}")
        col = header.index(label)
    else:
        col = int(label)
        if not -len(header) <= col < len(header):
            raise DataFormatError(f"{path}: missing label column index {col}")
        col %= len(header)
    feats, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: line {lineno}: ragged row with {len(row)} cells, header has {len(header)}"
            )
        vals = []
        for k, cell in enumerate(row):
            if k == col:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataFormatError(
                    f"{path}: line {lineno}: non-numeric cell {cell!r} in column {header[k]!r}"
                ) from None
        feats.append(vals)
        labels.append(row[col].strip())
    x = np.array(feats, dtype=np.float64).reshape(len(feats), len(header) - 1)
    try:
        keys = sorted(set(labels), key=float)
    except ValueError:
        keys = sorted(set(labels))
    lookup = {k: i for i, k in enumerate(keys)}
    y = np.array([lookup[v] for v in labels], dtype=np.int64)
    if scale and len(x):
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        x = (x - lo) / span
    return Dataset(x, y)


def synthetic_dataset(kind, n, seed, margin=4.0):
    """Seeded 2-D toy data.

    ``two-gaussians``: unit-variance classes with means `margin` standard
    deviations apart (linearly separable in practice). ``xor-grid``: four
    tight clusters at (+-1, +-1), labelled by the XOR of the coordinate signs.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"unknown synthetic dataset {kind!r}; choose from {SYNTHETIC_KINDS}")
    n = int(n)
    if n < 0:
        raise ConfigError(f"sample count must be >= 0, got {n}")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=n)
    if kind == "two-gaussians":
        centre = np.where(y == 0, -margin / 2.0, margin / 2.0)
        x = rng.normal(size=(n, 2))
        x[:, 0] += centre
    else:
        sx = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        sy = np.where(y == 1, -sx, sx)
        x = np.stack([sx, sy], axis=1) + 0.25 * rng.normal(size=(n, 2))
    return Dataset(x, y.astype(np.int64))
