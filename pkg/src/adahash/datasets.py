"""Dataset ingestion: synthetic two-domain benchmark, CSV and IDX loaders."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .fileio import FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with optional labels and a domain tag.

    ``labels is None`` is the label-stripped view handed to training code, so
    the training path has no route back to ground truth.
    """

    features: np.ndarray          # float64 (n, f)
    labels: np.ndarray | None     # int64 (n,) in [0, N), or None
    domain: str                   # "source" or "target"
    n_classes: int
    label_map: dict[int, int] | None = None  # original -> contiguous, when remapped

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        if not np.isfinite(feats).all():
            raise ValueError("features must be finite")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            object.__setattr__(self, "labels", labels)
            if len(labels) != len(feats):
                raise ValueError(
                    f"{len(feats)} feature rows but {len(labels)} labels")
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValueError(
                    f"labels must lie in [0, {self.n_classes}), "
                    f"got range [{labels.min()}, {labels.max()}]")
        if self.domain not in ("source", "target"):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def without_labels(self) -> "Dataset":
        """Label-stripped view for the training path."""
        return replace(self, labels=None, label_map=None)


@dataclass(frozen=True)
class ShiftSpec:
    """Affine-plus-noise domain shift applied to the target draw."""

    rotation: float = 0.0                  # radians, in the first two feature dims
    translation: tuple[float, ...] = ()    # per-dim offsets, zero-padded
    scale: float = 1.0
    noise_sigma: float = 0.0               # extra noise on top of cluster spread

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def make_synthetic_pair(n_classes: int, per_class: int, dim: int,
                        shift: ShiftSpec, seed: int,
                        cluster_sigma: float = 0.15,
                        radius: float = 1.0) -> tuple[Dataset, Dataset]:
    """Gaussian ring clusters plus a shifted re-draw of the same classes.

    Source: n_classes isotropic clusters whose means sit evenly on a ring of
    the given radius (in the first two dims; higher dims center at zero).
    Target: fresh draws from the same class distributions, pushed through
    rotation * scale + translation + fresh noise. Both sides keep labels;
    target labels are meant for evaluation only.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if dim < 2:
        raise ValueError(f"need at least 2 feature dims, got {dim}")
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)

    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)

    labels = np.repeat(np.arange(n_classes), per_class)

    def draw() -> np.ndarray:
        return means[labels] + cluster_sigma * rng.standard_normal((len(labels), dim))

    src = draw()

    tgt = draw() * shift.scale
    c, s = np.cos(shift.rotation), np.sin(shift.rotation)
    rot_mat = np.array([[c, -s], [s, c]])
    tgt[:, :2] = tgt[:, :2] @ rot_mat.T
    offset = np.zeros(dim)
    offset[: len(shift.translation)] = shift.translation[:dim]
    tgt = tgt + offset
    if shift.noise_sigma > 0:
        tgt = tgt + shift.noise_sigma * rng.standard_normal(tgt.shape)

    source = Dataset(src, labels.copy(), "source", n_classes)
    target = Dataset(tgt, labels.copy(), "target", n_classes)
    return source, target


def _parse_cell(cell: str, row: int, col: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise FormatError(
            f"non-numeric value {cell!r} at row {row}, column {col}") from None


def _is_numeric_row(cells: list[str]) -> bool:
    try:
        for c in cells:
            float(c)
        return True
    except ValueError:
        return False


def load_csv(path: str, has_labels: bool, domain: str = "source",
             n_classes: int | None = None) -> Dataset:
    """Comma-separated features, last column an integer label when has_labels.

    A non-numeric first row is treated as a header. Labels are re-indexed to
    a contiguous [0, N) and the mapping is kept on the dataset.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: file holds no data rows")

    rows = [ln.split(",") for ln in lines]
    start = 0
    if not _is_numeric_row(rows[0]):
        start = 1
        if len(rows) == 1:
            raise FormatError(f"{path}: only a header row present")
    width = len(rows[start])

    values = np.empty((len(rows) - start, width))
    for r, cells in enumerate(rows[start:], start=start):
        if len(cells) != width:
            raise FormatError(
                f"{path}: row {r + 1} has {len(cells)} columns, expected {width}")
        for c, cell in enumerate(cells):
            values[r - start, c] = _parse_cell(cell.strip(), r + 1, c + 1)

    if not has_labels:
        inferred = n_classes if n_classes is not None else 1
        return Dataset(values, None, domain, inferred)

    if width < 2:
        raise FormatError(f"{path}: labeled rows need at least 2 columns")
    raw_labels = values[:, -1]
    if not np.array_equal(raw_labels, np.round(raw_labels)):
        bad = int(np.nonzero(raw_labels != np.round(raw_labels))[0][0])
        raise FormatError(f"{path}: label at row {bad + 1} is not an integer")
    raw_labels = raw_labels.astype(np.int64)
    distinct = np.unique(raw_labels)
    label_map = {int(orig): new for new, orig in enumerate(distinct)}
    labels = np.array([label_map[int(v)] for v in raw_labels], dtype=np.int64)
    return Dataset(values[:, :-1], labels, domain, len(distinct),
                   label_map=label_map)


def _read_exact(fh, n: int, path: str, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated while reading {what}")
    return data


def load_idx(images_path: str, labels_path: str, limit: int | None = None,
             domain: str = "source") -> Dataset:
    """Big-endian IDX digit files; pixels scaled to [0, 1], flattened row-major."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(
            ">IIII", _read_exact(fh, 16, images_path, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: bad magic, expected {IDX_IMAGES_MAGIC:#010x}, "
                f"got {magic:#010x}")
        take = count if limit is None else min(limit, count)
        pixels = _read_exact(fh, take * rows * cols, images_path, "pixel data")

    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(
            ">II", _read_exact(fh, 8, labels_path, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{labels_path}: bad magic, expected {IDX_LABELS_MAGIC:#010x}, "
                f"got {magic:#010x}")
        if label_count != count:
            raise FormatError(
                f"image/label counts differ: {count} images vs {label_count} labels")
        raw = _read_exact(fh, take, labels_path, "label data")

    features = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64) / 255.0
    features = features.reshape(take, rows * cols)
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    n_classes = int(labels.max()) + 1 if take else 0
    return Dataset(features, labels, domain, max(n_classes, 1))
