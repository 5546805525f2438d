"""MNIST-style IDX ingestion, stratified subsetting and validation splits."""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


def _read_bytes(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
        rest = fh.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (EOFError, gzip.BadGzipFile) as exc:
            raise TruncatedFileError(f"{path}: truncated or corrupt gzip stream ({exc})") from None
    return raw


def _parse_idx(raw, expected_magic, path):
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims)) if dims else 0
    if len(raw) - header < count:
        raise TruncatedFileError(
            f"{path}: truncated payload ({len(raw) - header} of {count} bytes)"
        )
    if len(raw) - header > count:
        raise IdxFormatError(f"{path}: {len(raw) - header - count} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Images as ``N x H x W x 1`` floats in [0, 1] and int64 labels.

    Either file may be gzip-compressed.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    return images[..., None].astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(path, array, compress=None):
    """Write a uint8 array in IDX layout (gzip when ``path`` ends in .gz)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("IDX writer expects uint8 data")
    magic = 0x00000800 | array.ndim
    blob = struct.pack(">I", magic) + struct.pack(">" + "I" * array.ndim, *array.shape)
    blob += array.tobytes()
    if compress is None:
        compress = str(path).endswith(".gz")
    if compress:
        blob = gzip.compress(blob, mtime=0)
    with open(path, "wb") as fh:
        fh.write(blob)


def to_uint8_images(images):
    return np.rint(np.asarray(images).reshape(len(images), *np.asarray(images).shape[1:3]) * 255).astype(np.uint8)


@dataclass
class DatasetSplit:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray = None
    test_y: np.ndarray = None
    split_seed: int = 0
    train_idx: np.ndarray = None
    val_idx: np.ndarray = None

    def __post_init__(self):
        for name in ("train_x", "val_x", "test_x"):
            arr = getattr(self, name)
            if arr is not None and arr.size and (arr.min() < 0 or arr.max() > 1):
                raise ValueError(f"{name}: pixel values must lie in [0, 1]")


def split_validation(x, y, split_seed=0, test=None, fraction=0.10):
    """Seeded shuffle; the last ``round(fraction * N)`` examples become validation."""
    n = len(x)
    if n < 10:
        raise ValueError(f"need at least 10 training examples, got {n}")
    order = np.random.default_rng(split_seed).permutation(n)
    n_val = int(round(fraction * n))
    tr, va = order[: n - n_val], order[n - n_val:]
    tx, ty = (None, None) if test is None else test
    return DatasetSplit(x[tr], y[tr], x[va], y[va], tx, ty, split_seed, tr, va)


def stratified_subset(y, size, seed=0):
    """Indices of a class-balanced subsample of ``size`` examples.

    Each class gets ``size // C`` examples (remainder spread over the first
    classes), capped by availability with the shortfall redistributed.
    """
    y = np.asarray(y)
    if size >= len(y):
        return np.arange(len(y))
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    pools = {c: rng.permutation(np.flatnonzero(y == c)) for c in classes}
    quota = {c: size // len(classes) for c in classes}
    for c in classes[: size % len(classes)]:
        quota[c] += 1
    spare = 0
    for c in classes:
        if quota[c] > len(pools[c]):
            spare += quota[c] - len(pools[c])
            quota[c] = len(pools[c])
    while spare:
        open_classes = [c for c in classes if quota[c] < len(pools[c])]
        if not open_classes:
            break
        for c in open_classes:
            if spare == 0:
                break
            quota[c] += 1
            spare -= 1
    idx = np.concatenate([pools[c][: quota[c]] for c in classes])
    return np.sort(idx)


def load_split(train_images, train_labels, test_images=None, test_labels=None,
               subset=None, test_subset=None, split_seed=0):
    """Load IDX files, validation-split the full training set, then subsample.

    The validation set is carved before subsetting so its size is 10% of the
    original training set; ``subset`` caps the remaining training examples.
    """
    x, y = load_idx(train_images, train_labels)
    test = None
    if test_images is not None:
        tx, ty = load_idx(test_images, test_labels)
        if test_subset:
            keep = stratified_subset(ty, test_subset, split_seed)
            tx, ty = tx[keep], ty[keep]
        test = (tx, ty)
    split = split_validation(x, y, split_seed, test)
    if subset:
        keep = stratified_subset(split.train_y, subset, split_seed)
        split.train_x, split.train_y = split.train_x[keep], split.train_y[keep]
        split.train_idx = split.train_idx[keep]
    return split
