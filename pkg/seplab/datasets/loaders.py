"""Readers and writers for dataset files.

Supported inputs are the canonical MNIST IDX files, the CIFAR-10 binary
batches and seplab's own "SEPLABDS" cache. Any of them can first be fetched
from a URL with `fetch`.
"""

import gzip
import logging
import os
import struct
from typing import IO, List, Sequence, Tuple, Union

import numpy as np
import requests

from ..errors import DataFormatError, RejectedInputError
from .base import Dataset

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

CIFAR_PIXELS = 3072
CIFAR_RECORD = CIFAR_PIXELS + 1

CACHE_MAGIC = b"SEPLABDS"
CACHE_VERSION = 1

PathLike = Union[str, "os.PathLike[str]"]


def _read_bytes(path: PathLike) -> bytes:
    with open(path, "rb") as f:
        content = f.read()
    if content[:2] == b"\x1f\x8b":
        content = gzip.decompress(content)
    return content


# MNIST


def _idx_header(content: bytes, path: str, magic: int, dims: int) -> tuple:
    size = 4 * (1 + dims)
    if len(content) < size:
        raise DataFormatError("file too short for its header", field="header", path=path)
    values = struct.unpack(f">{1 + dims}I", content[:size])
    if values[0] != magic:
        raise DataFormatError(
            f"bad magic number {values[0]}, expected {magic}", field="magic", path=path
        )
    return values[1:]


def load_mnist_idx(images_path: PathLike, labels_path: PathLike, name: str = "mnist") -> Dataset:
    """Load an MNIST split from its IDX image and label files.

    Args:
        images_path (str): IDX3 image file (optionally gzip compressed).
        labels_path (str): IDX1 label file (optionally gzip compressed).
        name (str, optional): Tag of the returned dataset.

    Raises:
        DataFormatError: Bad magic, truncated payload or count mismatch.

    Returns:
        Dataset: n x 784 features (pixel / 255) and labels 1..10.
    """

    images = _read_bytes(images_path)
    labels = _read_bytes(labels_path)

    count, rows, cols = _idx_header(images, str(images_path), IDX_IMAGES_MAGIC, 3)
    (label_count,) = _idx_header(labels, str(labels_path), IDX_LABELS_MAGIC, 1)

    if count != label_count:
        raise DataFormatError(
            f"{count} images but {label_count} labels", field="count", path=str(labels_path)
        )

    pixel_bytes = count * rows * cols
    if len(images) - 16 < pixel_bytes:
        raise DataFormatError(
            f"expected {pixel_bytes} pixel bytes, found {len(images) - 16}",
            field="pixels",
            path=str(images_path),
        )
    if len(labels) - 8 < count:
        raise DataFormatError(
            f"expected {count} label bytes, found {len(labels) - 8}",
            field="labels",
            path=str(labels_path),
        )

    pixels = np.frombuffer(images, dtype=np.uint8, count=pixel_bytes, offset=16)
    digits = np.frombuffer(labels, dtype=np.uint8, count=count, offset=8)
    if count and digits.max() > 9:
        raise DataFormatError("digit label above 9", field="labels", path=str(labels_path))

    logger.info("Loaded %d MNIST images (%dx%d) from %s", count, rows, cols, images_path)
    return Dataset(
        pixels.reshape(count, rows * cols) / 255.0,
        digits.astype(np.int64) + 1,
        10,
        name=name,
        quantum=255,
    )


def mnist_files(directory: PathLike, split: str = "train") -> Tuple[str, str]:
    """Paths of the image and label files of an MNIST split, gzipped or not."""
    prefix = {"train": "train", "test": "t10k"}.get(split)
    if prefix is None:
        raise RejectedInputError(f"unknown MNIST split {split!r}")

    def locate(stem: str) -> str:
        for candidate in (stem, stem + ".gz"):
            path = os.path.join(directory, candidate)
            if os.path.exists(path):
                return path
        raise FileNotFoundError(os.path.join(directory, stem))

    return locate(f"{prefix}-images-idx3-ubyte"), locate(f"{prefix}-labels-idx1-ubyte")


def load_mnist_dir(directory: PathLike, split: str = "train") -> Dataset:
    """Load `train` or `test` from a directory holding the four canonical files."""
    images, labels = mnist_files(directory, split)
    return load_mnist_idx(images, labels, name=f"mnist-{split}")


# CIFAR-10


def load_cifar10_binary(batch_paths: Sequence[PathLike], name: str = "cifar10") -> Dataset:
    """Load CIFAR-10 binary batches.

    Each record is one label byte followed by 3072 pixel bytes (red, green
    and blue planes, row-major).

    Args:
        batch_paths (Sequence[str]): One or more batch files.

    Raises:
        RejectedInputError: No files given.
        DataFormatError: A file length is not a multiple of the record length.

    Returns:
        Dataset: n x 3072 features (pixel / 255) and labels 1..10.
    """

    if not batch_paths:
        raise RejectedInputError("no CIFAR-10 batch files given")

    chunks: List[np.ndarray] = []
    for path in batch_paths:
        content = _read_bytes(path)
        if len(content) % CIFAR_RECORD:
            raise DataFormatError(
                f"length {len(content)} is not a multiple of {CIFAR_RECORD}",
                field="record length",
                path=str(path),
            )
        chunks.append(np.frombuffer(content, dtype=np.uint8).reshape(-1, CIFAR_RECORD))

    records = np.concatenate(chunks, axis=0)
    if records.shape[0] and records[:, 0].max() > 9:
        raise DataFormatError("class byte above 9", field="label", path=str(batch_paths[0]))

    logger.info("Loaded %d CIFAR-10 records from %d files", records.shape[0], len(batch_paths))
    return Dataset(
        records[:, 1:] / 255.0,
        records[:, 0].astype(np.int64) + 1,
        10,
        name=name,
        quantum=255,
    )


def cifar10_files(directory: PathLike, split: str = "train") -> List[str]:
    if split == "train":
        names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    elif split == "test":
        names = ["test_batch.bin"]
    else:
        raise RejectedInputError(f"unknown CIFAR-10 split {split!r}")
    return [os.path.join(directory, n) for n in names]


def load_cifar10_dir(directory: PathLike, split: str = "train") -> Dataset:
    """Load a CIFAR-10 split from the extracted binary distribution.

    Args:
        directory (str): Folder holding `data_batch_1.bin` ... `data_batch_5.bin`
            and `test_batch.bin`.
        split (str): `train` (the five data batches) or `test`.

    Returns:
        Dataset: The split, named `cifar10-<split>`.
    """
    return load_cifar10_binary(cifar10_files(directory, split), name=f"cifar10-{split}")


# CACHE


def save_dataset(ds: Dataset, destination: Union[PathLike, IO[bytes]]) -> None:
    """Write a dataset in the SEPLABDS cache format.

    Layout: magic, version byte, little-endian u64 n, d, C, i32 labels,
    f64 features, u16 quantum (0 for none), u32 name length, UTF-8 name.
    """

    name = ds.name.encode("utf-8")
    payload = b"".join(
        [
            CACHE_MAGIC,
            struct.pack("<B", CACHE_VERSION),
            struct.pack("<QQQ", ds.n, ds.dim, ds.class_count),
            ds.labels.astype("<i4").tobytes(),
            ds.features.astype("<f8").tobytes(),
            struct.pack("<HI", ds.quantum or 0, len(name)),
            name,
        ]
    )

    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as f:
            f.write(payload)
    else:
        destination.write(payload)


def load_dataset(source: Union[PathLike, IO[bytes]]) -> Dataset:
    """Read a dataset written by `save_dataset`."""

    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            content = f.read()
        path = str(source)
    else:
        content = source.read()
        path = None

    head = len(CACHE_MAGIC) + 1 + 24
    if len(content) < head:
        raise DataFormatError("file too short for its header", field="header", path=path)
    if content[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise DataFormatError("not a SEPLABDS file", field="magic", path=path)
    (version,) = struct.unpack_from("<B", content, len(CACHE_MAGIC))
    if version != CACHE_VERSION:
        raise DataFormatError(f"unsupported version {version}", field="version", path=path)
    n, d, classes = struct.unpack_from("<QQQ", content, len(CACHE_MAGIC) + 1)

    body = 4 * n + 8 * n * d
    if len(content) < head + body + 6:
        raise DataFormatError("truncated payload", field="payload", path=path)
    labels = np.frombuffer(content, dtype="<i4", count=n, offset=head)
    features = np.frombuffer(content, dtype="<f8", count=n * d, offset=head + 4 * n)
    quantum, name_length = struct.unpack_from("<HI", content, head + body)
    name_start = head + body + 6
    if len(content) < name_start + name_length:
        raise DataFormatError("truncated name", field="name", path=path)
    name = content[name_start : name_start + name_length].decode("utf-8")

    return Dataset(
        features.reshape(n, d),
        labels.astype(np.int64),
        int(classes),
        name=name,
        quantum=quantum or None,
    )


# REMOTE


def fetch(location: str, destination: PathLike, timeout: float = 60.0) -> str:
    """Download a dataset file unless it is already present.

    Gzip payloads are decompressed when the destination does not end in `.gz`.

    Args:
        location (str): URL of the file.
        destination (str): Local path to write.

    Returns:
        str: The destination path.
    """

    destination = str(destination)
    if os.path.exists(destination):
        logger.debug("%s already present, skipping download", destination)
        return destination

    logger.info("Downloading %s", location)
    resp = requests.get(location, timeout=timeout)
    resp.raise_for_status()
    content = resp.content
    if content[:2] == b"\x1f\x8b" and not destination.endswith(".gz"):
        content = gzip.decompress(content)

    directory = os.path.dirname(destination)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(destination, "wb") as f:
        f.write(content)
    return destination
