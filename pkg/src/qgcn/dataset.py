"""MNIST IDX ingestion and the 3-vs-6 patch-graph dataset."""

from __future__ import annotations

import gzip
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .model import Graph

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
IMAGE_SIDE = 28

# 2x2 patch layout, numbered clockwise from the top-left.
PATCH_SLICES = {
    0: (slice(0, 4), slice(0, 4)),
    1: (slice(0, 4), slice(4, 8)),
    2: (slice(4, 8), slice(4, 8)),
    3: (slice(4, 8), slice(0, 4)),
}
SIDE_ADJACENT = ((0, 1), (1, 2), (2, 3), (0, 3))

ARTIFACT_MAGIC = b"QGCNDATA"
ARTIFACT_VERSION = 1


class IdxFormatError(ValueError):
    """Malformed IDX container."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class InsufficientSamplesError(ValueError):
    pass


class ArtifactError(ValueError):
    """Dataset artifact is unreadable or has an unsupported version."""


@dataclass(frozen=True)
class RawImage:
    pixels: np.ndarray
    label: int

    def __post_init__(self):
        if self.pixels.shape != (IMAGE_SIDE, IMAGE_SIDE):
            raise ValueError(f"expected a {IMAGE_SIDE}x{IMAGE_SIDE} image, got {self.pixels.shape}")
        if not 0 <= self.label <= 9:
            raise ValueError(f"label {self.label} outside 0-9")


def _read(stream) -> bytes:
    data = bytes(stream) if isinstance(stream, (bytes, bytearray, memoryview)) else stream.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _header(data: bytes, n_fields: int, what: str) -> tuple[int, ...]:
    need = 4 * n_fields
    if len(data) < need:
        raise TruncatedError(f"{what}: header needs {need} bytes, file has {len(data)} (offset {len(data)})")
    return struct.unpack(f">{n_fields}I", data[:need])


def parse_idx_arrays(images_file: BinaryIO | bytes, labels_file: BinaryIO | bytes) -> tuple[np.ndarray, np.ndarray]:
    """Decode an IDX image/label pair into ``(count, rows, cols)`` uint8 and ``(count,)`` uint8."""
    img = _read(images_file)
    lab = _read(labels_file)

    (magic,) = _header(img, 1, "images")
    if magic != IMAGES_MAGIC:
        raise BadMagicError(f"images: magic 0x{magic:08x} at offset 0, expected 0x{IMAGES_MAGIC:08x}")
    _, count, rows, cols = _header(img, 4, "images")
    need = 16 + count * rows * cols
    if len(img) < need:
        raise TruncatedError(f"images: payload ends at offset {len(img)}, expected {need} bytes for {count} images")

    (magic,) = _header(lab, 1, "labels")
    if magic != LABELS_MAGIC:
        raise BadMagicError(f"labels: magic 0x{magic:08x} at offset 0, expected 0x{LABELS_MAGIC:08x}")
    _, n_labels = _header(lab, 2, "labels")
    if n_labels != count:
        raise CountMismatchError(f"images header (offset 4) says {count} items, labels header (offset 4) says {n_labels}")
    if len(lab) < 8 + n_labels:
        raise TruncatedError(f"labels: payload ends at offset {len(lab)}, expected {8 + n_labels} bytes")

    images = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_labels, offset=8)
    return images, labels


def parse_idx(images_file: BinaryIO | bytes, labels_file: BinaryIO | bytes) -> list[RawImage]:
    images, labels = parse_idx_arrays(images_file, labels_file)
    return [RawImage(images[i], int(labels[i])) for i in range(len(labels))]


def load_idx(images_path: str | Path, labels_path: str | Path) -> list[RawImage]:
    with open(images_path, "rb") as fi, open(labels_path, "rb") as fl:
        return parse_idx(fi, fl)


def write_idx(images: np.ndarray, labels: Sequence[int]) -> tuple[bytes, bytes]:
    """Encode uint8 images and labels as IDX bytes (used for fixtures and conversions)."""
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    img = struct.pack(">4I", IMAGES_MAGIC, count, rows, cols) + images.tobytes()
    lab = struct.pack(">2I", LABELS_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
    return img, lab


def downsample_8x8(image: RawImage | np.ndarray) -> np.ndarray:
    """Zero pad 28x28 to 32x32, average 4x4 blocks, scale to [0, 1]."""
    px = image.pixels if isinstance(image, RawImage) else np.asarray(image)
    padded = np.pad(px.astype(float), 2)
    return padded.reshape(8, 4, 8, 4).mean(axis=(1, 3)) / 255.0


def patchify(grid: np.ndarray) -> list[np.ndarray]:
    """Four 16-long row-major vectors: 0 top-left, 1 top-right, 2 bottom-right, 3 bottom-left."""
    grid = np.asarray(grid, dtype=float)
    if grid.shape != (8, 8):
        raise ValueError(f"expected an 8x8 grid, got {grid.shape}")
    return [grid[PATCH_SLICES[p]].reshape(16) for p in range(4)]


def _check_selection(ids: Sequence[int]) -> tuple[int, ...]:
    ids = tuple(int(i) for i in ids)
    if len(set(ids)) != len(ids) or any(not 0 <= i <= 3 for i in ids):
        raise ValueError(f"patch ids must be distinct values in 0..3, got {ids}")
    return tuple(sorted(ids))


def patch_edges(ids: Sequence[int]) -> list[tuple[int, int]]:
    """Side-adjacent pairs among the selected patches, in patch-id terms."""
    chosen = set(_check_selection(ids))
    return [p for p in SIDE_ADJACENT if set(p) <= chosen]


def node_edges(ids: Sequence[int]) -> list[tuple[int, int]]:
    """:func:`patch_edges` re-expressed as node indices (nodes ordered by patch id)."""
    ids = _check_selection(ids)
    pos = {p: i for i, p in enumerate(ids)}
    return sorted(tuple(sorted((pos[a], pos[b]))) for a, b in patch_edges(ids))


def build_graph(ids: Sequence[int], patches: Sequence[np.ndarray]) -> Graph:
    ids = _check_selection(ids)
    feats = np.stack([np.asarray(patches[p], dtype=float) for p in ids])
    return Graph(feats, tuple(node_edges(ids)), ids)


def image_features(images: np.ndarray, ids: Sequence[int]) -> np.ndarray:
    """``(count, n_nodes, 16)`` node features for a stack of 28x28 images."""
    ids = _check_selection(ids)
    padded = np.pad(np.asarray(images, dtype=float), ((0, 0), (2, 2), (2, 2)))
    grids = padded.reshape(-1, 8, 4, 8, 4).mean(axis=(2, 4)) / 255.0
    return np.stack([grids[:, rs, cs].reshape(len(grids), 16) for rs, cs in (PATCH_SLICES[p] for p in ids)], axis=1)


@dataclass
class SampleSet:
    features: np.ndarray  # (count, n_nodes, 16), values in [0, 1]
    labels: np.ndarray  # (count,), +1 / -1
    source_indices: np.ndarray
    split: str
    node_selection: tuple[int, ...]
    seed: int
    edges: tuple[tuple[int, int], ...] = field(default=())

    def __len__(self) -> int:
        return len(self.labels)

    def graph(self, i: int) -> Graph:
        return Graph(self.features[i], self.edges, self.node_selection)

    @property
    def samples(self) -> list[tuple[Graph, int]]:
        return [(self.graph(i), int(self.labels[i])) for i in range(len(self))]

    def class_counts(self) -> dict[int, int]:
        return {1: int(np.sum(self.labels == 1)), -1: int(np.sum(self.labels == -1))}


def build_sampleset(
    raw: Sequence[RawImage],
    node_selection: Sequence[int] = (0, 2, 3),
    seed: int = 0,
    sizes: tuple[int, int] = (480, 120),
    digits: tuple[int, int] = (3, 6),
    balanced: bool = True,
) -> tuple[SampleSet, SampleSet]:
    """Seeded disjoint train/test draw of the two digits; first digit is +1.

    Images whose selected patches include an all-zero one are never drawn,
    since a zero vector cannot be amplitude encoded.
    """
    ids = _check_selection(node_selection)
    n_train, n_test = sizes
    labels = np.array([r.label for r in raw])
    wanted = np.flatnonzero(np.isin(labels, digits))
    images = np.stack([raw[i].pixels for i in wanted]) if len(wanted) else np.zeros((0, 28, 28))
    feats = image_features(images, ids)
    usable = np.all(feats.sum(axis=2) > 0, axis=1)
    wanted, feats = wanted[usable], feats[usable]
    sign = np.where(labels[wanted] == digits[0], 1, -1)

    rng = np.random.default_rng(seed)
    if balanced:
        if n_train % 2 or n_test % 2:
            raise ValueError("balanced splits need even sizes")
        train_pick, test_pick = [], []
        for s in (1, -1):
            pool = np.flatnonzero(sign == s)
            need = (n_train + n_test) // 2
            if len(pool) < need:
                raise InsufficientSamplesError(f"digit {digits[0] if s == 1 else digits[1]}: need {need}, have {len(pool)}")
            chosen = rng.choice(pool, size=need, replace=False)
            train_pick.append(chosen[: n_train // 2])
            test_pick.append(chosen[n_train // 2 :])
        train_idx = rng.permutation(np.concatenate(train_pick))
        test_idx = rng.permutation(np.concatenate(test_pick))
    else:
        if len(sign) < n_train + n_test:
            raise InsufficientSamplesError(f"need {n_train + n_test} images of digits {digits}, have {len(sign)}")
        chosen = rng.choice(len(sign), size=n_train + n_test, replace=False)
        train_idx, test_idx = chosen[:n_train], chosen[n_train:]

    edges = tuple(node_edges(ids))

    def subset(idx, split):
        return SampleSet(feats[idx], sign[idx].astype(np.int8), wanted[idx].astype(np.int64), split, ids, seed, edges)

    return subset(train_idx, "train"), subset(test_idx, "test")


def write_artifact(path: str | Path, train: SampleSet, test: SampleSet, extra: dict | None = None) -> None:
    """Versioned binary container: magic, version, JSON header, then raw little-endian arrays."""
    header = {
        "format_version": ARTIFACT_VERSION,
        "seed": int(train.seed),
        "node_selection": list(train.node_selection),
        "edges": [list(e) for e in train.edges],
        "counts": {"train": len(train), "test": len(test)},
        "feature_shape": list(train.features.shape[1:]),
        **(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(ARTIFACT_MAGIC)
    buf.write(struct.pack("<II", ARTIFACT_VERSION, len(blob)))
    buf.write(blob)
    for s in (train, test):
        buf.write(s.source_indices.astype("<i8").tobytes())
        buf.write(s.labels.astype("i1").tobytes())
        buf.write(s.features.astype("<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_artifact(path: str | Path) -> tuple[SampleSet, SampleSet, dict]:
    data = Path(path).read_bytes()
    try:
        return _decode_artifact(data, path)
    except (struct.error, ValueError, KeyError, TypeError) as e:
        if isinstance(e, ArtifactError):
            raise
        raise ArtifactError(f"{path}: malformed or truncated artifact ({e})") from e


def _decode_artifact(data: bytes, path) -> tuple[SampleSet, SampleSet, dict]:
    if data[: len(ARTIFACT_MAGIC)] != ARTIFACT_MAGIC:
        raise ArtifactError(f"{path}: not a dataset artifact")
    pos = len(ARTIFACT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, pos)
    if version != ARTIFACT_VERSION:
        raise ArtifactError(f"{path}: artifact version {version}, this build reads {ARTIFACT_VERSION}")
    pos += 8
    header = json.loads(data[pos : pos + hlen])
    pos += hlen
    shape = tuple(header["feature_shape"])
    ids = tuple(header["node_selection"])
    edges = tuple(tuple(e) for e in header["edges"])
    sets = []
    for split in ("train", "test"):
        n = header["counts"][split]
        src = np.frombuffer(data, "<i8", n, pos)
        pos += 8 * n
        lab = np.frombuffer(data, "i1", n, pos)
        pos += n
        size = n * int(np.prod(shape))
        feats = np.frombuffer(data, "<f8", size, pos).reshape((n,) + shape)
        pos += 8 * size
        sets.append(SampleSet(feats.copy(), lab.copy(), src.copy(), split, ids, header["seed"], edges))
    if pos != len(data):
        raise ArtifactError(f"{path}: {len(data) - pos} trailing bytes")
    return sets[0], sets[1], header
