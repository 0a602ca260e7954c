"""Synthetic multimodal datasets and IDX image-file ingestion.

The toy generator produces aligned digit images across modalities: one fixed
glyph per class, one procedural background texture per modality, and seeded
per-pixel Bernoulli noise, all clamped to [0, 1]. This mirrors the structure
of digit-over-background benchmarks at desk scale with zero external data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .diffgraph import rng_stream
from .errors import IdxFormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

BACKGROUND_SCALE = 0.4

_TAG_TOY_NOISE = 11
_TAG_SPLIT_CLASS = 12
_TAG_SPLIT_ORDER = 13

# 8x8 bitmap font for digits 0-9; '#' marks lit pixels.
_GLYPHS = [
    [
        "..####..",
        ".##..##.",
        ".##..##.",
        ".##..##.",
        ".##..##.",
        ".##..##.",
        "..####..",
        "........",
    ],
    [
        "...##...",
        "..###...",
        "...##...",
        "...##...",
        "...##...",
        "...##...",
        "..####..",
        "........",
    ],
    [
        "..####..",
        ".##..##.",
        ".....##.",
        "....##..",
        "...##...",
        "..##....",
        ".######.",
        "........",
    ],
    [
        "..####..",
        ".##..##.",
        ".....##.",
        "...###..",
        ".....##.",
        ".##..##.",
        "..####..",
        "........",
    ],
    [
        "....##..",
        "...###..",
        "..#.##..",
        ".#..##..",
        ".######.",
        "....##..",
        "....##..",
        "........",
    ],
    [
        ".######.",
        ".##.....",
        ".#####..",
        ".....##.",
        ".....##.",
        ".##..##.",
        "..####..",
        "........",
    ],
    [
        "..####..",
        ".##.....",
        ".#####..",
        ".##..##.",
        ".##..##.",
        ".##..##.",
        "..####..",
        "........",
    ],
    [
        ".######.",
        ".....##.",
        "....##..",
        "...##...",
        "..##....",
        "..##....",
        "..##....",
        "........",
    ],
    [
        "..####..",
        ".##..##.",
        ".##..##.",
        "..####..",
        ".##..##.",
        ".##..##.",
        "..####..",
        "........",
    ],
    [
        "..####..",
        ".##..##.",
        ".##..##.",
        "..#####.",
        ".....##.",
        "....##..",
        "..###...",
        "........",
    ],
]


@dataclass(frozen=True)
class ModalityDescriptor:
    name: str
    dim: int


@dataclass
class MultimodalDataset:
    """Aligned per-modality data arrays with one shared class label per example."""

    modalities: list = field()
    labels: np.ndarray = field()
    descriptors: list = field()

    def __post_init__(self):
        self.modalities = [np.asarray(m, dtype=np.float64) for m in self.modalities]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        counts = {m.shape[0] for m in self.modalities}
        if len(counts) != 1:
            raise ValueError(f"modalities have differing example counts: {sorted(counts)}")
        if self.labels.shape != (self.modalities[0].shape[0],):
            raise ValueError("labels length must match example count")
        if len(self.descriptors) != len(self.modalities):
            raise ValueError("one descriptor per modality required")

    @property
    def num_examples(self) -> int:
        return self.modalities[0].shape[0]

    @property
    def num_modalities(self) -> int:
        return len(self.modalities)

    def take(self, indices) -> "MultimodalDataset":
        indices = np.asarray(indices)
        return MultimodalDataset(
            [m[indices] for m in self.modalities],
            self.labels[indices],
            list(self.descriptors),
        )


@dataclass(frozen=True)
class ToyConfig:
    """Configuration for the synthetic multimodal digit dataset."""

    num_modalities: int
    examples_per_class: int
    classes: int = 10
    resolution: int = 8
    background_ids: tuple = None
    noise_level: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_modalities <= 8:
            raise ValueError("num_modalities must be in 1..8")
        if not 1 <= self.classes <= len(_GLYPHS):
            raise ValueError(f"classes must be in 1..{len(_GLYPHS)}")
        if self.examples_per_class < 1:
            raise ValueError("examples_per_class must be positive")
        if self.resolution < 1:
            raise ValueError("resolution must be positive")
        if not 0.0 <= self.noise_level < 0.5:
            raise ValueError("noise_level must be in [0, 0.5)")
        ids = self.background_ids
        if ids is None:
            ids = tuple(range(self.num_modalities))
        else:
            ids = tuple(int(i) for i in ids)
            if len(ids) != self.num_modalities:
                raise ValueError("background_ids length must equal num_modalities")
        object.__setattr__(self, "background_ids", ids)


def glyph(digit: int, resolution: int = 8) -> np.ndarray:
    """The class glyph as a resolution x resolution float image in {0, 1}."""
    rows = _GLYPHS[digit]
    base = np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows])
    if resolution == 8:
        return base
    idx = (np.arange(resolution) * 8) // resolution
    return base[np.ix_(idx, idx)]


def background(pattern_id: int, resolution: int = 8) -> np.ndarray:
    """Procedural background texture number `pattern_id`, values in [0, 1]."""
    r, c = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
    span = max(resolution - 1, 1)
    center = (resolution - 1) / 2.0
    radius = np.sqrt((r - center) ** 2 + (c - center) ** 2)
    patterns = [
        (r % 2).astype(float),
        ((r + c) % 2).astype(float),
        c / span,
        ((r % 3 == 1) & (c % 3 == 1)).astype(float),
        (radius.astype(int) % 2).astype(float),
        ((r + c) % 3 == 0).astype(float),
        r / span,
        (c % 2).astype(float),
    ]
    return patterns[pattern_id % len(patterns)]


def gen_toy(config: ToyConfig) -> MultimodalDataset:
    """Generate the synthetic aligned multimodal dataset for `config`.

    Every example of class c shares the same glyph; modality m adds its own
    background texture scaled by BACKGROUND_SCALE plus seeded Bernoulli pixel
    noise. Deterministic for a fixed seed.
    """
    res = config.resolution
    dim = res * res
    n = config.classes * config.examples_per_class
    labels = np.repeat(np.arange(config.classes), config.examples_per_class)
    modalities = []
    for m in range(config.num_modalities):
        bg = background(config.background_ids[m], res).reshape(-1)
        data = np.empty((n, dim))
        for cls in range(config.classes):
            base = glyph(cls, res).reshape(-1) + BACKGROUND_SCALE * bg
            rng = rng_stream(config.seed, _TAG_TOY_NOISE, m, cls)
            noise = (
                rng.random((config.examples_per_class, dim)) < config.noise_level
            ).astype(np.float64)
            rows = slice(cls * config.examples_per_class, (cls + 1) * config.examples_per_class)
            data[rows] = np.clip(base[None, :] + noise, 0.0, 1.0)
        modalities.append(data)
    descriptors = [
        ModalityDescriptor(f"mod{m}", dim) for m in range(config.num_modalities)
    ]
    return MultimodalDataset(modalities, labels, descriptors)


def _read_be_u32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise IdxFormatError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path: str, labels_path: str) -> MultimodalDataset:
    """Load a single-modality dataset from IDX image and label files.

    Expects the de-facto layout: big-endian magic 0x00000803 for images
    (count, rows, cols, then raw bytes) and 0x00000801 for labels (count,
    then raw bytes). Pixels are rescaled to [0, 1].
    """
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lbl_buf = f.read()

    magic = _read_be_u32(img_buf, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    n_images = _read_be_u32(img_buf, 4, images_path)
    rows = _read_be_u32(img_buf, 8, images_path)
    cols = _read_be_u32(img_buf, 12, images_path)
    expected = 16 + n_images * rows * cols
    if len(img_buf) < expected:
        raise IdxFormatError(
            f"{images_path}: truncated file ({len(img_buf)} bytes, expected {expected})"
        )
    pixels = np.frombuffer(img_buf, dtype=np.uint8, count=n_images * rows * cols, offset=16)

    magic = _read_be_u32(lbl_buf, 0, labels_path)
    if magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
        )
    n_labels = _read_be_u32(lbl_buf, 4, labels_path)
    if len(lbl_buf) < 8 + n_labels:
        raise IdxFormatError(
            f"{labels_path}: truncated file ({len(lbl_buf)} bytes, expected {8 + n_labels})"
        )
    if n_images != n_labels:
        raise IdxFormatError(
            f"image/label count mismatch: {n_images} images vs {n_labels} labels"
        )
    labels = np.frombuffer(lbl_buf, dtype=np.uint8, count=n_labels, offset=8)

    data = pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    return MultimodalDataset(
        [data], labels.astype(np.int64), [ModalityDescriptor("idx", rows * cols)]
    )


def split(dataset: MultimodalDataset, train_fraction: float, seed: int):
    """Seeded stratified split into (train, test).

    Per-class counts in the train split equal round(fraction * class size), so
    class proportions are preserved within one example.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    train_idx, test_idx = [], []
    for cls in np.unique(dataset.labels):
        cls_idx = np.flatnonzero(dataset.labels == cls)
        perm = rng_stream(seed, _TAG_SPLIT_CLASS, int(cls)).permutation(cls_idx.size)
        n_train = int(round(train_fraction * cls_idx.size))
        shuffled = cls_idx[perm]
        train_idx.extend(shuffled[:n_train])
        test_idx.extend(shuffled[n_train:])
    order = rng_stream(seed, _TAG_SPLIT_ORDER)
    train_idx = np.asarray(train_idx)[order.permutation(len(train_idx))]
    test_idx = np.asarray(test_idx)[order.permutation(len(test_idx))]
    return dataset.take(train_idx), dataset.take(test_idx)
