import gzip
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Literal

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel
from scipy.stats import chi2_contingency

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SOURCE_SIZE = 28
IMAGE_SIZE = 32
PAD = (IMAGE_SIZE - SOURCE_SIZE) // 2
CHANNELS = 3
CLASSES = 10
VAL_SIZE = 5000
# Row (or column) bands for HorizontalThirds; the remainder goes to the last band.
BAND_EDGES = (0, 11, 22, 32)
CHUNK_SIZE = 2048

Source = Literal["mnist", "fashionmnist"]
Split = Literal["train", "val", "test"]
BandAxis = Literal["rows", "columns"]

SOURCES: tuple[str, ...] = ("mnist", "fashionmnist")
IDX_PREFIX = {"train": "train", "val": "train", "test": "t10k"}


class DatasetFormatError(RuntimeError):
    pass


class ColorScheme(str, Enum):
    GREEN_ONLY = "GreenOnly"
    RANDOM_SINGLE_CHANNEL = "RandomSingleChannel"
    HORIZONTAL_THIRDS = "HorizontalThirds"

    @classmethod
    def from_alias(cls, alias: str) -> "ColorScheme":
        key = alias.strip().lower()
        if key in SCHEME_ALIASES:
            return SCHEME_ALIASES[key]
        for scheme in cls:
            if scheme.value.lower() == key:
                return scheme
        raise ValueError(f"Unknown colour scheme '{alias}'. Use one of: {', '.join(SCHEME_ALIASES)}.")

    @property
    def alias(self) -> str:
        return next(k for k, v in SCHEME_ALIASES.items() if v is self)

    @property
    def position(self) -> int:
        return list(ColorScheme).index(self) + 1


SCHEME_ALIASES = {
    "green": ColorScheme.GREEN_ONLY,
    "single": ColorScheme.RANDOM_SINGLE_CHANNEL,
    "thirds": ColorScheme.HORIZONTAL_THIRDS,
}


def dataset_id(source: str, scheme: ColorScheme) -> str:
    return f"{'M' if source == 'mnist' else 'F'}D{scheme.position}"


class Provenance(BaseModel):
    source: Source
    split: Split
    scheme: ColorScheme
    seed: int
    band_axis: BandAxis = "rows"
    limit: int | None = None

    @property
    def dataset_id(self) -> str:
        return dataset_id(self.source, self.scheme)


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # [N, 3, 32, 32] uint8
    labels: np.ndarray  # [N] uint8
    provenance: Provenance

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels."
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def channels(self) -> int:
        return int(self.images.shape[1])

    def head(self, n: int) -> "LabeledDataset":
        if n <= 0 or n > len(self):
            raise ValueError(f"Subset size must be in [1, {len(self)}], got {n}.")
        provenance = self.provenance.model_copy(update={"limit": n})
        return LabeledDataset(self.images[:n], self.labels[:n], provenance)

    def class_counts(self, classes: int = CLASSES) -> np.ndarray:
        return np.bincount(self.labels, minlength=classes)


# ---------------------------------------------------------------------------
# IDX ingest


def _open_idx(path: Path) -> bytes:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"IDX file not found: {path}")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _check_header(raw: bytes, path: Path, magic: int, fields: int) -> tuple[int, ...]:
    size = 4 * (fields + 1)
    if len(raw) < size:
        raise DatasetFormatError(f"Truncated IDX header in {path}.")
    found, *dims = struct.unpack(f">{fields + 1}I", raw[:size])
    if found != magic:
        raise DatasetFormatError(f"Bad magic 0x{found:08x} in {path}, expected 0x{magic:08x}.")
    return tuple(dims)


def read_idx(images_path: Path, labels_path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read an IDX image/label pair into ([N, 1, 28, 28] uint8, [N] uint8)."""
    raw_images = _open_idx(images_path)
    raw_labels = _open_idx(labels_path)
    count, rows, cols = _check_header(raw_images, images_path, IMAGE_MAGIC, 3)
    (label_count,) = _check_header(raw_labels, labels_path, LABEL_MAGIC, 1)
    if (rows, cols) != (SOURCE_SIZE, SOURCE_SIZE):
        raise DatasetFormatError(f"Expected 28x28 images in {images_path}, got {rows}x{cols}.")
    if count != label_count:
        raise DatasetFormatError(
            f"Image count {count} in {images_path} != label count {label_count} in {labels_path}."
        )
    pixels = raw_images[16:]
    labels = raw_labels[8:]
    if len(pixels) < count * rows * cols or len(labels) < count:
        raise DatasetFormatError(f"Truncated IDX payload in {images_path} / {labels_path}.")
    images = np.frombuffer(pixels, dtype=np.uint8, count=count * rows * cols)
    return images.reshape(count, 1, rows, cols), np.frombuffer(labels, dtype=np.uint8, count=count)


def locate_idx(data_dir: Path, source: str, split: str) -> tuple[Path, Path]:
    if source not in SOURCES:
        raise ValueError(f"Unknown source '{source}'. Use one of: {', '.join(SOURCES)}.")
    prefix = IDX_PREFIX[split]
    found = []
    for kind in ("images-idx3", "labels-idx1"):
        stem = Path(data_dir) / source / f"{prefix}-{kind}-ubyte"
        candidates = [stem, stem.with_name(stem.name + ".gz")]
        path = next((p for p in candidates if p.exists()), None)
        if path is None:
            raise DatasetFormatError(f"IDX file not found: {stem}[.gz]")
        found.append(path)
    return found[0], found[1]


# ---------------------------------------------------------------------------
# Colorization


def derive_rng(seed: int, index: int) -> np.random.Generator:
    """Per-image PCG64 stream keyed on (seed, index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _require_single_channel(img: np.ndarray, size: int) -> None:
    if img.shape != (1, size, size):
        raise DatasetFormatError(f"Expected a [1, {size}, {size}] image, got {img.shape}.")


def pad_to_32(img: np.ndarray) -> np.ndarray:
    _require_single_channel(img, SOURCE_SIZE)
    return np.pad(img, ((0, 0), (PAD, PAD), (PAD, PAD)))


def colorize_green(img: np.ndarray) -> np.ndarray:
    _require_single_channel(img, IMAGE_SIZE)
    out = np.zeros((CHANNELS, IMAGE_SIZE, IMAGE_SIZE), dtype=img.dtype)
    out[1] = img[0]
    return out


def colorize_single_random(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    _require_single_channel(img, IMAGE_SIZE)
    out = np.zeros((CHANNELS, IMAGE_SIZE, IMAGE_SIZE), dtype=img.dtype)
    out[rng.integers(CHANNELS)] = img[0]
    return out


def colorize_thirds(
    img: np.ndarray, rng: np.random.Generator, band_axis: BandAxis = "rows"
) -> np.ndarray:
    _require_single_channel(img, IMAGE_SIZE)
    out = np.zeros((CHANNELS, IMAGE_SIZE, IMAGE_SIZE), dtype=img.dtype)
    permutation = rng.permutation(CHANNELS)
    for band, channel in enumerate(permutation):
        lo, hi = BAND_EDGES[band], BAND_EDGES[band + 1]
        if band_axis == "rows":
            out[channel, lo:hi, :] = img[0, lo:hi, :]
        else:
            out[channel, :, lo:hi] = img[0, :, lo:hi]
    return out


def colorize(
    img: np.ndarray, scheme: ColorScheme, rng: np.random.Generator, band_axis: BandAxis = "rows"
) -> np.ndarray:
    if scheme is ColorScheme.GREEN_ONLY:
        return colorize_green(img)
    if scheme is ColorScheme.RANDOM_SINGLE_CHANNEL:
        return colorize_single_random(img, rng)
    return colorize_thirds(img, rng, band_axis)


def _colorize_chunk(
    images: np.ndarray, start: int, scheme: ColorScheme, seed: int, band_axis: BandAxis
) -> np.ndarray:
    out = np.empty((len(images), CHANNELS, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    for offset, img in enumerate(images):
        out[offset] = colorize(pad_to_32(img), scheme, derive_rng(seed, start + offset), band_axis)
    return out


def _split_range(split: str, count: int, val_size: int) -> range:
    if split == "test":
        return range(count)
    if count <= val_size:
        raise DatasetFormatError(
            f"Training file holds {count} images, too few to hold out {val_size} for validation."
        )
    if split == "train":
        return range(count - val_size)
    return range(count - val_size, count)


def build_dataset(
    source: Source,
    split: Split,
    scheme: ColorScheme,
    seed: int,
    data_dir: Path,
    *,
    band_axis: BandAxis = "rows",
    limit: int | None = None,
    val_size: int = VAL_SIZE,
    n_jobs: int = 1,
) -> LabeledDataset:
    """Colorize one split of an IDX source.

    Train and val share the official training file: the last `val_size`
    images are validation. Each image's random stream is derived from
    (seed, index in the source file), so any subset or chunking yields the
    same bytes.
    """
    images_path, labels_path = locate_idx(data_dir, source, split)
    gray, labels = read_idx(images_path, labels_path)
    indices = _split_range(split, len(gray), val_size)
    if limit is not None:
        if limit <= 0 or limit > len(indices):
            raise ValueError(f"limit must be in [1, {len(indices)}], got {limit}.")
        indices = indices[:limit]

    starts = range(indices.start, indices.stop, CHUNK_SIZE)
    chunks = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_colorize_chunk)(
            gray[start : min(start + CHUNK_SIZE, indices.stop)], start, scheme, seed, band_axis
        )
        for start in starts
    )
    colored = np.concatenate(chunks) if chunks else np.empty((0, CHANNELS, IMAGE_SIZE, IMAGE_SIZE), np.uint8)
    provenance = Provenance(
        source=source, split=split, scheme=scheme, seed=seed, band_axis=band_axis, limit=limit
    )
    return LabeledDataset(colored, np.array(labels[indices.start : indices.stop]), provenance)


def to_batch(images: np.ndarray) -> np.ndarray:
    return images.astype(np.float32) / 255.0


# ---------------------------------------------------------------------------
# Audit


@dataclass(frozen=True)
class IndependenceAudit:
    statistic: float
    p_value: float
    table: np.ndarray  # [channel, class]

    def independent(self, alpha: float = 0.01) -> bool:
        return self.p_value >= alpha


def channel_choice(ds: LabeledDataset) -> np.ndarray:
    """Channel carrying each image's intensity; -1 for blank images."""
    totals = ds.images.reshape(len(ds), CHANNELS, -1).sum(axis=2, dtype=np.int64)
    choice = totals.argmax(axis=1)
    choice[totals.max(axis=1) == 0] = -1
    return choice


def independence_audit(ds: LabeledDataset, classes: int = CLASSES) -> IndependenceAudit:
    choice = channel_choice(ds)
    keep = choice >= 0
    table = np.zeros((CHANNELS, classes), dtype=np.int64)
    np.add.at(table, (choice[keep], ds.labels[keep].astype(np.int64)), 1)
    table = table[:, table.sum(axis=0) > 0]
    statistic, p_value, _, _ = chi2_contingency(table)
    return IndependenceAudit(float(statistic), float(p_value), table)
