import gzip
import os
import struct
import sys
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from datagen import (  # noqa: E402
    ColorScheme,
    LabeledDataset,
    Provenance,
    colorize,
    derive_rng,
    pad_to_32,
)
from network import ModelConfig  # noqa: E402

SMALL_CONV = (4, 8, 8)
SMALL_DENSE = (16, 16)


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    with threadpool_limits(limits=1):
        yield


def digits(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class-structured 28x28 images: label k lights a 6x6 patch at a k-specific spot."""
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 10).astype(np.uint8)
    images = rng.integers(0, 20, size=(n, 1, 28, 28), dtype=np.uint8)
    for i, label in enumerate(labels):
        row = 3 + (label // 5) * 12
        col = 1 + (label % 5) * 5
        images[i, 0, row : row + 6, col : col + 6] = rng.integers(150, 256, size=(6, 6))
    return images, labels


def write_idx(images: np.ndarray, labels: np.ndarray, images_path: Path, labels_path: Path) -> None:
    header = struct.pack(">4I", 0x00000803, len(images), 28, 28) + images.tobytes()
    label_bytes = struct.pack(">2I", 0x00000801, len(labels)) + labels.tobytes()
    for path, raw in ((images_path, header), (labels_path, label_bytes)):
        if path.suffix == ".gz":
            with gzip.open(path, "wb") as f:
                f.write(raw)
        else:
            path.write_bytes(raw)


@pytest.fixture
def raw_dir(tmp_path) -> Path:
    """IDX tree with 300 training (plain) and 60 test (gzipped) images per source."""
    root = tmp_path / "raw"
    for offset, source in enumerate(("mnist", "fashionmnist")):
        folder = root / source
        folder.mkdir(parents=True)
        train_images, train_labels = digits(300, seed=10 + offset)
        write_idx(
            train_images,
            train_labels,
            folder / "train-images-idx3-ubyte",
            folder / "train-labels-idx1-ubyte",
        )
        test_images, test_labels = digits(60, seed=20 + offset)
        write_idx(
            test_images,
            test_labels,
            folder / "t10k-images-idx3-ubyte.gz",
            folder / "t10k-labels-idx1-ubyte.gz",
        )
    return root


def colorized(
    n: int, scheme: ColorScheme = ColorScheme.GREEN_ONLY, seed: int = 0, image_seed: int = 0
) -> LabeledDataset:
    gray, labels = digits(n, seed=image_seed)
    images = np.stack(
        [colorize(pad_to_32(img), scheme, derive_rng(seed, i)) for i, img in enumerate(gray)]
    )
    provenance = Provenance(source="mnist", split="train", scheme=scheme, seed=seed)
    return LabeledDataset(images, labels, provenance)


@pytest.fixture
def small_config():
    def make(**overrides) -> ModelConfig:
        return ModelConfig(**{"conv_widths": SMALL_CONV, "dense_widths": SMALL_DENSE, **overrides})

    return make


ENV_KEYS = ("CHROMA_DATA_DIR", "CHROMA_OUT_DIR", "CHROMA_THREADS", "CHROMA_PROGRESS")


@pytest.fixture
def clean_env(monkeypatch, tmp_path):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)
    monkeypatch.chdir(tmp_path)


REAL_DATA_DIR = Path(os.getenv("CHROMA_DATA_DIR", "data/raw")).resolve()


def _has_idx(source: str) -> bool:
    folder = REAL_DATA_DIR / source
    return all(
        (folder / name).exists() or (folder / f"{name}.gz").exists()
        for name in ("train-labels-idx1-ubyte", "t10k-labels-idx1-ubyte")
    )


requires_mnist = pytest.mark.skipif(not _has_idx("mnist"), reason="MNIST IDX files not available")
