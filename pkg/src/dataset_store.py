import json
import struct
import zlib
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from datagen import CHANNELS, IMAGE_SIZE, DatasetFormatError, LabeledDataset, Provenance

MAGIC = b"CMDS"
VERSION = 1
# magic, version, channels, height, width, count
HEADER = struct.Struct("<4sHBHHI")
TRAILER = struct.Struct("<I")


class ChecksumError(DatasetFormatError):
    pass


class ContainerVersionError(DatasetFormatError):
    pass


def manifest_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_dataset(ds: LabeledDataset, path: Path) -> tuple[Path, Path]:
    """Write the binary container and its JSON sidecar manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count, channels, height, width = ds.images.shape
    records = np.empty((count, 1 + channels * height * width), dtype=np.uint8)
    records[:, 0] = ds.labels
    records[:, 1:] = ds.images.reshape(count, -1)
    payload = records.tobytes()
    crc = zlib.crc32(payload)

    header = HEADER.pack(MAGIC, VERSION, channels, height, width, count)
    path.write_bytes(header + payload + TRAILER.pack(crc))

    meta = {
        **ds.provenance.model_dump(mode="json"),
        "count": int(count),
        "shape": [int(channels), int(height), int(width)],
        "format_version": VERSION,
        "crc32": crc,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    meta_path = manifest_path(path)
    meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return path, meta_path


def read_manifest(path: Path) -> dict:
    meta_path = manifest_path(path)
    if not meta_path.exists():
        raise DatasetFormatError(f"Dataset manifest not found: {meta_path}")
    return json.loads(meta_path.read_text(encoding="utf-8"))


def read_dataset(path: Path) -> LabeledDataset:
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError(f"Dataset file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size + TRAILER.size:
        raise DatasetFormatError(f"Truncated dataset container: {path}")
    magic, version, channels, height, width, count = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"Bad magic {magic!r} in {path}, expected {MAGIC!r}.")
    if version != VERSION:
        raise ContainerVersionError(f"Unsupported container version {version} in {path}.")

    if (channels, height, width) != (CHANNELS, IMAGE_SIZE, IMAGE_SIZE):
        raise DatasetFormatError(
            f"Dataset container {path} holds {channels}x{height}x{width} images, "
            f"expected {CHANNELS}x{IMAGE_SIZE}x{IMAGE_SIZE}."
        )

    record_size = 1 + channels * height * width
    expected = HEADER.size + count * record_size + TRAILER.size
    if len(raw) != expected:
        raise DatasetFormatError(f"Truncated dataset container {path}: {len(raw)} of {expected} bytes.")
    payload = raw[HEADER.size : -TRAILER.size]
    (crc,) = TRAILER.unpack_from(raw, len(raw) - TRAILER.size)
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"CRC32 mismatch in {path}.")

    meta = read_manifest(path)
    if meta.get("crc32") != crc:
        raise ChecksumError(f"Manifest {manifest_path(path)} does not describe {path}.")
    provenance = Provenance.model_validate(
        {k: meta[k] for k in Provenance.model_fields if k in meta}
    )
    records = np.frombuffer(payload, dtype=np.uint8).reshape(count, record_size)
    images = records[:, 1:].reshape(count, channels, height, width).copy()
    return LabeledDataset(images, records[:, 0].copy(), provenance)
