import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from network import Model, ModelConfig, build_model
from tensor_core import Tensor

MAGIC = b"CMSN"
VERSION = 1


class SnapshotFormatError(RuntimeError):
    pass


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class ModelSnapshot:
    config: ModelConfig
    state: dict[str, Tensor]
    best_val_accuracy: float
    epoch_of_best: int
    history: list[EpochRecord] = field(default_factory=list)
    train_config: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.history:
            best = max(r.val_accuracy for r in self.history)
            if best != self.best_val_accuracy:
                raise ValueError(
                    f"best_val_accuracy {self.best_val_accuracy} is not the history maximum {best}."
                )

    def to_model(self) -> Model:
        model = build_model(self.config)
        model.load_state(self.state)
        return model

    def manifest(self) -> dict:
        return {
            "config": self.config.model_dump(mode="json"),
            "best_val_accuracy": self.best_val_accuracy,
            "epoch_of_best": self.epoch_of_best,
            "history": [r.model_dump() for r in self.history],
            "train_config": self.train_config,
            "data": self.data,
            "parameter_count": int(
                sum(v.size for k, v in self.state.items() if not k.endswith(("running_mean", "running_var")))
            ),
        }


def write_snapshot(snapshot: ModelSnapshot, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = json.dumps(snapshot.manifest(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(manifest)), manifest]
    parts.append(struct.pack("<I", len(snapshot.state)))
    for name in sorted(snapshot.state):
        tensor = np.ascontiguousarray(snapshot.state[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{tensor.ndim}I", tensor.ndim, *tensor.shape))
        parts.append(tensor.tobytes())
    body = b"".join(parts)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise SnapshotFormatError(f"Truncated snapshot: {self.path}")
        chunk = self.raw[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_snapshot(path: Path) -> ModelSnapshot:
    path = Path(path)
    if not path.exists():
        raise SnapshotFormatError(f"Snapshot file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 4 + 6 + 4 or raw[:4] != MAGIC:
        raise SnapshotFormatError(f"Not a snapshot file: {path}")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise SnapshotFormatError(f"CRC32 mismatch in {path}.")

    reader = _Reader(body, path)
    reader.take(4)
    version, manifest_len = reader.unpack("<HI")
    if version != VERSION:
        raise SnapshotFormatError(f"Unsupported snapshot version {version} in {path}.")
    manifest = json.loads(reader.take(manifest_len).decode("utf-8"))
    (count,) = reader.unpack("<I")
    state: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64)) * 4
        state[name] = np.frombuffer(reader.take(size), dtype="<f4").reshape(dims).astype(np.float32)

    return ModelSnapshot(
        config=ModelConfig.model_validate(manifest["config"]),
        state=state,
        best_val_accuracy=manifest["best_val_accuracy"],
        epoch_of_best=manifest["epoch_of_best"],
        history=[EpochRecord.model_validate(r) for r in manifest["history"]],
        train_config=manifest.get("train_config", {}),
        data=manifest.get("data", {}),
    )
