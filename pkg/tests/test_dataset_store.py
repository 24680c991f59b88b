import json
import struct

import numpy.testing as npt
import pytest

from conftest import colorized
from datagen import ColorScheme, DatasetFormatError
from dataset_store import (
    HEADER,
    ChecksumError,
    ContainerVersionError,
    manifest_path,
    read_dataset,
    read_manifest,
    write_dataset,
)


@pytest.fixture
def stored(tmp_path):
    ds = colorized(25, ColorScheme.HORIZONTAL_THIRDS, seed=3)
    path, meta_path = write_dataset(ds, tmp_path / "out" / "MD3_train.cmds")
    return ds, path, meta_path


def test_write_then_read(stored):
    ds, path, meta_path = stored
    assert meta_path == manifest_path(path) == path.with_name("MD3_train.cmds.json")
    back = read_dataset(path)
    npt.assert_array_equal(back.images, ds.images)
    npt.assert_array_equal(back.labels, ds.labels)
    assert back.provenance == ds.provenance


def test_manifest_contents(stored):
    ds, path, _ = stored
    meta = read_manifest(path)
    assert meta["count"] == 25
    assert meta["shape"] == [3, 32, 32]
    assert meta["scheme"] == "HorizontalThirds"
    assert meta["seed"] == 3
    assert meta["format_version"] == 1
    assert isinstance(meta["crc32"], int)


def test_same_dataset_same_bytes(tmp_path):
    a, _ = write_dataset(colorized(10, ColorScheme.RANDOM_SINGLE_CHANNEL, 1), tmp_path / "a.cmds")
    b, _ = write_dataset(colorized(10, ColorScheme.RANDOM_SINGLE_CHANNEL, 1), tmp_path / "b.cmds")
    assert a.read_bytes() == b.read_bytes()


def test_truncated_container(stored):
    _, path, _ = stored
    path.write_bytes(path.read_bytes()[:-50])
    with pytest.raises(DatasetFormatError, match="Truncated"):
        read_dataset(path)


def test_corrupted_payload(stored):
    _, path, _ = stored
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        read_dataset(path)


def test_unknown_version(stored):
    _, path, _ = stored
    raw = bytearray(path.read_bytes())
    raw[4:6] = struct.pack("<H", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerVersionError):
        read_dataset(path)


def test_bad_magic(stored):
    _, path, _ = stored
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(DatasetFormatError, match="magic"):
        read_dataset(path)


def test_manifest_must_match_container(stored):
    _, path, meta_path = stored
    meta = json.loads(meta_path.read_text())
    meta["crc32"] += 1
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(ChecksumError, match="Manifest"):
        read_dataset(path)


def test_missing_manifest_or_file(stored, tmp_path):
    _, path, meta_path = stored
    with pytest.raises(DatasetFormatError, match="not found"):
        read_dataset(tmp_path / "nope.cmds")
    meta_path.unlink()
    with pytest.raises(DatasetFormatError, match="manifest"):
        read_dataset(path)


def test_sibling_containers_keep_separate_manifests(tmp_path):
    train = colorized(12, ColorScheme.GREEN_ONLY, seed=1)
    val = colorized(8, ColorScheme.GREEN_ONLY, seed=1, image_seed=2)
    _, train_meta = write_dataset(train, tmp_path / "MD1.train")
    _, val_meta = write_dataset(val, tmp_path / "MD1.val")
    assert train_meta != val_meta
    assert len(read_dataset(tmp_path / "MD1.train")) == 12
    assert len(read_dataset(tmp_path / "MD1.val")) == 8


@pytest.mark.parametrize("shape", [(1, 64, 48), (4, 32, 32), (3, 28, 28)])
def test_rejects_containers_of_the_wrong_image_shape(stored, shape):
    _, path, _ = stored
    raw = path.read_bytes()
    _, version, *_, count = HEADER.unpack_from(raw)
    path.write_bytes(HEADER.pack(b"CMDS", version, *shape, count) + raw[HEADER.size :])
    with pytest.raises(DatasetFormatError, match="expected 3x32x32"):
        read_dataset(path)
