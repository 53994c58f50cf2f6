"""Tests for dataset containers."""

import json

import numpy as np
import pytest

from flowrecon import dataset as dataset_module
from flowrecon.const import CONTAINER_FORMAT
from flowrecon.dataset import (
    MANIFEST,
    Dataset,
    read_container,
    read_manifest,
    update_container,
    write_container,
)
from flowrecon.models import ContainerError


@pytest.fixture
def sample_dataset(rng):
    shape = (4, 2, 3, 4, 5, 6)
    kspace = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex64)
    return Dataset(
        arrays={
            "kspace": kspace,
            "mask": rng.random((4, 3, 4, 5)) < 0.5,
            "coils": (rng.standard_normal((2, 4, 5, 6)) + 0j).astype(np.complex64),
            "truth_magnitude": rng.random((3, 4, 5, 6)).astype(np.float32),
            "segmentation": np.zeros((4, 5, 6), dtype=bool),
        },
        attributes={"venc": 150.0, "acceleration": 2.5, "phantom": {"nx": 6}},
    )


def test_round_trip_is_bitwise(tmp_path, sample_dataset):
    path = tmp_path / "case"
    write_container(path, sample_dataset)
    loaded = read_container(path)
    assert set(loaded.arrays) == set(sample_dataset.arrays)
    for role, array in sample_dataset.arrays.items():
        assert loaded.arrays[role].dtype == array.dtype
        assert loaded.arrays[role].tobytes() == array.tobytes()
    assert loaded.attributes == sample_dataset.attributes


def test_manifest_names_axes(tmp_path, sample_dataset):
    path = tmp_path / "case"
    write_container(path, sample_dataset)
    manifest = read_manifest(path)
    assert manifest["format"] == CONTAINER_FORMAT
    entries = {entry["role"]: entry for entry in manifest["arrays"]}
    assert entries["kspace"]["dims"] == ["enc", "coil", "t", "z", "y", "x"]
    assert entries["kspace"]["dtype"] == "complex64"
    assert entries["mask"]["dtype"] == "uint8"
    assert entries["coils"]["dims"] == ["coil", "z", "y", "x"]


def test_single_encoding_kspace_drops_leading_axis(tmp_path, rng):
    kspace = np.ones((2, 3, 4, 5, 6), dtype=np.complex64)
    write_container(tmp_path / "case", Dataset(arrays={"kspace": kspace, "mask": np.ones((3, 4, 5), bool)}))
    manifest = read_manifest(tmp_path / "case")
    dims = {entry["role"]: entry["dims"] for entry in manifest["arrays"]}
    assert dims == {"kspace": ["coil", "t", "z", "y", "x"], "mask": ["t", "z", "y"]}


def test_partial_read(tmp_path, sample_dataset):
    write_container(tmp_path / "case", sample_dataset)
    loaded = read_container(tmp_path / "case", roles=("mask", "coils"))
    assert set(loaded.arrays) == {"mask", "coils"}


def test_accessors(tmp_path, sample_dataset):
    write_container(tmp_path / "case", sample_dataset)
    loaded = read_container(tmp_path / "case")
    b = loaded.kspace_data()
    assert b.has_encodings
    assert b.mask.dtype == bool
    assert loaded.coil_set().nc == 2
    assert loaded.encoding().venc == 150.0
    with pytest.raises(ContainerError, match="truth_velocity"):
        loaded.truth()


def test_missing_venc():
    with pytest.raises(ContainerError):
        Dataset().encoding()


def test_unknown_role():
    with pytest.raises(ContainerError):
        Dataset(arrays={"velocity": np.zeros(3)})
    with pytest.raises(ContainerError):
        Dataset(arrays={"segmentation": np.zeros((1, 2, 3, 4))})


def test_missing_container(tmp_path):
    with pytest.raises(ContainerError, match="manifest"):
        read_container(tmp_path / "nothing")


def test_invalid_manifest(tmp_path, sample_dataset):
    path = tmp_path / "case"
    write_container(path, sample_dataset)
    (path / MANIFEST).write_text("{not json")
    with pytest.raises(ContainerError):
        read_container(path)
    (path / MANIFEST).write_text(json.dumps({"format": "other/1", "arrays": []}))
    with pytest.raises(ContainerError):
        read_container(path)
    (path / MANIFEST).write_text(
        json.dumps(
            {
                "format": CONTAINER_FORMAT,
                "arrays": [{"role": "noise", "file": "n.bin", "dims": ["x"], "shape": [1], "dtype": "uint8"}],
            }
        )
    )
    with pytest.raises(ContainerError):
        read_container(path)


def test_size_mismatch(tmp_path, sample_dataset):
    path = tmp_path / "case"
    write_container(path, sample_dataset)
    data = (path / "coils.bin").read_bytes()
    (path / "coils.bin").write_bytes(data[:-8])
    with pytest.raises(ContainerError, match="coils"):
        read_container(path)


def test_replacement_leaves_no_staging(tmp_path, sample_dataset):
    path = tmp_path / "case"
    write_container(path, sample_dataset)
    write_container(path, Dataset(arrays={"segmentation": np.ones((4, 5, 6), dtype=bool)}))
    assert [p.name for p in tmp_path.iterdir()] == ["case"]
    assert set(read_container(path).arrays) == {"segmentation"}


def test_failed_write_keeps_old_container(tmp_path, sample_dataset, monkeypatch):
    path = tmp_path / "case"
    write_container(path, sample_dataset)

    def boom(*args, **kwargs):
        raise OSError("disk full")

    monkeypatch.setattr(dataset_module.json, "dumps", boom)
    with pytest.raises(OSError):
        write_container(path, Dataset(arrays={"segmentation": np.ones((4, 5, 6), dtype=bool)}))
    monkeypatch.undo()
    assert [p.name for p in tmp_path.iterdir()] == ["case"]
    assert set(read_container(path).arrays) == set(sample_dataset.arrays)


def test_update_container(tmp_path, sample_dataset):
    path = tmp_path / "case"
    write_container(path, sample_dataset)
    recon = np.ones((4, 3, 4, 5, 6), dtype=np.complex64)
    update_container(path, {"recon": recon}, method="zerofill", seconds=0.5)
    loaded = read_container(path)
    np.testing.assert_array_equal(loaded.arrays["recon"], recon)
    assert loaded.attributes["method"] == "zerofill"
    assert loaded.attributes["venc"] == 150.0
