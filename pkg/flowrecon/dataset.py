"""Dataset containers: a directory with a JSON manifest and one raw file per array.

Complex arrays are stored as little-endian float32 ``(re, im)`` pairs, real
arrays as float32 and masks as uint8, all in C order with the axes named in
the manifest.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .const import ARRAY_ROLES, CONTAINER_FORMAT, LOGGER
from .models import CoilSet, ContainerError, KSpaceData, PhantomTruth, VelocityEncoding

MANIFEST = "manifest.json"

ROLE_DIMS = {
    "kspace": ("enc", "coil", "t", "z", "y", "x"),
    "mask": ("enc", "t", "z", "y"),
    "coils": ("coil", "z", "y", "x"),
    "truth_magnitude": ("t", "z", "y", "x"),
    "truth_velocity": ("comp", "t", "z", "y", "x"),
    "segmentation": ("z", "y", "x"),
    "recon": ("enc", "t", "z", "y", "x"),
}

_DTYPES = {
    "complex64": np.dtype("<c8"),
    "float32": np.dtype("<f4"),
    "uint8": np.dtype("u1"),
}

_ENTRY_SCHEMA = vol.Schema(
    {
        vol.Required("role"): vol.In(ARRAY_ROLES),
        vol.Required("file"): str,
        vol.Required("dims"): [str],
        vol.Required("shape"): [vol.All(int, vol.Range(min=1))],
        vol.Required("dtype"): vol.In(list(_DTYPES)),
    }
)

MANIFEST_SCHEMA = vol.Schema(
    {
        vol.Required("format"): CONTAINER_FORMAT,
        vol.Optional("attributes", default={}): dict,
        vol.Required("arrays"): [_ENTRY_SCHEMA],
    }
)


def _storage_dtype(array: np.ndarray) -> str:
    if array.dtype == bool or array.dtype == np.uint8:
        return "uint8"
    if np.iscomplexobj(array):
        return "complex64"
    return "float32"


@dataclass
class Dataset:
    """Arrays by role plus free-form attributes."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    attributes: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Check the roles and dimensionalities."""
        for role, array in self.arrays.items():
            self.dims(role, array)

    @staticmethod
    def dims(role: str, array: np.ndarray) -> tuple[str, ...]:
        """Return the axis names of an array in its role."""
        if role not in ROLE_DIMS:
            raise ContainerError(f"Unknown array role {role!r}")
        names = ROLE_DIMS[role]
        if not 1 <= array.ndim <= len(names):
            raise ContainerError(f"{role} cannot have {array.ndim} axes")
        return names[len(names) - array.ndim :]

    def require(self, *roles: str) -> None:
        """Raise ContainerError unless every role is present."""
        missing = [role for role in roles if role not in self.arrays]
        if missing:
            raise ContainerError(f"Container lacks {', '.join(missing)}")

    def kspace_data(self) -> KSpaceData:
        """Return the k-space samples with their mask."""
        self.require("kspace", "mask")
        return KSpaceData(self.arrays["kspace"], self.arrays["mask"].astype(bool))

    def coil_set(self) -> CoilSet:
        """Return the coil maps."""
        self.require("coils")
        return CoilSet(self.arrays["coils"])

    def truth(self) -> PhantomTruth:
        """Return the ground truth."""
        self.require("truth_magnitude", "truth_velocity", "segmentation")
        return PhantomTruth(
            magnitude=self.arrays["truth_magnitude"].astype(np.float64),
            velocity=self.arrays["truth_velocity"].astype(np.float64),
            segmentation=self.arrays["segmentation"].astype(bool),
        )

    def encoding(self) -> VelocityEncoding:
        """Return the velocity encoding recorded in the attributes."""
        if "venc" not in self.attributes:
            raise ContainerError("Container does not record venc")
        return VelocityEncoding(venc=float(self.attributes["venc"]))


def write_container(path: Path | str, dataset: Dataset) -> None:
    """Write a container, replacing ``path`` only once every file is complete."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        entries = []
        for role, array in dataset.arrays.items():
            dtype = _storage_dtype(array)
            stored = np.ascontiguousarray(array, dtype=_DTYPES[dtype])
            filename = f"{role}.bin"
            stored.tofile(staging / filename)
            entries.append(
                {
                    "role": role,
                    "file": filename,
                    "dims": list(Dataset.dims(role, array)),
                    "shape": list(array.shape),
                    "dtype": dtype,
                }
            )
        manifest = {
            "format": CONTAINER_FORMAT,
            "attributes": dataset.attributes,
            "arrays": entries,
        }
        (staging / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
        if path.exists():
            retired = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}.old."))
            os.replace(path, retired / path.name)
            os.replace(staging, path)
            shutil.rmtree(retired)
        else:
            os.replace(staging, path)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    LOGGER.info("Wrote container %s (%s)", path, ", ".join(dataset.arrays))


def read_manifest(path: Path | str) -> dict[str, Any]:
    """Read and validate the manifest of a container."""
    manifest_path = Path(path) / MANIFEST
    try:
        raw = json.loads(manifest_path.read_text())
    except FileNotFoundError as e:
        raise ContainerError(f"{path} has no {MANIFEST}") from e
    except ValueError as e:
        raise ContainerError(f"{manifest_path} is not valid JSON") from e
    try:
        return MANIFEST_SCHEMA(raw)
    except vol.Invalid as e:
        raise ContainerError(f"Invalid manifest {manifest_path}: {e}") from e


def read_container(path: Path | str, roles: tuple[str, ...] | None = None) -> Dataset:
    """Read a container, optionally only some roles."""
    path = Path(path)
    manifest = read_manifest(path)
    arrays = {}
    for entry in manifest["arrays"]:
        if roles is not None and entry["role"] not in roles:
            continue
        dtype = _DTYPES[entry["dtype"]]
        expected = int(np.prod(entry["shape"])) * dtype.itemsize
        file = path / entry["file"]
        if not file.is_file() or file.stat().st_size != expected:
            raise ContainerError(f"{file} is missing or does not hold {entry['shape']} {entry['dtype']}")
        array = np.fromfile(file, dtype=dtype).reshape(entry["shape"])
        if tuple(entry["dims"]) != Dataset.dims(entry["role"], array):
            raise ContainerError(f"{entry['role']} has unexpected axes {entry['dims']}")
        arrays[entry["role"]] = array.astype(bool) if entry["dtype"] == "uint8" else array
    return Dataset(arrays=arrays, attributes=manifest["attributes"])


def update_container(path: Path | str, arrays: dict[str, np.ndarray], **attributes: Any) -> Dataset:
    """Add or replace arrays and attributes of an existing container."""
    dataset = read_container(path)
    dataset.arrays.update(arrays)
    dataset.attributes.update(attributes)
    write_container(path, dataset)
    return dataset
