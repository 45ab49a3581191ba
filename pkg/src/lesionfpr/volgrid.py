"""Volumetric data model: grids, masks, file I/O, resampling, morphology,
connected components and Dice overlap.

Volumes are 3-D scalar fields indexed ``data[x, y, z]`` with millimetre
voxel spacing. On disk they use the LFV format: a JSON header
``<name>.lfv.json`` next to a raw little-endian payload ``<name>.lfv.raw``
whose values are linearized x-fastest (index = x + nx*(y + ny*z)).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

VALUE_KINDS = ("intensity", "probability", "uncertainty", "label")

# Structuring elements for the mask post-processing step: a full 27-voxel
# cube and the 7-voxel 6-connected cross.
CUBE_3 = np.ones((3, 3, 3), dtype=bool)
CROSS_3 = ndimage.generate_binary_structure(3, 1)

# 26-connectivity for component labeling.
CONNECTIVITY_26 = np.ones((3, 3, 3), dtype=bool)


def _as_spacing(spacing) -> tuple[float, float, float]:
    s = tuple(float(x) for x in spacing)
    if len(s) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(s)}")
    if any(not math.isfinite(x) or x <= 0 for x in s):
        raise ValueError(f"spacing components must be positive, got {s}")
    return s


@dataclass(frozen=True, eq=False)
class VolumeGrid:
    """A 3-D scalar field with voxel spacing in millimetres.

    ``data`` is float32, shape (nx, ny, nz), read-only. ``value_kind``
    declares the payload semantics and is enforced on construction:
    probabilities must lie in [0, 1], labels must be non-negative integers.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    value_kind: str = "intensity"

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {arr.shape}")
        if np.isnan(arr).any():
            raise ValueError("volume data contains NaN")
        if self.value_kind not in VALUE_KINDS:
            raise ValueError(f"unknown value_kind {self.value_kind!r}")
        if self.value_kind == "probability":
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError("probability volume has values outside [0, 1]")
        if self.value_kind == "label":
            if arr.min() < 0.0 or not np.array_equal(arr, np.round(arr)):
                raise ValueError("label volume must hold non-negative integers")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, VolumeGrid):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.value_kind == other.value_kind
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A boolean voxel mask on the same grid contract as VolumeGrid."""

    bits: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        arr = np.array(self.bits, dtype=bool, copy=True)
        if arr.ndim != 3:
            raise ValueError(f"mask bits must be 3-D, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.bits.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and np.array_equal(self.bits, other.bits)
        )


@dataclass(frozen=True)
class LesionComponent:
    """One connected lesion: id, voxel set, tight bbox and physical volume."""

    id: int
    voxels: frozenset
    bbox: tuple[tuple[int, int, int], tuple[int, int, int]]
    voxel_count: int
    volume_mm3: float


# ---------------------------------------------------------------------------
# LFV file format
# ---------------------------------------------------------------------------

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _base_path(path) -> Path:
    p = Path(path)
    name = p.name
    for suffix in (".lfv.json", ".lfv.raw"):
        if name.endswith(suffix):
            return p.with_name(name[: -len(suffix)])
    return p


def read_volume(path) -> VolumeGrid:
    """Read an LFV header+raw pair into a VolumeGrid.

    ``path`` may name the base, the ``.lfv.json`` header or the
    ``.lfv.raw`` payload. Rejects size mismatches, non-positive spacing
    and NaN payloads.
    """
    base = _base_path(path)
    header_path = base.with_name(base.name + ".lfv.json")
    raw_path = base.with_name(base.name + ".lfv.raw")
    if not header_path.exists():
        raise FileNotFoundError(f"missing LFV header: {header_path}")
    if not raw_path.exists():
        raise FileNotFoundError(f"missing LFV payload: {raw_path}")

    header = json.loads(header_path.read_text(encoding="utf-8"))
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"invalid dims in {header_path}: {header['dims']}")
    spacing = _as_spacing(header["spacing"])
    dtype_tag = header.get("dtype", "f32")
    if dtype_tag not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype_tag!r} in {header_path}")
    if header.get("order", "x-fastest") != "x-fastest":
        raise ValueError(f"unsupported linearization order in {header_path}")
    value_kind = header.get("value_kind", "intensity")

    raw = np.fromfile(raw_path, dtype=_DTYPES[dtype_tag])
    expected = dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise ValueError(
            f"payload size mismatch in {raw_path}: "
            f"got {raw.size} values, expected {expected}"
        )
    data = raw.astype(np.float32).reshape(dims, order="F")
    return VolumeGrid(data=data, spacing=spacing, value_kind=value_kind)


def write_volume(v: VolumeGrid, path, dtype: str = "f32") -> None:
    """Write a VolumeGrid as an LFV header+raw pair (x-fastest payload)."""
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    base = _base_path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "dims": list(v.dims),
        "spacing": list(v.spacing),
        "dtype": dtype,
        "order": "x-fastest",
        "value_kind": v.value_kind,
    }
    header_path = base.with_name(base.name + ".lfv.json")
    raw_path = base.with_name(base.name + ".lfv.raw")
    header_path.write_text(json.dumps(header, sort_keys=True) + "\n", encoding="utf-8")
    payload = v.data.ravel(order="F").astype(_DTYPES[dtype])
    payload.tofile(raw_path)


def read_mask(path) -> BinaryMask:
    """Read an LFV mask (u8 values {0,1}) as a BinaryMask."""
    v = read_volume(path)
    return BinaryMask(bits=v.data > 0.5, spacing=v.spacing)


def write_mask(m: BinaryMask, path) -> None:
    v = VolumeGrid(
        data=m.bits.astype(np.float32), spacing=m.spacing, value_kind="label"
    )
    write_volume(v, path, dtype="u8")


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _output_coords(dims, spacing, target_spacing):
    out_dims = tuple(
        int(math.ceil(d * s / t)) for d, s, t in zip(dims, spacing, target_spacing)
    )
    axes = [
        np.arange(n, dtype=np.float64) * (t / s)
        for n, s, t in zip(out_dims, spacing, target_spacing)
    ]
    grid = np.meshgrid(*axes, indexing="ij")
    return out_dims, np.stack(grid)


def resample(v: VolumeGrid, target_spacing, method: str = "bspline3") -> VolumeGrid:
    """Resample a volume to a new spacing.

    Output dims are ceil(dims * spacing / target). ``bspline3`` uses a
    tricubic spline with mirror boundary handling; ``nearest`` looks up
    the closest source voxel. Label volumes require ``nearest``.
    Probability outputs are clamped to [0, 1] (spline overshoot).
    """
    target = _as_spacing(target_spacing)
    if method not in ("bspline3", "nearest"):
        raise ValueError(f"unknown resampling method {method!r}")
    if v.value_kind == "label" and method != "nearest":
        raise ValueError("label volumes must be resampled with method='nearest'")

    _, coords = _output_coords(v.dims, v.spacing, target)
    order = 0 if method == "nearest" else 3
    out = ndimage.map_coordinates(
        v.data.astype(np.float64), coords, order=order, mode="mirror"
    )
    if v.value_kind == "probability":
        out = np.clip(out, 0.0, 1.0)
    return VolumeGrid(
        data=out.astype(np.float32), spacing=target, value_kind=v.value_kind
    )


def resample_mask(m: BinaryMask, target_spacing) -> BinaryMask:
    """Nearest-neighbor mask resampling to a new spacing."""
    target = _as_spacing(target_spacing)
    _, coords = _output_coords(m.dims, m.spacing, target)
    out = ndimage.map_coordinates(
        m.bits.astype(np.uint8), coords, order=0, mode="mirror"
    )
    return BinaryMask(bits=out > 0, spacing=target)


# ---------------------------------------------------------------------------
# Binarization and morphology
# ---------------------------------------------------------------------------


def binarize(v: VolumeGrid, threshold: float = 0.5) -> BinaryMask:
    """Threshold a probability map; a bit is set iff value > threshold."""
    if v.value_kind != "probability":
        raise ValueError(f"binarize expects a probability volume, got {v.value_kind}")
    return BinaryMask(bits=v.data > threshold, spacing=v.spacing)


def morph_close_open(m: BinaryMask) -> BinaryMask:
    """Morphological closing (cube 3x3x3) followed by opening (cross).

    Out-of-volume voxels are treated as background for every dilation and
    erosion involved.
    """
    closed = ndimage.binary_closing(m.bits, structure=CUBE_3, border_value=0)
    opened = ndimage.binary_opening(closed, structure=CROSS_3, border_value=0)
    return BinaryMask(bits=opened, spacing=m.spacing)


# ---------------------------------------------------------------------------
# Connected components and overlap
# ---------------------------------------------------------------------------


def _linear_index(coords: np.ndarray, dims) -> np.ndarray:
    # x-fastest linearization, matching the file format
    nx, ny, _ = dims
    return coords[:, 0] + nx * (coords[:, 1] + ny * coords[:, 2])


def connected_components(m: BinaryMask) -> list[LesionComponent]:
    """Partition foreground into maximal 26-connected components.

    Ids are assigned 1..K ordered by each component's smallest x-fastest
    linear voxel index, so the result is deterministic.
    """
    labels, n = ndimage.label(m.bits, structure=CONNECTIVITY_26)
    if n == 0:
        return []
    voxel_volume = m.spacing[0] * m.spacing[1] * m.spacing[2]
    entries = []
    objects = ndimage.find_objects(labels)
    for raw_label, slc in enumerate(objects, start=1):
        local = np.argwhere(labels[slc] == raw_label)
        offset = np.array([s.start for s in slc])
        coords = local + offset
        lin = _linear_index(coords, m.dims)
        entries.append((int(lin.min()), coords))
    entries.sort(key=lambda e: e[0])

    components = []
    for new_id, (_, coords) in enumerate(entries, start=1):
        lo = tuple(int(c) for c in coords.min(axis=0))
        hi = tuple(int(c) for c in coords.max(axis=0))
        voxels = frozenset(map(tuple, coords.tolist()))
        components.append(
            LesionComponent(
                id=new_id,
                voxels=voxels,
                bbox=(lo, hi),
                voxel_count=len(voxels),
                volume_mm3=len(voxels) * voxel_volume,
            )
        )
    return components


def component_mask(lesion: LesionComponent, dims, spacing) -> BinaryMask:
    """Rasterize a single component back into a full-grid mask."""
    bits = np.zeros(dims, dtype=bool)
    idx = np.array(sorted(lesion.voxels))
    bits[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return BinaryMask(bits=bits, spacing=spacing)


def dice(a, b) -> float:
    """Dice overlap 2|a&b| / (|a|+|b|) between voxel sets; 0 if both empty."""
    a = frozenset(a)
    b = frozenset(b)
    total = len(a) + len(b)
    if total == 0:
        return 0.0
    return 2.0 * len(a & b) / total
