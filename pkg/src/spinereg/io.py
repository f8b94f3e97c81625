"""Minimal MetaImage (.mhd + .raw) reader and writer.

Only the keys below are understood, in this order; anything else is
rejected rather than silently ignored::

    NDims = 3
    DimSize = nx ny nz
    ElementSpacing = sx sy sz
    Offset = ox oy oz
    Channels = 3              (vector fields only)
    ElementType = FLOAT32 | UINT16
    ElementDataFile = name.raw

Raw data is little-endian with x varying fastest; vector components are
interleaved per voxel.
"""
from pathlib import Path

import numpy as np

from .exceptions import MetaImageError
from .volume import LabelVolume, Volume

KEYS = ("NDims", "DimSize", "ElementSpacing", "Offset", "Channels", "ElementType", "ElementDataFile")
_DTYPES = {"FLOAT32": np.dtype("<f4"), "UINT16": np.dtype("<u2")}


def _fmt(values):
    return " ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def write_metaimage(path, array, spacing, origin, element_type="FLOAT32"):
    """Write a 3D scalar or (X, Y, Z, 3) vector array next to a .raw file."""
    path = Path(path)
    array = np.asarray(array)
    if element_type not in _DTYPES:
        raise MetaImageError(f"unsupported ElementType {element_type!r}")
    channels = None
    if array.ndim == 4:
        if array.shape[-1] != 3:
            raise MetaImageError("vector arrays need 3 channels")
        channels = 3
        flat = array.transpose(2, 1, 0, 3).ravel()
    elif array.ndim == 3:
        flat = array.transpose(2, 1, 0).ravel()
    else:
        raise MetaImageError(f"expected 3D or 4D array, got shape {array.shape}")
    if element_type == "UINT16" and (flat.min(initial=0) < 0 or flat.max(initial=0) > 65535):
        raise MetaImageError("values out of UINT16 range")
    raw = path.with_suffix(".raw")
    lines = [
        "NDims = 3",
        f"DimSize = {_fmt(array.shape[:3])}",
        f"ElementSpacing = {_fmt([float(s) for s in spacing])}",
        f"Offset = {_fmt([float(o) for o in origin])}",
    ]
    if channels:
        lines.append(f"Channels = {channels}")
    lines += [f"ElementType = {element_type}", f"ElementDataFile = {raw.name}"]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    raw.write_bytes(flat.astype(_DTYPES[element_type]).tobytes())
    return path


def read_header(path):
    header = {}
    order = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise MetaImageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise MetaImageError(f"{path}:{lineno}: unknown key {key!r}")
        if key in header:
            raise MetaImageError(f"{path}:{lineno}: duplicate key {key!r}")
        header[key] = value
        order.append(key)
    required = [k for k in KEYS if k != "Channels"]
    missing = [k for k in required if k not in header]
    if missing:
        raise MetaImageError(f"{path}: missing keys {missing}")
    if order != [k for k in KEYS if k in header]:
        raise MetaImageError(f"{path}: keys out of order: {order}")
    if header["NDims"] != "3":
        raise MetaImageError(f"{path}: only NDims = 3 is supported")
    if header["ElementType"] not in _DTYPES:
        raise MetaImageError(f"{path}: unsupported ElementType {header['ElementType']!r}")
    if header.get("Channels", "3") != "3":
        raise MetaImageError(f"{path}: only Channels = 3 is supported")
    return header


def read_metaimage(path):
    """Return ``(array, spacing, origin, element_type)``."""
    path = Path(path)
    header = read_header(path)
    try:
        dims = tuple(int(v) for v in header["DimSize"].split())
        spacing = tuple(float(v) for v in header["ElementSpacing"].split())
        origin = tuple(float(v) for v in header["Offset"].split())
    except ValueError as exc:
        raise MetaImageError(f"{path}: malformed numeric field") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise MetaImageError(f"{path}: DimSize/ElementSpacing/Offset need 3 values")
    dtype = _DTYPES[header["ElementType"]]
    channels = 3 if "Channels" in header else 1
    raw = path.parent / header["ElementDataFile"]
    flat = np.frombuffer(raw.read_bytes(), dtype=dtype)
    expected = int(np.prod(dims)) * channels
    if flat.size != expected:
        raise MetaImageError(f"{raw}: expected {expected} elements, found {flat.size}")
    if channels == 3:
        array = flat.reshape(dims[2], dims[1], dims[0], 3).transpose(2, 1, 0, 3)
    else:
        array = flat.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
    return np.ascontiguousarray(array), spacing, origin, header["ElementType"]


def write_volume(path, vol):
    return write_metaimage(path, vol.data, vol.spacing, vol.origin, "FLOAT32")


def write_labels(path, labels):
    return write_metaimage(path, labels.data, labels.spacing, labels.origin, "UINT16")


def write_field(path, fld):
    return write_metaimage(path, fld.data, fld.spacing, fld.origin, "FLOAT32")


def read_volume(path):
    array, spacing, origin, _ = read_metaimage(path)
    if array.ndim != 3:
        raise MetaImageError(f"{path}: expected a scalar volume")
    return Volume(array.astype(float), spacing, origin)


def read_labels(path):
    array, spacing, origin, _ = read_metaimage(path)
    if array.ndim != 3:
        raise MetaImageError(f"{path}: expected a label volume")
    return LabelVolume(array.astype(np.int64), spacing, origin)


def read_field(path, kind=None):
    from .field import DisplacementField

    array, spacing, origin, _ = read_metaimage(path)
    if array.ndim != 4:
        raise MetaImageError(f"{path}: expected a 3-channel vector field")
    return (kind or DisplacementField)(array.astype(float), spacing, origin)
