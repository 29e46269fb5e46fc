"""
KANT model container.

Layout (little-endian):
    b"KANT" | u32 version | u32 metadata length | UTF-8 JSON metadata |
    payload | u32 CRC32 of payload

Coefficients are stored as float32 in layer order; extra named blobs
(spline tables) follow as unsigned integer tensors. The JSON metadata
lists every tensor with dtype, shape, offset and byte length.
"""
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from kan.bspline import GridSpec
from kan.layers import ConvKanLayer, Flatten, KanLinearLayer, MaxPool2d
from kan.model import Model
from utils import ChecksumMismatchError, FormatError, setup_logger
from config import config

logger = setup_logger(__name__, config.app.log_level)

MAGIC = b"KANT"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_CRC = struct.Struct("<I")

_DTYPES = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
    "u16": np.dtype("<u2"),
    "i32": np.dtype("<i4"),
}

PathLike = Union[str, os.PathLike]


@dataclass
class Blob:
    """Named tensor stored alongside the coefficients."""
    name: str
    data: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)


def _dtype_tag(array: np.ndarray) -> str:
    for tag, dtype in _DTYPES.items():
        if array.dtype == dtype or (array.dtype.kind == dtype.kind and array.dtype.itemsize == dtype.itemsize):
            return tag
    raise FormatError(f"unsupported tensor dtype {array.dtype}")


def _layer_meta(layer) -> Dict[str, Any]:
    if isinstance(layer, KanLinearLayer):
        return {"kind": layer.kind, "n_in": layer.n_in, "n_out": layer.n_out}
    if isinstance(layer, ConvKanLayer):
        return {
            "kind": layer.kind,
            "c_in": layer.c_in,
            "c_out": layer.c_out,
            "kernel": layer.kernel,
            "stride": layer.stride,
            "padding": layer.padding,
        }
    if isinstance(layer, MaxPool2d):
        return {"kind": layer.kind, "window": layer.window}
    if isinstance(layer, Flatten):
        return {"kind": layer.kind}
    raise FormatError(f"cannot serialize layer of type {type(layer).__name__}")


def _layer_from_meta(meta: Dict[str, Any], grid: GridSpec, coeffs: Optional[np.ndarray]):
    kind = meta.get("kind")
    if kind == KanLinearLayer.kind:
        return KanLinearLayer(meta["n_in"], meta["n_out"], grid, coeffs)
    if kind == ConvKanLayer.kind:
        return ConvKanLayer(
            meta["c_in"], meta["c_out"], meta["kernel"], meta["stride"], meta["padding"],
            grid, coeffs,
        )
    if kind == MaxPool2d.kind:
        return MaxPool2d(meta.get("window", 2))
    if kind == Flatten.kind:
        return Flatten()
    raise FormatError(f"unknown layer kind {kind!r}")


def save_model(model: Model, path: PathLike, blobs: Optional[List[Blob]] = None) -> Path:
    """
    Write a model (and optional extra blobs) to a KANT container.

    Args:
        model: Model to store; coefficients are written as float32
        path: Destination file
        blobs: Extra named integer tensors (e.g. spline tables)

    Returns:
        Path written
    """
    path = Path(path)
    tensors: List[Dict[str, Any]] = []
    chunks: List[bytes] = []
    offset = 0

    def add(name: str, array: np.ndarray, tag: str, meta: Optional[Dict[str, Any]] = None):
        nonlocal offset
        raw = np.ascontiguousarray(array, dtype=_DTYPES[tag]).tobytes()
        entry = {"name": name, "dtype": tag, "shape": list(array.shape), "offset": offset, "nbytes": len(raw)}
        if meta:
            entry["meta"] = meta
        tensors.append(entry)
        chunks.append(raw)
        offset += len(raw)

    layers = []
    for index, layer in enumerate(model.layers):
        meta = _layer_meta(layer)
        if hasattr(layer, "coeffs"):
            name = f"layers.{index}.coeffs"
            add(name, layer.coeffs, "f32")
            meta["tensor"] = name
        layers.append(meta)

    for blob in blobs or []:
        add(blob.name, blob.data, _dtype_tag(np.asarray(blob.data)), blob.meta)

    metadata = {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "grid": model.grid.to_dict(),
        "layers": layers,
        "tensors": tensors,
    }
    meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")
    payload = b"".join(chunks)

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(payload)
        f.write(_CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF))
    os.replace(tmp, path)
    logger.info(f"Saved model {model.name} ({model.param_count} params) to {path}")
    return path


def read_container(path: PathLike) -> Tuple[Model, Dict[str, Blob]]:
    """
    Read a KANT container.

    Returns:
        (model, extra blobs keyed by name)

    Raises:
        OSError: If the file cannot be read
        FormatError: On bad magic, unknown version, truncation or inconsistent metadata
        ChecksumMismatchError: If the payload CRC32 does not match
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, meta_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version} (expected {VERSION})")

    meta_end = _HEADER.size + meta_len
    if len(data) < meta_end + _CRC.size:
        raise FormatError(f"{path}: truncated metadata")
    try:
        metadata = json.loads(data[_HEADER.size:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable metadata: {e}") from e

    try:
        tensors = metadata.get("tensors", [])
        payload_len = sum(int(t["nbytes"]) for t in tensors)
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed tensor table: {e!r}") from e
    if len(data) != meta_end + payload_len + _CRC.size:
        raise FormatError(
            f"{path}: expected {payload_len} payload bytes, file holds "
            f"{max(0, len(data) - meta_end - _CRC.size)}"
        )
    payload = data[meta_end:meta_end + payload_len]
    (stored_crc,) = _CRC.unpack_from(data, meta_end + payload_len)
    actual_crc = zlib.crc32(payload) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumMismatchError(
            f"{path}: payload checksum {actual_crc:#010x} does not match stored {stored_crc:#010x}"
        )

    # The checksum covers the payload only, so every metadata field is validated here
    try:
        arrays, extra_meta = _read_tensors(tensors, payload, path)
        grid = GridSpec.from_dict(metadata["grid"])
        layers = []
        used = set()
        for meta in metadata["layers"]:
            coeffs = None
            if "tensor" in meta:
                coeffs = arrays[meta["tensor"]].astype(np.float64)
                used.add(meta["tensor"])
            layers.append(_layer_from_meta(meta, grid, coeffs))
        model = Model(layers, tuple(metadata["input_shape"]), grid, metadata.get("name", "model"))
    except FormatError:
        raise
    except KeyError as e:
        raise FormatError(f"{path}: metadata missing field {e}") from e
    except (TypeError, ValueError) as e:
        raise FormatError(f"{path}: inconsistent metadata: {e}") from e

    blobs = {
        name: Blob(name, np.array(array), extra_meta[name])
        for name, array in arrays.items()
        if name not in used
    }
    logger.info(f"Loaded model {model.name} from {path} ({len(blobs)} extra tensors)")
    return model, blobs


def _read_tensors(tensors: List[Dict[str, Any]], payload: bytes, path: PathLike):
    arrays: Dict[str, np.ndarray] = {}
    extra_meta: Dict[str, Dict[str, Any]] = {}
    for t in tensors:
        if t["dtype"] not in _DTYPES:
            raise FormatError(f"{path}: unknown tensor dtype {t['dtype']!r}")
        offset, nbytes = int(t["offset"]), int(t["nbytes"])
        if offset < 0 or nbytes < 0 or offset + nbytes > len(payload):
            raise FormatError(
                f"{path}: tensor {t['name']!r} spans bytes {offset}..{offset + nbytes} of a {len(payload)}-byte payload"
            )
        raw = payload[offset:offset + nbytes]
        arrays[t["name"]] = np.frombuffer(raw, dtype=_DTYPES[t["dtype"]]).reshape(t["shape"])
        extra_meta[t["name"]] = t.get("meta", {})
    return arrays, extra_meta


def load_model(path: PathLike) -> Model:
    """Load only the model from a KANT container."""
    return read_container(path)[0]
