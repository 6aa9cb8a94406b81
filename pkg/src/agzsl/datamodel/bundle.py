"""Directory bundles: ``manifest.json`` plus one raw little-endian file per array.

Manifest layout::

    {"magic": "AGZSL-BUNDLE", "version": 1, "meta": {...},
     "arrays": [{"name": "features", "shape": [N, r, d], "dtype": "f32le",
                 "file": "features.bin", "byte_length": 4*N*r*d}, ...]}

Float arrays are stored as ``f32le`` unless written with ``precision="f64"``
(checkpoints need exact float64 state). Integer arrays are ``i32le``.
Everything is widened to float64 / int64 on load.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .core import AttributeSemantics, ClassSemantics, FeatureBundle

MAGIC = "AGZSL-BUNDLE"
VERSION = 1
MANIFEST = "manifest.json"

_DTYPES = {"f32le": np.dtype("<f4"), "f64le": np.dtype("<f8"), "i32le": np.dtype("<i4")}


class BundleError(ValueError):
    """Base class for malformed bundles."""


class BundleFormatError(BundleError):
    pass


class PayloadLengthError(BundleError):
    pass


class BundleShapeError(BundleError):
    pass


class NonFinitePayloadError(BundleError):
    pass


def _safe_filename(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in name) + ".bin"


def write_arrays(path: str | os.PathLike, arrays: Mapping[str, np.ndarray],
                 meta: Mapping[str, Any] | None = None, precision: str = "f32") -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    used = set()
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
            dtype = "i32le"
        else:
            dtype = "f64le" if precision == "f64" else "f32le"
            if not np.isfinite(arr).all():
                raise NonFinitePayloadError(f"array {name!r} has non-finite values")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        fname = _safe_filename(name)
        while fname in used:
            fname = "_" + fname
        used.add(fname)
        (path / fname).write_bytes(data)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                        "file": fname, "byte_length": len(data)})
    manifest = {"magic": MAGIC, "version": VERSION, "meta": dict(meta or {}), "arrays": entries}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path: str | os.PathLike) -> dict:
    mpath = Path(path) / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"no manifest at {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"unreadable manifest: {exc}") from None
    if manifest.get("magic") != MAGIC:
        raise BundleFormatError(f"bad magic {manifest.get('magic')!r}")
    if manifest.get("version") != VERSION:
        raise BundleFormatError(f"unsupported bundle version {manifest.get('version')!r}")
    return manifest


def read_arrays(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = read_manifest(path)
    out = {}
    for entry in manifest["arrays"]:
        name, shape, dtype = entry["name"], tuple(entry["shape"]), entry["dtype"]
        if dtype not in _DTYPES:
            raise BundleFormatError(f"array {name!r}: unknown dtype {dtype!r}")
        fpath = path / entry["file"]
        if not fpath.is_file():
            raise FileNotFoundError(f"array {name!r}: missing payload {fpath}")
        raw = fpath.read_bytes()
        if len(raw) != entry["byte_length"]:
            raise PayloadLengthError(
                f"array {name!r}: payload is {len(raw)} bytes, manifest says {entry['byte_length']}")
        itemsize = _DTYPES[dtype].itemsize
        if len(raw) % itemsize:
            raise PayloadLengthError(f"array {name!r}: payload not a multiple of {itemsize} bytes")
        count = len(raw) // itemsize
        expected = int(np.prod(shape, dtype=np.int64))
        if count != expected:
            raise BundleShapeError(
                f"array {name!r}: shape {list(shape)} needs {expected} values, found {count}")
        arr = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape)
        if dtype == "i32le":
            arr = arr.astype(np.int64)
        else:
            arr = arr.astype(np.float64)
            if not np.isfinite(arr).all():
                raise NonFinitePayloadError(f"array {name!r} has non-finite values")
        out[name] = arr
    return out, manifest.get("meta", {})


def save_bundle(bundle: FeatureBundle, path: str | os.PathLike,
                class_sem: ClassSemantics | None = None,
                attr_sem: AttributeSemantics | None = None,
                meta: Mapping[str, Any] | None = None) -> Path:
    arrays: dict[str, np.ndarray] = {
        "features": bundle.features,
        "labels": bundle.labels.astype(np.int32),
        "split": bundle.split.astype(np.int32),
    }
    if class_sem is not None:
        arrays["class_sem_source"] = class_sem.source
        arrays["class_sem_target"] = class_sem.target
    if attr_sem is not None:
        arrays["attr_sem"] = attr_sem.vectors
    return write_arrays(path, arrays, {"kind": "feature-bundle", **(meta or {})})


def _bundle_from(arrays: dict[str, np.ndarray]) -> FeatureBundle:
    for key in ("features", "labels", "split"):
        if key not in arrays:
            raise BundleFormatError(f"bundle lacks array {key!r}")
    feats = arrays["features"]
    if feats.ndim != 3:
        raise BundleShapeError(f"features must be 3-d, got shape {feats.shape}")
    n = feats.shape[0]
    if arrays["labels"].shape != (n,) or arrays["split"].shape != (n,):
        raise BundleShapeError("labels/split length does not match features")
    return FeatureBundle(feats, arrays["labels"], arrays["split"])


def _semantics_from(arrays: dict[str, np.ndarray]) -> tuple[ClassSemantics, AttributeSemantics]:
    for key in ("class_sem_source", "class_sem_target", "attr_sem"):
        if key not in arrays:
            raise BundleFormatError(f"bundle lacks semantics array {key!r}")
    return (ClassSemantics(arrays["class_sem_source"], arrays["class_sem_target"]),
            AttributeSemantics(arrays["attr_sem"]))


def load_bundle(path: str | os.PathLike) -> FeatureBundle:
    return _bundle_from(read_arrays(path)[0])


def load_semantics(path: str | os.PathLike) -> tuple[ClassSemantics, AttributeSemantics]:
    return _semantics_from(read_arrays(path)[0])


def load_dataset(path: str | os.PathLike) -> tuple[FeatureBundle, ClassSemantics, AttributeSemantics]:
    """Features and semantics stored together in one bundle directory."""
    arrays, _ = read_arrays(path)
    return (_bundle_from(arrays), *_semantics_from(arrays))
