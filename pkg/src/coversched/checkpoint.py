"""Checkpoint serialization: a JSON header line followed by raw
little-endian float arrays in header order.

Storage defaults to 32-bit floats to keep files small; pass dtype="f8"
for bit-exact round trips of 64-bit training state.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Mapping

import numpy as np

from .errors import ParseError
from .policy import PolicyConfig, PolicyParams

FORMAT_NAME = "coversched-checkpoint"
FORMAT_VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


def save_arrays(
    path: str,
    named: Mapping[str, np.ndarray],
    config: Mapping | None = None,
    step: int = 0,
    seed: int = 0,
    dtype: str = "f4",
) -> None:
    """Write named arrays with metadata; atomic via temp file + rename."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dtype": dtype,
        "step": int(step),
        "seed": int(seed),
        "config": dict(config) if config is not None else {},
        "params": [
            {"name": name, "shape": list(arr.shape)} for name, arr in named.items()
        ],
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(json.dumps(header).encode("utf-8"))
            fh.write(b"\n")
            for arr in named.values():
                fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read arrays back as float64 plus the header metadata."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(1, f"invalid checkpoint header: {exc}") from None
        if header.get("format") != FORMAT_NAME:
            raise ParseError(1, "not a coversched checkpoint")
        dtype_name = header.get("dtype")
        if dtype_name not in _DTYPES:
            raise ParseError(1, f"unknown dtype: {dtype_name!r}")
        dtype = _DTYPES[dtype_name]
        arrays: dict[str, np.ndarray] = {}
        for entry in header.get("params", []):
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ParseError(1, f"truncated data for parameter {entry['name']!r}")
            arrays[entry["name"]] = (
                np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(shape)
            )
        trailing = fh.read(1)
        if trailing:
            raise ParseError(1, "trailing bytes after final parameter")
    return arrays, header


def save_policy(
    path: str,
    policy: PolicyParams,
    step: int = 0,
    seed: int = 0,
    dtype: str = "f4",
    extra_config: Mapping | None = None,
) -> None:
    config = policy.config.to_dict()
    if extra_config:
        config.update(extra_config)
    named = {name: t.data for name, t in policy.named_parameters().items()}
    save_arrays(path, named, config=config, step=step, seed=seed, dtype=dtype)


def load_policy(path: str) -> tuple[PolicyParams, dict]:
    arrays, header = load_arrays(path)
    try:
        config = PolicyConfig.from_dict(header["config"])
    except (KeyError, TypeError) as exc:
        raise ParseError(1, f"checkpoint config unusable: {exc}") from None
    policy = PolicyParams.init(config, seed=0)
    for name, tensor in policy.named_parameters().items():
        if name not in arrays:
            raise ParseError(1, f"checkpoint missing parameter {name!r}")
        if arrays[name].shape != tensor.data.shape:
            raise ParseError(
                1,
                f"parameter {name!r} has shape {arrays[name].shape}, "
                f"expected {tensor.data.shape}",
            )
        tensor.data[...] = arrays[name]
    return policy, header
