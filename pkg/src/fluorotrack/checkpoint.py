"""Single-file checkpoint container.

Layout: magic, little-endian uint64 header length, UTF-8 JSON header,
then raw C-order array bytes. The header carries arbitrary metadata plus
a tensor index (name, dtype, shape, byte offset). Writing is byte-wise
deterministic for identical inputs, so checkpoints can be compared by
hash.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FTCKPT1\n"


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named arrays plus a JSON metadata header to ``path``.

    ``tensors`` maps canonical names to numpy arrays (torch tensors are
    converted). Insertion order is not significant; names are stored sorted.
    """
    blobs = {}
    for name, value in tensors.items():
        # tobytes() below emits C-order bytes for any layout; 0-d arrays kept as-is
        blobs[name] = np.asarray(value.detach().cpu().numpy() if hasattr(value, "detach") else value)

    index = []
    offset = 0
    for name in sorted(blobs):
        arr = blobs[name]
        index.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset}
        )
        offset += arr.nbytes
    header = {"format": 1, "meta": meta or {}, "tensors": index}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for entry in index:
            fh.write(blobs[entry["name"]].tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint, returning ``(tensors, meta)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()

    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start).reshape(shape)
        tensors[entry["name"]] = arr.copy()
    return tensors, header["meta"]


def state_dict_to_blobs(module) -> dict:
    """Torch ``state_dict`` as plain numpy arrays keyed by canonical name."""
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_into_module(module, tensors: dict, prefix: str = "", strict: bool = True) -> list[str]:
    """Load blobs whose names start with ``prefix`` into ``module``.

    Returns the list of module parameter names that were left untouched.
    With ``strict=True`` a missing or shape-mismatched tensor raises,
    naming the offending entries.
    """
    import torch

    own = module.state_dict()
    missing, mismatched, loaded = [], [], {}
    for name, target in own.items():
        key = prefix + name
        if key not in tensors:
            missing.append(key)
            continue
        src = tensors[key]
        if tuple(src.shape) != tuple(target.shape):
            mismatched.append(f"{key}: checkpoint {tuple(src.shape)} vs model {tuple(target.shape)}")
            continue
        loaded[name] = torch.as_tensor(src.copy()).to(target.dtype)
    if strict and (missing or mismatched):
        raise ValueError(
            "checkpoint mismatch; missing=[" + ", ".join(missing) + "]; "
            "shape errors=[" + "; ".join(mismatched) + "]"
        )
    own.update(loaded)
    module.load_state_dict(own)
    return [n for n in module.state_dict() if n not in loaded]
