"""
Flat named-tensor archives (safetensors layout) shared by checkpoints and
feature-extractor weights, plus content hashing of tensor collections.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import torch
from safetensors import safe_open
from safetensors.torch import save as safetensors_save

# All archive metadata lives under one key holding a canonical JSON document,
# so the header bytes do not depend on dict ordering.
METADATA_KEY = "vhs2hd"


def tensor_digest(tensors: Mapping[str, torch.Tensor]) -> str:
    """sha256 over (name, dtype, shape, raw bytes) of every tensor, in name order."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        h.update(name.encode("utf-8"))
        h.update(str(t.dtype).encode("utf-8"))
        h.update(json.dumps(list(t.shape)).encode("utf-8"))
        h.update(t.reshape(-1).view(torch.uint8).numpy().tobytes() if t.numel() else b"")
    return h.hexdigest()


def _prepare(tensors: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    return {name: t.detach().cpu().contiguous().clone() for name, t in tensors.items()}


def encode_archive(tensors: Mapping[str, torch.Tensor], metadata: Mapping[str, Any]) -> bytes:
    doc = dict(metadata)
    prepared = _prepare(tensors)
    doc["digest"] = tensor_digest(prepared)
    header = {METADATA_KEY: json.dumps(doc, sort_keys=True, separators=(",", ":"))}
    return safetensors_save(prepared, metadata=header)


def save_archive(
    path: Union[str, Path],
    tensors: Mapping[str, torch.Tensor],
    metadata: Mapping[str, Any],
) -> None:
    """Write atomically: temp file in the same directory, fsync, rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_archive(tensors, metadata)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_archive(path: Union[str, Path]) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    """
    Read every tensor and the metadata document; verify the stored digest.

    Raises:
        FileNotFoundError: no such file
        ValueError: unreadable, truncated or tampered archive (digest mismatch)
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    try:
        with safe_open(str(path), framework="pt", device="cpu") as f:
            header = f.metadata() or {}
            tensors = {name: f.get_tensor(name) for name in f.keys()}
    except Exception as e:
        raise ValueError("Unreadable archive %s: %s" % (path, e)) from e
    metadata: Dict[str, Any] = {}
    if METADATA_KEY in header:
        try:
            metadata = json.loads(header[METADATA_KEY])
        except json.JSONDecodeError as e:
            raise ValueError("Corrupt metadata in %s" % path) from e
        expected = metadata.get("digest")
        if expected is not None and expected != tensor_digest(tensors):
            raise ValueError("Digest mismatch in %s" % path)
    return tensors, metadata
