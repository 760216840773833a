"""Parameter checkpoints: text manifest plus little-endian float32 blob.

A checkpoint is a zip archive with three members:
  manifest.txt  one line per tensor: "<name>\t<dim,dim,...>\t<offset>"
                (offset counts float32 elements into the blob)
  params.bin    all tensor data, row-major little-endian float32, concatenated
  meta.txt      "key=value" lines (training counters so schedules resume)

Round-trips are bit-exact; archives are written without timestamps so
identical contents produce identical bytes.
"""

from __future__ import annotations

import io
import zipfile

import numpy as np

from .autodiff import Tensor

# fixed zip entry date so byte-identical params give byte-identical files
_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path, named_tensors: list[tuple[str, Tensor]],
                    meta: dict[str, object] | None = None) -> None:
    manifest_lines = []
    blob = io.BytesIO()
    offset = 0
    for name, tensor in named_tensors:
        if "\t" in name or "\n" in name:
            raise ValueError(f"invalid tensor name {name!r}")
        dims = ",".join(str(d) for d in tensor.data.shape)
        manifest_lines.append(f"{name}\t{dims}\t{offset}")
        data = np.ascontiguousarray(tensor.data, dtype="<f4")
        blob.write(data.tobytes())
        offset += data.size
    meta_lines = [f"{k}={v}" for k, v in (meta or {}).items()]
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for member, payload in [
            ("manifest.txt", "\n".join(manifest_lines) + "\n"),
            ("params.bin", blob.getvalue()),
            ("meta.txt", "\n".join(meta_lines) + "\n"),
        ]:
            info = zipfile.ZipInfo(member, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Returns (name -> float32 array, metadata as strings)."""
    with zipfile.ZipFile(path, "r") as zf:
        manifest = zf.read("manifest.txt").decode("ascii")
        blob = np.frombuffer(zf.read("params.bin"), dtype="<f4")
        meta_text = zf.read("meta.txt").decode("ascii")
    tensors: dict[str, np.ndarray] = {}
    for line in manifest.splitlines():
        if not line.strip():
            continue
        name, dims, offset = line.split("\t")
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        size = int(np.prod(shape)) if shape else 1
        start = int(offset)
        tensors[name] = blob[start:start + size].reshape(shape).astype(np.float32)
    meta: dict[str, str] = {}
    for line in meta_text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key] = value
    return tensors, meta


def restore_into(net, tensors: dict[str, np.ndarray]) -> None:
    """Load checkpoint arrays into a PolicyNetwork, validating names and shapes."""
    items = dict(net.parameter_items())
    missing = set(items) - set(tensors)
    extra = set(tensors) - set(items)
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
    for name, tensor in items.items():
        arr = tensors[name]
        if arr.shape != tensor.data.shape:
            raise ValueError(f"{name}: shape {arr.shape} != expected {tensor.data.shape}")
        tensor.data = arr.copy()
