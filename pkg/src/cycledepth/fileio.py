"""On-disk formats: PFM depth, 16-bit PNG images, checkpoints, manifests.

All writers go through an atomic temp-file-and-rename so a crashed run
never leaves a half-written artifact, and `write_manifest` records
sha256 digests so any run's outputs can be byte-verified later.

Depth is stored as single-channel PFM (float32, little-endian when the
scale line is negative, rows bottom-up); invalid pixels are written as
zero, which PFM readers conventionally treat as missing.  Images are
16-bit PNGs mapping [0, 1] to [0, 65535].
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
import tempfile
from pathlib import Path

import cv2
import numpy as np

from .core import DepthMap, Image

__all__ = [
    "save_pfm",
    "load_pfm",
    "save_depth",
    "load_depth",
    "save_png16",
    "load_png16",
    "save_checkpoint",
    "load_checkpoint",
    "save_json",
    "load_json",
    "save_csv",
    "sha256_file",
    "write_manifest",
]

CHECKPOINT_MAGIC = b"CYDEPTH\x01"
CHECKPOINT_FORMAT = "cycledepth-checkpoint-v1"


def _atomic_write(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- PFM ---------------------------------------------------------------------


def save_pfm(path: str | Path, data: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float array as little-endian PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    elif data.ndim == 2:
        header = b"Pf"
    else:
        raise ValueError(f"PFM wants (H, W) or (H, W, 3), got {data.shape}")
    h, w = data.shape[:2]
    body = np.flipud(data).astype("<f4").tobytes()
    payload = b"%s\n%d %d\n%.1f\n" % (header, w, h, -1.0) + body
    _atomic_write(path, payload)


def load_pfm(path: str | Path) -> np.ndarray:
    """Read a PFM file back into a float32 array ((H, W) or (H, W, 3))."""
    raw = Path(path).read_bytes()
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if not m:
        raise ValueError(f"not a PFM file: {path}")
    color = m.group(1) == b"PF"
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    endian = "<" if scale < 0 else ">"
    offset = m.end()
    count = h * w * (3 if color else 1)
    data = np.frombuffer(raw, dtype=endian + "f4", count=count, offset=offset)
    shape = (h, w, 3) if color else (h, w)
    return np.flipud(data.reshape(shape)).astype(np.float32)


def save_depth(path: str | Path, depth: DepthMap) -> None:
    """Store a depth map as PFM; invalid pixels become zero."""
    save_pfm(path, np.where(depth.valid, depth.depth, 0.0))


def load_depth(path: str | Path) -> DepthMap:
    """Load a PFM depth map; nonpositive entries are marked invalid."""
    data = load_pfm(path)
    if data.ndim != 2:
        raise ValueError("depth PFM must be single channel")
    valid = data > 0
    return DepthMap(depth=np.where(valid, data, 1.0).astype(np.float64),
                    valid=valid)


# -- PNG ---------------------------------------------------------------------


def save_png16(path: str | Path, image: Image) -> None:
    """Write an image as 16-bit PNG, mapping [0, 1] to [0, 65535]."""
    arr = np.clip(image.data, 0.0, 1.0)
    q = np.rint(arr * 65535.0).astype(np.uint16)
    if q.shape[2] == 3:
        q = q[:, :, ::-1]  # imencode wants BGR channel order
    else:
        q = q[:, :, 0]
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise OSError(f"PNG encoding failed for {path}")
    _atomic_write(path, buf.tobytes())


def load_png16(path: str | Path) -> Image:
    """Read a 16-bit (or 8-bit) PNG back to a float image in [0, 1]."""
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    arr = cv2.imdecode(raw, cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise OSError(f"cannot decode PNG: {path}")
    full = 65535.0 if arr.dtype == np.uint16 else 255.0
    data = arr.astype(np.float64) / full
    if data.ndim == 2:
        data = data[:, :, None]
    elif data.shape[2] >= 3:
        data = data[:, :, 2::-1]  # BGR(A) back to RGB
    return Image(data=data)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    """Write named float64 arrays plus a JSON meta block, single file.

    Layout: magic, uint64 little-endian index length, JSON index (array
    names, shapes, offsets into the blob), raw little-endian data.
    """
    entries = []
    blob = bytearray()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({
            "name": name,
            "shape": list(a.shape),
            "dtype": "<f8",
            "offset": len(blob),
            "nbytes": a.nbytes,
        })
        blob.extend(a.tobytes())
    index = {
        "format": CHECKPOINT_FORMAT,
        "arrays": entries,
        "meta": meta or {},
    }
    index_bytes = json.dumps(index, sort_keys=True).encode()
    payload = CHECKPOINT_MAGIC + struct.pack("<Q", len(index_bytes)) \
        + index_bytes + bytes(blob)
    _atomic_write(path, payload)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as ({name: array}, meta)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"not a checkpoint file: {path}")
    n = struct.unpack_from("<Q", raw, len(CHECKPOINT_MAGIC))[0]
    start = len(CHECKPOINT_MAGIC) + 8
    index = json.loads(raw[start:start + n].decode())
    if index.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {index.get('format')!r}")
    base = start + n
    arrays = {}
    for e in index["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(raw, dtype=e["dtype"], count=count,
                          offset=base + e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return arrays, index.get("meta", {})


# -- JSON / CSV / hashes ------------------------------------------------------


def save_json(path: str | Path, obj) -> None:
    """Write JSON with sorted keys and a trailing newline."""
    _atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n")
                  .encode())


def load_json(path: str | Path):
    return json.loads(Path(path).read_text())


def save_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    """Write a simple CSV with a header row."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    s = str(v)
    if any(ch in s for ch in ",\"\n"):
        s = '"' + s.replace('"', '""') + '"'
    return s


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(root: str | Path, files: list[str | Path],
                   name: str = "manifest.json") -> Path:
    """Record sha256 digests of `files` (relative to `root`) in a manifest."""
    root = Path(root)
    digest = {}
    for f in files:
        p = Path(f)
        try:
            rel = str(p.relative_to(root))
        except ValueError:
            rel = str(p)
        digest[rel] = sha256_file(root / rel)
    out = root / name
    save_json(out, {"files": digest})
    return out
