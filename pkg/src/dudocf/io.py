"""DDT1 tensor files.

Layout: magic ``DDT1``, u32 rank, rank x u32 extents, then the payload as
little-endian float32 in row-major order.
"""
from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"DDT1"


class TensorFileError(IOError):
    pass


def save_ddt(path: str | os.PathLike, array) -> None:
    arr = np.asarray(array)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def load_ddt(path: str | os.PathLike) -> np.ndarray:
    """Read a DDT1 file into a float64 array."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise TensorFileError(f"cannot read tensor file {path}: {exc}") from exc
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise TensorFileError(f"{path}: not a DDT1 file")
    (rank,) = struct.unpack_from("<I", blob, 4)
    offset = 8 + 4 * rank
    if len(blob) < offset:
        raise TensorFileError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", blob, 8)
    count = int(np.prod(shape)) if rank else 1
    if len(blob) != offset + 4 * count:
        raise TensorFileError(
            f"{path}: payload holds {(len(blob) - offset) // 4} values, header says {count}"
        )
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return data.astype(np.float64).reshape(shape)


def as_f32_exact(array) -> np.ndarray:
    """Round to the nearest float32 and return float64, so a DDT1 round trip is lossless."""
    return np.asarray(array, dtype=np.float32).astype(np.float64)


def save_pgm(path: str | os.PathLike, image) -> None:
    """Write a 2-D array as an 8-bit binary PGM, scaled so its maximum is 255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    peak = float(img.max()) if img.size else 0.0
    scaled = np.clip(img / peak, 0.0, 1.0) * 255.0 if peak > 0 else np.zeros_like(img)
    data = np.round(scaled).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    os.replace(tmp, path)


def save_slices(prefix: str | os.PathLike, volume) -> list[str]:
    """Mid axial, coronal and sagittal slices of a volume as ``<prefix>_{axial,coronal,sagittal}.pgm``."""
    vol = np.asarray(volume)
    cx, cy, cz = (n // 2 for n in vol.shape)
    out = []
    for name, img in (("axial", vol[:, :, cz].T), ("coronal", vol[:, cy, :].T), ("sagittal", vol[cx, :, :].T)):
        path = f"{os.fspath(prefix)}_{name}.pgm"
        save_pgm(path, img)
        out.append(path)
    return out
