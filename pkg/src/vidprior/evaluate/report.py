"""Plain-text reports and binary PPM frame dumps."""

from __future__ import annotations

import os

import numpy as np


def to_bytes_255(frame: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to 0..255, rounding half away from zero."""
    v = (np.asarray(frame, dtype=np.float64) + 1.0) * 127.5
    v = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def write_ppm(path: str, frame: np.ndarray) -> None:
    """Write a [C,H,W] frame as P6. One channel is replicated to gray; the
    first three channels are used when there are more."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ValueError(f"expected a [C,H,W] frame, got {frame.shape}")
    rgb = np.repeat(frame[:1], 3, axis=0) if frame.shape[0] < 3 else frame[:3]
    pix = to_bytes_255(rgb).transpose(1, 2, 0)
    h, w = pix.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_ppm(path: str) -> np.ndarray:
    """[H,W,3] uint8 pixels of a P6 file written by :func:`write_ppm`."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def dump_clip(out_dir: str, stem: str, clip: np.ndarray) -> list:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, frame in enumerate(np.asarray(clip)):
        p = os.path.join(out_dir, f"{stem}_f{i:02d}.ppm")
        write_ppm(p, frame)
        paths.append(p)
    return paths


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_report(metrics: dict) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in metrics.items())


def write_report(path: str, metrics: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_report(metrics))


def read_report(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                k, v = (p.strip() for p in line.split("=", 1))
                out[k] = v
    return out
