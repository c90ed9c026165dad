"""Artifact writers: PGM channel dumps, raw float latents and stamped text.

Every writer is deterministic (no timestamps) and replaces its target
atomically. Text and PGM files carry the config hash and seed in their
headers; raw latent files are headerless, so their names carry both.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

PGM_ZOOM = 16


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def stamp(config_hash: str, seed: int) -> str:
    return f"config_hash={config_hash} seed={seed}"


def write_text(path, body: str, config_hash: str, seed: int) -> Path:
    atomic_write(path, (f"# {stamp(config_hash, seed)}\n" + body).encode("utf-8"))
    return Path(path)


def read_text_body(path) -> tuple[str, str]:
    """Split a stamped text file into its stamp line and body."""
    head, _, body = Path(path).read_text(encoding="utf-8").partition("\n")
    return head.lstrip("# "), body


def latent_name(stem: str, config_hash: str, seed: int) -> str:
    return f"{stem}-{config_hash}-s{seed}.f32"


def write_latent(path, latent: np.ndarray) -> Path:
    """Little-endian float32, C order, no header."""
    atomic_write(path, np.ascontiguousarray(latent, dtype="<f4").tobytes())
    return Path(path)


def read_latent(path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(shape)


def pgm_bytes(channel: np.ndarray, config_hash: str, seed: int, zoom: int = PGM_ZOOM) -> bytes:
    """8-bit binary PGM of one channel, min-max scaled, each cell drawn ``zoom`` pixels wide."""
    x = np.asarray(channel, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    scaled = np.zeros_like(x) if hi <= lo else (x - lo) / (hi - lo)
    img = np.kron(np.round(scaled * 255.0).astype(np.uint8), np.ones((zoom, zoom), dtype=np.uint8))
    h, w = img.shape
    header = f"P5\n# {stamp(config_hash, seed)} range={lo!r},{hi!r}\n{w} {h}\n255\n".encode("ascii")
    return header + img.tobytes()


def write_pgm_channels(directory, stem: str, latent: np.ndarray, config_hash: str, seed: int) -> list[Path]:
    """One PGM per channel of an ``[h, w, c]`` latent."""
    paths = []
    for ch in range(latent.shape[-1]):
        p = Path(directory) / f"{stem}-ch{ch}.pgm"
        atomic_write(p, pgm_bytes(latent[..., ch], config_hash, seed))
        paths.append(p)
    return paths
