from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from ..tensor import Tensor


def normalize_row(row: np.ndarray) -> np.ndarray:
    """Min-max scale to uint8 [0, 255]; a constant row maps to all zeros."""
    lo, hi = float(row.min()), float(row.max())
    if hi <= lo:
        return np.zeros(row.shape, dtype=np.uint8)
    return np.round((row - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_attention_maps(A: Tensor | np.ndarray, height: int, width: int,
                          out_dir: str | os.PathLike) -> list[Path]:
    """Write one grayscale PNG per token: ``token_<i>.png``."""
    maps = A.data if isinstance(A, Tensor) else np.asarray(A)
    if maps.ndim != 2:
        raise ValueError(f"attention maps must be (N, HW), got {maps.shape}")
    if maps.shape[1] != height * width:
        raise ValueError(f"HW={maps.shape[1]} does not match {height}x{width}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, row in enumerate(maps):
        path = out_dir / f"token_{i}.png"
        Image.fromarray(normalize_row(row).reshape(height, width)).save(path, format="PNG")
        paths.append(path)
    return paths
