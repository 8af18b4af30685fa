"""Deterministic synthetic video generator for desk-scale experiments.

Each clip shows a bright square over a dim textured background. The square
grows (approach), shrinks (retreat) or translates laterally (pass); an
optional per-frame global translation simulates ego-motion. Frames are
written as TNSR files plus a dataset manifest.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .pipeline import DatasetManifest, save_manifest
from .rng import Rng
from .tnsr import save_tnsr

CLASSES = ("approach", "retreat", "pass")


def _coverage(start: float, length: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel cell covered by [start, start+length)."""
    edges = np.arange(n + 1, dtype=np.float64)
    lo = np.clip(edges[:-1], start, start + length)
    hi = np.clip(edges[1:], start, start + length)
    return np.maximum(hi - lo, 0.0)


def _render_frame(size: int, bg: np.ndarray, cx: float, cy: float,
                  side: float, shift: tuple[float, float]) -> np.ndarray:
    """[3,size,size] float32 frame; square rendered with subpixel coverage."""
    dy, dx = shift
    cov_y = _coverage(cy - side / 2 + dy, side, size)
    cov_x = _coverage(cx - side / 2 + dx, side, size)
    mask = np.outer(cov_y, cov_x)
    # shift the background texture by the (integer part of the) ego offset
    bg_shifted = np.roll(np.roll(bg, int(round(dy)), axis=1), int(round(dx)), axis=2)
    frame = bg_shifted * (1.0 - mask)[None] + 0.95 * mask[None]
    return np.clip(frame, 0.0, 1.0).astype(np.float32)


def _clip_geometry(cls: str, size: int, frames: int, rng: Rng):
    """Per-frame (cx, cy, side) trajectories for one clip."""
    s_small = size * (0.12 + 0.04 * rng.random())
    s_big = size * (0.45 + 0.10 * rng.random())
    cy = size / 2 + rng.uniform(-0.08, 0.08) * size
    t = np.arange(frames) / (frames - 1)
    if cls == "approach":
        cx = np.full(frames, size / 2 + rng.uniform(-0.05, 0.05) * size)
        side = s_small + (s_big - s_small) * t
        cyv = np.full(frames, cy)
    elif cls == "retreat":
        cx = np.full(frames, size / 2 + rng.uniform(-0.05, 0.05) * size)
        side = s_big - (s_big - s_small) * t
        cyv = np.full(frames, cy)
    elif cls == "pass":
        s = size * (0.2 + 0.05 * rng.random())
        side = np.full(frames, s)
        x0 = s / 2 + 1.0
        x1 = size - s / 2 - 1.0
        cx = x0 + (x1 - x0) * t  # strictly monotone left-to-right
        cyv = np.full(frames, cy)
    else:
        raise ValueError(f"unknown class {cls!r}")
    return cx, cyv, side


def synth_generate(out_dir, videos_per_class: int, frames: int = 24,
                   size: int = 32, ego_jitter: float = 0.0,
                   seed: int = 0, classes=CLASSES) -> DatasetManifest:
    """Render the dataset under ``out_dir`` and write ``manifest.txt``."""
    if size < 16:
        raise ValueError("synth_generate: size must be >= 16")
    if frames < 3:
        raise ValueError("synth_generate: need at least 3 frames")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = Rng(seed)
    entries = []
    vid = 0
    for label, cls in enumerate(classes):
        for j in range(videos_per_class):
            rng = master.split(vid + 1)
            rel = f"{cls}_{j:03d}"
            vdir = out_dir / rel
            vdir.mkdir(parents=True, exist_ok=True)
            bg = (0.15 + 0.25 * rng.uniform(0.0, 1.0, (3, size, size))).astype(np.float64)
            cx, cy, side = _clip_geometry(cls, size, frames, rng)
            for fidx in range(frames):
                if ego_jitter > 0:
                    shift = (float(rng.uniform(-ego_jitter, ego_jitter)),
                             float(rng.uniform(-ego_jitter, ego_jitter)))
                else:
                    shift = (0.0, 0.0)
                frame = _render_frame(size, bg, cx[fidx], cy[fidx], side[fidx], shift)
                save_tnsr(vdir / f"frame_{fidx:04d}.tnsr", frame)
            entries.append((rel, label, frames))
            vid += 1
    manifest = DatasetManifest(root=out_dir, entries=entries,
                               class_names=list(classes))
    save_manifest(manifest, out_dir / "manifest.txt")
    return manifest
