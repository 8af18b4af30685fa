"""Frame sampling, augmentation, normalization and crop protocols.

Frames are float32 arrays of shape [3,H,W] with values in [0,1] before
normalization. All operations here are pure functions of (input, rng draw),
so clips can be prepared in any order under split rng substreams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import Rng
from .tnsr import load_tnsr, save_tnsr

CROP_POSITIONS = ("TL", "TR", "BL", "BR", "C")


@dataclass
class VideoClip:
    frames: list  # list of [3,H,W] float arrays in [0,1] pre-normalization
    label: int | None = None
    source_id: str = ""

    def __post_init__(self):
        if not self.frames:
            raise ValueError("VideoClip: empty frame list")
        shape = self.frames[0].shape
        for f in self.frames:
            if f.shape != shape:
                raise ValueError("VideoClip: frames must share shape")


@dataclass
class DatasetManifest:
    root: Path
    entries: list  # (relative_dir, label, frame_count)
    class_names: list

    def __len__(self):
        return len(self.entries)


@dataclass
class NormalizationStats:
    mean: np.ndarray  # [3]
    std: np.ndarray   # [3]

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != (3,) or self.std.shape != (3,):
            raise ValueError("NormalizationStats: mean/std must be 3-vectors")
        if np.any(self.std <= 0):
            raise ValueError("NormalizationStats: std must be positive")


@dataclass(frozen=True)
class AugmentationPolicy:
    """One (size, position, flip) triple is drawn per video per iteration and
    applied to every frame of that video."""

    rescale_hw: tuple[int, int] = (256, 340)
    crop_sizes: tuple[int, ...] = (256, 224, 192, 168)
    positions: tuple[str, ...] = CROP_POSITIONS
    flip_prob: float = 0.5
    final_size: int = 224

    @classmethod
    def standard(cls) -> "AugmentationPolicy":
        return cls()

    @classmethod
    def identity(cls, size: int) -> "AugmentationPolicy":
        """Degenerate policy for frames already at network input size."""
        return cls(rescale_hw=(size, size), crop_sizes=(size,),
                   positions=("TL",), flip_prob=0.5, final_size=size)


# ---------------------------------------------------------------------------
# manifest I/O


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("#classes:" + ";".join(manifest.class_names) + "\n")
        for rel, label, count in manifest.entries:
            f.write(f"{rel},{label},{count}\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    class_names: list[str] = []
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#classes:"):
                class_names = line[len("#classes:"):].split(";")
                continue
            rel, label, count = line.rsplit(",", 2)
            entries.append((rel, int(label), int(count)))
    if not class_names:
        raise ValueError(f"manifest {path}: missing #classes header")
    k = len(class_names)
    for rel, label, count in entries:
        if not 0 <= label < k:
            raise ValueError(f"manifest {path}: label {label} out of range for {rel}")
        if count < 3:
            raise ValueError(f"manifest {path}: {rel} has fewer than 3 frames")
    return DatasetManifest(root=path.parent, entries=entries, class_names=class_names)


def load_clip(manifest: DatasetManifest, index: int) -> VideoClip:
    rel, label, count = manifest.entries[index]
    base = Path(manifest.root) / rel
    frames = []
    for i in range(count):
        fp = base / f"frame_{i:04d}.tnsr"
        if not fp.exists():
            raise FileNotFoundError(f"missing frame file {fp}")
        frames.append(load_tnsr(fp).astype(np.float32))
    return VideoClip(frames=frames, label=label, source_id=rel)


# ---------------------------------------------------------------------------
# frame geometry


def sample_frames_equidistant(clip: VideoClip, t: int = 20) -> VideoClip:
    """T frames equidistant in time; short clips repeat the last frame."""
    n = len(clip.frames)
    if n == 0:
        raise ValueError("empty clip")
    if n >= t:
        idx = [round(i * (n - 1) / (t - 1)) for i in range(t)]
    else:
        idx = list(range(n)) + [n - 1] * (t - n)
    return VideoClip(frames=[clip.frames[i] for i in idx],
                     label=clip.label, source_id=clip.source_id)


def rescale(frame: np.ndarray, out_h: int = 256, out_w: int = 340) -> np.ndarray:
    """Bilinear resampling with half-pixel-centered sampling, clamped."""
    c, h, w = frame.shape
    if h == out_h and w == out_w:
        return frame.astype(np.float32, copy=True)

    def coords(out_n, in_n):
        s = in_n / out_n
        x = (np.arange(out_n) + 0.5) * s - 0.5
        x = np.clip(x, 0.0, in_n - 1.0)
        lo = np.floor(x).astype(np.int64)
        hi = np.minimum(lo + 1, in_n - 1)
        return lo, hi, (x - lo).astype(np.float64)

    ylo, yhi, wy = coords(out_h, h)
    xlo, xhi, wx = coords(out_w, w)
    f = frame.astype(np.float64)
    top = f[:, ylo][:, :, xlo] * (1 - wx) + f[:, ylo][:, :, xhi] * wx
    bot = f[:, yhi][:, :, xlo] * (1 - wx) + f[:, yhi][:, :, xhi] * wx
    out = top * (1 - wy)[None, :, None] + bot * wy[None, :, None]
    return out.astype(np.float32)


def crop_window(h: int, w: int, size: int, position: str) -> tuple[int, int]:
    """Top-left (row, col) of a size x size window; corners flush, center floored."""
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds frame {h}x{w}")
    if position == "TL":
        return 0, 0
    if position == "TR":
        return 0, w - size
    if position == "BL":
        return h - size, 0
    if position == "BR":
        return h - size, w - size
    if position == "C":
        return (h - size) // 2, (w - size) // 2
    raise ValueError(f"unknown crop position {position!r}")


def scale_jitter_crop(frame: np.ndarray, size: int, position: str,
                      final_size: int = 224) -> np.ndarray:
    """Crop size x size at the named position, then rescale to final_size."""
    _, h, w = frame.shape
    r0, c0 = crop_window(h, w, size, position)
    crop = frame[:, r0:r0 + size, c0:c0 + size]
    if size == final_size:
        return crop.astype(np.float32, copy=True)
    return rescale(crop, final_size, final_size)


def horizontal_flip(frame: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(frame[:, :, ::-1])


def normalize_frame(frame: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    mean = stats.mean.astype(frame.dtype)[:, None, None]
    std = stats.std.astype(frame.dtype)[:, None, None]
    return (frame - mean) / std


# ---------------------------------------------------------------------------
# statistics


def compute_normalization_stats(manifest: DatasetManifest,
                                indices=None) -> NormalizationStats:
    """Per-channel mean and standard deviation over all pixels of the
    selected training clips (two-pass, 64-bit accumulation)."""
    if indices is None:
        indices = range(len(manifest.entries))
    indices = list(indices)
    if not indices:
        raise ValueError("compute_normalization_stats: no training clips")
    total = np.zeros(3)
    count = 0
    for i in indices:
        clip = load_clip(manifest, i)
        for f in clip.frames:
            total += f.astype(np.float64).sum(axis=(1, 2))
            count += f.shape[1] * f.shape[2]
    mean = total / count
    sq = np.zeros(3)
    for i in indices:
        clip = load_clip(manifest, i)
        for f in clip.frames:
            d = f.astype(np.float64) - mean[:, None, None]
            sq += (d * d).sum(axis=(1, 2))
    var = sq / count
    if np.any(var <= 0):
        raise ValueError("compute_normalization_stats: zero-variance channel")
    return NormalizationStats(mean=mean, std=np.sqrt(var))


def save_stats(stats: NormalizationStats, path) -> None:
    save_tnsr(path, np.stack([stats.mean, stats.std]))


def load_stats(path) -> NormalizationStats:
    arr = load_tnsr(path)
    if arr.shape != (2, 3):
        raise ValueError(f"stats file {path}: expected shape (2,3), got {arr.shape}")
    return NormalizationStats(mean=arr[0], std=arr[1])


# ---------------------------------------------------------------------------
# train / eval protocols


def draw_augmentation(policy: AugmentationPolicy, rng: Rng):
    """One (size, position, flip) triple per video per iteration."""
    size = policy.crop_sizes[int(rng.integers(0, len(policy.crop_sizes)))]
    position = policy.positions[int(rng.integers(0, len(policy.positions)))]
    flip = rng.random() < policy.flip_prob
    return size, position, flip


def augment_video(clip: VideoClip, policy: AugmentationPolicy,
                  stats: NormalizationStats, rng: Rng) -> VideoClip:
    """Apply one drawn (size, position, flip) triple to every frame, then
    normalize. Frames must already be at policy.rescale_hw."""
    size, position, flip = draw_augmentation(policy, rng)
    out = []
    for f in clip.frames:
        if f.shape[1:] != policy.rescale_hw:
            raise ValueError(f"augment_video: frame {f.shape} not rescaled to "
                             f"{policy.rescale_hw}")
        g = scale_jitter_crop(f, size, position, policy.final_size)
        if flip:
            g = horizontal_flip(g)
        out.append(normalize_frame(g, stats))
    return VideoClip(frames=out, label=clip.label, source_id=clip.source_id)


def ten_crop(clip: VideoClip, stats: NormalizationStats,
             policy: AugmentationPolicy | None = None) -> list[VideoClip]:
    """The 5 fixed positions at final size plus their horizontal flips,
    normalized; order TL,TR,BL,BR,C then the flips in the same order."""
    if policy is None:
        policy = AugmentationPolicy.standard()
    size = policy.final_size
    crops = []
    for flip in (False, True):
        for pos in CROP_POSITIONS:
            frames = []
            for f in clip.frames:
                g = scale_jitter_crop(f, size, pos, size)
                if flip:
                    g = horizontal_flip(g)
                frames.append(normalize_frame(g, stats))
            crops.append(VideoClip(frames=frames, label=clip.label,
                                   source_id=f"{clip.source_id}:{pos}{'F' if flip else ''}"))
    return crops


def prepare_eval_clip(clip: VideoClip, policy: AugmentationPolicy,
                      t: int = 20) -> VideoClip:
    """Equidistant sampling followed by rescale to the policy geometry."""
    sampled = sample_frames_equidistant(clip, t)
    h, w = policy.rescale_hw
    return VideoClip(frames=[rescale(f, h, w) for f in sampled.frames],
                     label=sampled.label, source_id=sampled.source_id)
