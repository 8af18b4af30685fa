"""Training loop, checkpointing and the averaged multi-crop evaluation."""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .model import (FRAME_DIFFERENCE, RAW_FRAMES, InteractionNet, ModelConfig,
                    forward_batch)
from .optim import RMSProp
from .pipeline import (AugmentationPolicy, DatasetManifest, NormalizationStats,
                       VideoClip, augment_video, load_clip, prepare_eval_clip,
                       rescale, sample_frames_equidistant, ten_crop)
from .rng import Rng
from .tensor import Tensor, backward, no_grad, softmax
from .tnsr import TnsrFormatError, read_tnsr, write_tnsr

CHECKPOINT_MAGIC = b"CLCK"
CHECKPOINT_VERSION = 1


class TrainingDivergence(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 12
    iterations: int = 10_000
    rho: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    input_mode: str = RAW_FRAMES
    preset: str = "full"
    train_frames: int = 20  # equidistant frames sampled per training clip

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("TrainConfig: lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("TrainConfig: batch_size must be >= 1")

    @classmethod
    def for_preset(cls, preset: str, **overrides) -> "TrainConfig":
        if preset == "tiny":
            # CPU-trainable in minutes; the full preset keeps the
            # large-scale recipe below as its default.
            base = cls(preset="tiny", iterations=2_000, lr=1e-3, batch_size=4)
        elif preset == "full":
            base = cls(preset="full")
        else:
            raise ValueError(f"unknown preset {preset!r}")
        return replace(base, **overrides)


@dataclass
class Metrics:
    rows: list = field(default_factory=list)  # (iteration, loss, train_acc, val_acc)
    wall_clock: float = 0.0

    @property
    def losses(self):
        return [r[1] for r in self.rows]

    def to_csv(self) -> str:
        lines = ["iteration,loss,train_acc,val_acc"]
        for it, loss, ta, va in self.rows:
            lines.append(f"{it},{loss!r},{'' if ta is None else ta},"
                         f"{'' if va is None else va}")
        return "\n".join(lines) + "\n"


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict            # name -> np.ndarray
    opt_v: dict             # name -> np.ndarray
    stats: NormalizationStats
    iteration: int
    seed: int
    train_config: TrainConfig
    version: int = CHECKPOINT_VERSION


def choose_policy(config: ModelConfig, frame_hw: tuple[int, int]) -> AugmentationPolicy:
    """Standard 256x340 policy when it applies; identity policy when the
    source frames already match the network input size."""
    if frame_hw == (config.input_size, config.input_size):
        return AugmentationPolicy.identity(config.input_size)
    return AugmentationPolicy.standard()


# ---------------------------------------------------------------------------
# checkpoint serialization (CLCK container)


def _config_tensors(ckpt: Checkpoint) -> dict:
    cfg, tc = ckpt.model_config, ckpt.train_config
    enc = {
        "__config.preset": {"full": 0, "tiny": 1}[cfg.preset],
        "__config.num_classes": cfg.num_classes,
        "__config.input_mode": {RAW_FRAMES: 0, FRAME_DIFFERENCE: 1}[cfg.input_mode],
        "__train.lr": tc.lr,
        "__train.batch_size": tc.batch_size,
        "__train.iterations": tc.iterations,
        "__train.rho": tc.rho,
        "__train.eps": tc.eps,
        "__train.train_frames": tc.train_frames,
    }
    return {k: np.asarray(float(v)) for k, v in enc.items()}


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors: dict[str, np.ndarray] = {}
    tensors.update({name: arr for name, arr in ckpt.params.items()})
    tensors.update({f"opt.v.{name}": arr for name, arr in ckpt.opt_v.items()})
    tensors["norm.stats"] = np.stack([ckpt.stats.mean, ckpt.stats.std])
    tensors.update(_config_tensors(ckpt))
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<B", ckpt.version))
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            write_tnsr(f, tensors[name])
        f.write(struct.pack("<QQ", ckpt.iteration, ckpt.seed))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise TnsrFormatError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<B", f.read(1))
        if version != CHECKPOINT_VERSION:
            raise TnsrFormatError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            raw = f.read(2)
            if len(raw) != 2:
                raise TnsrFormatError("truncated checkpoint")
            (nlen,) = struct.unpack("<H", raw)
            name = f.read(nlen).decode("utf-8")
            tensors[name] = read_tnsr(f)
        tail = f.read(16)
        if len(tail) != 16:
            raise TnsrFormatError("truncated checkpoint trailer")
        iteration, seed = struct.unpack("<QQ", tail)

    def scalar(name):
        return float(tensors.pop(name))

    preset = {0: "full", 1: "tiny"}[int(scalar("__config.preset"))]
    num_classes = int(scalar("__config.num_classes"))
    input_mode = {0: RAW_FRAMES, 1: FRAME_DIFFERENCE}[int(scalar("__config.input_mode"))]
    model_config = ModelConfig.preset_by_name(preset, num_classes, input_mode)
    train_config = TrainConfig(
        lr=scalar("__train.lr"), batch_size=int(scalar("__train.batch_size")),
        iterations=int(scalar("__train.iterations")), rho=scalar("__train.rho"),
        eps=scalar("__train.eps"), seed=seed, input_mode=input_mode,
        preset=preset, train_frames=int(scalar("__train.train_frames")))
    stats_arr = tensors.pop("norm.stats")
    stats = NormalizationStats(mean=stats_arr[0], std=stats_arr[1])
    params = {k: v for k, v in tensors.items() if not k.startswith("opt.v.")}
    opt_v = {k[len("opt.v."):]: v for k, v in tensors.items() if k.startswith("opt.v.")}
    return Checkpoint(model_config=model_config, params=params, opt_v=opt_v,
                      stats=stats, iteration=iteration, seed=seed,
                      train_config=train_config, version=version)


def net_from_checkpoint(ckpt: Checkpoint) -> InteractionNet:
    params = {name: Tensor(arr.copy(), requires_grad=True)
              for name, arr in ckpt.params.items()}
    return InteractionNet(ckpt.model_config, params)


# ---------------------------------------------------------------------------
# training


def _iter_rng(seed: int, purpose: int, iteration: int, slot: int = 0) -> Rng:
    # streams keyed by (purpose, iteration, slot): resume-safe by construction
    return Rng(seed, (purpose << 48) | (iteration << 16) | slot)


def _preload_clips(manifest: DatasetManifest, indices, policy: AugmentationPolicy,
                   train_frames: int):
    clips = []
    h, w = policy.rescale_hw
    for i in indices:
        clip = load_clip(manifest, i)
        sampled = sample_frames_equidistant(clip, train_frames)
        frames = [rescale(f, h, w) for f in sampled.frames]
        clips.append(VideoClip(frames=frames, label=sampled.label,
                               source_id=sampled.source_id))
    return clips


def train(manifest: DatasetManifest, model_config: ModelConfig,
          train_config: TrainConfig, stats: NormalizationStats,
          resume: Checkpoint | None = None, train_indices=None,
          log=None) -> tuple[Checkpoint, Metrics]:
    """Iterated batches with replacement, one RMSProp step per iteration.

    All randomness derives from (seed, purpose, iteration, slot) substreams,
    so a run resumed from a checkpoint continues bitwise-identically.
    """
    if not manifest.entries:
        raise ValueError("train: empty manifest")
    if model_config.num_classes != len(manifest.class_names):
        raise ValueError(f"train: model has {model_config.num_classes} classes, "
                         f"manifest has {len(manifest.class_names)}")
    seed = train_config.seed
    if resume is not None:
        net = net_from_checkpoint(resume)
        opt = RMSProp(net.params, lr=train_config.lr, rho=train_config.rho,
                      eps=train_config.eps)
        for name, v in resume.opt_v.items():
            opt.v[name] = v.copy()
        start_iter = resume.iteration
    else:
        net = InteractionNet.build(model_config, Rng(seed, 0))
        opt = RMSProp(net.params, lr=train_config.lr, rho=train_config.rho,
                      eps=train_config.eps)
        start_iter = 0

    if train_indices is None:
        train_indices = list(range(len(manifest.entries)))
    probe = load_clip(manifest, train_indices[0])
    policy = choose_policy(model_config, probe.frames[0].shape[1:])
    clips = _preload_clips(manifest, train_indices, policy, train_config.train_frames)
    n = len(clips)

    metrics = Metrics()
    t0 = time.monotonic()
    for it in range(start_iter + 1, train_config.iterations + 1):
        rng_batch = _iter_rng(seed, 1, it)
        idx = rng_batch.integers(0, n, train_config.batch_size)
        batch = np.empty((train_config.batch_size, train_config.train_frames,
                          3, model_config.input_size, model_config.input_size),
                         dtype=np.float32)
        labels = []
        for b, ci in enumerate(idx):
            aug = augment_video(clips[ci], policy, stats, _iter_rng(seed, 2, it, b))
            batch[b] = np.stack(aug.frames)
            labels.append(aug.label)

        logits = forward_batch(net, batch, mode=model_config.input_mode)
        per_sample = []
        for b in range(train_config.batch_size):
            row = T.reshape(T.take_rows(logits, [b]), (logits.shape[1],))
            per_sample.append(T.softmax_cross_entropy(row, labels[b]))
        loss = T.average(per_sample)
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            raise TrainingDivergence(
                f"non-finite loss {loss_val} at iteration {it} "
                f"(batch indices {list(map(int, idx))})")
        backward(loss)
        opt.step()
        opt.zero_grad()
        metrics.rows.append((it, loss_val, None, None))
        if log is not None and (it % 100 == 0 or it == 1):
            log(f"iter {it} loss {loss_val:.6f}")
    metrics.wall_clock = time.monotonic() - t0

    ckpt = Checkpoint(
        model_config=model_config,
        params={name: p.data.copy() for name, p in net.params.items()},
        opt_v={name: v.copy() for name, v in opt.v.items()},
        stats=stats, iteration=train_config.iterations, seed=seed,
        train_config=train_config)
    return ckpt, metrics


# ---------------------------------------------------------------------------
# evaluation


def _clip_probs(net: InteractionNet, clip: VideoClip, stats: NormalizationStats,
                crops: int, t: int = 20) -> np.ndarray:
    """Averaged softmax over the crop variants of one clip."""
    cfg = net.config
    policy = choose_policy(cfg, clip.frames[0].shape[1:])
    prepared = prepare_eval_clip(clip, policy, t)
    if crops == 10:
        variants = ten_crop(prepared, stats, policy)
    elif crops == 1:
        from .pipeline import normalize_frame, scale_jitter_crop
        frames = [normalize_frame(
            scale_jitter_crop(f, policy.final_size, "C", policy.final_size), stats)
            for f in prepared.frames]
        variants = [VideoClip(frames=frames, label=clip.label,
                              source_id=clip.source_id + ":C")]
    else:
        raise ValueError("crops must be 1 or 10")
    batch = np.stack([np.stack(v.frames) for v in variants])
    with no_grad():
        logits = forward_batch(net, batch, mode=cfg.input_mode)
    return softmax(logits.data.astype(np.float64)).mean(axis=0)


def evaluate_ten_crop(ckpt: Checkpoint, manifest: DatasetManifest,
                      crops: int = 10, indices=None, t: int = 20):
    """Accuracy plus per-class confusion under averaged-softmax prediction."""
    k = len(manifest.class_names)
    if ckpt.model_config.num_classes != k:
        raise ValueError("evaluate: class count mismatch")
    net = net_from_checkpoint(ckpt)
    if indices is None:
        indices = range(len(manifest.entries))
    confusion = np.zeros((k, k), dtype=np.int64)
    correct = total = 0
    for i in indices:
        clip = load_clip(manifest, i)
        probs = _clip_probs(net, clip, ckpt.stats, crops, t)
        pred = int(np.argmax(probs))  # first index wins ties
        confusion[clip.label, pred] += 1
        correct += int(pred == clip.label)
        total += 1
    return correct / total, confusion


def predict(ckpt: Checkpoint, frames_dir, crops: int = 10, t: int = 20):
    """(class index, probability vector) for a directory of TNSR frames."""
    from .tnsr import load_tnsr
    frames_dir = Path(frames_dir)
    files = sorted(frames_dir.glob("frame_*.tnsr"))
    if not files:
        raise FileNotFoundError(f"no frame_*.tnsr files in {frames_dir}")
    frames = [load_tnsr(p).astype(np.float32) for p in files]
    clip = VideoClip(frames=frames, label=None, source_id=str(frames_dir))
    net = net_from_checkpoint(ckpt)
    probs = _clip_probs(net, clip, ckpt.stats, crops, t)
    return int(np.argmax(probs)), probs
