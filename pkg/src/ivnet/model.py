"""ConvLSTM cell and the three-stage video interaction network.

The network runs a weight-shared convolutional trunk over two successive
inputs (raw frames or frame differences), fuses the two feature maps with a
depth-2 3D convolution, aggregates over time with a ConvLSTM whose final
hidden state feeds a spatial-conv + global-average-pool classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .optim import xavier_init
from .rng import Rng
from .tensor import Tensor
from .tnsr import load_tnsr

RAW_FRAMES = "raw"
FRAME_DIFFERENCE = "diff"
INPUT_MODES = (RAW_FRAMES, FRAME_DIFFERENCE)


@dataclass(frozen=True)
class EncoderStage:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    lrn: bool = False
    pool: tuple[int, int] | None = None  # (window, stride)


@dataclass(frozen=True)
class EncoderConfig:
    """Convolutional trunk applied identically to both input branches.

    ``input_pad`` zero-pads the network input (top, bottom, left, right) so
    the first stride-4 convolution divides exactly.
    """

    stages: tuple[EncoderStage, ...]
    input_pad: tuple[int, int, int, int] = (0, 0, 0, 0)
    in_channels: int = 3

    @property
    def out_channels(self) -> int:
        return self.stages[-1].out_channels

    def output_size(self, input_size: int) -> int:
        h = input_size + self.input_pad[0] + self.input_pad[1]
        for st in self.stages:
            num = h + 2 * st.padding - st.kernel
            if num % st.stride:
                raise ValueError(
                    f"encoder: non-exact conv extent at stage with kernel {st.kernel}")
            h = num // st.stride + 1
            if st.pool is not None:
                w, s = st.pool
                h = (h - w) // s + 1
        return h


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    num_classes: int
    fusion_out_channels: int = 256
    convlstm_channels: int = 256
    convlstm_kernel: int = 3
    classifier_kernel: int = 3
    input_mode: str = RAW_FRAMES
    input_size: int = 224
    preset: str = "full"

    @classmethod
    def full(cls, num_classes: int = 7, input_mode: str = RAW_FRAMES) -> "ModelConfig":
        # AlexNet-style trunk, ungrouped, FC layers removed. The 3-pixel
        # input pad makes the stride-4 first conv exact on 224x224 inputs
        # (54.25 otherwise), landing on 256x6x6.
        enc = EncoderConfig(
            stages=(
                EncoderStage(96, 11, stride=4, lrn=True, pool=(3, 2)),
                EncoderStage(256, 5, padding=2, lrn=True, pool=(3, 2)),
                EncoderStage(384, 3, padding=1),
                EncoderStage(384, 3, padding=1),
                EncoderStage(256, 3, padding=1, pool=(3, 2)),
            ),
            input_pad=(1, 2, 1, 2),
        )
        return cls(encoder=enc, num_classes=num_classes, input_mode=input_mode,
                   fusion_out_channels=256, convlstm_channels=256,
                   input_size=224, preset="full")

    @classmethod
    def tiny(cls, num_classes: int = 3, input_mode: str = RAW_FRAMES) -> "ModelConfig":
        # Desk-scale preset: same topology, 32x32 inputs, 6x6 features.
        enc = EncoderConfig(
            stages=(
                EncoderStage(16, 5, padding=2, pool=(2, 2)),
                EncoderStage(32, 3, padding=1, pool=(2, 2)),
                EncoderStage(32, 3, padding=1, pool=(3, 1)),
            ),
        )
        return cls(encoder=enc, num_classes=num_classes, input_mode=input_mode,
                   fusion_out_channels=16, convlstm_channels=16,
                   input_size=32, preset="tiny")

    @classmethod
    def preset_by_name(cls, name: str, num_classes: int,
                       input_mode: str = RAW_FRAMES) -> "ModelConfig":
        if name == "full":
            return cls.full(num_classes, input_mode)
        if name == "tiny":
            return cls.tiny(num_classes, input_mode)
        raise ValueError(f"unknown preset {name!r}")

    @property
    def feature_size(self) -> int:
        return self.encoder.output_size(self.input_size)


GATES = ("i", "f", "g", "o")  # input, forget, candidate, output


class ConvLSTMCell:
    """Gate kernels for one ConvLSTM layer; padding preserves spatial extent."""

    def __init__(self, params: dict[str, Tensor], c_in: int, c_h: int, kernel: int):
        if kernel % 2 == 0:
            raise ValueError("ConvLSTMCell: kernel must be odd")
        self.params = params  # keys: convlstm.{i|f|g|o}.{wx|wh|bias}
        self.c_in = c_in
        self.c_h = c_h
        self.kernel = kernel
        self.padding = (kernel - 1) // 2

    def gate(self, name: str) -> tuple[Tensor, Tensor, Tensor]:
        return (self.params[f"convlstm.{name}.wx"],
                self.params[f"convlstm.{name}.wh"],
                self.params[f"convlstm.{name}.bias"])


@dataclass
class ConvLSTMState:
    h: Tensor
    c: Tensor


def zero_state(c_h: int, height: int, width: int, batch: int | None = None,
               dtype=np.float32) -> ConvLSTMState:
    shape = (c_h, height, width) if batch is None else (batch, c_h, height, width)
    return ConvLSTMState(h=Tensor(np.zeros(shape, dtype=dtype)),
                         c=Tensor(np.zeros(shape, dtype=dtype)))


def convlstm_step(cell: ConvLSTMCell, inp: Tensor, state: ConvLSTMState) -> ConvLSTMState:
    """One recurrent step:

        i = sigmoid(wx_i * x + wh_i * h + b_i)      f, o likewise
        g = tanh(wx_g * x + wh_g * h + b_g)
        c' = g (*) i + c (*) f
        h' = o (*) tanh(c')
    """
    p = cell.padding

    def pre(name: str) -> Tensor:
        wx, wh, b = cell.gate(name)
        return T.add(T.conv2d(inp, wx, b, stride=1, padding=p),
                     T.conv2d(state.h, wh, None, stride=1, padding=p))

    i = T.sigmoid(pre("i"))
    f = T.sigmoid(pre("f"))
    g = T.tanh(pre("g"))
    c_new = T.add(T.hadamard(g, i), T.hadamard(state.c, f))
    o = T.sigmoid(pre("o"))
    h_new = T.hadamard(o, T.tanh(c_new))
    return ConvLSTMState(h=h_new, c=c_new)


class InteractionNet:
    """Parameter container plus the forward stages."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params
        self.cell = ConvLSTMCell(params, c_in=config.fusion_out_channels,
                                 c_h=config.convlstm_channels,
                                 kernel=config.convlstm_kernel)

    # -- construction -------------------------------------------------

    @classmethod
    def build(cls, config: ModelConfig, rng: Rng, dtype=np.float32) -> "InteractionNet":
        params: dict[str, Tensor] = {}
        stream = iter(range(1, 10_000))

        def weight(shape, fan_in, fan_out):
            return xavier_init(shape, fan_in, fan_out, rng.split(next(stream)), dtype=dtype)

        def bias(n):
            return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)

        c_in = config.encoder.in_channels
        for n, st in enumerate(config.encoder.stages, start=1):
            k = st.kernel
            params[f"encoder.stage{n}.conv.weight"] = weight(
                (st.out_channels, c_in, k, k), c_in * k * k, st.out_channels * k * k)
            params[f"encoder.stage{n}.conv.bias"] = bias(st.out_channels)
            c_in = st.out_channels

        c_e = config.encoder.out_channels
        c_f = config.fusion_out_channels
        params["fusion.conv3d.weight"] = weight(
            (c_f, c_e, 2, 3, 3), c_e * 2 * 9, c_f * 2 * 9)
        params["fusion.conv3d.bias"] = bias(c_f)

        c_h = config.convlstm_channels
        k = config.convlstm_kernel
        for gate in GATES:
            params[f"convlstm.{gate}.wx"] = weight(
                (c_h, c_f, k, k), c_f * k * k, c_h * k * k)
            params[f"convlstm.{gate}.wh"] = weight(
                (c_h, c_h, k, k), c_h * k * k, c_h * k * k)
            params[f"convlstm.{gate}.bias"] = bias(c_h)

        kc = config.classifier_kernel
        params["classifier.conv.weight"] = weight(
            (config.num_classes, c_h, kc, kc), c_h * kc * kc, config.num_classes * kc * kc)
        params["classifier.conv.bias"] = bias(config.num_classes)
        return cls(config, params)

    def import_weights(self, directory) -> int:
        """Overwrite parameters from ``<name>.tnsr`` files; returns count loaded."""
        directory = Path(directory)
        loaded = 0
        for name, p in self.params.items():
            path = directory / f"{name}.tnsr"
            if not path.exists():
                continue
            arr = load_tnsr(path)
            if arr.shape != p.data.shape:
                raise ValueError(f"import: shape mismatch for {name}: "
                                 f"{arr.shape} vs {p.data.shape}")
            p.data[...] = arr.astype(p.data.dtype)
            loaded += 1
        return loaded

    # -- forward stages -----------------------------------------------

    def encode(self, x: Tensor) -> Tensor:
        """Shared trunk; x is [3,S,S] or [N,3,S,S]."""
        t, b, l, r = self.config.encoder.input_pad
        if any((t, b, l, r)):
            x = T.pad2d(x, t, b, l, r)
        for n, st in enumerate(self.config.encoder.stages, start=1):
            w = self.params[f"encoder.stage{n}.conv.weight"]
            bia = self.params[f"encoder.stage{n}.conv.bias"]
            x = T.conv2d(x, w, bia, stride=st.stride, padding=st.padding)
            if st.lrn:
                x = T.lrn(x)
            if st.pool is not None:
                x = T.max_pool2d(x, st.pool[0], st.pool[1])
        return x

    def fuse(self, feat_a: Tensor, feat_b: Tensor) -> Tensor:
        """Stack the two feature maps on a new depth-2 axis, 2x3x3 conv3d,
        squeeze the collapsed depth."""
        if feat_a.shape != feat_b.shape:
            raise ValueError("fuse: feature shape mismatch")
        depth_axis = feat_a.data.ndim - 2  # after the channel axis
        vol = T.stack([feat_a, feat_b], axis=depth_axis)
        out = T.conv3d(vol, self.params["fusion.conv3d.weight"],
                       self.params["fusion.conv3d.bias"], spatial_padding=1)
        shape = out.shape[:depth_axis] + out.shape[depth_axis + 1:]
        return T.reshape(out, shape)

    def step(self, inp: Tensor, state: ConvLSTMState) -> ConvLSTMState:
        return convlstm_step(self.cell, inp, state)

    def classify(self, h_final: Tensor) -> Tensor:
        """3x3 stride-1 pad-1 conv to K maps, then global average pool."""
        maps = T.conv2d(h_final, self.params["classifier.conv.weight"],
                        self.params["classifier.conv.bias"], stride=1, padding=1)
        return T.global_avg_pool(maps)


# ---------------------------------------------------------------------------
# input sequencing and whole-video forward


def prepare_input_sequence(frames, mode: str) -> list[tuple[Tensor, Tensor]]:
    """Sliding pairs over the input stream.

    Raw mode pairs successive frames ((f1,f2), (f2,f3), ...); difference mode
    first forms the T-1 successive difference images and pairs those.
    Consecutive pairs share the same Tensor objects.
    """
    if hasattr(frames, "frames"):
        frames = frames.frames
    ts = [f if isinstance(f, Tensor) else Tensor(f) for f in frames]
    if mode == RAW_FRAMES:
        if len(ts) < 2:
            raise ValueError("raw mode needs at least 2 frames")
        stream = ts
    elif mode == FRAME_DIFFERENCE:
        if len(ts) < 3:
            raise ValueError("difference mode needs at least 3 frames")
        stream = [T.sub(ts[t + 1], ts[t]) for t in range(len(ts) - 1)]
    else:
        raise ValueError(f"unknown input mode {mode!r}")
    return [(stream[t], stream[t + 1]) for t in range(len(stream) - 1)]


def forward_batch(net: InteractionNet, clips: np.ndarray, mode: str | None = None,
                  dtype=None) -> Tensor:
    """Logits [B,K] for a batch of equal-length clips [B,T,3,S,S].

    Each stream element is encoded once through the shared trunk; adjacent
    pairs then drive the fusion + ConvLSTM recurrence.
    """
    cfg = net.config
    mode = cfg.input_mode if mode is None else mode
    if dtype is None:
        dtype = net.params["fusion.conv3d.weight"].data.dtype
    clips = np.asarray(clips, dtype=dtype)
    if clips.ndim != 5:
        raise ValueError(f"forward_batch: expected [B,T,3,S,S], got {clips.shape}")
    b, t = clips.shape[:2]
    if mode == FRAME_DIFFERENCE:
        if t < 3:
            raise ValueError("difference mode needs at least 3 frames")
        stream = clips[:, 1:] - clips[:, :-1]
    elif mode == RAW_FRAMES:
        if t < 2:
            raise ValueError("raw mode needs at least 2 frames")
        stream = clips
    else:
        raise ValueError(f"unknown input mode {mode!r}")
    tl = stream.shape[1]

    x = Tensor(np.ascontiguousarray(stream.reshape(b * tl, *stream.shape[2:])))
    feats = net.encode(x)  # [b*tl, C_e, hw, hw]
    hw = feats.shape[-1]
    state = zero_state(cfg.convlstm_channels, hw, hw, batch=b, dtype=dtype)
    base = np.arange(b) * tl
    for step in range(tl - 1):
        fa = T.take_rows(feats, base + step)
        fb = T.take_rows(feats, base + step + 1)
        state = net.step(net.fuse(fa, fb), state)
    return net.classify(state.h)  # [B, K]


def forward_video(net: InteractionNet, clip, mode: str | None = None) -> Tensor:
    """Logits [K] for one clip (list of [3,S,S] frames or a VideoClip)."""
    if hasattr(clip, "frames"):
        frames = clip.frames
    else:
        frames = clip
    arrs = [f.data if isinstance(f, Tensor) else np.asarray(f) for f in frames]
    batch = np.stack(arrs)[None]
    logits = forward_batch(net, batch, mode=mode)
    return T.reshape(logits, (logits.shape[-1],))


# ---------------------------------------------------------------------------
# parameter audit


def count_parameters(config: ModelConfig) -> dict[str, int]:
    """Exact closed-form parameter counts per group."""
    counts: dict[str, int] = {}
    enc = 0
    c_in = config.encoder.in_channels
    for st in config.encoder.stages:
        enc += st.kernel ** 2 * c_in * st.out_channels + st.out_channels
        c_in = st.out_channels
    counts["encoder"] = enc
    c_e = config.encoder.out_channels
    c_f = config.fusion_out_channels
    counts["fusion"] = 2 * 9 * c_e * c_f + c_f
    c_h = config.convlstm_channels
    k = config.convlstm_kernel
    counts["convlstm"] = 4 * (k ** 2 * (c_f + c_h) * c_h + c_h)
    kc = config.classifier_kernel
    counts["classifier"] = kc ** 2 * c_h * config.num_classes + config.num_classes
    counts["total"] = sum(counts.values())
    return counts


def count_parameters_of(net: InteractionNet) -> dict[str, int]:
    """Counts by enumerating the actual parameter tensors (audit path)."""
    groups = {"encoder": 0, "fusion": 0, "convlstm": 0, "classifier": 0}
    for name, p in net.params.items():
        groups[name.split(".", 1)[0]] += p.data.size
    groups["total"] = sum(groups.values())
    return groups
