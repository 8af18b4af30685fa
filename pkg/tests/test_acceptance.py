"""Acceptance suite: the eight release criteria, each printed as a pass/fail
line at its stated tolerance. These are the gating checks; the rest of the
test tree covers the same ground at finer grain."""

import time

import numpy as np
import pytest

import ivnet.model as model_mod
from ivnet import tensor as T
from ivnet.gradcheck import run_all
from ivnet.model import (FRAME_DIFFERENCE, RAW_FRAMES, GATES, InteractionNet,
                         ModelConfig, count_parameters, forward_video,
                         zero_state)
from ivnet.pipeline import (CROP_POSITIONS, AugmentationPolicy,
                            NormalizationStats, VideoClip,
                            compute_normalization_stats, crop_window,
                            draw_augmentation, horizontal_flip, load_clip,
                            load_manifest, ten_crop)
from ivnet.rng import Rng
from ivnet.synth import synth_generate
from ivnet.tensor import Tensor, no_grad, softmax
from ivnet.train import (Checkpoint, TrainConfig, evaluate_ten_crop,
                         load_checkpoint, net_from_checkpoint, train)

from oracles import (conv2d_loops, conv3d_loops, convlstm_step_loops,
                     lrn_loops, max_pool2d_loops)


def report(criterion, ok, detail=""):
    print(f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient suite


def test_criterion_1_gradient_suite():
    t0 = time.monotonic()
    results = run_all(seed=0, trials=20)
    elapsed = time.monotonic() - t0
    failures = {n: (err, tol) for n, (err, tol, ok) in results.items() if not ok}
    worst = max(err / tol for err, tol, _ in results.values())
    report("1", not failures and elapsed < 120.0,
           f"{len(results)} ops, worst err/tol {worst:.2e}, {elapsed:.1f}s "
           f"(failures: {failures or 'none'})")


# ---------------------------------------------------------------------------
# 2. nested-loop oracle equivalence


def test_criterion_2_oracle_equivalence():
    t0 = time.monotonic()
    master = Rng(1234)
    worst = 0.0
    cases = 0

    def u(rng, shape):
        return rng.uniform(-1.0, 1.0, shape)

    for trial in range(12):
        rng = master.split(trial + 1)
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 3))
        # input size with (hw + 2p - k) an exact multiple of the stride
        hw = k - 2 * p + s * int(rng.integers(1, 6))
        if hw < 1:
            p = 0
            hw = k + s
        x = u(rng, (ci, hw, hw))
        w = u(rng, (co, ci, k, k))
        b = u(rng, (co,))
        got = T.conv2d(Tensor(x), Tensor(w), Tensor(b), s, p)
        ref = conv2d_loops(x, w, b, s, p)
        worst = max(worst, float(np.abs(got.data - ref).max()))
        cases += 1

    for trial in range(10):
        rng = master.split(100 + trial)
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 3))
        k = int(rng.integers(1, 4))
        hw = k + int(rng.integers(0, 4))
        vol = u(rng, (ci, 2, hw, hw))
        w = u(rng, (co, ci, 2, k, k))
        b = u(rng, (co,))
        pad = (k - 1) // 2
        got = T.conv3d(Tensor(vol), Tensor(w), Tensor(b), pad)
        ref = conv3d_loops(vol, w, b, pad)
        worst = max(worst, float(np.abs(got.data - ref).max()))
        cases += 1

    for trial in range(10):
        rng = master.split(200 + trial)
        c = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        s = int(rng.integers(1, 3))
        hw = k + s * int(rng.integers(0, 5))
        x = u(rng, (c, hw, hw))
        got = T.max_pool2d(Tensor(x), k, s)
        ref = max_pool2d_loops(x, k, s)
        worst = max(worst, float(np.abs(got.data - ref).max()))
        cases += 1

    for trial in range(10):
        rng = master.split(300 + trial)
        c = int(rng.integers(2, 8))
        hw = int(rng.integers(2, 6))
        n = int(rng.integers(1, c + 1))
        x = u(rng, (c, hw, hw))
        got = T.lrn(Tensor(x), n, 1.0, 1e-4, 0.75)
        ref = lrn_loops(x, n, 1.0, 1e-4, 0.75)
        worst = max(worst, float(np.abs(got.data - ref).max()))
        cases += 1

    for trial in range(10):
        rng = master.split(400 + trial)
        ci = int(rng.integers(1, 4))
        ch = int(rng.integers(1, 4))
        k = 2 * int(rng.integers(0, 2)) + 1  # odd kernel
        hw = int(rng.integers(k, k + 4))
        gates = {}
        params = {}
        for gate in GATES:
            wx = u(rng, (ch, ci, k, k))
            wh = u(rng, (ch, ch, k, k))
            bias = u(rng, (ch,))
            gates[gate] = (wx, wh, bias)
            params[f"convlstm.{gate}.wx"] = Tensor(wx)
            params[f"convlstm.{gate}.wh"] = Tensor(wh)
            params[f"convlstm.{gate}.bias"] = Tensor(bias)
        cell = model_mod.ConvLSTMCell(params, ci, ch, k)
        x = u(rng, (ci, hw, hw))
        h0 = u(rng, (ch, hw, hw))
        c0 = u(rng, (ch, hw, hw))
        state = model_mod.ConvLSTMState(h=Tensor(h0), c=Tensor(c0))
        new = model_mod.convlstm_step(cell, Tensor(x), state)
        h_ref, c_ref = convlstm_step_loops(gates, x, h0, c0, cell.padding)
        worst = max(worst, float(np.abs(new.h.data - h_ref).max()),
                    float(np.abs(new.c.data - c_ref).max()))
        cases += 1

    elapsed = time.monotonic() - t0
    report("2", cases >= 50 and worst <= 1e-12 and elapsed < 60.0,
           f"{cases} cases, worst abs err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. parameter audit


def test_criterion_3_parameter_audit(capsys):
    counts = count_parameters(ModelConfig.full(7))
    ok = (counts["convlstm"] == 4_719_616
          and counts["fusion"] == 1_179_904
          and counts["classifier"] == 16_135)
    # audited against an actual built model, not just the closed form
    net = InteractionNet.build(ModelConfig.full(7), Rng(0))
    enumerated = sum(p.data.size for p in net.params.values())
    ok = ok and enumerated == counts["total"]
    from ivnet.cli import main
    assert main(["params", "--preset", "full", "--classes", "7"]) == 0
    out = capsys.readouterr().out
    ok = ok and f"total: {counts['total']}" in out and "21.8M" in out
    report("3", ok, f"convlstm {counts['convlstm']}, fusion {counts['fusion']}, "
                    f"classifier {counts['classifier']}, total {counts['total']}")


# ---------------------------------------------------------------------------
# 4. architecture shape contract


def count_steps(net, frames, mode, monkeypatch):
    calls = []
    original = model_mod.convlstm_step

    def spy(cell, inp, state):
        new = original(cell, inp, state)
        calls.append((inp.shape, new.h.shape))
        return new

    monkeypatch.setattr(model_mod, "convlstm_step", spy)
    with no_grad():
        logits = forward_video(net, frames, mode)
    monkeypatch.setattr(model_mod, "convlstm_step", original)
    return calls, logits


def test_criterion_4_shape_contract(monkeypatch):
    net = InteractionNet.build(ModelConfig.full(7), Rng(2))
    rng = Rng(3)
    frames = [rng.uniform(0, 1, (3, 224, 224), dtype=np.float32)
              for _ in range(20)]
    calls, logits = count_steps(net, frames, RAW_FRAMES, monkeypatch)
    ok = (len(calls) == 19
          and all(h[-3:] == (256, 6, 6) for _, h in calls)
          and logits.shape == (7,))
    calls_diff, logits_diff = count_steps(net, frames, FRAME_DIFFERENCE,
                                          monkeypatch)
    ok = ok and len(calls_diff) == 18 and logits_diff.shape == (7,)
    report("4", ok, f"raw {len(calls)} steps, diff {len(calls_diff)} steps, "
                    f"state {calls[0][1][-3:]}, logits {logits.shape}")


# ---------------------------------------------------------------------------
# 5. desk-scale learning (the long test: a full 2,000-iteration run)


def test_criterion_5_desk_scale_learning(tmp_path):
    t0 = time.monotonic()
    data = tmp_path / "data"
    manifest = synth_generate(data, videos_per_class=13, frames=24, size=32,
                              ego_jitter=0.0, seed=7)
    per_class = 13
    train_idx = [c * per_class + i for c in range(3) for i in range(10)]
    test_idx = [c * per_class + i for c in range(3) for i in range(10, 13)]
    stats = compute_normalization_stats(manifest, train_idx)
    config = ModelConfig.tiny(3, input_mode=RAW_FRAMES)
    tc = TrainConfig.for_preset("tiny", seed=7, iterations=2_000)
    ckpt, metrics = train(manifest, config, tc, stats, train_indices=train_idx)
    final_loss = metrics.losses[-1]
    train_acc, _ = evaluate_ten_crop(ckpt, manifest, crops=10, indices=train_idx)
    test_acc, confusion = evaluate_ten_crop(ckpt, manifest, crops=10,
                                            indices=test_idx)
    elapsed = time.monotonic() - t0
    ok = (train_acc == 1.0 and test_acc >= 8 / 9 and final_loss < 0.1
          and elapsed < 900.0)
    report("5", ok, f"train acc {train_acc:.3f}, test acc {test_acc:.3f} "
                    f"({int(round(test_acc * 9))}/9), loss@2000 {final_loss:.4f}, "
                    f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 6. protocol fidelity


def test_criterion_6_protocol_fidelity():
    rng = Rng(6)
    frames = [rng.uniform(0, 1, (3, 256, 340), dtype=np.float32)
              for _ in range(3)]
    stats = NormalizationStats(mean=[0.4, 0.5, 0.6], std=[0.2, 0.25, 0.3])
    clip = VideoClip(frames=frames, label=1, source_id="p")

    crops = ten_crop(clip, stats)
    ok = len(crops) == 10
    ok = ok and all(f.shape == (3, 224, 224) for c in crops for f in c.frames)
    r0, c0 = crop_window(256, 340, 224, "C")
    ok = ok and (r0, r0 + 223, c0, c0 + 223) == (16, 239, 58, 281)
    center = (frames[0][:, 16:240, 58:282] - stats.mean[:, None, None]) \
        / stats.std[:, None, None]
    ok = ok and np.allclose(crops[4].frames[0], center, atol=1e-6)
    for k in range(5):
        ok = ok and np.array_equal(crops[5 + k].frames[0],
                                   horizontal_flip(crops[k].frames[0]))

    # averaged softmax on a stub model equals the hand-computed mean
    config = ModelConfig.tiny(3)
    net = InteractionNet.build(config, Rng(60))
    for p in net.params.values():
        p.data[:] = 0.0
    bias = np.array([0.3, -0.7, 0.2], dtype=np.float32)
    net.params["classifier.conv.bias"].data[:] = bias
    stub_stats = NormalizationStats(mean=[0.5] * 3, std=[0.5] * 3)
    small = VideoClip(frames=[rng.uniform(0, 1, (3, 32, 32), dtype=np.float32)
                              for _ in range(4)], label=0, source_id="s")
    from ivnet.train import _clip_probs
    probs = _clip_probs(net, small, stub_stats, crops=10, t=4)
    hand = softmax(np.tile(bias.astype(np.float64), (10, 1))).mean(axis=0)
    ok = ok and np.allclose(probs, hand, atol=1e-6)

    # one identical augmentation triple for every frame of a clip
    policy = AugmentationPolicy.standard()
    const = VideoClip(frames=[frames[0].copy() for _ in range(5)], label=0,
                      source_id="c")
    from ivnet.pipeline import augment_video
    out = augment_video(const, policy, stats, Rng(6, 99))
    ok = ok and all(np.array_equal(g, out.frames[0]) for g in out.frames[1:])
    triple = draw_augmentation(policy, Rng(6, 99))
    ok = ok and triple[0] in policy.crop_sizes and triple[1] in CROP_POSITIONS
    report("6", ok, f"10 crops, center window 16..239 x 58..281, "
                    f"stub probs match, shared triple {triple}")


# ---------------------------------------------------------------------------
# 7. determinism of the command-line training path


def test_criterion_7_cli_determinism(tmp_path):
    from ivnet.cli import main
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--videos-per-class", "2",
                 "--frames", "6", "--size", "32", "--seed", "11"]) == 0
    assert main(["stats", "--manifest", str(data / "manifest.txt"),
                 "--out", str(tmp_path / "stats.tnsr")]) == 0
    base = ["train", "--manifest", str(data / "manifest.txt"),
            "--stats", str(tmp_path / "stats.tnsr"), "--preset", "tiny",
            "--seed", "11"]
    assert main(base + ["--iters", "6", "--out", str(tmp_path / "r1")]) == 0
    assert main(base + ["--iters", "6", "--out", str(tmp_path / "r2")]) == 0
    same_ckpt = ((tmp_path / "r1" / "checkpoint.clck").read_bytes()
                 == (tmp_path / "r2" / "checkpoint.clck").read_bytes())
    same_csv = ((tmp_path / "r1" / "metrics.csv").read_bytes()
                == (tmp_path / "r2" / "metrics.csv").read_bytes())

    # save / resume mid-run matches the uninterrupted run
    assert main(base + ["--iters", "3", "--out", str(tmp_path / "half")]) == 0
    assert main(base + ["--iters", "6", "--out", str(tmp_path / "resumed"),
                        "--resume", str(tmp_path / "half" / "checkpoint.clck")]) == 0
    resumed = load_checkpoint(tmp_path / "resumed" / "checkpoint.clck")
    full = load_checkpoint(tmp_path / "r1" / "checkpoint.clck")
    same_resume = all(np.array_equal(resumed.params[n], full.params[n])
                      for n in full.params)
    same_resume = same_resume and all(
        np.array_equal(resumed.opt_v[n], full.opt_v[n]) for n in full.opt_v)
    report("7", same_ckpt and same_csv and same_resume,
           f"checkpoint identical {same_ckpt}, csv identical {same_csv}, "
           f"resume matches {same_resume}")


# ---------------------------------------------------------------------------
# 8. difference-mode sanity


def test_criterion_8_difference_mode_static_clip():
    net = InteractionNet.build(ModelConfig.tiny(3, input_mode=FRAME_DIFFERENCE),
                               Rng(8))
    frames = [np.full((3, 32, 32), 0.62, dtype=np.float32)] * 6
    with no_grad():
        logits = forward_video(net, frames, FRAME_DIFFERENCE)
        zero_feat = net.encode(Tensor(np.zeros((3, 32, 32), dtype=np.float32)))
        state = zero_state(net.config.convlstm_channels, 6, 6, dtype=np.float32)
        for _ in range(4):  # 6 frames -> 5 differences -> 4 pairs
            state = net.step(net.fuse(zero_feat, zero_feat), state)
        ref = net.classify(state.h)
    gap = float(np.abs(logits.data - ref.data).max())
    report("8", gap <= 1e-12, f"max |logit gap| {gap:.2e}")
