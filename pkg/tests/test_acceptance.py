"""Top-level acceptance battery.

One test per shipped guarantee, in order; each prints a visible verdict
line so a full run reads as a ten-line report. The expensive default-size
training is shared across the convergence, conversion, and
discriminability checks.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

import voxkit.gradcheck as gc
import voxkit.layers as L
import voxkit.tensor as T
from voxkit import frontend, vc
from voxkit.cli import main as cli_main
from voxkit.metrics import cosine, discriminability, mcd
from voxkit.pooling import EMBED_DIM, AttentionBlock, SpeakerEncoder, StatsPooling
from voxkit.seresnet import EncoderConfig, FrameLevelExtractor, SEBlock


def announce(capsys, number, detail):
    with capsys.disabled():
        print(f"\n[acceptance {number:02d}] PASS  {detail}", flush=True)


# ---------------------------------------------------------------------------
# shared expensive artifacts
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_split():
    ds = vc.gen_toy_dataset(8, 20, seed=0)
    train, held = [], []
    for speaker, utts in ds.by_speaker().items():
        train.extend(utts[:16])
        held.extend(utts[16:])
    return replace(ds, utterances=train), held


@pytest.fixture(scope="module")
def trained_ddse(toy_split):
    train_ds, _ = toy_split
    cfg = vc.TrainingConfig(seed=0)
    start = time.time()
    _, model, losses = vc.train_joint(train_ds, cfg)
    elapsed = time.time() - start
    return cfg, model, losses, elapsed


def conversion_trials(model, held, n=100, seed=123):
    """Fraction of held-out conversions whose embedding lands closer to a
    different utterance of the target speaker than to the source."""
    rng = np.random.default_rng(seed)
    wins = 0
    for _ in range(n):
        while True:
            si, ti = rng.integers(0, len(held), 2)
            if held[si].speaker_id != held[ti].speaker_id:
                break
        others = [u for u in held
                  if u.speaker_id == held[ti].speaker_id
                  and u.utterance_id != held[ti].utterance_id]
        other = others[int(rng.integers(len(others)))]
        converted = model.convert(held[si].mel, held[ti].mel)
        emb = model.encoder.embed(converted)
        to_target = cosine(emb, model.encoder.embed(other.mel))
        to_source = cosine(emb, model.encoder.embed(held[si].mel))
        if to_target > to_source:
            wins += 1
    return wins


# ---------------------------------------------------------------------------
# 1. finite-difference gradient audit
# ---------------------------------------------------------------------------

def test_01_gradient_suite(capsys):
    required = {"conv2d", "fully_connected", "batchnorm2d_train", "batchnorm2d_eval",
                "instance_norm", "se_block", "resnet_se_block",
                "attention_stats_pooling", "content_encoder", "decoder",
                "encoder_tiny"}
    start = time.time()
    rows = gc.run_suite(n_seeds=20)
    elapsed = time.time() - start
    names = {name for name, _, _, _ in rows}
    assert required <= names
    worst_overall = 0.0
    for name, worst, tol, ok in rows:
        assert ok, f"{name} failed its tolerance: {worst:.3e} > {tol:.0e}"
        assert worst < 1e-4, f"{name} exceeds the acceptance bound: {worst:.3e}"
        worst_overall = max(worst_overall, worst)
    assert elapsed < 120.0
    announce(capsys, 1, f"{len(rows)} components x 20 seeds, worst rel err "
                        f"{worst_overall:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. closed-form oracles
# ---------------------------------------------------------------------------

def test_02_formula_oracles(capsys):
    rng = np.random.default_rng(0)
    params = L.ParameterSet()
    se = SEBlock(params, "se", channels=6, reduction=3, rng=rng)
    se.fc1.bias.value[...] = rng.standard_normal(2)
    se.fc2.bias.value[...] = rng.standard_normal(6)
    h = rng.standard_normal((2, 6, 4, 5))

    # direct evaluation with nothing but numpy
    z = h.mean(axis=(2, 3))
    hidden = np.maximum(z @ se.fc1.weight.value.T + se.fc1.bias.value, 0.0)
    s = 1.0 / (1.0 + np.exp(-(hidden @ se.fc2.weight.value.T + se.fc2.bias.value)))
    direct = h * s[:, :, None, None]
    worst = np.abs(se.forward(h) - direct).max()
    assert worst < 1e-12

    x = rng.standard_normal((9, 5))
    assert mcd(x, x).mean_db == 0.0
    single = mcd(np.array([[1.0]]), np.array([[0.0]])).mean_db
    assert abs(single - 6.1421) < 1e-3
    announce(capsys, 2, f"squeeze/excite/rescale off by {worst:.1e}; "
                        f"mcd identity 0, single-coefficient {single:.4f} dB")


# ---------------------------------------------------------------------------
# 3. shape contract at default size
# ---------------------------------------------------------------------------

def test_03_shape_contract(capsys):
    cfg = EncoderConfig()
    rng = np.random.default_rng(1)
    params = L.ParameterSet()
    enc = SpeakerEncoder(params, cfg, rng=rng)
    assert cfg.feature_dim == cfg.channels[-1] * 32
    for frames in (8, 50, 100, 257):
        x = rng.standard_normal((1, 1, 256, frames))
        feats = enc.extractor.features(x, "eval")
        assert feats.shape == (1, math.ceil(frames / 8), cfg.feature_dim)
        emb = enc.forward(x, "eval")
        assert emb.shape == (1, EMBED_DIM)
    announce(capsys, 3, f"256xT -> (ceil(T/8), {cfg.feature_dim}) and "
                        f"{EMBED_DIM}-d embedding for T in (8, 50, 100, 257)")


# ---------------------------------------------------------------------------
# 4. pooling equivalences
# ---------------------------------------------------------------------------

def test_04_pooling_equivalences(capsys):
    rng = np.random.default_rng(2)
    h = rng.standard_normal((3, 7, 10))

    pool = StatsPooling()
    uniform = np.full((3, 7), 1.0 / 7)
    pooled = pool.forward(h, uniform)
    plain = np.concatenate([h.mean(axis=1),
                            np.sqrt(np.maximum(h.var(axis=1), 1e-8))], axis=1)
    worst_pool = np.abs(pooled - plain).max()
    assert worst_pool < 1e-9

    params = L.ParameterSet()
    attn = AttentionBlock(params, "attn", feat_dim=10, hidden=6, rng=rng)
    alpha = attn.forward(h)
    worst_sum = np.abs(alpha.sum(axis=1) - 1.0).max()
    assert worst_sum < 1e-9

    scores = rng.standard_normal((4, 9))
    worst_shift = np.abs(T.softmax(scores, axis=1)
                         - T.softmax(scores + 13.7, axis=1)).max()
    assert worst_shift < 1e-12
    announce(capsys, 4, f"uniform-alpha pooling off by {worst_pool:.1e}, "
                        f"sum(alpha)-1 {worst_sum:.1e}, softmax shift {worst_shift:.1e}")


# ---------------------------------------------------------------------------
# 5. gradient reaches the speaker encoder with no speaker loss
# ---------------------------------------------------------------------------

def test_05_speaker_gradients_without_speaker_loss(capsys):
    cfg = vc.TrainingConfig(seed=5, channels=(8, 8, 8), reduction=4, attn_hidden=8,
                            bottleneck=16, content_channels=8, kernel=3)
    params, model = vc.build_converter(cfg, 24)
    rng = np.random.default_rng(5)
    batch = rng.standard_normal((2, 24, 16))
    out = model.forward_train(batch)
    model.backward(np.sign(out - batch) / out.size)
    spk = [p for p in params.trainable() if p.name.startswith("spk.")]
    nonzero = sum(1 for p in spk if np.abs(p.grad).max() > 0)
    assert nonzero > 0
    announce(capsys, 5, f"{nonzero}/{len(spk)} speaker-encoder parameters have "
                        f"nonzero gradients after one reconstruction step")


# ---------------------------------------------------------------------------
# 6. toy convergence under the default configuration
# ---------------------------------------------------------------------------

def test_06_toy_convergence(trained_ddse, capsys):
    cfg, _, losses, elapsed = trained_ddse
    values = [v for _, v in losses]
    assert cfg.loss == "l1"
    assert cfg.steps <= 2000
    best = min(values)
    assert best <= 0.5 * values[0], (
        f"loss only reached {best:.3f} from {values[0]:.3f}")
    assert elapsed < 900.0
    announce(capsys, 6, f"L1 {values[0]:.3f} -> {best:.3f} "
                        f"({best / values[0]:.2f}x) in {cfg.steps} steps, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 7. one-shot conversion proxy
# ---------------------------------------------------------------------------

def test_07_one_shot_conversion(toy_split, trained_ddse, capsys):
    train_ds, held = toy_split
    _, model, _, _ = trained_ddse
    wins = conversion_trials(model, held)
    assert wins >= 80, f"only {wins}/100 trials favored the target speaker"

    resnet_cfg = vc.TrainingConfig(seed=0, variant="resnet")
    _, resnet_model, _ = vc.train_joint(train_ds, resnet_cfg)
    resnet_wins = conversion_trials(resnet_model, held)
    with capsys.disabled():
        print(f"\n[acceptance 07] report: plain-resnet ablation wins "
              f"{resnet_wins}/100 (not asserted)", flush=True)
    announce(capsys, 7, f"{wins}/100 converted utterances closer to target "
                        f"than source (resnet ablation: {resnet_wins}/100)")


# ---------------------------------------------------------------------------
# 8. embedding discriminability on held-out utterances
# ---------------------------------------------------------------------------

def test_08_discriminability(toy_split, trained_ddse, capsys):
    _, held = toy_split
    _, model, _, _ = trained_ddse
    groups = {}
    for u in held:
        groups.setdefault(u.speaker_id, []).append(model.encoder.embed(u.mel))
    report = discriminability(groups)
    assert report.margin >= 0.2, f"margin {report.margin:.3f} below 0.2"
    assert report.eer <= 0.10, f"EER {report.eer:.3f} above 10%"
    announce(capsys, 8, f"margin {report.margin:.3f} (intra {report.intra_mean:.3f}, "
                        f"inter {report.inter_mean:.3f}), EER {report.eer:.3f}")


# ---------------------------------------------------------------------------
# 9. byte-identical reruns
# ---------------------------------------------------------------------------

TINY_INI = """
[frontend]
n_mels = 24

[encoder]
channels = 8,8,8
reduction = 4
attn_hidden = 8
bottleneck = 16

[vc]
content_channels = 8
kernel = 3

[train]
steps = 8
batch_size = 2
crop_frames = 12
seed = 3
"""


def test_09_determinism(tmp_path, capsys):
    ini = tmp_path / "tiny.ini"
    ini.write_text(TINY_INI)
    data = tmp_path / "data"
    assert cli_main(["gen-data", "--out", str(data), "--speakers", "3",
                     "--utterances", "3", "--bands", "24", "--min-frames", "16",
                     "--max-frames", "32", "--seed", "7"]) == 0
    for run in ("a", "b"):
        assert cli_main(["train", "--data", str(data), "--config", str(ini),
                         "--out", str(tmp_path / f"{run}.ckpt")]) == 0
    pairs = [("a.ckpt", "b.ckpt"), ("a.ckpt.blob", "b.ckpt.blob"),
             ("a.ckpt.loss.csv", "b.ckpt.loss.csv")]
    for left, right in pairs:
        assert (tmp_path / left).read_bytes() == (tmp_path / right).read_bytes(), \
            f"{left} differs from {right}"
    announce(capsys, 9, "checkpoint manifest, blob, and loss log byte-identical "
                        "across two same-seed runs")


# ---------------------------------------------------------------------------
# 10. frontend fixed points
# ---------------------------------------------------------------------------

def test_10_frontend(capsys):
    silence = frontend.Waveform(np.zeros(16000))
    mel = frontend.melspec(silence)
    assert mel.data.shape == (77, 256)
    assert np.all(mel.data == np.log(frontend.LOG_FLOOR))

    t = np.arange(16000) / 16000.0
    tone = frontend.Waveform(0.5 * np.sin(2 * np.pi * 1000.0 * t))
    fb = frontend.default_filterbank(256)
    expected_band = int(np.argmin(np.abs(fb.centers_hz - 1000.0)))
    tone_mel = frontend.melspec(tone)
    peaks = tone_mel.data.argmax(axis=1)
    assert np.all(peaks == expected_band)

    rng = np.random.default_rng(3)
    x = rng.standard_normal(frontend.N_FFT)
    power = frontend.dft_power(x)
    two_sided = power[0] + power[-1] + 2.0 * power[1:-1].sum()
    time_energy = frontend.N_FFT * np.sum(x * x)
    rel = abs(two_sided - time_energy) / time_energy
    assert rel < 1e-9

    assert frontend.frame_count(16000) == 77
    announce(capsys, 10, f"silence all-floor, 1 kHz peak in band {expected_band}, "
                         f"Parseval rel err {rel:.1e}, 16000 samples -> 77 frames")
