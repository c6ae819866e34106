"""Desk-scale one-shot voice conversion on synthetic mel data.

A three-layer 1-D conv content encoder strips per-utterance statistics
with instance normalization; the decoder mirrors it, re-injecting a
speaker embedding as per-channel scale and shift after each layer's
normalization. The whole stack trains jointly on spectrum reconstruction,
so the speaker encoder receives gradients only through the decoder's use
of the embedding, never from a dedicated loss.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    InputLengthError,
    NumericError,
    TrainingError,
)
from .frontend import load_mel_cache, save_mel_cache
from .layers import Adam, Conv2DLayer, FullyConnected, ParameterSet
from .pooling import EMBED_DIM, SpeakerEncoder
from .seresnet import EncoderConfig

IN_EPS = 1e-8


class InstanceNorm1D:
    """Per-utterance, per-channel normalization over time; no parameters."""

    def __init__(self, eps=IN_EPS):
        self.eps = eps
        self._cache = None

    def forward(self, x, mode="train"):
        if x.ndim != 3:
            raise DimensionError(f"instance norm expects (N,C,T), got {x.shape}")
        t = x.shape[2]
        if t < 2:
            raise ContractError(
                f"instance norm needs >=2 frames for statistics, got {t}")
        mean = x.mean(axis=2, keepdims=True)
        var = x.var(axis=2, keepdims=True)
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * ivar
        self._cache = (xhat, ivar, t)
        return xhat

    def backward(self, grad_out):
        xhat, ivar, t = self._cache
        self._cache = None
        gsum = grad_out.sum(axis=2, keepdims=True)
        gdot = (grad_out * xhat).sum(axis=2, keepdims=True)
        return (ivar / t) * (t * grad_out - gsum - xhat * gdot)


class Conv1DLayer:
    """Same-padded conv over time on (N, C, T), built on the 2-D kernel."""

    def __init__(self, params, name, in_ch, out_ch, kernel, rng=None, bias=True):
        if kernel % 2 != 1:
            raise ConfigError(f"time kernel must be odd for same padding, got {kernel}")
        self.inner = Conv2DLayer(params, name, in_ch, out_ch, (1, kernel), (1, 1),
                                 (0, kernel // 2), rng, bias=bias)

    def forward(self, x, mode="train"):
        return self.inner.forward(x[:, :, None, :], mode)[:, :, 0, :]

    def backward(self, grad_out):
        return self.inner.backward(grad_out[:, :, None, :])[:, :, 0, :]


class CondAffine:
    """Per-channel scale and shift computed from a speaker embedding.

    scale = 1 + raw so conditioning starts near the identity, but the FC
    is randomly initialized (never zero) so gradients reach the speaker
    encoder from the very first step.
    """

    def __init__(self, params, name, embed_dim, channels, rng=None):
        self.channels = channels
        self.fc = FullyConnected(params, f"{name}.fc", embed_dim, 2 * channels,
                                 rng=rng, init_scale=0.2)
        self._cache = None

    def forward(self, x, emb, mode="train"):
        raw = self.fc.forward(emb)
        scale = 1.0 + raw[:, :self.channels]
        shift = raw[:, self.channels:]
        self._cache = (x, scale)
        return x * scale[:, :, None] + shift[:, :, None]

    def backward(self, grad_out):
        x, scale = self._cache
        self._cache = None
        gx = grad_out * scale[:, :, None]
        gscale = (grad_out * x).sum(axis=2)
        gshift = grad_out.sum(axis=2)
        gemb = self.fc.backward(np.concatenate([gscale, gshift], axis=1))
        return gx, gemb


class ContentEncoder:
    """mel (N, bands, T) -> speaker-stripped content codes (N, channels, T)."""

    def __init__(self, params, mel_bands, channels, kernel, rng=None, name="content"):
        widths = [mel_bands, channels, channels, channels]
        self.convs = []
        self.norms = []
        for i in range(3):
            self.convs.append(Conv1DLayer(params, f"{name}.conv{i + 1}", widths[i],
                                          widths[i + 1], kernel, rng, bias=False))
            self.norms.append(InstanceNorm1D())
        self._masks = None

    def forward(self, x, mode="train"):
        masks = []
        for i in range(3):
            x = self.norms[i].forward(self.convs[i].forward(x, mode))
            if i < 2:
                masks.append(T.relu_deriv(x))
                x = T.relu(x)
        self._masks = masks
        return x

    def backward(self, grad_out):
        masks = self._masks
        self._masks = None
        g = grad_out
        for i in (2, 1, 0):
            if i < 2:
                g = g * masks[i]
            g = self.convs[i].backward(self.norms[i].backward(g))
        return g


class Decoder:
    """Content codes + embedding -> mel frames, conditioned at every layer."""

    def __init__(self, params, mel_bands, channels, kernel, embed_dim=EMBED_DIM,
                 rng=None, name="dec"):
        widths = [channels, channels, channels, mel_bands]
        self.convs = []
        self.norms = []
        self.affines = []
        for i in range(3):
            self.convs.append(Conv1DLayer(params, f"{name}.conv{i + 1}", widths[i],
                                          widths[i + 1], kernel, rng, bias=False))
            self.norms.append(InstanceNorm1D())
            self.affines.append(CondAffine(params, f"{name}.cond{i + 1}", embed_dim,
                                           widths[i + 1], rng))
        self._masks = None

    def forward(self, x, emb, mode="train"):
        masks = []
        for i in range(3):
            x = self.norms[i].forward(self.convs[i].forward(x, mode))
            x = self.affines[i].forward(x, emb, mode)
            if i < 2:
                masks.append(T.relu_deriv(x))
                x = T.relu(x)
        self._masks = masks
        return x

    def backward(self, grad_out):
        masks = self._masks
        self._masks = None
        g = grad_out
        gemb = None
        for i in (2, 1, 0):
            if i < 2:
                g = g * masks[i]
            g, ge = self.affines[i].backward(g)
            gemb = ge if gemb is None else gemb + ge
            g = self.convs[i].backward(self.norms[i].backward(g))
        return g, gemb


class VoiceConverter:
    """Speaker encoder + content encoder + conditioned decoder."""

    def __init__(self, params, encoder_cfg: EncoderConfig, content_channels=64,
                 kernel=5, rng=None):
        self.cfg = encoder_cfg
        self.encoder = SpeakerEncoder(params, encoder_cfg, rng, name="spk")
        self.content = ContentEncoder(params, encoder_cfg.mel_bands,
                                      content_channels, kernel, rng)
        self.decoder = Decoder(params, encoder_cfg.mel_bands, content_channels,
                               kernel, EMBED_DIM, rng)

    def forward_train(self, mel_batch):
        """(N, bands, T) -> reconstruction, trainable path (self-embedding)."""
        emb = self.encoder.forward(mel_batch[:, None, :, :], "train")
        codes = self.content.forward(mel_batch, "train")
        return self.decoder.forward(codes, emb, "train")

    def backward(self, grad_out):
        gcodes, gemb = self.decoder.backward(grad_out)
        gmel = self.content.backward(gcodes)
        gmel = gmel + self.encoder.backward(gemb)[:, 0, :, :]
        return gmel

    def _check_frames(self, mel):
        mel = np.asarray(mel, dtype=np.float64)
        if mel.ndim != 2 or mel.shape[1] != self.cfg.mel_bands:
            raise DimensionError(
                f"expected (frames, {self.cfg.mel_bands}) mel, got {mel.shape}")
        if mel.shape[0] < max(self.cfg.time_downsample, 2):
            raise InputLengthError(
                f"need at least {max(self.cfg.time_downsample, 2)} frames, got {mel.shape[0]}")
        return mel

    def convert(self, src_mel, tgt_mel):
        """decoder(content(src), speaker(tgt)); frame count follows the source."""
        src = self._check_frames(src_mel)
        tgt = self._check_frames(tgt_mel)
        emb = self.encoder.embed(tgt)
        codes = self.content.forward(np.ascontiguousarray(src.T)[None], "eval")
        out = self.decoder.forward(codes, emb[None], "eval")
        return np.ascontiguousarray(out[0].T)

    def reconstruct(self, mel):
        return self.convert(mel, mel)


# ---------------------------------------------------------------------------
# Synthetic multi-speaker mel dataset
# ---------------------------------------------------------------------------

NOISE_FLOOR = 1e-4
ENVELOPE_SCALE = 2.0
ENVELOPE_MIN_DISTANCE = 1.0


@dataclass
class ToyUtterance:
    speaker_id: str
    utterance_id: str
    mel: np.ndarray


@dataclass
class ToySpeakerDataset:
    seed: int
    n_bands: int
    envelopes: np.ndarray
    pitch_bands: np.ndarray
    utterances: list

    @property
    def speakers(self):
        seen = dict.fromkeys(u.speaker_id for u in self.utterances)
        return list(seen)

    def by_speaker(self):
        groups = {}
        for u in self.utterances:
            groups.setdefault(u.speaker_id, []).append(u)
        return groups


def _smooth_envelope(rng, n_bands):
    """Random smooth log-amplitude curve over the band axis."""
    knots = rng.normal(scale=ENVELOPE_SCALE, size=12)
    x = np.linspace(0.0, 11.0, n_bands)
    env = np.interp(x, np.arange(12.0), knots)
    # keep the smoothing window shorter than the band axis or convolve
    # mode="same" would return the kernel's length instead
    klen = max(3, min(31, n_bands // 8 * 2 + 1))
    kernel = np.hanning(klen)
    kernel /= kernel.sum()
    return np.convolve(env, kernel, mode="same")


def _render_utterance(rng, envelope, pitch_band, n_bands, n_frames):
    f0 = pitch_band + np.cumsum(rng.normal(scale=0.15, size=n_frames))
    f0 = np.clip(f0, 6.0, 48.0)
    bands = np.arange(n_bands, dtype=np.float64)
    comb = np.zeros((n_frames, n_bands))
    for k in range(1, 7):
        centers = k * f0
        comb += (1.0 / k) * np.exp(-0.5 * ((bands[None, :] - centers[:, None]) / 1.5) ** 2)
    power = np.exp(envelope)[None, :] * (0.02 + comb)
    power += NOISE_FLOOR * rng.uniform(0.5, 1.5, size=power.shape)
    return np.log(np.maximum(power, 1e-10))


def envelope_distance(a, b):
    """RMS distance between two log-envelopes."""
    d = np.asarray(a) - np.asarray(b)
    return float(np.sqrt(np.mean(d * d)))


def gen_toy_dataset(n_speakers=8, utterances_per_speaker=20, seed=0, n_bands=256,
                    min_frames=64, max_frames=256):
    """Deterministic synthetic dataset: per-speaker envelope and pitch band,
    per-utterance pitch contour and harmonic comb, rendered as log-mel."""
    if n_speakers < 2:
        raise ContractError(f"need at least 2 speakers, got {n_speakers}")
    if utterances_per_speaker < 1:
        raise ContractError("need at least 1 utterance per speaker")
    rng = np.random.default_rng(seed)

    envelopes = []
    for _ in range(n_speakers):
        env = _smooth_envelope(rng, n_bands)
        # resample until clearly apart from every existing speaker
        while any(envelope_distance(env, e) < ENVELOPE_MIN_DISTANCE for e in envelopes):
            env = _smooth_envelope(rng, n_bands)
        envelopes.append(env)
    envelopes = np.stack(envelopes)
    pitch_bands = rng.uniform(8.0, 40.0, size=n_speakers)

    utterances = []
    for s in range(n_speakers):
        for u in range(utterances_per_speaker):
            n_frames = int(rng.integers(min_frames, max_frames + 1))
            mel = _render_utterance(rng, envelopes[s], pitch_bands[s], n_bands, n_frames)
            utterances.append(ToyUtterance(f"spk{s}", f"spk{s}_utt{u:02d}", mel))
    return ToySpeakerDataset(seed, n_bands, envelopes, pitch_bands, utterances)


def save_dataset(dataset, out_dir):
    """Manifest of "speaker_id utterance_id n_frames path" plus mel blobs."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for u in dataset.utterances:
        rel = f"{u.utterance_id}.mel"
        save_mel_cache(os.path.join(out_dir, rel), u.mel)
        lines.append(f"{u.speaker_id} {u.utterance_id} {u.mel.shape[0]} {rel}")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(in_dir):
    manifest = os.path.join(in_dir, "manifest.txt")
    utterances = []
    n_bands = None
    with open(manifest, "r", encoding="ascii") as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 4:
                raise FormatError(f"manifest line {ln}: expected 4 fields, got {len(fields)}")
            speaker_id, utterance_id, n_frames, rel = fields
            mel = load_mel_cache(os.path.join(in_dir, rel))
            if mel.shape[0] != int(n_frames):
                raise FormatError(
                    f"manifest line {ln}: {rel} has {mel.shape[0]} frames, expected {n_frames}")
            n_bands = mel.shape[1]
            utterances.append(ToyUtterance(speaker_id, utterance_id, mel))
    if not utterances:
        raise FormatError(f"empty dataset manifest: {manifest}")
    return ToySpeakerDataset(-1, n_bands, np.zeros((0, n_bands)), np.zeros(0), utterances)


# ---------------------------------------------------------------------------
# Joint training
# ---------------------------------------------------------------------------

@dataclass
class TrainingConfig:
    seed: int
    steps: int = 500
    batch_size: int = 3
    crop_frames: int = 48
    lr: float = 3e-3
    grad_clip: float = 5.0
    loss: str = "l1"
    recon_weight: float = 1.0
    variant: str = "ddse"
    channels: tuple = (16, 16, 32, 64, 64)
    reduction: int = 8
    attn_hidden: int = 128
    bottleneck: int = 256
    content_channels: int = 64
    kernel: int = 5

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("training seed is mandatory")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        for name in ("batch_size", "crop_frames", "lr", "grad_clip",
                     "recon_weight", "content_channels", "kernel"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.loss not in ("l1", "l2"):
            raise ConfigError(f"loss must be l1 or l2, got {self.loss!r}")

    def encoder_config(self, mel_bands):
        return EncoderConfig(mel_bands=mel_bands, channels=tuple(self.channels),
                             reduction=self.reduction, variant=self.variant,
                             attn_hidden=self.attn_hidden, bottleneck=self.bottleneck)


def build_converter(cfg: TrainingConfig, mel_bands):
    params = ParameterSet()
    rng = np.random.default_rng(cfg.seed)
    model = VoiceConverter(params, cfg.encoder_config(mel_bands),
                           cfg.content_channels, cfg.kernel, rng)
    return params, model


def _sample_batch(rng, utterances, batch_size, crop):
    idx = rng.integers(0, len(utterances), size=batch_size)
    batch = np.zeros((batch_size, utterances[0].mel.shape[1], crop))
    for row, i in enumerate(idx):
        mel = utterances[i].mel
        start = int(rng.integers(0, mel.shape[0] - crop + 1))
        batch[row] = mel[start:start + crop].T
    return batch


def train_joint(dataset, cfg: TrainingConfig):
    """Jointly trains the full stack on reconstruction; returns
    (params, model, losses) with losses as a list of (step, value) rows,
    each value measured before that step's update."""
    if len(dataset.speakers) < 2:
        raise ContractError(f"training needs >=2 speakers, got {len(dataset.speakers)}")
    params, model = build_converter(cfg, dataset.n_bands)
    shortest = min(u.mel.shape[0] for u in dataset.utterances)
    crop = min(cfg.crop_frames, shortest)
    floor = max(model.cfg.time_downsample, 2)
    if crop < floor:
        raise ContractError(
            f"crop of {crop} frames is below the model minimum of {floor}")

    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(params, lr=cfg.lr, grad_clip=cfg.grad_clip)
    losses = []
    for step in range(cfg.steps):
        batch = _sample_batch(rng, dataset.utterances, cfg.batch_size, crop)
        try:
            out = model.forward_train(batch)
            diff = out - batch
            if cfg.loss == "l1":
                loss = cfg.recon_weight * float(np.mean(np.abs(diff)))
                grad = cfg.recon_weight * np.sign(diff) / diff.size
            else:
                loss = cfg.recon_weight * float(np.mean(diff * diff))
                grad = cfg.recon_weight * 2.0 * diff / diff.size
        except NumericError as exc:
            raise TrainingError(f"training diverged at step {step}: {exc}") from exc
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}")
        losses.append((step, loss))
        try:
            model.backward(grad)
            opt.step()
        except (NumericError, TrainingError) as exc:
            raise TrainingError(f"training diverged at step {step}: {exc}") from exc
    return params, model, losses


def loss_curve_csv(losses):
    lines = ["step,loss"]
    for step, value in losses:
        lines.append(f"{step},{value:.10e}")
    return "\n".join(lines) + "\n"
