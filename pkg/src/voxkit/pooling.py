"""Attention-weighted statistics pooling and the full speaker encoder.

Frame features H (N, T, D) are scored by a small MLP, softmax-normalized
over time, and pooled into weighted mean and standard deviation. The
concatenated statistics pass through a bottleneck head to a fixed-width
embedding. The `resnet` variant keeps the same trunk but replaces the
attention weights with uniform ones and turns every SE block into the
identity, which reduces pooling to plain temporal statistics.
"""

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, FormatError, InputLengthError
from .layers import FullyConnected
from .seresnet import VARIANTS, EncoderConfig, FrameLevelExtractor

EMBED_DIM = 128
EPS_VAR = 1e-8
ALPHA_SUM_TOL = 1e-6


class AttentionBlock:
    """Per-frame scores e_t = w2 tanh(W1 h_t + b1), softmaxed over time.

    The score layer carries no bias: softmax is shift invariant, so a
    score offset could never receive gradient.
    """

    def __init__(self, params, name, feat_dim, hidden, rng=None):
        self.fc1 = FullyConnected(params, f"{name}.fc1", feat_dim, hidden, rng=rng)
        self.fc2 = FullyConnected(params, f"{name}.fc2", hidden, 1, rng=rng, bias=False)
        self._cache = None

    def forward(self, h):
        if h.ndim != 3:
            raise DimensionError(f"attention expects (N,T,D), got {h.shape}")
        t = T.tanh(self.fc1.forward(h))
        scores = self.fc2.forward(t)[..., 0]
        alpha = T.softmax(scores, axis=1)
        self._cache = (t, alpha)
        return alpha

    def backward(self, grad_alpha):
        t, alpha = self._cache
        self._cache = None
        gscores = T.softmax_backward(alpha, grad_alpha, axis=1)
        gt = self.fc2.backward(gscores[..., None])
        return self.fc1.backward(gt * (1.0 - t * t))


class StatsPooling:
    """Weighted mean and stddev over time.

    mu_d = sum_t alpha_t H_td, sigma_d = sqrt(max(sum_t alpha_t H_td^2
    - mu_d^2, 1e-8)). The clamp acts as a subgradient gate: coordinates
    sitting on the variance floor pass no gradient into sigma.
    """

    def __init__(self):
        self._cache = None

    def forward(self, h, alpha):
        if h.ndim != 3 or alpha.ndim != 2 or h.shape[:2] != alpha.shape:
            raise DimensionError(
                f"pooling expects H (N,T,D) with alpha (N,T), got {h.shape} / {alpha.shape}")
        sums = alpha.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > ALPHA_SUM_TOL:
            raise ContractError(
                f"attention weights must sum to 1 per utterance, got sums {sums}")
        mu = np.einsum("nt,ntd->nd", alpha, h)
        m2 = np.einsum("nt,ntd->nd", alpha, h * h)
        var = m2 - mu * mu
        clamped = np.maximum(var, EPS_VAR)
        sigma = np.sqrt(clamped)
        self._cache = (h, alpha, mu, sigma, var >= EPS_VAR)
        return np.concatenate([mu, sigma], axis=1)

    def backward(self, grad_out):
        h, alpha, mu, sigma, live = self._cache
        self._cache = None
        d = mu.shape[1]
        gmu_direct = grad_out[:, :d]
        gsigma = grad_out[:, d:]
        gvar = np.where(live, gsigma * 0.5 / sigma, 0.0)
        gmu = gmu_direct - 2.0 * mu * gvar
        gh = alpha[:, :, None] * (gmu[:, None, :] + 2.0 * gvar[:, None, :] * h)
        galpha = np.einsum("nd,ntd->nt", gmu, h) + np.einsum("nd,ntd->nt", gvar, h * h)
        return gh, galpha


class EmbeddingHead:
    def __init__(self, params, name, in_dim, bottleneck, rng=None):
        self.fc1 = FullyConnected(params, f"{name}.fc1", in_dim, bottleneck, rng=rng)
        self.fc2 = FullyConnected(params, f"{name}.fc2", bottleneck, EMBED_DIM, rng=rng)
        self._mask = None

    def forward(self, u):
        a = self.fc1.forward(u)
        self._mask = T.relu_deriv(a)
        return self.fc2.forward(T.relu(a))

    def backward(self, grad_out):
        ga = self.fc2.backward(grad_out) * self._mask
        self._mask = None
        return self.fc1.backward(ga)


class SpeakerEncoder:
    """Frame extractor + attentive stats pooling + bottleneck head."""

    def __init__(self, params, cfg: EncoderConfig, rng=None, name="spk"):
        self.cfg = cfg
        self.extractor = FrameLevelExtractor(params, cfg, rng, f"{name}.frame")
        self.attention = AttentionBlock(params, f"{name}.attn", cfg.feature_dim,
                                        cfg.attn_hidden, rng)
        self.pool = StatsPooling()
        self.head = EmbeddingHead(params, f"{name}.head", 2 * cfg.feature_dim,
                                  cfg.bottleneck, rng)
        self._uniform = None

    def forward(self, x, mode="train"):
        h = self.extractor.features(x, mode)
        if self.cfg.variant == "resnet":
            n, tp, _ = h.shape
            alpha = np.full((n, tp), 1.0 / tp)
            self._uniform = True
        else:
            alpha = self.attention.forward(h)
            self._uniform = False
        u = self.pool.forward(h, alpha)
        return self.head.forward(u)

    def backward(self, grad_emb):
        gu = self.head.backward(grad_emb)
        gh, galpha = self.pool.backward(gu)
        if not self._uniform:
            gh = gh + self.attention.backward(galpha)
        self._uniform = None
        return self.extractor.features_backward(gh)

    def embed(self, mel):
        """One utterance (frames, bands) -> (128,) embedding, eval mode.

        Utterances always go through alone so the result cannot depend on
        what else happened to be in a batch.
        """
        m = np.asarray(mel, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != self.cfg.mel_bands:
            raise DimensionError(
                f"embed expects (frames, {self.cfg.mel_bands}), got {m.shape}")
        if m.shape[0] < self.cfg.time_downsample:
            raise InputLengthError(
                f"embed needs at least {self.cfg.time_downsample} frames, got {m.shape[0]}")
        x = np.ascontiguousarray(m.T)[None, None, :, :]
        return self.forward(x, "eval")[0].copy()

    def embed_many(self, mels):
        return np.stack([self.embed(m) for m in mels])


def embed_variant(encoder, mel, variant):
    """Embed with the trunk temporarily switched between ddse and resnet."""
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    previous = encoder.cfg.variant
    try:
        encoder.cfg.variant = variant
        encoder.extractor.set_se_identity(variant == "resnet")
        return encoder.embed(mel)
    finally:
        encoder.cfg.variant = previous
        encoder.extractor.set_se_identity(previous == "resnet")


# ---------------------------------------------------------------------------
# Text record format: "utt_id v1 ... v128", one utterance per line
# ---------------------------------------------------------------------------

def format_embedding_record(utt_id, emb):
    if not utt_id or any(c.isspace() for c in utt_id):
        raise FormatError(f"utterance id must be non-empty without whitespace: {utt_id!r}")
    e = np.asarray(emb, dtype=np.float64)
    if e.shape != (EMBED_DIM,):
        raise FormatError(f"embedding must have shape ({EMBED_DIM},), got {e.shape}")
    return " ".join([utt_id] + ["%.10e" % v for v in e])


def parse_embedding_record(line):
    fields = line.split()
    if len(fields) != EMBED_DIM + 1:
        raise FormatError(
            f"embedding record needs 1 id + {EMBED_DIM} values, got {len(fields)} fields")
    try:
        values = np.array([float(f) for f in fields[1:]])
    except ValueError as exc:
        raise FormatError(f"bad embedding value in record: {exc}") from None
    return fields[0], values


def write_embeddings(path, records):
    with open(path, "w", encoding="ascii") as fh:
        for utt_id, emb in records:
            fh.write(format_embedding_record(utt_id, emb) + "\n")


def read_embeddings(path):
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                out.append(parse_embedding_record(line))
    return out
