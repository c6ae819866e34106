"""Squeeze-and-excitation ResNet frame-level feature extractor.

The extractor turns a (N, 1, bands, frames) log-mel map into per-frame
feature vectors: a conv stem followed by residual SE blocks. Each block
chains five convolutions, kernels {3,3,1,3,3}: two 3x3 pairs forming two
residual sub-units plus a 1x1 projection shortcut carrying the first
sub-unit across the stride/width change. All convs use same-padding, so
a stride-2 block maps spatial extent n to ceil(n/2).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, InputLengthError
from .layers import BatchNorm2D, Conv2DLayer, FullyConnected

VARIANTS = ("ddse", "resnet")
STEM_ORDERS = ("conv_relu_bn", "conv_bn_relu")


@dataclass
class EncoderConfig:
    """Geometry and variant switches for the speaker encoder.

    channels[0] is the stem width, the rest are per-block output widths.
    The first block keeps resolution, every later block halves it.
    """

    mel_bands: int = 256
    channels: tuple = (16, 16, 32, 64, 64)
    reduction: int = 8
    variant: str = "ddse"
    stem_kernel: tuple = (3, 3)
    stem_stride: tuple = (1, 1)
    stem_order: str = "conv_relu_bn"
    attn_hidden: int = 128
    bottleneck: int = 256

    def __post_init__(self):
        if self.mel_bands < 1:
            raise ConfigError(f"mel_bands must be >= 1, got {self.mel_bands}")
        if len(self.channels) < 2:
            raise ConfigError("channels needs a stem width plus at least one block")
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"channel widths must be positive: {self.channels}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.stem_order not in STEM_ORDERS:
            raise ConfigError(f"stem_order must be one of {STEM_ORDERS}")
        for c in self.channels[1:]:
            if c % self.reduction != 0:
                raise ConfigError(
                    f"block width {c} not divisible by reduction ratio {self.reduction}")

    @property
    def n_blocks(self):
        return len(self.channels) - 1

    def block_stride(self, i):
        return (1, 1) if i == 0 else (2, 2)

    @property
    def time_downsample(self):
        s = self.stem_stride[1]
        for i in range(self.n_blocks):
            s *= self.block_stride(i)[1]
        return s

    @property
    def freq_out(self):
        f = math.ceil(self.mel_bands / self.stem_stride[0])
        for i in range(self.n_blocks):
            f = math.ceil(f / self.block_stride(i)[0])
        return f

    @property
    def feature_dim(self):
        return self.channels[-1] * self.freq_out


# ---------------------------------------------------------------------------
# SE block: squeeze (channel means), excitation (bottleneck MLP + sigmoid),
# channel-wise rescale
# ---------------------------------------------------------------------------

def squeeze(h):
    """Channel-wise statistics: mean over all spatial positions, (N,C,F,T) -> (N,C)."""
    if h.ndim != 4:
        raise DimensionError(f"squeeze expects (N,C,F,T), got {h.shape}")
    return h.mean(axis=(2, 3))


def se_rescale(h, s):
    """hhat[n,c,f,t] = s[n,c] * h[n,c,f,t]."""
    if h.shape[:2] != s.shape:
        raise DimensionError(f"rescale channel mismatch: {h.shape} vs {s.shape}")
    return h * s[:, :, None, None]


class SEBlock:
    def __init__(self, params, name, channels, reduction, rng=None):
        if channels % reduction != 0:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        self.channels = channels
        self.fc1 = FullyConnected(params, f"{name}.fc1", channels, channels // reduction, rng=rng)
        self.fc2 = FullyConnected(params, f"{name}.fc2", channels // reduction, channels, rng=rng)
        self.force_identity = False  # ablation hook: s == 1
        self._cache = None

    def excitation(self, z):
        """Channel weights s = sigmoid(W2 relu(W1 z + b1) + b2), each in (0,1)."""
        a1 = z @ self.fc1.weight.value.T + self.fc1.bias.value
        a2 = T.relu(a1) @ self.fc2.weight.value.T + self.fc2.bias.value
        return T.sigmoid(a2)

    def forward(self, h, mode="train"):
        if self.force_identity:
            self._cache = ("identity",)
            return h
        z = squeeze(h)
        a1 = self.fc1.forward(z)
        r1 = T.relu(a1)
        s = T.sigmoid(self.fc2.forward(r1))
        self._cache = ("se", h, s, T.relu_deriv(a1), h.shape[2] * h.shape[3])
        return se_rescale(h, s)

    def backward(self, grad_out):
        kind = self._cache[0]
        if kind == "identity":
            self._cache = None
            return grad_out
        _, h, s, relu_mask, spatial = self._cache
        self._cache = None
        gs = (grad_out * h).sum(axis=(2, 3))
        gh = grad_out * s[:, :, None, None]
        ga2 = gs * s * (1.0 - s)
        gr1 = self.fc2.backward(ga2)
        gz = self.fc1.backward(gr1 * relu_mask)
        gh += gz[:, :, None, None] / spatial
        return gh


# ---------------------------------------------------------------------------
# Residual SE block and the extractor stack
# ---------------------------------------------------------------------------

class ResNetSEBlock:
    """Five convs {3,3,1,3,3}; strides {s,1,s,1,1} with s the block stride.

    Sub-unit A: conv1 -> BN -> ReLU -> conv2 -> BN -> SE, plus the 1x1
    projection shortcut (conv3 + BN), then ReLU. Sub-unit B: conv4 -> BN
    -> ReLU -> conv5 -> BN -> SE, plus identity, then ReLU.
    """

    def __init__(self, params, name, in_ch, out_ch, stride, reduction, rng=None,
                 se_active=True):
        self.stride = tuple(stride)
        self.conv1 = Conv2DLayer(params, f"{name}.conv1", in_ch, out_ch, (3, 3), stride, "same", rng, bias=False)
        self.bn1 = BatchNorm2D(params, f"{name}.bn1", out_ch)
        self.conv2 = Conv2DLayer(params, f"{name}.conv2", out_ch, out_ch, (3, 3), (1, 1), "same", rng, bias=False)
        self.bn2 = BatchNorm2D(params, f"{name}.bn2", out_ch)
        self.se1 = SEBlock(params, f"{name}.se1", out_ch, reduction, rng)
        self.conv3 = Conv2DLayer(params, f"{name}.conv3", in_ch, out_ch, (1, 1), stride, (0, 0), rng, bias=False)
        self.bn3 = BatchNorm2D(params, f"{name}.bn3", out_ch)
        self.conv4 = Conv2DLayer(params, f"{name}.conv4", out_ch, out_ch, (3, 3), (1, 1), "same", rng, bias=False)
        self.bn4 = BatchNorm2D(params, f"{name}.bn4", out_ch)
        self.conv5 = Conv2DLayer(params, f"{name}.conv5", out_ch, out_ch, (3, 3), (1, 1), "same", rng, bias=False)
        self.bn5 = BatchNorm2D(params, f"{name}.bn5", out_ch)
        self.se2 = SEBlock(params, f"{name}.se2", out_ch, reduction, rng)
        self.se1.force_identity = not se_active
        self.se2.force_identity = not se_active
        self._cache = None

    def forward(self, x, mode="train"):
        a = self.bn1.forward(self.conv1.forward(x, mode), mode)
        mask1 = T.relu_deriv(a)
        a = self.se1.forward(self.bn2.forward(self.conv2.forward(T.relu(a), mode), mode), mode)
        sc = self.bn3.forward(self.conv3.forward(x, mode), mode)
        y1 = a + sc
        mask2 = T.relu_deriv(y1)
        y1 = T.relu(y1)

        b = self.bn4.forward(self.conv4.forward(y1, mode), mode)
        mask3 = T.relu_deriv(b)
        b = self.se2.forward(self.bn5.forward(self.conv5.forward(T.relu(b), mode), mode), mode)
        y2 = b + y1
        mask4 = T.relu_deriv(y2)
        self._cache = (mask1, mask2, mask3, mask4)
        return T.relu(y2)

    def backward(self, grad_out):
        mask1, mask2, mask3, mask4 = self._cache
        self._cache = None
        g2 = grad_out * mask4
        gb = self.conv5.backward(self.bn5.backward(self.se2.backward(g2)))
        gy1 = self.conv4.backward(self.bn4.backward(gb * mask3)) + g2
        g1 = gy1 * mask2
        ga = self.conv2.backward(self.bn2.backward(self.se1.backward(g1)))
        gx = self.conv1.backward(self.bn1.backward(ga * mask1))
        gx += self.conv3.backward(self.bn3.backward(g1))
        return gx


class FrameLevelExtractor:
    """Stem (Conv2D/ReLU/BN) plus the residual SE blocks; emits per-frame features."""

    def __init__(self, params, cfg: EncoderConfig, rng=None, name="frame"):
        self.cfg = cfg
        # with the ReLU between conv and BN the stem bias is a live
        # parameter; in the conv->BN->ReLU ordering it would be dead
        self.stem_conv = Conv2DLayer(params, f"{name}.stem.conv", 1, cfg.channels[0],
                                     cfg.stem_kernel, cfg.stem_stride, "same", rng,
                                     bias=cfg.stem_order == "conv_relu_bn")
        self.stem_bn = BatchNorm2D(params, f"{name}.stem.bn", cfg.channels[0])
        se_active = cfg.variant == "ddse"
        self.blocks = []
        for i in range(cfg.n_blocks):
            self.blocks.append(ResNetSEBlock(
                params, f"{name}.block{i + 1}", cfg.channels[i], cfg.channels[i + 1],
                cfg.block_stride(i), cfg.reduction, rng, se_active=se_active))
        self._stem_mask = None
        self._feat_shape = None

    def set_se_identity(self, flag):
        for b in self.blocks:
            b.se1.force_identity = flag
            b.se2.force_identity = flag

    def forward(self, x, mode="train"):
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.cfg.mel_bands:
            raise DimensionError(
                f"extractor expects (N,1,{self.cfg.mel_bands},T), got {x.shape}")
        h = self.stem_conv.forward(x, mode)
        if self.cfg.stem_order == "conv_relu_bn":
            self._stem_mask = T.relu_deriv(h)
            h = self.stem_bn.forward(T.relu(h), mode)
        else:
            h = self.stem_bn.forward(h, mode)
            self._stem_mask = T.relu_deriv(h)
            h = T.relu(h)
        for b in self.blocks:
            h = b.forward(h, mode)
        return h

    def backward(self, grad_out):
        g = grad_out
        for b in reversed(self.blocks):
            g = b.backward(g)
        if self.cfg.stem_order == "conv_relu_bn":
            g = self.stem_bn.backward(g) * self._stem_mask
        else:
            g = self.stem_bn.backward(g * self._stem_mask)
        self._stem_mask = None
        return self.stem_conv.backward(g)

    def features(self, x, mode="train"):
        """(N,1,F,T) -> (N, T', C*F'): channel x frequency flattened per frame."""
        t = x.shape[3]
        if t < self.cfg.time_downsample:
            raise InputLengthError(
                f"need at least {self.cfg.time_downsample} frames, got {t}")
        feat = self.forward(x, mode)
        n, c, f, tp = feat.shape
        self._feat_shape = (n, c, f, tp)
        return np.ascontiguousarray(feat.transpose(0, 3, 1, 2).reshape(n, tp, c * f))

    def features_backward(self, grad_h):
        n, c, f, tp = self._feat_shape
        self._feat_shape = None
        g = grad_h.reshape(n, tp, c, f).transpose(0, 2, 3, 1)
        return self.backward(np.ascontiguousarray(g))
