"""Walk a mel matrix through the speaker encoder and inspect the stages.

Uses a reduced geometry so it runs in seconds; the default one (channels
16,16,32,64,64 on 256 bands) behaves identically, just bigger.
"""

import math

import numpy as np

import voxkit.layers as L
from voxkit.pooling import EMBED_DIM, SpeakerEncoder
from voxkit.seresnet import EncoderConfig

rng = np.random.default_rng(1)
cfg = EncoderConfig(mel_bands=64, channels=(8, 8, 16), reduction=4,
                    attn_hidden=16, bottleneck=32)
params = L.ParameterSet()
enc = SpeakerEncoder(params, cfg, rng=rng)
print(f"encoder variant {cfg.variant!r}, {sum(p.value.size for p in params)} weights")

# frame features: frequency folds into channels, time downsamples per
# block stride (the default 5-channel geometry gives a factor of 8)
down = cfg.time_downsample
print(f"time downsample {down}, frame feature dim {cfg.feature_dim}")
for frames in (8, 50, 100, 257):
    x = rng.standard_normal((1, 1, cfg.mel_bands, frames))
    h = enc.extractor.features(x, "eval")
    assert h.shape == (1, math.ceil(frames / down), cfg.feature_dim)
    print(f"  T={frames:3d} -> frame features {h.shape[1]} x {h.shape[2]}")

# attention turns frames into a weighted mean/stddev, then a 128-d voice vector
x = rng.standard_normal((2, 1, cfg.mel_bands, 96))
h = enc.extractor.features(x, "eval")
alpha = enc.attention.forward(h)
print(f"attention weights sum to {alpha.sum(axis=1)} (one per utterance)")
emb = enc.forward(x, "eval")
print(f"embedding shape {emb.shape}, expected dim {EMBED_DIM}")

# embed() is the single-utterance convenience: (frames, bands) in, vector out
mel = rng.standard_normal((120, cfg.mel_bands))
v = enc.embed(mel)
print(f"embed() gives {v.shape}, unit-free cosine geometry; "
      f"norm {np.linalg.norm(v):.3f}")

# the resnet ablation drops SE and attention (plain temporal statistics)
plain_cfg = EncoderConfig(mel_bands=64, channels=(8, 8, 16), reduction=4,
                          attn_hidden=16, bottleneck=32, variant="resnet")
plain = SpeakerEncoder(L.ParameterSet(), plain_cfg, rng=np.random.default_rng(1))
print(f"resnet variant embeds to {plain.embed(mel).shape} through uniform pooling")
