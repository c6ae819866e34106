"""The three rulers: mel-cepstral distortion, cosine, and discriminability.

MCD has two closed-form anchors worth knowing by heart: identical inputs
give exactly 0 dB, and a single frame with a single coefficient off by one
gives (10 / ln 10) * sqrt(2) = 6.1419 dB.
"""

import numpy as np

from voxkit import vc
from voxkit.metrics import cosine, discriminability, mcd, mcd_table_csv

rng = np.random.default_rng(5)

x = rng.standard_normal((40, 13))
print(f"mcd(x, x) = {mcd(x, x).mean_db:.4f} dB")
print(f"single unit off: {mcd(np.array([[1.0]]), np.array([[0.0]])).mean_db:.4f} dB")
noisy = x + 0.1 * rng.standard_normal(x.shape)
r = mcd(noisy, x)
print(f"mild noise: {r.mean_db:.3f} dB over {r.n_frames} frames "
      f"(per-frame spread {r.per_frame.std():.3f})")

a = rng.standard_normal(128)
print(f"cosine(a, a) = {cosine(a, a):.6f}, cosine(a, -a) = {cosine(a, -a):.6f}")

# train a tiny converter, then ask how separable its voice vectors are
ds = vc.gen_toy_dataset(n_speakers=4, utterances_per_speaker=8, seed=21,
                        n_bands=48, min_frames=48, max_frames=96)
cfg = vc.TrainingConfig(seed=6, steps=80, batch_size=3, crop_frames=32,
                        channels=(8, 8, 16), reduction=4, attn_hidden=16,
                        bottleneck=32, content_channels=16, kernel=3)
_, model, _ = vc.train_joint(ds, cfg)

groups = {}
for utt in ds.utterances:
    groups.setdefault(utt.speaker_id, []).append(model.encoder.embed(utt.mel))
rep = discriminability(groups)
print(f"embeddings: intra {rep.intra_mean:.3f} vs inter {rep.inter_mean:.3f}, "
      f"margin {rep.margin:.3f}, EER {rep.eer:.3f} "
      f"({rep.n_intra} intra / {rep.n_inter} inter pairs)")

# csv helper for batch evaluations, one (system, inter, intra) row each
rows = [("tiny-ddse", r.mean_db, mcd(x, x).mean_db)]
print("\n" + mcd_table_csv(rows))
