"""Objective metrics: mel-spectral distortion, cosine similarity, and a
speaker-discriminability report.

MCD here is computed directly on log-mel coefficients: per frame
(10/ln10) * sqrt(2 * sum_n (Xc_n - Xr_n)^2) over all 256 bands, averaged
over frames. Frames are paired by index after truncating to the shorter
input (no DTW); a warning is emitted when the lengths differ.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, InputLengthError
from .frontend import MelSpectrogram

MCD_SCALE = 10.0 / np.log(10.0)


def _mel_data(x):
    if isinstance(x, MelSpectrogram):
        return x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected (frames, bands) mel matrix, got shape {arr.shape}")
    return arr


@dataclass
class MCDResult:
    per_frame: np.ndarray
    mean_db: float
    n_frames: int


def mcd(conv, ref):
    """Mean mel distortion in dB between two (frames, bands) spectrograms."""
    a = _mel_data(conv)
    b = _mel_data(ref)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"band count mismatch: {a.shape[1]} vs {b.shape[1]}")
    n = min(a.shape[0], b.shape[0])
    if n == 0:
        raise InputLengthError("no overlapping frames to compare")
    if a.shape[0] != b.shape[0]:
        warnings.warn(
            f"frame counts differ ({a.shape[0]} vs {b.shape[0]}); truncating to {n}",
            stacklevel=2)
    diff = a[:n] - b[:n]
    per_frame = MCD_SCALE * np.sqrt(2.0 * np.sum(diff * diff, axis=1))
    return MCDResult(per_frame, float(per_frame.mean()), n)


def cosine(e1, e2):
    a = np.asarray(e1, dtype=np.float64).reshape(-1)
    b = np.asarray(e2, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(np.sum(a * a))
    nb = np.sqrt(np.sum(b * b))
    if na == 0.0 or nb == 0.0:
        raise ContractError("cosine similarity undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


@dataclass
class DiscriminabilityReport:
    intra_mean: float
    inter_mean: float
    margin: float
    eer: float
    n_intra: int
    n_inter: int

    @property
    def n_trials(self):
        return self.n_intra + self.n_inter

    def to_text(self):
        lines = [
            f"intra_speaker_cosine: {self.intra_mean:.6f}",
            f"inter_speaker_cosine: {self.inter_mean:.6f}",
            f"margin: {self.margin:.6f}",
            f"eer: {self.eer:.6f}",
            f"trials: {self.n_trials}",
        ]
        return "\n".join(lines)


def _eer_from_scores(intra, inter):
    """Equal error rate by sweeping an accept-if-score>=threshold rule.

    FAR falls and FRR rises monotonically over ascending thresholds; the
    estimate is their midpoint at the first threshold where the miss rate
    overtakes the false-accept rate.
    """
    thresholds = np.unique(np.concatenate([intra, inter]))
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    far, frr = 1.0, 0.0
    for th in thresholds:
        far = float(np.mean(inter >= th))
        frr = float(np.mean(intra < th))
        if frr >= far:
            break
    return (far + frr) / 2.0


def discriminability(groups):
    """Same-speaker vs cross-speaker cosine statistics.

    groups: mapping or sequence of per-speaker embedding collections,
    each with >=2 utterances; >=2 speakers total.
    """
    if hasattr(groups, "values"):
        groups = list(groups.values())
    groups = [[np.asarray(e, dtype=np.float64) for e in g] for g in groups]
    if len(groups) < 2:
        raise ContractError(f"need >=2 speakers, got {len(groups)}")
    for g in groups:
        if len(g) < 2:
            raise ContractError("every speaker needs >=2 utterances")

    intra = []
    for g in groups:
        for i in range(len(g)):
            for j in range(i + 1, len(g)):
                intra.append(cosine(g[i], g[j]))
    inter = []
    for s in range(len(groups)):
        for t in range(s + 1, len(groups)):
            for a in groups[s]:
                for b in groups[t]:
                    inter.append(cosine(a, b))
    intra = np.array(intra)
    inter = np.array(inter)
    return DiscriminabilityReport(
        intra_mean=float(intra.mean()),
        inter_mean=float(inter.mean()),
        margin=float(intra.mean() - inter.mean()),
        eer=float(_eer_from_scores(intra, inter)),
        n_intra=len(intra),
        n_inter=len(inter),
    )


def mcd_table_csv(entries):
    """Rows of (system, inter_mcd, intra_mcd) -> csv text with an average column."""
    lines = ["system,inter,intra,average"]
    for system, inter, intra in entries:
        if "," in system or "\n" in system:
            raise ContractError(f"system name must not contain commas: {system!r}")
        lines.append(f"{system},{inter:.4f},{intra:.4f},{(inter + intra) / 2.0:.4f}")
    return "\n".join(lines) + "\n"
