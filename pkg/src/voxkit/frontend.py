"""16 kHz audio ingestion and the log-mel feature pipeline.

WAV files (16-bit PCM mono, 16 kHz only; no resampling here) become
waveforms in [-1, 1]; framing uses a 50 ms periodic Hann window with a
12.5 ms hop, zero-padded to a 1024-point spectrum, projected through 256
unit-peak HTK-mel triangles and compressed with a floored natural log.
"""

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, InputLengthError

SAMPLE_RATE = 16000
WIN_LENGTH = 800
HOP_LENGTH = 200
N_FFT = 1024
N_BANDS = 256
FMAX = 8000.0
LOG_FLOOR = 1e-10
MEL_MAGIC = b"MELF"


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __len__(self):
        return len(self.samples)


@dataclass
class MelSpectrogram:
    """(frames, bands) natural-log mel energies plus framing metadata."""

    data: np.ndarray
    sample_rate: int = SAMPLE_RATE
    win_length: int = WIN_LENGTH
    hop_length: int = HOP_LENGTH
    n_fft: int = N_FFT

    @property
    def n_frames(self):
        return self.data.shape[0]

    @property
    def n_bands(self):
        return self.data.shape[1]


def load_wav(path):
    """Read one 16-bit PCM mono 16 kHz WAV file, samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getcomptype() != "NONE":
                raise FormatError(f"compression must be none, got {fh.getcomptype()!r}")
            if fh.getnchannels() != 1:
                raise FormatError(f"channels must be 1, got {fh.getnchannels()}")
            if fh.getsampwidth() != 2:
                raise FormatError(f"sample width must be 16-bit, got {8 * fh.getsampwidth()}-bit")
            if fh.getframerate() != SAMPLE_RATE:
                raise FormatError(f"sample rate must be {SAMPLE_RATE}, got {fh.getframerate()}")
            n = fh.getnframes()
            raw = fh.readframes(n)
    except wave.Error as exc:
        raise FormatError(f"unreadable WAV container: {exc}") from None
    if len(raw) != 2 * n:
        raise FormatError(f"truncated WAV data: expected {2 * n} bytes, got {len(raw)}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, SAMPLE_RATE)


def save_wav(path, waveform):
    """Write a [-1,1] waveform back out as 16-bit PCM mono."""
    clipped = np.clip(waveform.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(clipped * 32768.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(waveform.sample_rate)
        fh.writeframes(pcm.tobytes())


def hann_periodic(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def dft_power(frame):
    """Power spectrum of one 1024-sample frame: 513 bins of Re^2 + Im^2."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (N_FFT,):
        raise DimensionError(f"dft_power expects a frame of {N_FFT} samples, got {frame.shape}")
    spec = np.fft.rfft(frame)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


class MelFilterbank:
    """Triangular filters, linear in Hz between mel-equispaced edge points.

    Unit-peak normalization (not area): between the first and last center
    the triangles form a partition of unity, which guarantees every
    interior frequency bin positive total weight.
    """

    def __init__(self, n_bands=N_BANDS, n_fft=N_FFT, sample_rate=SAMPLE_RATE,
                 fmax=FMAX):
        edges_mel = np.linspace(0.0, hz_to_mel(fmax), n_bands + 2)
        edges_hz = mel_to_hz(edges_mel)
        self.centers_hz = edges_hz[1:-1]
        bins_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
        lo = edges_hz[:-2, None]
        center = edges_hz[1:-1, None]
        hi = edges_hz[2:, None]
        rising = (bins_hz - lo) / (center - lo)
        falling = (hi - bins_hz) / (hi - center)
        self.weights = np.maximum(0.0, np.minimum(rising, falling))

    @property
    def n_bands(self):
        return self.weights.shape[0]

    def apply(self, power):
        return power @ self.weights.T


_filterbanks = {}


def default_filterbank(n_bands=N_BANDS):
    if n_bands not in _filterbanks:
        _filterbanks[n_bands] = MelFilterbank(n_bands=n_bands)
    return _filterbanks[n_bands]


def frame_count(n_samples):
    if n_samples < WIN_LENGTH:
        raise InputLengthError(
            f"need at least {WIN_LENGTH} samples for one frame, got {n_samples}")
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


def melspec(waveform, n_bands=N_BANDS):
    """Waveform -> log-mel matrix (frames, n_bands)."""
    if waveform.sample_rate != SAMPLE_RATE:
        raise FormatError(f"sample rate must be {SAMPLE_RATE}, got {waveform.sample_rate}")
    x = np.asarray(waveform.samples, dtype=np.float64)
    n_frames = frame_count(len(x))
    window = hann_periodic(WIN_LENGTH)
    fb = default_filterbank(n_bands)
    frames = np.zeros((n_frames, N_FFT))
    for i in range(n_frames):
        start = i * HOP_LENGTH
        frames[i, :WIN_LENGTH] = x[start:start + WIN_LENGTH] * window
    power = np.zeros((n_frames, N_FFT // 2 + 1))
    for i in range(n_frames):
        power[i] = dft_power(frames[i])
    logmel = np.log(np.maximum(fb.apply(power), LOG_FLOOR))
    return MelSpectrogram(logmel)


# ---------------------------------------------------------------------------
# Disk cache: 16-byte header (magic, u32 frames, u32 bands, u32 reserved)
# followed by row-major little-endian float32
# ---------------------------------------------------------------------------

def save_mel_cache(path, mel):
    data = mel.data if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    if data.ndim != 2:
        raise DimensionError(f"mel cache stores a 2-D matrix, got shape {data.shape}")
    frames, bands = data.shape
    with open(path, "wb") as fh:
        fh.write(MEL_MAGIC)
        fh.write(struct.pack("<III", frames, bands, 0))
        fh.write(data.astype("<f4").tobytes())


def load_mel_cache(path):
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != MEL_MAGIC:
            raise FormatError(f"not a mel cache file (bad magic) : {path}")
        frames, bands, _ = struct.unpack("<III", header[4:])
        payload = fh.read()
    expected = 4 * frames * bands
    if len(payload) != expected:
        raise FormatError(
            f"truncated mel cache: expected {expected} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(frames, bands)
