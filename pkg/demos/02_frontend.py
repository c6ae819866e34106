"""From a waveform to the 256-band log-mel matrix the encoder consumes.

Synthesizes one second of a 1 kHz tone in noise, runs the frontend, and
pokes at the fixed points: frame count, the mel band the tone lands in,
and the silence floor.
"""

import os
import tempfile

import numpy as np

from voxkit import frontend

SR = 16000
t = np.arange(SR) / SR
rng = np.random.default_rng(7)
samples = 0.4 * np.sin(2 * np.pi * 1000.0 * t) + 0.01 * rng.standard_normal(SR)
wav = frontend.Waveform(samples)

mel = frontend.melspec(wav)
print(f"{len(wav)} samples at {SR} Hz -> {mel.n_frames} frames x {mel.n_bands} bands")
print(f"frame_count agrees: {frontend.frame_count(len(wav)) == mel.n_frames}")

# where did the tone go?
fb = frontend.default_filterbank()
band = int(np.argmin(np.abs(fb.centers_hz - 1000.0)))
peaks = mel.data.argmax(axis=1)
print(f"band nearest 1 kHz is {band} (center {fb.centers_hz[band]:.1f} Hz), "
      f"per-frame argmax spans {peaks.min()}..{peaks.max()}")

# silence maps to the log floor everywhere
quiet = frontend.melspec(frontend.Waveform(np.zeros(SR)))
print(f"silence: every cell at log floor = "
      f"{bool(np.all(quiet.data == np.log(frontend.LOG_FLOOR)))}")

# round-trip through the wav and mel cache formats
tmp = tempfile.mkdtemp()
wav_path = os.path.join(tmp, "tone.wav")
mel_path = os.path.join(tmp, "tone.mel")
frontend.save_wav(wav_path, wav)
frontend.save_mel_cache(mel_path, mel)
again = frontend.melspec(frontend.load_wav(wav_path))
cached = frontend.load_mel_cache(mel_path)
print(f"wav round trip max mel diff {np.abs(again.data - mel.data).max():.2e} "
      f"(16-bit quantization), cache round trip "
      f"{np.abs(cached.data - mel.data).max():.2e} (float32)")
