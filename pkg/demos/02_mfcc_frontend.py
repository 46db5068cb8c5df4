#!/usr/bin/env python3
"""The cepstral front-end, stage by stage.

Framing, Hamming window, FFT magnitude, Mel filterbank, floored log, and
an orthonormal DCT-II. The same numbers fall out of extract_mfcc in one
call; here each stage is printed so the shapes are visible.
"""

import numpy as np

from deviceprint import audio, mfcc

clip = audio.synth_source(duration_s=2.0, sample_rate=16000, seed=3)
frame_cfg = mfcc.FrameConfig(frame_len_ms=256, frame_shift_ms=64)
mel_cfg = mfcc.MelConfig(n_filters=26, f_low=0.0, f_high=8000.0, n_ceps=12)

frames = mfcc.frame_signal(clip, frame_cfg)
print(f"framing: {clip.samples.size} samples -> {frames.shape[0]} frames "
      f"of {frames.shape[1]} samples "
      f"({frame_cfg.frame_len_ms:.0f} ms / {frame_cfg.frame_shift_ms:.0f} ms)")

windowed = mfcc.hamming_window(frames)
taper = mfcc.hamming_window(np.ones(frames.shape[1]))
print(f"window: Hamming taper, endpoints scaled to {taper[0]:.2f}")

mags = mfcc.fft_magnitude(windowed)
print(f"fft: one-sided magnitude spectrum, {mags.shape[1]} bins per frame")

fbank = mfcc.mel_filterbank(mel_cfg, clip.sample_rate, mags.shape[1])
centers = mfcc.filter_centers_hz(mel_cfg)
print(f"mel filterbank: {fbank.shape[0]} triangles, centers from "
      f"{centers[0]:.0f} Hz to {centers[-1]:.0f} Hz, uniformly spaced in Mel")

features = mfcc.extract_mfcc(clip, frame_cfg, mel_cfg)
print(f"mfcc: {features.n_ceps} coefficients x {features.n_frames} frames")
print("first frame:", np.array2string(features.coeffs[:, 0], precision=2))

# amplitude invariance: scaling the waveform only shifts the lowest
# coefficient, the spectral shape coefficients are untouched
louder = audio.AudioClip(clip.samples * 2.0, clip.sample_rate)
features_louder = mfcc.extract_mfcc(louder, frame_cfg, mel_cfg)
shape_change = np.max(np.abs(features_louder.coeffs[1:] - features.coeffs[1:]))
c0_shift = np.mean(features_louder.coeffs[0] - features.coeffs[0])
print(f"doubling the waveform: c0 shifts by {c0_shift:.3f}, "
      f"c1..c11 change by {shape_change:.1e}")
