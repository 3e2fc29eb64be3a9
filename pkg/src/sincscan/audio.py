"""Audio ingestion and the synthetic corpus.

WAV files are PCM16 mono at the configured rate, scaled to [-1, 1] by
1/32768.  Longer files are cropped at a per-utterance seeded offset (so a
file scores identically no matter where it sits in a list), shorter files
are cyclically tiled.

The synthetic corpus stands in for real anti-spoofing data at desk scale:
both classes are harmonic tones under slow envelopes plus a small noise
floor; the spoof class additionally carries a fixed-rate amplitude
modulation and a mild spectral notch.  All frequencies snap to the DFT
grid of the utterance length so the modulation sidebands land on exact
bins and a spectrum check can separate the classes without leakage
windows.
"""

import os
import wave
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError, ParseError
from .rng import Rng, splitmix64

PCM_SCALE = 32768.0
MOD_RATE_HZ = 8.0
MOD_DEPTH = 0.8
NOTCH_BAND_HZ = (1900.0, 2100.0)
NOTCH_GAIN = 0.15
NOISE_STD = 0.003
LABELS = ("bonafide", "spoof")


def stable_offset(seed: int, utt_id: str, bound: int) -> int:
    """Crop offset in [0, bound) that depends only on the seed and id."""
    if bound <= 1:
        return 0
    mixed = splitmix64((seed & 0xFFFFFFFFFFFFFFFF)
                       ^ zlib.crc32(utt_id.encode("utf-8")))
    return int(mixed % bound)


def load_wav(path, n_samples: int, sample_rate: int = 16000,
             seed: int = 0) -> np.ndarray:
    """Read one PCM16 mono WAV into a float64 (n_samples,) array."""
    try:
        with wave.open(str(path), "rb") as wav:
            if wav.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got "
                                  f"{8 * wav.getsampwidth()}-bit")
            if wav.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got "
                                  f"{wav.getnchannels()} channels")
            if wav.getframerate() != sample_rate:
                raise FormatError(f"{path}: expected {sample_rate} Hz, got "
                                  f"{wav.getframerate()} Hz")
            declared = wav.getnframes()
            raw = wav.readframes(declared)
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable WAV file: {exc}") from exc
    if len(raw) < 2 * declared:
        raise OSError(f"{path}: truncated payload, header declares "
                      f"{declared} frames but {len(raw) // 2} are present")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    if samples.size == 0:
        raise FormatError(f"{path}: empty WAV payload")
    if samples.size > n_samples:
        utt_id = os.path.splitext(os.path.basename(str(path)))[0]
        start = stable_offset(seed, utt_id, samples.size - n_samples + 1)
        samples = samples[start:start + n_samples]
    elif samples.size < n_samples:
        samples = np.resize(samples, n_samples)  # cyclic tiling
    return samples


def save_wav(path, samples: np.ndarray, sample_rate: int = 16000) -> None:
    quantized = np.clip(np.rint(np.asarray(samples) * PCM_SCALE),
                        -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(quantized.tobytes())


def parse_protocol(path, utt_col: int = 0, label_col: int = -1):
    """Read (utt_id, label) pairs from a whitespace-separated listing."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split()
            try:
                utt_id, label = cols[utt_col], cols[label_col]
            except IndexError:
                raise ParseError(f"{path}:{lineno}: expected at least "
                                 f"{max(utt_col, label_col) + 1} columns, "
                                 f"got {len(cols)}") from None
            if label not in LABELS:
                raise ParseError(f"{path}:{lineno}: unknown label {label!r}, "
                                 f"expected one of {LABELS}")
            records.append((utt_id, label))
    return records


def write_protocol(path, records) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for utt_id, label in records:
            if label not in LABELS:
                raise InputError(f"unknown label {label!r} for {utt_id}")
            handle.write(f"{utt_id} - - - {label}\n")


@dataclass(frozen=True)
class SynthSpec:
    """Everything the spectrum oracle needs to know about one utterance."""

    utt_id: str
    label: str
    f0_hz: float
    n_harmonics: int


def _grid_snap(freq_hz: float, n_samples: int, sample_rate: int) -> float:
    bin_hz = sample_rate / n_samples
    return max(1, round(freq_hz / bin_hz)) * bin_hz


def synthesize_utterance(spec: SynthSpec, seed: int, n_samples: int = 64000,
                         sample_rate: int = 16000) -> np.ndarray:
    """Render one corpus utterance; deterministic in (spec, seed)."""
    rng = Rng(splitmix64(seed ^ zlib.crc32(spec.utt_id.encode("utf-8"))))
    t = np.arange(n_samples) / sample_rate
    tone = np.zeros(n_samples)
    for k in range(1, spec.n_harmonics + 1):
        amp = rng.uniform(0.5, 1.0) / k
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tone += amp * np.sin(2.0 * np.pi * (k * spec.f0_hz) * t + phase)
    env_hz = _grid_snap(rng.uniform(0.25, 1.0), n_samples, sample_rate)
    env_phase = rng.uniform(0.0, 2.0 * np.pi)
    tone *= 1.0 + 0.3 * np.sin(2.0 * np.pi * env_hz * t + env_phase)
    if spec.label == "spoof":
        depth = MOD_DEPTH
        tone *= (1.0 - depth / 2.0
                 + (depth / 2.0) * np.cos(2.0 * np.pi * MOD_RATE_HZ * t))
    wave_sum = tone + NOISE_STD * (
        2.0 * rng.uniform(0.0, 1.0, size=n_samples) - 1.0)
    if spec.label == "spoof":
        spectrum = np.fft.rfft(wave_sum)
        freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
        band = (freqs >= NOTCH_BAND_HZ[0]) & (freqs <= NOTCH_BAND_HZ[1])
        spectrum[band] *= NOTCH_GAIN
        wave_sum = np.fft.irfft(spectrum, n=n_samples)
    peak = np.max(np.abs(wave_sum))
    return wave_sum * (0.7 / peak)


def plan_corpus(seed: int, n_per_class: int, n_samples: int = 64000,
                sample_rate: int = 16000):
    """Draw the per-utterance specs without rendering any audio."""
    specs = []
    for label in LABELS:
        for i in range(n_per_class):
            utt_id = f"synth_{label}_{i:04d}"
            rng = Rng(splitmix64(seed ^ zlib.crc32(utt_id.encode("utf-8"))
                                 ^ 0x9E3779B97F4A7C15))
            # harmonics stay below the notch band: 5 * 350 < 1900 Hz
            f0 = _grid_snap(rng.uniform(60.0, 350.0), n_samples, sample_rate)
            specs.append(SynthSpec(utt_id=utt_id, label=label, f0_hz=f0,
                                   n_harmonics=3 + rng.integer(3)))
    return specs


def generate_synthetic_corpus(seed: int, n_per_class: int, out_dir,
                              n_samples: int = 64000,
                              sample_rate: int = 16000):
    """Write WAVs plus a protocol file; returns the (utt_id, label) list."""
    if n_per_class < 0:
        raise InputError(f"n_per_class must be >= 0, got {n_per_class}")
    os.makedirs(out_dir, exist_ok=True)
    specs = plan_corpus(seed, n_per_class, n_samples, sample_rate)
    for spec in specs:
        samples = synthesize_utterance(spec, seed, n_samples, sample_rate)
        save_wav(os.path.join(out_dir, f"{spec.utt_id}.wav"),
                 samples, sample_rate)
    records = [(spec.utt_id, spec.label) for spec in specs]
    write_protocol(os.path.join(out_dir, "protocol.txt"), records)
    return records


def load_corpus(corpus_dir, records, n_samples: int, sample_rate: int,
                seed: int) -> np.ndarray:
    """Stack the listed utterances into a (N, n_samples) matrix."""
    waves = np.empty((len(records), n_samples))
    for row, (utt_id, _) in enumerate(records):
        path = os.path.join(corpus_dir, f"{utt_id}.wav")
        waves[row] = load_wav(path, n_samples, sample_rate, seed=seed)
    return waves
