"""Synthetic vowel-like test signals and a two-attribute toy corpus.

Utterances are pulse trains shaped by a cascade of formant resonators. The
second corpus attribute shifts every formant up and transposes F0, giving
the conversion models a clear, learnable spectral/pitch contrast. Content
(vowel template, duration, pitch contour shape) is shared index-for-index
across the attributes so evaluation can pair utterances; training never
uses that pairing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sig

from .featio import write_wav
from .features import Waveform

# Formant frequencies (Hz) and bandwidths of three vowel-ish templates.
VOWEL_TEMPLATES = {
    "a": ((730.0, 1090.0, 2440.0), (80.0, 110.0, 160.0)),
    "o": ((450.0, 800.0, 2830.0), (70.0, 100.0, 170.0)),
    "e": ((530.0, 1840.0, 2480.0), (70.0, 120.0, 160.0)),
}

DEFAULT_ATTRIBUTES = ("calm", "bright")

# Attribute transform applied to the second class.
FORMANT_SHIFT = 1.3
F0_RATIO = 1.6


def _resonator(freq: float, bandwidth: float, sample_rate: int):
    """Second-order all-pole resonator coefficients."""
    r = np.exp(-np.pi * bandwidth / sample_rate)
    theta = 2.0 * np.pi * freq / sample_rate
    a = [1.0, -2.0 * r * np.cos(theta), r * r]
    return [1.0 - r], a


def vowel_like(duration: float, f0: float, formants, bandwidths,
               sample_rate: int = 16000, vibrato: float = 0.01,
               noise_level: float = 1e-4, seed: int = 0) -> Waveform:
    """Pulse train through a formant cascade, lightly jittered.

    ``f0`` may carry slow vibrato and a small downward declination so the
    pitch track is speech-like rather than a constant.
    """
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    contour = f0 * (1.0 + vibrato * np.sin(2.0 * np.pi * 5.0 * t))
    contour *= 1.0 - 0.04 * (t / max(duration, 1e-9))

    phase = np.cumsum(contour) / sample_rate
    pulses = np.zeros(n)
    hits = np.flatnonzero(np.diff(np.floor(phase), prepend=0.0) > 0)
    pulses[hits] = 1.0

    rng = np.random.default_rng(seed)
    excitation = pulses + noise_level * rng.standard_normal(n)
    out = excitation
    for freq, bw in zip(formants, bandwidths):
        b, a = _resonator(freq, bw, sample_rate)
        out = sig.lfilter(b, a, out)

    # Fade edges to avoid onset clicks, then normalize.
    fade = min(n // 20, 256)
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        out[:fade] *= ramp
        out[-fade:] *= ramp[::-1]
    peak = np.max(np.abs(out))
    if peak > 0:
        out = 0.5 * out / peak
    return Waveform(samples=out, sample_rate=sample_rate)


@dataclass(frozen=True)
class UtteranceSpec:
    """Content parameters shared by the paired renditions of one utterance."""

    vowel: str
    duration: float
    f0: float
    formant_jitter: float


def _draw_spec(rng: np.random.Generator) -> UtteranceSpec:
    vowel = list(VOWEL_TEMPLATES)[int(rng.integers(len(VOWEL_TEMPLATES)))]
    return UtteranceSpec(
        vowel=vowel,
        duration=float(rng.uniform(0.45, 0.7)),
        f0=float(rng.uniform(105.0, 135.0)),
        formant_jitter=float(rng.uniform(0.97, 1.03)),
    )


def render_utterance(spec: UtteranceSpec, attribute: int,
                     sample_rate: int = 16000, seed: int = 0) -> Waveform:
    """Render one side of a pair: attribute 1 shifts formants and F0."""
    freqs, bws = VOWEL_TEMPLATES[spec.vowel]
    freqs = np.asarray(freqs) * spec.formant_jitter
    f0 = spec.f0
    if attribute == 1:
        freqs = freqs * FORMANT_SHIFT
        f0 = f0 * F0_RATIO
    return vowel_like(spec.duration, f0, freqs, bws,
                      sample_rate=sample_rate, seed=seed)


def make_toy_corpus(root, n_per_attribute: int, seed: int = 0,
                    attributes=DEFAULT_ATTRIBUTES,
                    sample_rate: int = 16000) -> list[UtteranceSpec]:
    """Write root/<attribute>/utt####.wav for both attributes.

    Each index renders the same content spec under both attributes, so
    corpus position pairs them for evaluation purposes.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    specs = [_draw_spec(rng) for _ in range(n_per_attribute)]
    for attr_idx, attr in enumerate(attributes):
        directory = root / attr
        directory.mkdir(parents=True, exist_ok=True)
        for i, spec in enumerate(specs):
            wave = render_utterance(spec, attr_idx, sample_rate=sample_rate,
                                    seed=seed * 100003 + i)
            write_wav(directory / f"utt{i:04d}.wav", wave)
    return specs
