"""Frame-level speech analysis, F0 statistics, and deterministic resynthesis.

Analysis follows the classic source-filter decomposition: per frame, a
cepstrally smoothed spectral envelope, a fundamental-frequency value with a
voicing decision from normalized autocorrelation, and a single-band
aperiodicity estimate. Envelopes are exchanged with a compact 36-coefficient
warped-cepstral representation (MCC) that the conversion models operate on.
Synthesis drives an envelope filter with a mixed pulse/noise excitation and
is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, InsufficientDataError, ParameterError

# Magnitudes are floored here before any log is taken, so silence stays finite.
ENVELOPE_FLOOR = 1e-10

# Additional per-frame floor relative to the frame's spectral peak. Limits the
# log dynamic range so the low-order cepstral fit does not ring around narrow
# peaks; silence is unaffected (its peak is zero).
RELATIVE_FLOOR = 1e-5

# Floor applied to the standard deviation of voiced log-F0 so that the
# log-Gaussian transform stays defined on degenerate (constant-pitch) corpora.
F0_STD_FLOOR = 1e-3

# Autocorrelation peaks within this fraction of the global maximum compete as
# period candidates; the shortest lag wins. Guards against octave errors on
# strongly harmonic signals where multiples of the period correlate equally.
PEAK_CANDIDATE_RATIO = 0.9

# Frame energy below this is treated as silence (unvoiced, zero envelope).
SILENCE_ENERGY = 1e-12

# Fixed stream for the noise component of the excitation. Synthesis must be
# bit-reproducible, so the generator is reseeded on every call.
_NOISE_SEED = 0x4D415353


@dataclass(frozen=True)
class AnalysisConfig:
    """Knobs for the analysis/synthesis front end.

    ``frame_shift`` is in seconds; analysis windows are four shifts long.
    ``mcc_order`` is fixed at 36 and ``mel_warp_alpha`` is the first-order
    all-pass constant (0.42 approximates the mel scale at 16 kHz).
    """

    frame_shift: float = 0.005
    fft_size: int = 1024
    mcc_order: int = 36
    mel_warp_alpha: float = 0.42
    f0_floor: float = 70.0
    f0_ceil: float = 500.0
    voicing_threshold: float = 0.45

    def __post_init__(self):
        if self.frame_shift <= 0:
            raise ParameterError("frame_shift must be positive")
        if self.fft_size < 16 or self.fft_size & (self.fft_size - 1):
            raise ParameterError("fft_size must be a power of two >= 16")
        if self.mcc_order != 36:
            raise ParameterError("mcc_order is fixed at 36")
        if not -1.0 < self.mel_warp_alpha < 1.0:
            raise ParameterError("mel_warp_alpha must lie in (-1, 1)")
        if not 0 < self.f0_floor < self.f0_ceil:
            raise ParameterError("need 0 < f0_floor < f0_ceil")
        if not 0 < self.voicing_threshold < 1:
            raise ParameterError("voicing_threshold must lie in (0, 1)")

    def hop_length(self, sample_rate: int) -> int:
        return max(1, round(self.frame_shift * sample_rate))

    def frame_length(self, sample_rate: int) -> int:
        return 4 * self.hop_length(sample_rate)


@dataclass
class Waveform:
    """Mono audio, samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InputError("waveform must be mono (1-D)")
        if self.sample_rate <= 0:
            raise ParameterError("sample_rate must be positive")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise InputError("waveform contains non-finite samples")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0 + 1e-9:
            raise InputError("waveform samples must lie in [-1, 1]")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class AcousticFeatures:
    """Per-utterance frame matrix of MCC, F0, voicing, and aperiodicity.

    ``f0[t] > 0`` exactly when ``voiced[t]``; unvoiced frames carry f0 = 0.
    ``aperiodicity`` is passed through conversion untouched.
    """

    mcc: np.ndarray
    f0: np.ndarray
    voiced: np.ndarray
    aperiodicity: np.ndarray
    frame_shift: float
    sample_rate: int

    def __post_init__(self):
        self.mcc = np.asarray(self.mcc, dtype=np.float64)
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        self.aperiodicity = np.asarray(self.aperiodicity, dtype=np.float64)

    @property
    def n_frames(self) -> int:
        return self.mcc.shape[0]

    def validate(self):
        t = self.mcc.shape[0]
        if self.mcc.ndim != 2:
            raise InputError("mcc must be a 2-D frame matrix")
        if self.f0.shape != (t,) or self.voiced.shape != (t,):
            raise InputError("f0/voiced length must match mcc frame count")
        if self.aperiodicity.ndim != 2 or self.aperiodicity.shape[0] != t:
            raise InputError("aperiodicity must be T x B")
        for name, arr in (("mcc", self.mcc), ("f0", self.f0),
                          ("aperiodicity", self.aperiodicity)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite values")
        if not np.array_equal(self.voiced, self.f0 > 0):
            raise InputError("voiced flags must equal (f0 > 0)")
        if self.frame_shift <= 0 or self.sample_rate <= 0:
            raise InputError("frame_shift and sample_rate must be positive")


@dataclass(frozen=True)
class F0Statistics:
    """Mean and standard deviation of voiced log-F0 (natural log, Hz)."""

    mean_log_f0: float
    std_log_f0: float
    n_voiced_frames: int

    @classmethod
    def from_log_values(cls, log_f0: np.ndarray) -> "F0Statistics":
        log_f0 = np.asarray(log_f0, dtype=np.float64)
        if log_f0.size < 2:
            raise InsufficientDataError(
                "need at least 2 voiced frames to estimate F0 statistics")
        std = float(np.std(log_f0))
        return cls(mean_log_f0=float(np.mean(log_f0)),
                   std_log_f0=max(std, F0_STD_FLOOR),
                   n_voiced_frames=int(log_f0.size))


def _frame_count(n_samples: int, hop: int) -> int:
    return 1 + (n_samples - 1) // hop


def _frame_matrix(x: np.ndarray, hop: int, win: int) -> np.ndarray:
    """Slice ``x`` into frames of length ``win`` centered at t*hop."""
    t = _frame_count(x.size, hop)
    half = win // 2
    padded = np.pad(x, (half, half + win))
    starts = np.arange(t) * hop
    idx = starts[:, None] + np.arange(win)[None, :]
    return padded[idx]


def _check_waveform(w: Waveform, cfg: AnalysisConfig):
    if w.samples.size == 0:
        raise InputError("empty waveform")
    win = cfg.frame_length(w.sample_rate)
    if win > cfg.fft_size:
        raise ParameterError(
            f"analysis window ({win}) exceeds fft_size ({cfg.fft_size})")


def _f0_frames(w: Waveform, cfg: AnalysisConfig):
    """Per-frame (f0, voiced, autocorrelation peak) via normalized
    autocorrelation over the lag range implied by [f0_floor, f0_ceil]."""
    _check_waveform(w, cfg)
    sr = w.sample_rate
    hop = cfg.hop_length(sr)
    win = cfg.frame_length(sr)
    lag_min = max(2, int(np.floor(sr / cfg.f0_ceil)))
    lag_max = int(np.ceil(sr / cfg.f0_floor))
    if lag_max >= win:
        raise ParameterError(
            "frame too short for f0_floor; increase frame_shift or f0_floor")

    frames = _frame_matrix(w.samples, hop, win)
    frames = frames - frames.mean(axis=1, keepdims=True)

    nfft = 1 << int(np.ceil(np.log2(2 * win)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, :win]

    sq = np.cumsum(frames ** 2, axis=1)
    total = sq[:, -1]
    lags = np.arange(lag_min, lag_max + 1)
    e_head = sq[:, win - lags - 1]
    e_tail = total[:, None] - sq[:, lags - 1]
    denom = np.sqrt(np.maximum(e_head * e_tail, 0.0))
    r = np.where(denom > 0, ac[:, lags] / np.maximum(denom, 1e-300), 0.0)
    r[total < SILENCE_ENERGY] = 0.0

    peak = np.clip(r.max(axis=1), 0.0, 1.0)
    voiced = peak >= cfg.voicing_threshold
    f0 = np.zeros(frames.shape[0])

    for t in np.flatnonzero(voiced):
        row = r[t]
        # Shortest local maximum that rivals the global peak.
        floor_val = PEAK_CANDIDATE_RATIO * row.max()
        left = np.r_[row[0] - 1, row[:-1]]
        right = np.r_[row[1:], row[-1] - 1]
        cand = np.flatnonzero((row >= floor_val) & (row >= left) & (row >= right))
        i = int(cand[0]) if cand.size else int(np.argmax(row))
        lag = float(lags[i])
        if 0 < i < row.size - 1:
            a, b, c = row[i - 1], row[i], row[i + 1]
            denom2 = a - 2 * b + c
            if denom2 < 0:
                lag += 0.5 * (a - c) / denom2
        f0[t] = float(np.clip(sr / lag, cfg.f0_floor, cfg.f0_ceil))

    return f0, voiced, peak


def extract_f0(w: Waveform, cfg: AnalysisConfig):
    """F0 track and voicing flags, one value per frame at frame_shift spacing.

    Voiced frames carry f0 inside [f0_floor, f0_ceil]; unvoiced frames are 0.
    """
    f0, voiced, _ = _f0_frames(w, cfg)
    return f0, voiced


def _synthesis_window(win: int) -> np.ndarray:
    # Periodic Hann: overlapping copies at hop = win/4 sum to exactly 2.
    n = np.arange(win)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win)


def _cepstral_smooth(log_mag: np.ndarray, order: int) -> np.ndarray:
    """Lifter a log-magnitude spectrum, keeping quefrencies below ``order``."""
    nfft = 2 * (log_mag.shape[1] - 1)
    ceps = np.fft.irfft(log_mag, nfft, axis=1)
    lifter = np.zeros(nfft)
    lifter[:order] = 1.0
    lifter[nfft - order + 1:] = 1.0
    return np.fft.rfft(ceps * lifter, nfft, axis=1).real


def extract_envelope(w: Waveform, cfg: AnalysisConfig) -> np.ndarray:
    """Smoothed spectral envelope, strictly positive, shape (T, fft/2+1)."""
    _check_waveform(w, cfg)
    hop = cfg.hop_length(w.sample_rate)
    win = cfg.frame_length(w.sample_rate)
    frames = _frame_matrix(w.samples, hop, win) * _synthesis_window(win)
    mag = np.abs(np.fft.rfft(frames, cfg.fft_size, axis=1))
    floor = np.maximum(mag.max(axis=1, keepdims=True) * RELATIVE_FLOOR,
                       ENVELOPE_FLOOR)
    mag = np.maximum(mag, floor)
    return np.exp(_cepstral_smooth(np.log(mag), cfg.mcc_order))


def warp_frequency(omega: np.ndarray, alpha: float) -> np.ndarray:
    """First-order all-pass frequency warp on [0, pi]; fixes 0 and pi."""
    return omega + 2.0 * np.arctan(
        alpha * np.sin(omega) / (1.0 - alpha * np.cos(omega)))


@lru_cache(maxsize=8)
def _mcc_basis(fft_size: int, alpha: float, order: int):
    """Warped-cosine basis B and its pseudo-inverse.

    log E(omega_k) = c0 + 2 * sum_q c_q cos(q * phi(omega_k)); the
    pseudo-inverse gives the least-squares cepstrum of any log envelope and
    is the exact inverse for envelopes already in the span of B.
    """
    n_bins = fft_size // 2 + 1
    omega = np.linspace(0.0, np.pi, n_bins)
    phi = warp_frequency(omega, alpha)
    q = np.arange(order)
    basis = np.cos(np.outer(phi, q))
    basis[:, 1:] *= 2.0
    return basis, np.linalg.pinv(basis)


def envelope_to_mcc(env: np.ndarray, cfg: AnalysisConfig) -> np.ndarray:
    """Project a log envelope onto the warped-cepstral basis (T x 36)."""
    env = np.asarray(env, dtype=np.float64)
    if env.ndim != 2 or env.shape[1] != cfg.fft_size // 2 + 1:
        raise InputError("envelope must be T x (fft_size/2+1)")
    if not np.all(np.isfinite(env)) or np.any(env <= 0):
        raise InputError("envelope values must be finite and strictly positive")
    _, pinv = _mcc_basis(cfg.fft_size, cfg.mel_warp_alpha, cfg.mcc_order)
    return np.log(env) @ pinv.T


def mcc_to_envelope(mcc: np.ndarray, cfg: AnalysisConfig) -> np.ndarray:
    """Evaluate the warped-cepstral model back onto linear frequency bins."""
    mcc = np.asarray(mcc, dtype=np.float64)
    if mcc.ndim != 2 or mcc.shape[1] != cfg.mcc_order:
        raise InputError(f"mcc must be T x {cfg.mcc_order}")
    if not np.all(np.isfinite(mcc)):
        raise InputError("mcc contains non-finite values")
    basis, _ = _mcc_basis(cfg.fft_size, cfg.mel_warp_alpha, cfg.mcc_order)
    return np.exp(mcc @ basis.T)


def analyze(w: Waveform, cfg: AnalysisConfig) -> AcousticFeatures:
    """Full analysis: MCC + F0 + voicing + single-band aperiodicity."""
    f0, voiced, peak = _f0_frames(w, cfg)
    mcc = envelope_to_mcc(extract_envelope(w, cfg), cfg)
    aperiodicity = np.clip(1.0 - peak, 0.0, 1.0)[:, None]
    feats = AcousticFeatures(mcc=mcc, f0=f0, voiced=voiced,
                             aperiodicity=aperiodicity,
                             frame_shift=cfg.frame_shift,
                             sample_rate=w.sample_rate)
    feats.validate()
    return feats


def compute_f0_statistics(
        features: Iterable[AcousticFeatures]) -> F0Statistics:
    """Mean/std of log-F0 over the voiced frames of a feature collection."""
    values = [f.f0[f.voiced] for f in features]
    voiced = np.concatenate(values) if values else np.empty(0)
    if voiced.size < 2:
        raise InsufficientDataError(
            "need at least 2 voiced frames across the feature set")
    return F0Statistics.from_log_values(np.log(voiced))


def convert_f0(f0: np.ndarray, src: F0Statistics,
               tgt: F0Statistics) -> np.ndarray:
    """Log-Gaussian normalized F0 transform.

    Voiced frames map through
    ``log f0' = tgt.mean + (tgt.std / src.std) * (log f0 - src.mean)``;
    unvoiced frames (f0 = 0) stay 0.
    """
    if src.std_log_f0 <= 0:
        raise ParameterError("source std_log_f0 must be positive")
    f0 = np.asarray(f0, dtype=np.float64)
    if (src.mean_log_f0 == tgt.mean_log_f0
            and src.std_log_f0 == tgt.std_log_f0):
        return f0.copy()
    out = np.zeros_like(f0)
    m = f0 > 0
    scale = tgt.std_log_f0 / src.std_log_f0
    out[m] = np.exp(tgt.mean_log_f0 + scale * (np.log(f0[m]) - src.mean_log_f0))
    return out


def synthesize(features: AcousticFeatures, cfg: AnalysisConfig) -> Waveform:
    """Render features to audio with a pulse/noise source-filter scheme.

    Excitation is a phase-continuous pulse train at F0 for voiced frames and
    white noise for unvoiced ones, blended per frame by aperiodicity, then
    shaped by the envelope decoded from the MCC. Deterministic: the noise
    stream is reseeded per call.
    """
    features.validate()
    sr = features.sample_rate
    hop = max(1, round(features.frame_shift * sr))
    win = 4 * hop
    if win > cfg.fft_size:
        raise ParameterError(
            f"synthesis window ({win}) exceeds fft_size ({cfg.fft_size})")
    t_frames = features.n_frames
    n_out = t_frames * hop
    env = mcc_to_envelope(features.mcc, cfg)
    window = _synthesis_window(win)
    w_sum = window.sum()
    w_sq = np.sum(window ** 2)

    # Pulse component: integrate per-sample frequency, fire on phase wrap.
    f0_ps = np.repeat(features.f0, hop)[:n_out]
    phase = np.cumsum(f0_ps) / sr
    wraps = np.floor(phase)
    hits = np.flatnonzero(np.diff(wraps, prepend=0.0) > 0)
    pulse = np.zeros(n_out)
    if hits.size:
        pulse[hits] = (sr / f0_ps[hits]) / w_sum

    noise = np.random.default_rng(_NOISE_SEED).standard_normal(n_out)
    noise /= np.sqrt(w_sq)

    ap = np.clip(features.aperiodicity.mean(axis=1), 0.0, 1.0)
    ap_ps = np.repeat(ap, hop)[:n_out]
    excitation = np.sqrt(1.0 - ap_ps) * pulse + np.sqrt(ap_ps) * noise

    # Per-frame spectral shaping with weighted overlap-add; the periodic
    # Hann at 75% overlap sums to 2, hence the final division.
    half = win // 2
    seg = _frame_matrix(excitation, hop, win) * window
    shaped = np.fft.irfft(np.fft.rfft(seg, cfg.fft_size, axis=1) * env,
                          cfg.fft_size, axis=1)
    out = np.zeros(n_out + half + cfg.fft_size)
    for t in range(t_frames):
        start = t * hop
        out[start:start + cfg.fft_size] += shaped[t]
    signal = out[half:half + n_out] / 2.0

    peak = np.max(np.abs(signal)) if signal.size else 0.0
    if peak > 1.0:
        signal = signal * (0.99 / peak)
    return Waveform(samples=signal, sample_rate=sr)
