"""Quantitative evaluation: DTW alignment, mel-cepstral distortion, and
per-direction reports with zero-effort baselines.

MCD between two frames is ``(10 / ln 10) * sqrt(2 * sum_i d_i^2)`` over
coefficient indices 1..24 of the 36-dimensional MCC (the energy-like c0 is
excluded); the index range is configurable. Utterance-level MCD averages the
framewise value along the DTW path of the two sequences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError
from .featio import atomic_write_bytes
from .features import AcousticFeatures, AnalysisConfig, mcc_to_envelope

MCD_CONST = 10.0 / np.log(10.0)

# Inclusive coefficient index range entering the distortion.
DEFAULT_MCD_RANGE = (1, 24)


@dataclass
class EvalPair:
    converted: AcousticFeatures
    target: AcousticFeatures
    pair_id: str = ""


def dtw_align(a: np.ndarray, b: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost monotonic alignment with steps {(1,0),(0,1),(1,1)}.

    Local cost is the Euclidean distance between rows; the path covers
    (0,0) through (Ta-1, Tb-1). Ties prefer the diagonal step.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.size == 0 or b.size == 0:
        raise InputError("cannot align empty sequences")
    if a.shape[1] != b.shape[1]:
        raise InputError(
            f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    cost = cdist(a, b)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        c = cost[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = c[j - 1] + best
    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        candidates = []
        if i > 1 and j > 1:
            candidates.append((acc[i - 1, j - 1], (i - 1, j - 1)))
        if i > 1:
            candidates.append((acc[i - 1, j], (i - 1, j)))
        if j > 1:
            candidates.append((acc[i, j - 1], (i, j - 1)))
        _, (i, j) = min(candidates, key=lambda t: t[0])
        path.append((i - 1, j - 1))
    path.reverse()
    return path


def mcd(mcc_c: np.ndarray, mcc_t: np.ndarray,
        index_range: tuple[int, int] = DEFAULT_MCD_RANGE) -> float:
    """Mel-cepstral distortion in dB between two 36-dim frames."""
    c = np.asarray(mcc_c, dtype=np.float64).reshape(-1)
    t = np.asarray(mcc_t, dtype=np.float64).reshape(-1)
    if c.shape != t.shape:
        raise InputError("frames must have equal dimension")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(t))):
        raise InputError("non-finite coefficients")
    lo, hi = index_range
    if not 0 <= lo <= hi < c.size:
        raise InputError(f"index range {index_range} invalid for dim {c.size}")
    d = c[lo:hi + 1] - t[lo:hi + 1]
    return float(MCD_CONST * np.sqrt(2.0 * np.dot(d, d)))


def mcd_sequences(mcc_c: np.ndarray, mcc_t: np.ndarray,
                  index_range: tuple[int, int] = DEFAULT_MCD_RANGE) -> float:
    """Mean framewise MCD along the DTW path of two MCC sequences.

    The same coefficient range drives both the alignment and the distance.
    """
    lo, hi = index_range
    a = np.asarray(mcc_c, dtype=np.float64)
    b = np.asarray(mcc_t, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or min(a.shape[1], b.shape[1]) <= hi:
        raise InputError(f"sequences must be T x d with d > {hi}")
    a = a[:, lo:hi + 1]
    b = b[:, lo:hi + 1]
    path = dtw_align(a, b)
    diffs = a[[i for i, _ in path]] - b[[j for _, j in path]]
    return float(np.mean(MCD_CONST * np.sqrt(2.0 * np.sum(diffs ** 2, axis=1))))


def mcd_utterance(pair: EvalPair,
                  index_range: tuple[int, int] = DEFAULT_MCD_RANGE) -> float:
    return mcd_sequences(pair.converted.mcc, pair.target.mcc, index_range)


@dataclass
class DirectionResult:
    direction: str
    converted_mcd: float
    zero_effort_mcd: float
    n_pairs: int


@dataclass
class EvalReport:
    rows: list[DirectionResult] = field(default_factory=list)
    index_range: tuple[int, int] = DEFAULT_MCD_RANGE
    model_name: str = "converted"

    def to_json(self) -> str:
        doc = {
            "mcd_index_range": list(self.index_range),
            "model_name": self.model_name,
            "rows": [{"direction": r.direction,
                      "converted_mcd": round(r.converted_mcd, 6),
                      "zero_effort_mcd": round(r.zero_effort_mcd, 6),
                      "n_pairs": r.n_pairs} for r in self.rows],
        }
        return json.dumps(doc, indent=1)

    def to_text(self) -> str:
        """Aligned table: one column per conversion direction, one row for
        the converted system and one for the zero-effort baseline."""
        headers = ["Model"] + [r.direction for r in self.rows]
        line1 = [self.model_name] + [f"{r.converted_mcd:.2f}" for r in self.rows]
        line2 = ["Zero effort"] + [f"{r.zero_effort_mcd:.2f}"
                                   for r in self.rows]
        widths = [max(len(col[i]) for col in (headers, line1, line2))
                  for i in range(len(headers))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
        return "\n".join([fmt.format(*headers), sep, fmt.format(*line1),
                          fmt.format(*line2), ""])

    def save(self, text_path, json_path):
        atomic_write_bytes(text_path, self.to_text().encode())
        atomic_write_bytes(json_path, self.to_json().encode())


def evaluate_direction(direction: str,
                       converted: Sequence[AcousticFeatures],
                       target: Sequence[AcousticFeatures],
                       zero_effort: Sequence[AcousticFeatures],
                       index_range: tuple[int, int] = DEFAULT_MCD_RANGE
                       ) -> DirectionResult:
    """Mean utterance MCD of converted-vs-target and original-vs-target.

    The i-th element of each sequence refers to the same test sentence.
    """
    if not (len(converted) == len(target) == len(zero_effort)):
        raise InputError("converted/target/zero_effort counts differ")
    if not converted:
        raise InputError("no evaluation pairs")
    conv = [mcd_sequences(c.mcc, t.mcc, index_range)
            for c, t in zip(converted, target)]
    zero = [mcd_sequences(z.mcc, t.mcc, index_range)
            for z, t in zip(zero_effort, target)]
    return DirectionResult(direction=direction,
                           converted_mcd=float(np.mean(conv)),
                           zero_effort_mcd=float(np.mean(zero)),
                           n_pairs=len(conv))


def _mel_filterbank(n_bins: int, sample_rate: int, n_bands: int) -> np.ndarray:
    """Triangular mel filterbank over [0, Nyquist], rows normalized to sum 1."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    nyquist = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_bands + 2))
    freqs = np.linspace(0.0, nyquist, n_bins)
    bank = np.zeros((n_bands, n_bins))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - freqs) / max(hi - mid, 1e-12)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
        s = bank[b].sum()
        if s > 0:
            bank[b] /= s
    return bank


def export_spectral_summaries(features: AcousticFeatures, path,
                              cfg: AnalysisConfig, n_mel_bands: int = 24):
    """CSV of the per-frame envelope and mel-band energies.

    Column count is fft_size/2+1 envelope bins plus ``n_mel_bands``; values
    round-trip exactly through text (%.17e).
    """
    env = mcc_to_envelope(features.mcc, cfg)
    bank = _mel_filterbank(env.shape[1], features.sample_rate, n_mel_bands)
    mel = env @ bank.T
    data = np.hstack([env, mel])
    names = [f"env_{i}" for i in range(env.shape[1])]
    names += [f"mel_{i}" for i in range(n_mel_bands)]
    lines = [",".join(names)]
    for row in data:
        lines.append(",".join(f"{v:.17e}" for v in row))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def load_spectral_summaries(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of export_spectral_summaries: (envelope, mel) matrices."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    n_env = sum(1 for n in header if n.startswith("env_"))
    return data[:, :n_env], data[:, n_env:]
