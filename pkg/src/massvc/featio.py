"""File I/O: 16 kHz PCM16 WAV audio and the binary feature-cache format."""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import FormatError, FormatVersionError, InputError
from .features import AcousticFeatures, Waveform

FEATURE_MAGIC = b"MASSFEAT"
FEATURE_VERSION = 1
# magic, version u16, then T, mcc_dim, ap_bands, sample_rate, frame_shift_us.
_HEADER = struct.Struct("<8sH5I")

MCC_DIM = 36


def atomic_write_bytes(path, payload: bytes):
    """Write a file via temp-then-rename so readers never see partial data."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_wav(path, expected_rate: int = 16000) -> Waveform:
    """Load a mono PCM16 RIFF/WAVE file at the expected sample rate."""
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if data.dtype != np.int16:
        raise InputError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    if data.ndim != 1:
        raise InputError(f"{path}: expected mono audio, got {data.ndim} channels")
    if rate != expected_rate:
        raise InputError(
            f"{path}: sample rate {rate} Hz unsupported; expected "
            f"{expected_rate} Hz (no resampling is performed)")
    return Waveform(samples=data.astype(np.float64) / 32768.0,
                    sample_rate=rate)


def write_wav(path, w: Waveform):
    """Write mono PCM16 audio atomically."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    buf = io.BytesIO()
    wavfile.write(buf, w.sample_rate, pcm)
    atomic_write_bytes(path, buf.getvalue())


def feature_bytes(feats: AcousticFeatures) -> bytes:
    """Serialize features to the cache format (float32 little-endian)."""
    feats.validate()
    t, dim = feats.mcc.shape
    if dim != MCC_DIM:
        raise InputError(f"feature cache stores {MCC_DIM}-dim MCC, got {dim}")
    bands = feats.aperiodicity.shape[1]
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, t, dim, bands,
                          feats.sample_rate,
                          round(feats.frame_shift * 1e6))
    body = (feats.mcc.astype("<f4").tobytes()
            + feats.f0.astype("<f4").tobytes()
            + feats.aperiodicity.astype("<f4").tobytes())
    return header + body


def save_features(path, feats: AcousticFeatures):
    atomic_write_bytes(path, feature_bytes(feats))


def features_from_bytes(raw: bytes, source: str = "<bytes>") -> AcousticFeatures:
    if len(raw) < _HEADER.size:
        raise FormatError(f"{source}: truncated feature file")
    magic, version, t, dim, bands, rate, shift_us = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{source}: bad magic, not a feature cache file")
    if version != FEATURE_VERSION:
        raise FormatVersionError(
            f"{source}: feature format version {version} unsupported "
            f"(expected {FEATURE_VERSION})")
    if dim != MCC_DIM:
        raise FormatError(f"{source}: mcc_dim {dim} unsupported")
    expected = _HEADER.size + 4 * (t * dim + t + t * bands)
    if len(raw) != expected:
        raise FormatError(f"{source}: payload size mismatch")
    off = _HEADER.size
    mcc = np.frombuffer(raw, dtype="<f4", count=t * dim, offset=off)
    off += 4 * t * dim
    f0 = np.frombuffer(raw, dtype="<f4", count=t, offset=off)
    off += 4 * t
    ap = np.frombuffer(raw, dtype="<f4", count=t * bands, offset=off)
    return AcousticFeatures(mcc=mcc.reshape(t, dim).astype(np.float64),
                            f0=f0.astype(np.float64),
                            voiced=f0 > 0,
                            aperiodicity=ap.reshape(t, bands).astype(np.float64),
                            frame_shift=shift_us / 1e6,
                            sample_rate=int(rate))


def load_features(path) -> AcousticFeatures:
    with open(path, "rb") as fh:
        raw = fh.read()
    return features_from_bytes(raw, source=str(path))


def peek_frame_count(path) -> int:
    """Frame count from the header only, validating magic and version."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError(f"{path}: truncated feature file")
    magic, version, t, _, _, _, _ = _HEADER.unpack(head)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a feature cache file")
    if version != FEATURE_VERSION:
        raise FormatVersionError(f"{path}: unsupported version {version}")
    return int(t)
