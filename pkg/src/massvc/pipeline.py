"""Serial synthesis pipeline: source speech, emotion conversion, speaker
conversion, resynthesis — always in that order.

The two feature-domain conversions are chained without rendering
intermediate audio, so the signal passes through the vocoder exactly once
for analysis and once for synthesis.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .errors import ParameterError, StageError
from .featio import read_wav
from .features import (AcousticFeatures, AnalysisConfig, Waveform, analyze,
                       convert_f0, synthesize)
from .nets import AttributeLabel, ConversionModel, generator_forward, load_model

# Attribute names tried, in order, when no source emotion is configured.
DEFAULT_SOURCE_EMOTIONS = ("natural", "neutral")


@dataclass
class TtsSource:
    """Adapter producing source speech for a text prompt.

    ``external-command`` runs a template with {text} and {out} substituted
    and expects a 16 kHz mono PCM16 wav at {out}; ``file-passthrough`` maps
    text keys to prerecorded wav paths.
    """

    kind: str
    command_template: Optional[str] = None
    mapping: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in ("external-command", "file-passthrough"):
            raise ParameterError(f"unknown TTS source kind {self.kind!r}")
        if self.kind == "external-command" and not self.command_template:
            raise ParameterError("external-command source needs a template")
        if self.kind == "file-passthrough" and self.mapping is None:
            raise ParameterError("file-passthrough source needs a mapping")

    def acquire(self, text: str, sample_rate: int = 16000) -> Waveform:
        if self.kind == "file-passthrough":
            path = self.mapping.get(text)
            if path is None:
                raise StageError("tts", f"no audio mapped for text {text!r}")
            return read_wav(path, expected_rate=sample_rate)
        with tempfile.TemporaryDirectory(prefix="massvc_tts_") as tmp:
            out = str(Path(tmp) / "tts.wav")
            cmd = [part.replace("{text}", text).replace("{out}", out)
                   for part in shlex.split(self.command_template)]
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0:
                raise StageError(
                    "tts", f"command exited {proc.returncode}: "
                    f"{proc.stderr.strip()[:500]}")
            return read_wav(out, expected_rate=sample_rate)


@dataclass
class PipelineConfig:
    devc_model: str
    dsvc_model: str
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    devc_source_emotion: Optional[str] = None
    dsvc_source_speaker: Optional[str] = None
    tts: Optional[TtsSource] = None


@dataclass
class PipelineResult:
    waveform: Waveform
    trace: list


def convert_utterance(model: ConversionModel, feats: AcousticFeatures,
                      target: Union[AttributeLabel, int, str],
                      source: Union[AttributeLabel, int, str]
                      ) -> AcousticFeatures:
    """Convert one utterance's features toward the target attribute.

    MCC goes through the generator; F0 through the log-Gaussian transform
    between the model's per-attribute statistics. Voicing and aperiodicity
    pass through unchanged, and the frame count is preserved.
    """
    feats.validate()
    tgt_idx = model.label_index(target)
    src_idx = model.label_index(source)
    if model.f0_stats is None:
        raise ParameterError("model carries no F0 statistics; train it first")
    mcc = generator_forward(model, feats.mcc, tgt_idx)
    f0 = convert_f0(feats.f0, model.f0_stats[src_idx], model.f0_stats[tgt_idx])
    return AcousticFeatures(mcc=mcc, f0=f0, voiced=feats.voiced.copy(),
                            aperiodicity=feats.aperiodicity.copy(),
                            frame_shift=feats.frame_shift,
                            sample_rate=feats.sample_rate)


def _resolve_source_emotion(model: ConversionModel,
                            configured: Optional[str]) -> str:
    if configured is not None:
        return configured
    for name in DEFAULT_SOURCE_EMOTIONS:
        if name in model.attribute_names:
            return name
    raise ParameterError(
        "no source emotion configured and the emotion model has no "
        f"'natural'/'neutral' attribute (it knows {model.attribute_names}); "
        "set devc_source_emotion")


def _resolve_source_speaker(model: ConversionModel,
                            configured: Optional[str]) -> str:
    # Without a configured value, assume source speech arrives in the voice
    # of the speaker model's first attribute.
    return configured if configured is not None else model.attribute_names[0]


def mass_synthesize(source: Union[str, Waveform], emotion: str, speaker: str,
                    cfg: PipelineConfig) -> PipelineResult:
    """Full chain: acquire speech, analyze, convert emotion, convert
    speaker, resynthesize. The emotional stage always precedes the speaker
    stage; the returned trace records the executed order.

    ``source`` may be a Waveform, a path to a wav file, or a text prompt
    (which requires a TTS source in the config).
    """
    trace: list = []

    def run(stage, fn, frames_of=None):
        t0 = time.perf_counter()
        try:
            value = fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, str(exc)) from exc
        trace.append({"stage": stage,
                      "wall_ms": round(1000.0 * (time.perf_counter() - t0), 3),
                      "frames": frames_of(value) if frames_of else None})
        return value

    n_frames = AcousticFeatures.n_frames.fget

    devc = load_model(cfg.devc_model)
    dsvc = load_model(cfg.dsvc_model)

    if isinstance(source, Waveform):
        wave = run("file", lambda: source)
    elif isinstance(source, (str, Path)) and str(source).lower().endswith(".wav"):
        wave = run("file", lambda: read_wav(source))
    else:
        if cfg.tts is None:
            raise StageError("tts", "text input requires a TTS source in the "
                             "pipeline configuration")
        wave = run("tts", lambda: cfg.tts.acquire(str(source)))

    feats = run("analyze", lambda: analyze(wave, cfg.analysis), n_frames)

    src_emotion = _resolve_source_emotion(devc, cfg.devc_source_emotion)
    emotional = run("devc",
                    lambda: convert_utterance(devc, feats, emotion,
                                              src_emotion), n_frames)

    src_speaker = _resolve_source_speaker(dsvc, cfg.dsvc_source_speaker)
    converted = run("dsvc",
                    lambda: convert_utterance(dsvc, emotional, speaker,
                                              src_speaker), n_frames)

    out = run("synthesize", lambda: synthesize(converted, cfg.analysis),
              lambda _: converted.n_frames)
    return PipelineResult(waveform=out, trace=trace)
