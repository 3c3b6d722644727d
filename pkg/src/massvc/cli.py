"""Command-line surface: ingest, train, convert, synthesize, evaluate,
export-features.

Every command takes an optional flat JSON config (--config) with CLI
overrides via repeated --set key=value (flags win), writes its artifacts
atomically, and drops a manifest (resolved config, config hash, seed,
versions) beside each primary output. Failures print a single-line JSON
error record to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy
import torch

from . import __version__
from .errors import MassError, ParameterError
from .evaluation import (DEFAULT_MCD_RANGE, EvalReport, evaluate_direction,
                         export_spectral_summaries)
from .featio import atomic_write_bytes, read_wav, write_wav
from .features import AnalysisConfig, analyze, synthesize
from .losses import LossWeights
from .nets import NetworkConfig, load_model, save_model
from .pipeline import PipelineConfig, TtsSource, convert_utterance, mass_synthesize
from .training import DatasetIndex, TrainConfig, ingest_dataset, train_model

# Flat config keys -> (python type, destination section).
KNOWN_KEYS = {
    "frame_shift": (float, "analysis"),
    "fft_size": (int, "analysis"),
    "mcc_order": (int, "analysis"),
    "mel_warp_alpha": (float, "analysis"),
    "f0_floor": (float, "analysis"),
    "f0_ceil": (float, "analysis"),
    "voicing_threshold": (float, "analysis"),
    "steps": (int, "train"),
    "batch_size": (int, "train"),
    "segment_frames": (int, "train"),
    "lr_g": (float, "train"),
    "lr_dc": (float, "train"),
    "d_steps_per_g_step": (int, "train"),
    "checkpoint_every": (int, "train"),
    "num_threads": (int, "train"),
    "lr_schedule": (str, "train"),
    "seed": (int, "train"),
    "lambda_adv": (float, "weights"),
    "lambda_cls": (float, "weights"),
    "lambda_cyc": (float, "weights"),
    "lambda_id": (float, "weights"),
    "rho": (int, "weights"),
    "preset": (str, "network"),
    "base_channels": (int, "network"),
    "mcd_index_low": (int, "eval"),
    "mcd_index_high": (int, "eval"),
}


def load_run_config(path, overrides) -> dict:
    """Merge a JSON config file with --set overrides; flags win.
    Unknown keys are rejected."""
    config: dict = {}
    if path:
        with open(path) as fh:
            config.update(json.load(fh))
    for item in overrides or []:
        if "=" not in item:
            raise ParameterError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        config[key] = value
    unknown = sorted(set(config) - set(KNOWN_KEYS))
    if unknown:
        raise ParameterError(f"unknown config keys: {unknown}")
    resolved = {}
    for key, value in config.items():
        typ, _ = KNOWN_KEYS[key]
        try:
            resolved[key] = typ(value)
        except (TypeError, ValueError) as exc:
            raise ParameterError(f"config key {key}: {exc}") from exc
    return resolved


def _section(config: dict, section: str) -> dict:
    return {k: v for k, v in config.items() if KNOWN_KEYS[k][1] == section}


def analysis_config(config: dict) -> AnalysisConfig:
    return AnalysisConfig(**_section(config, "analysis"))


def resolve_seed(args, config: dict) -> int:
    if args.seed is not None:
        return args.seed
    return config.get("seed", 0)


def train_config(config: dict, seed: int) -> TrainConfig:
    fields = _section(config, "train")
    fields.pop("seed", None)
    weights = _section(config, "weights")
    return TrainConfig(seed=seed, weights=LossWeights(**weights), **fields)


def network_config(config: dict, n_classes: int) -> NetworkConfig:
    preset = config.get("preset", "devc")
    base = config.get("base_channels", 32)
    if preset == "devc":
        return NetworkConfig.devc(n_classes, base_channels=base)
    if preset == "dsvc":
        return NetworkConfig.dsvc(n_classes, base_channels=base)
    raise ParameterError(f"unknown preset {preset!r} (expected devc or dsvc)")


def write_manifest(output_path, command: str, config: dict, seed: int):
    blob = json.dumps(config, sort_keys=True).encode()
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(blob).hexdigest(),
        "seed": seed,
        "versions": {
            "massvc": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "torch": torch.__version__,
            "python": platform.python_version(),
        },
    }
    path = Path(str(output_path) + ".manifest.json")
    atomic_write_bytes(path, json.dumps(manifest, indent=1).encode())


def cmd_ingest(args) -> int:
    config = load_run_config(args.config, args.set)
    seed = resolve_seed(args, config)
    index = ingest_dataset(args.root, analysis_config(config), jobs=args.jobs)
    index.save(args.out_index)
    write_manifest(args.out_index, "ingest", config, seed)
    print(f"indexed {len(index.entries)} utterances, "
          f"{index.n_classes} attributes, {index.skipped} skipped")
    return 0


def cmd_train(args) -> int:
    config = load_run_config(args.config, args.set)
    if args.preset:
        config["preset"] = args.preset
    seed = resolve_seed(args, config)
    index = DatasetIndex.load(args.index)
    net_cfg = network_config(config, index.n_classes)
    cfg = train_config(config, seed)
    log_path = str(args.out_model) + ".trainlog.jsonl"
    ckpt_dir = str(args.out_model) + ".checkpoints"
    model = train_model(index, net_cfg, cfg, log_path=log_path,
                        checkpoint_dir=ckpt_dir,
                        resume_from=args.resume_from)
    save_model(model, args.out_model)
    write_manifest(args.out_model, "train", config, seed)
    print(f"trained {config.get('preset', 'devc')} model for {cfg.steps} steps "
          f"-> {args.out_model}")
    return 0


def cmd_convert(args) -> int:
    config = load_run_config(args.config, args.set)
    seed = resolve_seed(args, config)
    model = load_model(args.model)
    cfg = analysis_config(config)
    feats = analyze(read_wav(args.in_wav), cfg)
    converted = convert_utterance(model, feats, args.target_label,
                                  args.source_label)
    write_wav(args.out_wav, synthesize(converted, cfg))
    write_manifest(args.out_wav, "convert", config, seed)
    print(f"converted {args.in_wav} {args.source_label}->{args.target_label} "
          f"-> {args.out_wav}")
    return 0


def _pipeline_config(path) -> PipelineConfig:
    with open(path) as fh:
        doc = json.load(fh)
    known = {"devc_model", "dsvc_model", "devc_source_emotion",
             "dsvc_source_speaker", "tts_command", "tts_mapping", "analysis"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ParameterError(f"unknown pipeline config keys: {unknown}")
    tts = None
    if "tts_command" in doc:
        tts = TtsSource(kind="external-command",
                        command_template=doc["tts_command"])
    elif "tts_mapping" in doc:
        tts = TtsSource(kind="file-passthrough", mapping=doc["tts_mapping"])
    analysis = AnalysisConfig(**doc.get("analysis", {}))
    return PipelineConfig(devc_model=doc["devc_model"],
                          dsvc_model=doc["dsvc_model"],
                          analysis=analysis,
                          devc_source_emotion=doc.get("devc_source_emotion"),
                          dsvc_source_speaker=doc.get("dsvc_source_speaker"),
                          tts=tts)


def cmd_synthesize(args) -> int:
    config = load_run_config(args.config, args.set)
    seed = resolve_seed(args, config)
    pipe_cfg = _pipeline_config(args.pipeline_config)
    result = mass_synthesize(args.source, args.emotion, args.speaker, pipe_cfg)
    write_wav(args.out_wav, result.waveform)
    if args.trace:
        atomic_write_bytes(args.trace,
                           json.dumps(result.trace, indent=1).encode())
    write_manifest(args.out_wav, "synthesize", config, seed)
    stages = " -> ".join(entry["stage"] for entry in result.trace)
    print(f"synthesized {args.out_wav} via [{stages}]")
    return 0


def _analyze_dir(directory, cfg: AnalysisConfig):
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise ParameterError(f"{directory}: no wav files")
    return [analyze(read_wav(p), cfg) for p in paths]


def cmd_evaluate(args) -> int:
    config = load_run_config(args.config, args.set)
    seed = resolve_seed(args, config)
    cfg = analysis_config(config)
    lo = config.get("mcd_index_low", DEFAULT_MCD_RANGE[0])
    hi = config.get("mcd_index_high", DEFAULT_MCD_RANGE[1])
    converted = _analyze_dir(args.converted_dir, cfg)
    target = _analyze_dir(args.target_dir, cfg)
    original = _analyze_dir(args.original_dir, cfg)
    row = evaluate_direction(args.direction, converted, target, original,
                             index_range=(lo, hi))
    report = EvalReport(rows=[row], index_range=(lo, hi))
    text_path = str(args.out_report) + ".txt"
    json_path = str(args.out_report) + ".json"
    report.save(text_path, json_path)
    write_manifest(args.out_report, "evaluate", config, seed)
    print(report.to_text())
    return 0


def cmd_export_features(args) -> int:
    config = load_run_config(args.config, args.set)
    seed = resolve_seed(args, config)
    cfg = analysis_config(config)
    feats = analyze(read_wav(args.in_wav), cfg)
    export_spectral_summaries(feats, args.out_csv, cfg,
                              n_mel_bands=args.mel_bands)
    write_manifest(args.out_csv, "export-features", config, seed)
    print(f"exported {feats.n_frames} frames -> {args.out_csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="massvc",
        description="Emotional and speaker voice conversion at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable; wins over "
                            "the file)")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default 0, recorded in the manifest)")

    p = sub.add_parser("ingest", help="extract features for a labeled corpus")
    common(p)
    p.add_argument("root", help="corpus root: root/<attribute>/<*.wav>")
    p.add_argument("out_index", help="output index JSON path")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel extraction workers")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a conversion model on an index")
    common(p)
    p.add_argument("index", help="dataset index from `ingest`")
    p.add_argument("out_model", help="output model path")
    p.add_argument("--preset", choices=["devc", "dsvc"], default=None,
                   help="network preset (overrides config)")
    p.add_argument("--resume-from", default=None,
                   help="checkpoint file to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert",
                       help="convert one utterance with a trained model")
    common(p)
    p.add_argument("model")
    p.add_argument("in_wav")
    p.add_argument("source_label")
    p.add_argument("target_label")
    p.add_argument("out_wav")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synthesize",
                       help="full pipeline: source -> emotion -> speaker")
    common(p)
    p.add_argument("pipeline_config", help="pipeline JSON config")
    p.add_argument("source", help="text prompt or path to a source wav")
    p.add_argument("emotion", help="target emotion attribute name")
    p.add_argument("speaker", help="target speaker attribute name")
    p.add_argument("out_wav")
    p.add_argument("--trace", default=None,
                   help="write the stage trace JSON here")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate",
                       help="MCD report with a zero-effort baseline")
    common(p)
    p.add_argument("converted_dir")
    p.add_argument("target_dir")
    p.add_argument("original_dir")
    p.add_argument("out_report", help="report base path (.txt/.json added)")
    p.add_argument("--direction", default="source-to-target",
                   help="direction label for the report row")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-features",
                       help="CSV of per-frame envelope and mel energies")
    common(p)
    p.add_argument("in_wav")
    p.add_argument("out_csv")
    p.add_argument("--mel-bands", type=int, default=24)
    p.set_defaults(func=cmd_export_features)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MassError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected: still one parsable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
