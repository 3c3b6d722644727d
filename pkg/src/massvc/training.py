"""Corpus ingestion, minibatch sampling, and the adversarial training loop.

Training is non-parallel by construction: utterances are never paired across
attributes anywhere in the data path. A step updates the discriminator and
classifier on their objectives, then the generator on its combined objective,
all with adaptive-moment gradient descent.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .errors import DatasetError, ParameterError, TrainingDivergedError
from .featio import (atomic_write_bytes, load_features, peek_frame_count,
                     read_wav, save_features)
from .features import AnalysisConfig, F0Statistics, analyze
from .losses import LossWeights, loss_adv_d, loss_cls_c, total_losses
from .nets import (ConversionModel, NetworkConfig, build_model,
                   deserialize_model, serialize_model)

log = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1
CHECKPOINT_VERSION = 1

# Smallest number of frames a training segment may have.
MIN_SEGMENT_FRAMES = 32

# Floor on per-dimension feature standard deviation used for z-normalization.
FEATURE_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    segment_frames: int = 128
    lr_g: float = 2e-4
    lr_dc: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    d_steps_per_g_step: int = 1
    checkpoint_every: int = 0
    num_threads: int = 1
    # "none" keeps the learning rates constant; "linear" holds them for the
    # first half of the run and then decays linearly to zero, which settles
    # the adversarial game instead of letting it churn indefinitely.
    lr_schedule: str = "none"

    def __post_init__(self):
        if self.steps < 0:
            raise ParameterError("steps must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.segment_frames < MIN_SEGMENT_FRAMES:
            raise ParameterError(
                f"segment_frames must be >= {MIN_SEGMENT_FRAMES}")
        if self.lr_g < 0 or self.lr_dc < 0:
            raise ParameterError("learning rates must be >= 0")
        if self.d_steps_per_g_step < 1:
            raise ParameterError("d_steps_per_g_step must be >= 1")
        if self.lr_schedule not in ("none", "linear"):
            raise ParameterError("lr_schedule must be 'none' or 'linear'")

    def lr_factor(self, step: int) -> float:
        """Multiplier on both learning rates at a given (1-based) step."""
        if self.lr_schedule == "none" or self.steps == 0:
            return 1.0
        half = self.steps / 2.0
        if step <= half:
            return 1.0
        return max(0.0, (self.steps - step) / (self.steps - half))


@dataclass
class IndexEntry:
    utterance_id: str
    attribute: int
    cache_path: str
    frames: int


@dataclass
class DatasetIndex:
    """Feature-cache index plus the corpus statistics a model embeds."""

    entries: list[IndexEntry]
    attribute_names: list[str]
    analysis: AnalysisConfig
    feature_mean: np.ndarray
    feature_std: np.ndarray
    f0_stats: list[F0Statistics]
    skipped: int = 0

    def __post_init__(self):
        self._mcc_cache: dict[str, np.ndarray] = {}

    @property
    def n_classes(self) -> int:
        return len(self.attribute_names)

    def validate(self):
        if not self.attribute_names:
            raise DatasetError("index has no attributes")
        counts = [0] * self.n_classes
        for e in self.entries:
            if e.frames <= 0:
                raise DatasetError(f"{e.utterance_id}: nonpositive frame count")
            if not os.path.exists(e.cache_path):
                raise DatasetError(f"{e.utterance_id}: missing cache file "
                                   f"{e.cache_path}")
            peek_frame_count(e.cache_path)
            counts[e.attribute] += 1
        empty = [self.attribute_names[i] for i, c in enumerate(counts) if c == 0]
        if empty:
            raise DatasetError(f"attributes with no entries: {empty}")

    def load_mcc(self, path: str) -> np.ndarray:
        cached = self._mcc_cache.get(path)
        if cached is None:
            cached = load_features(path).mcc.astype(np.float32)
            self._mcc_cache[path] = cached
        return cached

    def save(self, path):
        doc = {
            "format_version": INDEX_FORMAT_VERSION,
            "attribute_names": self.attribute_names,
            "analysis": asdict(self.analysis),
            "feature_mean": [float(v) for v in self.feature_mean],
            "feature_std": [float(v) for v in self.feature_std],
            "f0_stats": [{"mean_log_f0": s.mean_log_f0,
                          "std_log_f0": s.std_log_f0,
                          "n_voiced_frames": s.n_voiced_frames}
                         for s in self.f0_stats],
            "skipped": self.skipped,
            "entries": [{"id": e.utterance_id, "attribute": e.attribute,
                         "path": e.cache_path, "frames": e.frames}
                        for e in self.entries],
        }
        atomic_write_bytes(path, json.dumps(doc, indent=1).encode())

    @classmethod
    def load(cls, path) -> "DatasetIndex":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format_version") != INDEX_FORMAT_VERSION:
            raise DatasetError(f"{path}: unsupported index version")
        index = cls(
            entries=[IndexEntry(utterance_id=e["id"], attribute=e["attribute"],
                                cache_path=e["path"], frames=e["frames"])
                     for e in doc["entries"]],
            attribute_names=doc["attribute_names"],
            analysis=AnalysisConfig(**doc["analysis"]),
            feature_mean=np.asarray(doc["feature_mean"], np.float64),
            feature_std=np.asarray(doc["feature_std"], np.float64),
            f0_stats=[F0Statistics(**s) for s in doc["f0_stats"]],
            skipped=doc.get("skipped", 0),
        )
        index.validate()
        return index


def _config_fingerprint(cfg: AnalysisConfig) -> bytes:
    return json.dumps(asdict(cfg), sort_keys=True).encode()


def _cache_key(wav_path: Path, cfg: AnalysisConfig) -> str:
    h = hashlib.sha256()
    h.update(_config_fingerprint(cfg))
    h.update(wav_path.read_bytes())
    return h.hexdigest()[:32]


def default_cache_dir(root) -> Path:
    env = os.environ.get("MASS_CACHE_DIR")
    return Path(env) if env else Path(root) / ".feature_cache"


def ingest_dataset(root, cfg: AnalysisConfig,
                   cache_dir=None, jobs: int = 1) -> DatasetIndex:
    """Scan root/<attribute>/*.wav, extract (or reuse cached) features, and
    build the index with corpus-wide MCC statistics and per-attribute F0
    statistics. Unreadable files are skipped with a warning."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    attr_dirs = sorted(p for p in root.iterdir() if p.is_dir()
                       and not p.name.startswith("."))
    if not attr_dirs:
        raise DatasetError(f"{root}: no attribute subdirectories")
    cache = Path(cache_dir) if cache_dir else default_cache_dir(root)
    cache.mkdir(parents=True, exist_ok=True)

    jobs = max(1, int(jobs))
    work = []
    for attr_idx, attr_dir in enumerate(attr_dirs):
        wavs = sorted(attr_dir.glob("*.wav"))
        if not wavs:
            raise DatasetError(f"attribute directory {attr_dir} has no wav files")
        work.extend((attr_idx, wav) for wav in wavs)

    def extract(item):
        attr_idx, wav = item
        cache_path = cache / f"{_cache_key(wav, cfg)}.massfeat"
        try:
            if cache_path.exists():
                frames = peek_frame_count(cache_path)
            else:
                feats = analyze(read_wav(wav), cfg)
                save_features(cache_path, feats)
                frames = feats.n_frames
        except Exception as exc:
            log.warning("skipping %s: %s", wav, exc)
            return None
        uid = f"{wav.parent.name}/{wav.stem}"
        return IndexEntry(utterance_id=uid, attribute=attr_idx,
                          cache_path=str(cache_path), frames=frames)

    if jobs == 1:
        results = [extract(item) for item in work]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(extract, work))
    entries = [r for r in results if r is not None]
    skipped = len(results) - len(entries)

    # Corpus statistics from the cached features.
    mcc_sum = np.zeros(36)
    mcc_sq = np.zeros(36)
    n_frames = 0
    logf0_per_attr: list[list[np.ndarray]] = [[] for _ in attr_dirs]
    for e in entries:
        feats = load_features(e.cache_path)
        mcc_sum += feats.mcc.sum(axis=0)
        mcc_sq += (feats.mcc ** 2).sum(axis=0)
        n_frames += feats.n_frames
        logf0_per_attr[e.attribute].append(np.log(feats.f0[feats.voiced]))
    if n_frames == 0:
        raise DatasetError("no usable utterances in the corpus")
    mean = mcc_sum / n_frames
    var = np.maximum(mcc_sq / n_frames - mean ** 2, 0.0)
    std = np.maximum(np.sqrt(var), FEATURE_STD_FLOOR)

    f0_stats = []
    for i, chunks in enumerate(logf0_per_attr):
        values = np.concatenate(chunks) if chunks else np.empty(0)
        if values.size < 2:
            raise DatasetError(
                f"attribute {attr_dirs[i].name!r} has fewer than 2 voiced "
                "frames; cannot estimate F0 statistics")
        f0_stats.append(F0Statistics.from_log_values(values))

    index = DatasetIndex(entries=entries,
                         attribute_names=[d.name for d in attr_dirs],
                         analysis=cfg, feature_mean=mean, feature_std=std,
                         f0_stats=f0_stats, skipped=skipped)
    index.validate()
    return index


@dataclass
class Batch:
    mcc: np.ndarray          # (B, segment_frames, 36), float32
    source_attr: np.ndarray  # (B,) int64
    target_attr: np.ndarray  # (B,) int64


def sample_minibatch(index: DatasetIndex, cfg: TrainConfig,
                     rng: np.random.Generator) -> Batch:
    """Uniform utterance, uniform segment start, uniform target attribute.

    Utterances shorter than the segment length are symmetric-edge padded.
    Deterministic for a given generator state.
    """
    n = len(index.entries)
    seg = cfg.segment_frames
    picks = rng.integers(n, size=cfg.batch_size)
    mcc = np.empty((cfg.batch_size, seg, 36), dtype=np.float32)
    source = np.empty(cfg.batch_size, dtype=np.int64)
    for b, e_idx in enumerate(picks):
        entry = index.entries[int(e_idx)]
        full = index.load_mcc(entry.cache_path)
        if full.shape[0] < seg:
            pad = seg - full.shape[0]
            full = np.pad(full, ((0, pad), (0, 0)), mode="symmetric")
        start = int(rng.integers(full.shape[0] - seg + 1))
        mcc[b] = full[start:start + seg]
        source[b] = entry.attribute
    target = rng.integers(index.n_classes, size=cfg.batch_size).astype(np.int64)
    return Batch(mcc=mcc, source_attr=source, target_attr=target)


class Trainer:
    """Holds the model plus optimizer state; one call per training step."""

    def __init__(self, model: ConversionModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        betas = (0.5, 0.999)
        self.opt_g = torch.optim.Adam(model.generator.parameters(),
                                      lr=cfg.lr_g, betas=betas)
        self.opt_d = torch.optim.Adam(model.discriminator.parameters(),
                                      lr=cfg.lr_dc, betas=betas)
        self.opt_c = torch.optim.Adam(model.classifier.parameters(),
                                      lr=cfg.lr_dc, betas=betas)
        self.step_count = 0

    def _batch_tuple(self, batch: Batch):
        return (batch.mcc, batch.source_attr, batch.target_attr)

    def _apply_schedule(self):
        factor = self.cfg.lr_factor(self.step_count + 1)
        for opt, base in ((self.opt_g, self.cfg.lr_g),
                          (self.opt_d, self.cfg.lr_dc),
                          (self.opt_c, self.cfg.lr_dc)):
            for group in opt.param_groups:
                group["lr"] = base * factor

    def dc_step(self, batch: Batch) -> dict:
        """Update discriminator and classifier only."""
        self._apply_schedule()
        self.opt_d.zero_grad(set_to_none=True)
        self.opt_c.zero_grad(set_to_none=True)
        l_d = loss_adv_d(self.model, (batch.mcc, batch.source_attr),
                         (batch.mcc, batch.target_attr))
        l_c = loss_cls_c(self.model, (batch.mcc, batch.source_attr))
        (l_d + l_c).backward()
        self.opt_d.step()
        self.opt_c.step()
        return {"L_adv_d": float(l_d.detach()), "L_cls_c": float(l_c.detach())}

    def train_step(self, batch: Batch) -> dict:
        """One D/C update followed by one G update; returns all six terms."""
        t0 = time.perf_counter()
        dc = self.dc_step(batch)

        bundle = total_losses(self.model, self._batch_tuple(batch),
                              self.cfg.weights)
        self.opt_g.zero_grad(set_to_none=True)
        bundle.l_g.backward()
        self.opt_g.step()
        self.step_count += 1

        values = bundle.to_floats()
        report = {
            "step": self.step_count,
            "L_G": values["l_g"],
            "L_D": dc["L_adv_d"],
            "L_C": dc["L_cls_c"],
            "L_adv_g": values["adv_g"],
            "L_adv_d": dc["L_adv_d"],
            "L_cls_c": dc["L_cls_c"],
            "L_cls_g": values["cls_g"],
            "L_cyc": values["cyc"],
            "L_id": values["id"],
            "wall_ms": round(1000.0 * (time.perf_counter() - t0), 3),
        }
        for key in ("L_G", "L_D", "L_C"):
            if not np.isfinite(report[key]):
                raise TrainingDivergedError(f"non-finite {key} at step "
                                            f"{self.step_count}")
        return report


def save_checkpoint(path, model: ConversionModel, trainer: Trainer,
                    rng: np.random.Generator):
    """Atomic checkpoint: model bytes plus optimizer and RNG state."""
    payload = io.BytesIO()
    torch.save({
        "version": CHECKPOINT_VERSION,
        "step": trainer.step_count,
        "model": serialize_model(model),
        "opt_g": trainer.opt_g.state_dict(),
        "opt_d": trainer.opt_d.state_dict(),
        "opt_c": trainer.opt_c.state_dict(),
        "np_rng": rng.bit_generator.state,
        "torch_rng": torch.get_rng_state(),
    }, payload)
    atomic_write_bytes(path, payload.getvalue())


def load_checkpoint(path, cfg: TrainConfig):
    """Restore (model, trainer, rng, step) from a checkpoint file."""
    with open(path, "rb") as fh:
        blob = torch.load(fh, weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ParameterError(f"{path}: unsupported checkpoint version")
    model = deserialize_model(blob["model"], source=str(path))
    trainer = Trainer(model, cfg)
    trainer.opt_g.load_state_dict(blob["opt_g"])
    trainer.opt_d.load_state_dict(blob["opt_d"])
    trainer.opt_c.load_state_dict(blob["opt_c"])
    trainer.step_count = blob["step"]
    rng = np.random.default_rng()
    rng.bit_generator.state = blob["np_rng"]
    torch.set_rng_state(blob["torch_rng"])
    return model, trainer, rng


def train_model(index: DatasetIndex, net_cfg: NetworkConfig,
                cfg: TrainConfig, log_path=None, checkpoint_dir=None,
                resume_from=None) -> ConversionModel:
    """Run the adversarial loop and return the model with embedded
    normalization and per-attribute F0 statistics."""
    if net_cfg.n_classes != index.n_classes:
        raise ParameterError(
            f"network expects {net_cfg.n_classes} classes, corpus has "
            f"{index.n_classes}")
    if cfg.num_threads:
        torch.set_num_threads(cfg.num_threads)

    if resume_from is not None:
        model, trainer, rng = load_checkpoint(resume_from, cfg)
    else:
        model = build_model(net_cfg, seed=cfg.seed,
                            attribute_names=index.attribute_names)
        model.feature_mean = index.feature_mean.astype(np.float32)
        model.feature_std = index.feature_std.astype(np.float32)
        model.f0_stats = list(index.f0_stats)
        trainer = Trainer(model, cfg)
        rng = np.random.default_rng(cfg.seed)

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    last_checkpoint = str(resume_from) if resume_from else None

    log_fh = None
    if log_path is not None:
        mode = "a" if resume_from is not None else "w"
        log_fh = open(log_path, mode)
    try:
        while trainer.step_count < cfg.steps:
            for _ in range(cfg.d_steps_per_g_step - 1):
                trainer.dc_step(sample_minibatch(index, cfg, rng))
            batch = sample_minibatch(index, cfg, rng)
            try:
                report = trainer.train_step(batch)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    str(exc), checkpoint_path=last_checkpoint) from exc
            if log_fh:
                log_fh.write(json.dumps(report) + "\n")
            if (ckpt_dir and cfg.checkpoint_every
                    and trainer.step_count % cfg.checkpoint_every == 0):
                path = ckpt_dir / f"step{trainer.step_count:08d}.ckpt"
                save_checkpoint(path, model, trainer, rng)
                last_checkpoint = str(path)
    finally:
        if log_fh:
            log_fh.close()
    return model
