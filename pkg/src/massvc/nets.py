"""Conversion networks: residual CBlocks, generator, discriminator, classifier.

All three networks are fully convolutional over time, so any utterance of at
least MIN_FRAMES frames converts without chunking. The MCC sequence enters as
a single-channel image (1, 36, T); the conversion target is injected as K
one-hot channel planes concatenated at the input of the generator and the
discriminator. The classifier sees the MCC alone.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict, field
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import FormatError, FormatVersionError, InputError, ParameterError
from .features import F0Statistics

# Shortest MCC sequence the networks accept.
MIN_FRAMES = 32

INSTANCE_NORM_EPS = 1e-5

MODEL_MAGIC = b"MASSMODL"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AttributeLabel:
    """Categorical conversion target: class ``index`` out of ``n_classes``."""

    index: int
    n_classes: int

    def __post_init__(self):
        if self.n_classes < 2:
            raise ParameterError("need at least 2 attribute classes")
        if not 0 <= self.index < self.n_classes:
            raise ParameterError(
                f"label index {self.index} outside [0, {self.n_classes})")

    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.n_classes)
        v[self.index] = 1.0
        return v


@dataclass(frozen=True)
class NetworkConfig:
    """Block counts and widths for one conversion model."""

    n_classes: int
    n_generator_cblocks: int = 6
    n_disc_cblocks: int = 2
    n_cls_cblocks: int = 2
    base_channels: int = 32
    input_dim: int = 36

    def __post_init__(self):
        if self.n_classes < 2:
            raise ParameterError("n_classes must be >= 2")
        if min(self.n_generator_cblocks, self.n_disc_cblocks,
               self.n_cls_cblocks) < 1:
            raise ParameterError("block counts must be >= 1")
        if self.base_channels < 8:
            raise ParameterError("base_channels must be >= 8")
        if self.input_dim % 4 != 0:
            raise ParameterError("input_dim must be divisible by 4")

    @classmethod
    def devc(cls, n_classes: int, base_channels: int = 32) -> "NetworkConfig":
        """Emotion-conversion preset: 6 generator CBlocks, 2 in D and C."""
        return cls(n_classes=n_classes, n_generator_cblocks=6,
                   n_disc_cblocks=2, n_cls_cblocks=2,
                   base_channels=base_channels)

    @classmethod
    def dsvc(cls, n_classes: int, base_channels: int = 32) -> "NetworkConfig":
        """Speaker-conversion preset: deeper by four generator CBlocks and
        two extra CBlocks in both discriminator and classifier."""
        return cls(n_classes=n_classes, n_generator_cblocks=10,
                   n_disc_cblocks=4, n_cls_cblocks=4,
                   base_channels=base_channels)


def label_planes(labels: torch.Tensor, n_classes: int, height: int,
                 width: int) -> torch.Tensor:
    """One-hot label planes (B, K, H, W): plane k is all ones for class k."""
    if labels.dim() != 1:
        raise ParameterError("labels must be a 1-D batch of class indices")
    if torch.any(labels < 0) or torch.any(labels >= n_classes):
        raise ParameterError("label index outside [0, n_classes)")
    planes = torch.zeros(labels.shape[0], n_classes, height, width,
                         dtype=torch.get_default_dtype(), device=labels.device)
    planes[torch.arange(labels.shape[0]), labels] = 1.0
    return planes


class CBlock(nn.Module):
    """Residual convolution unit: x + IN(conv(relu(IN(conv(x))))).

    With every parameter zeroed the block is the exact identity map, so a
    deep stack can fall back to passing features through unchanged.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm1 = nn.InstanceNorm2d(channels, eps=INSTANCE_NORM_EPS,
                                       affine=True)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.norm2 = nn.InstanceNorm2d(channels, eps=INSTANCE_NORM_EPS,
                                       affine=True)

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))


def _check_input(x: torch.Tensor, input_dim: int):
    if x.dim() != 4 or x.shape[1] != 1 or x.shape[2] != input_dim:
        raise InputError(f"expected input of shape (B, 1, {input_dim}, T)")
    if x.shape[3] < MIN_FRAMES:
        raise InputError(
            f"sequence of {x.shape[3]} frames is shorter than the minimum "
            f"receptive length {MIN_FRAMES}")


class Generator(nn.Module):
    """Frame-rate MCC converter conditioned on the target attribute."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.conv_in = nn.Conv2d(1 + cfg.n_classes, c, 3, padding=1,
                                 bias=False)
        self.norm_in = nn.InstanceNorm2d(c, eps=INSTANCE_NORM_EPS, affine=True)
        self.down1 = nn.Conv2d(c, 2 * c, 4, stride=2, padding=1, bias=False)
        self.norm_d1 = nn.InstanceNorm2d(2 * c, eps=INSTANCE_NORM_EPS,
                                         affine=True)
        self.down2 = nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1,
                               bias=False)
        self.norm_d2 = nn.InstanceNorm2d(4 * c, eps=INSTANCE_NORM_EPS,
                                         affine=True)
        self.blocks = nn.ModuleList(
            CBlock(4 * c) for _ in range(cfg.n_generator_cblocks))
        self.up1 = nn.ConvTranspose2d(4 * c, 2 * c, 4, stride=2, padding=1,
                                      bias=False)
        self.norm_u1 = nn.InstanceNorm2d(2 * c, eps=INSTANCE_NORM_EPS,
                                         affine=True)
        self.up2 = nn.ConvTranspose2d(2 * c, c, 4, stride=2, padding=1,
                                      bias=False)
        self.norm_u2 = nn.InstanceNorm2d(c, eps=INSTANCE_NORM_EPS, affine=True)
        self.conv_out = nn.Conv2d(c, 1, 3, padding=1)

    def forward(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.cfg.input_dim)
        t = x.shape[3]
        pad = (-t) % 4
        if pad:
            x = F.pad(x, (0, pad, 0, 0), mode="replicate")
        planes = label_planes(labels, self.cfg.n_classes, x.shape[2],
                              x.shape[3]).to(x.dtype)
        h = torch.cat([x, planes], dim=1)
        h = F.relu(self.norm_in(self.conv_in(h)))
        h = F.relu(self.norm_d1(self.down1(h)))
        h = F.relu(self.norm_d2(self.down2(h)))
        for block in self.blocks:
            h = block(h)
        h = F.relu(self.norm_u1(self.up1(h)))
        h = F.relu(self.norm_u2(self.up2(h)))
        y = self.conv_out(h)
        return y[:, :, :, :t]


class _PoolingHead(nn.Module):
    """Shared body for discriminator and classifier: strided conv stack,
    CBlocks, global average pooling, affine head."""

    def __init__(self, in_channels: int, cfg: NetworkConfig, n_blocks: int,
                 out_features: int):
        super().__init__()
        c = cfg.base_channels
        self.cfg = cfg
        self.conv_in = nn.Conv2d(in_channels, c, 3, padding=1)
        self.down1 = nn.Conv2d(c, 2 * c, 4, stride=2, padding=1, bias=False)
        self.norm_d1 = nn.InstanceNorm2d(2 * c, eps=INSTANCE_NORM_EPS,
                                         affine=True)
        self.down2 = nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1,
                               bias=False)
        self.norm_d2 = nn.InstanceNorm2d(4 * c, eps=INSTANCE_NORM_EPS,
                                         affine=True)
        self.blocks = nn.ModuleList(CBlock(4 * c) for _ in range(n_blocks))
        self.head = nn.Linear(4 * c, out_features)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv_in(h))
        h = F.relu(self.norm_d1(self.down1(h)))
        h = F.relu(self.norm_d2(self.down2(h)))
        for block in self.blocks:
            h = block(h)
        return self.head(h.mean(dim=(2, 3)))


class Discriminator(nn.Module):
    """P(input is a real MCC sequence of the given attribute), in (0, 1)."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.body = _PoolingHead(1 + cfg.n_classes, cfg, cfg.n_disc_cblocks, 1)

    def forward(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.cfg.input_dim)
        planes = label_planes(labels, self.cfg.n_classes, x.shape[2],
                              x.shape[3]).to(x.dtype)
        return torch.sigmoid(self.body(torch.cat([x, planes], dim=1))[:, 0])


class Classifier(nn.Module):
    """Attribute confidences for an MCC sequence; rows sum to 1."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.body = _PoolingHead(1, cfg, cfg.n_cls_cblocks, cfg.n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_input(x, self.cfg.input_dim)
        return torch.softmax(self.body(x), dim=1)


@dataclass
class ConversionModel:
    """A trained (or initialized) conversion model with its statistics.

    ``feature_mean``/``feature_std`` z-normalize MCC before the networks and
    de-normalize after; ``f0_stats`` holds per-attribute voiced log-F0
    statistics for the pitch transform, aligned with ``attribute_names``.
    """

    config: NetworkConfig
    generator: nn.Module
    discriminator: nn.Module
    classifier: nn.Module
    feature_mean: np.ndarray
    feature_std: np.ndarray
    attribute_names: list[str] = field(default_factory=list)
    f0_stats: Optional[list[F0Statistics]] = None

    def label_index(self, label: Union[AttributeLabel, int, str]) -> int:
        if isinstance(label, AttributeLabel):
            idx = label.index
        elif isinstance(label, (int, np.integer)):
            idx = int(label)
        elif isinstance(label, str):
            if label not in self.attribute_names:
                raise ParameterError(
                    f"unknown attribute {label!r}; model knows "
                    f"{self.attribute_names}")
            idx = self.attribute_names.index(label)
        else:
            raise ParameterError(f"cannot interpret label {label!r}")
        if not 0 <= idx < self.config.n_classes:
            raise ParameterError(
                f"label index {idx} outside [0, {self.config.n_classes})")
        return idx

    @property
    def dtype(self) -> torch.dtype:
        for module in (self.generator, self.discriminator, self.classifier):
            for p in module.parameters():
                return p.dtype
        return torch.float32

    def normalize(self, mcc: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.feature_mean, dtype=mcc.dtype)
        std = torch.as_tensor(self.feature_std, dtype=mcc.dtype)
        return (mcc - mean.view(1, 1, -1, 1)) / std.view(1, 1, -1, 1)

    def denormalize(self, mcc: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.feature_mean, dtype=mcc.dtype)
        std = torch.as_tensor(self.feature_std, dtype=mcc.dtype)
        return mcc * std.view(1, 1, -1, 1) + mean.view(1, 1, -1, 1)


def build_model(cfg: NetworkConfig, seed: int = 0,
                attribute_names: Optional[Sequence[str]] = None,
                dtype: torch.dtype = torch.float32) -> ConversionModel:
    """Construct a model with seed-deterministic initialization."""
    torch.manual_seed(seed)
    generator = Generator(cfg).to(dtype)
    discriminator = Discriminator(cfg).to(dtype)
    classifier = Classifier(cfg).to(dtype)
    names = (list(attribute_names) if attribute_names is not None
             else [f"class{i}" for i in range(cfg.n_classes)])
    if len(names) != cfg.n_classes:
        raise ParameterError("attribute_names length must equal n_classes")
    return ConversionModel(config=cfg, generator=generator,
                           discriminator=discriminator, classifier=classifier,
                           feature_mean=np.zeros(cfg.input_dim, np.float32),
                           feature_std=np.ones(cfg.input_dim, np.float32),
                           attribute_names=names)


def _mcc_to_input(model: ConversionModel, mcc) -> torch.Tensor:
    arr = np.asarray(mcc, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != model.config.input_dim:
        raise InputError(f"mcc must be T x {model.config.input_dim}")
    if arr.shape[0] < MIN_FRAMES:
        raise InputError(f"need at least {MIN_FRAMES} frames, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InputError("mcc contains non-finite values")
    x = torch.as_tensor(arr.T, dtype=model.dtype).view(
        1, 1, model.config.input_dim, arr.shape[0])
    return model.normalize(x)


def generator_forward(model: ConversionModel, mcc,
                      target: Union[AttributeLabel, int, str]) -> np.ndarray:
    """Convert a T x 36 MCC matrix toward the target attribute."""
    idx = model.label_index(target)
    x = _mcc_to_input(model, mcc)
    labels = torch.tensor([idx], dtype=torch.long)
    with torch.no_grad():
        y = model.generator(x, labels)
        y = model.denormalize(y)
    return np.asarray(y[0, 0].T.cpu().numpy(), dtype=np.float64)


def discriminator_forward(model: ConversionModel, mcc,
                          attr: Union[AttributeLabel, int, str]) -> float:
    """Probability that ``mcc`` is a real sequence of the given attribute."""
    idx = model.label_index(attr)
    x = _mcc_to_input(model, mcc)
    with torch.no_grad():
        d = model.discriminator(x, torch.tensor([idx], dtype=torch.long))
    return float(d[0])


def classifier_forward(model: ConversionModel, mcc) -> np.ndarray:
    """Attribute confidence vector (sums to one)."""
    x = _mcc_to_input(model, mcc)
    with torch.no_grad():
        p = model.classifier(x)
    return np.asarray(p[0].cpu().numpy(), dtype=np.float64)


def _state_tensors(model: ConversionModel):
    """Deterministically ordered (name, float32 tensor) pairs."""
    pairs = []
    for prefix, module in (("generator", model.generator),
                           ("discriminator", model.discriminator),
                           ("classifier", model.classifier)):
        for name, tensor in module.state_dict().items():
            pairs.append((f"{prefix}.{name}", tensor.detach().to(torch.float32)))
    pairs.append(("feature_mean",
                  torch.as_tensor(model.feature_mean, dtype=torch.float32)))
    pairs.append(("feature_std",
                  torch.as_tensor(model.feature_std, dtype=torch.float32)))
    return pairs


def serialize_model(model: ConversionModel) -> bytes:
    """Model file bytes: magic, length-prefixed JSON manifest, then the
    concatenated float32 little-endian tensor payload in manifest order."""
    pairs = _state_tensors(model)
    tensors = []
    payload = io.BytesIO()
    for name, tensor in pairs:
        data = tensor.cpu().numpy().astype("<f4").tobytes()
        tensors.append({"name": name, "shape": list(tensor.shape),
                        "offset": payload.tell()})
        payload.write(data)
    stats = None
    if model.f0_stats is not None:
        stats = [{"mean_log_f0": s.mean_log_f0, "std_log_f0": s.std_log_f0,
                  "n_voiced_frames": s.n_voiced_frames}
                 for s in model.f0_stats]
    manifest = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "attribute_names": list(model.attribute_names),
        "f0_stats": stats,
        "tensors": tensors,
    }
    blob = json.dumps(manifest, separators=(",", ":")).encode()
    return (MODEL_MAGIC + struct.pack("<I", len(blob)) + blob
            + payload.getvalue())


def save_model(model: ConversionModel, path):
    from .featio import atomic_write_bytes

    atomic_write_bytes(path, serialize_model(model))


def deserialize_model(raw: bytes, source: str = "<bytes>") -> ConversionModel:
    if len(raw) < len(MODEL_MAGIC) + 4:
        raise FormatError(f"{source}: truncated model file")
    if raw[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError(f"{source}: bad magic, not a conversion model file")
    (blob_len,) = struct.unpack_from("<I", raw, len(MODEL_MAGIC))
    start = len(MODEL_MAGIC) + 4
    try:
        manifest = json.loads(raw[start:start + blob_len].decode())
    except Exception as exc:
        raise FormatError(f"{source}: unreadable manifest ({exc})") from exc
    version = manifest.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise FormatVersionError(
            f"{source}: model format version {version} unsupported "
            f"(expected {MODEL_FORMAT_VERSION})")
    cfg = NetworkConfig(**manifest["config"])
    model = build_model(cfg, seed=0,
                        attribute_names=manifest["attribute_names"])
    payload_start = start + blob_len
    state: dict[str, dict[str, torch.Tensor]] = {
        "generator": {}, "discriminator": {}, "classifier": {}}
    extras: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count,
                            offset=payload_start + entry["offset"])
        arr = arr.reshape(shape).copy()
        name = entry["name"]
        if "." in name:
            prefix, rest = name.split(".", 1)
            state[prefix][rest] = torch.from_numpy(arr)
        else:
            extras[name] = arr
    model.generator.load_state_dict(state["generator"])
    model.discriminator.load_state_dict(state["discriminator"])
    model.classifier.load_state_dict(state["classifier"])
    model.feature_mean = extras["feature_mean"]
    model.feature_std = extras["feature_std"]
    if manifest["f0_stats"] is not None:
        model.f0_stats = [F0Statistics(**s) for s in manifest["f0_stats"]]
    return model


def load_model(path) -> ConversionModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    return deserialize_model(raw, source=str(path))
