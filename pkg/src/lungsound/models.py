"""LightCNN and ResNet18 classifier graphs plus the LSND checkpoint archive."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .nn import (BatchNorm2d, Conv2d, Dropout, Flatten, GlobalAvgPool2d, Linear, MaxPool2d, Module,
                 ReLU, Sequential, Tensor)
from .nn import functional as F

INPUT_SHAPE = (3, 224, 224)
CHECKPOINT_MAGIC = b"LSND"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LightCnnConfig:
    num_classes: int = 2
    in_channels: int = 3
    conv_channels: tuple[int, ...] = (32, 64, 96, 96)
    kernel_sizes: tuple[int, ...] = (9, 7, 5, 3)
    pool_window: int = 2
    hidden_dim: int = 128
    dropout_p: float = 0.0325
    input_size: int = 224

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if len(self.conv_channels) != len(self.kernel_sizes) or not self.conv_channels:
            raise ValueError("conv_channels and kernel_sizes must be nonempty and equally long")
        if self.input_size // self.pool_window ** len(self.conv_channels) < 1:
            raise ValueError("input too small for the pooling chain")

    @property
    def spatial_sizes(self) -> list[int]:
        sizes = [self.input_size]
        for _ in self.conv_channels:
            sizes.append(sizes[-1] // self.pool_window)
        return sizes

    @property
    def flat_features(self) -> int:
        return self.conv_channels[-1] * self.spatial_sizes[-1] ** 2


@dataclass(frozen=True)
class ResNet18Config:
    num_classes: int = 2
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (64, 128, 256, 512)
    blocks_per_stage: int = 2
    backbone_dim: int = 1000
    head_dropout_p: float = 0.5

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")


class LightCNN(Module):
    """Four conv/BN/ReLU/pool stages, then FC -> ReLU -> dropout -> FC."""

    def __init__(self, cfg: LightCnnConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        layers = []
        c_in = cfg.in_channels
        for i, (c_out, k) in enumerate(zip(cfg.conv_channels, cfg.kernel_sizes), start=1):
            layers += [
                (f"conv{i}", Conv2d(c_in, c_out, k, padding="same", rng=rng, dtype=dtype)),
                (f"bn{i}", BatchNorm2d(c_out, dtype=dtype)),
                (f"relu{i}", ReLU()),
                (f"pool{i}", MaxPool2d(cfg.pool_window)),
            ]
            c_in = c_out
        layers += [
            ("flatten", Flatten()),
            ("fc1", Linear(cfg.flat_features, cfg.hidden_dim, rng=rng, dtype=dtype)),
            ("relu_fc", ReLU()),
            ("dropout", Dropout(cfg.dropout_p)),
            ("fc2", Linear(cfg.hidden_dim, cfg.num_classes, rng=rng, dtype=dtype)),
        ]
        self.body = Sequential(*layers)
        # flatten the namespace: parameter names are conv1.weight, fc2.bias, ...
        self._children = dict(self.body._children)

    def forward(self, x, rng=None):
        return self.body.forward(x, rng)


class BasicBlock(Module):
    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator, dtype):
        super().__init__()
        self.conv1 = self.add_child("conv1", Conv2d(c_in, c_out, 3, stride, 1, bias=False,
                                                     rng=rng, dtype=dtype))
        self.bn1 = self.add_child("bn1", BatchNorm2d(c_out, dtype=dtype))
        self.conv2 = self.add_child("conv2", Conv2d(c_out, c_out, 3, 1, 1, bias=False,
                                                     rng=rng, dtype=dtype))
        self.bn2 = self.add_child("bn2", BatchNorm2d(c_out, dtype=dtype))
        self.downsample = None
        if stride != 1 or c_in != c_out:
            self.downsample = self.add_child("downsample", Sequential(
                ("0", Conv2d(c_in, c_out, 1, stride, 0, bias=False, rng=rng, dtype=dtype)),
                ("1", BatchNorm2d(c_out, dtype=dtype))))

    def forward(self, x, rng=None):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = self.downsample(x) if self.downsample is not None else x
        return F.relu(F.add(out, identity))


class ResNet18(Module):
    """Residual backbone with a 1000-d output, then dropout and a task head."""

    def __init__(self, cfg: ResNet18Config, seed: int = 0, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.stem = [
            self.add_child("conv1", Conv2d(cfg.in_channels, 64, 7, 2, 3, bias=False, rng=rng,
                                           dtype=dtype)),
            self.add_child("bn1", BatchNorm2d(64, dtype=dtype)),
            ReLU(),
            MaxPool2d(3, 2, 1),
        ]
        self.blocks: list[BasicBlock] = []
        c_in = 64
        for s, c_out in enumerate(cfg.stage_channels, start=1):
            stage = []
            for b in range(cfg.blocks_per_stage):
                stride = 2 if (b == 0 and s > 1) else 1
                stage.append((str(b), BasicBlock(c_in, c_out, stride, rng, dtype)))
                c_in = c_out
            seq = self.add_child(f"layer{s}", Sequential(*stage))
            self.blocks.extend(seq.layers)
        self.pool = GlobalAvgPool2d()
        self.fc = self.add_child("fc", Linear(c_in, cfg.backbone_dim, rng=rng, dtype=dtype))
        self.head_dropout = self.add_child("head_dropout", Dropout(cfg.head_dropout_p))
        self.head = self.add_child("head", Linear(cfg.backbone_dim, cfg.num_classes, rng=rng,
                                                  dtype=dtype))

    def forward(self, x, rng=None):
        for layer in self.stem:
            x = layer(x, rng)
        for block in self.blocks:
            x = block(x, rng)
        x = self.fc(self.pool(x))
        return self.head(self.head_dropout(x, rng))


def build_lightcnn(cfg: LightCnnConfig, seed: int = 0, dtype=np.float32) -> LightCNN:
    return LightCNN(cfg, seed, dtype)


def build_resnet18(cfg: ResNet18Config, seed: int = 0, dtype=np.float32) -> ResNet18:
    return ResNet18(cfg, seed, dtype)


def build_model(kind: str, num_classes: int, seed: int = 0, dtype=np.float32) -> Module:
    if kind == "lightcnn":
        return build_lightcnn(LightCnnConfig(num_classes=num_classes), seed, dtype)
    if kind == "resnet18":
        return build_resnet18(ResNet18Config(num_classes=num_classes), seed, dtype)
    raise ValueError(f"unknown model kind {kind!r} (expected 'lightcnn' or 'resnet18')")


def lightcnn_param_count(cfg: LightCnnConfig) -> int:
    total = 0
    c_in = cfg.in_channels
    for c_out, k in zip(cfg.conv_channels, cfg.kernel_sizes):
        total += c_in * c_out * k * k + c_out + 2 * c_out
        c_in = c_out
    total += cfg.flat_features * cfg.hidden_dim + cfg.hidden_dim
    total += cfg.hidden_dim * cfg.num_classes + cfg.num_classes
    return total


def lightcnn_forward_macs(cfg: LightCnnConfig) -> int:
    """Multiply-accumulates of the conv and FC layers for one input image."""
    total = 0
    c_in = cfg.in_channels
    for size, c_out, k in zip(cfg.spatial_sizes, cfg.conv_channels, cfg.kernel_sizes):
        total += size * size * c_out * c_in * k * k
        c_in = c_out
    total += cfg.flat_features * cfg.hidden_dim + cfg.hidden_dim * cfg.num_classes
    return total


def predict_proba(model: Module, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode softmax probabilities, computed batch by batch."""
    was_training = model.training
    model.eval()
    out = []
    try:
        for i in range(0, len(images), batch_size):
            logits = model(Tensor(images[i:i + batch_size])).data
            out.append(F.softmax(logits.astype(np.float64)))
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, 0))


# --- checkpoint archive -------------------------------------------------------

def checkpoint_bytes(model: Module) -> bytes:
    state = model.state_dict()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(state)))
    for name, arr in state.items():
        if not np.isfinite(arr).all():
            raise CheckpointError(f"parameter {name!r} contains non-finite values")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(model: Module, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def read_archive(data: bytes) -> dict[str, np.ndarray]:
    """Decode an LSND archive into {name: float32 array} in file order."""
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint archive (needed {n} bytes at offset {pos})")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not an LSND checkpoint archive (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("corrupt tensor name in checkpoint") from exc
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
        if name in entries:
            raise CheckpointError(f"duplicate tensor name {name!r} in checkpoint")
        entries[name] = arr
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after checkpoint entries")
    return entries


def load_state(model: Module, entries: dict[str, np.ndarray]) -> Module:
    state = model.state_dict()
    missing = sorted(set(state) - set(entries))
    extra = sorted(set(entries) - set(state))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing: {', '.join(missing)}")
        if extra:
            parts.append(f"unexpected: {', '.join(extra)}")
        raise CheckpointError("checkpoint does not match model (" + "; ".join(parts) + ")")
    for name, arr in state.items():
        if entries[name].shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {entries[name].shape}, model {arr.shape}")
    model.load_state_dict(entries)
    return model


def load_checkpoint(path: str | Path, model: Module) -> Module:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    return load_state(model, read_archive(data))
