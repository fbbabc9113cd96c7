"""Model architectures: per-band CNNs, the fullband baseline, and the joint
network that concatenates band embeddings into a feedforward classifier.

A band network is a conv trunk (3x3 convolutions, each followed by batch
normalization and ReLU, with 2x2 max pooling at fixed positions), global
average pooling over time and frequency, and a 32-unit embedding layer.
Global pooling is what lets one architecture serve every band width. The
joint network reuses the embedding stages (optionally initialized from
pretrained band models), concatenates their outputs and classifies with a
256/128-unit feedforward head; hidden layers use batch normalization before
ReLU, the output unit is a sigmoid.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, ConfigError, DataError
from .frontend import FrontendConfig, DEFAULT_FRONTEND
from .subband import SubbandPlan, SubSpectrogram, make_plan

# Band widths reachable from the supported split plans.
SUPPORTED_WIDTHS = (32, 33, 64, 65, 128, 129, 257)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class SubCnnConfig:
    """Architecture of one band network.

    The paper profile is 9 conv layers with 5 pooling stages and a 32-unit
    embedding; the reduced profile keeps the same interface at a fraction of
    the cost for desk-scale runs.
    """

    input_bins: int
    input_frames: int = 300
    conv_channels: tuple[int, ...] = (16, 16, 32, 32, 64, 64, 128, 128, 256)
    pool_after: tuple[int, ...] = (2, 4, 6, 8, 9)  # 1-based conv indices
    embedding_dim: int = 32
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.input_bins < 1 or self.input_frames < 1:
            raise ConfigError("input dimensions must be positive")
        if not self.conv_channels:
            raise ConfigError("need at least one conv layer")
        for p in self.pool_after:
            if not (1 <= p <= len(self.conv_channels)):
                raise ConfigError(f"pool position {p} outside conv stack")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)")


def paper_config(input_bins: int, dropout_rate: float = 0.5) -> SubCnnConfig:
    return SubCnnConfig(input_bins=input_bins, dropout_rate=dropout_rate)


def reduced_config(input_bins: int, dropout_rate: float = 0.5) -> SubCnnConfig:
    return SubCnnConfig(
        input_bins=input_bins,
        conv_channels=(8, 16, 32),
        pool_after=(1, 2, 3),
        dropout_rate=dropout_rate,
    )


ARCH_PROFILES = {"paper": paper_config, "reduced": reduced_config}


def config_for_profile(profile: str, input_bins: int, dropout_rate: float = 0.5) -> SubCnnConfig:
    if profile not in ARCH_PROFILES:
        raise ConfigError(f"unknown architecture profile {profile!r}")
    return ARCH_PROFILES[profile](input_bins, dropout_rate)


class EmbeddingStage(nn.Module):
    """Conv trunk + global average pooling + 32-unit embedding layer."""

    def __init__(self, cfg: SubCnnConfig):
        super().__init__()
        self.cfg = cfg
        layers: list[nn.Module] = []
        in_ch = 1
        for i, out_ch in enumerate(cfg.conv_channels, start=1):
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1))
            layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.ReLU(inplace=True))
            if i in cfg.pool_after:
                layers.append(nn.MaxPool2d(2))
            in_ch = out_ch
        self.trunk = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dropout = nn.Dropout(cfg.dropout_rate)
        self.fc = nn.Linear(in_ch, cfg.embedding_dim)
        self.norm = nn.BatchNorm1d(cfg.embedding_dim)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if x.shape[-2] != self.cfg.input_frames or x.shape[-1] != self.cfg.input_bins:
            raise DataError(
                f"expected {self.cfg.input_frames}x{self.cfg.input_bins} input, "
                f"got {tuple(x.shape[-2:])}"
            )
        h = self.trunk(x)
        h = self.pool(h).flatten(1)
        h = self.fc(self.dropout(h))
        return self.act(self.norm(h))


class SubCnn(nn.Module):
    """Band network: embedding stage plus a single-unit sigmoid classifier."""

    def __init__(self, cfg: SubCnnConfig, band_index: int = 0, n_splits: int = 1):
        super().__init__()
        self.cfg = cfg
        self.band_index = band_index
        self.n_splits = n_splits
        self.backbone = EmbeddingStage(cfg)
        self.dropout = nn.Dropout(cfg.dropout_rate)
        self.classifier = nn.Linear(cfg.embedding_dim, 1)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def forward_logit(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.dropout(self.embed(x))).squeeze(-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward_logit(x))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_sub_cnn(cfg: SubCnnConfig, band_index: int = 0, n_splits: int = 1) -> SubCnn:
    """Validated constructor: band widths must come from a supported plan."""
    if cfg.input_bins not in SUPPORTED_WIDTHS:
        raise ConfigError(
            f"unsupported input width {cfg.input_bins}; supported: {SUPPORTED_WIDTHS}"
        )
    return SubCnn(cfg, band_index=band_index, n_splits=n_splits)


@dataclass(frozen=True)
class JointConfig:
    n_splits: int
    band_indices: tuple[int, ...]
    sub_configs: tuple[SubCnnConfig, ...]
    head_hidden: tuple[int, ...] = (256, 128)
    dropout_rate: float = 0.5

    def __post_init__(self):
        if len(self.band_indices) != len(self.sub_configs):
            raise ConfigError("one sub network config required per band")
        if list(self.band_indices) != sorted(set(self.band_indices)):
            raise ConfigError("band indices must be distinct and ascending")

    @property
    def concat_dim(self) -> int:
        return sum(c.embedding_dim for c in self.sub_configs)


class JointModel(nn.Module):
    """Band embedding stages feeding a feedforward classification head."""

    def __init__(self, cfg: JointConfig):
        super().__init__()
        self.cfg = cfg
        self.n_splits = cfg.n_splits
        self.band_indices = cfg.band_indices
        self.embeddings = nn.ModuleList(EmbeddingStage(c) for c in cfg.sub_configs)
        layers: list[nn.Module] = []
        in_dim = cfg.concat_dim
        for width in cfg.head_hidden:
            layers += [
                nn.Dropout(cfg.dropout_rate),
                nn.Linear(in_dim, width),
                nn.BatchNorm1d(width),
                nn.ReLU(inplace=True),
            ]
            in_dim = width
        layers += [nn.Dropout(cfg.dropout_rate), nn.Linear(in_dim, 1)]
        self.head = nn.Sequential(*layers)

    def _check_bands(self, bands: list[torch.Tensor]) -> None:
        if len(bands) != len(self.embeddings):
            raise DataError(f"expected {len(self.embeddings)} bands, got {len(bands)}")
        for t, emb in zip(bands, self.embeddings):
            width = t.shape[-1]
            if width != emb.cfg.input_bins:
                raise DataError(
                    f"band width mismatch: got {width}, expected {emb.cfg.input_bins}"
                )

    def forward_logit(self, bands: list[torch.Tensor]) -> torch.Tensor:
        self._check_bands(bands)
        embs = [emb(t) for emb, t in zip(self.embeddings, bands)]
        return self.head(torch.cat(embs, dim=1)).squeeze(-1)

    def forward(self, bands: list[torch.Tensor]) -> torch.Tensor:
        return torch.sigmoid(self.forward_logit(bands))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_head(head: nn.Module) -> None:
    """Uniform fan-based (xavier) init for linear weights, zero biases."""
    for m in head.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            nn.init.zeros_(m.bias)


def build_joint(
    sub_models: list[SubCnn],
    transfer: bool,
    plan: SubbandPlan | None = None,
    head_hidden: tuple[int, ...] = (256, 128),
    dropout_rate: float = 0.5,
) -> JointModel:
    """Assemble a joint model over the given band models' bands.

    With `transfer`, the embedding stages start as exact copies of the band
    models' (running statistics included); otherwise they are freshly
    initialized. The head always starts from the fan-based uniform scheme
    with zero biases.
    """
    if not sub_models:
        raise ConfigError("need at least one band model")
    n_splits = sub_models[0].n_splits
    band_indices = tuple(m.band_index for m in sub_models)
    if any(m.n_splits != n_splits for m in sub_models):
        raise ConfigError("band models come from different split plans")
    if list(band_indices) != sorted(set(band_indices)):
        raise ConfigError(f"band models must be distinct and ascending, got {band_indices}")
    if plan is None:
        plan = make_plan(n_splits)
    for m in sub_models:
        expected = plan.widths[m.band_index]
        if m.cfg.input_bins != expected:
            raise ConfigError(
                f"band {m.band_index} width {m.cfg.input_bins} does not match "
                f"plan width {expected}"
            )
    cfg = JointConfig(
        n_splits=n_splits,
        band_indices=band_indices,
        sub_configs=tuple(m.cfg for m in sub_models),
        head_hidden=head_hidden,
        dropout_rate=dropout_rate,
    )
    joint = JointModel(cfg)
    if transfer:
        for emb, sub in zip(joint.embeddings, sub_models):
            emb.load_state_dict(copy.deepcopy(sub.backbone.state_dict()))
    init_head(joint.head)
    return joint


def _as_tensor(values: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(values), dtype=torch.float32)


def forward_score(m: SubCnn, s: SubSpectrogram) -> float:
    """Deterministic bonafide posterior for a single band input (eval mode)."""
    if s.values.shape != (m.cfg.input_frames, m.cfg.input_bins):
        raise DataError(
            f"input shape {s.values.shape} does not match model "
            f"({m.cfg.input_frames}, {m.cfg.input_bins})"
        )
    m.eval()
    with torch.no_grad():
        return float(m(_as_tensor(s.values).unsqueeze(0))[0])


def forward_joint(j: JointModel, bands: list[SubSpectrogram]) -> float:
    """Bonafide posterior from an ascending-frequency list of band inputs."""
    got = tuple(b.band_index for b in bands)
    if got != j.band_indices:
        raise DataError(f"band order mismatch: got {got}, expected {j.band_indices}")
    j.eval()
    with torch.no_grad():
        tensors = [_as_tensor(b.values).unsqueeze(0) for b in bands]
        return float(j(tensors)[0])


def model_scores(model, fullband: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Score a stack of fullband spectrograms (n, frames, 257) with either
    model kind, slicing out the bands the model was built for."""
    plan = make_plan(model.n_splits, n_bins=fullband.shape[-1])
    model.eval()
    out = np.empty(len(fullband), dtype=np.float64)
    with torch.no_grad():
        for lo in range(0, len(fullband), batch_size):
            chunk = _as_tensor(fullband[lo : lo + batch_size])
            if isinstance(model, JointModel):
                bands = [
                    chunk[:, :, plan.offsets[i] : plan.offsets[i] + plan.widths[i]]
                    for i in model.band_indices
                ]
                probs = model(bands)
            else:
                i = model.band_index
                probs = model(chunk[:, :, plan.offsets[i] : plan.offsets[i] + plan.widths[i]])
            out[lo : lo + len(chunk)] = probs.numpy().astype(np.float64)
    return out


def _manifest_for(model, frontend_cfg: FrontendConfig, seed: int) -> dict:
    if isinstance(model, JointModel):
        arch = {
            "n_splits": model.cfg.n_splits,
            "band_indices": list(model.cfg.band_indices),
            "sub_configs": [asdict(c) for c in model.cfg.sub_configs],
            "head_hidden": list(model.cfg.head_hidden),
            "dropout_rate": model.cfg.dropout_rate,
        }
        kind = "joint"
    elif isinstance(model, SubCnn):
        arch = {
            "n_splits": model.n_splits,
            "band_index": model.band_index,
            "config": asdict(model.cfg),
        }
        kind = "sub_cnn"
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(model).__name__}")
    return {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "architecture": arch,
        "frontend": asdict(frontend_cfg),
        "seed": seed,
    }


def save_checkpoint(
    model,
    path,
    frontend_cfg: FrontendConfig = DEFAULT_FRONTEND,
    seed: int = 0,
    extra: dict | None = None,
) -> Path:
    """Persist a model as a directory of manifest + weights.

    The manifest records architecture, front-end parameters, the training
    seed and a content hash of the weight file; loading verifies the hash.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    weights_path = path / "weights.pt"
    torch.save(model.state_dict(), weights_path)
    manifest = _manifest_for(model, frontend_cfg, seed)
    manifest["weights_sha256"] = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    if extra:
        manifest["extra"] = extra
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_manifest(path) -> dict:
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest at {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest at {path}: {exc}")
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")
    return manifest


def _tuplify_config(payload: dict) -> SubCnnConfig:
    payload = dict(payload)
    payload["conv_channels"] = tuple(payload["conv_channels"])
    payload["pool_after"] = tuple(payload["pool_after"])
    return SubCnnConfig(**payload)


def load_checkpoint(path):
    """Rebuild a model from a checkpoint directory; returns (model, manifest)."""
    path = Path(path)
    manifest = load_manifest(path)
    weights_path = path / "weights.pt"
    if not weights_path.exists():
        raise CheckpointError(f"no weights file at {path}")
    digest = hashlib.sha256(weights_path.read_bytes()).hexdigest()
    if digest != manifest.get("weights_sha256"):
        raise CheckpointError(
            f"checkpoint {path} failed content-hash verification "
            f"(expected {manifest.get('weights_sha256')}, got {digest})"
        )
    arch = manifest["architecture"]
    if manifest["kind"] == "sub_cnn":
        model = SubCnn(
            _tuplify_config(arch["config"]),
            band_index=arch["band_index"],
            n_splits=arch["n_splits"],
        )
    elif manifest["kind"] == "joint":
        cfg = JointConfig(
            n_splits=arch["n_splits"],
            band_indices=tuple(arch["band_indices"]),
            sub_configs=tuple(_tuplify_config(c) for c in arch["sub_configs"]),
            head_hidden=tuple(arch["head_hidden"]),
            dropout_rate=arch["dropout_rate"],
        )
        model = JointModel(cfg)
    else:
        raise CheckpointError(f"unknown checkpoint kind {manifest['kind']!r}")
    state = torch.load(weights_path, weights_only=True)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"weights do not match manifest architecture: {exc}")
    model.eval()
    return model, manifest
