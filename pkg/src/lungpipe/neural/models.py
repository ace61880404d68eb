"""3D CNN architectures for malignancy classification and FP reduction.

Three kinds:
  shallow  - 3 x [conv3d -> ReLU -> maxpool], final dropout, dense, softmax
  deeper   - same with batchnorm and an inner dropout added to every block
  residual - configurable-depth residual stack with a sigmoid head (used for
             false-positive reduction)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from ..errors import ArchError


@dataclass
class ArchitectureSpec:
    kind: str = "shallow"  # shallow | deeper | residual
    conv_filters: tuple = (32, 64, 128)
    kernel: int = 3
    pool: int = 2
    dense_units: int = 128  # penultimate layer width
    dropout_inner: float = 0.25
    dropout_final: float = 0.5
    use_batchnorm: bool | None = None  # default: True iff kind != shallow
    residual_depth: int = 10  # residual blocks; full-scale depth is a config value
    n_outputs: int = 3
    output_kind: str = "softmax"  # softmax | sigmoid

    def __post_init__(self):
        if self.kind not in ("shallow", "deeper", "residual"):
            raise ArchError(f"unknown architecture kind {self.kind!r}")
        if self.use_batchnorm is None:
            self.use_batchnorm = self.kind != "shallow"
        if self.kind == "deeper" and not self.use_batchnorm:
            raise ArchError("the deeper architecture requires batchnorm")
        if self.kind in ("shallow", "deeper") and len(self.conv_filters) != 3:
            raise ArchError(
                f"{self.kind} architecture needs exactly 3 conv blocks, "
                f"got {len(self.conv_filters)}"
            )
        for rate in (self.dropout_inner, self.dropout_final):
            if not 0 <= rate < 1:
                raise ArchError(f"dropout rates must lie in [0, 1), got {rate}")
        if self.output_kind not in ("softmax", "sigmoid"):
            raise ArchError(f"unknown output kind {self.output_kind!r}")
        if self.output_kind == "sigmoid" and self.n_outputs != 1:
            raise ArchError("sigmoid head implies n_outputs = 1")
        if self.residual_depth < 1:
            raise ArchError("residual_depth must be >= 1")

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["conv_filters"] = list(self.conv_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        d = dict(d)
        d["conv_filters"] = tuple(d["conv_filters"])
        return cls(**d)


class ConvStackNet(nn.Module):
    """Shallow/deeper 3-block conv net; ``penultimate`` is the dense layer."""

    def __init__(self, spec: ArchitectureSpec, input_side: int):
        super().__init__()
        blocks = []
        channels = 1
        side = input_side
        for filters in spec.conv_filters:
            blocks.append(
                nn.Conv3d(channels, filters, spec.kernel, padding=spec.kernel // 2)
            )
            if spec.use_batchnorm:
                blocks.append(nn.BatchNorm3d(filters))
            blocks.append(nn.ReLU())
            blocks.append(nn.MaxPool3d(spec.pool))
            if spec.kind == "deeper" and spec.dropout_inner > 0:
                blocks.append(nn.Dropout3d(spec.dropout_inner))
            channels = filters
            if side % spec.pool:
                raise ArchError(
                    f"side {side} not divisible by pool {spec.pool} in block chain"
                )
            side //= spec.pool
        self.trunk = nn.Sequential(*blocks)
        self.final_dropout = nn.Dropout(spec.dropout_final)
        self.flat_size = channels * side**3
        self.dense = nn.Linear(self.flat_size, spec.dense_units)
        self.head = nn.Linear(spec.dense_units, spec.n_outputs)

    def penultimate(self, x: torch.Tensor) -> torch.Tensor:
        x = self.trunk(x)
        x = self.final_dropout(x.flatten(1))
        return torch.relu(self.dense(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.penultimate(x))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, use_batchnorm: bool):
        super().__init__()
        norm = nn.BatchNorm3d if use_batchnorm else nn.Identity
        self.conv1 = nn.Conv3d(channels, channels, 3, padding=1)
        self.norm1 = norm(channels)
        self.conv2 = nn.Conv3d(channels, channels, 3, padding=1)
        self.norm2 = norm(channels)

    def forward(self, x):
        out = torch.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return torch.relu(out + x)


class ResidualNet(nn.Module):
    """Depth-configurable residual net with a single-logit (sigmoid) head."""

    def __init__(self, spec: ArchitectureSpec, input_side: int):
        super().__init__()
        width = spec.conv_filters[0]
        self.stem = nn.Sequential(
            nn.Conv3d(1, width, 5, stride=2, padding=2),
            nn.BatchNorm3d(width) if spec.use_batchnorm else nn.Identity(),
            nn.ReLU(),
        )
        self.blocks = nn.Sequential(
            *[ResidualBlock(width, spec.use_batchnorm) for _ in range(spec.residual_depth)]
        )
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.dense = nn.Linear(width, spec.dense_units)
        self.head = nn.Linear(spec.dense_units, 1)

    def penultimate(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.blocks(self.stem(x))).flatten(1)
        return torch.relu(self.dense(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.penultimate(x))


@dataclass
class TrainedModel:
    spec: ArchitectureSpec
    net: nn.Module
    class_order: list
    input_side: int = 32
    training_log: list = field(default_factory=list)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def weights_fingerprint(self) -> str:
        """Order-stable hash of all weight tensors (freezing checks)."""
        import hashlib

        digest = hashlib.sha256()
        for name, tensor in sorted(self.net.state_dict().items()):
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().numpy().tobytes())
        return digest.hexdigest()


def build_model(
    spec: ArchitectureSpec,
    class_order=None,
    input_side: int = 32,
    seed: int = 0,
) -> TrainedModel:
    """Construct a randomly initialized model (deterministic given seed)."""
    if spec.output_kind == "softmax":
        if class_order is None:
            class_order = list(range(spec.n_outputs))
        if len(class_order) != spec.n_outputs:
            raise ArchError(
                f"class_order length {len(class_order)} != n_outputs {spec.n_outputs}"
            )
    else:
        class_order = list(class_order) if class_order is not None else ["positive"]
        if len(class_order) != 1:
            raise ArchError("sigmoid head carries a single positive-class label")
    torch.manual_seed(seed)
    if spec.kind == "residual":
        net = ResidualNet(spec, input_side)
    else:
        net = ConvStackNet(spec, input_side)
    return TrainedModel(spec, net, list(class_order), input_side)
