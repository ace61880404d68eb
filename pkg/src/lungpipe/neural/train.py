"""Training loop (Adam, early stopping, per-class augmentation) and inference."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from ..errors import ArchError, DataError, DivergenceError
from .augment import AugmentationConfig, replicate_dataset
from .models import TrainedModel


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 150
    early_stop_patience: int = 10
    loss: str = "categorical-cross-entropy"  # or binary-cross-entropy
    seed: int = 0
    augmentation: AugmentationConfig | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.early_stop_patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if self.loss not in ("categorical-cross-entropy", "binary-cross-entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")


def _cube_array(cube) -> np.ndarray:
    return cube.values if hasattr(cube, "values") else np.asarray(cube, dtype=np.float32)


def _to_tensor(cubes) -> torch.Tensor:
    stack = np.stack([_cube_array(c) for c in cubes]).astype(np.float32)
    return torch.from_numpy(stack).unsqueeze(1)  # (N, 1, D, H, W)


def _encode_labels(labels, class_order, output_kind):
    if output_kind == "softmax":
        index = {label: i for i, label in enumerate(class_order)}
        try:
            return torch.tensor([index[l] for l in labels], dtype=torch.long)
        except KeyError as exc:
            raise DataError(f"label {exc} not in class order {class_order}") from exc
    return torch.tensor([float(bool(l)) for l in labels], dtype=torch.float32)


def train(
    model: TrainedModel,
    train_cubes,
    train_labels,
    val_cubes,
    val_labels,
    cfg: TrainConfig,
) -> TrainedModel:
    """Train in place with Adam and early stopping; returns the model.

    Stops when the validation loss has not improved for ``early_stop_patience``
    epochs (or at ``max_epochs``) and restores the best-epoch weights.
    Training cubes are replicated per class via ``cfg.augmentation`` before
    the first epoch, so the run is deterministic given ``cfg.seed``.
    """
    if len(set(train_labels)) < 2:
        raise DataError("training set must contain at least 2 classes")
    if cfg.augmentation is not None:
        train_cubes, train_labels = replicate_dataset(
            [c if hasattr(c, "values") else _FakeCube(c) for c in train_cubes],
            list(train_labels),
            cfg.augmentation,
            seed=cfg.seed,
        )
    torch.manual_seed(cfg.seed)
    x_train = _to_tensor(train_cubes)
    y_train = _encode_labels(train_labels, model.class_order, model.spec.output_kind)
    x_val = _to_tensor(val_cubes)
    y_val = _encode_labels(val_labels, model.class_order, model.spec.output_kind)

    if cfg.loss == "categorical-cross-entropy":
        if model.spec.output_kind != "softmax":
            raise ArchError("categorical cross-entropy needs a softmax head")
        criterion = nn.CrossEntropyLoss()
    else:
        if model.spec.output_kind != "sigmoid":
            raise ArchError("binary cross-entropy needs a sigmoid head")
        criterion = nn.BCEWithLogitsLoss()

    optimizer = torch.optim.Adam(model.net.parameters(), lr=cfg.learning_rate)
    generator = torch.Generator().manual_seed(cfg.seed)
    best_val = float("inf")
    best_state = copy.deepcopy(model.net.state_dict())
    stale = 0
    model.training_log = []

    for epoch in range(cfg.max_epochs):
        model.net.train()
        order = torch.randperm(len(x_train), generator=generator)
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            optimizer.zero_grad()
            logits = model.net(x_train[batch])
            target = y_train[batch]
            if model.spec.output_kind == "sigmoid":
                logits = logits.squeeze(1)
            loss = criterion(logits, target)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}", epoch=epoch
                )
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch)
        epoch_loss /= len(order)

        val_loss, val_acc = _evaluate(model, x_val, y_val, criterion)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        model.training_log.append(
            {"epoch": epoch, "train_loss": epoch_loss, "val_loss": val_loss, "val_acc": val_acc}
        )
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = copy.deepcopy(model.net.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    model.net.load_state_dict(best_state)
    return model


class _FakeCube:
    """Wrap a bare array so the augmentation path can treat it as a cube."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float32)
        self.center_world = (0.0, 0.0, 0.0)
        self.scan_id = ""


def _evaluate(model: TrainedModel, x, y, criterion):
    model.net.eval()
    with torch.no_grad():
        losses, correct, total = 0.0, 0, 0
        for start in range(0, len(x), 256):
            logits = model.net(x[start : start + 256])
            target = y[start : start + 256]
            if model.spec.output_kind == "sigmoid":
                logits = logits.squeeze(1)
                predicted = (torch.sigmoid(logits) >= 0.5).float()
            else:
                predicted = logits.argmax(dim=1)
            losses += float(criterion(logits, target)) * len(target)
            correct += int((predicted == target).sum())
            total += len(target)
    return losses / total, correct / total


def predict_proba(model: TrainedModel, cubes) -> np.ndarray:
    """Class probabilities: (N, n_outputs) for softmax heads, (N,) for sigmoid.

    A single cube may be passed; the leading axis is then dropped.
    """
    single = hasattr(cubes, "values") or (
        isinstance(cubes, np.ndarray) and cubes.ndim == 3
    )
    batch = [cubes] if single else list(cubes)
    x = _to_tensor(batch)
    if x.shape[-1] != model.input_side:
        raise ArchError(
            f"cube side {x.shape[-1]} does not match model input side {model.input_side}"
        )
    model.net.eval()
    with torch.no_grad():
        logits = model.net(x)
        if model.spec.output_kind == "softmax":
            probs = torch.softmax(logits, dim=1).numpy()
        else:
            probs = torch.sigmoid(logits.squeeze(1)).numpy()
    return probs[0] if single else probs


def penultimate_features(model: TrainedModel, cubes) -> np.ndarray:
    """Penultimate-layer activations, shape (N, dense_units)."""
    x = _to_tensor(list(cubes))
    model.net.eval()
    with torch.no_grad():
        return model.net.penultimate(x).numpy()
