"""Self-describing model checkpoints.

Format (version 1): a numpy ``.npz`` archive holding one array per named
weight tensor under ``weight/<state-dict-key>`` plus a ``meta`` JSON string
with the format version, architecture spec, class order, input side and
training log.
"""

from __future__ import annotations

import json

import numpy as np
import torch

from ..errors import FormatError
from .models import ArchitectureSpec, TrainedModel, build_model

FORMAT_VERSION = 1


def save_model(model: TrainedModel, path: str) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "spec": model.spec.to_dict(),
        "class_order": model.class_order,
        "input_side": model.input_side,
        "training_log": model.training_log,
    }
    arrays = {
        f"weight/{name}": tensor.detach().cpu().numpy()
        for name, tensor in model.net.state_dict().items()
    }
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_model(path: str) -> TrainedModel:
    archive = np.load(path, allow_pickle=False)
    if "meta" not in archive:
        raise FormatError(f"{path}: not a model checkpoint (missing meta)")
    meta = json.loads(str(archive["meta"]))
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {meta.get('format_version')}"
        )
    spec = ArchitectureSpec.from_dict(meta["spec"])
    model = build_model(spec, meta["class_order"], input_side=meta["input_side"])
    state = {
        key[len("weight/") :]: torch.from_numpy(archive[key])
        for key in archive.files
        if key.startswith("weight/")
    }
    model.net.load_state_dict(state)
    model.training_log = meta["training_log"]
    return model
