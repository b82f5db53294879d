"""Model checkpoints in the tensor container.

A checkpoint holds every entry of the model's state dict plus a one-element
``epsilon`` tensor.  The architecture is read back from the tensor shapes,
so no separate metadata file is needed.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .config import ArchConfig
from .data_io import load_tensors, save_tensors
from .errors import ValidationError
from .model import DualDomainModel


def save_checkpoint(path, model: DualDomainModel) -> None:
    tensors = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    tensors["epsilon"] = np.array([model.config.epsilon], dtype=np.float32)
    save_tensors(path, tensors)


def _conv_weights(tensors: dict, prefix: str) -> list[np.ndarray]:
    keys = sorted((k for k in tensors if k.startswith(prefix) and k.endswith(".weight")),
                  key=lambda k: int(k[len(prefix):].split(".")[0]))
    return [tensors[k] for k in keys]


def infer_arch(tensors: dict[str, np.ndarray]) -> ArchConfig:
    """Rebuild the architecture description from checkpoint tensor shapes."""
    try:
        content_x = _conv_weights(tensors, "content_x.net.")
        content_y = _conv_weights(tensors, "content_y.net.")
        style_x = _conv_weights(tensors, "style_x.net.")
        hidden = tensors["decoder_x.mlp.0.weight"].shape[0]
        eps = float(tensors["epsilon"].reshape(-1)[0])
    except (KeyError, IndexError) as exc:
        raise ValidationError(f"checkpoint is missing tensor {exc}") from None
    if not content_x or not content_y or not style_x:
        raise ValidationError("checkpoint lacks encoder weights")
    # epsilon went through float32; seven significant digits recover any value
    # that was written with at most seven (1e-5, 1e-8, ...)
    eps = float(f"{eps:.7g}")
    return ArchConfig(
        channels_x=int(content_x[0].shape[1]),
        channels_y=int(content_y[0].shape[1]),
        content_widths=tuple(int(w.shape[0]) for w in content_x),
        style_widths=tuple(int(w.shape[0]) for w in style_x),
        mlp_hidden=int(hidden),
        kernel_size=int(content_x[0].shape[-1]),
        epsilon=eps,
    )


def load_checkpoint(path, dtype: torch.dtype = torch.float32) -> DualDomainModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    tensors = load_tensors(path)
    arch = infer_arch(tensors)
    model = DualDomainModel(arch).to(dtype)
    state = {k: torch.from_numpy(np.array(v)).to(dtype) for k, v in tensors.items() if k != "epsilon"}
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise ValidationError(f"checkpoint does not match the inferred architecture: {exc}") from None
    model.eval()
    return model
