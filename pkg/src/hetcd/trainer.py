"""Alternating optimisation: Adam on the network with the change mask fixed,
then a whole-image refresh of the mask.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import torch

from . import detector
from .config import ArchConfig, TrainConfig
from .errors import ShapeError, TrainingError, ValidationError
from .losses import COMPONENTS, compute_losses
from .model import DualDomainModel, init_parameters
from .seeding import substream

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# patches


def patch_origins(dim: int, size: int, stride: int) -> list[int]:
    """0, stride, 2*stride, ... plus a final origin at dim - size if the grid falls short."""
    if dim < size:
        raise ValidationError(f"image dimension {dim} is smaller than the patch size {size}")
    origins = list(range(0, dim - size + 1, stride))
    if origins[-1] != dim - size:
        origins.append(dim - size)
    return origins


def extract_patches(image, mask, size: int, stride: int):
    """Crop (patch, mask_patch, (row, col)) triples on the stride grid."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.ndim == 2:
        image = image[..., None]
    if mask.shape != image.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    h, w = image.shape[:2]
    return [
        (image[r:r + size, c:c + size], mask[r:r + size, c:c + size], (r, c))
        for r in patch_origins(h, size, stride)
        for c in patch_origins(w, size, stride)
    ]


# ---------------------------------------------------------------------------
# augmentation


class Transform(NamedTuple):
    rotations: int  # quarter turns, counter-clockwise
    flip_h: bool
    flip_v: bool


IDENTITY = Transform(0, False, False)


def apply_transform(arr, t: Transform) -> np.ndarray:
    out = np.rot90(arr, t.rotations, axes=(0, 1))
    if t.flip_h:
        out = out[:, ::-1]
    if t.flip_v:
        out = out[::-1]
    return np.ascontiguousarray(out)


def invert_transform(arr, t: Transform) -> np.ndarray:
    out = arr
    if t.flip_v:
        out = out[::-1]
    if t.flip_h:
        out = out[:, ::-1]
    return np.ascontiguousarray(np.rot90(out, -t.rotations, axes=(0, 1)))


def draw_transform(rng: np.random.Generator) -> Transform:
    return Transform(int(rng.integers(4)), bool(rng.integers(2)), bool(rng.integers(2)))


def augment(px, py, m, rng: np.random.Generator | None = None, transform: Transform | None = None):
    """Apply one random rotation/flip identically to both patches and the mask."""
    if np.shape(px)[:2] != np.shape(py)[:2] or np.shape(px)[:2] != np.shape(m)[:2]:
        raise ShapeError("augment needs equal spatial sizes")
    t = transform if transform is not None else draw_transform(rng)
    return apply_transform(px, t), apply_transform(py, t), apply_transform(m, t)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.5, 0.9),
              eps: float = 1e-8, batch_id=None) -> AdamState:
    """One bias-corrected Adam update, applied in place to ``params``."""
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ShapeError("one gradient per parameter required")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient {i} has shape {tuple(g.shape)}, parameter {tuple(p.shape)}")
        if not torch.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {i} in batch {batch_id}")
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    b1, b2 = betas
    state.step += 1
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                continue
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom, value=-lr / bc1)
    return state


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    iteration: int
    epoch: int
    recon: float
    trans: float
    cyc: float
    align: float
    total: float


@dataclass
class TrainState:
    model: DualDomainModel
    mask: np.ndarray
    adam: AdamState = field(default_factory=AdamState)
    iteration: int = 0
    epoch: int = 0
    history: list[EpochRecord] = field(default_factory=list)


class FitResult(NamedTuple):
    model: DualDomainModel
    mask: np.ndarray
    history: list[EpochRecord]


def update_change_mask(model: DualDomainModel, image_x, image_y, tile: int | None = None) -> np.ndarray:
    """New binary mask from the unfiltered difference image of the whole pair."""
    di = detector.difference_image(*detector.content_features(model, image_x, image_y, tile=tile))
    return detector.binarize(di, detector.otsu_threshold(di))


def _batch_tensors(items, dtype):
    xs, ys, ms = zip(*items)
    x = torch.from_numpy(np.stack(xs)).permute(0, 3, 1, 2).contiguous().to(dtype)
    y = torch.from_numpy(np.stack(ys)).permute(0, 3, 1, 2).contiguous().to(dtype)
    m = torch.from_numpy(np.stack(ms)).unsqueeze(1).to(dtype)
    return x, y, m


def train_epoch(state: TrainState, patches_x, patches_y, config: TrainConfig,
                rng_shuffle: np.random.Generator, rng_aug: np.random.Generator) -> EpochRecord:
    """One pass over every patch pair with the current (fixed) mask."""
    model = state.model
    dtype = next(model.parameters()).dtype
    params = list(model.parameters())
    h, w = state.mask.shape
    order = rng_shuffle.permutation(len(patches_x))
    sums = dict.fromkeys((*COMPONENTS, "total"), 0.0)
    n_seen = 0
    model.train()
    for b, start in enumerate(range(0, len(order), config.batch_size)):
        items = []
        for idx in order[start:start + config.batch_size]:
            px, (r, c) = patches_x[idx]
            py, _ = patches_y[idx]
            pm = state.mask[r:r + px.shape[0], c:c + px.shape[1]]
            if config.augment:
                items.append(augment(px, py, pm, rng_aug))
            else:
                items.append((px, py, pm))
        x, y, m = _batch_tensors(items, dtype)
        out = model(x, y)
        parts = compute_losses(out, x, y, m, config.losses, config.align_margin)
        total = parts.total
        if not torch.isfinite(total):
            raise TrainingError(
                f"non-finite loss {float(total.detach())} at iteration {state.iteration}, "
                f"epoch {state.epoch}, batch {b}")
        for p in params:
            p.grad = None
        if total.requires_grad:
            total.backward()
        grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in params]
        adam_step(params, grads, state.adam, config.learning_rate, config.adam_betas,
                  config.adam_eps, batch_id=(state.iteration, state.epoch, b))
        k = x.shape[0]
        for name, value in parts.as_floats().items():
            sums[name] += value * k
        n_seen += k
    record = EpochRecord(state.iteration, state.epoch,
                         **{name: sums[name] / n_seen for name in sums})
    state.history.append(record)
    return record


def fit(image_x, image_y, config: TrainConfig | None = None, arch: ArchConfig | None = None,
        dtype: torch.dtype = torch.float32, tile: int | None = None,
        on_epoch: Callable[[EpochRecord], None] | None = None) -> FitResult:
    """Train on one co-registered pair and return (model, final mask, loss history).

    The mask starts as i.i.d. fair coin flips.  Each of ``config.iterations``
    rounds trains ``epochs_per_iteration`` epochs with the mask fixed and then
    recomputes the mask from the whole images.
    """
    config = config or TrainConfig()
    image_x = np.asarray(image_x, dtype=np.float32)
    image_y = np.asarray(image_y, dtype=np.float32)
    if image_x.ndim == 2:
        image_x = image_x[..., None]
    if image_y.ndim == 2:
        image_y = image_y[..., None]
    if image_x.shape[:2] != image_y.shape[:2]:
        raise ShapeError(f"images are not co-registered: {image_x.shape[:2]} vs {image_y.shape[:2]}")
    if arch is None:
        arch = ArchConfig(channels_x=image_x.shape[2], channels_y=image_y.shape[2])
    elif (arch.channels_x, arch.channels_y) != (image_x.shape[2], image_y.shape[2]):
        raise ShapeError(
            f"architecture expects {arch.channels_x}/{arch.channels_y} channels, "
            f"images have {image_x.shape[2]}/{image_y.shape[2]}")

    seed = config.seed
    model = init_parameters(seed, arch, dtype)
    h, w = image_x.shape[:2]
    mask = substream(seed, "mask").integers(0, 2, size=(h, w)).astype(np.uint8)
    state = TrainState(model, mask)

    size, stride = config.patch_size, config.stride
    origins = [(r, c) for r in patch_origins(h, size, stride) for c in patch_origins(w, size, stride)]
    patches_x = [(image_x[r:r + size, c:c + size], (r, c)) for r, c in origins]
    patches_y = [(image_y[r:r + size, c:c + size], (r, c)) for r, c in origins]
    rng_shuffle = substream(seed, "shuffle")
    rng_aug = substream(seed, "augment")

    for s in range(config.iterations):
        state.iteration = s
        for e in range(config.epochs_per_iteration):
            state.epoch = e
            record = train_epoch(state, patches_x, patches_y, config, rng_shuffle, rng_aug)
            log.info("iteration %d epoch %d total %.5f", s, e, record.total)
            if on_epoch is not None:
                on_epoch(record)
            if not math.isfinite(record.total):
                raise TrainingError(f"non-finite epoch loss at iteration {s}, epoch {e}")
        state.mask = update_change_mask(model, image_x, image_y, tile=tile)
        log.info("iteration %d: mask updated, changed share %.4f", s, state.mask.mean())
    model.eval()
    return FitResult(model, state.mask, state.history)
