"""Training losses: reconstruction, code recovery, cycle consistency, mask-guided alignment.

All functions accept torch tensors (differentiable) or numpy arrays.  Images
are NCHW or HWC, it does not matter as long as paired arguments share a
shape; the change mask is (h, w), (n, h, w) or (n, 1, h, w) and is broadcast
over the code channels of NCHW content codes.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import LossToggles
from .errors import DomainError, ShapeError, ValidationError

COMPONENTS = ("recon", "trans", "cyc", "align")


def _t(a) -> torch.Tensor:
    return a if isinstance(a, torch.Tensor) else torch.as_tensor(a)


def mean_all(a) -> torch.Tensor:
    a = _t(a)
    if a.numel() == 0:
        raise DomainError("mean of an empty array")
    return a.sum() / a.numel()


def _mse(a, b) -> torch.Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return mean_all((a - b) ** 2)


def reconstruction_loss(x, y, x_rec, y_rec) -> torch.Tensor:
    return _mse(x, x_rec) + _mse(y, y_rec)


def translation_loss(c_x, c_y, s_x, s_y, c_x_t, c_y_t, s_x_t, s_y_t) -> torch.Tensor:
    """Code-recovery loss; ``*_t`` are the codes re-encoded from translated images."""
    return _mse(c_x, c_x_t) + _mse(c_y, c_y_t) + _mse(s_x, s_x_t) + _mse(s_y, s_y_t)


def cycle_loss(x, y, x_cyc, y_cyc) -> torch.Tensor:
    return _mse(x, x_cyc) + _mse(y, y_cyc)


def _broadcast_mask(p_c, like: torch.Tensor) -> torch.Tensor:
    p = _t(p_c).to(like.dtype)
    if not torch.all((p == 0) | (p == 1)):
        raise ValidationError("change mask must be binary (0/1)")
    if p.shape == like.shape:
        return p
    if like.dim() == 4:
        n, _, h, w = like.shape
        if p.dim() == 2:
            p = p.reshape(1, 1, *p.shape)
        elif p.dim() == 3:
            p = p.unsqueeze(1)
        if p.dim() != 4 or p.shape[1] != 1 or p.shape[2:] != (h, w) or p.shape[0] not in (1, n):
            raise ShapeError(f"mask shape {tuple(_t(p_c).shape)} incompatible with codes {tuple(like.shape)}")
        return p
    if like.dim() == 3 and p.dim() == 2 and p.shape == like.shape[:2]:
        # channel-last (h, w, c) codes
        return p.unsqueeze(-1)
    raise ShapeError(f"mask shape {tuple(p.shape)} incompatible with codes {tuple(like.shape)}")


def alignment_loss(c_x, c_y_t, c_x_t, c_y, p_c, m: float = 4.0) -> torch.Tensor:
    """Pull content codes together on unchanged pixels, push apart on changed ones.

    Pairs compared: (c_x, c_y_t) and (c_x_t, c_y).  Means run over every
    element, masked-out ones included.
    """
    c_x, c_y_t, c_x_t, c_y = map(_t, (c_x, c_y_t, c_x_t, c_y))
    if not (c_x.shape == c_y_t.shape == c_x_t.shape == c_y.shape):
        raise ShapeError("content codes must share one shape")
    p_c = _broadcast_mask(p_c, c_x)
    p_u = 1 - p_c
    d1 = (c_x - c_y_t) ** 2
    d2 = (c_x_t - c_y) ** 2
    # masks are broadcast; scale by the full element count of the codes
    n = c_x.numel()
    return (
        (d1 * p_u).expand_as(d1).sum() / n
        + (d2 * p_u).expand_as(d2).sum() / n
        + ((1 - d1 / m) * p_c).expand_as(d1).sum() / n
        + ((1 - d2 / m) * p_c).expand_as(d2).sum() / n
    )


@dataclass
class LossBreakdown:
    recon: torch.Tensor | float = 0.0
    trans: torch.Tensor | float = 0.0
    cyc: torch.Tensor | float = 0.0
    align: torch.Tensor | float = 0.0

    @property
    def total(self):
        return total_loss(self)

    def as_floats(self) -> dict[str, float]:
        out = {}
        for k in COMPONENTS:
            v = getattr(self, k)
            out[k] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        out["total"] = out["recon"] + out["trans"] + out["cyc"] + out["align"]
        return out


def total_loss(parts: LossBreakdown):
    """Unweighted sum of the four components."""
    return parts.recon + parts.trans + parts.cyc + parts.align


def compute_losses(out: dict, x, y, p_c, toggles: LossToggles | None = None,
                   m: float = 4.0) -> LossBreakdown:
    """Evaluate every enabled component on the outputs of ``DualDomainModel.forward``.

    Disabled components are reported as zero and contribute nothing to the
    gradient.
    """
    toggles = toggles or LossToggles()
    zero = x.new_zeros(())
    parts = LossBreakdown(zero, zero, zero, zero)
    if toggles.recon:
        parts.recon = reconstruction_loss(x, y, out["x_rec"], out["y_rec"])
    if toggles.trans:
        parts.trans = translation_loss(out["c_x"], out["c_y"], out["s_x"], out["s_y"],
                                       out["c_x_t"], out["c_y_t"], out["s_x_t"], out["s_y_t"])
    if toggles.cyc:
        parts.cyc = cycle_loss(x, y, out["x_cyc"], out["y_cyc"])
    if toggles.align:
        parts.align = alignment_loss(out["c_x"], out["c_y_t"], out["c_x_t"], out["c_y"], p_c, m)
    return parts
