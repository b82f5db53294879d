"""Content/style encoders and AdaIN decoders for two image domains.

Networks work on NCHW tensors.  The module-level functions (``content_encode``,
``translate`` ...) take channel-last arrays of shape (h, w, c) or batches
(n, h, w, c) and return the same layout, which is what the rest of the
package and the tests use.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ArchConfig
from .errors import ShapeError

DOMAINS = ("X", "Y")

# floor under the variance so sqrt has a finite derivative on constant channels
_VAR_FLOOR = 1e-20


def adain(z: torch.Tensor, gamma: torch.Tensor, eta: torch.Tensor, epsilon: float) -> torch.Tensor:
    """gamma * (z - mean) / (std + epsilon) + eta, statistics per sample and channel.

    ``z`` is (n, c, h, w); ``gamma`` and ``eta`` are (n, c) or (c,).  The
    standard deviation is the population one (divide by h*w).
    """
    if z.dim() != 4:
        raise ShapeError(f"adain expects an (n, c, h, w) tensor, got shape {tuple(z.shape)}")
    c = z.shape[1]
    if gamma.shape[-1] != c or eta.shape[-1] != c:
        raise ShapeError(f"gamma/eta length {gamma.shape[-1]}/{eta.shape[-1]} != channel count {c}")
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    gamma = gamma.reshape(-1, c, 1, 1)
    eta = eta.reshape(-1, c, 1, 1)
    mu = z.mean(dim=(2, 3), keepdim=True)
    var = ((z - mu) ** 2).mean(dim=(2, 3), keepdim=True)
    std = torch.sqrt(var.clamp_min(_VAR_FLOOR))
    return gamma * (z - mu) / (std + epsilon) + eta


class ContentEncoder(nn.Module):
    def __init__(self, in_channels: int, widths, kernel: int = 3):
        super().__init__()
        layers = []
        prev = in_channels
        for i, w in enumerate(widths):
            layers.append(nn.Conv2d(prev, w, kernel, stride=1, padding=kernel // 2))
            layers.append(nn.Tanh() if i == len(widths) - 1 else nn.ReLU())
            prev = w
        self.net = nn.Sequential(*layers)
        self.in_channels = in_channels

    def forward(self, x):
        return self.net(x)


class StyleEncoder(nn.Module):
    def __init__(self, in_channels: int, widths, kernel: int = 3):
        super().__init__()
        layers = []
        prev = in_channels
        for w in widths:
            layers += [nn.Conv2d(prev, w, kernel, stride=2, padding=kernel // 2), nn.ReLU()]
            prev = w
        self.net = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.in_channels = in_channels

    def forward(self, x):
        return self.pool(self.net(x)).flatten(1)


class ResidualBlock(nn.Module):
    """conv -> AdaIN -> ReLU -> conv -> ReLU, plus identity skip."""

    def __init__(self, width: int, kernel: int = 3):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv2d(width, width, kernel, padding=kernel // 2)

    def forward(self, x, gamma, eta, epsilon):
        h = F.relu(adain(self.conv1(x), gamma, eta, epsilon))
        h = F.relu(self.conv2(h))
        return x + h


class Decoder(nn.Module):
    def __init__(self, out_channels: int, width: int, style_dim: int, hidden: int,
                 kernel: int = 3, epsilon: float = 1e-5):
        super().__init__()
        self.width = width
        self.epsilon = epsilon
        self.out_channels = out_channels
        self.mlp = nn.Sequential(
            nn.Linear(style_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 4 * width),
        )
        self.block1 = ResidualBlock(width, kernel)
        self.block2 = ResidualBlock(width, kernel)
        self.out = nn.Conv2d(width, out_channels, kernel, padding=kernel // 2)

    def adain_params(self, style):
        """Split the MLP output into [(gamma1, eta1), (gamma2, eta2)]."""
        g1, e1, g2, e2 = self.mlp(style).split(self.width, dim=1)
        return [(g1, e1), (g2, e2)]

    def forward(self, content, style):
        (g1, e1), (g2, e2) = self.adain_params(style)
        h = self.block1(content, g1, e1, self.epsilon)
        h = self.block2(h, g2, e2, self.epsilon)
        return torch.sigmoid(self.out(h))


class DualDomainModel(nn.Module):
    """All six networks: per domain a content encoder, a style encoder and a decoder.

    The two domain branches share no parameters.
    """

    def __init__(self, config: ArchConfig):
        super().__init__()
        self.config = config
        k = config.kernel
        self.content_x = ContentEncoder(config.channels_x, config.content_widths, k)
        self.content_y = ContentEncoder(config.channels_y, config.content_widths, k)
        self.style_x = StyleEncoder(config.channels_x, config.style_widths, k)
        self.style_y = StyleEncoder(config.channels_y, config.style_widths, k)
        self.decoder_x = Decoder(config.channels_x, config.ffb_width, config.style_dim,
                                 config.mlp_hidden, k, config.epsilon)
        self.decoder_y = Decoder(config.channels_y, config.ffb_width, config.style_dim,
                                 config.mlp_hidden, k, config.epsilon)

    def content_encoder(self, domain: str) -> ContentEncoder:
        return self.content_x if _check_domain(domain) == "X" else self.content_y

    def style_encoder(self, domain: str) -> StyleEncoder:
        return self.style_x if _check_domain(domain) == "X" else self.style_y

    def decoder(self, domain: str) -> Decoder:
        return self.decoder_x if _check_domain(domain) == "X" else self.decoder_y

    def forward(self, x, y):
        """Both training workflows on a batch; returns every intermediate by name."""
        c_x, c_y = self.content_x(x), self.content_y(y)
        s_x, s_y = self.style_x(x), self.style_y(y)
        x_rec, y_rec = self.decoder_x(c_x, s_x), self.decoder_y(c_y, s_y)
        x_hat, y_hat = self.decoder_x(c_y, s_x), self.decoder_y(c_x, s_y)
        # codes recovered from the translated images
        c_x_t, s_y_t = self.content_y(y_hat), self.style_y(y_hat)
        c_y_t, s_x_t = self.content_x(x_hat), self.style_x(x_hat)
        x_cyc = self.decoder_x(c_x_t, s_x_t)
        y_cyc = self.decoder_y(c_y_t, s_y_t)
        return dict(
            c_x=c_x, c_y=c_y, s_x=s_x, s_y=s_y,
            x_rec=x_rec, y_rec=y_rec, x_hat=x_hat, y_hat=y_hat,
            c_x_t=c_x_t, c_y_t=c_y_t, s_x_t=s_x_t, s_y_t=s_y_t,
            x_cyc=x_cyc, y_cyc=y_cyc,
        )


def _check_domain(domain: str) -> str:
    if domain not in DOMAINS:
        raise ValueError(f"domain must be 'X' or 'Y', got {domain!r}")
    return domain


def init_parameters(seed: int, config: ArchConfig | None = None,
                    dtype: torch.dtype = torch.float32) -> DualDomainModel:
    """Build a model with seeded fan-in-scaled uniform weights and zero biases.

    Every weight is drawn from U(-b, b) with b = sqrt(1 / fan_in).  Draws come
    from a numpy generator in parameter-registration order, so the result does
    not depend on torch's global RNG state.
    """
    config = config or ArchConfig()
    config.validate()
    model = DualDomainModel(config).to(dtype)
    rng = np.random.default_rng(np.random.SeedSequence((abs(int(seed)), int(seed < 0))))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
                continue
            fan_in = int(np.prod(p.shape[1:]))
            bound = math.sqrt(1.0 / fan_in)
            values = rng.uniform(-bound, bound, size=tuple(p.shape))
            p.copy_(torch.from_numpy(values).to(dtype))
    return model


# ---------------------------------------------------------------------------
# channel-last functional API


def to_tensor(arr, dtype=None) -> torch.Tensor:
    """(h, w, c) or (n, h, w, c) array -> (n, c, h, w) tensor."""
    t = torch.as_tensor(np.asarray(arr) if not isinstance(arr, torch.Tensor) else arr)
    if t.dim() == 3:
        t = t.unsqueeze(0)
    if t.dim() != 4:
        raise ShapeError(f"expected (h, w, c) or (n, h, w, c), got shape {tuple(t.shape)}")
    t = t.permute(0, 3, 1, 2).contiguous()
    return t.to(dtype) if dtype is not None else t


def to_array(t: torch.Tensor, squeeze: bool = True) -> np.ndarray:
    """(n, c, h, w) tensor -> (n, h, w, c) array, batch axis dropped when n == 1."""
    arr = t.detach().permute(0, 2, 3, 1).cpu().numpy()
    return arr[0] if squeeze and arr.shape[0] == 1 else arr


def _param_dtype(model: DualDomainModel) -> torch.dtype:
    return next(model.parameters()).dtype


def _prepare(model: DualDomainModel, patch, domain: str, min_size: int = 1) -> torch.Tensor:
    t = to_tensor(patch, _param_dtype(model))
    want = model.config.channels(domain)
    if t.shape[1] != want:
        raise ShapeError(f"domain {domain} expects {want} channels, got {t.shape[1]}")
    if min(t.shape[2:]) < min_size:
        raise ShapeError(f"patch spatial size {tuple(t.shape[2:])} below minimum {min_size}")
    return t


def content_encode(model: DualDomainModel, patch, domain: str = "X") -> np.ndarray:
    t = _prepare(model, patch, domain, min_size=3)
    with torch.no_grad():
        out = model.content_encoder(domain)(t)
    return to_array(out, squeeze=np.ndim(patch) == 3)


def style_encode(model: DualDomainModel, patch, domain: str = "X") -> np.ndarray:
    t = _prepare(model, patch, domain)
    with torch.no_grad():
        out = model.style_encoder(domain)(t)
    out = out.cpu().numpy()
    return out[0] if np.ndim(patch) == 3 else out


def decode(model: DualDomainModel, content, style, domain: str = "X") -> np.ndarray:
    dtype = _param_dtype(model)
    c = to_tensor(content, dtype)
    s = torch.as_tensor(np.asarray(style), dtype=dtype)
    if s.dim() == 1:
        s = s.unsqueeze(0)
    cfg = model.config
    if c.shape[1] != cfg.content_channels:
        raise ShapeError(f"content code has {c.shape[1]} channels, expected {cfg.content_channels}")
    if s.shape[-1] != cfg.style_dim:
        raise ShapeError(f"style code has length {s.shape[-1]}, expected {cfg.style_dim}")
    if s.shape[0] != c.shape[0]:
        raise ShapeError("content and style batch sizes differ")
    with torch.no_grad():
        out = model.decoder(domain)(c, s)
    return to_array(out, squeeze=np.ndim(content) == 3)


def _check_pair(x, y):
    if np.shape(x)[-3:-1] != np.shape(y)[-3:-1]:
        raise ShapeError(f"spatial size mismatch: {np.shape(x)[-3:-1]} vs {np.shape(y)[-3:-1]}")


def translate(model: DualDomainModel, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Return (x_hat, y_hat): Y content in X style, and X content in Y style."""
    _check_pair(x, y)
    c_x, c_y = content_encode(model, x, "X"), content_encode(model, y, "Y")
    s_x, s_y = style_encode(model, x, "X"), style_encode(model, y, "Y")
    return decode(model, c_y, s_x, "X"), decode(model, c_x, s_y, "Y")


def reconstruct(model: DualDomainModel, x, y) -> tuple[np.ndarray, np.ndarray]:
    _check_pair(x, y)
    x_rec = decode(model, content_encode(model, x, "X"), style_encode(model, x, "X"), "X")
    y_rec = decode(model, content_encode(model, y, "Y"), style_encode(model, y, "Y"), "Y")
    return x_rec, y_rec


def cycle(model: DualDomainModel, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Translate to the other domain, re-encode, decode back to the source domain."""
    x_hat, y_hat = translate(model, x, y)
    c_x_t, s_y_t = content_encode(model, y_hat, "Y"), style_encode(model, y_hat, "Y")
    c_y_t, s_x_t = content_encode(model, x_hat, "X"), style_encode(model, x_hat, "X")
    return decode(model, c_x_t, s_x_t, "X"), decode(model, c_y_t, s_y_t, "Y")
