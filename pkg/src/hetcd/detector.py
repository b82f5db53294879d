"""Difference image and change map from whole-image content codes."""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
import torch
from scipy import ndimage

from .config import FilterConfig
from .errors import ConfigError, ShapeError
from .model import DualDomainModel, to_array, to_tensor

N_BINS = 256


def _pad_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    h, w = img.shape[:2]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="symmetric")


def _halo(model: DualDomainModel) -> int:
    """Receptive-field half width of the content -> decode -> re-encode chain."""
    cfg = model.config
    n_convs = 2 * len(cfg.content_widths) + 5  # two content encoders + four FFB convs + output conv
    return (cfg.kernel // 2) * n_convs


def _features_tensor(model, x, y, s_x, s_y):
    c_x, c_y = model.content_x(x), model.content_y(y)
    x_hat = model.decoder_x(c_y, s_x)
    y_hat = model.decoder_y(c_x, s_y)
    c_x_t = model.content_y(y_hat)
    c_y_t = model.content_x(x_hat)
    return torch.cat([c_x, c_x_t], dim=1), torch.cat([c_y_t, c_y], dim=1)


def _tile_origins(dim: int, size: int, stride: int) -> list[int]:
    if dim <= size:
        return [0]
    origins = list(range(0, dim - size + 1, stride))
    if origins[-1] != dim - size:
        origins.append(dim - size)
    return origins


def content_features(model: DualDomainModel, image_x, image_y,
                     tile: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated content codes (H, W, 2*C) for both images.

    f_x = concat(C_X, C~_X) and f_y = concat(C~_Y, C_Y), where the C~ codes are
    re-encoded from the translated whole images.  Style codes are computed on
    the image reflect-padded to a multiple of 16.  With ``tile`` set, the
    content path runs on overlapping windows whose margins (one receptive
    field wide) are discarded before the overlapping cores are averaged.
    """
    image_x, image_y = np.asarray(image_x), np.asarray(image_y)
    if image_x.shape[:2] != image_y.shape[:2]:
        raise ShapeError(f"image sizes differ: {image_x.shape[:2]} vs {image_y.shape[:2]}")
    cfg = model.config
    if image_x.shape[2] != cfg.channels_x or image_y.shape[2] != cfg.channels_y:
        raise ShapeError(
            f"channel counts {image_x.shape[2]}/{image_y.shape[2]} do not match "
            f"model {cfg.channels_x}/{cfg.channels_y}")
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            s_x = model.style_x(to_tensor(_pad_to_multiple(image_x, 16), dtype))
            s_y = model.style_y(to_tensor(_pad_to_multiple(image_y, 16), dtype))
            x, y = to_tensor(image_x, dtype), to_tensor(image_y, dtype)
            h, w = image_x.shape[:2]
            if tile is None or (h <= tile and w <= tile):
                f_x, f_y = _features_tensor(model, x, y, s_x, s_y)
                return to_array(f_x), to_array(f_y)
            halo = _halo(model)
            if tile <= 2 * halo:
                raise ConfigError(f"tile size {tile} must exceed twice the receptive margin {halo}")
            n_ch = 2 * cfg.content_channels
            acc_x = np.zeros((h, w, n_ch))
            acc_y = np.zeros((h, w, n_ch))
            count = np.zeros((h, w, 1))
            for r in _tile_origins(h, tile, tile - 2 * halo):
                for c in _tile_origins(w, tile, tile - 2 * halo):
                    r1, c1 = min(r + tile, h), min(c + tile, w)
                    fx, fy = _features_tensor(model, x[..., r:r1, c:c1], y[..., r:r1, c:c1], s_x, s_y)
                    # keep only pixels at least `halo` away from interior window edges
                    top = r if r == 0 else r + halo
                    left = c if c == 0 else c + halo
                    bottom = r1 if r1 == h else r1 - halo
                    right = c1 if c1 == w else c1 - halo
                    sl = (slice(top - r, bottom - r), slice(left - c, right - c))
                    acc_x[top:bottom, left:right] += to_array(fx)[sl]
                    acc_y[top:bottom, left:right] += to_array(fy)[sl]
                    count[top:bottom, left:right] += 1
            return (acc_x / count).astype(np.float32), (acc_y / count).astype(np.float32)
    finally:
        model.train(was_training)


def difference_image(f_x, f_y) -> np.ndarray:
    """Per-pixel Euclidean distance between two (H, W, C) feature maps."""
    f_x = np.asarray(f_x, dtype=np.float64)
    f_y = np.asarray(f_y, dtype=np.float64)
    if f_x.shape != f_y.shape:
        raise ShapeError(f"feature shapes differ: {f_x.shape} vs {f_y.shape}")
    return np.sqrt(np.sum((f_x - f_y) ** 2, axis=-1))


def gaussian_kernel(sigma: float, kernel_size: int) -> np.ndarray:
    """Normalised 2-D Gaussian kernel (sums to 1)."""
    if kernel_size <= 0 or kernel_size % 2 == 0:
        raise ConfigError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    if not sigma > 0:
        raise ConfigError("sigma must be > 0")
    r = kernel_size // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(t ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_filter(di, sigma: float = 1.5, kernel_size: int = 7) -> np.ndarray:
    """2-D Gaussian smoothing with reflected borders."""
    kernel = gaussian_kernel(sigma, kernel_size)
    # separable: the 2-D kernel is the outer product of its normalised marginal
    g = kernel.sum(axis=1)
    out = ndimage.correlate1d(np.asarray(di, dtype=np.float64), g, axis=0, mode="reflect")
    return ndimage.correlate1d(out, g, axis=1, mode="reflect")


def histogram_levels(di) -> tuple[np.ndarray, float, float]:
    """Map values to 256 histogram bins after min-max normalisation."""
    di = np.asarray(di, dtype=np.float64)
    lo, hi = float(di.min()), float(di.max())
    if hi <= lo:
        return np.zeros(di.shape, dtype=np.int64), lo, hi
    levels = np.floor((di - lo) / (hi - lo) * N_BINS).astype(np.int64)
    return np.minimum(levels, N_BINS - 1), lo, hi


def otsu_threshold(di) -> float:
    """Otsu threshold over a 256-bin histogram, returned in the units of ``di``.

    The split maximising the between-class variance is found with exact
    integer arithmetic (first maximum wins).  The returned threshold is the
    upper edge of the last bin of the lower class.  A constant input returns
    its value, which classifies every pixel as unchanged.
    """
    di = np.asarray(di, dtype=np.float64)
    if di.size == 0:
        raise ShapeError("empty difference image")
    levels, lo, hi = histogram_levels(di)
    if hi <= lo:
        warnings.warn("constant difference image; every pixel is classified as unchanged",
                      RuntimeWarning, stacklevel=2)
        return lo
    hist = np.bincount(levels.ravel(), minlength=N_BINS)
    cum_n = np.cumsum(hist).tolist()
    cum_s = np.cumsum(hist * np.arange(N_BINS)).tolist()
    n_total, s_total = cum_n[-1], cum_s[-1]
    best_k, best_num, best_den = 0, 0, 1
    for k in range(N_BINS - 1):
        n0 = cum_n[k]
        n1 = n_total - n0
        if n0 == 0 or n1 == 0:
            continue
        # between-class variance * N^2 = (N*s0 - n0*S)^2 / (n0*n1)
        num = (n_total * cum_s[k] - n0 * s_total) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return lo + (best_k + 1) / N_BINS * (hi - lo)


def binarize(di, threshold: float) -> np.ndarray:
    """1 where di > threshold, else 0."""
    return (np.asarray(di) > threshold).astype(np.uint8)


class Detection(NamedTuple):
    di: np.ndarray          # filtered when filtering is enabled
    change_map: np.ndarray
    threshold: float
    raw_di: np.ndarray


def detect_changes(model: DualDomainModel, image_x, image_y,
                   filter_config: FilterConfig | None = None, tile: int | None = None) -> Detection:
    filter_config = filter_config or FilterConfig()
    raw = difference_image(*content_features(model, image_x, image_y, tile=tile))
    di = gaussian_filter(raw, filter_config.sigma, filter_config.kernel_size) if filter_config.enabled else raw
    t = otsu_threshold(di)
    return Detection(di, binarize(di, t), t, raw)
