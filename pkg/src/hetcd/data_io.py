"""Raster I/O, normalisation, resampling and synthetic two-sensor scenes.

Tensor container (``.raw``, also used for checkpoints), little-endian::

    magic   8 bytes  b"HETCDRAW"
    version uint32   1
    count   uint32   number of tensors
    per tensor:
        name_len uint16, name utf-8
        ndim     uint8,  dims uint32 * ndim
        payload  float32 * prod(dims), C order

Difference-image dump (``di.raw``): one ASCII line ``"<H> <W>\\n"`` followed
by H*W float32 little-endian values.
"""
from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ShapeError, ValidationError
from .seeding import substream

log = logging.getLogger(__name__)

MAGIC = b"HETCDRAW"
VERSION = 1
GEO_TAGS = (33550, 33922, 34264, 34735, 34736, 34737)


@dataclass
class RasterImage:
    data: np.ndarray                       # (H, W, C) float32
    provenance: str = ""
    nodata: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.data.shape


# ---------------------------------------------------------------------------
# tensor container


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f4").copy(order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise OSError(f"{path}: not a tensor container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise OSError(f"{path}: unsupported container version {version}")
    pos = 16
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        out[name] = arr.astype(np.float32)
    if pos != len(blob):
        raise OSError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def save_di_raw(path, di) -> None:
    di = np.asarray(di, dtype="<f4")
    if di.ndim != 2:
        raise ShapeError("difference image must be 2-D")
    with open(path, "wb") as fh:
        fh.write(f"{di.shape[0]} {di.shape[1]}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(di).tobytes())


def load_di_raw(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline()
        h, w = (int(v) for v in header.split())
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != h * w:
        raise OSError(f"{path}: expected {h * w} values, found {data.size}")
    return data.reshape(h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# rasters


def _is_container(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(8) == MAGIC


def _fill_nodata(data: np.ndarray, nodata: float | None) -> np.ndarray:
    bad = ~np.isfinite(data)
    if nodata is not None:
        bad |= data == nodata
    if not bad.any():
        return data
    data = data.copy()
    for ch in range(data.shape[2]):
        band, mask = data[..., ch], bad[..., ch]
        valid = band[~mask]
        band[mask] = valid.mean() if valid.size else 0.0
    log.warning("filled %d nodata/non-finite values with channel means", int(bad.sum()))
    return data


def load_raster(path, nodata: float | None = None) -> RasterImage:
    """Read PNG, TIFF or the tensor container into float32 (H, W, C).

    Integer images are scaled by the maximum of their dtype (8-bit PNG -> /255).
    """
    path = Path(path)
    if not path.exists():
        raise OSError(f"no such file: {path}")
    suffix = path.suffix.lower()
    meta: dict = {}
    if suffix == ".raw" or _is_container(path):
        tensors = load_tensors(path)
        data = tensors.get("image", next(iter(tensors.values())))
    elif suffix == ".png":
        data = np.asarray(Image.open(path))
    elif suffix in (".tif", ".tiff"):
        import tifffile
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            data = page.asarray()
            meta = {code: page.tags[code].value for code in GEO_TAGS if code in page.tags}
            if data.ndim == 3 and data.shape[0] < data.shape[-1] and page.planarconfig == 2:
                data = np.moveaxis(data, 0, -1)
    else:
        raise OSError(f"unsupported raster format: {path}")
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / np.iinfo(data.dtype).max
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[..., None]
    data = _fill_nodata(data, nodata)
    return RasterImage(data, provenance=str(path), nodata=nodata, meta=meta)


def save_raster(path, image) -> None:
    """Write (H, W, C) data; ``.raw`` is lossless, ``.png`` is 8-bit, ``.tif`` float32."""
    path = Path(path)
    meta = image.meta if isinstance(image, RasterImage) else {}
    data = image.data if isinstance(image, RasterImage) else np.asarray(image)
    if data.ndim == 2:
        data = data[..., None]
    suffix = path.suffix.lower()
    if suffix == ".raw":
        save_tensors(path, {"image": data})
    elif suffix == ".png":
        save_png(path, data)
    elif suffix in (".tif", ".tiff"):
        import tifffile
        extratags = [(code, _tag_dtype(value), _tag_count(value), value, False) for code, value in meta.items()]
        data = data.astype(np.float32)
        if data.shape[2] == 1:
            tifffile.imwrite(path, data[..., 0], photometric="minisblack", extratags=extratags)
        else:
            tifffile.imwrite(path, data, photometric="minisblack", planarconfig="contig",
                             extratags=extratags)
    else:
        raise OSError(f"unsupported raster format: {path}")


def _tag_count(value) -> int | None:
    if isinstance(value, (tuple, list)):
        return len(value)
    return None


def _tag_dtype(value) -> int:
    if isinstance(value, str):
        return 2
    if isinstance(value, (tuple, list)) and value and isinstance(value[0], float):
        return 12
    return 3


def save_png(path, data, scale: bool = False) -> None:
    """Save [0,1] data (or min-max scaled data with ``scale``) as an 8-bit PNG."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if scale:
        lo, hi = data.min(), data.max()
        data = (data - lo) / (hi - lo) if hi > lo else np.zeros_like(data)
    if data.ndim == 3 and data.shape[2] not in (3, 4):
        data = data[..., :3] if data.shape[2] > 3 else data[..., 0]
    u8 = np.round(np.clip(data, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(u8).save(path)


def save_binary_png(path, mask) -> None:
    """0/1 mask -> single-channel 0/255 PNG."""
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def load_binary_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim == 3:
        arr = arr[..., 0]
    return (arr > 127).astype(np.uint8)


def load_pair(path_x, path_y, resample_to: tuple[int, int] | None = None,
              resample_mismatch: bool = False) -> tuple[RasterImage, RasterImage]:
    """Load two co-registered rasters.

    ``resample_to`` resamples both to (H, W); ``resample_mismatch`` resamples
    the second image onto the first image's grid when their sizes differ.
    """
    x, y = load_raster(path_x), load_raster(path_y)
    if resample_to is not None:
        x, y = resample(x, *resample_to), resample(y, *resample_to)
    elif x.shape[:2] != y.shape[:2]:
        if not resample_mismatch:
            raise ValidationError(f"image sizes differ: {x.shape[:2]} vs {y.shape[:2]}")
        y = resample(y, *x.shape[:2])
    return x, y


def normalize(image) -> RasterImage:
    """Per-channel min-max scaling to [0, 1]; constant channels become 0."""
    src = image if isinstance(image, RasterImage) else RasterImage(np.asarray(image, dtype=np.float32))
    data = src.data.astype(np.float64)
    if data.ndim == 2:
        data = data[..., None]
    out = np.zeros_like(data)
    for ch in range(data.shape[2]):
        band = data[..., ch]
        lo, hi = band.min(), band.max()
        if hi > lo:
            out[..., ch] = (band - lo) / (hi - lo)
        else:
            warnings.warn(f"channel {ch} is constant; mapped to 0", RuntimeWarning, stacklevel=2)
    return RasterImage(out.astype(np.float32), src.provenance, src.nodata, dict(src.meta))


def _bilinear_axis(n_in: int, n_out: int):
    # half-pixel centres: output pixel i samples input coordinate (i + .5) * n_in / n_out - .5
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def resample(image, target_h: int, target_w: int) -> RasterImage:
    """Bilinear resampling, each channel independently."""
    if target_h < 1 or target_w < 1:
        raise ValidationError("resample targets must be >= 1")
    src = image if isinstance(image, RasterImage) else RasterImage(np.asarray(image, dtype=np.float32))
    data = src.data.astype(np.float64)
    if data.ndim == 2:
        data = data[..., None]
    h, w = data.shape[:2]
    r0, r1, fr = _bilinear_axis(h, target_h)
    c0, c1, fc = _bilinear_axis(w, target_w)
    rows = data[r0] * (1 - fr)[:, None, None] + data[r1] * fr[:, None, None]
    out = rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]
    return RasterImage(out.astype(np.float32), src.provenance, src.nodata, dict(src.meta))


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SensorProfile:
    """How a latent scene is rendered by one sensor.

    kind "optical": random affine mix of the latent channels, gamma curve,
    additive Gaussian noise.  kind "sar": absolute value of a centred linear
    mix times unit-mean gamma speckle with ``looks`` looks.
    """
    kind: str = "optical"
    channels: int = 3
    gamma: float = 0.8
    noise_std: float = 0.02
    looks: int = 4


DEFAULT_PROFILES = (SensorProfile("optical", 3), SensorProfile("sar", 1))


@dataclass
class SyntheticScene:
    image_x: RasterImage
    image_y: RasterImage
    gt: np.ndarray
    seed: int
    change_fraction: float
    latent: np.ndarray | None = None
    latent_changed: np.ndarray | None = None
    blobs: list = field(default_factory=list)


N_LATENT = 3


def _latent_field(rng: np.random.Generator, h: int, w: int, n: int = N_LATENT) -> np.ndarray:
    """Smooth random field with land-cover-like patches, values in [0, 1]."""
    out = np.empty((h, w, n))
    for ch in range(n):
        coarse = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=6.0, mode="reflect")
        fine = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=1.5, mode="reflect")
        f = coarse / coarse.std() + 0.3 * fine / fine.std()
        # soft quantisation gives region boundaries like land-cover parcels
        f = np.tanh(2.0 * f)
        out[..., ch] = (f - f.min()) / (f.max() - f.min())
    return out


def _disk_blob(h: int, w: int, cy: float, cx: float, ry: float, rx: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u = (dx * ca + dy * sa) / rx
    v = (-dx * sa + dy * ca) / ry
    return (u ** 2 + v ** 2) <= 1.0


def _draw_blobs(rng: np.random.Generator, h: int, w: int, fraction: float):
    target = fraction * h * w
    gt = np.zeros((h, w), dtype=bool)
    blobs = []
    typical = np.sqrt(0.025 * h * w / np.pi)
    for _ in range(500):
        remaining = target - gt.sum()
        if remaining <= 0.05 * target:
            break
        r = min(typical * rng.uniform(0.6, 1.2), np.sqrt(max(remaining, 12.0) / np.pi))
        r = max(r, 2.0)
        aspect = rng.uniform(0.6, 1.0)
        blob = _disk_blob(h, w, rng.uniform(r, h - r), rng.uniform(r, w - r),
                          r * aspect, r / aspect, rng.uniform(0, np.pi))
        if not blob.any():
            continue
        # keep the largest 4-connected piece so each blob is contiguous
        labels, n = ndimage.label(blob)
        if n > 1:
            sizes = ndimage.sum(blob, labels, range(1, n + 1))
            blob = labels == (1 + int(np.argmax(sizes)))
        new_total = (gt | blob).sum()
        if new_total > 1.15 * target:
            continue
        gt |= blob
        blobs.append(blob)
    return gt, blobs


def _render(latent: np.ndarray, profile: SensorProfile, params: dict, rng: np.random.Generator) -> np.ndarray:
    if profile.kind == "optical":
        mixed = latent @ params["mix"] + params["offset"]
        mixed = np.clip(mixed, 0.0, None) ** profile.gamma
        out = mixed + profile.noise_std * rng.standard_normal(mixed.shape)
    elif profile.kind == "sar":
        lin = (latent - 0.5) @ params["mix"]
        amp = np.abs(lin) + 0.05
        # unit-mean gamma speckle
        speckle = rng.gamma(profile.looks, 1.0 / profile.looks, size=amp.shape)
        out = amp * speckle
    else:
        raise ValidationError(f"unknown sensor kind {profile.kind!r}")
    return out


def _sensor_params(rng: np.random.Generator, profile: SensorProfile) -> dict:
    if profile.kind == "optical":
        mix = rng.uniform(-1.0, 1.0, size=(N_LATENT, profile.channels))
        mix += np.eye(N_LATENT, profile.channels)
        return {"mix": mix, "offset": rng.uniform(0.1, 0.3, size=profile.channels)}
    return {"mix": rng.uniform(-1.0, 1.0, size=(N_LATENT, profile.channels)) + 0.5}


def generate_synthetic_pair(seed: int, height: int = 256, width: int = 256,
                            change_fraction: float = 0.1,
                            sensor_profiles=DEFAULT_PROFILES) -> SyntheticScene:
    """Two renderings of one latent scene by different sensors, with planted changes.

    X renders the original latent; Y renders the latent with the ground-truth
    blobs redrawn from an independent field.  Both images are min-max
    normalised per channel.
    """
    if height < 64 or width < 64:
        raise ValidationError("synthetic scenes need height, width >= 64")
    if not 0 < change_fraction < 0.5:
        raise ValidationError(f"change_fraction must lie in (0, 0.5), got {change_fraction}")
    prof_x, prof_y = sensor_profiles
    latent = _latent_field(substream(seed, "latent"), height, width)
    replacement = _latent_field(substream(seed, "latent-changed"), height, width)
    gt, blobs = _draw_blobs(substream(seed, "blobs"), height, width, change_fraction)
    share = gt.mean()
    if not (0.8 * change_fraction <= share <= 1.2 * change_fraction):
        raise ValidationError(f"could not plant change share {change_fraction} (got {share:.4f})")
    changed = np.where(gt[..., None], replacement, latent)
    rng_sensor = substream(seed, "sensors")
    px, py = _sensor_params(rng_sensor, prof_x), _sensor_params(rng_sensor, prof_y)
    raw_x = _render(latent, prof_x, px, substream(seed, "noise-x"))
    raw_y = _render(changed, prof_y, py, substream(seed, "noise-y"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        img_x = normalize(RasterImage(raw_x.astype(np.float32), provenance=f"synthetic:{seed}:x"))
        img_y = normalize(RasterImage(raw_y.astype(np.float32), provenance=f"synthetic:{seed}:y"))
    return SyntheticScene(img_x, img_y, gt.astype(np.uint8), seed, change_fraction,
                          latent=latent, latent_changed=changed, blobs=blobs)


def save_scene(directory, scene: SyntheticScene) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / "x.raw", directory / "y.raw", directory / "gt.png", directory / "meta.json"]
    save_raster(paths[0], scene.image_x)
    save_raster(paths[1], scene.image_y)
    save_binary_png(paths[2], scene.gt)
    meta = {
        "seed": scene.seed,
        "height": int(scene.gt.shape[0]),
        "width": int(scene.gt.shape[1]),
        "change_fraction": scene.change_fraction,
        "gt_share": float(scene.gt.mean()),
        "channels_x": int(scene.image_x.shape[2]),
        "channels_y": int(scene.image_y.shape[2]),
    }
    paths[3].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


def load_scene(directory) -> SyntheticScene:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    return SyntheticScene(load_raster(directory / "x.raw"), load_raster(directory / "y.raw"),
                          load_binary_png(directory / "gt.png"), meta["seed"], meta["change_fraction"])
