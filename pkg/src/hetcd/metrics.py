"""Change-map, difference-image and translation-quality metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, NumericalError, ValidationError

# ---------------------------------------------------------------------------
# change maps


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _as_binary(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise ValidationError(f"{name} must be binary (0/1)")
    return a.astype(bool)


def confusion_counts(cm, gt) -> ConfusionCounts:
    """Counts with changed (GT == 1) as the positive class."""
    if np.shape(cm) != np.shape(gt):
        raise ValidationError(f"shape mismatch: {np.shape(cm)} vs {np.shape(gt)}")
    cm, gt = _as_binary(cm, "change map"), _as_binary(gt, "ground truth")
    tp = int(np.sum(cm & gt))
    fp = int(np.sum(cm & ~gt))
    fn = int(np.sum(~cm & gt))
    tn = int(cm.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn)


@dataclass(frozen=True)
class ClassificationMetrics:
    fp: int
    fn: int
    oe: int
    oa: float
    f1: float
    kc: float
    f1_undefined: bool = False
    kc_undefined: bool = False


def classification_metrics(c: ConfusionCounts) -> ClassificationMetrics:
    """OE, OA, F1 and Cohen's kappa.

    F1 with no positives anywhere (TP + FP + FN == 0) is reported as 1 and
    flagged; kappa with chance agreement 1 is reported as 0 and flagged.
    """
    n = c.n
    if n <= 0:
        raise DomainError("no pixels to score")
    oe = c.fp + c.fn
    oa = (c.tp + c.tn) / n
    denom_f1 = 2 * c.tp + c.fp + c.fn
    f1_undefined = denom_f1 == 0
    f1 = 1.0 if f1_undefined else 2 * c.tp / denom_f1
    p_e = ((c.tp + c.fp) * (c.tp + c.fn) + (c.fn + c.tn) * (c.fp + c.tn)) / (n * n)
    kc_undefined = p_e >= 1.0
    kc = 0.0 if kc_undefined else (oa - p_e) / (1 - p_e)
    return ClassificationMetrics(c.fp, c.fn, oe, oa, f1, kc, f1_undefined, kc_undefined)


def overall_from_errors(fp: int, fn: int, n: int) -> tuple[int, float]:
    """(OE, OA) when only the error counts and pixel total are known."""
    if n <= 0 or fp < 0 or fn < 0 or fp + fn > n:
        raise ValidationError("need 0 <= fp + fn <= n and n > 0")
    oe = fp + fn
    return oe, 1 - oe / n


# ---------------------------------------------------------------------------
# difference images


@dataclass
class CurvePoints:
    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray

    def to_csv(self, path, x_name: str = "x", y_name: str = "y") -> None:
        with open(path, "w") as fh:
            fh.write(f"threshold,{x_name},{y_name}\n")
            for t, a, b in zip(self.thresholds, self.x, self.y):
                fh.write(f"{float(t)!r},{float(a)!r},{float(b)!r}\n")


def _cumulative_counts(di, gt):
    di = np.asarray(di, dtype=np.float64).ravel()
    gt = _as_binary(gt, "ground truth").ravel()
    if di.shape != gt.shape:
        raise ValidationError("difference image and ground truth differ in size")
    n_pos = int(gt.sum())
    n_neg = gt.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("ground truth must contain both classes")
    order = np.argsort(-di, kind="mergesort")
    scores, labels = di[order], gt[order]
    # last index of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tps = np.cumsum(labels)[last]
    fps = (last + 1) - tps
    return scores[last], tps, fps, n_pos, n_neg


def roc_pr_curves(di, gt):
    """ROC and PR curves over every distinct DI value, with trapezoid AUC and AP.

    A pixel is predicted changed at threshold t when DI >= t.  AP is the
    precision-weighted sum of recall increments.
    """
    thresholds, tps, fps, n_pos, n_neg = _cumulative_counts(di, gt)
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    roc = CurvePoints(fpr, tpr, np.r_[np.inf, thresholds])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    precision = tps / (tps + fps)
    recall = tps / n_pos
    pr = CurvePoints(recall, precision, thresholds)
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return roc, pr, auc, ap


# ---------------------------------------------------------------------------
# translation quality


def _features(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValidationError("feature set must be a non-empty (n, d) array")
    if not np.isfinite(f).all():
        raise ValidationError("feature set contains non-finite values")
    return f


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")


def _psd_sqrt(mat: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    evals, evecs = np.linalg.eigh((mat + mat.T) / 2)
    _check_eigs(evals, tol)
    evals = np.clip(evals, 0.0, None)
    return (evecs * np.sqrt(evals)) @ evecs.T, evals


def _check_eigs(evals: np.ndarray, tol: float) -> None:
    scale = max(1.0, float(np.max(np.abs(evals))) if evals.size else 1.0)
    if evals.size and evals.min() < -tol * scale:
        raise NumericalError(f"matrix is not positive semi-definite (eigenvalue {evals.min():.3e})")


def fid(real, translated, tol: float = 1e-8) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    Tr((S_r S_t)^1/2) is evaluated as Tr((S_r^1/2 S_t S_r^1/2)^1/2), whose
    argument is symmetric PSD; eigenvalues in [-tol * scale, 0) are clipped.
    """
    r, t = _features(real), _features(translated)
    _check_pair(r, t)
    if r.shape[0] < 2 or t.shape[0] < 2:
        raise ValidationError("covariance needs at least two feature vectors per set")
    mu_r, mu_t = r.mean(axis=0), t.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(r, rowvar=False, ddof=1))
    cov_t = np.atleast_2d(np.cov(t, rowvar=False, ddof=1))
    root_r, _ = _psd_sqrt(cov_r, tol)
    inner = root_r @ cov_t @ root_r
    evals = np.linalg.eigvalsh((inner + inner.T) / 2)
    _check_eigs(evals, tol)
    trace_sqrt = float(np.sum(np.sqrt(np.clip(evals, 0.0, None))))
    value = float(np.sum((mu_r - mu_t) ** 2) + np.trace(cov_r) + np.trace(cov_t) - 2 * trace_sqrt)
    # rounding can leave a tiny negative value for identical sets
    return max(value, 0.0)


def polynomial_kernel(a, b) -> np.ndarray:
    """k(r, t) = (r.t / d + 1) ** 3 for every pair of rows."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    d = a.shape[1]
    return (a @ b.T / d + 1.0) ** 3


def kid(real, translated, unbiased: bool = False) -> float:
    """Squared MMD with a cubic polynomial kernel.

    The default keeps the self-pairs (r, r) and (t, t) in the within-set
    expectations; ``unbiased=True`` drops them.
    """
    r, t = _features(real), _features(translated)
    _check_pair(r, t)
    k_rr, k_tt, k_rt = polynomial_kernel(r, r), polynomial_kernel(t, t), polynomial_kernel(r, t)
    if unbiased:
        m, n = r.shape[0], t.shape[0]
        if m < 2 or n < 2:
            raise ValidationError("unbiased KID needs at least two vectors per set")
        e_rr = (k_rr.sum() - np.trace(k_rr)) / (m * (m - 1))
        e_tt = (k_tt.sum() - np.trace(k_tt)) / (n * (n - 1))
    else:
        e_rr, e_tt = k_rr.mean(), k_tt.mean()
    return float(e_rr + e_tt - 2 * k_rt.mean())


# ---------------------------------------------------------------------------
# feature extraction


def tile_image(image, size: int = 64, stride: int = 64) -> list[np.ndarray]:
    """Non-padded crops on a regular grid (images smaller than ``size`` give one tile)."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    h, w = image.shape[:2]
    rows = range(0, max(h - size, 0) + 1, stride)
    cols = range(0, max(w - size, 0) + 1, stride)
    return [image[r:r + size, c:c + size] for r in rows for c in cols]


def stats_features(tile, grid: int = 2) -> np.ndarray:
    """Window statistics of one tile.

    The tile is split into ``grid`` x ``grid`` windows.  For each window and
    channel: mean, std, min, max of the values, and mean and std of the
    gradient magnitude.  Dimension = grid * grid * channels * 6.
    """
    tile = np.asarray(tile, dtype=np.float64)
    if tile.ndim == 2:
        tile = tile[..., None]
    h, w, n_ch = tile.shape
    if h < grid or w < grid:
        raise ValidationError(f"tile {h}x{w} is smaller than the {grid}x{grid} window grid")
    gy, gx = np.gradient(tile, axis=(0, 1)) if min(h, w) > 1 else (np.zeros_like(tile),) * 2
    mag = np.hypot(gy, gx)
    rows = np.array_split(np.arange(h), grid)
    cols = np.array_split(np.arange(w), grid)
    feats = []
    for rr in rows:
        for cc in cols:
            win = tile[rr[0]:rr[-1] + 1, cc[0]:cc[-1] + 1].reshape(-1, n_ch)
            gwin = mag[rr[0]:rr[-1] + 1, cc[0]:cc[-1] + 1].reshape(-1, n_ch)
            # std of the shifted window is exact (zero) on constant windows
            feats += [win.mean(0), (win - win[0]).std(0), win.min(0), win.max(0),
                      gwin.mean(0), (gwin - gwin[0]).std(0)]
    return np.concatenate(feats)


def stats_feature_dim(channels: int, grid: int = 2) -> int:
    return grid * grid * channels * 6


EXTRACTORS: dict[str, Callable[..., np.ndarray]] = {"stats": stats_features}


def register_extractor(name: str, fn: Callable[..., np.ndarray]) -> None:
    """Make a feature extractor (tile -> 1-D vector) available by name."""
    EXTRACTORS[name] = fn


def extract_features(images: Sequence, extractor: str | Callable = "stats", workers: int = 1,
                     **kwargs) -> np.ndarray:
    """One feature vector per image (tile); returns an (n, d) array."""
    if callable(extractor):
        fn = extractor
    else:
        if extractor not in EXTRACTORS:
            raise ConfigError(f"unknown feature extractor {extractor!r}; known: {sorted(EXTRACTORS)}")
        fn = EXTRACTORS[extractor]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            vecs = list(pool.map(lambda im: fn(im, **kwargs), images))
    else:
        vecs = [fn(im, **kwargs) for im in images]
    out = np.stack([np.asarray(v, dtype=np.float64).ravel() for v in vecs])
    if out.shape[1] < 2:
        raise ValidationError("feature vectors must have dimension >= 2")
    return out


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricsReport:
    counts: dict | None = None
    classification: dict | None = None
    auc: float | None = None
    ap: float | None = None
    threshold: float | None = None
    fid: dict | None = None
    kid: dict | None = None

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in asdict(self).items() if v is not None},
                          indent=2, sort_keys=True) + "\n"
