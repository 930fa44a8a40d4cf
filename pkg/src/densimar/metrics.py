"""PSNR and SSIM with optional pixel exclusion (e.g. metal)."""

from __future__ import annotations

import json
import math

import numpy as np
from scipy.ndimage import uniform_filter

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _values(img):
    return np.asarray(getattr(img, "values", img), dtype=np.float64)


def _prepare(a, b, exclude):
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if exclude is None:
        keep = np.ones(a.shape, dtype=bool)
    else:
        keep = _values(exclude) == 0
        if keep.shape != a.shape:
            raise ValueError("exclusion mask shape differs from the images")
    return a, b, keep


def data_range(a, b, keep, symmetric=False) -> float:
    ref = np.concatenate([b[keep], a[keep]]) if symmetric else b[keep]
    if ref.size == 0:
        raise ValueError("no pixels left after exclusion")
    return float(ref.max() - ref.min())


def psnr(a, b, exclude=None, symmetric: bool = False, value_range: float | None = None) -> float:
    """PSNR of ``a`` against reference ``b`` in dB.

    The data range is ``max(b) - min(b)`` over included pixels (with
    ``symmetric`` the union of both images) unless given explicitly.
    Identical images give ``inf``.
    """
    a, b, keep = _prepare(a, b, exclude)
    rng = data_range(a, b, keep, symmetric) if value_range is None else float(value_range)
    if not rng > 0:
        raise ValueError("data range must be positive")
    mse = float(np.mean((a[keep] - b[keep]) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(rng * rng / mse)


def ssim_map(a, b, rng: float, win: int = SSIM_WINDOW):
    """Local SSIM with a uniform window and sample covariances."""
    c1 = (SSIM_K1 * rng) ** 2
    c2 = (SSIM_K2 * rng) ** 2
    npix = win * win
    cov_norm = npix / (npix - 1)
    ux = uniform_filter(a, win)
    uy = uniform_filter(b, win)
    vx = cov_norm * (uniform_filter(a * a, win) - ux * ux)
    vy = cov_norm * (uniform_filter(b * b, win) - uy * uy)
    vxy = cov_norm * (uniform_filter(a * b, win) - ux * uy)
    num = (2 * ux * uy + c1) * (2 * vxy + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    return num / den


def ssim(a, b, exclude=None, symmetric: bool = False, win: int = SSIM_WINDOW) -> float:
    """Mean SSIM over window centres whose window lies inside the image and
    contains no excluded pixel."""
    a, b, keep = _prepare(a, b, exclude)
    if min(a.shape) < win:
        raise ValueError(f"images must be at least {win}x{win}")
    rng = data_range(a, b, keep, symmetric)
    if rng == 0:
        rng = 1.0
    smap = ssim_map(a, b, rng, win)
    pad = win // 2
    valid = np.zeros(a.shape, dtype=bool)
    valid[pad:a.shape[0] - pad, pad:a.shape[1] - pad] = True
    if not keep.all():
        excluded_nearby = uniform_filter((~keep).astype(np.float64), win, mode="constant") > 1e-12
        valid &= ~excluded_nearby
    if not valid.any():
        raise ValueError("no SSIM windows free of excluded pixels")
    return float(smap[valid].mean())


def report(a, b, exclude=None) -> dict:
    """Metrics with and without the exclusion mask, JSON-serialisable."""
    out = {}
    modes = [("all_pixels", None)]
    if exclude is not None:
        modes.insert(0, ("metal_excluded", exclude))
    for name, ex in modes:
        aa, bb, keep = _prepare(a, b, ex)
        p = psnr(a, b, ex)
        out[name] = {
            "psnr_db": p if math.isfinite(p) else "inf",
            "ssim": ssim(a, b, ex),
            "excluded_pixels": int((~keep).sum()),
            "data_range": data_range(aa, bb, keep),
        }
    return out


def dumps(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=True)
