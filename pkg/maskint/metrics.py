"""Frame and clip quality metrics on the [0, 1] scale.

``temporal_consistency`` is a pixel proxy: the mean cosine similarity of
consecutive frames' pooled luminance descriptors.
"""

from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from skimage.measure import block_reduce
from skimage.util import view_as_windows

from maskint.errors import ContractError, GeometryError
from maskint.specs import DESCRIPTOR_GRID, LUMA_WEIGHTS, METRICS_COLUMNS, PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_WINDOW


def _check_pair(a: np.ndarray, b: np.ndarray):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise GeometryError(f"Shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE), capped at PSNR_CAP dB (identical inputs)."""
    a, b = _check_pair(a, b)
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _ssim_plane(x: np.ndarray, y: np.ndarray, window: int, c1: float, c2: float) -> float:
    wx = view_as_windows(x, (window, window))
    wy = view_as_windows(y, (window, window))
    mu_x = wx.mean(axis=(-2, -1))
    mu_y = wy.mean(axis=(-2, -1))
    dx = wx - mu_x[..., np.newaxis, np.newaxis]
    dy = wy - mu_y[..., np.newaxis, np.newaxis]
    var_x = (dx * dx).mean(axis=(-2, -1))
    var_y = (dy * dy).mean(axis=(-2, -1))
    cov = (dx * dy).mean(axis=(-2, -1))
    local = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return float(local.mean())


def ssim(
    a: np.ndarray, b: np.ndarray, window: int = SSIM_WINDOW, c1: float = SSIM_C1, c2: float = SSIM_C2
) -> float:
    """Mean local SSIM over all valid ``window x window`` windows, averaged over channels."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., np.newaxis], b[..., np.newaxis]
    if a.ndim != 3:
        raise GeometryError(f"ssim takes a single (H, W[, C]) frame, got {a.shape}")
    if min(a.shape[:2]) < window:
        raise GeometryError(f"Frame {a.shape[:2]} smaller than the {window}x{window} window")
    return float(np.mean([_ssim_plane(a[..., i], b[..., i], window, c1, c2) for i in range(a.shape[-1])]))


def luma_descriptor(frame: np.ndarray, grid: int = DESCRIPTOR_GRID) -> np.ndarray:
    luma = np.asarray(frame, dtype=np.float64) @ LUMA_WEIGHTS
    height, width = luma.shape
    if height % grid or width % grid:
        raise GeometryError(f"Frame {height}x{width} not divisible by the {grid}x{grid} descriptor grid")
    return block_reduce(luma, (height // grid, width // grid), np.mean).reshape(-1)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    norm_u, norm_v = np.linalg.norm(u), np.linalg.norm(v)
    if norm_u == 0.0 and norm_v == 0.0:
        return 1.0
    if norm_u == 0.0 or norm_v == 0.0:
        return 0.0
    return float(u @ v / (norm_u * norm_v))


def temporal_consistency(clip: np.ndarray, grid: int = DESCRIPTOR_GRID) -> float:
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 4 or clip.shape[0] < 2:
        raise ContractError(f"temporal_consistency needs a clip of >= 2 frames, got {clip.shape}")
    descriptors = [luma_descriptor(frame, grid) for frame in clip]
    return float(np.mean([_cosine(u, v) for u, v in zip(descriptors[:-1], descriptors[1:])]))


def linear_blend(anchor_frames: Dict[int, np.ndarray], n_frames: int) -> np.ndarray:
    """Piecewise-linear cross-fade between anchors; frames outside hold the nearest anchor."""
    if not anchor_frames:
        raise ContractError("linear_blend needs at least one anchor")
    indices = sorted(anchor_frames)
    stack = np.stack([np.asarray(anchor_frames[i], dtype=np.float64) for i in indices])
    out = np.empty((n_frames,) + stack.shape[1:])
    for n in range(n_frames):
        right = int(np.searchsorted(indices, n))
        if right == 0 or right == len(indices):
            out[n] = stack[min(right, len(indices) - 1)]
        elif indices[right] == n:
            out[n] = stack[right]
        else:
            left = right - 1
            weight = (n - indices[left]) / (indices[right] - indices[left])
            out[n] = (1.0 - weight) * stack[left] + weight * stack[right]
    return out


def intermediate_frames(n_frames: int, anchors: Iterable[int]) -> np.ndarray:
    anchors = set(anchors)
    return np.array([n for n in range(n_frames) if n not in anchors], dtype=np.int64)


def evaluate_clip(
    generated: np.ndarray, reference: np.ndarray, anchors: Optional[Sequence[int]] = None, name: str = ""
) -> dict:
    """PSNR/SSIM averaged over the non-anchor frames, plus the proxy on the generated clip."""
    generated, reference = _check_pair(generated, reference)
    frames = intermediate_frames(len(generated), anchors or [])
    if frames.size == 0:
        frames = np.arange(len(generated))
    return {
        "clip": name,
        "psnr": float(np.mean([psnr(generated[n], reference[n]) for n in frames])),
        "ssim": float(np.mean([ssim(generated[n], reference[n]) for n in frames])),
        "temporal_consistency": temporal_consistency(generated),
    }


def metrics_report(rows: Sequence[dict]) -> pd.DataFrame:
    """One row per clip; METRICS_COLUMNS first, then any extra columns in order."""
    report = pd.DataFrame(list(rows))
    if report.empty:
        return pd.DataFrame(columns=METRICS_COLUMNS)
    extra = [c for c in report.columns if c not in METRICS_COLUMNS]
    return report[METRICS_COLUMNS + extra]
