"""Pixel-fidelity metrics for source/edited video pairs.

PSNR assumes values in [0, 1] and caps at 99 dB when the error is zero.
The masked variant restricts the error to the complement of the edit mask
(mask binarized at 0.3), which is exactly the region a masked edit is
required to leave untouched. Frame consistency is the mean cosine
similarity of adjacent frames, a cheap stand-in for embedding-based
temporal metrics.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientFramesError, MaskRegionError, ShapeMismatchError
from .masks import GuidanceMask

PSNR_CAP = 99.0
MASK_BINARIZE_THRESHOLD = 0.3

__all__ = ["VideoPair", "psnr", "masked_psnr", "frame_consistency", "PSNR_CAP"]


@dataclass(frozen=True)
class VideoPair:
    source: np.ndarray
    edited: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.source, dtype=np.float64)
        b = np.asarray(self.edited, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeMismatchError(f"video shapes differ: {a.shape} vs {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise FloatingPointError("video pair contains non-finite values")
        object.__setattr__(self, "source", a)
        object.__setattr__(self, "edited", b)


def _psnr_from_mse(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def psnr(pair: VideoPair) -> float:
    """10 log10(1/mse) over all pixels, capped at 99 dB."""
    diff = pair.edited - pair.source
    return _psnr_from_mse(float(np.mean(diff * diff)))


def masked_psnr(pair: VideoPair, edit_mask) -> float:
    """PSNR restricted to the complement of the (binarized) edit mask."""
    if isinstance(edit_mask, GuidanceMask):
        mask_values = edit_mask.as_float()
    else:
        mask_values = np.asarray(edit_mask, dtype=np.float64)
    keep = mask_values < MASK_BINARIZE_THRESHOLD  # complement of the edited region
    video_shape = pair.source.shape
    if keep.shape != video_shape[: keep.ndim]:
        raise ShapeMismatchError(
            f"mask shape {keep.shape} does not match video {video_shape}"
        )
    if not keep.any():
        raise MaskRegionError("edit mask covers every pixel; complement is empty")
    if keep.ndim < len(video_shape):  # broadcast over trailing channel axes
        keep = keep.reshape(keep.shape + (1,) * (len(video_shape) - keep.ndim))
        keep = np.broadcast_to(keep, video_shape)
    diff = (pair.edited - pair.source)[keep]
    return _psnr_from_mse(float(np.mean(diff * diff)))


def frame_consistency(video: np.ndarray) -> float:
    """Mean cosine similarity of adjacent frames; in [-1, 1]."""
    video = np.asarray(video, dtype=np.float64)
    frames = video.reshape(video.shape[0], -1)
    if frames.shape[0] < 2:
        raise InsufficientFramesError(f"need >= 2 frames, got {frames.shape[0]}")
    sims = []
    for f in range(frames.shape[0] - 1):
        a, b = frames[f], frames[f + 1]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            warnings.warn(f"zero-norm frame at index {f}, pair skipped", stacklevel=2)
            continue
        sims.append(float(np.dot(a, b) / (na * nb)))
    if not sims:
        raise InsufficientFramesError("all adjacent pairs had a zero-norm frame")
    return float(np.mean(sims))
