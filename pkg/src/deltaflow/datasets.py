"""Synthetic moving-shape video clips and a template-matching classifier.

Clips are (F, H, W, 1) grids with binary intensities: one shape (or two
disjoint shapes) translating at a constant integer velocity on a torus, so
each frame is exactly the previous frame rolled by the velocity. The
classifier correlates frames against all toroidal placements of the clean
shape templates, which is enough to separate squares from discs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DatasetError
from .rng import NoiseStream

KINDS = ("moving-square", "moving-disc", "two-object")
LABELS = {"moving-square": 0, "moving-disc": 1, "two-object": 2}

SQUARE_LABEL = 0
DISC_LABEL = 1

__all__ = ["Clip", "make_toy_dataset", "TemplateMatcher", "KINDS", "LABELS",
           "SQUARE_LABEL", "DISC_LABEL"]


@dataclass(frozen=True)
class Clip:
    video: np.ndarray  # (F, H, W, 1) in [0, 1]
    label: int
    start: tuple[int, int]
    velocity: tuple[int, int]
    shape_mask: np.ndarray  # (F, H, W) bool ground truth support


def _square_offsets(size: int) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def _disc_offsets(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    rr, cc = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    keep = rr**2 + cc**2 <= radius**2
    return np.stack([rr[keep], cc[keep]], axis=1)


def _stamp(frame: np.ndarray, pos: tuple[int, int], offsets: np.ndarray) -> None:
    h, w = frame.shape
    rows = (pos[0] + offsets[:, 0]) % h
    cols = (pos[1] + offsets[:, 1]) % w
    frame[rows, cols] = 1.0


def _single_shape_clip(frames: int, h: int, w: int, start, vel, offsets,
                       label: int) -> Clip:
    video = np.zeros((frames, h, w, 1))
    mask = np.zeros((frames, h, w), dtype=bool)
    for f in range(frames):
        pos = ((start[0] + f * vel[0]) % h, (start[1] + f * vel[1]) % w)
        _stamp(video[f, :, :, 0], pos, offsets)
        mask[f] = video[f, :, :, 0] > 0
    return Clip(video, label, tuple(start), tuple(vel), mask)


def _nonzero_velocity(stream: NoiseStream, index: int) -> tuple[int, int]:
    for attempt in range(64):
        vr, vc = stream.integers_at(index * 64 + attempt, -2, 3, 2)
        if vr != 0 or vc != 0:
            return int(vr), int(vc)
    return 1, 0  # unreachable with a sane generator


def make_toy_dataset(kind: str, count: int, stream: NoiseStream, frames: int = 8,
                     height: int = 16, width: int = 16, square_size: int = 4,
                     disc_radius: float = 2.5) -> list[Clip]:
    if kind not in KINDS:
        raise DatasetError(f"unknown dataset kind {kind!r}, expected one of {KINDS}")
    if count < 1:
        raise DatasetError(f"count must be >= 1, got {count}")
    square = _square_offsets(square_size)
    disc = _disc_offsets(disc_radius)
    clips: list[Clip] = []
    for i in range(count):
        base = 1_000_000 + i * 8
        start = tuple(int(v) for v in stream.integers_at(base, 0, height, 2))
        vel = _nonzero_velocity(stream, base + 1)
        if kind == "moving-square":
            clips.append(_single_shape_clip(frames, height, width, start, vel, square,
                                            LABELS[kind]))
        elif kind == "moving-disc":
            clips.append(_single_shape_clip(frames, height, width, start, vel, disc,
                                            LABELS[kind]))
        else:
            clips.append(_two_object_clip(frames, height, width, stream, base,
                                          square, disc))
    return clips


def _two_object_clip(frames: int, h: int, w: int, stream: NoiseStream, base: int,
                     square: np.ndarray, disc: np.ndarray) -> Clip:
    # shapes live in disjoint horizontal bands and move horizontally only
    sq_row = int(stream.integers_at(base + 2, 1, max(2, h // 2 - 5), 1)[0])
    dc_row = int(stream.integers_at(base + 3, h // 2 + 3, h - 3, 1)[0])
    sq_col = int(stream.integers_at(base + 4, 0, w, 1)[0])
    dc_col = int(stream.integers_at(base + 5, 0, w, 1)[0])
    sq_v = int(stream.integers_at(base + 6, 1, 3, 1)[0])
    dc_v = -int(stream.integers_at(base + 7, 1, 3, 1)[0])
    video = np.zeros((frames, h, w, 1))
    mask = np.zeros((frames, h, w), dtype=bool)
    for f in range(frames):
        sq_frame = np.zeros((h, w))
        dc_frame = np.zeros((h, w))
        _stamp(sq_frame, (sq_row, (sq_col + f * sq_v) % w), square)
        _stamp(dc_frame, (dc_row, (dc_col + f * dc_v) % w), disc)
        if np.any((sq_frame > 0) & (dc_frame > 0)):
            raise DatasetError("two-object construction produced overlapping shapes")
        video[f, :, :, 0] = sq_frame + dc_frame
        mask[f] = video[f, :, :, 0] > 0
    return Clip(video, LABELS["two-object"], (sq_row, sq_col), (0, sq_v), mask)


class TemplateMatcher:
    """Classify a clip as square (0) or disc (1) by best toroidal overlap."""

    def __init__(self, height: int = 16, width: int = 16, square_size: int = 4,
                 disc_radius: float = 2.5):
        self.height = height
        self.width = width
        self._banks = [
            self._bank(_square_offsets(square_size)),
            self._bank(_disc_offsets(disc_radius)),
        ]

    def _bank(self, offsets: np.ndarray) -> np.ndarray:
        h, w = self.height, self.width
        bank = np.zeros((h * w, h * w))
        for r in range(h):
            for c in range(w):
                frame = np.zeros((h, w))
                _stamp(frame, (r, c), offsets)
                bank[r * w + c] = frame.ravel()
        norms = np.linalg.norm(bank, axis=1, keepdims=True)
        return bank / norms

    def scores(self, video: np.ndarray) -> tuple[float, float]:
        """Mean over frames of the best-position cosine, per template."""
        video = np.asarray(video, dtype=np.float64)
        frames = video.reshape(video.shape[0], -1)
        out = []
        for bank in self._banks:
            per_frame = []
            for f in range(frames.shape[0]):
                norm = np.linalg.norm(frames[f])
                if norm == 0.0:
                    per_frame.append(0.0)
                    continue
                per_frame.append(float(np.max(bank @ frames[f]) / norm))
            out.append(float(np.mean(per_frame)))
        return out[0], out[1]

    def classify(self, video: np.ndarray) -> int:
        sq, dc = self.scores(video)
        return SQUARE_LABEL if sq >= dc else DISC_LABEL
