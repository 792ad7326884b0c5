"""Pixel-level primitives for the trigger-blocker defence.

Images are plain ``numpy`` arrays of shape ``(height, width, channels)``
with dtype ``uint8`` and 1 or 3 channels.  Every function here is pure:
inputs are never modified in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .errors import BoundsError, ChannelMismatchError, ImageFormatError


@dataclass(frozen=True)
class Position:
    """Top-left corner of a rectangle, in pixel coordinates."""

    x: int
    y: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"position must be non-negative, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class BlockerSpec:
    """An m x n solid-colour patch used to occlude a candidate trigger region."""

    m: int  # width in pixels
    n: int  # height in pixels
    colour: tuple  # one 8-bit value per channel

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"blocker must be at least 1x1, got {self.m}x{self.n}")
        for v in self.colour:
            if not 0 <= int(v) <= 255:
                raise ValueError(f"colour channel {v} outside [0, 255]")


@dataclass(frozen=True)
class TriggerPatch:
    """Pixels extracted from an image region, remembering where they came from."""

    position: Position
    pixels: np.ndarray  # (n, m, channels) uint8


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check that ``img`` is a (H, W, C) uint8 array with C in {1, 3}."""
    if not isinstance(img, np.ndarray):
        raise ImageFormatError(f"expected ndarray, got {type(img).__name__}")
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageFormatError(f"expected (H, W, 1|3) array, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ImageFormatError(f"expected uint8 pixels, got {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageFormatError(f"image must be non-empty, got shape {img.shape}")
    return img


def _check_bounds(img: np.ndarray, pos: Position, m: int, n: int) -> None:
    h, w = img.shape[:2]
    if pos.x + m > w or pos.y + n > h:
        raise BoundsError(
            f"{m}x{n} rectangle at ({pos.x}, {pos.y}) exceeds {w}x{h} image"
        )


def place_blocker(img: np.ndarray, pos: Position, spec: BlockerSpec) -> np.ndarray:
    """Return a copy of ``img`` with the blocker rectangle painted at ``pos``."""
    validate_image(img)
    if len(spec.colour) != img.shape[2]:
        raise ChannelMismatchError(
            f"blocker colour has {len(spec.colour)} channels, image has {img.shape[2]}"
        )
    _check_bounds(img, pos, spec.m, spec.n)
    out = img.copy()
    out[pos.y : pos.y + spec.n, pos.x : pos.x + spec.m, :] = np.asarray(
        spec.colour, dtype=np.uint8
    )
    return out


def extract_region(img: np.ndarray, pos: Position, m: int, n: int) -> TriggerPatch:
    """Copy the m x n region of ``img`` at ``pos`` into a patch."""
    validate_image(img)
    _check_bounds(img, pos, m, n)
    pixels = img[pos.y : pos.y + n, pos.x : pos.x + m, :].copy()
    return TriggerPatch(position=pos, pixels=pixels)


def paste_region(img: np.ndarray, patch: TriggerPatch, pos: Position) -> np.ndarray:
    """Return a copy of ``img`` with ``patch`` pixels written at ``pos``."""
    validate_image(img)
    n, m, c = patch.pixels.shape
    if c != img.shape[2]:
        raise ChannelMismatchError(
            f"patch has {c} channels, image has {img.shape[2]}"
        )
    _check_bounds(img, pos, m, n)
    out = img.copy()
    out[pos.y : pos.y + n, pos.x : pos.x + m, :] = patch.pixels
    return out


def random_position(
    rng: np.random.Generator, img_w: int, img_h: int, m: int, n: int
) -> Position:
    """Draw a blocker position uniformly over all in-bounds placements."""
    if m > img_w or n > img_h:
        raise BoundsError(f"{m}x{n} blocker larger than {img_w}x{img_h} image")
    x = int(rng.integers(0, img_w - m + 1))
    y = int(rng.integers(0, img_h - n + 1))
    return Position(x, y)


def histogram(img: np.ndarray) -> np.ndarray:
    """Per-channel 256-bin intensity histogram, normalized to sum to 1."""
    validate_image(img)
    channels = img.shape[2]
    npix = img.shape[0] * img.shape[1]
    out = np.empty((channels, 256), dtype=np.float64)
    for c in range(channels):
        out[c] = np.bincount(img[:, :, c].ravel(), minlength=256)
    return out / npix


def bhattacharyya(h1: np.ndarray, h2: np.ndarray) -> float:
    """Hellinger-form Bhattacharyya distance between two histograms.

    Per channel: ``sqrt(max(0, 1 - sum_i sqrt(p_i * q_i)))``; the result is
    the mean over channels and lies in [0, 1].
    """
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise ChannelMismatchError(
            f"histogram shapes differ: {h1.shape} vs {h2.shape}"
        )
    bc = np.sum(np.sqrt(h1 * h2), axis=-1)
    dist = np.sqrt(np.maximum(0.0, 1.0 - bc))
    return float(np.mean(dist))


def dominant_colour(img: np.ndarray, seed: int) -> tuple:
    """Centre of the most-populated k-means (k=3) cluster over the pixels.

    k is reduced to the number of distinct pixel values when fewer than three
    exist.  Initialization is k-means++ from ``seed``; iteration stops when no
    centre moves more than 1e-4 in channel units or after 50 rounds.  Ties
    between equally populated clusters go to the lexicographically smaller
    centre, so the result is a pure function of ``(img, seed)``.
    """
    validate_image(img)
    pixels = img.reshape(-1, img.shape[2]).astype(np.float64)
    distinct = np.unique(pixels, axis=0)
    k = min(3, len(distinct))

    rng = np.random.default_rng(seed)
    centres = _kmeans_pp_init(pixels, k, rng)

    for _ in range(50):
        d2 = _sq_distances(pixels, centres)
        assign = np.argmin(d2, axis=1)
        new_centres = centres.copy()
        for j in range(k):
            members = pixels[assign == j]
            if len(members):
                new_centres[j] = members.mean(axis=0)
        if np.max(np.abs(new_centres - centres)) <= 1e-4:
            centres = new_centres
            break
        centres = new_centres

    d2 = _sq_distances(pixels, centres)
    assign = np.argmin(d2, axis=1)
    counts = np.bincount(assign, minlength=k)
    best = max(range(k), key=lambda j: (counts[j], tuple(-centres[j])))
    colour = np.clip(np.rint(centres[best]), 0, 255).astype(np.uint8)
    return tuple(int(v) for v in colour)


def _sq_distances(points: np.ndarray, centres: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centres[None, :, :]
    return np.sum(diff * diff, axis=2)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = np.empty((k, points.shape[1]), dtype=np.float64)
    centres[0] = points[rng.integers(len(points))]
    for j in range(1, k):
        d2 = np.min(_sq_distances(points, centres[:j]), axis=1)
        total = d2.sum()
        if total <= 0.0:
            # remaining points coincide with existing centres
            centres[j] = points[rng.integers(len(points))]
            continue
        probs = d2 / total
        centres[j] = points[rng.choice(len(points), p=probs)]
    return centres


def load_png(path) -> np.ndarray:
    """Decode an 8-bit grayscale or RGB PNG.  Alpha channels are rejected."""
    with PILImage.open(path) as im:
        if im.mode in ("RGBA", "LA", "PA") or "transparency" in im.info:
            raise ImageFormatError(f"{path}: alpha channel not supported")
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)[:, :, None]
        elif im.mode == "RGB":
            arr = np.asarray(im, dtype=np.uint8)
        else:
            raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
    return arr


def save_png(img: np.ndarray, path) -> None:
    """Encode an image as 8-bit grayscale or RGB PNG."""
    validate_image(img)
    if img.shape[2] == 1:
        PILImage.fromarray(img[:, :, 0], mode="L").save(path, format="PNG")
    else:
        PILImage.fromarray(img, mode="RGB").save(path, format="PNG")


def encode_png_bytes(img: np.ndarray) -> bytes:
    """PNG-encode an image in memory (used by the oracle wire protocol)."""
    import io

    buf = io.BytesIO()
    save_png(img, buf)
    return buf.getvalue()


def decode_png_bytes(data: bytes) -> np.ndarray:
    """Inverse of :func:`encode_png_bytes`."""
    import io

    return load_png(io.BytesIO(data))
