"""Image representation helpers, brightness histograms and illumination labels.

Images are ``H x W x 3`` float arrays with values in ``[0, 1]``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import ChannelCountError, ImageReadError, ShapeError, UnsupportedFormatError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
MIN_SIDE = 8


class IlluminationLabel(str, enum.Enum):
    LowLight = "LowLight"
    Backlit = "Backlit"
    Normal = "Normal"


@dataclass(frozen=True)
class BrightnessHistogram:
    bins: np.ndarray
    peak_positions: list = field(default_factory=list)
    peak_masses: list = field(default_factory=list)

    @property
    def centers(self) -> np.ndarray:
        n = len(self.bins)
        return (np.arange(n) + 0.5) / n


def as_image(arr, min_side: int = 1) -> np.ndarray:
    """Validate and return ``arr`` as a float image clipped to [0, 1]."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ChannelCountError(f"expected H x W x 3 image, got shape {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise ShapeError(f"image must be at least {min_side}x{min_side}, got {arr.shape[:2]}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return np.clip(arr, 0.0, 1.0)


def rgb_to_hsv_v(img) -> np.ndarray:
    """Return the HSV value channel, ``max(R, G, B)`` per pixel."""
    return as_image(img).max(axis=2)


def _moving_average(values: np.ndarray, width: int) -> np.ndarray:
    # truncated windows at the edges are renormalized by their actual size
    half = width // 2
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(len(values))
    lo = np.clip(idx - half, 0, len(values))
    hi = np.clip(idx + half + 1, 0, len(values))
    return (csum[hi] - csum[lo]) / (hi - lo)


def _find_peaks(smooth: np.ndarray, raw: np.ndarray, threshold: float) -> list[int]:
    """Indices of plateau maxima whose prominence is at least ``threshold``.

    Prominence is the height above the higher of the two flanking minima, each
    taken up to the nearest higher bin or the end of the range. A plateau that
    touches an end of the range is judged by its interior side only, so
    saturated edge bins can be peaks. Within a plateau the bin with the
    largest raw mass wins, leftmost on ties.
    """
    n = len(smooth)
    peaks = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and smooth[j + 1] == smooth[i]:
            j += 1
        height = smooth[i]
        left_ok = i == 0 or smooth[i - 1] < height
        right_ok = j == n - 1 or smooth[j + 1] < height
        if left_ok and right_ok and not (i == 0 and j == n - 1):
            bases = []
            if i > 0:
                k = i - 1
                while k > 0 and smooth[k - 1] <= height:
                    k -= 1
                bases.append(smooth[k:i].min())
            if j < n - 1:
                k = j + 1
                while k < n - 1 and smooth[k + 1] <= height:
                    k += 1
                bases.append(smooth[j + 1:k + 1].min())
            if height - max(bases) >= threshold:
                peaks.append(i + int(np.argmax(raw[i:j + 1])))
        i = j + 1
    return peaks


def v_histogram(img, bins: int = 64, smooth_width: int = 5, peak_threshold: float = 0.01) -> BrightnessHistogram:
    if bins < 8:
        raise ValueError(f"bins must be >= 8, got {bins}")
    if smooth_width < 1 or smooth_width % 2 == 0:
        raise ValueError(f"smooth_width must be a positive odd integer, got {smooth_width}")
    v = rgb_to_hsv_v(img).ravel()
    counts = np.bincount(np.minimum((v * bins).astype(np.int64), bins - 1), minlength=bins)
    raw = counts / max(counts.sum(), 1)
    smooth = _moving_average(raw, smooth_width)
    smooth = smooth / smooth.sum() if smooth.sum() > 0 else smooth
    peaks = _find_peaks(smooth, raw, peak_threshold)
    centers = (np.arange(bins) + 0.5) / bins
    return BrightnessHistogram(
        bins=smooth,
        peak_positions=[float(centers[p]) for p in peaks],
        peak_masses=[float(smooth[p]) for p in peaks],
    )


def classify_illumination(hist: BrightnessHistogram, low: float = 0.33, high: float = 0.66) -> IlluminationLabel:
    pos = hist.peak_positions
    has_low = any(p < low for p in pos)
    has_high = any(p > high for p in pos)
    if has_low and has_high:
        return IlluminationLabel.Backlit
    if pos and not has_high:
        top = pos[int(np.argmax(hist.peak_masses))]
        if top < low:
            return IlluminationLabel.LowLight
    return IlluminationLabel.Normal


def analyze_image(img, **hist_kwargs) -> tuple[IlluminationLabel, BrightnessHistogram]:
    cls_kwargs = {k: hist_kwargs.pop(k) for k in ("low", "high") if k in hist_kwargs}
    hist = v_histogram(img, **hist_kwargs)
    return classify_illumination(hist, **cls_kwargs), hist


def load_image(path) -> np.ndarray:
    """Read an 8- or 16-bit RGB PNG as float32 in [0, 1]."""
    path = Path(path)
    try:
        head = path.read_bytes()[:8]
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc
    if head != PNG_MAGIC:
        raise UnsupportedFormatError(f"{path} is not a PNG file")
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageReadError(f"cannot decode {path}")
    if data.ndim != 3 or data.shape[2] != 3:
        channels = 1 if data.ndim == 2 else data.shape[2]
        raise ChannelCountError(f"{path} has {channels} channel(s), expected 3")
    if data.dtype == np.uint8:
        scale = 255.0
    elif data.dtype == np.uint16:
        scale = 65535.0
    else:
        raise UnsupportedFormatError(f"{path} has unsupported sample type {data.dtype}")
    rgb = data[:, :, ::-1].astype(np.float32) / np.float32(scale)
    return np.ascontiguousarray(rgb)


def save_image(img, path, bits: int = 8) -> None:
    img = as_image(img)
    if bits == 8:
        q = np.round(img * 255.0).astype(np.uint8)
    elif bits == 16:
        q = np.round(img * 65535.0).astype(np.uint16)
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise UnsupportedFormatError(f"can only write PNG files, got {path}")
    if not cv2.imwrite(str(path), np.ascontiguousarray(q[:, :, ::-1])):
        raise ImageReadError(f"cannot write {path}")
