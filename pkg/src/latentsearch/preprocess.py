"""Classical image-processing front ends.

Each operation takes a gray image (float or uint8, values in [0, 255]) and
returns a ProcessedImage of the same size with values back in [0, 255].
These are the differently processed images the minutiae detector consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .ridges import BLOCK

MID_GRAY = 127.5

# a window is "enhanceable" when its strongest ridge-band bin holds at least
# this fraction of total spectral magnitude; white noise stays below ~0.003
# over a 32x32 window while even heavily salted ridges clear 0.006
PEAK_FRACTION = 0.005


class PipelineTag(Enum):
    DECOMPOSED = "decomposed"
    STFT = "stft"
    CONTRAST_STFT = "contrast_stft"
    GABOR = "gabor"
    CONTRAST_GABOR = "contrast_gabor"


@dataclass(frozen=True)
class ProcessedImage:
    pixels: np.ndarray
    pipeline_tag: PipelineTag

    def __post_init__(self):
        p = np.clip(np.asarray(self.pixels, dtype=float), 0.0, 255.0).copy()
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def shape(self):
        return self.pixels.shape


def _as_float(image):
    img = np.asarray(image, dtype=float)
    if img.size == 0:
        raise ValueError("empty image")
    return img


def decompose_texture(image):
    """Texture component: image minus a large-kernel smoothed cartoon,
    re-centered at mid-gray.  Gain 1 so the operation is nearly idempotent."""
    img = _as_float(image)
    cartoon = ndimage.gaussian_filter(img, sigma=16, mode="nearest")
    residual = img - cartoon
    return ProcessedImage(MID_GRAY + residual, PipelineTag.DECOMPOSED)


def _hann2d(size):
    w = np.hanning(size + 2)[1:-1]
    return np.outer(w, w)


def stft_enhance(image, window=32, overlap=16, period_range=(4.0, 16.0),
                 bandwidth=1.5, tag=PipelineTag.STFT):
    """Block spectral enhancement.

    Overlapping raised-cosine windows; per window the dominant spectral peak in
    the ridge-frequency band drives a Gaussian band-pass around the peak (and
    its conjugate).  Windows without a clear peak flatten to mid-gray so
    unenhanceable regions score zero ridge quality downstream.
    """
    img = _as_float(image)
    h, w = img.shape
    if h < window or w < window:
        return ProcessedImage(img, tag)
    taper = _hann2d(window)

    fy = np.fft.fftfreq(window)[:, None]
    fx = np.fft.fftfreq(window)[None, :]
    radius = np.sqrt(fy ** 2 + fx ** 2)
    band = (radius >= 1.0 / period_range[1]) & (radius <= 1.0 / period_range[0])
    sigma_f = bandwidth / window

    acc = np.zeros_like(img)
    weight = np.zeros_like(img)
    step = window - overlap
    ys = list(range(0, h - window + 1, step))
    xs = list(range(0, w - window + 1, step))
    if ys[-1] != h - window:
        ys.append(h - window)
    if xs[-1] != w - window:
        xs.append(w - window)

    for y0 in ys:
        for x0 in xs:
            block = img[y0:y0 + window, x0:x0 + window]
            mean = block.mean()
            spec = np.fft.fft2((block - mean) * taper)
            mag = np.abs(spec)
            banded = np.where(band, mag, 0.0)
            total = mag.sum()
            peak = banded.max()
            if total < 1e-9 or peak < PEAK_FRACTION * total:
                # no ridge-frequency peak: nothing to enhance.  Emit flat
                # mid-gray rather than the block itself -- per-window means
                # would overlap-add into smooth gradients that later look
                # like wide-spaced ridges once patches are sd-normalized.
                acc[y0:y0 + window, x0:x0 + window] += MID_GRAY * taper
                weight[y0:y0 + window, x0:x0 + window] += taper
                continue
            py, px = np.unravel_index(int(np.argmax(banded)), banded.shape)
            d1 = (fy - fy[py, 0]) ** 2 + (fx - fx[0, px]) ** 2
            d2 = (fy + fy[py, 0]) ** 2 + (fx + fx[0, px]) ** 2
            mask = np.exp(-d1 / (2 * sigma_f ** 2)) + np.exp(-d2 / (2 * sigma_f ** 2))
            filtered = np.real(np.fft.ifft2(spec * mask)) + mean
            acc[y0:y0 + window, x0:x0 + window] += filtered * taper
            weight[y0:y0 + window, x0:x0 + window] += taper

    out = np.where(weight > 1e-9, acc / np.maximum(weight, 1e-9), img)
    lo, hi = out.min(), out.max()
    if hi - lo < 1e-9:
        out = np.full_like(out, np.clip(lo, 0, 255))
    else:
        out = (out - lo) / (hi - lo) * 255.0
    return ProcessedImage(out, tag)


def _gabor_kernel(orientation, spacing):
    """Oriented band-pass kernel matching the dictionary's wave convention:
    the phase varies along (-sin t, cos t)."""
    half = int(np.ceil(1.5 * spacing))
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1].astype(float)
    u = -xs * np.sin(orientation) + ys * np.cos(orientation)  # across ridges
    v = xs * np.cos(orientation) + ys * np.sin(orientation)   # along ridges
    sigma = 0.5 * spacing
    env = np.exp(-(u ** 2 + v ** 2) / (2 * sigma ** 2))
    kern = env * np.cos(2 * np.pi * u / spacing)
    kern -= kern.mean() * env / env.mean() if env.mean() > 0 else 0.0
    return kern


def gabor_enhance(image, fields, tag=PipelineTag.GABOR):
    """Per-block oriented filtering tuned to the local (orientation, spacing).

    Blocks outside the ROI are passed through unchanged.
    """
    img = _as_float(image)
    h, w = img.shape
    out = img.copy()
    if not fields.roi.any():
        return ProcessedImage(out, tag)
    bh, bw = fields.shape
    filtered = np.full_like(img, np.nan)
    for by in range(bh):
        for bx in range(bw):
            if not fields.roi[by, bx]:
                continue
            theta = fields.orientation[by, bx]
            spacing = fields.spacing[by, bx]
            kern = _gabor_kernel(theta, spacing)
            half = kern.shape[0] // 2
            y0, y1 = by * BLOCK, min((by + 1) * BLOCK, h)
            x0, x1 = bx * BLOCK, min((bx + 1) * BLOCK, w)
            ry0, ry1 = max(0, y0 - half), min(h, y1 + half)
            rx0, rx1 = max(0, x0 - half), min(w, x1 + half)
            region = ndimage.correlate(img[ry0:ry1, rx0:rx1], kern, mode="nearest")
            filtered[y0:y1, x0:x1] = region[y0 - ry0:y1 - ry0, x0 - rx0:x1 - rx0]
    inside = ~np.isnan(filtered)
    if inside.any():
        vals = filtered[inside]
        lo, hi = vals.min(), vals.max()
        if hi - lo > 1e-9:
            out[inside] = (vals - lo) / (hi - lo) * 255.0
        else:
            out[inside] = MID_GRAY
    return ProcessedImage(out, tag)


def contrast_enhance(image, tile=32, tag=PipelineTag.CONTRAST_GABOR):
    """Tile-wise histogram stretch: each tile maps its own min/max to [0, 255].

    Rank order inside a tile is preserved; constant tiles are left unchanged.
    """
    img = _as_float(image)
    out = img.copy()
    h, w = img.shape
    for y0 in range(0, h, tile):
        for x0 in range(0, w, tile):
            t = img[y0:y0 + tile, x0:x0 + tile]
            lo, hi = t.min(), t.max()
            if hi - lo > 1e-9:
                out[y0:y0 + tile, x0:x0 + tile] = (t - lo) / (hi - lo) * 255.0
    return ProcessedImage(out, tag)


def degrade_image(image, sigma, rng):
    """Test-data utility: additive Gaussian noise plus Gaussian blur."""
    img = _as_float(image)
    noisy = img + rng.normal(0.0, sigma, img.shape)
    return np.clip(ndimage.gaussian_filter(noisy, sigma=sigma / 5.0), 0, 255)


def write_pgm(image, path):
    """Binary portable graymap, for CLI debug dumps."""
    img = np.clip(np.asarray(image, dtype=float), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError("only binary PGM (P5) supported")
    parts = []
    idx = 2
    while len(parts) < 3:
        while idx < len(data) and data[idx:idx + 1].isspace():
            idx += 1
        if data[idx:idx + 1] == b"#":
            while data[idx:idx + 1] != b"\n":
                idx += 1
            continue
        start = idx
        while idx < len(data) and not data[idx:idx + 1].isspace():
            idx += 1
        parts.append(int(data[start:idx]))
    idx += 1
    w, h, _maxval = parts
    return np.frombuffer(data[idx:idx + w * h], dtype=np.uint8).reshape(h, w).astype(float)
