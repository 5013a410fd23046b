"""Ridge-structure dictionary and per-block ridge field estimation.

A fixed dictionary of synthetic ridge/valley patches (10 orientations x 9
spacings = 90 elements, 32x32 px each) scores overlapping image patches; the
argmax element gives each block its orientation and spacing, the similarity
value feeds the quality map, and thresholding + morphology gives the ROI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import RidgeFields

PATCH = 32
DICT_ORIENTATIONS = 10
DICT_SPACINGS = tuple(range(5, 14))  # 5..13 px
ALPHA = 300.0
ROI_THRESHOLD = 0.35
BLOCK = 16


def _normalize_patch(p):
    """Zero-mean unit-sd version of a patch; all-zero stays all-zero."""
    p = np.asarray(p, dtype=float)
    p = p - p.mean()
    sd = p.std()
    if sd < 1e-12:
        return np.zeros_like(p)
    return p / sd


def synth_ridge_patch(orientation, spacing, size=PATCH, square=True, phase=0.0):
    """Synthetic ridge/valley patch: wave with the given period, crests running
    along `orientation`.  Binarized at 0 when square=True (ridge/valley look),
    then normalized to mean 0 / sd 1."""
    half = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size] - half
    # phase varies along the normal of the ridge direction
    arg = (-xs * np.sin(orientation) + ys * np.cos(orientation)) * (2 * np.pi / spacing)
    wave = np.cos(arg + phase)
    if square:
        wave = np.where(wave >= 0.0, 1.0, -1.0)
    return _normalize_patch(wave)


@dataclass(frozen=True)
class RidgeDictionary:
    elements: np.ndarray      # (n, 32, 32), each mean 0 / sd 1
    orientations: np.ndarray  # (n,) in [0, pi)
    spacings: np.ndarray      # (n,) pixels

    def __post_init__(self):
        for name in ("elements", "orientations", "spacings"):
            a = np.asarray(getattr(self, name), dtype=float).copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return len(self.elements)

    @property
    def flat(self):
        return self.elements.reshape(len(self), -1)


@dataclass(frozen=True)
class PatchSimilarity:
    best_index: int
    s_m: float
    quality: float


def build_dictionary(orientations=DICT_ORIENTATIONS, spacings=DICT_SPACINGS):
    """Dictionary of ridge patches over an orientation x spacing grid.

    The grid must multiply out to 90 elements.
    """
    spacings = tuple(spacings)
    if orientations * len(spacings) != 90:
        raise ValueError(
            f"dictionary must have 90 elements, got {orientations} x {len(spacings)}")
    elems, oris, spcs = [], [], []
    for k in range(orientations):
        theta = k * np.pi / orientations
        for s in spacings:
            elems.append(synth_ridge_patch(theta, s))
            oris.append(theta)
            spcs.append(float(s))
    return RidgeDictionary(np.array(elems), np.array(oris), np.array(spcs))


def _similarities(patch, dictionary, alpha=ALPHA):
    p = _normalize_patch(patch).ravel()
    norm = np.linalg.norm(p)
    return dictionary.flat @ p / (norm + alpha)


def patch_similarity(patch, dictionary, alpha=ALPHA, raw_patch=None):
    """Best dictionary element for one 32x32 patch.

    s_i = (P . d_i) / (||P|| + alpha) with P normalized to mean 0 / sd 1.
    Quality adds the cosine between the raw-image patch and the (enhanced)
    patch when a raw patch is supplied.
    """
    patch = np.asarray(patch, dtype=float)
    if patch.shape != (PATCH, PATCH):
        raise ValueError(f"patch must be {PATCH}x{PATCH}, got {patch.shape}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    s = _similarities(patch, dictionary, alpha)
    best = int(np.argmax(s))
    s_m = float(s[best])
    quality = s_m
    if raw_patch is not None:
        quality += patch_cosine(raw_patch, patch)
    return PatchSimilarity(best, s_m, quality)


def patch_cosine(a, b):
    """Cosine between two patches after mean 0 / sd 1 normalization."""
    a = _normalize_patch(a).ravel()
    b = _normalize_patch(b).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(a @ b / (na * nb))


N_PHASES = 8


def _phase_bank(dictionary):
    """Phase-shifted variants of every dictionary element, N_PHASES per label.

    Image patches land on the ridge wave at arbitrary phase; labeling each
    block by the best variant makes the orientation/spacing estimate (not the
    formula of patch_similarity itself) phase-invariant.  Cached per
    dictionary since construction costs a few hundred patch syntheses.
    """
    bank = getattr(dictionary, "_phase_bank", None)
    if bank is None:
        rows = []
        for ori, spc in zip(dictionary.orientations, dictionary.spacings):
            for k in range(N_PHASES):
                rows.append(synth_ridge_patch(
                    ori, spc, phase=k * 2 * np.pi / N_PHASES).ravel())
        bank = np.array(rows)
        bank.setflags(write=False)
        object.__setattr__(dictionary, "_phase_bank", bank)
    return bank


def estimate_ridge_fields(enhanced, raw, dictionary, alpha=ALPHA):
    """Per-block orientation / spacing / quality from overlapping 32x32 patches.

    Patches stride 16 px over the enhanced image; each patch's argmax label
    (maximized over element phase variants) labels the corresponding 16x16
    block.  Quality adds the raw-vs-enhanced patch cosine.  The ROI mask
    starts all-false; segment_roi fills it.
    """
    enhanced = np.asarray(enhanced, dtype=float)
    raw = np.asarray(raw, dtype=float)
    if enhanced.shape != raw.shape:
        raise ValueError("enhanced and raw images must share dimensions")
    h, w = enhanced.shape
    if h < PATCH or w < PATCH:
        z = np.zeros((0, 0))
        return RidgeFields(z, z.copy(), z.copy(), np.zeros((0, 0), bool))
    bh, bw = int(np.ceil(h / BLOCK)), int(np.ceil(w / BLOCK))

    patches = np.empty((bh * bw, PATCH * PATCH))
    cosines = np.empty(bh * bw)
    for by in range(bh):
        y0 = min(by * BLOCK, h - PATCH)
        for bx in range(bw):
            x0 = min(bx * BLOCK, w - PATCH)
            p = enhanced[y0:y0 + PATCH, x0:x0 + PATCH]
            patches[by * bw + bx] = _normalize_patch(p).ravel()
            cosines[by * bw + bx] = patch_cosine(
                raw[y0:y0 + PATCH, x0:x0 + PATCH], p)

    norms = np.linalg.norm(patches, axis=1)
    scores = patches @ _phase_bank(dictionary).T / (norms + alpha)[:, None]
    best_variant = scores.argmax(axis=1)
    best = best_variant // N_PHASES
    s_m = scores[np.arange(len(scores)), best_variant]

    orientation = dictionary.orientations[best].reshape(bh, bw)
    spacing = dictionary.spacings[best].reshape(bh, bw)
    quality = (s_m + cosines).reshape(bh, bw)
    return RidgeFields(orientation, spacing, quality, np.zeros((bh, bw), bool))


def segment_roi(fields, s_r=ROI_THRESHOLD):
    """Threshold quality, then morphological open and close (3x3 block element)
    and keep the largest connected component."""
    mask = fields.quality > s_r
    selem = np.ones((3, 3), bool)
    # erosions treat outside-of-frame as foreground so a mask that reaches
    # the frame border is not nibbled away
    mask = ndimage.binary_erosion(mask, structure=selem, border_value=1)
    mask = ndimage.binary_dilation(mask, structure=selem)
    mask = ndimage.binary_dilation(mask, structure=selem)
    mask = ndimage.binary_erosion(mask, structure=selem, border_value=1)
    labels, n = ndimage.label(mask)
    if n > 1:
        sizes = ndimage.sum(mask, labels, index=np.arange(1, n + 1))
        mask = labels == (1 + int(np.argmax(sizes)))
    return RidgeFields(fields.orientation, fields.spacing, fields.quality, mask,
                       fields.block_size)


def export_fields(fields, path):
    """Flat binary dump: u32 h, u32 w, then 4 planes (orientation, spacing,
    quality, roi) as little-endian f32."""
    h, w = fields.shape
    with open(path, "wb") as f:
        f.write(np.array([h, w], dtype="<u4").tobytes())
        for plane in (fields.orientation, fields.spacing, fields.quality,
                      fields.roi.astype(float)):
            f.write(plane.astype("<f4").tobytes())


def render_fields_overlay(fields, image=None):
    """Grayscale debug rendering: one flow stroke per ROI block plus a dark
    ROI boundary, drawn over the (dimmed) source image when given."""
    block = fields.block_size
    bh, bw = fields.shape
    h, w = bh * block, bw * block
    if image is None:
        canvas = np.full((h, w), 220.0)
    else:
        img = np.asarray(image, dtype=float)
        canvas = np.full((h, w), 220.0)
        ih, iw = min(h, img.shape[0]), min(w, img.shape[1])
        canvas[:ih, :iw] = 127.5 + 0.5 * (img[:ih, :iw] - 127.5)

    roi_px = np.kron(fields.roi, np.ones((block, block), bool))
    canvas[~roi_px] = np.minimum(canvas[~roi_px], 180.0) * 0.8 + 40.0

    half = block / 2.0 - 2.0
    ts = np.linspace(-half, half, 2 * block)
    for by in range(bh):
        for bx in range(bw):
            if not fields.roi[by, bx]:
                continue
            theta = fields.orientation[by, bx]
            cy, cx = by * block + block / 2.0, bx * block + block / 2.0
            ys = np.clip(np.round(cy + ts * np.sin(theta)).astype(int), 0, h - 1)
            xs = np.clip(np.round(cx + ts * np.cos(theta)).astype(int), 0, w - 1)
            canvas[ys, xs] = 0.0

    boundary = roi_px ^ ndimage.binary_erosion(roi_px)
    canvas[boundary] = 0.0
    return np.clip(canvas, 0, 255)


def import_fields(path):
    data = np.fromfile(path, dtype=np.uint8)
    h, w = np.frombuffer(data[:8], dtype="<u4")
    planes = np.frombuffer(data[8:], dtype="<f4").reshape(4, h, w)
    return RidgeFields(planes[0].astype(float), planes[1].astype(float),
                       planes[2].astype(float), planes[3] > 0.5)
