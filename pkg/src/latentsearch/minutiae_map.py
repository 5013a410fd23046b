"""12-channel minutiae map encoding and decoding, majority voting, and a
skeleton-based baseline detector.

The map is the detector interchange format: any detector (learned or the
baseline here) emits an h x w x 12 heat map; downstream code only ever decodes
maps, so detectors are swappable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from .core import Minutia, MinutiaKind, angle_diff, wrap_angle

N_CHANNELS = 12
CHANNEL_STEP = np.pi / 6  # 2*pi / 12

VOTE_DIST = 8.0
VOTE_ANGLE = np.pi / 6
VOTE_MIN_SETS = 2


@dataclass(frozen=True)
class EncoderParams:
    sigma_s: float = 3.0
    sigma_o: float = np.pi / 6

    def __post_init__(self):
        if self.sigma_s <= 0 or self.sigma_o <= 0:
            raise ValueError("widths must be positive")


DEFAULT_PARAMS = EncoderParams()
DEFAULT_THRESHOLD = 0.25


@dataclass(frozen=True)
class MinutiaeMap:
    values: np.ndarray  # (h, w, 12), non-negative

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != N_CHANNELS:
            raise ValueError(f"map must be h x w x {N_CHANNELS}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def save(self, path):
        h, w, c = self.values.shape
        with open(path, "wb") as f:
            f.write(np.array([h, w, c], dtype="<u4").tobytes())
            f.write(self.values.astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        raw = np.fromfile(path, dtype=np.uint8)
        h, w, c = np.frombuffer(raw[:12], dtype="<u4")
        values = np.frombuffer(raw[12:], dtype="<f4").astype(np.float64).reshape(h, w, c)
        return cls(values)


def channel_angles():
    return np.arange(N_CHANNELS) * CHANNEL_STEP


def encode_minutiae_map(minutiae, h, w, params=DEFAULT_PARAMS):
    """Accumulate each minutia's spatial and orientation Gaussians.

    Spatial support is truncated at 4.5 sigma_s, where the Gaussian is below
    4e-5; the accumulation stays an exact sum so encoding is linear in the
    minutiae set.
    """
    values = np.zeros((h, w, N_CHANNELS))
    radius = int(np.ceil(4.5 * params.sigma_s))
    chan = channel_angles()
    two_ss = 2.0 * params.sigma_s ** 2
    two_so = 2.0 * params.sigma_o ** 2
    for m in minutiae:
        c_o = np.exp(-angle_diff(m.theta, chan) ** 2 / two_so)
        y0, y1 = max(0, int(np.floor(m.y)) - radius), min(h, int(np.ceil(m.y)) + radius + 1)
        x0, x1 = max(0, int(np.floor(m.x)) - radius), min(w, int(np.ceil(m.x)) + radius + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        ys = np.arange(y0, y1)[:, None]
        xs = np.arange(x0, x1)[None, :]
        c_s = np.exp(-((xs - m.x) ** 2 + (ys - m.y) ** 2) / two_ss)
        values[y0:y1, x0:x1, :] += c_s[:, :, None] * c_o[None, None, :]
    return MinutiaeMap(values)


def interpolate_orientation(mmap, i, j, c):
    """Parabola vertex through the responses of channels c-1, c, c+1 (cyclic),
    mapped back to an angle in [0, 2*pi)."""
    v = mmap.values
    f1 = v[i, j, (c - 1) % N_CHANNELS]
    f2 = v[i, j, c]
    f3 = v[i, j, (c + 1) % N_CHANNELS]
    denom = f1 - 2.0 * f2 + f3
    if abs(denom) < 1e-12:
        return float(wrap_angle(c * CHANNEL_STEP))
    delta = 0.5 * (f1 - f3) / denom
    return float(wrap_angle((c + delta) * CHANNEL_STEP))


def decode_minutiae_map(mmap, m_t=DEFAULT_THRESHOLD):
    """Minutiae at every strict local max of the 5x5 spatial x 3-channel
    (cyclic) neighborhood that exceeds m_t."""
    v = mmap.values
    footprint = np.ones((5, 5, 3), bool)
    local_max = ndimage.maximum_filter(
        v, footprint=footprint, mode=("nearest", "nearest", "wrap"))
    peaks = (v >= local_max) & (v > m_t)
    out = []
    for i, j, c in zip(*np.nonzero(peaks)):
        theta = interpolate_orientation(mmap, i, j, c)
        out.append(Minutia(float(j), float(i), theta))
    out.sort(key=lambda m: (m.y, m.x, m.theta))
    return out


def _circular_mean(angles):
    s = np.mean(np.sin(angles))
    c = np.mean(np.cos(angles))
    return float(wrap_angle(np.arctan2(s, c)))


def vote_common_minutiae(sets):
    """Majority-vote common minutiae across the five extraction pipelines.

    A minutia is kept when at least VOTE_MIN_SETS distinct sets contain a
    mutually matching minutia (distance < 8 px, orientation difference < pi/6).
    Clusters are formed greedily in descending size order; the emitted minutia
    averages the cluster (circular mean for the angle).
    """
    if len(sets) != 5:
        raise ValueError("exactly five minutiae sets expected")
    entries = [(si, mi, m) for si, s in enumerate(sets) for mi, m in enumerate(s)]

    def matches(a, b):
        return (np.hypot(a.x - b.x, a.y - b.y) < VOTE_DIST
                and angle_diff(a.theta, b.theta) < VOTE_ANGLE)

    clusters = []
    for si, mi, seed in entries:
        members = [(si, mi)]
        for sj, s in enumerate(sets):
            if sj == si:
                continue
            best, best_d = None, VOTE_DIST
            for mj, cand in enumerate(s):
                d = np.hypot(seed.x - cand.x, seed.y - cand.y)
                if d < best_d and matches(seed, cand):
                    best, best_d = mj, d
            if best is not None:
                members.append((sj, best))
        clusters.append(((si, mi), members))

    clusters.sort(key=lambda c: (-len(c[1]), c[0]))
    used = set()
    out = []
    for _, members in clusters:
        if len(members) < VOTE_MIN_SETS:
            continue
        if any(m in used for m in members):
            continue
        used.update(members)
        pts = [sets[sj][mj] for sj, mj in members]
        out.append(Minutia(
            float(np.mean([p.x for p in pts])),
            float(np.mean([p.y for p in pts])),
            _circular_mean([p.theta for p in pts])))
    return out


# ---------------------------------------------------------------------------
# Baseline skeleton detector
# ---------------------------------------------------------------------------

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]


def _crossing_number(skel, y, x):
    ring = [skel[y + dy, x + dx] for dy, dx in _NEIGHBORS]
    return sum(abs(int(ring[k]) - int(ring[(k + 1) % 8])) for k in range(8)) // 2


def _prune_spurs(skel, min_len=8):
    """Remove endpoint branches shorter than min_len, repeatedly."""
    skel = skel.copy()
    h, w = skel.shape
    changed = True
    while changed:
        changed = False
        ys, xs = np.nonzero(skel)
        for y, x in zip(ys, xs):
            if not skel[y, x] or not (0 < y < h - 1 and 0 < x < w - 1):
                continue
            if _crossing_number(skel, y, x) != 1:
                continue
            # walk from this endpoint
            path = [(y, x)]
            prev = None
            cur = (y, x)
            hit_junction = False
            while len(path) <= min_len:
                cy, cx = cur
                nbrs = [(cy + dy, cx + dx) for dy, dx in _NEIGHBORS
                        if 0 <= cy + dy < h and 0 <= cx + dx < w
                        and skel[cy + dy, cx + dx] and (cy + dy, cx + dx) != prev]
                nbrs = [n for n in nbrs if n not in path]
                if not nbrs:
                    break
                is_junction = (0 < cur[0] < h - 1 and 0 < cur[1] < w - 1
                               and _crossing_number(skel, *cur) >= 3)
                if len(nbrs) > 1 or is_junction:
                    hit_junction = True
                    if is_junction:
                        path.pop()  # keep the junction pixel itself
                    break
                prev = cur
                cur = nbrs[0]
                path.append(cur)
            if hit_junction and path and len(path) < min_len:
                for py, px in path:
                    skel[py, px] = False
                changed = True
    return skel


def _trace_direction(skel, y, x, steps=5):
    """Unit direction from an endpoint into the ridge it terminates."""
    h, w = skel.shape
    prev = None
    cur = (y, x)
    for _ in range(steps):
        cy, cx = cur
        nbrs = [(cy + dy, cx + dx) for dy, dx in _NEIGHBORS
                if 0 <= cy + dy < h and 0 <= cx + dx < w
                and skel[cy + dy, cx + dx] and (cy + dy, cx + dx) != prev and (cy + dy, cx + dx) != (y, x)]
        if not nbrs:
            break
        prev = cur
        cur = nbrs[0]
    dy, dx = cur[0] - y, cur[1] - x
    if dy == 0 and dx == 0:
        return 0.0
    return float(wrap_angle(np.arctan2(dy, dx)))


def detect_minutiae_baseline(processed, fields, params=DEFAULT_PARAMS):
    """Binarize inside the ROI, thin, prune spurs, then crossing-number
    analysis.  Output is an encoded MinutiaeMap so the caller is
    detector-agnostic."""
    img = processed.pixels
    h, w = img.shape
    if not fields.roi.any():
        return MinutiaeMap(np.zeros((h, w, N_CHANNELS)))
    block = fields.block_size
    roi_px = np.kron(fields.roi, np.ones((block, block), bool))[:h, :w]

    local_mean = ndimage.uniform_filter(img, size=15, mode="nearest")
    binary = (img < local_mean) & roi_px  # ridges are dark
    binary = ndimage.binary_closing(binary, structure=np.ones((3, 3), bool))
    skel = skeletonize(binary)
    skel = _prune_spurs(skel, min_len=8)

    minutiae = []
    ys, xs = np.nonzero(skel)
    for y, x in zip(ys, xs):
        if not (0 < y < h - 1 and 0 < x < w - 1):
            continue
        cn = _crossing_number(skel, y, x)
        if cn == 1:
            theta = _trace_direction(skel, y, x)
            minutiae.append(Minutia(float(x), float(y), theta))
        elif cn >= 3:
            by, bx = min(y // block, fields.shape[0] - 1), min(x // block, fields.shape[1] - 1)
            theta = float(wrap_angle(fields.orientation[by, bx]))
            minutiae.append(Minutia(float(x), float(y), theta))
    # drop detections hugging the ROI boundary (binarization artifacts)
    interior = ndimage.binary_erosion(roi_px, iterations=6)
    minutiae = [m for m in minutiae if interior[int(m.y), int(m.x)]]
    return encode_minutiae_map(minutiae, h, w, params)
