"""Template comparison: descriptor similarity, normalization, correspondence
selection, second-order graph matching and score fusion.

All geometry enters only through relative distances and relative angles, so a
rigid transform applied to one template does not change which correspondences
survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is in the default install
    _HAVE_NUMBA = False

from .core import TWO_PI
from .descriptor import adc_distance_matrix, build_adc_table

EPS = 1e-6
TOP_N_MINUTIAE = 120
TOP_N_TEXTURE = 200
TAU_D = 15.0
TAU_THETA = np.pi / 6
K_SIMPLIFIED = 10
RHO_FRACTION = 0.1
POWER_ITERS = 30
FUSION_WEIGHTS = (1.0, 1.0, 1.0, 0.3)


class SelectionMode(Enum):
    MINUTIAE = "minutiae"
    TEXTURE = "texture"


class MatchStage(Enum):
    SIMPLIFIED = "simplified"
    FULL = "full"


@dataclass(frozen=True)
class Correspondence:
    latent_index: int
    reference_index: int
    similarity: float


@dataclass(frozen=True)
class MatchResult:
    score: float
    surviving: tuple

    def __post_init__(self):
        object.__setattr__(self, "surviving", tuple(self.surviving))


EMPTY_RESULT = MatchResult(0.0, ())


def similarity_matrix(left, right):
    """Cosine similarity between compressed descriptors, clamped to [0, 1]."""
    a = left.descriptor_matrix().astype(float)
    b = right.descriptor_matrix().astype(float)
    if a.size == 0 or b.size == 0:
        return np.zeros((len(left), len(right)))
    a = a / (np.linalg.norm(a, axis=1, keepdims=True) + 1e-12)
    b = b / (np.linalg.norm(b, axis=1, keepdims=True) + 1e-12)
    return np.clip(a @ b.T, 0.0, 1.0)


def normalize_similarity(s):
    """S'[i,j] = S[i,j] / (rowsum_i + colsum_j - S[i,j] + eps).

    An entry that is the only strong value in its row and column keeps most of
    its weight; entries competing with other strong matches are suppressed.
    """
    s = np.asarray(s)
    if not np.issubdtype(s.dtype, np.floating):
        s = s.astype(float)
    if s.size == 0:
        return s.copy()
    rows = s.sum(axis=1, keepdims=True)
    cols = s.sum(axis=0, keepdims=True)
    return s / (rows + cols - s + EPS)


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _top2_kernel(s, cols):  # pragma: no cover - jitted
        for i in range(s.shape[0]):
            row = s[i]
            if row[0] >= row[1]:
                b1, b2 = 0, 1
            else:
                b1, b2 = 1, 0
            for j in range(2, row.shape[0]):
                v = row[j]
                if v > row[b1]:
                    b2 = b1
                    b1 = j
                elif v > row[b2]:
                    b2 = j
            cols[i, 0] = b1
            cols[i, 1] = b2


def select_top_correspondences(s_norm, n, mode=SelectionMode.MINUTIAE, s_raw=None):
    """Top-N candidate correspondences.

    Minutiae mode ranks all entries of the normalized matrix.  Texture mode
    first keeps the top 2 reference columns per latent row by raw similarity,
    then ranks that pool.  Ties break by (latent, reference) index ascending.
    """
    s_norm = np.asarray(s_norm)
    if s_norm.size == 0:
        return []
    nl, nr = s_norm.shape
    if mode is SelectionMode.TEXTURE:
        if s_raw is None:
            raise ValueError("texture mode requires the raw similarity matrix")
        keep = min(2, nr)
        if keep == 2:
            # top-2 per row keeping the lowest column index on ties, the same
            # order a stable descending sort would produce
            raw32 = np.ascontiguousarray(s_raw, dtype=np.float32)
            if _HAVE_NUMBA:
                cols = np.empty((nl, 2), dtype=np.int64)
                _top2_kernel(raw32, cols)
            else:
                work = raw32.copy()
                c1 = work.argmax(axis=1)
                work[np.arange(nl), c1] = -np.inf
                c2 = work.argmax(axis=1)
                cols = np.stack([c1, c2], axis=1)
        else:
            cols = np.argsort(-s_raw, axis=1, kind="stable")[:, :keep]
        flat = np.sort((np.repeat(np.arange(nl), keep) * nr + cols.ravel()).astype(np.int64))
    else:
        flat = np.arange(nl * nr, dtype=np.int64)
    vals = s_norm.ravel()[flat]
    # stable sort on -value; equal values fall back to flat (i, j) order
    order = flat[np.argsort(-vals, kind="stable")][:n]
    return [Correspondence(int(f // nr), int(f % nr), float(s_norm.ravel()[f]))
            for f in order]


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _compat_kernel(li, ri, pl, pr, tl, tr, out):  # pragma: no cover - jitted
        # the three Gaussians of the published form are fused into one exp;
        # all angle folds use conditional subtracts, valid because thetas lie
        # in [0, 2*pi) and atan2 in (-pi, pi], so every |difference| is < 3*pi
        two_pi = 2.0 * math.pi
        n = li.shape[0]
        for i in range(n):
            for j in range(n):
                if i == j or li[i] == li[j] or ri[i] == ri[j]:
                    out[i, j] = 0.0
                    continue
                dxl = pl[j, 0] - pl[i, 0]
                dyl = pl[j, 1] - pl[i, 1]
                dxr = pr[j, 0] - pr[i, 0]
                dyr = pr[j, 1] - pr[i, 1]
                dl = math.sqrt(dxl * dxl + dyl * dyl)
                dr = math.sqrt(dxr * dxr + dyr * dyr)

                rel_l = abs(tl[i] - tl[j])
                if rel_l >= math.pi:
                    rel_l = two_pi - rel_l
                rel_r = abs(tr[i] - tr[j])
                if rel_r >= math.pi:
                    rel_r = two_pi - rel_r

                beta_l = abs(math.atan2(dyl, dxl) - tl[i])
                if beta_l >= two_pi:
                    beta_l -= two_pi
                if beta_l >= math.pi:
                    beta_l = two_pi - beta_l
                beta_r = abs(math.atan2(dyr, dxr) - tr[i])
                if beta_r >= two_pi:
                    beta_r -= two_pi
                if beta_r >= math.pi:
                    beta_r = two_pi - beta_r

                out[i, j] = math.exp(-abs(dl - dr) / TAU_D
                                     - abs(rel_l - rel_r) / TAU_THETA
                                     - abs(beta_l - beta_r) / TAU_THETA)


def _compatibility_matrix(cands, left, right):
    """Pairwise geometric compatibility of candidate correspondences."""
    li = np.array([c.latent_index for c in cands], dtype=np.int64)
    ri = np.array([c.reference_index for c in cands], dtype=np.int64)
    pl = np.ascontiguousarray(left.xy[li], dtype=np.float64)
    pr = np.ascontiguousarray(right.xy[ri], dtype=np.float64)
    tl = np.ascontiguousarray(left.thetas[li], dtype=np.float64)
    tr = np.ascontiguousarray(right.thetas[ri], dtype=np.float64)

    if _HAVE_NUMBA:
        out = np.empty((len(cands), len(cands)))
        _compat_kernel(li, ri, pl, pr, tl, tr, out)
        return out

    dl = np.linalg.norm(pl[:, None, :] - pl[None, :, :], axis=2)
    dr = np.linalg.norm(pr[:, None, :] - pr[None, :, :], axis=2)
    len_term = np.exp(-np.abs(dl - dr) / TAU_D)

    def circ_diff(a):
        # inputs may fall anywhere in (-3*pi, 3*pi); reduce before folding
        d = np.mod(np.abs(a), TWO_PI)
        return np.where(d < np.pi, d, TWO_PI - d)

    # relative minutia orientations
    rel_l = circ_diff(tl[:, None] - tl[None, :])
    rel_r = circ_diff(tr[:, None] - tr[None, :])
    ang1 = np.exp(-np.abs(rel_l - rel_r) / TAU_THETA)

    # edge direction relative to the first minutia's orientation
    edge_l = np.arctan2(pl[None, :, 1] - pl[:, None, 1], pl[None, :, 0] - pl[:, None, 0])
    edge_r = np.arctan2(pr[None, :, 1] - pr[:, None, 1], pr[None, :, 0] - pr[:, None, 0])
    beta_l = circ_diff(edge_l - tl[:, None])
    beta_r = circ_diff(edge_r - tr[:, None])
    ang2 = np.exp(-np.abs(beta_l - beta_r) / TAU_THETA)

    compat = len_term * ang1 * ang2
    # conflicting correspondences (shared endpoint) are incompatible
    conflict = (li[:, None] == li[None, :]) | (ri[:, None] == ri[None, :])
    compat[conflict] = 0.0
    np.fill_diagonal(compat, 0.0)
    return compat


def _survivor_score(cands, compat_sub):
    sims = np.array([c.similarity for c in cands])
    if len(cands) == 0:
        return 0.0
    if len(cands) == 1:
        return float(sims[0])
    off = compat_sub[~np.eye(len(cands), dtype=bool)]
    return float(sims.sum() * off.mean())


def second_order_match(cands, left, right, stage=MatchStage.FULL, _compat=None):
    """Filter candidate correspondences by pairwise geometric consistency.

    simplified: each candidate is scored by the sum of its K strongest
    compatibilities; the top half survives.  full: power iteration on the
    compatibility matrix, then greedy one-to-one extraction of candidates
    whose activation stays above a fraction of the maximum.

    _compat lets a caller that already holds the compatibility matrix for
    exactly these candidates (e.g. a slice from the simplified stage) skip
    recomputing it.
    """
    cands = list(cands)
    if not cands:
        return EMPTY_RESULT
    if len(cands) == 1:
        c = cands[0]
        if c.similarity > 0:
            return MatchResult(c.similarity, (c,))
        return EMPTY_RESULT

    compat = _compat if _compat is not None else _compatibility_matrix(cands, left, right)

    if stage is MatchStage.SIMPLIFIED:
        k = min(K_SIMPLIFIED, len(cands) - 1)
        part = np.partition(compat, len(cands) - k, axis=1)[:, -k:]
        scores = part.sum(axis=1)
        keep = max(1, len(cands) // 2)
        order = np.argsort(-scores, kind="stable")[:keep]
        order = np.sort(order)
        surv = [cands[i] for i in order]
        sub = compat[np.ix_(order, order)]
        return MatchResult(_survivor_score(surv, sub), surv)

    # full stage: principal eigenvector by power iteration
    x = np.full(len(cands), 1.0 / np.sqrt(len(cands)))
    for _ in range(POWER_ITERS):
        nxt = compat @ x
        n = np.linalg.norm(nxt)
        if n < 1e-12:
            break
        x = nxt / n
    x = np.abs(x)

    rho = RHO_FRACTION * x.max() if x.max() > 0 else 0.0
    order = np.argsort(-x, kind="stable")
    used_l, used_r = set(), set()
    chosen = []
    for idx in order:
        if x[idx] < rho or x[idx] <= 0:
            break
        c = cands[idx]
        if c.latent_index in used_l or c.reference_index in used_r:
            continue
        if c.similarity <= 0:
            continue
        used_l.add(c.latent_index)
        used_r.add(c.reference_index)
        chosen.append(idx)
    if not chosen:
        return EMPTY_RESULT
    chosen = sorted(chosen)
    surv = [cands[i] for i in chosen]
    sub = compat[np.ix_(chosen, chosen)]
    return MatchResult(_survivor_score(surv, sub), surv)


def _two_stage_match(cands, left, right):
    """Simplified stage then full stage, computing the candidate
    compatibility matrix once and slicing it for the survivors."""
    cands = list(cands)
    if not cands:
        return EMPTY_RESULT
    if len(cands) == 1:
        return second_order_match(cands, left, right, MatchStage.FULL)
    compat = _compatibility_matrix(cands, left, right)
    k = min(K_SIMPLIFIED, len(cands) - 1)
    part = np.partition(compat, len(cands) - k, axis=1)[:, -k:]
    scores = part.sum(axis=1)
    keep = max(1, len(cands) // 2)
    order = np.sort(np.argsort(-scores, kind="stable")[:keep])
    surv = [cands[i] for i in order]
    sub = compat[np.ix_(order, order)]
    return second_order_match(surv, left, right, MatchStage.FULL, _compat=sub)


def compare_minutiae_templates(left, right, top_n=TOP_N_MINUTIAE):
    """Full pipeline for one latent minutiae template against one reference."""
    if len(left) == 0 or len(right) == 0:
        return EMPTY_RESULT
    s = similarity_matrix(left, right)
    s_norm = normalize_similarity(s)
    cands = select_top_correspondences(s_norm, top_n, SelectionMode.MINUTIAE)
    return _two_stage_match(cands, left, right)


def texture_similarity_matrix(latent, reference, codebook, d0, tables=None):
    """Similarity = max(0, D0 - ADC distance); latent side compressed,
    reference side quantized.

    tables may be the probe's precomputed ADC tables (ideally already run
    through transpose_adc_tables when scanning a gallery).
    """
    if len(latent) == 0 or len(reference) == 0:
        return np.zeros((len(latent), len(reference)), dtype=np.float32)
    if tables is None:
        tables = build_adc_table(latent.descriptor_matrix().astype(float), codebook)
    codes = reference.descriptor_matrix()
    dist = adc_distance_matrix(tables, codes)
    return np.maximum(np.float32(d0) - dist, np.float32(0.0))


def compare_texture_templates(latent, reference, codebook, d0,
                              tables=None, top_n=TOP_N_TEXTURE):
    """Texture-template comparison: ADC similarities, top-2-per-row selection,
    then the same two-stage graph matching."""
    if len(latent) == 0 or len(reference) == 0:
        return EMPTY_RESULT
    s_raw = texture_similarity_matrix(latent, reference, codebook, d0, tables)
    if not np.any(s_raw > 0):
        return EMPTY_RESULT
    s_norm = normalize_similarity(s_raw)
    cands = select_top_correspondences(s_norm, top_n, SelectionMode.TEXTURE, s_raw)
    cands = [c for c in cands if c.similarity > 0]
    return _two_stage_match(cands, latent, reference)


def fuse_scores(s1, s2, s3, st, weights=FUSION_WEIGHTS):
    """Weighted sum of the three minutiae scores and the texture score."""
    w1, w2, w3, w4 = weights
    return w1 * s1 + w2 * s2 + w3 * s3 + w4 * st
