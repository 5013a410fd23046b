"""Per-minutia descriptors: oriented-patch extraction, cosine-preserving
compression (192 -> 96) and product quantization of reference texture
descriptors (96 -> 16 codeword indices).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is in the default install
    _HAVE_NUMBA = False

from .core import COMPRESSED_LEN, PQ_SUBVECTORS, RAW_LEN, Descriptor, DescriptorStage

PATCH_SIZES = (96, 96, 80)   # extents in image pixels, per patch
PATCH_RES = 32               # all patches resampled to this grid
GRID_CELLS = 4               # 4x4 spatial cells
ORI_BINS = 4                 # gradient orientation bins over [0, pi)
SUB_DIM = COMPRESSED_LEN // PQ_SUBVECTORS  # 6

KMEANS_K = 256
KMEANS_ITERS = 50


@dataclass(frozen=True)
class PatchSpec:
    sizes: tuple = PATCH_SIZES


def _unit(v):
    n = np.linalg.norm(v)
    if n < 1e-12:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / n


def _sample_rotated_patch(image, x, y, theta, size, res=PATCH_RES):
    """Bilinear sample a size x size region centered at (x, y), rotated so the
    minutia orientation maps to the patch's +x axis; edge-padded."""
    half = size / 2.0
    coords = (np.arange(res) + 0.5) / res * size - half
    u, v = np.meshgrid(coords, coords)  # u along orientation, v across
    c, s = np.cos(theta), np.sin(theta)
    xs = x + u * c - v * s
    ys = y + u * s + v * c
    return ndimage.map_coordinates(np.asarray(image, dtype=float),
                                   [ys, xs], order=1, mode="nearest")


def _gradient_histogram(patch):
    """64-value summary: magnitude-weighted gradient-orientation histograms
    (4 bins over [0, pi)) on a 4x4 spatial grid."""
    gy, gx = np.gradient(patch)
    mag = np.hypot(gx, gy)
    ori = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((ori / (np.pi / ORI_BINS)).astype(int), ORI_BINS - 1)
    cell = PATCH_RES // GRID_CELLS
    out = np.zeros(GRID_CELLS * GRID_CELLS * ORI_BINS)
    for cy in range(GRID_CELLS):
        for cx in range(GRID_CELLS):
            sl = (slice(cy * cell, (cy + 1) * cell), slice(cx * cell, (cx + 1) * cell))
            b = bins[sl].ravel()
            m = mag[sl].ravel()
            idx = (cy * GRID_CELLS + cx) * ORI_BINS
            out[idx:idx + ORI_BINS] = np.bincount(b, weights=m, minlength=ORI_BINS)
    return out


def extract_descriptor(image, minutia, spec=PatchSpec()):
    """Raw 192-value descriptor from three oriented patches, unit-normalized."""
    img = image.pixels if hasattr(image, "pixels") else np.asarray(image, dtype=float)
    parts = []
    for size in spec.sizes:
        patch = _sample_rotated_patch(img, minutia.x, minutia.y, minutia.theta, size)
        parts.append(_unit(_gradient_histogram(patch)))
    raw = _unit(np.concatenate(parts))
    return Descriptor(DescriptorStage.RAW, raw)


# ---------------------------------------------------------------------------
# Cosine-preserving compressor: four affine stages, tanh between them.
# Trained so output-pair cosines track input-pair cosines.
# ---------------------------------------------------------------------------

COMPRESSOR_DIMS = (RAW_LEN, 176, 144, 112, COMPRESSED_LEN)


@dataclass(frozen=True)
class CompressorModel:
    weights: tuple  # 4 matrices
    biases: tuple   # 4 vectors

    def __post_init__(self):
        ws = tuple(np.ascontiguousarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in self.biases)
        for a in ws + bs:
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    def forward(self, x):
        """Unnormalized network output for a batch (n, 192) or vector."""
        a = np.atleast_2d(np.asarray(x, dtype=float))
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if k != last:
                a = np.tanh(a)
        return a

    def save(self, path):
        with open(path, "wb") as f:
            f.write(struct.pack("<4sHB", b"LFCM", 1, len(self.weights)))
            for w, b in zip(self.weights, self.biases):
                f.write(struct.pack("<II", *w.shape))
                f.write(w.astype("<f8").tobytes())
                f.write(b.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            data = f.read()
        magic, version, n = struct.unpack_from("<4sHB", data, 0)
        if magic != b"LFCM" or version != 1:
            raise ValueError("not a compressor model file")
        pos = struct.calcsize("<4sHB")
        ws, bs = [], []
        for _ in range(n):
            din, dout = struct.unpack_from("<II", data, pos)
            pos += 8
            w = np.frombuffer(data, dtype="<f8", count=din * dout, offset=pos).reshape(din, dout)
            pos += din * dout * 8
            b = np.frombuffer(data, dtype="<f8", count=dout, offset=pos)
            pos += dout * 8
            ws.append(w)
            bs.append(b)
        return cls(tuple(ws), tuple(bs))


def _init_params(rng, dims=COMPRESSOR_DIMS):
    ws, bs = [], []
    for din, dout in zip(dims[:-1], dims[1:]):
        # small scale keeps tanh near its linear regime at init
        ws.append(rng.normal(0.0, 0.5 / np.sqrt(din), (din, dout)))
        bs.append(np.zeros(dout))
    return ws, bs


def _forward_cached(ws, bs, x):
    acts = [x]
    pre = []
    a = x
    last = len(ws) - 1
    for k, (w, b) in enumerate(zip(ws, bs)):
        z = a @ w + b
        pre.append(z)
        a = np.tanh(z) if k != last else z
        acts.append(a)
    return acts, pre


def _backward(ws, acts, pre, grad_out):
    """Gradients of a scalar loss wrt parameters, given d(loss)/d(output)."""
    gws = [None] * len(ws)
    gbs = [None] * len(ws)
    g = grad_out
    for k in range(len(ws) - 1, -1, -1):
        if k != len(ws) - 1:
            g = g * (1.0 - np.tanh(pre[k]) ** 2)
        gws[k] = acts[k].T @ g
        gbs[k] = g.sum(axis=0)
        g = g @ ws[k].T
    return gws, gbs


def _pair_cosine_loss_grads(ws, bs, xa, xb, target):
    """Loss mean (cos_out - target)^2 over the pair batch, plus gradients."""
    acts_a, pre_a = _forward_cached(ws, bs, xa)
    acts_b, pre_b = _forward_cached(ws, bs, xb)
    ya, yb = acts_a[-1], acts_b[-1]
    na = np.linalg.norm(ya, axis=1, keepdims=True) + 1e-12
    nb = np.linalg.norm(yb, axis=1, keepdims=True) + 1e-12
    ua, ub = ya / na, yb / nb
    cos = np.sum(ua * ub, axis=1)
    err = cos - target
    loss = float(np.mean(err ** 2))
    dcos = (2.0 * err / len(err))[:, None]
    ga = dcos * (ub - cos[:, None] * ua) / na
    gb = dcos * (ua - cos[:, None] * ub) / nb
    gws_a, gbs_a = _backward(ws, acts_a, pre_a, ga)
    gws_b, gbs_b = _backward(ws, acts_b, pre_b, gb)
    gws = [wa + wb for wa, wb in zip(gws_a, gws_b)]
    gbs = [ba + bb for ba, bb in zip(gbs_a, gbs_b)]
    return loss, gws, gbs


def train_compressor(corpus, epochs=40, batch=256, lr=1e-3, seed=0,
                     min_corpus=10_000, dims=COMPRESSOR_DIMS):
    """Train the compressor on random pairs drawn from a raw-descriptor corpus.

    Deterministic given the seed.  Returns (model, per-epoch losses).
    """
    corpus = np.asarray(corpus, dtype=float)
    if corpus.ndim != 2 or corpus.shape[1] != dims[0]:
        raise ValueError(f"corpus must be (n, {dims[0]})")
    if len(corpus) < min_corpus:
        raise ValueError(f"corpus too small: {len(corpus)} < {min_corpus}")
    rng = np.random.default_rng(seed)
    ws, bs = _init_params(rng, dims)

    m_w = [np.zeros_like(w) for w in ws]
    v_w = [np.zeros_like(w) for w in ws]
    m_b = [np.zeros_like(b) for b in bs]
    v_b = [np.zeros_like(b) for b in bs]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0

    n = len(corpus)
    steps = max(1, n // batch)
    losses = []
    for _ in range(epochs):
        epoch_loss = 0.0
        for _ in range(steps):
            ia = rng.integers(0, n, batch)
            ib = rng.integers(0, n, batch)
            xa, xb = corpus[ia], corpus[ib]
            target = np.sum(_rows_unit(xa) * _rows_unit(xb), axis=1)
            loss, gws, gbs = _pair_cosine_loss_grads(ws, bs, xa, xb, target)
            epoch_loss += loss
            t += 1
            corr = np.sqrt(1 - beta2 ** t) / (1 - beta1 ** t)
            for k in range(len(ws)):
                m_w[k] = beta1 * m_w[k] + (1 - beta1) * gws[k]
                v_w[k] = beta2 * v_w[k] + (1 - beta2) * gws[k] ** 2
                ws[k] -= lr * corr * m_w[k] / (np.sqrt(v_w[k]) + eps)
                m_b[k] = beta1 * m_b[k] + (1 - beta1) * gbs[k]
                v_b[k] = beta2 * v_b[k] + (1 - beta2) * gbs[k] ** 2
                bs[k] -= lr * corr * m_b[k] / (np.sqrt(v_b[k]) + eps)
        losses.append(epoch_loss / steps)
    return CompressorModel(tuple(ws), tuple(bs)), losses


def _rows_unit(x):
    return x / (np.linalg.norm(x, axis=1, keepdims=True) + 1e-12)


def compress_descriptor(model, d):
    """Forward pass plus unit normalization; raw length 192 -> compressed 96."""
    values = d.values if isinstance(d, Descriptor) else np.asarray(d, dtype=float)
    if values.shape != (RAW_LEN,):
        raise ValueError(f"raw descriptor of length {RAW_LEN} required")
    out = _unit(model.forward(values)[0])
    return Descriptor(DescriptorStage.COMPRESSED, out)


def compress_batch(model, raws):
    """(n, 192) -> (n, 96) unit rows."""
    raws = np.asarray(raws, dtype=float)
    if raws.shape[1] != RAW_LEN:
        raise ValueError(f"raw descriptors of length {RAW_LEN} required")
    return _rows_unit(model.forward(raws))


# ---------------------------------------------------------------------------
# Product quantization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PQCodebook:
    centroids: np.ndarray  # (m, 256, sub_dim)

    def __post_init__(self):
        c = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if c.ndim != 3 or c.shape[1] != KMEANS_K:
            raise ValueError(f"centroids must be (m, {KMEANS_K}, sub_dim)")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids must be finite")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def m(self):
        return self.centroids.shape[0]

    @property
    def sub_dim(self):
        return self.centroids.shape[2]

    def save(self, path):
        m, k, d = self.centroids.shape
        with open(path, "wb") as f:
            f.write(struct.pack("<4sHIII", b"LFPQ", 1, m, k, d))
            f.write(self.centroids.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            data = f.read()
        magic, version, m, k, d = struct.unpack_from("<4sHIII", data, 0)
        if magic != b"LFPQ" or version != 1:
            raise ValueError("not a codebook file")
        pos = struct.calcsize("<4sHIII")
        c = np.frombuffer(data, dtype="<f8", offset=pos).reshape(m, k, d)
        return cls(c)


def _kmeans(points, k, iters, rng):
    """Deterministic k-means: farthest-point init, empty clusters reseeded
    from the point farthest from its assigned centroid."""
    n = len(points)
    first = int(rng.integers(0, n))
    chosen = [first]
    d2 = np.sum((points - points[first]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    centroids = points[chosen].copy()

    for _ in range(iters):
        d2 = (np.sum(points ** 2, axis=1)[:, None]
              - 2.0 * points @ centroids.T
              + np.sum(centroids ** 2, axis=1)[None, :])
        assign = np.argmin(d2, axis=1)
        new = np.zeros_like(centroids)
        counts = np.bincount(assign, minlength=k)
        for dim in range(points.shape[1]):
            new[:, dim] = np.bincount(assign, weights=points[:, dim], minlength=k)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        if (~nonempty).any():
            resid = d2[np.arange(n), assign]
            order = np.argsort(-resid)
            oi = 0
            for ci in np.nonzero(~nonempty)[0]:
                new[ci] = points[order[oi]]
                oi += 1
        if np.allclose(new, centroids):
            centroids = new
            break
        centroids = new
    return centroids


def train_pq(corpus, m=PQ_SUBVECTORS, seed=0, iters=KMEANS_ITERS):
    """Independent k-means per subvector slice of a compressed corpus."""
    corpus = np.asarray(corpus, dtype=float)
    if corpus.ndim != 2 or corpus.shape[1] % m != 0:
        raise ValueError(f"m={m} must divide the descriptor length")
    sub = corpus.shape[1] // m
    if len(corpus) < KMEANS_K:
        raise ValueError(f"need at least {KMEANS_K} descriptors per subquantizer")
    rng = np.random.default_rng(seed)
    centroids = np.zeros((m, KMEANS_K, sub))
    for i in range(m):
        centroids[i] = _kmeans(np.ascontiguousarray(corpus[:, i * sub:(i + 1) * sub]),
                               KMEANS_K, iters, rng)
    return PQCodebook(centroids)


def quantize_descriptor(codebook, y):
    """Nearest centroid per subvector (Euclidean, ties to the lowest index)."""
    values = y.values if isinstance(y, Descriptor) else np.asarray(y, dtype=float)
    m, sub = codebook.m, codebook.sub_dim
    if values.shape != (m * sub,):
        raise ValueError(f"descriptor of length {m * sub} required")
    idx = np.empty(m, dtype=np.uint8)
    for i in range(m):
        d2 = np.sum((codebook.centroids[i] - values[i * sub:(i + 1) * sub]) ** 2, axis=1)
        idx[i] = int(np.argmin(d2))
    return Descriptor(DescriptorStage.QUANTIZED, idx)


def reconstruct(codebook, qd):
    idx = qd.values if isinstance(qd, Descriptor) else np.asarray(qd)
    return np.concatenate([codebook.centroids[i, idx[i]] for i in range(codebook.m)])


def build_adc_table(x, codebook):
    """Per-probe lookup: table[i, j] = ||x_i - c^i_j|| for one descriptor, or
    (n, m, 256) for a batch."""
    arr = x.values if isinstance(x, Descriptor) else np.asarray(x, dtype=float)
    single = arr.ndim == 1
    batch = np.atleast_2d(arr)
    m, sub = codebook.m, codebook.sub_dim
    if batch.shape[1] != m * sub:
        raise ValueError(f"descriptor length {m * sub} required")
    parts = batch.reshape(len(batch), m, sub)
    diff = parts[:, :, None, :] - codebook.centroids[None, :, :, :]
    table = np.sqrt(np.sum(diff ** 2, axis=3))
    return table[0] if single else table


def adc_distance(x, qy, codebook, table=None):
    """Eq. of the asymmetric distance: sum over subvectors of the Euclidean
    distance from the probe subvector to the reference codeword centroid."""
    idx = qy.values if isinstance(qy, Descriptor) else np.asarray(qy)
    if table is None:
        table = build_adc_table(x, codebook)
    return float(table[np.arange(codebook.m), idx].sum())


def calibrate_d0(corpus, codebook, noise=0.05, percentile=95.0, seed=0):
    """Similarity offset D0: the given percentile of genuine-pair ADC
    distances, where a genuine pair is a corpus descriptor and a noisy copy."""
    corpus = np.asarray(corpus, dtype=float)
    rng = np.random.default_rng(seed)
    noisy = corpus + noise * rng.normal(0, 1, corpus.shape)
    noisy /= np.linalg.norm(noisy, axis=1, keepdims=True)
    dists = []
    for x, y in zip(corpus, noisy):
        q = quantize_descriptor(codebook, y)
        dists.append(adc_distance(x, q, codebook))
    return float(np.percentile(dists, percentile))


if _HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=True)
    def _adc_accumulate(tables_t, codes, out):  # pragma: no cover - jitted
        m = tables_t.shape[0]
        n_l = tables_t.shape[2]
        for j in range(codes.shape[0]):
            col = out[j]
            row = tables_t[0, codes[j, 0]]
            for i in range(n_l):
                col[i] = row[i]
            for s in range(1, m):
                row = tables_t[s, codes[j, s]]
                for i in range(n_l):
                    col[i] += row[i]


class TransposedTables:
    """Probe ADC tables re-laid-out as contiguous float32 (m, 256, n_l).

    Built once per probe with transpose_adc_tables and reused against every
    reference in a gallery; the layout makes the code-driven row gather in
    adc_distance_matrix stream contiguously over the latent axis.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = data

    @property
    def n(self):
        return self.data.shape[2]


def transpose_adc_tables(tables):
    arr = np.ascontiguousarray(
        np.asarray(tables).transpose(1, 2, 0), dtype=np.float32)
    return TransposedTables(arr)


def adc_distance_matrix(tables, codes):
    """Probe tables x (n_r, m) uint8 codes -> (n_l, n_r) float32 distances.

    tables is either the (n_l, m, 256) output of build_adc_table or a
    TransposedTables; pre-transposing is worthwhile whenever one probe is
    compared against many references.  The gather-and-sum is the hot loop of
    a texture comparison and is jitted when numba is importable.
    """
    if not isinstance(tables, TransposedTables):
        tables = transpose_adc_tables(tables)
    tables_t = tables.data
    m, _, n_l = tables_t.shape
    codes = np.ascontiguousarray(codes, dtype=np.uint8)
    if _HAVE_NUMBA:
        out = np.empty((len(codes), n_l), dtype=np.float32)
        _adc_accumulate(tables_t, codes, out)
        return out.T
    acc = tables_t[0][codes[:, 0]].copy()
    buf = np.empty_like(acc)
    for s in range(1, m):
        np.take(tables_t[s], codes[:, s], axis=0, out=buf)
        acc += buf
    return acc.T
