"""Synthetic data: ridge images, descriptor corpora and desk-scale template
galleries.  Everything is seeded and deterministic; this is the data source
for the self-contained evaluation suite and the demo scripts.
"""

from __future__ import annotations

import numpy as np

from .core import (COMPRESSED_LEN, RAW_LEN, Descriptor, DescriptorStage,
                   Minutia, MinutiaKind, MinutiaeTemplate, SourceTag,
                   TextureTemplate, wrap_angle)
from .descriptor import quantize_descriptor


def sinusoid_image(h, w, orientation, spacing, amplitude=60.0, mean=128.0):
    """Plain ridge wave over the full frame, values in [0, 255]."""
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    phase = (-xs * np.sin(orientation) + ys * np.cos(orientation)) * (2 * np.pi / spacing)
    return np.clip(mean + amplitude * np.cos(phase), 0, 255)


def whorl_image(h, w, spacing=9.0, amplitude=70.0, mean=128.0, margin=48):
    """Concentric-ring ridge pattern inside an elliptical foreground; a cheap
    stand-in for a print with smoothly varying orientation."""
    cy, cx = h / 2.0, w / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    r = np.hypot(ys - cy, xs - cx)
    img = mean + amplitude * np.cos(2 * np.pi * r / spacing)
    fg = ((ys - cy) / (h / 2.0 - margin)) ** 2 + ((xs - cx) / (w / 2.0 - margin)) ** 2 <= 1.0
    out = np.full((h, w), mean)
    out[fg] = img[fg]
    return np.clip(out, 0, 255)


def random_minutiae(rng, count, h, w, min_sep=16.0, margin=8.0, max_tries=10_000):
    """Uniform minutiae with pairwise separation >= min_sep."""
    pts = []
    tries = 0
    while len(pts) < count and tries < max_tries:
        tries += 1
        x = rng.uniform(margin, w - margin)
        y = rng.uniform(margin, h - margin)
        if any((x - p[0]) ** 2 + (y - p[1]) ** 2 < min_sep ** 2 for p in pts):
            continue
        pts.append((x, y, rng.uniform(0, 2 * np.pi)))
    return [Minutia(x, y, t) for x, y, t in pts]


def descriptor_corpus(rng, count, dim=RAW_LEN, latent_dim=48):
    """Unit descriptors concentrated near a low-dimensional subspace, so that
    cosine structure survives compression to 96 values."""
    mix = rng.normal(0, 1, (latent_dim, dim))
    z = rng.normal(0, 1, (count, latent_dim))
    x = z @ mix + 0.05 * rng.normal(0, 1, (count, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def compressed_corpus(rng, count, dim=COMPRESSED_LEN, latent_dim=32):
    """Unit 96-d vectors with cluster structure, for PQ training."""
    return descriptor_corpus(rng, count, dim=dim, latent_dim=latent_dim)


def _unit_rows(x):
    return x / (np.linalg.norm(x, axis=1, keepdims=True) + 1e-12)


def synthetic_reference(rng, codebook, n_minutiae=40, n_virtual=150,
                        h=512, w=512, latent_dim=32):
    """One reference-side template pair with random geometry and clustered
    compressed descriptors; texture descriptors quantized."""
    minutiae = random_minutiae(rng, n_minutiae, h, w, min_sep=12.0)
    descs = _unit_rows(compressed_corpus(rng, len(minutiae), latent_dim=latent_dim))
    mt = MinutiaeTemplate(
        minutiae,
        [Descriptor(DescriptorStage.COMPRESSED, d) for d in descs],
        SourceTag.REFERENCE)

    virtual = random_minutiae(rng, n_virtual, h, w, min_sep=8.0)
    virtual = [Minutia(m.x, m.y, m.theta, MinutiaKind.VIRTUAL) for m in virtual]
    vdescs = _unit_rows(compressed_corpus(rng, len(virtual), latent_dim=latent_dim))
    tt = TextureTemplate(
        virtual, [quantize_descriptor(codebook, d) for d in vdescs])
    # keep the unquantized texture descriptors so a probe can be derived
    return mt, tt, vdescs


def perturbed_probe(rng, mt, vdescs, tt, max_rotation=np.deg2rad(30),
                    max_translation=40.0, delete_frac=0.2, spurious_frac=0.1,
                    noise=0.05, h=512, w=512):
    """Probe templates: rigid transform of the reference geometry, minutiae
    dropout, spurious additions, descriptor noise.  Returns (3 minutiae
    templates, texture template) shaped like a latent probe."""
    angle = rng.uniform(-max_rotation, max_rotation)
    t = rng.uniform(-max_translation, max_translation, 2)
    c, s = np.cos(angle), np.sin(angle)
    cx, cy = w / 2.0, h / 2.0

    def transform(m):
        x = c * (m.x - cx) - s * (m.y - cy) + cx + t[0]
        y = s * (m.x - cx) + c * (m.y - cy) + cy + t[1]
        return x, y, float(wrap_angle(m.theta + angle))

    def jitter(d):
        v = d + noise * rng.normal(0, 1, d.shape)
        return v / np.linalg.norm(v)

    keep = rng.random(len(mt)) >= delete_frac
    minutiae, descs = [], []
    for m, d, k in zip(mt.minutiae, mt.descriptor_matrix(), keep):
        if not k:
            continue
        x, y, th = transform(m)
        minutiae.append(Minutia(x, y, th, m.kind))
        descs.append(jitter(d.astype(float)))
    n_spur = int(round(spurious_frac * len(mt)))
    for m in random_minutiae(rng, n_spur, h, w, min_sep=4.0):
        minutiae.append(m)
        descs.append(jitter(_unit_rows(rng.normal(0, 1, (1, COMPRESSED_LEN)))[0]))
    probe_mt = MinutiaeTemplate(
        minutiae, [Descriptor(DescriptorStage.COMPRESSED, d) for d in descs],
        SourceTag.SET_1)

    vkeep = rng.random(len(tt)) >= delete_frac
    vmin, vdesc = [], []
    for m, d, k in zip(tt.minutiae, vdescs, vkeep):
        if not k:
            continue
        x, y, th = transform(m)
        vmin.append(Minutia(x, y, th, MinutiaKind.VIRTUAL))
        vdesc.append(jitter(d.astype(float)))
    probe_tt = TextureTemplate(
        vmin, [Descriptor(DescriptorStage.COMPRESSED, d) for d in vdesc])
    return (probe_mt,
            MinutiaeTemplate(probe_mt.minutiae, probe_mt.descriptors, SourceTag.SET_3),
            MinutiaeTemplate(probe_mt.minutiae, probe_mt.descriptors, SourceTag.SET_6),
            probe_tt)
