"""Template construction, gallery persistence, probe-vs-gallery search and
CMC evaluation.

The gallery index is immutable once loaded; searches never mutate it, so it
can be shared across forked worker processes.
"""

from __future__ import annotations

import json
import multiprocessing as mp
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import matcher, minutiae_map as mmap_mod, preprocess, ridges
from .core import (DescriptorStage, Minutia, MinutiaKind, MinutiaeTemplate,
                   SourceTag, TextureTemplate, CandidateEntry, CandidateList,
                   deserialize_record, flow_to_minutia_angle, serialize_record)
from .descriptor import (PatchSpec, build_adc_table, compress_batch,
                         transpose_adc_tables,
                         extract_descriptor, quantize_descriptor)
from .minutiae_map import EncoderParams


@dataclass(frozen=True)
class VirtualMinutiaGrid:
    stride: int = 32
    border_margin: int = 16

    def __post_init__(self):
        if self.stride <= 0:
            raise ValueError("stride must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable threshold in one place; see Config file I/O below."""

    sigma_s: float = 3.0
    sigma_o: float = np.pi / 6
    m_t: float = 0.25
    s_r: float = 0.35
    alpha: float = 300.0
    top_n_minutiae: int = 120
    top_n_texture: int = 200
    weights: tuple = matcher.FUSION_WEIGHTS
    d0: float = 1.0
    stride: int = 32
    border_margin: int = 16
    topk: int = 20

    @property
    def encoder_params(self):
        return EncoderParams(self.sigma_s, self.sigma_o)

    @property
    def grid(self):
        return VirtualMinutiaGrid(self.stride, self.border_margin)


_CONFIG_FLOATS = {"sigma_s", "sigma_o", "m_t", "s_r", "alpha", "d0"}
_CONFIG_INTS = {"top_n_minutiae", "top_n_texture", "stride", "border_margin", "topk"}


def load_config(path):
    """Text key-value config: `name = value`, one per line, # comments."""
    values = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key in _CONFIG_FLOATS:
                values[key] = float(val)
            elif key in _CONFIG_INTS:
                values[key] = int(val)
            elif key == "weights":
                values[key] = tuple(float(v) for v in val.split(","))
            else:
                raise ValueError(f"unknown config key {key!r}")
    return PipelineConfig(**values)


def save_config(config, path):
    with open(path, "w") as f:
        for key in _CONFIG_FLOATS | _CONFIG_INTS:
            f.write(f"{key} = {getattr(config, key)}\n")
        f.write("weights = " + ",".join(str(w) for w in config.weights) + "\n")


@dataclass(frozen=True)
class LatentTemplates:
    minutiae_templates: tuple  # 3 MinutiaeTemplates (sets 1, 3, 6)
    texture_template: TextureTemplate

    def serialize(self):
        return serialize_record(list(self.minutiae_templates) + [self.texture_template])

    @classmethod
    def deserialize(cls, data):
        parts = deserialize_record(data)
        if len(parts) != 4:
            raise ValueError("latent record must hold 3 minutiae + 1 texture template")
        return cls(tuple(parts[:3]), parts[3])


@dataclass(frozen=True)
class ReferenceTemplates:
    minutiae_template: MinutiaeTemplate
    texture_template: TextureTemplate

    def serialize(self):
        return serialize_record([self.minutiae_template, self.texture_template])

    @classmethod
    def deserialize(cls, data):
        parts = deserialize_record(data)
        if len(parts) != 2:
            raise ValueError("reference record must hold 1 minutiae + 1 texture template")
        return cls(parts[0], parts[1])


def extract_virtual_minutiae(fields, grid=VirtualMinutiaGrid()):
    """Raster-scan lattice points inside the ROI, at least border_margin from
    the mask boundary; orientation from the nearest block's ridge flow."""
    if not fields.roi.any():
        return []
    block = fields.block_size
    bh, bw = fields.shape
    h_px, w_px = bh * block, bw * block
    roi_px = np.kron(fields.roi, np.ones((block, block), bool))
    padded = np.pad(roi_px, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    out = []
    for y in range(grid.stride, h_px, grid.stride):
        for x in range(grid.stride, w_px, grid.stride):
            if not roi_px[y, x] or dist[y, x] < grid.border_margin:
                continue
            by, bx = min(y // block, bh - 1), min(x // block, bw - 1)
            theta = flow_to_minutia_angle(fields.orientation[by, bx])
            out.append(Minutia(float(x), float(y), float(theta), MinutiaKind.VIRTUAL))
    return out


def _virtual_with_kind(minutiae):
    return [replace(m, kind=MinutiaKind.VIRTUAL) for m in minutiae]


def _compressed_descriptors(image, minutiae, compressor, spec=PatchSpec()):
    if not minutiae:
        return []
    raws = np.stack([extract_descriptor(image, m, spec).values for m in minutiae])
    comp = compress_batch(compressor, raws)
    from .core import Descriptor
    return [Descriptor(DescriptorStage.COMPRESSED, row) for row in comp]


def _dump_debug(debug_dir, stem, processed, fields):
    os.makedirs(debug_dir, exist_ok=True)
    for proc in processed:
        preprocess.write_pgm(
            proc.pixels,
            os.path.join(debug_dir, f"{stem}_{proc.pipeline_tag.value}.pgm"))
    ridges.export_fields(fields, os.path.join(debug_dir, f"{stem}_fields.bin"))
    preprocess.write_pgm(ridges.render_fields_overlay(fields),
                         os.path.join(debug_dir, f"{stem}_fields.pgm"))


def build_latent_templates(image, compressor, dictionary=None,
                           config=PipelineConfig(), debug_dir=None,
                           debug_stem="latent"):
    """Latent template construction: enhancement, ridge fields and ROI, five
    processed images, five minutiae sets, voting, then descriptors for sets 1,
    3 and 6 plus a virtual-minutiae texture template.

    debug_dir, when set, collects every intermediate processed image as a
    portable graymap (tag-suffixed) plus the ridge fields dump and overlay.
    """
    image = np.asarray(image, dtype=float)
    if dictionary is None:
        dictionary = ridges.build_dictionary()

    decomposed = preprocess.decompose_texture(image)
    enhanced = preprocess.stft_enhance(decomposed.pixels)
    fields = ridges.estimate_ridge_fields(enhanced.pixels, image, dictionary,
                                          config.alpha)
    fields = ridges.segment_roi(fields, config.s_r)

    contrast = preprocess.contrast_enhance(image)
    processed = [
        preprocess.stft_enhance(image, tag=preprocess.PipelineTag.STFT),
        preprocess.stft_enhance(contrast.pixels, tag=preprocess.PipelineTag.CONTRAST_STFT),
        decomposed,
        preprocess.gabor_enhance(decomposed.pixels, fields,
                                 tag=preprocess.PipelineTag.GABOR),
        preprocess.gabor_enhance(contrast.pixels, fields,
                                 tag=preprocess.PipelineTag.CONTRAST_GABOR),
    ]

    if debug_dir is not None:
        _dump_debug(debug_dir, debug_stem, processed, fields)

    params = config.encoder_params
    sets = []
    for proc in processed:
        detected = mmap_mod.detect_minutiae_baseline(proc, fields, params)
        sets.append(mmap_mod.decode_minutiae_map(detected, config.m_t))
    common = mmap_mod.vote_common_minutiae(sets)

    desc_image = enhanced.pixels
    templates = []
    for tag, minutiae in ((SourceTag.SET_1, sets[0]), (SourceTag.SET_3, sets[2]),
                          (SourceTag.SET_6, common)):
        descs = _compressed_descriptors(desc_image, minutiae, compressor)
        templates.append(MinutiaeTemplate(minutiae, descs, tag))

    virtual = extract_virtual_minutiae(fields, config.grid)
    vdescs = _compressed_descriptors(desc_image, virtual, compressor)
    texture = TextureTemplate(virtual, vdescs)
    return LatentTemplates(tuple(templates), texture)


def _reference_roi(image, fields, s_r):
    """Gradient-energy ROI for reference prints: blocks whose local contrast
    clears a threshold, smoothed like the latent ROI."""
    img = np.asarray(image, dtype=float)
    block = fields.block_size
    bh, bw = fields.shape
    energy = np.zeros((bh, bw))
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    for by in range(bh):
        for bx in range(bw):
            tile = mag[by * block:(by + 1) * block, bx * block:(bx + 1) * block]
            energy[by, bx] = tile.mean() if tile.size else 0.0
    mask = energy > max(1.0, 0.2 * energy.max())
    selem = np.ones((3, 3), bool)
    mask = ndimage.binary_erosion(mask, structure=selem, border_value=1)
    mask = ndimage.binary_dilation(mask, structure=selem)
    mask = ndimage.binary_dilation(mask, structure=selem)
    mask = ndimage.binary_erosion(mask, structure=selem, border_value=1)
    labels, n = ndimage.label(mask)
    if n > 1:
        sizes = ndimage.sum(mask, labels, index=np.arange(1, n + 1))
        mask = labels == (1 + int(np.argmax(sizes)))
    return ridges.RidgeFields(fields.orientation, fields.spacing, fields.quality,
                              mask, fields.block_size)


def build_reference_template(image, compressor, codebook, dictionary=None,
                             config=PipelineConfig()):
    """Reference enrollment: baseline detection on the unprocessed image,
    gradient ROI, virtual minutiae; texture descriptors quantized."""
    image = np.asarray(image, dtype=float)
    if dictionary is None:
        dictionary = ridges.build_dictionary()
    fields = ridges.estimate_ridge_fields(image, image, dictionary, config.alpha)
    fields = _reference_roi(image, fields, config.s_r)

    params = config.encoder_params
    proc = preprocess.ProcessedImage(image, preprocess.PipelineTag.STFT)
    detected = mmap_mod.detect_minutiae_baseline(proc, fields, params)
    minutiae = mmap_mod.decode_minutiae_map(detected, config.m_t)
    descs = _compressed_descriptors(image, minutiae, compressor)
    mt = MinutiaeTemplate(minutiae, descs, SourceTag.REFERENCE)

    virtual = extract_virtual_minutiae(fields, config.grid)
    vdescs = _compressed_descriptors(image, virtual, compressor)
    qdescs = [quantize_descriptor(codebook, d) for d in vdescs]
    tt = TextureTemplate(virtual, qdescs)
    return ReferenceTemplates(mt, tt)


# ---------------------------------------------------------------------------
# Gallery
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GalleryIndex:
    entries: tuple  # ((reference_id, ReferenceTemplates), ...) in manifest order
    manifest_path: str = ""

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [rid for rid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate reference ids in gallery")

    def __len__(self):
        return len(self.entries)

    def get(self, reference_id):
        for rid, ref in self.entries:
            if rid == reference_id:
                return ref
        raise KeyError(reference_id)


def write_manifest(entries, path):
    """entries: iterable of (reference_id, template_file_path)."""
    payload = {"version": 1,
               "references": [{"id": rid, "path": p} for rid, p in entries]}
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)


def load_gallery(manifest_path):
    with open(manifest_path) as f:
        payload = json.load(f)
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = []
    for item in payload["references"]:
        p = item["path"]
        if not os.path.isabs(p):
            p = os.path.join(base, p)
        with open(p, "rb") as f:
            entries.append((item["id"], ReferenceTemplates.deserialize(f.read())))
    return GalleryIndex(entries, manifest_path)


def score_reference(probe, reference, codebook, config, tables=None):
    """One latent-vs-reference comparison: three minutiae scores, one texture
    score, fused per the configured weights."""
    mscores = tuple(
        matcher.compare_minutiae_templates(mt, reference.minutiae_template,
                                           config.top_n_minutiae).score
        for mt in probe.minutiae_templates)
    tresult = matcher.compare_texture_templates(
        probe.texture_template, reference.texture_template, codebook,
        config.d0, tables=tables, top_n=config.top_n_texture)
    fused = matcher.fuse_scores(*mscores, tresult.score, config.weights)
    return mscores, tresult.score, fused


_WORKER_STATE = {}


def _worker_init(probe, index, codebook, config):
    _WORKER_STATE["args"] = (probe, index, codebook, config)
    tt = probe.texture_template
    if len(tt) and codebook is not None:
        _WORKER_STATE["tables"] = transpose_adc_tables(
            build_adc_table(tt.descriptor_matrix().astype(float), codebook))
    else:
        _WORKER_STATE["tables"] = None


def _worker_chunk(span):
    probe, index, codebook, config = _WORKER_STATE["args"]
    tables = _WORKER_STATE["tables"]
    lo, hi = span
    out = []
    for rid, ref in index.entries[lo:hi]:
        mscores, tscore, fused = score_reference(probe, ref, codebook, config, tables)
        out.append(CandidateEntry(rid, fused, mscores, tscore))
    return out


def search_gallery(probe, index, codebook, config=PipelineConfig(),
                   k=None, workers=1):
    """Score the probe against every reference and return the top-K candidates.

    The per-probe ADC lookup table is built once and reused across the
    gallery.  Results are identical for any worker count: workers only shard
    the gallery, and the final ranking is a deterministic sort.
    """
    if k is None:
        k = config.topk
    if len(index) == 0:
        return CandidateList(())

    n = len(index)
    if workers <= 1:
        _worker_init(probe, index, codebook, config)
        entries = _worker_chunk((0, n))
    else:
        chunk = (n + workers - 1) // workers
        spans = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_worker_init,
                      initargs=(probe, index, codebook, config)) as pool:
            parts = pool.map(_worker_chunk, spans)
        entries = [e for part in parts for e in part]
    return CandidateList(entries).top(k)


# ---------------------------------------------------------------------------
# CMC evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CmcCurve:
    rates: np.ndarray  # rates[k-1] = rank-k identification rate

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float).copy()
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)

    def rate(self, k):
        return float(self.rates[k - 1])

    def save_csv(self, path):
        with open(path, "w") as f:
            f.write("rank,rate\n")
            for k, r in enumerate(self.rates, start=1):
                f.write(f"{k},{r:.6f}\n")


def mate_rank(scores, gallery_ids, mate_id):
    """Pessimistic rank: 1 + strictly-greater scores + equal scores with a
    smaller reference id."""
    ids = list(gallery_ids)
    mi = ids.index(mate_id)
    ms = scores[mi]
    rank = 1
    for j, s in enumerate(scores):
        if j == mi:
            continue
        if s > ms or (s == ms and ids[j] < mate_id):
            rank += 1
    return rank


def evaluate_cmc(scores, gallery_ids, mates, max_rank=None):
    """scores: (n_probes, n_gallery); mates: per-probe mate reference id."""
    scores = np.asarray(scores, dtype=float)
    ids = list(gallery_ids)
    for m in mates:
        if m not in ids:
            raise ValueError(f"mate {m!r} missing from gallery")
    if max_rank is None:
        max_rank = len(ids)
    ranks = np.array([mate_rank(scores[p], ids, mates[p])
                      for p in range(len(mates))])
    rates = np.array([(ranks <= k).mean() for k in range(1, max_rank + 1)])
    return CmcCurve(rates)
