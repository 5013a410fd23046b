"""HTTP service backing the examiner workbench.

Payloads are JSON throughout; images travel as base64-encoded binary PGM.

  GET  /cases/{id}                case image, current minutiae, fields overlay
  PUT  /cases/{id}/minutiae       replace the minutiae list (optimistic
                                  concurrency via the echoed version number)
  POST /cases/{id}/search?topk=K  ranked candidates + surviving correspondences
  GET  /references/{id}/image     reference print image

A case is a latent image file <id>.pgm in the cases directory.  The first
request for a case runs the latent pipeline once: the auto-detected minutiae
become the editable starting list, and the ridge fields / texture template
are kept for later searches.  Examiner edits are persisted next to the image
as <id>.minutiae.json so a reload reproduces server truth.
"""

from __future__ import annotations

import base64
import io
import json
import os
import threading

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from . import matcher
from .core import Minutia, MinutiaeTemplate, SourceTag, wrap_angle
from .descriptor import build_adc_table, transpose_adc_tables
from .preprocess import read_pgm
from .ridges import build_dictionary
from .search import (PipelineConfig, build_latent_templates,
                     _compressed_descriptors)


class MinutiaIn(BaseModel):
    x: float
    y: float
    theta: float


class MinutiaePut(BaseModel):
    version: int
    minutiae: list[MinutiaIn]


def _pgm_b64(image):
    buf = io.BytesIO()
    img = np.clip(np.asarray(image, dtype=float), 0, 255).astype(np.uint8)
    h, w = img.shape
    buf.write(f"P5\n{w} {h}\n255\n".encode())
    buf.write(img.tobytes())
    return base64.b64encode(buf.getvalue()).decode("ascii")


class _Case:
    """Per-case mutable state; pipeline products cached after first load."""

    def __init__(self, case_id, image_path, state_path):
        self.case_id = case_id
        self.image_path = image_path
        self.state_path = state_path
        self.image = None
        self.fields = None
        self.texture_template = None
        self.desc_image = None
        self.minutiae = []       # list of dicts {x, y, theta}
        self.version = 0
        self.lock = threading.Lock()


def _minutiae_from_dicts(dicts):
    return [Minutia(float(m["x"]), float(m["y"]),
                    float(wrap_angle(float(m["theta"])))) for m in dicts]


def create_app(cases_dir, compressor, codebook, config=PipelineConfig(),
               gallery=None, references_dir=None):
    app = FastAPI(title="latentsearch examiner service")
    dictionary = build_dictionary()
    cases = {}
    cases_lock = threading.Lock()

    def _get_case(case_id):
        with cases_lock:
            case = cases.get(case_id)
            if case is None:
                image_path = os.path.join(cases_dir, f"{case_id}.pgm")
                if not os.path.exists(image_path):
                    raise HTTPException(404, f"unknown case {case_id!r}")
                case = _Case(case_id, image_path,
                             os.path.join(cases_dir, f"{case_id}.minutiae.json"))
                cases[case_id] = case
        with case.lock:
            if case.image is None:
                _load_case(case)
        return case

    def _load_case(case):
        case.image = read_pgm(case.image_path)
        templates = build_latent_templates(case.image, compressor,
                                           dictionary, config)
        # pipeline products reused for every later search on this case
        from . import preprocess, ridges
        decomposed = preprocess.decompose_texture(case.image)
        enhanced = preprocess.stft_enhance(decomposed.pixels)
        fields = ridges.estimate_ridge_fields(enhanced.pixels, case.image,
                                              dictionary, config.alpha)
        case.fields = ridges.segment_roi(fields, config.s_r)
        case.desc_image = enhanced.pixels
        case.texture_template = templates.texture_template
        if os.path.exists(case.state_path):
            with open(case.state_path) as f:
                saved = json.load(f)
            case.minutiae = saved["minutiae"]
            case.version = int(saved["version"])
        else:
            voted = templates.minutiae_templates[2]  # consensus set
            case.minutiae = [{"x": m.x, "y": m.y, "theta": m.theta}
                             for m in voted.minutiae]
            case.version = 1

    def _persist(case):
        with open(case.state_path, "w") as f:
            json.dump({"version": case.version, "minutiae": case.minutiae}, f)

    def _probe_templates(case):
        """Latent templates from the examiner-edited minutiae list."""
        minutiae = _minutiae_from_dicts(case.minutiae)
        descs = _compressed_descriptors(case.desc_image, minutiae, compressor)
        mts = tuple(MinutiaeTemplate(minutiae, descs, tag)
                    for tag in (SourceTag.SET_1, SourceTag.SET_3, SourceTag.SET_6))
        return mts, case.texture_template

    @app.get("/cases/{case_id}")
    def get_case(case_id: str):
        case = _get_case(case_id)
        with case.lock:
            f = case.fields
            return {
                "id": case.case_id,
                "version": case.version,
                "height": int(case.image.shape[0]),
                "width": int(case.image.shape[1]),
                "image_pgm_b64": _pgm_b64(case.image),
                "minutiae": list(case.minutiae),
                "fields": {
                    "block_size": int(f.block_size),
                    "orientation": np.round(f.orientation, 4).tolist(),
                    "roi": f.roi.astype(int).tolist(),
                },
            }

    @app.put("/cases/{case_id}/minutiae")
    def put_minutiae(case_id: str, body: MinutiaePut):
        case = _get_case(case_id)
        with case.lock:
            if body.version != case.version:
                raise HTTPException(
                    409, f"stale version {body.version}, server at {case.version}")
            case.minutiae = [
                {"x": m.x, "y": m.y, "theta": float(wrap_angle(m.theta))}
                for m in body.minutiae]
            case.version += 1
            _persist(case)
            return {"id": case.case_id, "version": case.version,
                    "count": len(case.minutiae)}

    @app.post("/cases/{case_id}/search")
    def search_case(case_id: str, topk: int = Query(default=None)):
        if gallery is None:
            raise HTTPException(503, "no gallery loaded")
        k = topk if topk is not None else config.topk
        case = _get_case(case_id)
        with case.lock:
            mts, texture = _probe_templates(case)
            tables = None
            if len(texture) and codebook is not None:
                tables = transpose_adc_tables(build_adc_table(
                    texture.descriptor_matrix().astype(float), codebook))
            results = []
            for rid, ref in gallery.entries:
                mresults = [matcher.compare_minutiae_templates(
                    mt, ref.minutiae_template, config.top_n_minutiae)
                    for mt in mts]
                tresult = matcher.compare_texture_templates(
                    texture, ref.texture_template, codebook, config.d0,
                    tables=tables, top_n=config.top_n_texture)
                fused = matcher.fuse_scores(*(r.score for r in mresults),
                                            tresult.score, config.weights)
                # correspondence overlay from the consensus-set comparison
                links = [{
                    "latent": {"x": case.minutiae[c.latent_index]["x"],
                               "y": case.minutiae[c.latent_index]["y"]},
                    "reference": {
                        "x": ref.minutiae_template.minutiae[c.reference_index].x,
                        "y": ref.minutiae_template.minutiae[c.reference_index].y},
                    "similarity": c.similarity,
                } for c in mresults[2].surviving]
                results.append({
                    "reference_id": rid,
                    "fused_score": fused,
                    "minutiae_scores": [r.score for r in mresults],
                    "texture_score": tresult.score,
                    "correspondences": links,
                })
            results.sort(key=lambda r: (-r["fused_score"], r["reference_id"]))
            return {"id": case.case_id, "version": case.version,
                    "entries": results[:k]}

    @app.get("/references/{reference_id}/image")
    def reference_image(reference_id: str):
        if references_dir:
            path = os.path.join(references_dir, f"{reference_id}.pgm")
            if os.path.exists(path):
                return {"id": reference_id,
                        "image_pgm_b64": _pgm_b64(read_pgm(path))}
        raise HTTPException(404, f"no image for reference {reference_id!r}")

    return app
