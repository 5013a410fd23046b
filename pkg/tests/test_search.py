"""Config I/O, template construction, gallery search and CMC evaluation."""

import os

import numpy as np
import pytest
from scipy import ndimage

from latentsearch.core import (CandidateList, MinutiaKind, RidgeFields,
                               SourceTag, flow_to_minutia_angle)
from latentsearch.descriptor import train_pq
from latentsearch.search import (CmcCurve, GalleryIndex, LatentTemplates,
                                 PipelineConfig, ReferenceTemplates,
                                 VirtualMinutiaGrid, build_latent_templates,
                                 build_reference_template, evaluate_cmc,
                                 extract_virtual_minutiae, load_config,
                                 load_gallery, mate_rank, save_config,
                                 score_reference, search_gallery,
                                 write_manifest)
from latentsearch.synthetic import (compressed_corpus, perturbed_probe,
                                    synthetic_reference, whorl_image)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(sigma_s=2.5, m_t=0.3, top_n_texture=150,
                         weights=(1.0, 0.5, 0.5, 0.2), d0=2.25)
    path = tmp_path / "pipeline.cfg"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_parses_comments_and_whitespace(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# a comment\n  d0 =  3.5  # trailing\n\ntopk = 7\n")
    cfg = load_config(path)
    assert cfg.d0 == 3.5 and cfg.topk == 7
    assert cfg.sigma_s == PipelineConfig().sigma_s  # defaults survive


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("no_such_knob = 1\n")
    with pytest.raises(ValueError):
        load_config(path)


def test_grid_validation():
    with pytest.raises(ValueError):
        VirtualMinutiaGrid(stride=0)


# ---------------------------------------------------------------------------
# virtual minutiae
# ---------------------------------------------------------------------------


def _full_fields(bh, bw, orientation=0.5):
    return RidgeFields(np.full((bh, bw), orientation),
                       np.full((bh, bw), 9.0),
                       np.ones((bh, bw)),
                       np.ones((bh, bw), bool))


def test_virtual_minutiae_match_lattice_oracle():
    fields = _full_fields(8, 8)
    grid = VirtualMinutiaGrid(stride=32, border_margin=16)
    got = extract_virtual_minutiae(fields, grid)
    # oracle: brute-force lattice + distance to the padded mask boundary
    roi_px = np.ones((128, 128), bool)
    dist = ndimage.distance_transform_edt(np.pad(roi_px, 1))[1:-1, 1:-1]
    want = [(float(x), float(y))
            for y in range(32, 128, 32) for x in range(32, 128, 32)
            if dist[y, x] >= 16]
    assert [(m.x, m.y) for m in got] == want
    assert all(m.kind is MinutiaKind.VIRTUAL for m in got)
    assert all(m.theta == pytest.approx(flow_to_minutia_angle(0.5)) for m in got)


def test_virtual_minutiae_avoid_roi_boundary():
    fields = _full_fields(8, 8)
    tight = extract_virtual_minutiae(fields, VirtualMinutiaGrid(32, 40))
    loose = extract_virtual_minutiae(fields, VirtualMinutiaGrid(32, 1))
    assert len(loose) > len(tight)
    xy = {(m.x, m.y) for m in loose}
    assert {(m.x, m.y) for m in tight} <= xy


def test_virtual_minutiae_empty_roi():
    fields = RidgeFields(np.zeros((4, 4)), np.zeros((4, 4)),
                         np.zeros((4, 4)), np.zeros((4, 4), bool))
    assert extract_virtual_minutiae(fields) == []


# ---------------------------------------------------------------------------
# record containers and gallery persistence
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def codebook():
    rng = np.random.default_rng(31)
    return train_pq(compressed_corpus(rng, 1500), seed=3, iters=6)


@pytest.fixture(scope="module")
def small_gallery(codebook):
    rng = np.random.default_rng(32)
    refs = []
    probes = []
    for i in range(6):
        mt, tt, vdescs = synthetic_reference(rng, codebook, n_minutiae=20,
                                             n_virtual=60)
        refs.append((f"ref{i:03d}", ReferenceTemplates(mt, tt)))
        m1, m3, m6, ptt = perturbed_probe(rng, mt, vdescs, tt)
        probes.append(LatentTemplates((m1, m3, m6), ptt))
    return GalleryIndex(refs), probes


def test_latent_record_round_trip(small_gallery):
    _, probes = small_gallery
    probe = probes[0]
    back = LatentTemplates.deserialize(probe.serialize())
    assert len(back.minutiae_templates) == 3
    assert [len(t) for t in back.minutiae_templates] \
        == [len(t) for t in probe.minutiae_templates]
    assert back.minutiae_templates[0].source_tag is SourceTag.SET_1
    assert len(back.texture_template) == len(probe.texture_template)


def test_reference_record_round_trip(small_gallery):
    index, _ = small_gallery
    ref = index.entries[0][1]
    back = ReferenceTemplates.deserialize(ref.serialize())
    assert len(back.minutiae_template) == len(ref.minutiae_template)
    np.testing.assert_array_equal(back.texture_template.descriptor_matrix(),
                                  ref.texture_template.descriptor_matrix())


def test_record_part_count_enforced(small_gallery):
    index, probes = small_gallery
    with pytest.raises(ValueError):
        LatentTemplates.deserialize(index.entries[0][1].serialize())
    with pytest.raises(ValueError):
        ReferenceTemplates.deserialize(probes[0].serialize())


def test_gallery_index_rejects_duplicates(small_gallery):
    index, _ = small_gallery
    with pytest.raises(ValueError):
        GalleryIndex(index.entries + index.entries[:1])
    assert index.get("ref002") is index.entries[2][1]
    with pytest.raises(KeyError):
        index.get("missing")


def test_manifest_round_trip(tmp_path, small_gallery):
    index, _ = small_gallery
    entries = []
    for rid, ref in index.entries:
        fname = f"{rid}.lfr"
        with open(tmp_path / fname, "wb") as f:
            f.write(ref.serialize())
        entries.append((rid, fname))  # relative paths resolve off the manifest
    manifest = tmp_path / "manifest.json"
    write_manifest(entries, manifest)
    loaded = load_gallery(manifest)
    assert [rid for rid, _ in loaded.entries] == [rid for rid, _ in index.entries]
    a = loaded.entries[3][1].texture_template.descriptor_matrix()
    b = index.entries[3][1].texture_template.descriptor_matrix()
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# scoring and search
# ---------------------------------------------------------------------------


def test_mate_outscores_nonmates(codebook, small_gallery):
    index, probes = small_gallery
    cfg = PipelineConfig(d0=2.0)
    fused = [score_reference(probes[0], ref, codebook, cfg)[2]
             for _, ref in index.entries]
    assert int(np.argmax(fused)) == 0


def test_search_returns_sorted_topk(codebook, small_gallery):
    index, probes = small_gallery
    cfg = PipelineConfig(d0=2.0)
    out = search_gallery(probes[1], index, codebook, cfg, k=4)
    assert isinstance(out, CandidateList) and len(out) == 4
    scores = [e.fused_score for e in out]
    assert scores == sorted(scores, reverse=True)
    assert out.entries[0].reference_id == "ref001"
    # entry scores are consistent with their parts
    e = out.entries[0]
    assert e.fused_score == pytest.approx(
        sum(w * s for w, s in zip(cfg.weights, e.minutiae_scores + (e.texture_score,))))


def test_search_worker_count_equivalence(codebook, small_gallery):
    index, probes = small_gallery
    cfg = PipelineConfig(d0=2.0)
    serial = search_gallery(probes[2], index, codebook, cfg, k=6, workers=1)
    parallel = search_gallery(probes[2], index, codebook, cfg, k=6, workers=3)
    assert [(e.reference_id, e.fused_score) for e in serial] \
        == [(e.reference_id, e.fused_score) for e in parallel]


def test_search_empty_gallery(codebook, small_gallery):
    _, probes = small_gallery
    out = search_gallery(probes[0], GalleryIndex(()), codebook)
    assert len(out) == 0


# ---------------------------------------------------------------------------
# CMC
# ---------------------------------------------------------------------------


def test_mate_rank_hand_cases():
    ids = ["a", "b", "c", "d"]
    assert mate_rank([9.0, 1.0, 2.0, 3.0], ids, "a") == 1
    assert mate_rank([1.0, 9.0, 2.0, 3.0], ids, "a") == 4
    # ties are pessimistic: equal score with a smaller id outranks the mate
    assert mate_rank([5.0, 5.0, 1.0, 0.0], ids, "b") == 2
    assert mate_rank([5.0, 5.0, 1.0, 0.0], ids, "a") == 1


def test_cmc_matches_brute_force():
    rng = np.random.default_rng(40)
    ids = [f"g{i}" for i in range(12)]
    scores = rng.normal(0, 1, (9, 12))
    mates = [ids[int(rng.integers(0, 12))] for _ in range(9)]
    curve = evaluate_cmc(scores, ids, mates)
    for k in range(1, 13):
        hits = sum(mate_rank(scores[p], ids, mates[p]) <= k for p in range(9))
        assert curve.rate(k) == pytest.approx(hits / 9)
    assert np.all(np.diff(curve.rates) >= 0)
    assert curve.rate(12) == 1.0


def test_cmc_rejects_missing_mate():
    with pytest.raises(ValueError):
        evaluate_cmc(np.zeros((1, 2)), ["a", "b"], ["zzz"])


def test_cmc_csv_format(tmp_path):
    curve = CmcCurve(np.array([0.5, 0.75, 1.0]))
    path = tmp_path / "cmc.csv"
    curve.save_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "rank,rate"
    assert lines[1] == "1,0.500000"
    assert lines[3] == "3,1.000000"


# ---------------------------------------------------------------------------
# end-to-end template construction
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained_compressor():
    from latentsearch.descriptor import train_compressor
    from latentsearch.synthetic import descriptor_corpus
    rng = np.random.default_rng(50)
    model, _ = train_compressor(descriptor_corpus(rng, 1500), epochs=3,
                                min_corpus=1024, seed=5)
    return model


def test_build_latent_templates_shapes(trained_compressor, tmp_path):
    img = whorl_image(256, 256)
    debug = tmp_path / "debug"
    probe = build_latent_templates(img, trained_compressor,
                                   debug_dir=str(debug), debug_stem="probe")
    assert len(probe.minutiae_templates) == 3
    tags = [t.source_tag for t in probe.minutiae_templates]
    assert tags == [SourceTag.SET_1, SourceTag.SET_3, SourceTag.SET_6]
    assert len(probe.texture_template) > 0
    names = sorted(os.listdir(debug))
    assert "probe_fields.bin" in names and "probe_fields.pgm" in names
    assert sum(n.endswith(".pgm") for n in names) >= 6  # 5 stages + overlay
    back = LatentTemplates.deserialize(probe.serialize())
    assert len(back.texture_template) == len(probe.texture_template)


def test_build_reference_template_shapes(trained_compressor, codebook):
    img = whorl_image(256, 256)
    ref = build_reference_template(img, trained_compressor, codebook)
    assert len(ref.texture_template) > 0
    from latentsearch.core import DescriptorStage
    assert ref.texture_template.stage is DescriptorStage.QUANTIZED
    back = ReferenceTemplates.deserialize(ref.serialize())
    assert len(back.minutiae_template) == len(ref.minutiae_template)
