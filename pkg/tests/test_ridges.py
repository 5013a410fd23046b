"""Ridge dictionary, patch similarity, field estimation and ROI segmentation."""

import numpy as np
import pytest
from scipy import ndimage

from latentsearch.ridges import (ALPHA, PATCH, RidgeDictionary, build_dictionary,
                                 estimate_ridge_fields, export_fields,
                                 import_fields, patch_cosine, patch_similarity,
                                 render_fields_overlay, segment_roi)
from latentsearch.core import RidgeFields


@pytest.fixture(scope="module")
def dictionary():
    return build_dictionary()


# ---------------------------------------------------------------------------
# dictionary construction
# ---------------------------------------------------------------------------


def test_dictionary_has_90_normalized_elements(dictionary):
    assert len(dictionary) == 90
    assert dictionary.elements.shape == (90, PATCH, PATCH)
    means = dictionary.flat.mean(axis=1)
    sds = dictionary.flat.std(axis=1)
    assert np.all(np.abs(means) < 1e-6)
    assert np.all(np.abs(sds - 1) < 1e-6)
    labels = set(zip(dictionary.orientations, dictionary.spacings))
    assert len(labels) == 90


def test_dictionary_rejects_wrong_grid():
    with pytest.raises(ValueError):
        build_dictionary(orientations=7, spacings=range(5, 14))


def test_element_matches_independent_sinusoid(dictionary):
    # vertical ridges, period 9: crests run along orientation 0, so the wave
    # varies along y.  Regenerated here without synth_ridge_patch.
    idx = next(i for i in range(90)
               if dictionary.orientations[i] == 0.0 and dictionary.spacings[i] == 9.0)
    half = (PATCH - 1) / 2.0
    ys = np.arange(PATCH) - half
    wave = np.cos(ys * 2 * np.pi / 9.0)
    patch = np.where(wave >= 0, 1.0, -1.0)[:, None] * np.ones((1, PATCH))
    patch = (patch - patch.mean()) / patch.std()
    corr = float(dictionary.flat[idx] @ patch.ravel()) / (PATCH * PATCH)
    assert corr > 0.99


# ---------------------------------------------------------------------------
# patch similarity
# ---------------------------------------------------------------------------


def test_similarity_of_exact_element(dictionary):
    # a patch equal to a dictionary element has ||P|| = 32 (1024 px at sd 1),
    # so s = 1024 / (32 + 300)
    p = dictionary.elements[13]
    sim = patch_similarity(p, dictionary)
    assert sim.best_index == 13
    assert sim.s_m == pytest.approx(1024.0 / 332.0, abs=1e-6)


def test_zero_patch_similarity_is_zero(dictionary):
    sim = patch_similarity(np.zeros((PATCH, PATCH)), dictionary)
    assert sim.s_m == 0.0


def test_similarity_rejects_bad_shapes(dictionary):
    with pytest.raises(ValueError):
        patch_similarity(np.zeros((16, 16)), dictionary)
    with pytest.raises(ValueError):
        patch_similarity(np.zeros((PATCH, PATCH)), dictionary, alpha=0.0)


def test_off_grid_sinusoid_lands_near_label(dictionary):
    from latentsearch.ridges import synth_ridge_patch
    patch = synth_ridge_patch(np.pi / 4, 11.0, square=False)
    sim = patch_similarity(patch, dictionary)
    ori = dictionary.orientations[sim.best_index]
    spc = dictionary.spacings[sim.best_index]
    d = abs(ori - np.pi / 4)
    d = min(d, np.pi - d)
    assert d <= np.pi / 10 + 1e-9
    assert abs(spc - 11.0) <= 1.0


def test_argmax_scale_invariance(dictionary):
    """Scaling a full-contrast patch does not change the winner at alpha=0,
    and alpha=300 picks the same element on the synthesis suite."""
    rng = np.random.default_rng(3)
    for _ in range(10):
        i = rng.integers(0, 90)
        patch = dictionary.elements[i]
        base = patch_similarity(patch, dictionary, alpha=1e-12).best_index
        scaled = patch_similarity(2.5 * patch, dictionary, alpha=1e-12).best_index
        reg = patch_similarity(patch, dictionary, alpha=ALPHA).best_index
        assert base == scaled == reg == i


def test_quality_adds_raw_cosine(dictionary):
    p = dictionary.elements[0]
    sim = patch_similarity(p, dictionary, raw_patch=p)
    assert sim.quality == pytest.approx(sim.s_m + 1.0, abs=1e-9)
    anti = patch_similarity(p, dictionary, raw_patch=-p)
    assert anti.quality == pytest.approx(anti.s_m - 1.0, abs=1e-9)


def test_patch_cosine_bounds():
    rng = np.random.default_rng(0)
    a, b = rng.normal(0, 1, (2, PATCH, PATCH))
    c = patch_cosine(a, b)
    assert -1.0 <= c <= 1.0
    assert patch_cosine(a, a) == pytest.approx(1.0)
    assert patch_cosine(a, np.zeros_like(a)) == 0.0


# ---------------------------------------------------------------------------
# field estimation
# ---------------------------------------------------------------------------


def test_fields_on_full_frame_sinusoid(dictionary):
    from latentsearch.synthetic import sinusoid_image
    img = sinusoid_image(160, 160, 0.0, 9.0)
    fields = estimate_ridge_fields(img, img, dictionary)
    # interior blocks (patch fully inside) must label exactly (0, 9)
    interior = np.s_[1:-2, 1:-2]
    assert np.all(fields.orientation[interior] == 0.0)
    assert np.all(fields.spacing[interior] == 9.0)


def test_noise_image_quality_below_threshold(dictionary):
    # quality is measured against the enhanced image, as in the pipeline;
    # enhancement of pure noise decorrelates from the raw input
    from latentsearch.preprocess import stft_enhance
    rng = np.random.default_rng(11)
    img = rng.uniform(0, 255, (128, 128))
    enhanced = stft_enhance(img)
    fields = estimate_ridge_fields(enhanced.pixels, img, dictionary)
    assert fields.quality.mean() < 0.35


def test_tiny_image_empty_fields(dictionary):
    img = np.zeros((16, 16))
    fields = estimate_ridge_fields(img, img, dictionary)
    assert fields.shape[0] == 0 or fields.quality.size == 0


# ---------------------------------------------------------------------------
# ROI segmentation
# ---------------------------------------------------------------------------


def _roi_oracle(quality, s_r):
    """Brute-force reimplementation: threshold, 3x3 open, 3x3 close, largest
    connected component."""
    mask = quality > s_r
    selem = np.ones((3, 3), bool)
    mask = ndimage.binary_erosion(mask, structure=selem, border_value=1)
    mask = ndimage.binary_dilation(mask, structure=selem)
    mask = ndimage.binary_dilation(mask, structure=selem)
    mask = ndimage.binary_erosion(mask, structure=selem, border_value=1)
    labels, n = ndimage.label(mask)
    if n > 1:
        sizes = [np.sum(labels == i) for i in range(1, n + 1)]
        mask = labels == (1 + int(np.argmax(sizes)))
    return mask


def _fields_from_quality(quality):
    z = np.zeros_like(quality)
    return RidgeFields(z, z, quality, np.zeros(quality.shape, bool))


def test_roi_uniform_quality():
    full = segment_roi(_fields_from_quality(np.ones((12, 12))))
    assert full.roi.all()
    empty = segment_roi(_fields_from_quality(np.zeros((12, 12))))
    assert not empty.roi.any()


def test_roi_matches_morphology_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        quality = rng.uniform(0, 1, (20, 20))
        got = segment_roi(_fields_from_quality(quality), 0.35)
        want = _roi_oracle(quality, 0.35)
        np.testing.assert_array_equal(got.roi, want)


def test_roi_checkerboard_speckle_removed():
    quality = np.indices((16, 16)).sum(axis=0) % 2 * 1.0  # isolated pixels
    got = segment_roi(_fields_from_quality(quality), 0.35)
    assert not got.roi.any()


def test_roi_threshold_monotone():
    rng = np.random.default_rng(9)
    quality = ndimage.gaussian_filter(rng.uniform(0, 1, (24, 24)), 2)
    lo = quality > 0.3
    hi = quality > 0.5
    assert np.all(lo[hi])  # raising s_r never adds blocks pre-morphology


# ---------------------------------------------------------------------------
# export / import / overlay
# ---------------------------------------------------------------------------


def test_fields_round_trip(tmp_path, dictionary):
    from latentsearch.synthetic import whorl_image
    img = whorl_image(128, 128)
    fields = segment_roi(estimate_ridge_fields(img, img, dictionary))
    path = tmp_path / "fields.bin"
    export_fields(fields, path)
    back = import_fields(path)
    np.testing.assert_allclose(back.orientation, fields.orientation, atol=1e-6)
    np.testing.assert_allclose(back.spacing, fields.spacing, atol=1e-6)
    np.testing.assert_array_equal(back.roi, fields.roi)


def test_overlay_renders_grayscale(dictionary):
    from latentsearch.synthetic import whorl_image
    img = whorl_image(128, 128)
    fields = segment_roi(estimate_ridge_fields(img, img, dictionary))
    canvas = render_fields_overlay(fields, img)
    assert canvas.shape == (fields.shape[0] * 16, fields.shape[1] * 16)
    assert canvas.min() >= 0 and canvas.max() <= 255
