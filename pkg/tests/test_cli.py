"""End-to-end command line flows: model training, enrollment, search, eval."""

import json
import os

import numpy as np
import pytest

from latentsearch.cli import main
from latentsearch.descriptor import CompressorModel, PQCodebook
from latentsearch.preprocess import write_pgm
from latentsearch.search import load_gallery
from latentsearch.synthetic import whorl_image


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Models trained and a three-print gallery enrolled via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    models = root / "models"
    refs = root / "refs"
    gallery = root / "gallery"
    refs.mkdir()
    for i, spacing in enumerate((8.0, 10.0, 12.0)):
        write_pgm(whorl_image(256, 256, spacing=spacing), refs / f"print{i}.pgm")

    rc = main(["codebook", "train", "--synthetic", "10000", "--epochs", "3",
               "--out", str(models)])
    assert rc == 0
    rc = main(["enroll", str(refs), "--models", str(models),
               "--out", str(gallery)])
    assert rc == 0
    return {"root": root, "models": models, "refs": refs, "gallery": gallery}


def test_codebook_train_artifacts(workspace):
    models = workspace["models"]
    CompressorModel.load(models / "compressor.bin")
    cb = PQCodebook.load(models / "codebook.bin")
    assert cb.m == 16
    d0 = float((models / "d0.txt").read_text().strip())
    assert d0 > 0


def test_enroll_wrote_gallery(workspace):
    gallery = workspace["gallery"]
    names = sorted(os.listdir(gallery))
    assert "manifest.json" in names
    assert [n for n in names if n.endswith(".lfr")] == [
        "print0.lfr", "print1.lfr", "print2.lfr"]
    index = load_gallery(str(gallery / "manifest.json"))
    assert [rid for rid, _ in index.entries] == ["print0", "print1", "print2"]
    assert all(len(ref.texture_template) > 0 for _, ref in index.entries)


def test_enroll_empty_directory_fails(workspace, tmp_path):
    rc = main(["enroll", str(tmp_path), "--models", str(workspace["models"]),
               "--out", str(tmp_path / "out")])
    assert rc == 1


def test_search_table_ranks_mate_first(workspace, capsys):
    rc = main(["search", str(workspace["refs"] / "print1.pgm"),
               "--models", str(workspace["models"]),
               "--gallery", str(workspace["gallery"]), "--topk", "3"])
    assert rc == 0
    out = capsys.readouterr().out
    lines = [l for l in out.strip().split("\n") if l]
    assert lines[0].split()[:2] == ["rank", "reference"]
    assert lines[1].split()[1] == "print1"  # the probe's own print wins


def test_search_json_output(workspace, capsys):
    rc = main(["search", str(workspace["refs"] / "print0.pgm"),
               "--models", str(workspace["models"]),
               "--gallery", str(workspace["gallery"]), "--topk", "2", "--json"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload) == 2
    assert payload[0]["reference_id"] == "print0"
    assert set(payload[0]) == {"reference_id", "fused_score",
                               "minutiae_scores", "texture_score"}
    assert payload[0]["fused_score"] >= payload[1]["fused_score"]


def test_search_debug_dump(workspace, tmp_path, capsys):
    debug = tmp_path / "debug"
    rc = main(["search", str(workspace["refs"] / "print2.pgm"),
               "--models", str(workspace["models"]),
               "--gallery", str(workspace["gallery"]),
               "--debug-dir", str(debug)])
    assert rc == 0
    capsys.readouterr()
    names = os.listdir(debug)
    assert any(n.endswith("_fields.bin") for n in names)
    assert sum(n.endswith(".pgm") for n in names) >= 6


def test_eval_writes_cmc(workspace, tmp_path, capsys):
    cmc = tmp_path / "cmc.csv"
    rc = main(["eval", "--probes", str(workspace["refs"]),
               "--models", str(workspace["models"]),
               "--gallery", str(workspace["gallery"]), "--cmc", str(cmc)])
    assert rc == 0
    capsys.readouterr()
    lines = cmc.read_text().strip().split("\n")
    assert lines[0] == "rank,rate"
    rows = [l.split(",") for l in lines[1:]]
    assert [int(r[0]) for r in rows] == [1, 2, 3]
    rates = [float(r[1]) for r in rows]
    assert rates == sorted(rates)
    # probes are the enrolled prints themselves; with the quick 3-epoch
    # fixture model most, but not necessarily all, are rank-1
    assert rates[0] >= 2.0 / 3.0 - 1e-9
    assert rates[-1] == 1.0


def test_eval_with_truth_mapping(workspace, tmp_path, capsys):
    # probe file named differently from its mate; truth JSON maps it back
    probes = tmp_path / "probes"
    probes.mkdir()
    data = (workspace["refs"] / "print1.pgm").read_bytes()
    (probes / "tentA.pgm").write_bytes(data)
    truth = tmp_path / "truth.json"
    truth.write_text(json.dumps({"tentA": "print1"}))
    cmc = tmp_path / "cmc.csv"
    rc = main(["eval", "--probes", str(probes), "--truth", str(truth),
               "--models", str(workspace["models"]),
               "--gallery", str(workspace["gallery"]), "--cmc", str(cmc)])
    assert rc == 0
    capsys.readouterr()
    assert cmc.read_text().strip().split("\n")[1] == "1,1.000000"


def test_config_override_applies(workspace, tmp_path, capsys):
    cfg = tmp_path / "pipeline.cfg"
    cfg.write_text("topk = 1\nweights = 1,1,1,0.3\n")
    rc = main(["search", str(workspace["refs"] / "print0.pgm"),
               "--models", str(workspace["models"]),
               "--gallery", str(workspace["gallery"]),
               "--config", str(cfg), "--topk", "1", "--json"])
    assert rc == 0
    assert len(json.loads(capsys.readouterr().out)) == 1


def test_search_accepts_lft_record(workspace, tmp_path, capsys):
    from latentsearch.descriptor import CompressorModel
    from latentsearch.preprocess import read_pgm
    from latentsearch.search import build_latent_templates
    compressor = CompressorModel.load(workspace["models"] / "compressor.bin")
    image = read_pgm(workspace["refs"] / "print0.pgm")
    probe = build_latent_templates(image, compressor)
    record = tmp_path / "probe.lft"
    record.write_bytes(probe.serialize())
    rc = main(["search", str(record), "--models", str(workspace["models"]),
               "--gallery", str(workspace["gallery"]), "--topk", "1", "--json"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload[0]["reference_id"] == "print0"
