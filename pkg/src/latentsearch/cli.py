"""Command line front end.

Subcommands:
  codebook train <corpus>   train compressor + PQ codebook, calibrate D0
  enroll <dir>              build reference templates for a directory of PGMs
  search <latent>           rank a latent against an enrolled gallery
  eval                      CMC evaluation of a probe directory
  serve                     run the HTTP service for the examiner UI

Model artifacts (compressor, codebook, D0 calibration) live together in a
models directory; galleries are a JSON manifest next to per-reference
template files.  All thresholds can be overridden with a text key-value
config file (see latentsearch.search.load_config).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import synthetic
from .descriptor import (CompressorModel, PQCodebook, calibrate_d0,
                         compress_batch, train_compressor, train_pq)
from .preprocess import read_pgm
from .ridges import build_dictionary
from .search import (PipelineConfig, LatentTemplates, ReferenceTemplates,
                     build_latent_templates, build_reference_template,
                     evaluate_cmc, load_config, load_gallery, search_gallery,
                     write_manifest)

COMPRESSOR_FILE = "compressor.bin"
CODEBOOK_FILE = "codebook.bin"
D0_FILE = "d0.txt"


def _load_models(models_dir):
    compressor = CompressorModel.load(os.path.join(models_dir, COMPRESSOR_FILE))
    codebook = PQCodebook.load(os.path.join(models_dir, CODEBOOK_FILE))
    with open(os.path.join(models_dir, D0_FILE)) as f:
        d0 = float(f.read().strip())
    return compressor, codebook, d0


def _config_from_args(args):
    config = load_config(args.config) if args.config else PipelineConfig()
    return config


def _latent_from_path(path, compressor, config, debug_dir=None):
    if path.endswith(".lft"):
        with open(path, "rb") as f:
            return LatentTemplates.deserialize(f.read())
    image = read_pgm(path)
    stem = os.path.splitext(os.path.basename(path))[0]
    return build_latent_templates(image, compressor, config=config,
                                  debug_dir=debug_dir, debug_stem=stem)


def cmd_codebook(args):
    if args.codebook_cmd != "train":
        raise SystemExit("unknown codebook subcommand")
    if args.corpus:
        corpus = np.load(args.corpus)
    else:
        rng = np.random.default_rng(args.seed)
        corpus = synthetic.descriptor_corpus(rng, args.synthetic)
        print(f"generated synthetic corpus: {len(corpus)} descriptors")
    os.makedirs(args.out, exist_ok=True)

    print(f"training compressor on {len(corpus)} raw descriptors ...")
    compressor, losses = train_compressor(corpus, epochs=args.epochs,
                                          seed=args.seed)
    print(f"compressor loss {losses[0]:.5f} -> {losses[-1]:.5f}")
    compressor.save(os.path.join(args.out, COMPRESSOR_FILE))

    compressed = compress_batch(compressor, corpus)
    print("training product quantizer ...")
    codebook = train_pq(compressed, m=args.subvectors, seed=args.seed)
    codebook.save(os.path.join(args.out, CODEBOOK_FILE))

    d0 = calibrate_d0(compressed, codebook, seed=args.seed)
    with open(os.path.join(args.out, D0_FILE), "w") as f:
        f.write(f"{d0:.6f}\n")
    print(f"wrote models to {args.out} (D0 = {d0:.4f})")
    return 0


def cmd_enroll(args):
    compressor, codebook, d0 = _load_models(args.models)
    config = replace(_config_from_args(args), d0=d0)
    dictionary = build_dictionary()
    os.makedirs(args.out, exist_ok=True)

    names = sorted(n for n in os.listdir(args.directory) if n.endswith(".pgm"))
    if not names:
        print(f"no .pgm images in {args.directory}", file=sys.stderr)
        return 1
    entries = []
    for name in names:
        rid = os.path.splitext(name)[0]
        image = read_pgm(os.path.join(args.directory, name))
        ref = build_reference_template(image, compressor, codebook,
                                       dictionary, config)
        fname = f"{rid}.lfr"
        with open(os.path.join(args.out, fname), "wb") as f:
            f.write(ref.serialize())
        entries.append((rid, fname))
        print(f"enrolled {rid}: {len(ref.minutiae_template)} minutiae, "
              f"{len(ref.texture_template)} virtual")
    write_manifest(entries, os.path.join(args.out, "manifest.json"))
    print(f"gallery manifest: {os.path.join(args.out, 'manifest.json')}")
    return 0


def cmd_search(args):
    compressor, codebook, d0 = _load_models(args.models)
    config = replace(_config_from_args(args), d0=d0)
    index = load_gallery(os.path.join(args.gallery, "manifest.json")
                         if os.path.isdir(args.gallery) else args.gallery)
    probe = _latent_from_path(args.latent, compressor, config, args.debug_dir)
    result = search_gallery(probe, index, codebook, config,
                            k=args.topk, workers=args.workers)
    if args.json:
        payload = [{"reference_id": e.reference_id,
                    "fused_score": e.fused_score,
                    "minutiae_scores": list(e.minutiae_scores),
                    "texture_score": e.texture_score} for e in result]
        json.dump(payload, sys.stdout, indent=1)
        print()
    else:
        print(f"{'rank':>4}  {'reference':<20} {'fused':>10} "
              f"{'s1':>8} {'s2':>8} {'s3':>8} {'texture':>8}")
        for rank, e in enumerate(result, start=1):
            s1, s2, s3 = e.minutiae_scores
            print(f"{rank:>4}  {e.reference_id:<20} {e.fused_score:>10.4f} "
                  f"{s1:>8.3f} {s2:>8.3f} {s3:>8.3f} {e.texture_score:>8.3f}")
    return 0


def cmd_eval(args):
    compressor, codebook, d0 = _load_models(args.models)
    config = replace(_config_from_args(args), d0=d0)
    index = load_gallery(os.path.join(args.gallery, "manifest.json")
                         if os.path.isdir(args.gallery) else args.gallery)
    gallery_ids = [rid for rid, _ in index.entries]

    names = sorted(n for n in os.listdir(args.probes)
                   if n.endswith((".pgm", ".lft")))
    if not names:
        print(f"no probes in {args.probes}", file=sys.stderr)
        return 1
    truth = None
    if args.truth:
        with open(args.truth) as f:
            truth = json.load(f)

    scores, mates = [], []
    for name in names:
        stem = os.path.splitext(name)[0]
        mates.append(truth[stem] if truth else stem)
        probe = _latent_from_path(os.path.join(args.probes, name),
                                  compressor, config)
        result = search_gallery(probe, index, codebook, config,
                                k=len(index), workers=args.workers)
        by_id = {e.reference_id: e.fused_score for e in result}
        scores.append([by_id[rid] for rid in gallery_ids])
        print(f"scored {stem} ({len(by_id)} references)")

    curve = evaluate_cmc(np.array(scores), gallery_ids, mates)
    curve.save_csv(args.cmc)
    print(f"rank-1 {curve.rate(1):.4f}, rank-5 {curve.rate(min(5, len(gallery_ids))):.4f}")
    print(f"CMC written to {args.cmc}")
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    compressor, codebook, d0 = _load_models(args.models)
    config = replace(_config_from_args(args), d0=d0)
    gallery = None
    if args.gallery:
        gallery = load_gallery(os.path.join(args.gallery, "manifest.json")
                               if os.path.isdir(args.gallery) else args.gallery)
    app = create_app(args.cases, compressor, codebook, config, gallery,
                     references_dir=args.references)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="latentsearch",
        description="Latent fingerprint identification engine")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--models", default="models",
                       help="directory with compressor/codebook/D0 artifacts")
        p.add_argument("--config", help="text key-value config file")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("codebook", help="model training")
    csub = p.add_subparsers(dest="codebook_cmd", required=True)
    pt = csub.add_parser("train", help="train compressor + PQ codebook")
    pt.add_argument("corpus", nargs="?",
                    help=".npy array of raw descriptors (omit for synthetic)")
    pt.add_argument("--synthetic", type=int, default=12000,
                    help="synthetic corpus size when no corpus file is given")
    pt.add_argument("--subvectors", type=int, default=16)
    pt.add_argument("--epochs", type=int, default=40)
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out", default="models")
    pt.set_defaults(func=cmd_codebook)

    p = sub.add_parser("enroll", help="enroll reference prints into a gallery")
    p.add_argument("directory", help="directory of reference .pgm images")
    p.add_argument("--out", required=True, help="gallery output directory")
    common(p)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("search", help="search a latent against a gallery")
    p.add_argument("latent", help="latent .pgm image or .lft template record")
    p.add_argument("--gallery", required=True)
    p.add_argument("--topk", type=int, default=20)
    p.add_argument("--json", action="store_true")
    p.add_argument("--debug-dir",
                   help="dump intermediate processed images and ridge fields")
    common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="CMC evaluation over a probe set")
    p.add_argument("--probes", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--cmc", required=True, help="output CSV (rank,rate)")
    p.add_argument("--truth", help="JSON {probe_stem: mate_id}; default stem==id")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="HTTP service for the examiner UI")
    p.add_argument("--cases", required=True, help="directory of latent cases")
    p.add_argument("--gallery")
    p.add_argument("--references", help="directory of reference .pgm images")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    common(p)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
