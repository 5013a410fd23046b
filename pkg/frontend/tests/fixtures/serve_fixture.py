"""Stand up a small real service instance for the UI integration tests.

Builds everything in a scratch directory: one latent case, a reference image,
a quick synthetic gallery and untrained-but-valid model artifacts.  The UI
tests poll GET /cases/case1 until the first pipeline run finishes.
"""

import argparse
import os
import sys

import numpy as np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--port", type=int, required=True)
    ap.add_argument("--root", required=True)
    args = ap.parse_args()

    import uvicorn

    from latentsearch.descriptor import CompressorModel, _init_params, train_pq
    from latentsearch.preprocess import write_pgm
    from latentsearch.search import (GalleryIndex, PipelineConfig,
                                     ReferenceTemplates)
    from latentsearch.service import create_app
    from latentsearch.synthetic import (compressed_corpus, synthetic_reference,
                                        whorl_image)

    cases = os.path.join(args.root, "cases")
    refs = os.path.join(args.root, "refs")
    os.makedirs(cases, exist_ok=True)
    os.makedirs(refs, exist_ok=True)
    write_pgm(whorl_image(192, 192), os.path.join(cases, "case1.pgm"))
    write_pgm(whorl_image(160, 160, spacing=11.0),
              os.path.join(refs, "ref000.pgm"))

    rng = np.random.default_rng(7)
    ws, bs = _init_params(rng)
    compressor = CompressorModel(tuple(ws), tuple(bs))
    codebook = train_pq(compressed_corpus(rng, 1200), seed=1, iters=5)
    gallery = GalleryIndex(tuple(
        (f"ref{i:03d}", ReferenceTemplates(mt, tt))
        for i, (mt, tt, _) in (
            (i, synthetic_reference(rng, codebook, n_minutiae=15, n_virtual=40))
            for i in range(3))))

    app = create_app(cases, compressor, codebook,
                     PipelineConfig(d0=2.0, topk=5),
                     gallery=gallery, references_dir=refs)
    print(f"fixture service on port {args.port}", flush=True)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")


if __name__ == "__main__":
    sys.exit(main())
