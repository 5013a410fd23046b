"""Descriptor compression and product quantization, measured.

Trains a small compressor on a synthetic descriptor corpus, checks how well
cosine similarity survives the 96-d bottleneck, then trains a PQ codebook
and checks how well asymmetric (table-based) distances track exact ones.
"""

import numpy as np
from scipy.stats import spearmanr

from latentsearch.descriptor import (adc_distance, build_adc_table,
                                     compress_batch, quantize_descriptor,
                                     train_compressor, train_pq)
from latentsearch.synthetic import compressed_corpus, descriptor_corpus


def main():
    rng = np.random.default_rng(42)

    print("== compressor ==")
    full = descriptor_corpus(rng, 12500)
    model, _ = train_compressor(full[:12000], epochs=15, seed=0)
    held = full[12000:]
    idx = rng.permutation(500)
    a, b = held, held[idx]
    exact = np.sum(a * b, axis=1)
    ca, cb = compress_batch(model, a), compress_batch(model, b)
    approx = np.sum(ca * cb, axis=1)
    err = np.abs(exact - approx)
    print(f"cosine drift over 500 held-out pairs: "
          f"mean {err.mean():.4f}, p95 {np.percentile(err, 95):.4f}")

    print("\n== product quantizer ==")
    pq_corpus = compressed_corpus(rng, 4000)
    codebook = train_pq(pq_corpus, seed=0, iters=15)
    queries = pq_corpus[rng.integers(0, len(pq_corpus), 200)]
    scales = np.exp(rng.uniform(np.log(0.05), np.log(1.5), 200))
    targets = queries + scales[:, None] * rng.normal(0, 1, queries.shape)
    exact_d, adc_d = [], []
    for x, y in zip(queries, targets):
        x = x / np.linalg.norm(x)
        y = y / np.linalg.norm(y)
        qy = quantize_descriptor(codebook, y)
        table = build_adc_table(x, codebook)
        exact_d.append(np.linalg.norm(x - y) ** 2)
        adc_d.append(adc_distance(x, qy, codebook, table=table))
    rho = spearmanr(exact_d, adc_d).statistic
    print(f"Spearman(exact squared distance, ADC distance) over 200 pairs: "
          f"{rho:.4f}")
    print(f"codebook: m={codebook.m} subvectors, "
          f"{codebook.centroids.shape[1]} centroids each"
          f" -> {codebook.m} bytes per descriptor "
          f"(vs {queries.shape[1] * 4} uncompressed)")


if __name__ == "__main__":
    main()
