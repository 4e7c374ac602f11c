"""Overfit WBC_PART (L=3) on 8 identities x 6 images and re-rank the training set.

    python scripts/overfit.py [--iters 500] [--seed 0]
"""
import argparse
import time

from wbcreid.dataio import SynthConfig, generate_arrays, resplit_probe_gallery
from wbcreid.evaluation import evaluate
from wbcreid.model import ModelConfig
from wbcreid.trainer import SGDConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = generate_arrays(SynthConfig(identities=8, images_per_identity=6, test_identities=0, seed=args.seed))
    t0 = time.perf_counter()
    params, log = train(data.images, data.labels, ModelConfig(parts=3, seed=args.seed), SGDConfig.desk(max_iters=args.iters, seed=args.seed))
    split = resplit_probe_gallery(data)
    probe, gallery = split.subset("probe"), split.subset("gallery")
    report = evaluate(params, (probe.images, probe.labels), (gallery.images, gallery.labels))
    for it, lr, loss, active in log.rows[:: max(1, len(log.rows) // 10)]:
        print(f"iter {it:4d}  lr {lr:.4g}  loss {loss:.5f}  active {active:.3f}")
    print(f"final loss {log.losses[-1]:.2e}  rank-1 {report.rank(1):.3f}  mAP {report.mAP:.4f}  ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
