"""Grasping benchmark: accumulated vs random contexts and the 64 vs 32 px field of view.

    python scripts/grasp_benchmark.py --config configs/canonical.yaml --seeds 3
"""

import argparse

import numpy as np

from hetgrasp import experiments
from hetgrasp.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/canonical.yaml")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    cfg = load_config(args.config)
    seeds = cfg.eval.seeds[:args.seeds]
    data = experiments.build(cfg, args.jobs)
    large = experiments.train_condex_only(cfg, data, log_every=500)
    small = experiments.train_condex_only(cfg, data, fov=32, log_every=500)
    rows = [
        ("64px random", experiments.run_benchmark(cfg, data, large, "random", seeds)),
        ("64px accumulated", experiments.run_benchmark(cfg, data, large, "accumulated", seeds)),
        ("32px random", experiments.run_benchmark(cfg, data, small, "random", seeds)),
    ]
    print(f"{'setting':<18} accuracy robust  context+ random-pick")
    for name, r in rows:
        print(f"{name:<18} {np.mean(r['accuracy']):.4f}   {np.mean(r['robust_rate']):.4f}  "
              f"{np.mean(r['context_positive']):.4f}   {np.mean(r['random_accuracy']):.4f}")


if __name__ == "__main__":
    main()
