"""Train ConDex and DexNet, then print error vs context size with sign tests.

    python scripts/context_curve.py --config configs/canonical.yaml
"""

import argparse
import json

from hetgrasp import experiments
from hetgrasp.config import load_config, with_overrides


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/canonical.yaml")
    ap.add_argument("--steps", type=int, help="override training steps for both models")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.steps:
        cfg = with_overrides(cfg, training={"steps": args.steps, "dexnet_steps": args.steps})
    data = experiments.build(cfg, args.jobs)
    print(f"{len(data.obs)} observations, F_N {data.clamp_force:.1f} N, positive rate {data.obs.positive_rate():.4f}")
    models = experiments.train_pair(cfg, data, log_every=500)
    ks = (0, 1, 2, 5, 10, 15, 20)
    res = experiments.context_benefit(cfg, data, models["condex"], models["dexnet"], ks)
    print("seed " + " ".join(f"K{k:<5}" for k in ks) + " dexnet")
    for s in res["per_seed"]:
        print(f"{s['seed']:>4} " + " ".join(f"{s[f'K{k}']:.4f}" for k in ks) + f" {s['dexnet']:.4f}")
    print(json.dumps({"mean": res["mean"], "dexnet": res["dexnet_mean"], "k15_vs_k0": res["k15_vs_k0"],
                      "k15_vs_dexnet": res["k15_vs_dexnet"]}, indent=1))


if __name__ == "__main__":
    main()
