"""Five-row ablation on the standard synthetic task, optionally over several trainer seeds.

    python3 scripts/run_ablation.py --seeds 0 1 2 --ws-init folded
"""
import argparse
import dataclasses

import numpy as np

from stca.experiments import format_ablation, run_ablation
from stca.io import RunConfig
from stca.synthetic import generate_synthetic


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data-seed", type=int, default=1)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--ws-init", default="gaussian", choices=["gaussian", "folded"])
    parser.add_argument("--steps", type=int, default=None)
    args = parser.parse_args()

    run = RunConfig()
    videos = generate_synthetic(run.stca, args.data_seed, run.data.num_videos, run.data.num_frames)
    accs = {}
    for seed in args.seeds:
        changes = {"seed": seed, "ws_init": args.ws_init}
        if args.steps is not None:
            changes["steps"] = args.steps
        train_cfg = dataclasses.replace(run.train, **changes)
        print(f"-- trainer seed {seed}")
        rows = run_ablation(videos, run.stca, train_cfg, run.data.holdout, log=print)
        print(format_ablation(rows))
        for r in rows:
            accs.setdefault(r.label, []).append(r.accuracy)
    if len(args.seeds) > 1:
        print("-- mean accuracy over seeds")
        for label, values in accs.items():
            print(f"({label}) {np.mean(values):.3f} +- {np.std(values):.3f}")


if __name__ == "__main__":
    main()
