"""Per-key-frame inference runtime against window size and proposal count.

    python3 scripts/run_bench.py --variant full --out bench.txt
"""
import argparse
from pathlib import Path

from stca.experiments import BENCH_PROPOSALS, BENCH_WINDOWS, run_bench
from stca.proposals import StcaConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--variant", default="full", choices=["semantic", "spatial", "full"])
    parser.add_argument("--proposals", type=int, nargs="+", default=list(BENCH_PROPOSALS))
    parser.add_argument("--windows", type=int, nargs="+", default=list(BENCH_WINDOWS))
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out")
    args = parser.parse_args()

    cfg = StcaConfig.desk(variant=args.variant)
    result = run_bench(cfg, args.proposals, args.windows, args.repeats, threads=args.threads, log=print)
    text = result.to_text()
    for n in result.proposals:
        text += f"\nN={n}: strictly increasing {result.strictly_increasing(n)}, slope {1e3 * result.slope(n):.3f} ms/frame"
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")


if __name__ == "__main__":
    main()
