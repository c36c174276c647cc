"""Generator-aware Bayes accuracy of the synthetic task against the window size."""
import argparse

from stca.io import RunConfig
from stca.synthetic import bayes_accuracy, generate_synthetic


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--windows", type=int, nargs="+", default=[0, 1, 3, 5, 31])
    args = parser.parse_args()
    run = RunConfig()
    videos = generate_synthetic(run.stca, args.seed, run.data.num_videos, run.data.num_frames)
    for window in args.windows:
        print(f"window {window:>3}: class-sign cue {bayes_accuracy(videos, window):.4f}   "
              f"geometric cue {bayes_accuracy(videos, window, geometry=True):.4f}")


if __name__ == "__main__":
    main()
