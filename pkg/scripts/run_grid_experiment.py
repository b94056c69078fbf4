"""Grid run with guided sampling; prints 10-step window means of the training reward.

    python3 scripts/run_grid_experiment.py --out runs/grid
"""

import argparse
from pathlib import Path

import numpy as np

from gcpo_lab.config import load_config
from gcpo_lab.trainer import train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def window_means(values, width=10):
    values = np.asarray(values, dtype=float)
    usable = len(values) // width * width
    return values[:usable].reshape(-1, width).mean(axis=1)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/grid")
    p.add_argument("--algorithm", default="gcpo", choices=("grpo", "gcpo", "dapo", "vppo_like"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()

    config = load_config(CONFIGS / "grid_gcpo.json", [f'algorithm="{args.algorithm}"'] + args.set)
    result = train(config, Path(args.out))
    windows = window_means([row.mean_reward for row in result.metrics])
    print(f"eval {result.baseline_eval:.4f} -> {result.final_eval:.4f}")
    print("window means:", " ".join(f"{w:.3f}" for w in windows))
    print("strictly increasing:", bool(np.all(np.diff(windows) > 0)))


if __name__ == "__main__":
    main()
