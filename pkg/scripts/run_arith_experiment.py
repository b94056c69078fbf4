"""Arithmetic run: GCPO against GRPO and DAPO from the same warmed-up start.

    python3 scripts/run_arith_experiment.py --out runs/arith
"""

import argparse
from pathlib import Path

from gcpo_lab.config import load_config
from gcpo_lab.trainer import train

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/arith")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()

    rows = []
    for algorithm in ("grpo", "dapo", "gcpo"):
        overrides = [f'algorithm="{algorithm}"', f"seed={args.seed}"]
        if args.steps is not None:
            overrides.append(f"steps={args.steps}")
        config = load_config(CONFIGS / "arith_gcpo.json", overrides)
        result = train(config, Path(args.out) / algorithm)
        rows.append((algorithm, result.baseline_eval, result.final_eval))
        print(f"{algorithm:10s} baseline {result.baseline_eval:.4f} final {result.final_eval:.4f}")

    print("\nalgorithm   gain")
    for algorithm, base, final in rows:
        print(f"{algorithm:10s} {final - base:+.4f}")


if __name__ == "__main__":
    main()
