"""Train a short grid policy, then dump guidance heatmaps for every prompt.

    python3 scripts/guidance_heatmaps.py --out runs/heatmaps
"""

import argparse
from pathlib import Path

from gcpo_lab.cli import main as cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/heatmaps")
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--prompts", type=int, default=8)
    args = p.parse_args()

    out = Path(args.out)
    code = cli(["train", "--config", str(CONFIGS / "grid_gcpo.json"), "--out", str(out / "train"),
                "--set", f"steps={args.steps}"])
    if code:
        raise SystemExit(code)
    for i in range(args.prompts):
        code = cli(["heatmap", "--checkpoint", str(out / "train" / "checkpoint.json"),
                    "--prompt", str(i), "--out", str(out / f"prompt_{i}")])
        if code:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
