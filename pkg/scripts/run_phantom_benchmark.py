#!/usr/bin/env python3
"""Occlusion-robustness benchmark on synthetic lung phantoms.

Trains the proposed variational-imputation model (block + diffuse
augmentation) and the baseline U-Net (standard augmentation) over several
seeds, evaluates both on a fully occluded test split, and prints a summary
table. This is the desk-scale analogue of the full ablation grid's first
and last rows.
"""

import argparse
import json
from pathlib import Path

from vimpute_seg.bench import run_benchmark


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--max-epochs", type=int, default=20)
    parser.add_argument("--patience", type=int, default=8)
    parser.add_argument("--data-seed", type=int, default=1000)
    parser.add_argument("--json-out", default=None, help="optional path for a JSON summary")
    args = parser.parse_args()

    results = run_benchmark(seeds=args.seeds, verbose=True, max_epochs=args.max_epochs,
                            patience=args.patience, data_seed=args.data_seed)

    print()
    print(f"{'seed':>4}  {'proposed (block+diffuse)':>25}  {'baseline (standard)':>20}  ordered")
    for r in results:
        print(f"{r.seed:>4}  {r.proposed_dice:>25.4f}  {r.baseline_dice:>20.4f}  "
              f"{'yes' if r.ordered else 'NO'}")
    wins = sum(1 for r in results if r.ordered and r.proposed_dice >= 0.85)
    print(f"\nproposed wins with dice >= 0.85 on {wins}/{len(results)} seeds")

    if args.json_out:
        payload = [
            {"seed": r.seed, "proposed_dice": r.proposed_dice,
             "baseline_dice": r.baseline_dice, "ordered": r.ordered,
             "proposed_epochs": r.proposed_epochs, "baseline_epochs": r.baseline_epochs}
            for r in results
        ]
        Path(args.json_out).write_text(json.dumps(payload, indent=2))
        print(f"wrote {args.json_out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
