"""ABM+MPO vs BM+MPO vs MPO without a prior on a 50/50 mixture of opposing experts.

    python scripts/conflicting_data.py --seeds 0 1 2 3 4
"""
import argparse

import numpy as np

from abmprior import experiments


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()
    ceiling = experiments.expert_ceiling()
    print(f"single-expert ceiling on reach-A: {ceiling:.1f}")
    table = {k: [] for k in ("abm", "bm", "none")}
    for seed in args.seeds:
        out = experiments.conflicting_data(seed)
        for k, o in out.items():
            table[k].append(o.final_return)
        print(f"seed {seed}: " + "  ".join(f"{k} {o.final_return:6.1f} ({o.seconds:.0f}s)" for k, o in out.items()),
              flush=True)
    for k, v in table.items():
        print(f"{k:>5}: mean {np.mean(v):6.1f}  std {np.std(v):5.1f}")


if __name__ == "__main__":
    main()
