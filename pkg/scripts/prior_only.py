"""Prior-only training (no policy improvement) with short and long snippets, against full ABM+MPO."""
import argparse

from abmprior import experiments


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()
    for seed in args.seeds:
        out = experiments.epsilon_zero(seed)
        print(f"seed {seed}: " + "  ".join(f"{k} {o.final_return:6.1f}" for k, o in out.items()), flush=True)


if __name__ == "__main__":
    main()
