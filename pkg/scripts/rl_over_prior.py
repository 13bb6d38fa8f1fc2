"""Does the KL-regularised policy beat the ABM prior it is anchored to? Weak, noisy personas."""
import argparse

from abmprior import experiments


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()
    wins = 0
    for seed in args.seeds:
        r = experiments.rl_over_prior(seed)
        wins += r["policy"] > r["prior"]
        print(f"seed {seed}: policy {r['policy']:6.1f}  prior {r['prior']:6.1f}", flush=True)
    print(f"policy ahead on {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
