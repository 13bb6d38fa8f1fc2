"""Command line: gen-data, train, eval, gradcheck."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .envs import ENVIRONMENTS, Persona, generate_dataset, make_env


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def parse_persona(text: str) -> Persona:
    """``name:task[:noise_std[:competence]]``"""
    parts = text.split(":")
    if len(parts) < 2 or len(parts) > 4:
        raise CliError(f"bad persona {text!r}; expected name:task[:noise_std[:competence]]")
    try:
        nums = [float(x) for x in parts[2:]]
    except ValueError:
        raise CliError(f"bad persona {text!r}; noise and competence must be numbers") from None
    return Persona(parts[0], parts[1], *nums)


def _cmd_gen_data(args) -> int:
    env = make_env(args.env, args.episode_len or 200)
    personas = [parse_persona(p) for p in args.persona]
    for p in personas:
        env.task(p.target_task)
    weights = None
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gen = generate_dataset(env, personas, weights, args.episodes, seed=args.seed, path=out)
    print(f"wrote {len(gen.data)} transitions ({args.episodes} episodes) to {out}")
    return 0


def _cmd_train(args) -> int:
    from .trainer import train

    config = load_config(args.config, args.set or ())
    if config.dataset_path is None:
        raise CliError("dataset_path is not set (config file or --set dataset_path=...)")
    if not Path(config.dataset_path).is_file():
        raise FileNotFoundError(f"dataset not found: {config.dataset_path}")

    def progress(row):
        print(f"step {row.step} td_loss {row.td_loss:.4g} prior_loss {row.prior_loss:.4g} "
              f"eta {row.eta:.4g} weight_fraction {row.weight_fraction:.3f} "
              f"eval_return {row.eval_return_mean:.2f}", flush=True)

    result = train(config, progress=None if args.quiet else progress)
    where = f" -> {result.out_dir}" if result.out_dir else ""
    print(f"trained {config.total_steps} steps{where}")
    return 0


def _cmd_eval(args) -> int:
    from .trainer import evaluate

    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    env = make_env(args.env, args.episode_len or 200)
    task_ids = None
    meta = ckpt.parent / "meta.json"
    if meta.is_file():
        task_ids = json.loads(meta.read_text())["task_ids"]
    stats = evaluate(ckpt, env, args.episodes, args.seed, args.task, task_ids)
    stats.pop("returns")
    print(json.dumps(stats))
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import main

    return 0 if main(args.instances, args.seed, args.tol) else 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="abmprior", description="Offline RL with behaviour-model priors.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="roll out scripted personas into a dataset file")
    g.add_argument("--env", default="two-goal-point-mass", choices=sorted(ENVIRONMENTS))
    g.add_argument("--persona", action="append", required=True,
                   help="name:task[:noise_std[:competence]], repeatable")
    g.add_argument("--weights", help="comma-separated mixture weights, default uniform")
    g.add_argument("--episodes", type=int, default=100)
    g.add_argument("--episode-len", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train from a config file")
    t.add_argument("config", nargs="?", help="YAML file with TrainConfig fields")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    t.add_argument("-q", "--quiet", action="store_true")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="roll out a checkpoint's mean action")
    e.add_argument("checkpoint")
    e.add_argument("--env", default="two-goal-point-mass", choices=sorted(ENVIRONMENTS))
    e.add_argument("--task", default="reach-A")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--episode-len", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=_cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    c.add_argument("--instances", type=int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(fn=_cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.fn(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (CliError, FileNotFoundError, KeyError, ValueError, FloatingPointError, RuntimeError) as exc:
        msg = str(exc).strip("'\"").replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
