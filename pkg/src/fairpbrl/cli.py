"""Command line runner: ``fairpbrl train | eval | compare | keys``.

Exit status is 0 on success, 1 when a run fails at runtime and 2 for usage
or configuration errors. Run artifacts go to ``<out>/<env>/<variant>/seed<k>/``
where ``<out>`` is ``--out``, else ``$FPRL_OUT``, else the ``out`` config key.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from ._validation import ContractError
from .agent import VARIANTS, FairPPO
from .envs import make_env
from .evalharness import (aggregate, evaluate, read_report, write_comparison, write_plot_data,
                          write_report)

log = logging.getLogger("fairpbrl")

CHECKPOINT = "model.ckpt"
TRACE = "trace.csv"
RUN_CONFIG = "config.cfg"
REPORT = "eval_report.csv"
COMPARISON = "comparison.csv"
PLOT_DATA = "plot_data.csv"


class UsageError(Exception):
    pass


def _int_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def output_root(cfg, flag=None):
    if flag:
        return Path(flag)
    return Path(os.environ.get("FPRL_OUT") or cfg["out"])


def run_dir(root, env, variant, seed):
    return Path(root) / env / variant / f"seed{seed}"


def train_one(cfg, root):
    """Train one (env, variant, seed) run; returns its directory."""
    env = make_env(cfg["env"], **cfgmod.env_params(cfg))
    out = run_dir(root, cfg["env"], cfg["variant"], cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump(cfg, out / RUN_CONFIG)
    agent = FairPPO(variant=cfg["variant"], random_state=cfg["seed"], **cfgmod.agent_params(cfg))
    agent.fit(env, trace_path=out / TRACE)
    agent.save(out / CHECKPOINT)
    return out


def _resolve(args):
    overrides = list(args.set or [])
    cfg = cfgmod.load(args.config, overrides)
    if getattr(args, "env", None):
        cfg["env"] = args.env
    cfgmod.env_params(cfg)
    return cfg


def cmd_train(args):
    cfg = _resolve(args)
    variants = args.variant.split(",") if args.variant else [cfg["variant"]]
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    seeds = _int_list(args.seed) if args.seed is not None else [cfg["seed"]]
    root = output_root(cfg, args.out)
    jobs = [dict(cfg, variant=v, seed=s) for v in variants for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            dirs = list(pool.map(train_one, jobs, [root] * len(jobs)))
    else:
        dirs = [train_one(job, root) for job in jobs]
    for d in dirs:
        print(d)
    return 0


def _checkpoint_path(target):
    p = Path(target)
    if p.is_dir():
        p = p / CHECKPOINT
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return p


def cmd_eval(args):
    ckpt = _checkpoint_path(args.checkpoint)
    saved = ckpt.parent / RUN_CONFIG
    cfg = cfgmod.load(saved if saved.is_file() and args.config is None else args.config, args.set or [])
    if args.env:
        cfg["env"] = args.env
    if args.trajectories is not None:
        cfg["eval.trajectories"] = args.trajectories
    if args.eval_seed is not None:
        cfg["eval.seed"] = args.eval_seed
    if args.greedy:
        cfg["eval.greedy"] = True
    env = make_env(cfg["env"], **cfgmod.env_params(cfg))
    weights = cfg["welfare.weights"] or None
    report = evaluate(ckpt, env, trajectories=cfg["eval.trajectories"], weights=weights,
                      seed=cfg["eval.seed"], greedy=cfg["eval.greedy"], variant=cfg["variant"])
    report.seed = cfg["seed"]
    dest = Path(args.report) if args.report else ckpt.parent / REPORT
    write_report(report, dest)
    print(f"{dest}: welfare {report.welfare:.4f} cv {report.cv:.4f} "
          f"min {report.min_util:.4f} max {report.max_util:.4f} ({report.trajectories} trajectories)")
    return 0


def _find_reports(paths):
    found = []
    for p in map(Path, paths):
        if p.is_file():
            found.append(p)
        elif p.is_dir():
            direct = p / REPORT
            found.extend([direct] if direct.is_file() else sorted(p.rglob(REPORT)))
        else:
            raise FileNotFoundError(f"no such run directory: {p}")
    if not found:
        raise FileNotFoundError(f"no {REPORT} under {', '.join(map(str, paths))}")
    return found


def cmd_compare(args):
    reports = [read_report(p) for p in _find_reports(args.runs)]
    table = aggregate(reports)
    out = Path(args.out) if args.out else Path(os.environ.get("FPRL_OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_comparison(table, out / COMPARISON)
    print(out / COMPARISON)
    if args.plot_data:
        write_plot_data(reports, out / PLOT_DATA)
        print(out / PLOT_DATA)
    for row in table:
        print(f"{row['variant']:>18}  n={row['n_seeds']}  welfare {row['welfare_mean']:.3f}"
              f"±{row['welfare_std']:.3f}  cv {row['cv_mean']:.3f}  min {row['min_util_mean']:.3f}")
    return 0


def cmd_keys(args):
    for key in sorted(cfgmod.DEFAULTS):
        print(f"{key} = {cfgmod.format_value(cfgmod.DEFAULTS[key])}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="fairpbrl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--env", help="environment name (overrides the config)")

    p = sub.add_parser("train", help="train one or more runs")
    common(p)
    p.add_argument("--variant", help="variant, or a comma-separated list")
    p.add_argument("--seed", help="seed, list (0,1,2) or range (0-4)")
    p.add_argument("--out", help="output root")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("checkpoint", help="checkpoint file or run directory")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--eval-seed", type=int)
    p.add_argument("--greedy", action="store_true", help="argmax actions instead of sampling")
    p.add_argument("--report", help=f"output path (default: {REPORT} next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="aggregate evaluation reports")
    p.add_argument("runs", nargs="+", help="run directories or report files")
    p.add_argument("--out", help="directory for the comparison tables")
    p.add_argument("--plot-data", action="store_true", help="also write long-format plot data")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("keys", help="list every config key with its default")
    p.set_defaults(func=cmd_keys)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
