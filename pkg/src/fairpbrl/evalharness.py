"""Post-training evaluation and cross-seed comparison.

A trained policy is rolled out for a fixed number of episodes, scored on
ground-truth (undiscounted) vector returns, and summarized by welfare, CV and
the min/max objective. Reports from several seeds and variants are then
aggregated into one comparison table.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import approximator as nn
from ._validation import ContractError
from .agent import FairPPO, VARIANTS, log_softmax
from .seeding import trajectory_seed
from .welfare import coefficient_of_variation, default_gini_weights, ggf

DEFAULT_TRAJECTORIES = 100

SUMMARY_FIELDS = ("welfare", "cv", "min_util", "max_util")


def _cv_or_nan(u):
    try:
        return coefficient_of_variation(u)
    except ZeroDivisionError:
        return float("nan")


@dataclass
class EvalReport:
    env: str
    variant: str
    seed: int
    returns: np.ndarray
    weights: np.ndarray
    mean_return: np.ndarray = field(init=False)
    welfare: float = field(init=False)
    cv: float = field(init=False)
    min_util: float = field(init=False)
    max_util: float = field(init=False)

    def __post_init__(self):
        self.returns = np.atleast_2d(np.asarray(self.returns, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.returns.shape[0] < 1:
            raise ContractError("an evaluation report needs at least one trajectory")
        self.mean_return = self.returns.mean(axis=0)
        self.welfare = ggf(self.mean_return, self.weights)
        # nan marks an undefined CV (zero mean utility)
        self.cv = _cv_or_nan(self.mean_return)
        self.min_util = float(self.mean_return.min())
        self.max_util = float(self.mean_return.max())

    @property
    def trajectories(self):
        return self.returns.shape[0]

    @property
    def n_objectives(self):
        return self.returns.shape[1]

    @property
    def cv_defined(self):
        return not math.isnan(self.cv)


def _policy_from(checkpoint):
    if isinstance(checkpoint, FairPPO):
        return checkpoint.policy_
    if isinstance(checkpoint, nn.ParamSet):
        return checkpoint
    if isinstance(checkpoint, dict):
        blocks = checkpoint
    else:
        path = Path(checkpoint)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        blocks = nn.load_checkpoint(path)
    if "policy" not in blocks:
        raise ContractError("checkpoint has no policy block")
    return blocks["policy"]


def rollout_returns(policy, env, trajectories, seed, greedy=False):
    """Undiscounted ground-truth vector return of each evaluation episode.

    Episode ``i`` draws its start state, dynamics and actions from its own
    stream, so results do not depend on the order episodes are run in.
    """
    spec = env.spec()
    returns = np.zeros((trajectories, spec.n_objectives))
    for i in range(trajectories):
        env_rng, act_rng = trajectory_seed(seed, i).spawn(2)
        obs = env.reset(env_rng)
        while True:
            logp = log_softmax(nn.forward(policy, obs))
            if greedy:
                a = int(np.argmax(logp))
            else:
                p = np.exp(logp)
                a = int(act_rng.choice(spec.n_actions, p=p / p.sum()))
            tr = env.step(a)
            returns[i] += tr.reward
            if tr.terminal:
                break
            obs = tr.next_observation
    return returns


def evaluate(checkpoint, env, trajectories=DEFAULT_TRAJECTORIES, weights=None, seed=0,
             greedy=False, variant=""):
    """Roll out a trained policy and score it.

    ``checkpoint`` may be a checkpoint path, a loaded block dict, a policy
    ``ParamSet`` or a fitted :class:`FairPPO`.
    """
    if int(trajectories) < 1:
        raise ContractError("trajectories must be at least 1")
    policy = _policy_from(checkpoint)
    spec = env.spec()
    if policy.n_inputs != spec.obs_dim or policy.n_outputs != spec.n_actions:
        raise ContractError(
            f"policy {policy.n_inputs}->{policy.n_outputs} does not fit {spec.name} "
            f"(obs {spec.obs_dim}, actions {spec.n_actions})")
    w = default_gini_weights(spec.n_objectives) if weights is None else np.asarray(weights, float)
    returns = rollout_returns(policy, env, int(trajectories), seed, greedy=greedy)
    return EvalReport(spec.name, variant, int(seed), returns, w)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def report_columns(n_objectives):
    return (["env", "variant", "seed", "row"] + [f"obj_{i + 1}" for i in range(n_objectives)]
            + list(SUMMARY_FIELDS))


def write_report(report, path):
    """One ``trajectory`` row per episode, then a ``mean`` row holding the report summary."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(report_columns(report.n_objectives))
        head = [report.env, report.variant, report.seed]
        for i, r in enumerate(report.returns):
            out.writerow([_fmt(v) for v in head + [str(i), *r, ggf(r, report.weights), _cv_or_nan(r),
                                                     r.min(), r.max()]])
        out.writerow([_fmt(v) for v in head + ["mean", *report.mean_return, report.welfare,
                                                report.cv, report.min_util, report.max_util]])
    return Path(path)


def read_report(path, weights=None):
    """Rebuild an :class:`EvalReport` from its per-trajectory rows."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    traj = [r for r in rows if r["row"] != "mean"]
    if not traj:
        raise ContractError(f"{path}: no trajectory rows")
    k = sum(1 for c in rows[0] if c.startswith("obj_"))
    returns = np.array([[float(r[f"obj_{i + 1}"]) for i in range(k)] for r in traj])
    w = default_gini_weights(k) if weights is None else weights
    first = traj[0]
    return EvalReport(first["env"], first["variant"], int(first["seed"]), returns, w)


def _variant_order(name):
    return (VARIANTS.index(name), name) if name in VARIANTS else (len(VARIANTS), name)


def _mean_std(values):
    values = [float(v) for v in values]
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def aggregate(reports):
    """Per-variant mean and population std of every summary statistic.

    Rows come out in variant order (ppo_ground_truth, pbrl_scalar, fpbrl,
    then any other names alphabetically). Reports are sorted by seed before
    reduction, so the result does not depend on the input order.
    """
    reports = list(reports)
    if not reports:
        raise ContractError("nothing to aggregate")
    envs = {r.env for r in reports}
    if len(envs) > 1:
        raise ContractError(f"reports from different environments: {sorted(envs)}")
    ks = {r.n_objectives for r in reports}
    if len(ks) > 1:
        raise ContractError("reports disagree on the number of objectives")
    k = ks.pop()
    groups = {}
    for r in reports:
        groups.setdefault(r.variant, []).append(r)
    table = []
    for variant in sorted(groups, key=_variant_order):
        group = sorted(groups[variant], key=lambda r: r.seed)
        row = {"env": group[0].env, "variant": variant, "n_seeds": len(group)}
        for name in SUMMARY_FIELDS:
            row[f"{name}_mean"], row[f"{name}_std"] = _mean_std(getattr(r, name) for r in group)
        for i in range(k):
            row[f"obj_{i + 1}_mean"], row[f"obj_{i + 1}_std"] = _mean_std(r.mean_return[i] for r in group)
        table.append(row)
    return table


def comparison_columns(n_objectives):
    cols = ["env", "variant", "n_seeds"]
    for name in SUMMARY_FIELDS + tuple(f"obj_{i + 1}" for i in range(n_objectives)):
        cols += [f"{name}_mean", f"{name}_std"]
    return cols


def write_comparison(table, path):
    k = sum(1 for c in table[0] if c.startswith("obj_") and c.endswith("_mean"))
    cols = comparison_columns(k)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for row in table:
            out.writerow([_fmt(row[c]) for c in cols])
    return Path(path)


PLOT_COLUMNS = ("env", "panel", "variant", "seed", "metric", "value")


def plot_rows(reports):
    """Long-format rows: per seed welfare (box data), per-objective utilities
    (bars) and cv/min/max (fairness bars)."""
    rows = []
    for r in sorted(reports, key=lambda r: (_variant_order(r.variant), r.seed)):
        rows.append((r.env, "welfare", r.variant, r.seed, "welfare", r.welfare))
        for i, u in enumerate(r.mean_return):
            rows.append((r.env, "objectives", r.variant, r.seed, f"obj_{i + 1}", u))
        for name in ("cv", "min_util", "max_util"):
            rows.append((r.env, "fairness", r.variant, r.seed, name, getattr(r, name)))
    return rows


def write_plot_data(reports, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PLOT_COLUMNS)
        for row in plot_rows(reports):
            out.writerow([_fmt(v) for v in row])
    return Path(path)
