"""PPO with scalar or Gini-welfare advantages, in three training variants.

``ppo_ground_truth``
    Plain PPO on the (weighted) sum of the environment's reward vector.
``pbrl_scalar``
    PPO on a one-output reward model learned from sum-based preferences.
``fpbrl``
    PPO with a K-output critic on a vector reward model learned from
    welfare-based preferences. Per-objective advantages are collapsed with
    the sorted weight vector of the current return estimate, so the update
    follows the welfare gradient ``w_sigma . grad J``.
"""

import csv
import math
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import approximator as nn
from ._validation import ContractError, DivergenceError
from .preference import RewardModel, label_pairs, segments_from_trajectories
from .seeding import stream
from .welfare import check_gini_weights, coefficient_of_variation, default_gini_weights, ggf, sorted_weight_vector

VARIANTS = ("ppo_ground_truth", "pbrl_scalar", "fpbrl")


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def gae_advantages(rewards, values, next_values, terminals, gamma, lam):
    """Per-objective generalized advantage estimates and value targets.

    All arrays are time-major: ``rewards``, ``values`` and ``next_values`` are
    ``(T, K)``, ``terminals`` is ``(T,)``. The bootstrap value is zero after a
    terminal step, and the recursion restarts there.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    if rewards.ndim != 2 or len(rewards) == 0:
        raise ContractError("rewards must be a non-empty (T, K) array")
    if values.shape != rewards.shape or next_values.shape != rewards.shape:
        raise ContractError("critic width does not match reward width")
    terminals = np.asarray(terminals, dtype=bool)
    live = (~terminals).astype(np.float64)[:, None]
    deltas = rewards + gamma * next_values * live - values
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1])
    for t in range(len(rewards) - 1, -1, -1):
        running = deltas[t] + gamma * lam * live[t] * running
        adv[t] = running
    return adv, adv + values


def standardize(x):
    """Zero-mean, unit-variance copy of ``x``; all zeros when ``x`` is constant."""
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    if std < 1e-12:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def ggf_scalarize_advantages(advantages, j_mean, weights, normalize=True):
    """Collapse ``(T, K)`` advantages to ``(T,)`` with the sorted weight vector of ``j_mean``."""
    advantages = np.asarray(advantages, dtype=np.float64)
    w = check_gini_weights(weights)
    if advantages.ndim != 2 or advantages.shape[1] != w.size:
        raise ContractError(f"advantages of shape {advantages.shape} do not match {w.size} weights")
    w_sigma = sorted_weight_vector(j_mean, w)
    scalar = advantages @ w_sigma
    return standardize(scalar) if normalize else scalar


class ReturnEstimate:
    """Exponential moving average of episodic vector returns.

    Each call to :meth:`update` folds in the (exactly rounded) mean of one
    iteration's completed episodes; the first call just adopts it.
    """

    def __init__(self, n_objectives, decay=0.9):
        if not 0 <= decay < 1:
            raise ContractError("decay must be in [0, 1)")
        self.decay = decay
        self.mean = np.zeros(n_objectives)
        self.n_updates = 0

    def update(self, episode_returns):
        episode_returns = np.asarray(episode_returns, dtype=np.float64)
        if episode_returns.size == 0:
            return self.mean
        if episode_returns.ndim != 2 or episode_returns.shape[1] != self.mean.size:
            raise ContractError("episode returns do not match the estimate's width")
        n = len(episode_returns)
        batch = np.array([math.fsum(col) / n for col in episode_returns.T])
        if self.n_updates == 0:
            self.mean = batch
        else:
            self.mean = self.decay * self.mean + (1 - self.decay) * batch
        self.n_updates += 1
        return self.mean


def ppo_policy_loss(params, observations, actions, old_log_probs, advantages, clip_eps=0.2,
                    entropy_coef=0.0):
    """Negative clipped surrogate minus entropy bonus, with its gradient.

    Returns ``(loss, grad, diagnostics)``. A sample whose clipped term is the
    smaller one contributes no policy gradient.
    """
    logits, cache = nn.forward_cache(params, observations)
    n = len(actions)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[np.arange(n), actions]
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1 - clip_eps, 1 + clip_eps)
    unclipped_term = ratio * advantages
    clipped_term = clipped * advantages
    surrogate = np.minimum(unclipped_term, clipped_term)
    entropy = -(probs * logp_all).sum(axis=1)
    loss = -surrogate.mean() - entropy_coef * entropy.mean()

    active = unclipped_term <= clipped_term
    coef = np.where(active, ratio * advantages, 0.0)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    dsurr = coef[:, None] * (onehot - probs)
    dent = -probs * (logp_all + entropy[:, None])
    dlogits = -(dsurr + entropy_coef * dent) / n
    grad = nn.backward_from_cache(params, cache, dlogits)
    diag = {
        "ratio_mean": float(ratio.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1) > clip_eps)),
        "surrogate": float(surrogate.mean()),
        "entropy": float(entropy.mean()),
    }
    return float(loss), grad, diag


def value_loss(params, observations, targets):
    """Half mean squared error summed over objectives, with its gradient."""
    values, cache = nn.forward_cache(params, observations)
    err = values - targets
    n = len(targets)
    loss = 0.5 * float(np.sum(err * err)) / n
    return loss, nn.backward_from_cache(params, cache, err / n)


class RolloutBuffer:
    """Fixed-capacity on-policy storage for one iteration."""

    def __init__(self, capacity, obs_dim, reward_dim):
        self.capacity = capacity
        self.observations = np.zeros((capacity, obs_dim))
        self.next_observations = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.log_probs = np.zeros(capacity)
        self.ground_truth = None
        self.rewards = np.zeros((capacity, reward_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.advantages = None
        self.value_targets = None
        self.size = 0

    def add(self, obs, action, log_prob, gt_reward, next_obs, terminal):
        if self.size >= self.capacity:
            raise ContractError("rollout buffer is full")
        if self.ground_truth is None:
            self.ground_truth = np.zeros((self.capacity, len(gt_reward)))
        i = self.size
        self.observations[i] = obs
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.ground_truth[i] = gt_reward
        self.next_observations[i] = next_obs
        self.terminals[i] = terminal
        self.size += 1

    @property
    def full(self):
        return self.size == self.capacity

    def compute_advantages(self, critic, gamma, lam):
        if self.size == 0:
            raise ContractError("empty rollout buffer")
        n = self.size
        values = nn.forward(critic, self.observations[:n])
        next_values = nn.forward(critic, self.next_observations[:n])
        self.advantages, self.value_targets = gae_advantages(
            self.rewards[:n], values, next_values, self.terminals[:n], gamma, lam)
        return self.advantages, self.value_targets

    def pieces(self):
        """Contiguous ``(obs, actions, gt_rewards)`` runs split at episode ends."""
        out, start = [], 0
        for end in np.flatnonzero(self.terminals[:self.size]) + 1:
            out.append(slice(start, end))
            start = end
        if start < self.size:
            out.append(slice(start, self.size))
        return [(self.observations[s], self.actions[s], self.ground_truth[s]) for s in out]

    def clear(self):
        self.size = 0
        self.advantages = self.value_targets = None


def ppo_update(policy, critic, buffer, scalar_advantages, policy_opt, critic_opt, rng, clip_eps=0.2,
               epochs=4, minibatch_size=64, entropy_coef=0.01, max_grad_norm=0.5):
    """Several epochs of clipped-surrogate minibatch updates; returns mean diagnostics."""
    if buffer.value_targets is None:
        raise ContractError("advantages must be computed before the update")
    n = buffer.size
    diag = {"policy_loss": [], "value_loss": [], "ratio_mean": [], "clip_frac": [], "entropy": []}
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch_size):
            idx = order[start:start + minibatch_size]
            obs = buffer.observations[idx]
            ploss, pgrad, d = ppo_policy_loss(policy, obs, buffer.actions[idx], buffer.log_probs[idx],
                                              scalar_advantages[idx], clip_eps, entropy_coef)
            vloss, vgrad = value_loss(critic, obs, buffer.value_targets[idx])
            if not (np.isfinite(ploss) and np.isfinite(vloss)):
                raise DivergenceError("non-finite PPO loss", {k: list(v) for k, v in diag.items()})
            nn.clip_by_global_norm(pgrad, max_grad_norm)
            nn.clip_by_global_norm(vgrad, max_grad_norm)
            policy_opt.step(policy, pgrad)
            critic_opt.step(critic, vgrad)
            diag["policy_loss"].append(ploss)
            diag["value_loss"].append(vloss)
            for key in ("ratio_mean", "clip_frac", "entropy"):
                diag[key].append(d[key])
    return {k: float(np.mean(v)) for k, v in diag.items()}


def trace_columns(n_objectives):
    return (["iteration", "env_steps", "welfare_score"]
            + [f"obj_{i + 1}" for i in range(n_objectives)]
            + ["cv", "min_util", "max_util", "pref_count", "reward_loss", "policy_loss", "clip_frac"])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class FairPPO(BaseEstimator):
    """Policy learner for the three compared variants.

    ``fit(env)`` runs the interleaved loop: collect a rollout buffer, (for
    the learned variants) label a preference session and refit the reward
    model, update the return estimate, then run a PPO update on rewards as
    they were predicted at collection time. ``predict`` returns greedy
    actions; ``predict_proba`` the action distribution.

    Defaults follow common PPO practice; every argument is a config key (see
    :mod:`fairpbrl.config`).
    """

    def __init__(self, variant="fpbrl", weights=None, total_steps=150_000, buffer_size=2048,
                 gamma=0.99, gae_lambda=0.95, clip_eps=0.2, policy_lr=3e-4, critic_lr=3e-4,
                 ppo_epochs=4, minibatch_size=64, entropy_coef=0.01, max_grad_norm=0.5,
                 hidden=(64, 64), j_decay=0.9, j_source="learned", ppo_reward_weights=None,
                 reward_lr=1e-3, reward_epochs=5, reward_batch_size=32, reward_normalization="shared",
                 segment_length=25, session_size=30, budget=700, pref_discounted=True,
                 noisy_labels=False, random_state=0):
        self.variant = variant
        self.weights = weights
        self.total_steps = total_steps
        self.buffer_size = buffer_size
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.clip_eps = clip_eps
        self.policy_lr = policy_lr
        self.critic_lr = critic_lr
        self.ppo_epochs = ppo_epochs
        self.minibatch_size = minibatch_size
        self.entropy_coef = entropy_coef
        self.max_grad_norm = max_grad_norm
        self.hidden = hidden
        self.j_decay = j_decay
        self.j_source = j_source
        self.ppo_reward_weights = ppo_reward_weights
        self.reward_lr = reward_lr
        self.reward_epochs = reward_epochs
        self.reward_batch_size = reward_batch_size
        self.reward_normalization = reward_normalization
        self.segment_length = segment_length
        self.session_size = session_size
        self.budget = budget
        self.pref_discounted = pref_discounted
        self.noisy_labels = noisy_labels
        self.random_state = random_state

    # -- setup -----------------------------------------------------------
    def _setup(self, env):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.j_source not in ("learned", "ground_truth"):
            raise ContractError(f"unknown j_source {self.j_source!r}")
        if self.reward_normalization not in ("shared", "per_objective"):
            raise ContractError(f"unknown reward_normalization {self.reward_normalization!r}")
        spec = env.spec()
        self.env_spec_ = spec
        K = spec.n_objectives
        self.weights_ = default_gini_weights(K) if self.weights is None else check_gini_weights(self.weights)
        if self.weights_.size != K:
            raise ContractError(f"{self.weights_.size} Gini weights for a {K}-objective environment")
        if self.segment_length > spec.max_steps:
            raise ContractError(f"segment length {self.segment_length} exceeds episode length {spec.max_steps}")
        seed = self.random_state
        self._env_rng = stream(seed, "env")
        self._action_rng = stream(seed, "actions")
        self._oracle_rng = stream(seed, "oracle")
        self._ppo_rng = stream(seed, "ppo")
        self.reward_dim_ = K if self.variant == "fpbrl" else 1
        self.adv_weights_ = self.weights_ if self.variant == "fpbrl" else np.ones(1)
        h = list(self.hidden)
        self.policy_ = nn.init_mlp([spec.obs_dim, *h, spec.n_actions], stream(seed, "policy_init"),
                                   output_scale=0.01)
        self.critic_ = nn.init_mlp([spec.obs_dim, *h, self.reward_dim_], stream(seed, "critic_init"))
        self._policy_opt = nn.Adam(self.policy_, lr=self.policy_lr)
        self._critic_opt = nn.Adam(self.critic_, lr=self.critic_lr)
        if self.variant == "ppo_ground_truth":
            self.reward_model_ = None
            pw = np.ones(K) if self.ppo_reward_weights is None else np.asarray(self.ppo_reward_weights, float)
            if pw.shape != (K,):
                raise ContractError("ppo_reward_weights must have one entry per objective")
            self._gt_weights = pw
        else:
            self.reward_model_ = RewardModel(
                obs_dim=spec.obs_dim, n_actions=spec.n_actions, n_objectives=self.reward_dim_,
                mode="welfare" if self.variant == "fpbrl" else "scalar",
                weights=self.weights_ if self.variant == "fpbrl" else None,
                gamma=self.gamma if self.pref_discounted else 1.0, hidden=tuple(h),
                learning_rate=self.reward_lr, epochs=self.reward_epochs,
                batch_size=self.reward_batch_size, warm_start=True,
                random_state=stream(seed, "reward_init"),
            )
            self.reward_model_._initialize()
        self.oracle_mode_ = "welfare" if self.variant == "fpbrl" else "scalar_sum"
        self.return_estimate_ = ReturnEstimate(self.reward_dim_, self.j_decay)
        self.preferences_ = []
        self.history_ = []
        self.env_steps_ = 0

    # -- acting ----------------------------------------------------------
    def _sample(self, obs):
        logits = nn.forward(self.policy_, obs)
        logp = log_softmax(logits)
        cdf = np.cumsum(np.exp(logp))
        a = int(np.searchsorted(cdf, self._action_rng.random() * cdf[-1], side="right"))
        a = min(a, len(cdf) - 1)
        return a, float(logp[a])

    def predict_proba(self, X):
        check_is_fitted(self, "policy_")
        X = check_array(X, dtype=np.float64)
        return np.exp(log_softmax(nn.forward(self.policy_, X)))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    # -- training --------------------------------------------------------
    def _step_rewards(self, buffer):
        n = buffer.size
        gt = buffer.ground_truth[:n]
        if self.reward_model_ is None:
            buffer.rewards[:n] = (gt @ self._gt_weights)[:, None]
            return None
        X = self.reward_model_.features(buffer.observations[:n], buffer.actions[:n])
        raw = self.reward_model_.predict_raw(X)
        buffer.rewards[:n] = (raw - self.reward_model_.norm_mean_) / self.reward_model_.norm_std_
        return raw

    def _preference_session(self, buffer):
        remaining = self.budget - len(self.preferences_)
        if remaining <= 0:
            return float("nan")
        n_pairs = min(self.session_size, remaining)
        segments = segments_from_trajectories(buffer.pieces(), 2 * n_pairs, self.segment_length,
                                              self.env_spec_.n_actions, self._oracle_rng)
        gamma = self.gamma if self.pref_discounted else 1.0
        self.preferences_.extend(label_pairs(segments, self.oracle_mode_, self.weights_, gamma,
                                             self._oracle_rng, noisy=self.noisy_labels))
        model = self.reward_model_
        model.fit(self.preferences_)
        n = buffer.size
        model.refresh_normalization(buffer.observations[:n], buffer.actions[:n])
        if self.reward_normalization == "shared":
            model.norm_std_ = np.full_like(model.norm_std_, np.sqrt(np.mean(model.norm_std_ ** 2)))
        return model.loss_curve_[-1]

    def _iteration_metrics(self, gt_returns):
        K = self.env_spec_.n_objectives
        if not gt_returns:
            return {"welfare_score": float("nan"), "objectives": [float("nan")] * K,
                    "cv": float("nan"), "min_util": float("nan"), "max_util": float("nan")}
        mean = np.mean(gt_returns, axis=0)
        try:
            cv = coefficient_of_variation(mean)
        except ZeroDivisionError:
            cv = float("nan")
        return {"welfare_score": ggf(mean, self.weights_), "objectives": list(mean), "cv": cv,
                "min_util": float(mean.min()), "max_util": float(mean.max())}

    def fit(self, env, trace_path=None):
        """Train on ``env`` for ``total_steps`` environment steps.

        With ``trace_path`` set, one CSV row per iteration is appended and
        flushed as training proceeds, so a crash leaves a partial trace.
        """
        self._setup(env)
        spec = self.env_spec_
        buffer = RolloutBuffer(self.buffer_size, spec.obs_dim, self.reward_dim_)
        obs = env.reset(self._env_rng)
        ep_gt = np.zeros(spec.n_objectives)
        ep_learned = np.zeros(self.reward_dim_)
        ep_start = 0
        writer = fh = None
        if trace_path is not None:
            fh = open(trace_path, "w", newline="")
            writer = csv.writer(fh)
            writer.writerow(trace_columns(spec.n_objectives))
            fh.flush()
        try:
            iteration = 0
            while self.env_steps_ < self.total_steps:
                buffer.clear()
                steps = min(self.buffer_size, self.total_steps - self.env_steps_)
                gt_returns, ends = [], []
                for _ in range(steps):
                    a, logp = self._sample(obs)
                    tr = env.step(a)
                    buffer.add(obs, a, logp, tr.reward, tr.next_observation, tr.terminal)
                    ep_gt += tr.reward
                    if tr.terminal:
                        gt_returns.append(ep_gt.copy())
                        ends.append(buffer.size)
                        ep_gt[:] = 0.0
                        obs = env.reset(self._env_rng)
                    else:
                        obs = tr.next_observation
                self.env_steps_ += steps

                raw = self._step_rewards(buffer)
                learned_returns = []
                if raw is not None:
                    for end in ends:
                        ep_learned += raw[ep_start:end].sum(axis=0)
                        learned_returns.append(ep_learned.copy())
                        ep_learned[:] = 0.0
                        ep_start = end
                    ep_learned += raw[ep_start:].sum(axis=0)
                    ep_start = 0

                reward_loss = float("nan")
                if self.reward_model_ is not None:
                    reward_loss = self._preference_session(buffer)

                if self.variant == "fpbrl":
                    source = gt_returns if self.j_source == "ground_truth" else learned_returns
                    if source:
                        self.return_estimate_.update(source)

                buffer.compute_advantages(self.critic_, self.gamma, self.gae_lambda)
                scalar_adv = ggf_scalarize_advantages(buffer.advantages, self.return_estimate_.mean,
                                                      self.adv_weights_)
                diag = ppo_update(self.policy_, self.critic_, buffer, scalar_adv, self._policy_opt,
                                  self._critic_opt, self._ppo_rng, self.clip_eps, self.ppo_epochs,
                                  self.minibatch_size, self.entropy_coef, self.max_grad_norm)
                m = self._iteration_metrics(gt_returns)
                row = {
                    "iteration": iteration, "env_steps": self.env_steps_, **m,
                    "pref_count": len(self.preferences_), "reward_loss": reward_loss,
                    "policy_loss": diag["policy_loss"], "clip_frac": diag["clip_frac"],
                    "ratio_mean": diag["ratio_mean"], "value_loss": diag["value_loss"],
                    "entropy": diag["entropy"],
                }
                self.history_.append(row)
                if writer is not None:
                    writer.writerow([_fmt(v) for v in self._trace_row(row)])
                    fh.flush()
                iteration += 1
        finally:
            if fh is not None:
                fh.close()
        return self

    def _trace_row(self, row):
        return ([row["iteration"], row["env_steps"], row["welfare_score"], *row["objectives"]]
                + [row[k] for k in ("cv", "min_util", "max_util", "pref_count", "reward_loss",
                                    "policy_loss", "clip_frac")])

    # -- persistence -----------------------------------------------------
    def save(self, path):
        """Write policy, critic and (if any) reward network to one checkpoint file."""
        check_is_fitted(self, "policy_")
        blocks = {"policy": self.policy_, "critic": self.critic_}
        if self.reward_model_ is not None:
            blocks["reward"] = self.reward_model_.params_
        nn.save_checkpoint(path, blocks)
        return Path(path)


def train(variant, env, config=None, seed=0, trace_path=None):
    """Fit a :class:`FairPPO` of the given variant; ``config`` holds estimator params."""
    agent = FairPPO(variant=variant, random_state=seed, **(config or {}))
    return agent.fit(env, trace_path=trace_path)
