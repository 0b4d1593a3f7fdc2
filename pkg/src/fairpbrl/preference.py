"""Pairwise segment preferences and the reward model learned from them.

Two labelling rules are supported. ``welfare`` compares the Gini welfare of
the segments' vector returns and trains a K-output reward model through that
same welfare; ``scalar`` compares plain reward sums and trains a 1-output
model, which is the classic preference-learning baseline.
"""

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import approximator as nn
from ._validation import ContractError, DivergenceError, as_rng
from .welfare import check_gini_weights, default_gini_weights

MODES = ("welfare", "scalar")


@dataclass(frozen=True, eq=False)
class Segment:
    """A contiguous slice of one trajectory.

    ``observations`` is ``(k, obs_dim)``, ``actions`` ``(k,)`` and
    ``rewards`` the hidden ground-truth ``(k, K)`` reward vectors.
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    n_actions: int

    def __post_init__(self):
        k = len(self.actions)
        if k < 1:
            raise ContractError("a segment needs at least one step")
        if len(self.observations) != k or len(self.rewards) != k:
            raise ContractError("observations, actions and rewards must have equal length")

    @property
    def k(self):
        return len(self.actions)

    def features(self):
        """Reward-model inputs: observation concatenated with the one-hot action."""
        onehot = np.zeros((self.k, self.n_actions))
        onehot[np.arange(self.k), self.actions] = 1.0
        return np.hstack([self.observations, onehot])

    def __eq__(self, other):
        return (
            isinstance(other, Segment)
            and self.n_actions == other.n_actions
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )


@dataclass(frozen=True, eq=False)
class PreferenceRecord:
    a: Segment
    b: Segment
    mu: tuple

    def __post_init__(self):
        if self.a.k != self.b.k:
            raise ContractError("segments in a preference pair must have equal length")
        if len(self.mu) != 2 or abs(self.mu[0] + self.mu[1] - 1.0) > 1e-12:
            raise ContractError(f"label must be two reals summing to 1, got {self.mu}")

    def __eq__(self, other):
        return isinstance(other, PreferenceRecord) and (self.a, self.b, tuple(self.mu)) == (
            other.a, other.b, tuple(other.mu))


def discount_vector(k, gamma):
    if not 0 < gamma <= 1:
        raise ContractError(f"gamma must be in (0, 1], got {gamma}")
    return gamma ** np.arange(k, dtype=np.float64)


def segment_return(segment, gamma=1.0, model=None):
    """Discounted per-objective return of a segment.

    Uses the stored ground-truth rewards unless a fitted ``model`` is given,
    in which case the model's raw (unnormalized) predictions are summed.
    """
    if segment.k < 1:
        raise ContractError("empty segment")
    d = discount_vector(segment.k, gamma)
    rewards = segment.rewards if model is None else model.predict_raw(segment.features())
    return d @ np.asarray(rewards, dtype=np.float64)


def _row_welfare(R, w):
    return np.sort(R, axis=1, kind="stable") @ w


def _row_sorted_weights(R, w):
    order = np.argsort(R, axis=1, kind="stable")
    W = np.empty_like(R)
    np.put_along_axis(W, order, np.broadcast_to(w, R.shape), axis=1)
    return W


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def welfare_preference_probability(return_a, return_b, weights):
    """Bradley-Terry probability that A is preferred, scoring each by its welfare."""
    w = check_gini_weights(weights)
    ra = np.asarray(return_a, dtype=np.float64)
    rb = np.asarray(return_b, dtype=np.float64)
    if ra.shape != w.shape or rb.shape != w.shape:
        raise ContractError("return vectors and weights must have the same length")
    sa = float(np.sort(ra, kind="stable") @ w)
    sb = float(np.sort(rb, kind="stable") @ w)
    if not (np.isfinite(sa) and np.isfinite(sb)):
        raise ContractError("non-finite welfare score")
    m = max(sa, sb)
    ea, eb = np.exp(sa - m), np.exp(sb - m)
    return float(ea / (ea + eb))


def _oracle_score(segment, mode, weights, gamma):
    R = segment_return(segment, gamma)
    if mode == "welfare":
        return float(np.sort(R, kind="stable") @ weights)
    if mode in ("scalar", "scalar_sum"):
        return float(R.sum())
    raise ContractError(f"unknown oracle mode {mode!r}")


def synthetic_oracle(seg_a, seg_b, mode="welfare", weights=None, gamma=1.0, noisy=False, rng=None):
    """Label a segment pair from ground-truth rewards.

    Deterministic by default: the better-scoring segment gets label 1 and an
    exact tie gets ``(0.5, 0.5)``. With ``noisy=True`` the winner is drawn
    from the Bradley-Terry probability of the two scores instead.
    """
    if seg_a.k != seg_b.k:
        raise ContractError("segments must have equal length")
    K = seg_a.rewards.shape[1]
    w = default_gini_weights(K) if weights is None else check_gini_weights(weights)
    sa = _oracle_score(seg_a, mode, w, gamma)
    sb = _oracle_score(seg_b, mode, w, gamma)
    if noisy:
        p = _sigmoid(np.float64(sa - sb))
        mu = (1.0, 0.0) if as_rng(rng).random() < p else (0.0, 1.0)
    elif sa > sb:
        mu = (1.0, 0.0)
    elif sb > sa:
        mu = (0.0, 1.0)
    else:
        mu = (0.5, 0.5)
    return PreferenceRecord(seg_a, seg_b, mu)


def _stack_batch(batch):
    if not batch:
        raise ContractError("empty preference batch")
    k = batch[0].a.k
    if any(r.a.k != k for r in batch):
        raise ContractError("all records in a batch must share one segment length")
    feats = [r.a.features() for r in batch] + [r.b.features() for r in batch]
    mu1 = np.array([r.mu[0] for r in batch])
    return np.vstack(feats), mu1, k


def preference_loss(params, batch, weights=None, gamma=1.0, mode="welfare"):
    """Mean Bradley-Terry cross-entropy over ``batch`` and its parameter gradient.

    ``params`` is the reward network. In ``welfare`` mode each segment is
    scored by the welfare of its predicted discounted vector return, and the
    gradient flows through the welfare via the sorted weight vector. In
    ``scalar`` mode the network must have one output and the score is its
    discounted sum.
    """
    X, mu1, k = _stack_batch(batch)
    B = len(mu1)
    K = params.n_outputs
    if mode == "scalar":
        if K != 1:
            raise ContractError("scalar mode needs a single-output reward model")
    elif mode == "welfare":
        w = default_gini_weights(K) if weights is None else check_gini_weights(weights)
        if w.size != K:
            raise ContractError(f"{w.size} weights for a {K}-output reward model")
    else:
        raise ContractError(f"unknown mode {mode!r}")

    out, cache = nn.forward_cache(params, X)
    d = discount_vector(k, gamma)
    R = np.einsum("t,btk->bk", d, out.reshape(2 * B, k, K))
    if mode == "welfare":
        scores = _row_welfare(R, w)
        dscore = _row_sorted_weights(R, w)
    else:
        scores = R[:, 0]
        dscore = np.ones_like(R)
    z = scores[:B] - scores[B:]
    mu2 = 1.0 - mu1
    loss = float(np.mean(mu1 * np.logaddexp(0.0, -z) + mu2 * np.logaddexp(0.0, z)))
    dz = (_sigmoid(z) - mu1) / B
    dR = np.concatenate([dz[:, None] * dscore[:B], -dz[:, None] * dscore[B:]])
    dout = (dR[:, None, :] * d[None, :, None]).reshape(2 * B * k, K)
    return loss, nn.backward_from_cache(params, cache, dout)


class RewardModel(BaseEstimator):
    """Reward network fitted to pairwise preferences.

    ``fit`` runs ``epochs`` passes of mini-batch Adam over the preference
    records. With ``warm_start=True`` repeated calls continue from the current
    weights and optimizer state, which is how the interleaved training loop
    uses it. Predictions come from a tanh-bounded head and are standardized
    per objective by statistics refreshed with :meth:`refresh_normalization`.

    Parameters
    ----------
    obs_dim, n_actions : int
        Input width is ``obs_dim + n_actions`` (one-hot action).
    n_objectives : int
        Output width; must be 1 in ``scalar`` mode.
    mode : {"welfare", "scalar"}
    weights : array-like or None
        Gini weights for ``welfare`` mode; ``None`` means halving weights.
    gamma : float
        Discount used inside segment returns.
    hidden : tuple of int
    learning_rate, epochs, batch_size : training schedule.
    l2 : float
        Weight-decay coefficient on the weight matrices (not the biases).
    output_scale : float
        Shrink factor for the initial output layer; small values start the
        model near a constant reward.
    warm_start : bool
    random_state : int, Generator or None
    """

    def __init__(self, obs_dim=1, n_actions=1, n_objectives=1, mode="welfare", weights=None,
                 gamma=1.0, hidden=(64, 64), learning_rate=1e-3, epochs=50, batch_size=32,
                 l2=0.0, output_scale=1.0, warm_start=False, random_state=None):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.n_objectives = n_objectives
        self.mode = mode
        self.weights = weights
        self.gamma = gamma
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.output_scale = output_scale
        self.warm_start = warm_start
        self.random_state = random_state

    def _initialize(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown mode {self.mode!r}")
        if self.mode == "scalar" and self.n_objectives != 1:
            raise ContractError("scalar mode needs n_objectives == 1")
        self._rng = as_rng(self.random_state)
        dims = [self.obs_dim + self.n_actions, *self.hidden, self.n_objectives]
        self.params_ = nn.init_mlp(dims, self._rng, output_activation="tanh",
                                   output_scale=self.output_scale)
        self.optimizer_ = nn.Adam(self.params_, lr=self.learning_rate)
        self.weights_ = (default_gini_weights(self.n_objectives) if self.weights is None
                         else check_gini_weights(self.weights))
        self.norm_mean_ = np.zeros(self.n_objectives)
        self.norm_std_ = np.ones(self.n_objectives)
        self.loss_curve_ = []
        self.n_iter_ = 0

    def fit(self, records, y=None):
        if not records:
            raise ContractError("cannot fit a reward model on an empty dataset")
        if not (self.warm_start and hasattr(self, "params_")):
            self._initialize()
        records = list(records)
        n = len(records)
        for _ in range(self.epochs):
            order = self._rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                batch = [records[i] for i in order[start:start + self.batch_size]]
                loss, grad = preference_loss(self.params_, batch, self.weights_, self.gamma, self.mode)
                if not np.isfinite(loss):
                    raise DivergenceError("reward-model loss is not finite",
                                          {"loss_curve": list(self.loss_curve_)})
                if self.l2:
                    for g, W in zip(grad.weights, self.params_.weights):
                        g += self.l2 * W
                self.optimizer_.step(self.params_, grad)
                total += loss * len(batch)
            self.loss_curve_.append(total / n)
            self.n_iter_ += 1
        return self

    def predict_raw(self, X):
        """Bounded network outputs for ``(obs ++ one-hot action)`` rows."""
        return nn.forward(self.params_, X)

    def features(self, observations, actions):
        observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        onehot = np.zeros((len(actions), self.n_actions))
        onehot[np.arange(len(actions)), actions] = 1.0
        return np.hstack([observations, onehot])

    def predict(self, observations, actions):
        """Standardized reward vectors, shape ``(n, n_objectives)``."""
        raw = self.predict_raw(self.features(observations, actions))
        return (raw - self.norm_mean_) / self.norm_std_

    def refresh_normalization(self, observations, actions):
        """Re-estimate per-objective mean/std of raw outputs on recent inputs."""
        raw = self.predict_raw(self.features(observations, actions))
        self.norm_mean_ = raw.mean(axis=0)
        std = raw.std(axis=0)
        self.norm_std_ = np.where(std > 1e-8, std, 1.0)
        return self

    def segment_score(self, segment):
        R = segment_return(segment, self.gamma, self)
        if self.mode == "welfare":
            return float(np.sort(R, kind="stable") @ self.weights_)
        return float(R[0])

    def predict_proba(self, records):
        """Model probability that segment A is preferred, one per record."""
        records = list(records)
        X, _, _ = _stack_batch(records)
        k = records[0].a.k
        out = self.predict_raw(X)
        R = np.einsum("t,btk->bk", discount_vector(k, self.gamma),
                      out.reshape(-1, k, self.n_objectives))
        s = _row_welfare(R, self.weights_) if self.mode == "welfare" else R[:, 0]
        B = len(records)
        return _sigmoid(s[:B] - s[B:])

    def score(self, records, y=None):
        """Fraction of non-tied records whose preferred segment the model ranks higher."""
        records = [r for r in records if r.mu[0] != r.mu[1]]
        if not records:
            raise ContractError("no strict preferences to score against")
        p = self.predict_proba(records)
        truth = np.array([r.mu[0] > r.mu[1] for r in records])
        return float(np.mean((p > 0.5) == truth))


def segments_from_trajectories(trajectories, n_segments, k, n_actions, rng):
    """Cut ``n_segments`` length-``k`` slices at uniform random positions.

    ``trajectories`` is a list of ``(observations, actions, rewards)`` arrays.
    A trajectory is picked uniformly among those at least ``k`` long, then an
    offset uniformly within it.
    """
    eligible = [t for t in trajectories if len(t[1]) >= k]
    if not eligible:
        raise ContractError(f"no trajectory is long enough for segments of length {k}")
    segments = []
    for _ in range(n_segments):
        obs, acts, rews = eligible[int(rng.integers(len(eligible)))]
        start = int(rng.integers(len(acts) - k + 1))
        sl = slice(start, start + k)
        segments.append(Segment(np.array(obs[sl]), np.array(acts[sl]), np.array(rews[sl]), n_actions))
    return segments


def label_pairs(segments, mode, weights, gamma, rng, noisy=False):
    """Pair segments uniformly at random without replacement and label each pair."""
    order = rng.permutation(len(segments))
    records = []
    for i in range(0, len(order) - 1, 2):
        a, b = segments[order[i]], segments[order[i + 1]]
        records.append(synthetic_oracle(a, b, mode, weights, gamma, noisy=noisy, rng=rng))
    return records


def rollout(policy, env, n_steps, rng):
    """Run ``policy(obs, rng) -> action`` for at least ``n_steps`` steps.

    Returns complete episodes as ``(observations, actions, rewards)``.
    """
    trajectories = []
    steps = 0
    while steps < n_steps:
        obs = env.reset(rng)
        O, A, R = [], [], []
        done = False
        while not done:
            a = policy(obs, rng)
            tr = env.step(a)
            O.append(tr.observation)
            A.append(tr.action)
            R.append(tr.reward)
            obs, done = tr.next_observation, tr.terminal
        trajectories.append((np.array(O), np.array(A), np.array(R)))
        steps += len(A)
    return trajectories


def collect_and_label(policy, env, count, k, mode="welfare", weights=None, gamma=1.0,
                      rng=None, noisy=False):
    """Roll out ``policy`` and return ``count`` freshly labelled preference records."""
    if count < 1:
        raise ContractError("count must be at least 1")
    spec = env.spec()
    if k > spec.max_steps or k < 1:
        raise ContractError(f"segment length {k} outside [1, {spec.max_steps}]")
    rng = as_rng(rng)
    trajectories = rollout(policy, env, 2 * count * k, rng)
    segments = segments_from_trajectories(trajectories, 2 * count, k, spec.n_actions, rng)
    return label_pairs(segments, mode, weights, gamma, rng, noisy=noisy)


CSV_COLUMNS = ("n_actions", "segment_a", "segment_b", "mu1", "mu2")


def _encode_segment(seg):
    nums = lambda a: " ".join(repr(float(v)) for v in np.ravel(a))  # noqa: E731
    return ";".join([str(seg.k), nums(seg.observations), " ".join(map(str, seg.actions)),
                     nums(seg.rewards)])


def _decode_segment(text, n_actions):
    k, obs, acts, rews = text.split(";")
    k = int(k)
    obs = np.array(obs.split(), dtype=np.float64).reshape(k, -1)
    acts = np.array(acts.split(), dtype=np.int64)
    rews = np.array(rews.split(), dtype=np.float64).reshape(k, -1)
    return Segment(obs, acts, rews, n_actions)


def save_preferences(path, records):
    """Write records as CSV; see the README for the column schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.a.n_actions, _encode_segment(r.a), _encode_segment(r.b),
                             repr(float(r.mu[0])), repr(float(r.mu[1]))])


def load_preferences(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ContractError(f"unexpected preference CSV header {reader.fieldnames}")
        for row in reader:
            n_actions = int(row["n_actions"])
            records.append(PreferenceRecord(
                _decode_segment(row["segment_a"], n_actions),
                _decode_segment(row["segment_b"], n_actions),
                (float(row["mu1"]), float(row["mu2"])),
            ))
    return records
