import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairpbrl import approximator as nn
from fairpbrl._validation import ContractError
from fairpbrl.envs import make_env
from fairpbrl.preference import (
    PreferenceRecord,
    RewardModel,
    Segment,
    collect_and_label,
    load_preferences,
    preference_loss,
    save_preferences,
    segment_return,
    synthetic_oracle,
    welfare_preference_probability,
)
from fairpbrl.welfare import default_gini_weights

W2 = np.array([1.0, 0.5])


def seg(rewards, obs_dim=2, n_actions=3, rng=None):
    rewards = np.atleast_2d(np.asarray(rewards, dtype=float))
    k = len(rewards)
    rng = np.random.default_rng(0) if rng is None else rng
    return Segment(rng.normal(size=(k, obs_dim)), rng.integers(n_actions, size=k), rewards, n_actions)


def random_batch(rng, n, k, obs_dim, n_actions, K):
    out = []
    for _ in range(n):
        a = Segment(rng.normal(size=(k, obs_dim)), rng.integers(n_actions, size=k),
                    rng.normal(size=(k, K)), n_actions)
        b = Segment(rng.normal(size=(k, obs_dim)), rng.integers(n_actions, size=k),
                    rng.normal(size=(k, K)), n_actions)
        mu = [(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)][int(rng.integers(3))]
        out.append(PreferenceRecord(a, b, mu))
    return out


# -- segment returns ----------------------------------------------------------

def test_segment_return_single_step():
    np.testing.assert_array_equal(segment_return(seg([[1, 0, 0.4]]), gamma=0.3), [1, 0, 0.4])


def test_segment_return_discounted():
    np.testing.assert_array_equal(segment_return(seg([[1, 0], [0, 1]]), gamma=0.5), [1, 0.5])


def test_segment_return_zero():
    np.testing.assert_array_equal(segment_return(seg(np.zeros((4, 3))), gamma=0.9), np.zeros(3))


def test_empty_segment_rejected():
    with pytest.raises(ContractError):
        Segment(np.zeros((0, 2)), np.zeros(0, int), np.zeros((0, 2)), 2)


# -- Bradley-Terry -----------------------------------------------------------

def test_bt_equal():
    assert welfare_preference_probability([1, 2], [2, 1], W2) == 0.5


def test_bt_ln3():
    # welfare of [x, x] is 1.5 x, so a gap of ln 3 needs x = ln 3 / 1.5
    x = math.log(3) / 1.5
    assert abs(welfare_preference_probability([x, x], [0, 0], W2) - 0.75) < 1e-9


def test_bt_saturation_no_overflow():
    with np.errstate(over="raise", invalid="raise"):
        p = welfare_preference_probability([1000 / 1.5] * 2, [0, 0], W2)
        q = welfare_preference_probability([0, 0], [1000 / 1.5] * 2, W2)
    assert abs(p - 1.0) < 1e-12 and q >= 0.0 and q < 1e-12


def test_bt_rejects_nonfinite():
    with pytest.raises(ContractError):
        welfare_preference_probability([np.nan, 1], [0, 0], W2)


@settings(max_examples=300)
@given(arrays(np.float64, 3, elements=st.floats(-50, 50)), arrays(np.float64, 3, elements=st.floats(-50, 50)),
       st.floats(-100, 100))
def test_bt_complement_and_shift(ra, rb, c):
    w = default_gini_weights(3)
    p = welfare_preference_probability(ra, rb, w)
    q = welfare_preference_probability(rb, ra, w)
    assert abs(p + q - 1.0) < 1e-12
    # adding c to every component shifts both welfares by c * sum(w)
    shifted = welfare_preference_probability(ra + c, rb + c, w)
    assert abs(shifted - p) < 1e-12


# -- oracle ------------------------------------------------------------------

def test_oracle_welfare_vs_sum():
    a, b = seg([[2, 2]]), seg([[1, 3]])
    assert synthetic_oracle(a, b, "welfare", W2).mu == (1.0, 0.0)
    assert synthetic_oracle(a, b, "scalar_sum", W2).mu == (0.5, 0.5)


@pytest.mark.parametrize("mode", ["welfare", "scalar_sum"])
def test_oracle_identical_segments_tie(mode):
    a = seg([[1, 3], [0.5, 0.2]])
    assert synthetic_oracle(a, a, mode, W2, gamma=0.9).mu == (0.5, 0.5)


def test_oracle_rejects_unequal_lengths():
    with pytest.raises(ContractError):
        synthetic_oracle(seg([[1, 1]]), seg([[1, 1], [1, 1]]), "welfare", W2)


@settings(max_examples=200)
@given(arrays(np.float64, (4, 3), elements=st.floats(-10, 10)), arrays(np.float64, (4, 3), elements=st.floats(-10, 10)),
       st.sampled_from([0.5, 2.0, 4.0, 0.25]), st.sampled_from(["welfare", "scalar_sum"]))
def test_oracle_scale_invariance(ra, rb, lam, mode):
    # power-of-two scales keep every sum exact, so labels must be identical
    w = default_gini_weights(3)
    base = synthetic_oracle(seg(ra), seg(rb), mode, w, gamma=1.0).mu
    scaled = synthetic_oracle(seg(ra * lam), seg(rb * lam), mode, w, gamma=1.0).mu
    assert base == scaled


def test_noisy_oracle_follows_bt():
    rng = np.random.default_rng(0)
    x = math.log(3) / 1.5
    a, b = seg([[x, x]]), seg([[0.0, 0.0]])
    wins = sum(synthetic_oracle(a, b, "welfare", W2, noisy=True, rng=rng).mu[0] for _ in range(4000))
    assert abs(wins / 4000 - 0.75) < 0.03


def test_record_validation():
    with pytest.raises(ContractError):
        PreferenceRecord(seg([[1, 1]]), seg([[1, 1]]), (0.7, 0.7))


# -- loss --------------------------------------------------------------------

def test_loss_zero_model_is_ln2():
    rng = np.random.default_rng(0)
    p = nn.init_mlp([5, 8, 2], rng, output_activation="tanh").zeros_like()
    batch = random_batch(rng, 6, 3, 2, 3, 2)
    loss, _ = preference_loss(p, batch, W2, 0.9)
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_loss_vanishes_on_confident_correct_prediction():
    # a single affine unit reading the first observation feature
    p = nn.ParamSet([np.array([[1.0], [0.0], [0.0], [0.0]])], [np.array([0.0])])
    a = Segment(np.array([[50.0, 0.0]]), np.array([0]), np.zeros((1, 1)), 2)
    b = Segment(np.array([[-50.0, 0.0]]), np.array([0]), np.zeros((1, 1)), 2)
    loss, _ = preference_loss(p, [PreferenceRecord(a, b, (1.0, 0.0))], mode="scalar")
    assert loss < 1e-40


def test_loss_empty_batch():
    p = nn.init_mlp([5, 2], 0)
    with pytest.raises(ContractError):
        preference_loss(p, [], W2)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("mode, K", [("welfare", 3), ("welfare", 2), ("scalar", 1)])
def test_loss_gradient_matches_finite_differences(seed, mode, K):
    rng = np.random.default_rng(seed)
    p = nn.init_mlp([4 + 3, 6, 5, K], rng, output_activation="tanh")
    batch = random_batch(rng, 5, 4, 4, 3, K)
    w = default_gini_weights(K) if mode == "welfare" else None
    err = nn.finite_difference_check(p, lambda q: preference_loss(q, batch, w, 0.95, mode))
    assert err < 1e-4


def test_welfare_k1_equals_scalar():
    rng = np.random.default_rng(3)
    p = nn.init_mlp([5, 6, 1], rng, output_activation="tanh")
    batch = random_batch(rng, 8, 3, 2, 3, 1)
    lw, gw = preference_loss(p, batch, [1.0], 0.9, "welfare")
    ls, gs = preference_loss(p, batch, None, 0.9, "scalar")
    assert lw == ls
    assert gw.flat().tobytes() == gs.flat().tobytes()


def test_scalar_mode_needs_one_output():
    p = nn.init_mlp([5, 2], 0)
    with pytest.raises(ContractError):
        preference_loss(p, random_batch(np.random.default_rng(0), 2, 2, 2, 3, 2), mode="scalar")


# -- reward model ------------------------------------------------------------

def make_model(**kw):
    base = dict(obs_dim=2, n_actions=3, n_objectives=2, mode="welfare", gamma=1.0, hidden=(16,),
                epochs=5, random_state=0)
    base.update(kw)
    return RewardModel(**base)


def test_reward_model_sklearn_params():
    m = make_model()
    assert m.get_params()["n_objectives"] == 2
    assert m.set_params(epochs=3).epochs == 3


def test_reward_model_bounded_output():
    rng = np.random.default_rng(0)
    m = make_model().fit(random_batch(rng, 10, 3, 2, 3, 2))
    out = m.predict_raw(m.features(rng.normal(size=(50, 2)) * 100, rng.integers(3, size=50)))
    assert out.shape == (50, 2) and np.all(np.abs(out) <= 1)


def test_reward_model_zero_epochs_keeps_params():
    rng = np.random.default_rng(0)
    data = random_batch(rng, 10, 3, 2, 3, 2)
    m = make_model(warm_start=True).fit(data)
    before = m.params_.copy()
    m.set_params(epochs=0).fit(data)
    assert m.params_ == before


def test_reward_model_all_ties_loss_floor():
    rng = np.random.default_rng(1)
    data = [PreferenceRecord(r.a, r.b, (0.5, 0.5)) for r in random_batch(rng, 40, 3, 2, 3, 2)]
    m = make_model(epochs=30).fit(data)
    assert min(m.loss_curve_) >= math.log(2) - 1e-12


def test_reward_model_normalization():
    rng = np.random.default_rng(0)
    m = make_model().fit(random_batch(rng, 20, 3, 2, 3, 2))
    obs, acts = rng.normal(size=(500, 2)), rng.integers(3, size=500)
    m.refresh_normalization(obs, acts)
    out = m.predict(obs, acts)
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1, atol=1e-9)


def test_reward_model_learns_separable_preferences():
    # objective 0 pays for action 0, objective 1 for action 1
    rng = np.random.default_rng(0)

    def random_seg():
        acts = rng.integers(3, size=4)
        rewards = np.stack([(acts == 0) * 1.0, (acts == 1) * 1.0], axis=1)
        return Segment(np.zeros((4, 2)), acts, rewards, 3)

    data = [synthetic_oracle(random_seg(), random_seg(), "welfare", W2) for _ in range(300)]
    m = make_model(epochs=60, learning_rate=3e-3).fit(data[:240])
    assert m.score(data[240:]) > 0.9


def test_predict_proba_matches_loss():
    rng = np.random.default_rng(2)
    data = random_batch(rng, 6, 3, 2, 3, 2)
    m = make_model().fit(data)
    p = m.predict_proba(data)
    mu1 = np.array([r.mu[0] for r in data])
    ce = -np.mean(mu1 * np.log(p) + (1 - mu1) * np.log1p(-p))
    loss, _ = preference_loss(m.params_, data, m.weights_, m.gamma)
    assert ce == pytest.approx(loss, rel=1e-12)


# -- collection and persistence ------------------------------------------------

def uniform_policy(obs, rng):
    return int(rng.integers(4))


def test_collect_and_label_cardinality():
    env = make_env("resources")
    recs = collect_and_label(uniform_policy, env, 30, 25, rng=0)
    assert len(recs) == 30
    assert all(r.a.k == 25 and r.b.k == 25 for r in recs)


def test_collect_and_label_deterministic():
    a = collect_and_label(uniform_policy, make_env("species"), 10, 25, rng=5)
    b = collect_and_label(uniform_policy, make_env("species"), 10, 25, rng=5)
    assert a == b


def test_collect_and_label_segment_too_long():
    with pytest.raises(ContractError):
        collect_and_label(uniform_policy, make_env("species"), 5, 101, rng=0)


def test_preferences_csv_round_trip(tmp_path):
    recs = collect_and_label(uniform_policy, make_env("traffic"), 7, 5, rng=1)
    path = tmp_path / "prefs.csv"
    save_preferences(path, recs)
    assert load_preferences(path) == recs
    header = path.read_text().splitlines()[0]
    assert header == "n_actions,segment_a,segment_b,mu1,mu2"
