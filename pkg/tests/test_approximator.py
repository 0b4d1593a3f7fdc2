import io

import numpy as np
import pytest

from fairpbrl import approximator as nn
from fairpbrl._validation import ContractError, DivergenceError


def linear(W, b):
    return nn.ParamSet([np.array(W, float)], [np.array(b, float)])


def numeric_grad(p, loss, step=1e-6):
    theta = p.flat()
    out = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        out[i] = (loss(p.with_flat(up)) - loss(p.with_flat(down))) / (2 * step)
    return out


def test_zero_net_outputs_zero():
    p = nn.init_mlp([3, 4, 2], np.random.default_rng(0)).zeros_like()
    np.testing.assert_array_equal(nn.forward(p, [1.0, -2.0, 3.0]), [0.0, 0.0])


def test_affine_forward():
    np.testing.assert_array_equal(nn.forward(linear([[2.0]], [1.0]), [3.0]), [7.0])


def test_tanh_hidden_zero_weights():
    p = nn.init_mlp([5, 8, 1], 0).zeros_like()
    x = np.random.default_rng(1).normal(size=(10, 5))
    np.testing.assert_array_equal(nn.forward(p, x), np.zeros((10, 1)))


def test_forward_dimension_mismatch():
    with pytest.raises(ContractError):
        nn.forward(linear([[2.0]], [1.0]), [1.0, 2.0])


def test_backward_affine():
    g = nn.backward(linear([[2.0]], [1.0]), [3.0], [1.0])
    np.testing.assert_array_equal(g.weights[0], [[3.0]])
    np.testing.assert_array_equal(g.biases[0], [1.0])


def test_backward_zero_output_grad():
    p = nn.init_mlp([3, 6, 2], 0)
    g = nn.backward(p, np.ones(3), np.zeros(2))
    assert np.all(g.flat() == 0)


def test_backward_shape_mismatch():
    p = nn.init_mlp([3, 6, 2], 0)
    with pytest.raises(ContractError):
        nn.backward(p, np.ones(3), np.zeros(3))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("activation, out", [("tanh", "linear"), ("tanh", "tanh"), ("relu", "linear")])
def test_backward_matches_finite_differences(seed, activation, out):
    rng = np.random.default_rng(seed)
    p = nn.init_mlp([4, 7, 5, 3], rng, activation=activation, output_activation=out)
    x = rng.normal(size=(6, 4))
    v = rng.normal(size=(6, 3))
    analytic = nn.backward(p, x, v).flat()
    numeric = numeric_grad(p, lambda q: float(np.sum(v * nn.forward(q, x))))
    rel = np.max(np.abs(analytic - numeric)) / np.max(np.abs(numeric))
    assert rel < 1e-5


def test_forward_is_deterministic():
    p = nn.init_mlp([4, 16, 16, 2], 3)
    x = np.random.default_rng(0).normal(size=(32, 4))
    assert nn.forward(p, x).tobytes() == nn.forward(p.copy(), x.copy()).tobytes()


def test_init_is_reproducible_and_glorot_bounded():
    a = nn.init_mlp([10, 64, 3], 7)
    b = nn.init_mlp([10, 64, 3], 7)
    assert a == b
    assert np.abs(a.weights[0]).max() <= np.sqrt(6 / 74)
    assert np.all(a.biases[0] == 0)


def test_adam_zero_gradient_keeps_params():
    p = nn.init_mlp([2, 3, 1], 0)
    before = p.copy()
    opt = nn.Adam(p, lr=0.1)
    opt.step(p, p.zeros_like())
    assert p == before
    assert opt.t == 1


def test_adam_moves_against_gradient_sign():
    p = linear([[0.0]], [0.0])
    opt = nn.Adam(p, lr=0.01)
    g = linear([[2.0]], [-3.0])
    for _ in range(5):
        w_prev, b_prev = p.weights[0][0, 0], p.biases[0][0]
        opt.step(p, g)
        assert p.weights[0][0, 0] < w_prev
        assert p.biases[0][0] > b_prev


def test_adam_converges_on_quadratic():
    p = linear([[0.0]], [0.0])
    opt = nn.Adam(p, lr=0.1)
    for _ in range(2000):
        theta = p.biases[0][0]
        g = p.zeros_like()
        g.biases[0][0] = 2 * (theta - 5.0)
        opt.step(p, g)
    assert abs(p.biases[0][0] - 5.0) < 1e-3


def test_adam_rejects_nonfinite_gradient():
    p = linear([[0.0]], [0.0])
    with pytest.raises(DivergenceError):
        nn.Adam(p).step(p, linear([[np.nan]], [0.0]))


def test_fd_check_linear_loss():
    rng = np.random.default_rng(0)
    p = nn.init_mlp([3, 4, 2], rng)
    c = rng.normal(size=p.n_params)
    grad = p.with_flat(c)
    # central differences are exact on a linear loss, so a wide step keeps only rounding error
    assert nn.finite_difference_check(p, lambda q: float(c @ q.flat()), grad=grad, step=1e-2) < 1e-10


def test_fd_check_squared_error_mlp():
    rng = np.random.default_rng(1)
    p = nn.init_mlp([3, 8, 8, 2], rng)
    x, y = rng.normal(size=(10, 3)), rng.normal(size=(10, 2))

    def loss(q):
        out, cache = nn.forward_cache(q, x)
        err = out - y
        return 0.5 * float(np.sum(err ** 2)), nn.backward_from_cache(q, cache, err)

    assert nn.finite_difference_check(p, loss) < 1e-5
    assert nn.finite_difference_check(p, loss, max_coords=20, rng=0) < 1e-5


def test_fd_check_constant_loss():
    p = nn.init_mlp([2, 3, 1], 0)
    assert nn.finite_difference_check(p, lambda q: 1.0, grad=p.zeros_like()) == 0.0


def test_clip_by_global_norm():
    g = linear([[3.0]], [4.0])
    assert nn.clip_by_global_norm(g, 1.0) == pytest.approx(5.0)
    assert nn.global_norm(g) == pytest.approx(1.0)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    nets = {
        "policy": nn.init_mlp([5, 64, 64, 4], rng, output_scale=0.01),
        "critic": nn.init_mlp([5, 64, 64, 3], rng),
        "reward": nn.init_mlp([9, 64, 64, 3], rng, output_activation="tanh"),
    }
    path = tmp_path / "model.ckpt"
    nn.save_checkpoint(path, nets)
    loaded = nn.load_checkpoint(path)
    assert list(loaded) == list(nets)
    for role, p in nets.items():
        assert loaded[role] == p
        assert loaded[role].flat().tobytes() == p.flat().tobytes()
    header = path.read_text().splitlines()[0].split()
    assert header[:4] == ["fprl-ckpt", "v1", "policy", "5-64-64-4"]


def test_checkpoint_role_mismatch():
    buf = io.StringIO()
    nn.dump_params(nn.init_mlp([2, 2], 0), "reward", buf)
    buf.seek(0)
    with pytest.raises(ContractError):
        nn.load_params(buf, role="policy")


def test_paramset_rejects_bad_chain():
    with pytest.raises(ContractError):
        nn.ParamSet([np.zeros((2, 3)), np.zeros((4, 1))], [np.zeros(3), np.zeros(1)])
