"""Small float64 multi-layer perceptrons with hand-written backprop and Adam.

Everything the learners need from a function approximator lives here: the
parameter container, batched forward/backward passes, an adaptive-moment
optimizer, a central-difference gradient checker and a plain-text checkpoint
format that round-trips every parameter bit-exactly.
"""

import io
from pathlib import Path

import numpy as np

from ._validation import ContractError, DivergenceError, as_rng

CKPT_MAGIC = "fprl-ckpt"
CKPT_VERSION = "v1"


def _activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(a, z, kind):
    # a is the post-activation value; cheaper than recomputing from z for tanh
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


class ParamSet:
    """Weights and biases of a fully connected network.

    Parameters
    ----------
    weights : list of ndarray
        ``weights[i]`` has shape ``(dims[i], dims[i + 1])``.
    biases : list of ndarray
        ``biases[i]`` has shape ``(dims[i + 1],)``.
    activation : str
        Hidden-layer nonlinearity, ``"tanh"`` or ``"relu"``.
    output_activation : str
        ``"linear"`` or ``"tanh"``.
    """

    def __init__(self, weights, biases, activation="tanh", output_activation="linear"):
        if len(weights) != len(biases) or not weights:
            raise ContractError("need one bias per weight matrix and at least one layer")
        if activation not in ("tanh", "relu"):
            raise ContractError(f"unknown hidden activation {activation!r}")
        if output_activation not in ("linear", "tanh"):
            raise ContractError(f"unknown output activation {output_activation!r}")
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64).reshape(-1) for b in biases]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or W.shape[1] != b.shape[0]:
                raise ContractError(f"layer {i}: weight {W.shape} does not match bias {b.shape}")
            if i and W.shape[0] != self.weights[i - 1].shape[1]:
                raise ContractError(f"layer {i}: input width {W.shape[0]} does not chain")
        self.activation = activation
        self.output_activation = output_activation

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def n_inputs(self):
        return self.weights[0].shape[0]

    @property
    def n_outputs(self):
        return self.weights[-1].shape[1]

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def arrays(self):
        """Parameter arrays in traversal order ``W0, b0, W1, b1, ...``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vector):
        """Return a copy whose parameters are taken from a flat vector."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.n_params:
            raise ContractError(f"expected {self.n_params} values, got {vector.size}")
        out = self.zeros_like()
        pos = 0
        for a in out.arrays():
            a[...] = vector[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return out

    def copy(self):
        return ParamSet(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.output_activation,
        )

    def zeros_like(self):
        return ParamSet(
            [np.zeros_like(W) for W in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.activation,
            self.output_activation,
        )

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, ParamSet):
            return NotImplemented
        return (
            self.activation == other.activation
            and self.output_activation == other.output_activation
            and self.dims == other.dims
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )

    def __repr__(self):
        dims = "-".join(map(str, self.dims))
        return f"ParamSet({dims}, {self.activation}, out={self.output_activation})"


def init_mlp(dims, rng=None, activation="tanh", output_activation="linear", output_scale=1.0):
    """Glorot-uniform weights and zero biases for the layer widths ``dims``.

    ``output_scale`` shrinks the last layer, which is the usual trick for
    starting a policy near uniform.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ContractError(f"invalid layer dims {dims}")
    rng = as_rng(rng)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if i == len(dims) - 2:
            W = W * output_scale
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return ParamSet(weights, biases, activation, output_activation)


def _check_input(p, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != p.n_inputs:
        raise ContractError(f"input width {X.shape[-1]} does not match network input {p.n_inputs}")
    return X, single


def forward_cache(p, x):
    """Forward pass that keeps every layer's pre- and post-activation."""
    X, single = _check_input(p, x)
    pre, post = [], [X]
    a = X
    last = len(p.weights) - 1
    for i, (W, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ W + b
        a = _activate(z, p.output_activation if i == last else p.activation)
        pre.append(z)
        post.append(a)
    return post[-1][0] if single else post[-1], (pre, post, single)


def forward(p, x):
    """Evaluate the network on one input vector or a batch of rows."""
    return forward_cache(p, x)[0]


def backward_from_cache(p, cache, output_grad):
    """Gradient of ``sum(output_grad * output)`` with respect to every parameter."""
    pre, post, single = cache
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != post[-1].shape:
        raise ContractError(f"output_grad shape {g.shape} does not match output {post[-1].shape}")
    grad_w, grad_b = [None] * len(p.weights), [None] * len(p.weights)
    last = len(p.weights) - 1
    delta = g
    for i in range(last, -1, -1):
        kind = p.output_activation if i == last else p.activation
        delta = delta * _activation_grad(post[i + 1], pre[i], kind)
        grad_w[i] = post[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = delta @ p.weights[i].T
    return ParamSet(grad_w, grad_b, p.activation, p.output_activation)


def backward(p, x, output_grad):
    """Reverse-mode gradient of ``output_grad . forward(p, x)``; batches are summed."""
    _, cache = forward_cache(p, x)
    return backward_from_cache(p, cache, output_grad)


def global_norm(g):
    return float(np.sqrt(sum(np.sum(a * a) for a in g.arrays())))


def clip_by_global_norm(g, max_norm):
    """Scale ``g`` in place so its global L2 norm is at most ``max_norm``."""
    norm = global_norm(g)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for a in g.arrays():
            a *= scale
    return norm


class Adam:
    """Adam with bias correction, updating a :class:`ParamSet` in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(a) for a in params.arrays()]
        self._v = [np.zeros_like(a) for a in params.arrays()]

    def step(self, params, grads):
        arrays, garrays = params.arrays(), grads.arrays()
        if len(arrays) != len(self._m) or any(a.shape != m.shape for a, m in zip(arrays, self._m)):
            raise ContractError("optimizer state does not match parameter shapes")
        if any(g.shape != a.shape for g, a in zip(garrays, arrays)):
            raise ContractError("gradient does not match parameter shapes")
        if not grads.is_finite():
            raise DivergenceError("non-finite gradient passed to optimizer", {"step": self.t})
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(arrays, garrays, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


def finite_difference_check(p, loss, grad=None, step=1e-6, max_coords=None, rng=None):
    """Largest discrepancy between an analytic gradient and central differences.

    ``loss(params)`` returns either a scalar or ``(scalar, grad ParamSet)``;
    pass ``grad`` explicitly when the loss returns only the scalar. With
    ``max_coords`` set, a random subset of that many coordinates is checked.

    The error is ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``
    over the checked coordinates, and 0 when both gradients vanish.
    """
    def value(q):
        out = loss(q)
        return float(out[0] if isinstance(out, tuple) else out)

    if grad is None:
        out = loss(p)
        if not isinstance(out, tuple):
            raise ContractError("loss must return (value, grad) when grad is not given")
        grad = out[1]
    theta = p.flat()
    analytic = grad.flat()
    coords = np.arange(theta.size)
    if max_coords is not None and theta.size > max_coords:
        coords = np.sort(as_rng(rng).choice(theta.size, size=max_coords, replace=False))
    numeric = np.empty(coords.size)
    for j, i in enumerate(coords):
        bumped = theta.copy()
        bumped[i] = theta[i] + step
        up = value(p.with_flat(bumped))
        bumped[i] = theta[i] - step
        down = value(p.with_flat(bumped))
        numeric[j] = (up - down) / (2 * step)
    diff = np.max(np.abs(analytic[coords] - numeric))
    scale = max(np.max(np.abs(analytic[coords])), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(diff / scale)


def dump_params(p, role, stream):
    """Write one checkpoint block: header line, then every parameter."""
    dims = "-".join(str(d) for d in p.dims)
    stream.write(f"{CKPT_MAGIC} {CKPT_VERSION} {role} {dims} {p.activation} {p.output_activation}\n")
    stream.write(" ".join(repr(float(v)) for v in p.flat()))
    stream.write("\n")


def load_params(stream, role=None):
    """Read one block written by :func:`dump_params`; returns ``(role, ParamSet)``."""
    header = stream.readline().split()
    if len(header) < 4 or header[0] != CKPT_MAGIC:
        raise ContractError("not a checkpoint block")
    if header[1] != CKPT_VERSION:
        raise ContractError(f"unsupported checkpoint version {header[1]}")
    found_role = header[2]
    if role is not None and found_role != role:
        raise ContractError(f"checkpoint role is {found_role!r}, expected {role!r}")
    dims = [int(d) for d in header[3].split("-")]
    activation = header[4] if len(header) > 4 else "tanh"
    output_activation = header[5] if len(header) > 5 else "linear"
    values = np.array([float(v) for v in stream.readline().split()], dtype=np.float64)
    template = ParamSet(
        [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
        [np.zeros(b) for b in dims[1:]],
        activation,
        output_activation,
    )
    return found_role, template.with_flat(values)


def save_checkpoint(path, blocks):
    """Write ``{role: ParamSet}`` blocks to ``path`` in insertion order."""
    buf = io.StringIO()
    for role, p in blocks.items():
        dump_params(p, role, buf)
    Path(path).write_text(buf.getvalue())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`."""
    blocks = {}
    with open(path) as fh:
        while True:
            pos = fh.tell()
            if not fh.readline():
                break
            fh.seek(pos)
            role, p = load_params(fh)
            blocks[role] = p
    return blocks
