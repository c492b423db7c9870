"""Small dense networks with hand-written backprop, Adam, and Polyak averaging.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of row
vectors goes through a layer as ``x @ W + b``.  Every function accepts a
single input vector or a batch (one row per sample).
"""

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "relu", "tanh")


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(kind, z, y):
    # derivative expressed through the pre-activation z or the output y
    if kind == "relu":
        return (z > 0).astype(float)
    if kind == "tanh":
        return 1.0 - y * y
    return np.ones_like(z)


@dataclass
class DenseNet:
    sizes: tuple
    weights: list
    biases: list
    hidden: str = "relu"
    output: str = "identity"

    def __post_init__(self):
        self.sizes = tuple(int(n) for n in self.sizes)
        if len(self.sizes) < 2:
            raise ValueError("a network needs at least an input and an output size")
        if self.hidden not in ACTIVATIONS or self.output not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and one bias vector per layer")
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} has shapes {w.shape}, {b.shape}; expected "
                                 f"{(self.sizes[i], self.sizes[i + 1])}, {(self.sizes[i + 1],)}")

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    def params(self):
        """Parameters in serialization order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def copy(self):
        return DenseNet(self.sizes, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.hidden, self.output)

    def __call__(self, x):
        return forward(self, x)


def init_net(sizes, rng, hidden="relu", output="identity", final_scale=3e-3):
    """Uniform(+-1/sqrt(fan_in)) for hidden layers, Uniform(+-final_scale) for the last."""
    weights, biases = [], []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        bound = final_scale if i == n_layers - 1 else 1.0 / np.sqrt(sizes[i])
        weights.append(rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1])))
        biases.append(rng.uniform(-bound, bound, size=sizes[i + 1]))
    return DenseNet(tuple(sizes), weights, biases, hidden, output)


@dataclass
class Gradients:
    weights: list
    biases: list
    input: np.ndarray = None

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    def scaled(self, c):
        return Gradients([c * w for w in self.weights], [c * b for b in self.biases],
                         None if self.input is None else c * self.input)


def _as_batch(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.n_in:
        raise ValueError(f"expected input of size {net.n_in}, got shape {x.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite network input")
    return X, single


def _forward_cache(net, X):
    zs, ys = [], [X]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = ys[-1] @ w + b
        zs.append(z)
        ys.append(_act(net.output if i == last else net.hidden, z))
    return zs, ys


def forward(net, x):
    X, single = _as_batch(net, x)
    y = _forward_cache(net, X)[1][-1]
    return y[0] if single else y


def backward(net, x, upstream):
    """Gradients of ``sum <upstream, forward(x)>`` w.r.t. parameters and input.

    For a batch the parameter gradients are summed over rows and the input
    gradient has one row per sample.
    """
    X, single = _as_batch(net, x)
    U = np.asarray(upstream, dtype=float)
    U = U[None, :] if U.ndim == 1 else U
    if U.shape != (X.shape[0], net.n_out):
        raise ValueError(f"upstream shape {np.shape(upstream)} does not match output size {net.n_out}")
    zs, ys = _forward_cache(net, X)
    n = len(net.weights)
    gw, gb = [None] * n, [None] * n
    delta = U
    for i in range(n - 1, -1, -1):
        kind = net.output if i == n - 1 else net.hidden
        delta = delta * _act_grad(kind, zs[i], ys[i + 1])
        gw[i] = ys[i].T @ delta
        gb[i] = delta.sum(axis=0)
        delta = delta @ net.weights[i].T
    return Gradients(gw, gb, delta[0] if single else delta)


def input_grad(net, x, upstream=None):
    """Input-gradient only (e.g. grad_a Q); ``upstream`` defaults to ones."""
    X, single = _as_batch(net, x)
    if upstream is None:
        upstream = np.ones((X.shape[0], net.n_out))
    g = backward(net, X, upstream).input
    return g[0] if single else g


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net, **kw):
        return cls([np.zeros_like(p) for p in net.params()],
                   [np.zeros_like(p) for p in net.params()], **kw)


def adam_step(net, grads, state, lr):
    """One Adam descent step, in place; returns ``(net, state)``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(net.params(), grads.params(), state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return net, state


def sgd_step(net, grads, lr):
    """Plain gradient descent step, in place."""
    for p, g in zip(net.params(), grads.params()):
        p -= lr * g
    return net


def soft_update(target, online, tau):
    """Polyak blend ``target <- tau * online + (1 - tau) * target``, in place."""
    if target.sizes != online.sizes:
        raise ValueError(f"shape mismatch: {target.sizes} vs {online.sizes}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    for pt, po in zip(target.params(), online.params()):
        pt *= 1.0 - tau
        pt += tau * po
    return target


# -- checkpoints --------------------------------------------------------------
#
# Text format: the first line is a JSON header with the layer sizes and the
# activations; then one float per line (repr, round-trips exactly), layers in
# order, each layer's weight matrix row-major (fan_in rows) then its bias.


def dumps(net):
    header = json.dumps({"sizes": list(net.sizes), "hidden": net.hidden, "output": net.output})
    return "\n".join([header] + [repr(float(v)) for v in net.flat()]) + "\n"


def loads(text):
    lines = text.strip().splitlines()
    try:
        header = json.loads(lines[0])
        values = np.array([float(v) for v in lines[1:]])
        sizes = header["sizes"]
    except (IndexError, KeyError, ValueError) as exc:
        raise ValueError(f"malformed network checkpoint: {exc}") from exc
    weights, biases, k = [], [], 0
    for i in range(len(sizes) - 1):
        nw = sizes[i] * sizes[i + 1]
        weights.append(values[k:k + nw].reshape(sizes[i], sizes[i + 1]))
        k += nw
        biases.append(values[k:k + sizes[i + 1]])
        k += sizes[i + 1]
    if k != values.size:
        raise ValueError(f"checkpoint has {values.size} values, layer sizes need {k}")
    return DenseNet(tuple(sizes), weights, biases, header.get("hidden", "relu"),
                    header.get("output", "identity"))


def save(net, path):
    with open(path, "w") as fh:
        fh.write(dumps(net))


def load(path):
    with open(path) as fh:
        return loads(fh.read())
