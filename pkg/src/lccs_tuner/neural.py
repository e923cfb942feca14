"""Small dense networks with hand-written backprop and Adam, in float64."""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np


class ShapeMismatch(ValueError):
    pass


class Mlp:
    """Fully connected network with ReLU hidden layers.

    ``head`` is ``"linear"`` or ``"bounded"``; a bounded head maps each raw
    output ``o`` to ``lo + (hi - lo) * (tanh(o) + 1) / 2``.
    """

    def __init__(self, layer_sizes, head: str = "linear", bounds=None, rng=None,
                 final_scale: float = 3e-3):
        sizes = [int(n) for n in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeMismatch(f"invalid layer sizes {layer_sizes!r}")
        if head not in ("linear", "bounded"):
            raise ValueError(f"unknown head {head!r}")
        self.layer_sizes = sizes
        self.head = head
        if head == "bounded":
            lo, hi = (np.full(sizes[-1], -1.0), np.full(sizes[-1], 1.0)) if bounds is None else bounds
            self.lo = np.broadcast_to(np.asarray(lo, dtype=float), (sizes[-1],)).copy()
            self.hi = np.broadcast_to(np.asarray(hi, dtype=float), (sizes[-1],)).copy()
            if np.any(self.lo >= self.hi):
                raise ValueError("bounded head needs lo < hi")
        else:
            self.lo = self.hi = None
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights, self.biases = [], []
        n_layers = len(sizes) - 1
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            lim = final_scale if i == n_layers - 1 else 1.0 / np.sqrt(n_in)
            self.weights.append(rng.uniform(-lim, lim, size=(n_in, n_out)))
            self.biases.append(rng.uniform(-lim, lim, size=n_out))

    @property
    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def set_params(self, values) -> None:
        values = list(values)
        if len(values) != 2 * len(self.weights):
            raise ShapeMismatch("parameter count mismatch")
        for i in range(len(self.weights)):
            W, b = values[2 * i], values[2 * i + 1]
            if W.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ShapeMismatch(f"layer {i} parameter shapes differ")
            self.weights[i] = np.array(W, dtype=float)
            self.biases[i] = np.array(b, dtype=float)

    def copy(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.layer_sizes = list(self.layer_sizes)
        other.head = self.head
        other.lo = None if self.lo is None else self.lo.copy()
        other.hi = None if self.hi is None else self.hi.copy()
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatch(f"expected input width {self.layer_sizes[0]}, got shape {x.shape}")
        return X, single

    def forward(self, x):
        return forward(self, x)


def _forward_cached(net: Mlp, X):
    acts = [X]
    h = X
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W + b
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    raw = acts[-1]
    if net.head == "bounded":
        th = np.tanh(raw)
        out = net.lo + (net.hi - net.lo) * (th + 1.0) * 0.5
    else:
        th = None
        out = raw
    return out, (acts, th)


def forward(net: Mlp, x):
    """Network output for one input vector or a batch of row vectors."""
    X, single = net._check_input(x)
    out, _ = _forward_cached(net, X)
    return out[0] if single else out


def backward(net: Mlp, x, upstream):
    """Reverse-mode gradients of ``sum(upstream * forward(net, x))``.

    Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    ``net.params``.
    """
    X, single = net._check_input(x)
    G = np.asarray(upstream, dtype=float)
    G = G[None, :] if G.ndim == 1 else G
    if G.shape != (X.shape[0], net.layer_sizes[-1]):
        raise ShapeMismatch(f"upstream gradient shape {np.shape(upstream)} does not match output")
    _, (acts, th) = _forward_cached(net, X)
    if net.head == "bounded":
        G = G * (net.hi - net.lo) * 0.5 * (1.0 - th * th)
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        h_in = acts[i]
        grads[2 * i] = h_in.T @ G
        grads[2 * i + 1] = G.sum(axis=0)
        G = G @ net.weights[i].T
        if i > 0:
            G = G * (acts[i] > 0.0)
    dx = G[0] if single else G
    return grads, dx


class AdamState:
    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def copy(self) -> "AdamState":
        other = AdamState([], self.lr, self.beta1, self.beta2, self.eps)
        other.t = self.t
        other.m = [a.copy() for a in self.m]
        other.v = [a.copy() for a in self.v]
        return other


def adam_step(params, grads, state: AdamState) -> None:
    """Bias-corrected Adam descent step, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- checkpoints ---------------------------------------------------------------

def write_npz(path, arrays: dict) -> None:
    """``np.savez`` equivalent with fixed entry timestamps, so identical
    arrays always produce identical bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asanyarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def save_checkpoint(path, nets: dict, optimizers: dict | None = None, rng=None,
                    meta: dict | None = None) -> None:
    """Write networks, optimizer state and RNG state to one ``.npz`` file."""
    arrays = {}
    header = {"nets": {}, "optimizers": {}, "meta": meta or {}}
    for name, net in nets.items():
        header["nets"][name] = {"layer_sizes": net.layer_sizes, "head": net.head}
        if net.head == "bounded":
            arrays[f"net/{name}/lo"] = net.lo
            arrays[f"net/{name}/hi"] = net.hi
        for j, p in enumerate(net.params):
            arrays[f"net/{name}/p{j}"] = p
    for name, opt in (optimizers or {}).items():
        header["optimizers"][name] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                                      "eps": opt.eps, "t": opt.t, "n": len(opt.m)}
        for j, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"opt/{name}/m{j}"] = m
            arrays[f"opt/{name}/v{j}"] = v
    if rng is not None:
        header["rng"] = rng.bit_generator.state
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    write_npz(path, arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: ``(nets, optimizers, rng, meta)``."""
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        nets = {}
        for name, info in header["nets"].items():
            sizes = info["layer_sizes"]
            bounds = None
            if info["head"] == "bounded":
                bounds = (data[f"net/{name}/lo"], data[f"net/{name}/hi"])
            net = Mlp(sizes, head=info["head"], bounds=bounds)
            net.set_params([data[f"net/{name}/p{j}"] for j in range(2 * (len(sizes) - 1))])
            nets[name] = net
        opts = {}
        for name, info in header["optimizers"].items():
            opt = AdamState([], info["lr"], info["beta1"], info["beta2"], info["eps"])
            opt.t = info["t"]
            opt.m = [data[f"opt/{name}/m{j}"].copy() for j in range(info["n"])]
            opt.v = [data[f"opt/{name}/v{j}"].copy() for j in range(info["n"])]
            opts[name] = opt
    rng = None
    if "rng" in header:
        rng = np.random.default_rng()
        rng.bit_generator.state = header["rng"]
    return nets, opts, rng, header["meta"]
