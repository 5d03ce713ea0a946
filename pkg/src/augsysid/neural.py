"""Small numpy network engine: tanh MLPs, ResNet-style bypass nets, manual backprop and Adam.

Inputs are row-batched, ``(batch, features)``.  Every forward pass returns a
cache object that the matching ``backward`` consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import RngStream

HIDDEN = (16, 16)


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class Mlp:
    """``tanh`` hidden layers, identity output layer.  ``layers[i] = (W (out, in), b (out,))``."""

    def __init__(self, layers: List[tuple]):
        self.layers = [(np.array(W, dtype=np.float64), np.array(b, dtype=np.float64)) for W, b in layers]
        for (W0, _), (W1, _) in zip(self.layers, self.layers[1:]):
            if W1.shape[1] != W0.shape[0]:
                raise ValueError(f"layer dims do not chain: {W0.shape} -> {W1.shape}")

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "Mlp":
        return cls([(np.zeros((o, i)), np.zeros(o)) for i, o in zip(dims[:-1], dims[1:])])

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def dims(self) -> list:
        return [self.input_dim] + [W.shape[0] for W, _ in self.layers]

    def params(self) -> list:
        return [p for layer in self.layers for p in layer]

    def copy(self) -> "Mlp":
        return Mlp([(W.copy(), b.copy()) for W, b in self.layers])

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.input_dim}")
        acts = [x]
        h = x
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            h = h @ W.T + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, g):
        """Gradients of ``<g, forward(x)>``; returns ``(param_grads, input_grad)``."""
        g = np.asarray(g, dtype=np.float64)
        if g.shape[-1] != self.output_dim:
            raise ValueError(f"output gradient has {g.shape[-1]} features, expected {self.output_dim}")
        grads = []
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            W, _ = self.layers[i]
            if i < last:
                g = g * (1.0 - acts[i + 1] ** 2)
            inp = acts[i]
            grads.append((g.reshape(-1, g.shape[-1]).T @ inp.reshape(-1, inp.shape[-1]),
                          g.reshape(-1, g.shape[-1]).sum(axis=0)))
            g = g @ W
        grads.reverse()
        return [p for pair in grads for p in pair], g


def init_random(dims: Sequence[int], rng: RngStream) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    layers = []
    for i, o in zip(dims[:-1], dims[1:]):
        lim = glorot_limit(i, o)
        layers.append((rng.uniform(-lim, lim, size=(o, i)), np.zeros(o)))
    return Mlp(layers)


def zero_final_layer(net: Mlp) -> Mlp:
    out = net.copy()
    W, b = out.layers[-1]
    out.layers[-1] = (np.zeros_like(W), np.zeros_like(b))
    return out


class ResNet:
    """Linear bypass plus MLP residual: ``W x + b + mlp(x)``."""

    def __init__(self, W, b, residual: Mlp):
        self.W = np.array(W, dtype=np.float64)
        self.b = np.array(b, dtype=np.float64)
        self.residual = residual
        if residual.input_dim != self.W.shape[1] or residual.output_dim != self.W.shape[0]:
            raise ValueError("bypass and residual dimensions disagree")

    @classmethod
    def zero_output(cls, n_in: int, n_out: int, rng: RngStream, hidden=HIDDEN) -> "ResNet":
        """Random first layers, zero bypass and zero final layer: the net starts as ``f(x) = 0``."""
        mlp = zero_final_layer(init_random([n_in, *hidden, n_out], rng))
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out), mlp)

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W.shape[0]

    def params(self) -> list:
        return [self.W, self.b] + self.residual.params()

    def copy(self) -> "ResNet":
        return ResNet(self.W.copy(), self.b.copy(), self.residual.copy())

    def forward(self, x):
        r, acts = self.residual.forward(x)
        return x @ self.W.T + self.b + r, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, g):
        x = acts[0]
        g2 = g.reshape(-1, g.shape[-1])
        gW = g2.T @ x.reshape(-1, x.shape[-1])
        gb = g2.sum(axis=0)
        rg, gx = self.residual.backward(acts, g)
        return [gW, gb] + rg, gx + g @ self.W

    def zero_final(self) -> "ResNet":
        return ResNet(np.zeros_like(self.W), np.zeros_like(self.b), zero_final_layer(self.residual))


class EncoderNet(ResNet):
    """State encoder on lag windows ``z = [y_{k-1} .. y_{k-na}, u_{k-1} .. u_{k-nb}]``.

    The bypass matrix is split as ``[W_y W_u]`` so reconstructability maps can
    be loaded directly.
    """

    def __init__(self, W_y, W_u, bias, residual: Mlp, na: int, nb: int):
        W_y = np.atleast_2d(np.asarray(W_y, dtype=np.float64))
        W_u = np.atleast_2d(np.asarray(W_u, dtype=np.float64))
        super().__init__(np.hstack([W_y, W_u]), bias, residual)
        self.ny_cols = W_y.shape[1]
        self.na, self.nb = na, nb

    @classmethod
    def blank(cls, nx: int, ny: int, nu: int, na: int, nb: int, rng: RngStream, hidden=HIDDEN) -> "EncoderNet":
        """Zero bypass and bias; residual with random hidden layers and zero output layer."""
        n_in = na * ny + nb * nu
        mlp = zero_final_layer(init_random([n_in, *hidden, nx], rng))
        return cls(np.zeros((nx, na * ny)), np.zeros((nx, nb * nu)), np.zeros(nx), mlp, na, nb)

    @property
    def W_y(self) -> np.ndarray:
        return self.W[:, :self.ny_cols]

    @property
    def W_u(self) -> np.ndarray:
        return self.W[:, self.ny_cols:]

    @property
    def bias(self) -> np.ndarray:
        return self.b

    def copy(self) -> "EncoderNet":
        return EncoderNet(self.W_y.copy(), self.W_u.copy(), self.b.copy(), self.residual.copy(), self.na, self.nb)

    def with_linear(self, W_y, W_u, bias, zero_residual: bool = True) -> "EncoderNet":
        res = zero_final_layer(self.residual) if zero_residual else self.residual.copy()
        return EncoderNet(W_y, W_u, bias, res, self.na, self.nb)

    def encode(self, y_lags, u_lags):
        return self(np.hstack([y_lags, u_lags]))


@dataclass(frozen=True)
class Standardisation:
    """Input/output means and spreads a net was (or is drawn as if) trained under."""

    mu_in: np.ndarray
    sd_in: np.ndarray
    mu_out: np.ndarray
    sd_out: np.ndarray

    @classmethod
    def fit(cls, Z, X) -> "Standardisation":
        sd_in, sd_out = Z.std(axis=0), X.std(axis=0)
        return cls(Z.mean(axis=0), np.where(sd_in > 0, sd_in, 1.0),
                   X.mean(axis=0), np.where(sd_out > 0, sd_out, 1.0))


def fold_standardisation(net: ResNet, mu_in, sd_in, mu_out, sd_out) -> None:
    """Rewrite ``net`` (trained on standardised data) to act on raw units, in place.

    Raw-unit net: ``x -> mu_out + sd_out * net((x - mu_in) / sd_in)``.
    """
    inv = 1.0 / sd_in
    shift = mu_in * inv
    W1, b1 = net.residual.layers[0]
    net.residual.layers[0] = (W1 * inv, b1 - W1 @ shift)
    WL, bL = net.residual.layers[-1]
    net.residual.layers[-1] = (WL * sd_out[:, None], bL * sd_out)
    b = sd_out * (net.b - net.W @ shift) + mu_out
    net.W[...] = (net.W * inv) * sd_out[:, None]
    net.b[...] = b


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list, grads: list) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to Adam")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def save_params(net, path, meta: Optional[dict] = None) -> None:
    """Flat CSV: ``param,row,col,value`` (vectors use ``col = 0``)."""
    with open(path, "w") as fh:
        header = dict(meta or {})
        if isinstance(net, EncoderNet):
            header.update(kind="encoder", na=net.na, nb=net.nb, ny_cols=net.ny_cols)
        elif isinstance(net, ResNet):
            header.update(kind="resnet")
        else:
            header.update(kind="mlp")
        mlp = net.residual if isinstance(net, ResNet) else net
        header["dims"] = "-".join(str(d) for d in mlp.dims)
        fh.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        fh.write("param,row,col,value\n")
        for idx, p in enumerate(net.params()):
            M = p.reshape(p.shape[0], -1)
            for i in range(M.shape[0]):
                for j in range(M.shape[1]):
                    fh.write(f"{idx},{i},{j},{M[i, j]:.17g}\n")


def load_params(path):
    with open(path) as fh:
        meta = dict(kv.split("=", 1) for kv in fh.readline()[1:].split())
        fh.readline()
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    dims = [int(d) for d in meta["dims"].split("-")]
    mlp = Mlp.zeros(dims)
    kind = meta["kind"]
    if kind == "mlp":
        net = mlp
    elif kind == "resnet":
        net = ResNet(np.zeros((dims[-1], dims[0])), np.zeros(dims[-1]), mlp)
    else:
        ny_cols = int(meta["ny_cols"])
        net = EncoderNet(np.zeros((dims[-1], ny_cols)), np.zeros((dims[-1], dims[0] - ny_cols)),
                         np.zeros(dims[-1]), mlp, int(meta["na"]), int(meta["nb"]))
    params = net.params()
    for idx, i, j, v in rows:
        p = params[int(idx)]
        if p.ndim == 1:
            p[int(i)] = v
        else:
            p[int(i), int(j)] = v
    return net, meta
