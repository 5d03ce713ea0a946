"""Encoder initialisation: random, model-based (reconstructability maps), LLS and ANN pretraining."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baseline import LtiBaseline, NonlinearBaseline
from .core import IoDataset, LtiSS, RngStream, lag_matrix
from .linearize import find_equilibrium, jacobians
from .lti import ReconstructabilityMaps, noiseless_maps, noisy_maps, shift_to_past_window
from .neural import (AdamState, EncoderNet, Standardisation, adam_step, fold_standardisation,
                     glorot_limit, init_random)

log = logging.getLogger(__name__)

METHODS = ("random", "model_based", "data_based_lls", "data_based_ann")
ALIASES = {"model": "model_based", "lls": "data_based_lls", "ann": "data_based_ann", "data": "data_based_ann"}


@dataclass(frozen=True)
class InitMethod:
    tag: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        tag = ALIASES.get(self.tag, self.tag)
        if tag not in METHODS:
            raise ValueError(f"unknown init method {self.tag!r}; choose from {', '.join(METHODS)}")
        object.__setattr__(self, "tag", tag)
        allowed = {"random": set(), "model_based": {"n", "K", "u_star", "x_guess"},
                   "data_based_lls": {"fit_bias"}, "data_based_ann": {"epochs", "batch_size", "lr"}}[tag]
        extra = set(self.options) - allowed
        if extra:
            raise ValueError(f"options {sorted(extra)} do not apply to {tag}")


@dataclass(frozen=True)
class ApproxDataset:
    """Baseline simulation on measured inputs: ``(y_hat, x_hat, u)``."""

    y_hat: np.ndarray
    x_hat: np.ndarray
    u: np.ndarray

    def __len__(self) -> int:
        return len(self.u)


@dataclass
class PretrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0


def _fit_columns(W: np.ndarray, blocks: int, width: int) -> np.ndarray:
    """Fit a map to a window of ``blocks`` samples: zero-pad, or truncate with a warning."""
    cols = blocks * width
    if W.shape[1] <= cols:
        return np.hstack([W, np.zeros((W.shape[0], cols - W.shape[1]))])
    dropped = W[:, cols:]
    if np.any(dropped != 0.0):
        warnings.warn(f"window shorter than the map: dropping {dropped.shape[1]} non-zero columns",
                      RuntimeWarning, stacklevel=3)
    return W[:, :cols]


def encoder_maps(ss: LtiSS, na: int, nb: int, n: Optional[int] = None, K=None) -> ReconstructabilityMaps:
    """Maps over the encoder window (ending at ``k-1``) that estimate ``x_k``.

    The default ``n = min(na, nb) - 1`` uses only samples both lag windows
    contain; the longer window's extra columns get zero weight.
    """
    n = min(na, nb) - 1 if n is None else n
    if K is not None:
        ss = LtiSS(ss.A, ss.B, ss.C, ss.D, K=K)
    maps = noisy_maps(ss, n) if ss.K is not None else noiseless_maps(ss, n)
    return shift_to_past_window(maps, ss)


def init_model_based(enc: EncoderNet, baseline, n: Optional[int] = None, K=None,
                     u_star=None, x_guess=None) -> EncoderNet:
    """Load (shifted) reconstructability maps into the bypass; residual output zeroed.

    LTI baselines use their own matrices; other baselines are linearised around
    an equilibrium and the bias absorbs the operating-point offsets.
    """
    if isinstance(baseline, LtiSS):
        baseline = LtiBaseline(baseline)
    if isinstance(baseline, LtiBaseline):
        ss = baseline.ss
        eq = None
    else:
        u_star = np.zeros(baseline.nu) if u_star is None else u_star
        x_guess = np.zeros(baseline.nx) if x_guess is None else x_guess
        eq = find_equilibrium(baseline, u_star, x_guess)
        ss = jacobians(baseline, eq).lti
    if K is None and ss.K is not None:
        K = ss.K
    maps = encoder_maps(ss.without_noise() if K is None else ss, enc.na, enc.nb, n, K)
    ny = ss.ny
    nu = ss.nu
    W_y = _fit_columns(maps.W_y, enc.na, ny)
    W_u = _fit_columns(maps.W_u, enc.nb, nu)
    if eq is None:
        bias = np.zeros(ss.nx)
    else:
        bias = eq.x_star - W_y @ np.tile(eq.y_star, enc.na) - W_u @ np.tile(eq.u_star, enc.nb)
    return enc.with_linear(W_y, W_u, bias)


def simulate_baseline(baseline: NonlinearBaseline, data: IoDataset, x0=None) -> ApproxDataset:
    """Open-loop baseline run on the measured inputs.

    ``x0=None`` starts from zero for nonlinear baselines; for LTI baselines the
    state at sample ``n_x`` is reconstructed from the measured window and the
    run starts there (the first ``n_x`` samples are dropped).
    """
    if isinstance(baseline, LtiSS):
        baseline = LtiBaseline(baseline)
    u = data.u
    if x0 is None and isinstance(baseline, LtiBaseline):
        ss = baseline.ss.without_noise()
        n = ss.nx
        maps = noiseless_maps(ss, n)
        x0 = maps.W_y @ data.y[n::-1].reshape(-1) + maps.W_u @ data.u[n::-1].reshape(-1)
        u = data.u[n:]
    elif x0 is None:
        x0 = np.zeros(baseline.nx)
    try:
        y_hat, x_hat = baseline.simulate(u, x0)
    except FloatingPointError as exc:
        raise FloatingPointError(f"baseline simulation diverged: {exc}") from exc
    if not (np.all(np.isfinite(x_hat)) and np.all(np.isfinite(y_hat))):
        bad = int(np.argmax(~np.all(np.isfinite(x_hat), axis=1)))
        raise FloatingPointError(f"baseline simulation diverged at step {bad}")
    return ApproxDataset(y_hat, x_hat, np.asarray(u).reshape(len(u), -1))


def encoder_regression(approx: ApproxDataset, na: int, nb: int):
    """Regressor rows ``[y_hat_{k-1..k-na}, u_{k-1..k-nb}]`` and targets ``x_hat_k``."""
    k0 = max(na, nb)
    ends = np.arange(k0, len(approx)) - 1
    Phi = np.hstack([lag_matrix(approx.y_hat, ends, na), lag_matrix(approx.u, ends, nb)])
    return Phi, approx.x_hat[k0:]


def init_lls(enc: EncoderNet, approx: ApproxDataset, fit_bias: bool = False) -> EncoderNet:
    """Least-squares bypass (minimum-norm if rank deficient); residual output zeroed."""
    Phi, X = encoder_regression(approx, enc.na, enc.nb)
    if fit_bias:
        Phi = np.hstack([Phi, np.ones((len(Phi), 1))])
    if len(Phi) < Phi.shape[1]:
        raise ValueError(f"{len(Phi)} regression rows for {Phi.shape[1]} unknowns: too little data")
    sol, _, rank, _ = np.linalg.lstsq(Phi, X, rcond=None)
    n_u_cols = enc.nb * approx.u.shape[1]
    if rank < n_u_cols:
        warnings.warn(f"regressor rank {rank} is below the {n_u_cols} input columns: "
                      "input not persistently exciting, returning the minimum-norm solution",
                      RuntimeWarning, stacklevel=2)
    W = sol.T
    ny_cols = enc.na * approx.y_hat.shape[1]
    bias = W[:, -1] if fit_bias else np.zeros(W.shape[0])
    W = W[:, :-1] if fit_bias else W
    return enc.with_linear(W[:, :ny_cols], W[:, ny_cols:], bias)


def v_enc(enc: EncoderNet, approx: ApproxDataset) -> float:
    Phi, X = encoder_regression(approx, enc.na, enc.nb)
    return float(np.mean(np.sum((enc(Phi) - X) ** 2, axis=1)))


def data_scaling(baseline, data: IoDataset, na: int, nb: int, approx: Optional[ApproxDataset] = None
                 ) -> Standardisation:
    """Lag-window statistics of the measured data and state spread of the baseline run.

    Zero output mean keeps a randomly drawn encoder centred on the equilibrium.
    """
    approx = simulate_baseline(baseline, data) if approx is None else approx
    k0 = max(na, nb)
    ends = np.arange(k0, len(data)) - 1
    Z = np.hstack([lag_matrix(data.y, ends, na), lag_matrix(data.u, ends, nb)])
    st = Standardisation.fit(Z, approx.x_hat)
    return Standardisation(st.mu_in, st.sd_in, np.zeros_like(st.mu_out), st.sd_out)


def init_random_encoder(enc: EncoderNet, rng: RngStream, scaling: Optional[Standardisation] = None
                        ) -> EncoderNet:
    """Every encoder parameter Glorot-uniform (bias uses the bypass limit).

    With ``scaling`` the draw is made in standardised coordinates and folded
    back to raw units, so the initial states have the spread of the data.
    """
    n_out, n_in = enc.W.shape
    lim = glorot_limit(n_in, n_out)
    W = rng.uniform(-lim, lim, size=(n_out, n_in))
    bias = rng.uniform(-lim, lim, size=n_out)
    dims = enc.residual.dims
    mlp = init_random(dims, rng)
    out = EncoderNet(W[:, :enc.ny_cols], W[:, enc.ny_cols:], bias, mlp, enc.na, enc.nb)
    if scaling is not None:
        fold_standardisation(out, scaling.mu_in, scaling.sd_in, scaling.mu_out, scaling.sd_out)
    return out


def init_ann_pretrain(enc: EncoderNet, approx: ApproxDataset, config: Optional[PretrainConfig] = None,
                      rng: Optional[RngStream] = None, trace: Optional[list] = None):
    """Fit a randomly initialised encoder to ``x_hat`` with Adam; returns ``(encoder, V_enc)``.

    Training runs on standardised regressors/targets; the scalings are folded
    back into the weights so the returned net acts on raw signals.  ``trace``
    (if given) receives the full-data standardised loss after every epoch.
    """
    cfg = PretrainConfig() if config is None else config
    rng = RngStream(cfg.seed, 11) if rng is None else rng
    Phi, X = encoder_regression(approx, enc.na, enc.nb)
    st = Standardisation.fit(Phi, X)
    Zn = (Phi - st.mu_in) / st.sd_in
    Xn = (X - st.mu_out) / st.sd_out
    net = init_random_encoder(enc, rng)
    state = AdamState(lr=cfg.lr)
    N = len(Zn)
    for epoch in range(cfg.epochs):
        order = rng.generator.permutation(N)
        for i in range(0, N, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            out, acts = net.forward(Zn[idx])
            g = (2.0 / len(idx)) * (out - Xn[idx])
            grads, _ = net.backward(acts, g)
            adam_step(state, net.params(), grads)
        if not np.all(np.isfinite(net.W)):
            raise FloatingPointError(f"encoder pretraining diverged in epoch {epoch}")
        if trace is not None:
            trace.append(float(np.mean(np.sum((net(Zn) - Xn) ** 2, axis=1))))
    fold_standardisation(net, st.mu_in, st.sd_in, st.mu_out, st.sd_out)
    loss = float(np.mean(np.sum((net(Phi) - X) ** 2, axis=1)))
    if not np.isfinite(loss):
        raise FloatingPointError("encoder pretraining produced a non-finite loss")
    return net, loss


def initialise(method: InitMethod, enc: EncoderNet, baseline, est: IoDataset, rng: RngStream,
               scaling: Optional[Standardisation] = None):
    """Dispatch to one init method; returns ``(encoder, info)`` with wall time in seconds.

    ``scaling`` only affects the random method (see :func:`init_random_encoder`).
    """
    opts = dict(method.options)
    t0 = time.perf_counter()
    info: dict = {}
    if method.tag == "random":
        out = init_random_encoder(enc, rng, scaling)
    elif method.tag == "model_based":
        out = init_model_based(enc, baseline, **opts)
    else:
        approx = simulate_baseline(baseline, est)
        if method.tag == "data_based_lls":
            out = init_lls(enc, approx, **opts)
        else:
            cfg = PretrainConfig(**{k: v for k, v in opts.items() if k in ("epochs", "batch_size", "lr")})
            out, info["v_enc"] = init_ann_pretrain(enc, approx, cfg, rng)
    info["wall_s"] = time.perf_counter() - t0
    return out, info
