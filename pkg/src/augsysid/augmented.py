"""Static parallel augmentation ``x+ = f_base(x, u) + f_aug(x, u)`` with an encoder-estimated initial state."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baseline import NonlinearBaseline
from .core import IoDataset, RngStream, lag_matrix
from .neural import AdamState, EncoderNet, ResNet, adam_step

log = logging.getLogger(__name__)

VAL_HORIZONS = (5, 20, 100)


class DivergenceError(FloatingPointError):
    def __init__(self, msg: str, epoch: Optional[int] = None):
        super().__init__(msg if epoch is None else f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    T: int = 200
    epochs: int = 2000
    batch_size: int = 3000
    na: int = 9
    nb: int = 9
    lr: float = 1e-3
    seed: int = 0
    val_stride: int = 10
    val_horizons: tuple = VAL_HORIZONS

    def __post_init__(self):
        for name in ("T", "batch_size", "na", "nb", "val_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and lr must be non-negative")


class AugmentedModel:
    def __init__(self, baseline: NonlinearBaseline, f_aug: ResNet, encoder: EncoderNet):
        if f_aug.output_dim != baseline.nx or f_aug.input_dim != baseline.nx + baseline.nu:
            raise ValueError("f_aug must map (nx + nu) -> nx")
        if encoder.output_dim != baseline.nx:
            raise ValueError("encoder output must match the baseline state dimension")
        self.baseline = baseline
        self.f_aug = f_aug
        self.encoder = encoder

    @classmethod
    def create(cls, baseline: NonlinearBaseline, encoder: EncoderNet, rng: RngStream) -> "AugmentedModel":
        """New model with ``f_aug`` zero at the output (random first layers drawn from ``rng``)."""
        return cls(baseline, ResNet.zero_output(baseline.nx + baseline.nu, baseline.nx, rng), encoder)

    @property
    def k0(self) -> int:
        """First sample index whose past window is fully available."""
        return max(self.encoder.na, self.encoder.nb)

    def params(self) -> list:
        return self.encoder.params() + self.f_aug.params()

    def copy(self) -> "AugmentedModel":
        return AugmentedModel(self.baseline, self.f_aug.copy(), self.encoder.copy())

    def step(self, x, u):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        x_next = self.baseline.f(x, u) + self.f_aug(np.concatenate([x, u], axis=-1))
        y = self.baseline.h(x, u)
        if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(y))):
            raise DivergenceError("non-finite state in model step")
        return x_next, y

    def encoder_inputs(self, data: IoDataset, starts) -> np.ndarray:
        starts = np.asarray(starts)
        if starts.min() < self.k0:
            raise IndexError(f"section start {starts.min()} needs {self.k0} past samples")
        return np.hstack([lag_matrix(data.y, starts - 1, self.encoder.na),
                          lag_matrix(data.u, starts - 1, self.encoder.nb)])

    def rollout(self, data: IoDataset, starts, T: int, keep_tape: bool = False):
        """Predicted outputs ``(B, T, ny)`` for sections ``[k, k+T)``."""
        starts = np.atleast_1d(np.asarray(starts))
        if T < 1:
            raise ValueError("T must be >= 1")
        if starts.max() + T > len(data):
            raise IndexError(f"section {starts.max()}+{T} runs past the data end {len(data)}")
        z = self.encoder_inputs(data, starts)
        x, enc_acts = self.encoder.forward(z)
        idx = starts[:, None] + np.arange(T)[None, :]
        U = data.u[idx]
        Y = np.empty((len(starts), T, self.baseline.ny))
        tape = []
        for t in range(T):
            u = U[:, t]
            Y[:, t] = self.baseline.h(x, u)
            xu = np.concatenate([x, u], axis=1)
            aug, acts = self.f_aug.forward(xu)
            if keep_tape:
                tape.append((x, acts))
            x = self.baseline.f(x, u) + aug
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"rollout state became non-finite at step {t}")
        if keep_tape:
            return Y, (enc_acts, U, tape)
        return Y

    def loss_and_grad(self, data: IoDataset, starts, T: int):
        """T-step loss and its gradient w.r.t. ``params()`` (same order)."""
        starts = np.atleast_1d(np.asarray(starts))
        Y, (enc_acts, U, tape) = self.rollout(data, starts, T, keep_tape=True)
        idx = starts[:, None] + np.arange(T)[None, :]
        err = Y - data.y[idx]
        B = len(starts)
        loss = float(np.sum(err**2) / (B * T))
        gy = (2.0 / (B * T)) * err
        nx = self.baseline.nx
        aug_grads = [np.zeros_like(p) for p in self.f_aug.params()]
        gx = np.zeros((B, nx))
        for t in range(T - 1, -1, -1):
            x, acts = tape[t]
            u = U[:, t]
            g_next = gx
            pg, g_in = self.f_aug.backward(acts, g_next)
            for acc, g in zip(aug_grads, pg):
                acc += g
            gx = self.baseline.f_vjp(x, u, g_next) + g_in[:, :nx] + self.baseline.h_vjp(x, u, gy[:, t])
        enc_grads, _ = self.encoder.backward(enc_acts, gx)
        return loss, enc_grads + aug_grads

    def loss_tstep(self, data: IoDataset, starts, T: int) -> float:
        starts = np.atleast_1d(np.asarray(starts))
        Y = self.rollout(data, starts, T)
        idx = starts[:, None] + np.arange(T)[None, :]
        return float(np.mean(np.sum((Y - data.y[idx]) ** 2, axis=-1)))

    def horizon_rmse(self, data: IoDataset, horizons=VAL_HORIZONS, stride: int = 10) -> dict:
        """T-step RMSE for several horizons from one shared set of section starts."""
        Tmax = max(horizons)
        starts = np.arange(self.k0, len(data) - Tmax + 1, stride)
        Y = self.rollout(data, starts, Tmax)
        idx = starts[:, None] + np.arange(Tmax)[None, :]
        se = np.sum((Y - data.y[idx]) ** 2, axis=-1)
        return {T: float(np.sqrt(np.mean(se[:, :T]))) for T in horizons}

    def simulate(self, data: IoDataset, start: Optional[int] = None):
        """Encode once at ``start`` (default: first possible sample), then run open loop to the end."""
        k = self.k0 if start is None else start
        return self.rollout(data, [k], len(data) - k)[0]

    def rmse_simulation(self, data: IoDataset) -> float:
        if len(data) <= self.k0:
            raise ValueError(f"need more than {self.k0} samples")
        y_hat = self.simulate(data)
        return float(np.sqrt(np.mean(np.sum((data.y[self.k0:] - y_hat) ** 2, axis=-1))))


def rmse(y, y_hat) -> float:
    y = np.asarray(y).reshape(len(y), -1)
    y_hat = np.asarray(y_hat).reshape(len(y_hat), -1)
    return float(np.sqrt(np.mean(np.sum((y - y_hat) ** 2, axis=-1))))


@dataclass
class History:
    horizons: tuple = VAL_HORIZONS
    rows: list = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val: dict, wall_ms: float) -> None:
        self.rows.append((epoch, train_loss, *(val[T] for T in self.horizons), wall_ms))

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([r[self.header.index(name)] for r in self.rows])

    @property
    def header(self) -> list:
        return ["epoch", "train_loss"] + [f"val_rmse_T{T}" for T in self.horizons] + ["wall_ms"]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for r in self.rows:
                w.writerow([r[0]] + [format(v, ".17g") for v in r[1:]])

    @classmethod
    def from_csv(cls, path) -> "History":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        horizons = tuple(int(c.split("T")[-1]) for c in rows[0] if c.startswith("val_rmse_T"))
        h = cls(horizons)
        for r in rows[1:]:
            h.rows.append((int(r[0]), *(float(v) for v in r[1:])))
        return h


def sample_starts(rng: RngStream, k0: int, N: int, T: int, batch_size: int) -> np.ndarray:
    return rng.integers(k0, N - T + 1, size=batch_size)


def train(model: AugmentedModel, est: IoDataset, val: IoDataset, cfg: TrainConfig,
          rng: Optional[RngStream] = None):
    """Joint Adam training of encoder and ``f_aug``; one batch of sections per epoch.

    History row ``i`` holds the batch loss and validation RMSEs of the
    parameters *entering* epoch ``i``.
    """
    if len(est) < model.k0 + cfg.T or len(val) < model.k0 + max(cfg.val_horizons):
        raise ValueError("data sets too short for the requested windows and horizons")
    rng = RngStream(cfg.seed, 7) if rng is None else rng
    state = AdamState(lr=cfg.lr)
    hist = History(tuple(cfg.val_horizons))
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        starts = sample_starts(rng, model.k0, len(est), cfg.T, cfg.batch_size)
        try:
            loss, grads = model.loss_and_grad(est, starts, cfg.T)
            val_rmse = model.horizon_rmse(val, cfg.val_horizons, cfg.val_stride)
            if not np.isfinite(loss):
                raise DivergenceError("training loss is not finite")
            adam_step(state, model.params(), grads)
        except FloatingPointError as exc:
            raise DivergenceError(str(exc), epoch) from exc
        hist.append(epoch, loss, val_rmse, 1000.0 * (time.perf_counter() - t0))
        if epoch % 50 == 0:
            log.info("epoch %d loss %.4e val %s", epoch, loss, val_rmse)
    return model, hist
