"""Two-mass spring-damper benchmark: ODE, RK4 integration, multisine input and data sets.

State ordering is ``[p1, v1, p2, v2]``; the force acts on mass 1 and the
measured output is ``p2``.  Mass 1 is tied to the ground through ``k1``,
``c1`` and the cubic damper ``d1``; the masses are coupled through ``k2``,
``c2`` and the cubic spring ``a2``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional

import numpy as np

from .baseline import NonlinearBaseline
from .core import IoDataset, RngStream


@dataclass(frozen=True)
class MsdParams:
    m1: float = 0.5
    m2: float = 0.4
    k1: float = 100.0
    k2: float = 100.0
    c1: float = 0.5
    c2: float = 0.5
    a2: float = 1000.0
    d1: float = 0.1

    def __post_init__(self):
        if self.m1 <= 0 or self.m2 <= 0:
            raise ValueError("masses must be positive")
        for name in ("k1", "k2", "c1", "c2", "a2", "d1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def system(cls) -> "MsdParams":
        return cls()

    @classmethod
    def baseline(cls) -> "MsdParams":
        """The prior model: same structure, nonlinear damping halved."""
        return cls(d1=0.05)

    def linear(self) -> "MsdParams":
        return replace(self, a2=0.0, d1=0.0)


@dataclass(frozen=True)
class SimConfig:
    ts: float = 0.1
    ti: float = 0.01
    n_freq: int = 1666
    band: tuple = (0.0, 5.0)
    snr_db: float = 20.0
    n_est: int = 20_000
    n_val: int = 10_000
    n_test: int = 10_000
    transient_discard: int = 500
    input_rms: float = 1.0
    seed: int = 0

    def __post_init__(self):
        sub = self.ts / self.ti
        if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
            raise ValueError(f"ts/ti must be a positive integer, got {sub}")
        if self.band[1] > 0.5 / self.ts + 1e-12:
            raise ValueError(f"band upper edge {self.band[1]} Hz exceeds Nyquist {0.5 / self.ts} Hz")

    @property
    def substeps(self) -> int:
        return int(round(self.ts / self.ti))

    def as_dict(self) -> dict:
        return asdict(self)


def msd_derivative(x, u, p: MsdParams):
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    p1, v1, p2, v2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    F = u[..., 0] if u.ndim else u
    dp = p2 - p1
    dv = v2 - v1
    coupling = p.k2 * dp + p.c2 * dv
    a1 = (-p.k1 * p1 - p.c1 * v1 - p.d1 * (v1 * v1 * v1) + coupling + F) / p.m1
    a2 = (-coupling - p.a2 * (dp * dp * dp)) / p.m2
    return np.stack([v1, a1, v2, a2], axis=-1)


def msd_derivative_vjp(x, u, p: MsdParams, g):
    """``g^T d(msd_derivative)/dx``."""
    v1 = x[..., 1]
    dp = x[..., 2] - x[..., 0]
    ga = g[..., 1] / p.m1
    gb = g[..., 3] / p.m2
    spring = p.k2 + 3.0 * p.a2 * dp**2
    return np.stack([
        -ga * (p.k1 + p.k2) + gb * spring,
        g[..., 0] - ga * (p.c1 + 3.0 * p.d1 * v1**2 + p.c2) + gb * p.c2,
        ga * p.k2 - gb * spring,
        g[..., 2] + ga * p.c2 - gb * p.c2,
    ], axis=-1)


def msd_linear_matrices(p: MsdParams):
    """Continuous-time ``(Ac, Bc)`` of the linear part of the ODE."""
    Ac = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-(p.k1 + p.k2) / p.m1, -(p.c1 + p.c2) / p.m1, p.k2 / p.m1, p.c2 / p.m1],
        [0.0, 0.0, 0.0, 1.0],
        [p.k2 / p.m2, p.c2 / p.m2, -p.k2 / p.m2, -p.c2 / p.m2],
    ])
    Bc = np.array([[0.0], [1.0 / p.m1], [0.0], [0.0]])
    return Ac, Bc


def msd_energy(x, p: MsdParams):
    """Stored mechanical energy (kinetic + springs, including the quartic potential of ``a2``)."""
    x = np.asarray(x)
    p1, v1, p2, v2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    dp = p2 - p1
    return (0.5 * p.m1 * v1**2 + 0.5 * p.m2 * v2**2 + 0.5 * p.k1 * p1**2
            + 0.5 * p.k2 * dp**2 + 0.25 * p.a2 * dp**4)


def rk4_step(f: Callable, x, u, h: float):
    """Classical RK4 with ``u`` held over the step."""
    k1 = f(x, u)
    k2 = f(x + 0.5 * h * k1, u)
    k3 = f(x + 0.5 * h * k2, u)
    k4 = f(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_vjp(f: Callable, f_vjp: Callable, x, u, h: float, g):
    """Pull ``g = dL/dx_next`` back through one RK4 step; stages are recomputed."""
    k1 = f(x, u)
    s2 = x + 0.5 * h * k1
    k2 = f(s2, u)
    s3 = x + 0.5 * h * k2
    k3 = f(s3, u)
    s4 = x + h * k3
    c = h / 6.0
    gx = g.copy()
    a4 = f_vjp(s4, u, c * g)
    gx += a4
    a3 = f_vjp(s3, u, 2.0 * c * g + h * a4)
    gx += a3
    a2 = f_vjp(s2, u, 2.0 * c * g + 0.5 * h * a3)
    gx += a2
    gx += f_vjp(x, u, c * g + 0.5 * h * a2)
    return gx


class MsdModel(NonlinearBaseline):
    """Sampled MSD: ``substeps`` RK4 steps of length ``ti`` per sample, output ``p2``."""

    nx, nu, ny = 4, 1, 1

    def __init__(self, params: MsdParams, ts: float = 0.1, ti: float = 0.01):
        self.params = params
        self.ts = ts
        self.ti = ti
        sub = ts / ti
        if abs(sub - round(sub)) > 1e-9:
            raise ValueError(f"ts/ti must be an integer, got {sub}")
        self.substeps = int(round(sub))
        self._deriv = lambda x, u: msd_derivative(x, u, self.params)
        self._deriv_vjp = lambda x, u, g: msd_derivative_vjp(x, u, self.params, g)

    def f(self, x, u):
        for _ in range(self.substeps):
            x = rk4_step(self._deriv, x, u, self.ti)
        return x

    def f_vjp(self, x, u, g):
        xs = [x]
        for _ in range(self.substeps - 1):
            xs.append(rk4_step(self._deriv, xs[-1], u, self.ti))
        for xi in reversed(xs):
            g = rk4_step_vjp(self._deriv, self._deriv_vjp, xi, u, self.ti, g)
        return g

    def h(self, x, u):
        return x[..., 2:3]

    def simulate(self, u, x0):
        # scalar loop; same operation order as the batched path, so results match bitwise
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        p = self.params
        k1, k2, c1, c2, a2c, d1, m1, m2 = p.k1, p.k2, p.c1, p.c2, p.a2, p.d1, p.m1, p.m2
        h = self.ti
        hh = 0.5 * h
        c6 = h / 6.0

        def deriv(p1, v1, p2, v2, F):
            dp = p2 - p1
            dv = v2 - v1
            coupling = k2 * dp + c2 * dv
            acc1 = (-k1 * p1 - c1 * v1 - d1 * (v1 * v1 * v1) + coupling + F) / m1
            acc2 = (-coupling - a2c * (dp * dp * dp)) / m2
            return v1, acc1, v2, acc2

        x = [float(v) for v in np.asarray(x0, dtype=np.float64).reshape(4)]
        N = len(u)
        xs = np.empty((N, 4))
        for k in range(N):
            if not all(np.isfinite(x)):
                raise FloatingPointError(f"MSD simulation diverged at step {k}")
            xs[k] = x
            F = float(u[k])
            for _ in range(self.substeps):
                a = deriv(*x, F)
                b = deriv(*[x[i] + hh * a[i] for i in range(4)], F)
                c = deriv(*[x[i] + hh * b[i] for i in range(4)], F)
                d = deriv(*[x[i] + h * c[i] for i in range(4)], F)
                x = [x[i] + c6 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) for i in range(4)]
        return xs[:, 2:3].copy(), xs

    def h_vjp(self, x, u, g):
        out = np.zeros(np.shape(g)[:-1] + (4,))
        out[..., 2] = g[..., 0]
        return out


def simulate_system(p: MsdParams, u, cfg: SimConfig, x0=None):
    """Simulate the sampled MSD; returns clean output ``y`` (N, 1) and state trace ``x`` (N, 4)."""
    model = MsdModel(p, cfg.ts, cfg.ti)
    return model.simulate(u, np.zeros(4) if x0 is None else x0)


def multisine_bins(N: int, n_freq: int, band, ts: float) -> np.ndarray:
    """DFT bin indices (of an ``N``-sample grid) carrying the excitation.

    Bins strictly inside the band (no DC, no Nyquist) are taken with the
    largest uniform stride that still fits ``n_freq`` lines, starting at the
    lowest one, so the lines span the band.
    """
    df = 1.0 / (N * ts)
    lo = max(1, int(np.ceil(band[0] / df - 1e-9)))
    hi = int(np.floor(band[1] / df + 1e-9))
    hi = min(hi, (N - 1) // 2)
    available = hi - lo + 1
    if band[1] > 0.5 / ts + 1e-12:
        raise ValueError(f"band upper edge {band[1]} Hz exceeds Nyquist {0.5 / ts} Hz")
    if n_freq < 1 or n_freq > available:
        raise ValueError(f"n_freq={n_freq} exceeds the {available} bins available in the band")
    stride = available // n_freq
    return lo + stride * np.arange(n_freq)


def multisine(N: int, n_freq: int, band, ts: float, rng: Optional[RngStream], target_rms: float,
              phases=None, k0: int = 0) -> np.ndarray:
    """Random-phase multisine, periodic in ``N`` samples, scaled to RMS ``target_rms``.

    ``k0`` shifts the time origin (negative values prepend samples from the
    periodic extension, e.g. for transient removal).
    """
    bins = multisine_bins(N, n_freq, band, ts)
    if phases is None:
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n_freq)
    phases = np.asarray(phases, dtype=np.float64)
    # every line has equal amplitude A; one period has RMS A * sqrt(n_freq / 2)
    amp = target_rms / np.sqrt(n_freq / 2.0)
    k = np.arange(k0, k0 + N if k0 >= 0 else N)
    omega = 2.0 * np.pi * bins / N
    u = np.zeros(len(k))
    for j in range(0, n_freq, 256):
        sl = slice(j, j + 256)
        u += np.cos(np.outer(k, omega[sl]) + phases[sl]).sum(axis=1)
    return amp * u


def add_noise(y, snr_db: float, rng: RngStream):
    """Add white Gaussian noise with ``sigma_e = rms(y) * 10**(-snr_db/20)``; returns ``(y + e, e)``."""
    y = np.asarray(y, dtype=np.float64)
    sigma = np.sqrt(np.mean(y**2)) * 10.0 ** (-snr_db / 20.0)
    y_noisy = y + sigma * rng.normal(size=y.shape)
    # report the noise as it ended up in the samples, so y_noisy - y == e bitwise
    return y_noisy, y_noisy - y


def make_split(N: int, cfg: SimConfig, p: MsdParams, phase_rng: RngStream, noise_rng: RngStream) -> IoDataset:
    lead = cfg.transient_discard
    u = multisine(N, cfg.n_freq, cfg.band, cfg.ts, phase_rng, cfg.input_rms, k0=-lead)
    y, x = simulate_system(p, u, cfg)
    u, y, x = u[lead:], y[lead:], x[lead:]
    y_noisy, e = add_noise(y, cfg.snr_db, noise_rng)
    return IoDataset(u[:, None], y_noisy, cfg.ts, x_true=x, e_true=e)


SPLITS = ("est", "val", "test")


def make_datasets(cfg: SimConfig, rng: Optional[RngStream] = None, p: Optional[MsdParams] = None) -> dict:
    """Estimation, validation and test sets from independent multisine realisations."""
    rng = RngStream(cfg.seed) if rng is None else rng
    p = MsdParams.system() if p is None else p
    sizes = dict(zip(SPLITS, (cfg.n_est, cfg.n_val, cfg.n_test)))
    return {name: make_split(sizes[name], cfg, p, rng.child(2 * i), rng.child(2 * i + 1))
            for i, name in enumerate(SPLITS)}
