"""Baseline model interface used by linearisation, encoder init and the augmented model.

Arrays are row-batched: ``x`` has shape ``(..., nx)`` and ``u`` shape ``(..., nu)``.
The ``*_vjp`` methods return vector-Jacobian products with respect to the
state, which is all the rollout gradients need.
"""
from __future__ import annotations

import numpy as np

from .core import LtiSS


class NonlinearBaseline:
    nx: int
    nu: int
    ny: int

    def f(self, x, u):
        raise NotImplementedError

    def h(self, x, u):
        raise NotImplementedError

    def f_vjp(self, x, u, g):
        raise NotImplementedError(f"{type(self).__name__} provides no state VJP for f")

    def h_vjp(self, x, u, g):
        raise NotImplementedError(f"{type(self).__name__} provides no state VJP for h")

    def jacobians(self, x, u):
        """Analytic ``(df/dx, df/du, dh/dx, dh/du)`` or ``None`` to fall back to finite differences."""
        return None

    def simulate(self, u, x0):
        """Open-loop run on an input sequence; returns ``(y, x)`` with ``x[k]`` the state at ``k``."""
        u = np.asarray(u, dtype=np.float64).reshape(len(u), self.nu)
        x = np.asarray(x0, dtype=np.float64).copy()
        xs = np.empty((len(u), self.nx))
        ys = np.empty((len(u), self.ny))
        for k in range(len(u)):
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"baseline simulation diverged at step {k}")
            xs[k] = x
            ys[k] = self.h(x, u[k])
            x = self.f(x, u[k])
        return ys, xs


class LtiBaseline(NonlinearBaseline):
    """Wraps an :class:`LtiSS` (noise terms ignored) as a baseline."""

    def __init__(self, ss: LtiSS):
        self.ss = ss
        self.nx, self.nu, self.ny = ss.nx, ss.nu, ss.ny

    def f(self, x, u):
        return x @ self.ss.A.T + u @ self.ss.B.T

    def h(self, x, u):
        return x @ self.ss.C.T + u @ self.ss.D.T

    def f_vjp(self, x, u, g):
        return g @ self.ss.A

    def h_vjp(self, x, u, g):
        return g @ self.ss.C

    def jacobians(self, x, u):
        return self.ss.A, self.ss.B, self.ss.C, self.ss.D


class FunctionBaseline(NonlinearBaseline):
    """Baseline from plain callables; VJPs optional."""

    def __init__(self, f, h, nx, nu, ny, f_vjp=None, h_vjp=None):
        self._f, self._h, self._fv, self._hv = f, h, f_vjp, h_vjp
        self.nx, self.nu, self.ny = nx, nu, ny

    def f(self, x, u):
        return self._f(x, u)

    def h(self, x, u):
        return self._h(x, u)

    def f_vjp(self, x, u, g):
        if self._fv is None:
            return super().f_vjp(x, u, g)
        return self._fv(x, u, g)

    def h_vjp(self, x, u, g):
        if self._hv is None:
            return super().h_vjp(x, u, g)
        return self._hv(x, u, g)
