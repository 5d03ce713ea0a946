"""Equilibria, Jacobian linearisation and linearisation-based reconstructability maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .baseline import NonlinearBaseline
from .core import LtiSS
from .lti import ReconstructabilityMaps, noiseless_maps, noisy_maps

EQ_TOL = 1e-10


class EquilibriumError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"equilibrium search did not converge after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class EquilibriumPoint:
    x_star: np.ndarray
    u_star: np.ndarray
    y_star: np.ndarray


@dataclass(frozen=True)
class LinearizedModel:
    lti: LtiSS
    eq: EquilibriumPoint


def fd_step(v: np.ndarray) -> np.ndarray:
    return np.maximum(1e-6, 1e-6 * np.abs(v))


def fd_jacobian(fun, v: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``v``."""
    v = np.asarray(v, dtype=np.float64)
    f0 = np.atleast_1d(fun(v))
    J = np.empty((f0.size, v.size))
    steps = fd_step(v)
    for i, hi in enumerate(steps):
        dv = np.zeros_like(v)
        dv[i] = hi
        J[:, i] = (np.atleast_1d(fun(v + dv)) - np.atleast_1d(fun(v - dv))) / (2.0 * hi)
    return J


def find_equilibrium(model: NonlinearBaseline, u_star, x_guess, tol: float = EQ_TOL,
                     max_iter: int = 100) -> EquilibriumPoint:
    """Damped Newton on ``g(x) = f(x, u*) - x`` with a finite-difference Jacobian."""
    u_star = np.atleast_1d(np.asarray(u_star, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x_guess, dtype=np.float64)).copy()

    def g(z):
        return np.asarray(model.f(z, u_star), dtype=np.float64) - z

    r = g(x)
    res = np.linalg.norm(r)
    for it in range(max_iter):
        if res <= tol:
            break
        J = fd_jacobian(g, x)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        for _ in range(20):
            x_try = x + t * step
            r_try = g(x_try)
            if np.all(np.isfinite(r_try)) and np.linalg.norm(r_try) < res:
                break
            t *= 0.5
        else:
            raise EquilibriumError(res, it + 1)
        x, r = x_try, r_try
        res = np.linalg.norm(r)
    if res > tol:
        raise EquilibriumError(res, max_iter)
    y_star = np.atleast_1d(np.asarray(model.h(x, u_star), dtype=np.float64))
    return EquilibriumPoint(x, u_star, y_star)


def jacobians(model: NonlinearBaseline, eq: EquilibriumPoint) -> LinearizedModel:
    """``A*, B*`` from ``f`` and ``C*, D*`` from ``h`` at the equilibrium."""
    analytic = model.jacobians(eq.x_star, eq.u_star)
    if analytic is not None:
        A, B, C, D = analytic
    else:
        x, u = eq.x_star, eq.u_star
        A = fd_jacobian(lambda z: model.f(z, u), x)
        B = fd_jacobian(lambda v: model.f(x, v), u)
        C = fd_jacobian(lambda z: model.h(z, u), x)
        D = fd_jacobian(lambda v: model.h(x, v), u)
    return LinearizedModel(LtiSS(A, B, C, D), eq)


def linearize(model: NonlinearBaseline, u_star=None, x_guess=None) -> LinearizedModel:
    u_star = np.zeros(model.nu) if u_star is None else u_star
    x_guess = np.zeros(model.nx) if x_guess is None else x_guess
    return jacobians(model, find_equilibrium(model, u_star, x_guess))


def init_from_linearization(model: NonlinearBaseline, eq: EquilibriumPoint, n: int,
                            K: Optional[np.ndarray] = None):
    """Maps acting on deviation windows ``(y - y*, u - u*)`` and the bias ``x*``.

    The state estimate is ``maps(window - offsets) + x*``; see
    :func:`offset_bias` for the equivalent bias on raw windows.
    """
    lin = jacobians(model, eq)
    ss = lin.lti if K is None else LtiSS(lin.lti.A, lin.lti.B, lin.lti.C, lin.lti.D, K=K)
    maps = noiseless_maps(ss, n) if K is None else noisy_maps(ss, n)
    return maps, eq.x_star.copy()


def offset_bias(maps: ReconstructabilityMaps, eq: EquilibriumPoint) -> np.ndarray:
    """Bias that lets the maps act on raw windows: ``x* - W_y stack(y*) - W_u stack(u*)``."""
    y_rep = np.tile(eq.y_star, maps.W_y.shape[1] // eq.y_star.size)
    u_rep = np.tile(eq.u_star, maps.W_u.shape[1] // eq.u_star.size)
    return eq.x_star - maps.W_y @ y_rep - maps.W_u @ u_rep
