"""Model-based reconstructability maps for LTI baselines.

For a window ending at ``k`` (descending time, ``n + 1`` samples) the maps
give the state estimate

    x_k ~= W_y @ [y_k; ...; y_{k-n}] + W_u @ [u_k; ...; u_{k-n}].

The noiseless maps come from ``y = O_n x_{k-n} + T_n u`` and
``x_k = A^n x_{k-n} + r_n u``.  With an innovation-form model the same
construction is carried out on ``A - K C`` and ``B - K D`` and the measured
outputs re-enter through ``Lambda_n`` and ``lambda_n``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import LtiSS, StackedWindow, numerical_rank, observability_matrix


class UnobservableError(np.linalg.LinAlgError):
    """The stacked observability matrix has no left inverse."""

    def __init__(self, rank: int, nx: int):
        super().__init__(f"observability matrix has rank {rank}, need {nx}")
        self.rank = rank
        self.nx = nx


@dataclass(frozen=True)
class StackedOperators:
    n: int
    O_n: np.ndarray
    T_n: np.ndarray
    r_n: np.ndarray
    A_pow_n: np.ndarray
    Lambda_n: Optional[np.ndarray] = None
    lambda_n: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ReconstructabilityMaps:
    W_y: np.ndarray
    W_u: np.ndarray
    n: int
    noisy: bool = False
    warning: Optional[str] = None

    @property
    def nx(self) -> int:
        return self.W_y.shape[0]

    def to_csv(self, path) -> None:
        """Row-major dump; header carries dimensions and window length."""
        nx, cy = self.W_y.shape
        cu = self.W_u.shape[1]
        with open(path, "w") as fh:
            fh.write(f"# nx={nx} ny_cols={cy} nu_cols={cu} n={self.n} noisy={int(self.noisy)}\n")
            fh.write("matrix,row,col,value\n")
            for name, M in (("W_y", self.W_y), ("W_u", self.W_u)):
                for i in range(M.shape[0]):
                    for j in range(M.shape[1]):
                        fh.write(f"{name},{i},{j},{M[i, j]:.17g}\n")

    @classmethod
    def from_csv(cls, path) -> "ReconstructabilityMaps":
        with open(path) as fh:
            meta = dict(kv.split("=") for kv in fh.readline()[1:].split())
            fh.readline()
            nx = int(meta["nx"])
            mats = {"W_y": np.zeros((nx, int(meta["ny_cols"]))), "W_u": np.zeros((nx, int(meta["nu_cols"])))}
            for line in fh:
                name, i, j, v = line.strip().split(",")
                mats[name][int(i), int(j)] = float(v)
        return cls(mats["W_y"], mats["W_u"], int(meta["n"]), bool(int(meta["noisy"])))


def _toeplitz_upper(first: np.ndarray, markov: list, n: int) -> np.ndarray:
    """Block upper-triangular Toeplitz: diagonal ``first``, block (i, j>i) = ``markov[j-i-1]``."""
    p, q = first.shape
    M = np.zeros(((n + 1) * p, (n + 1) * q))
    for i in range(n + 1):
        M[i * p:(i + 1) * p, i * q:(i + 1) * q] = first
        for j in range(i + 1, n + 1):
            M[i * p:(i + 1) * p, j * q:(j + 1) * q] = markov[j - i - 1]
    return M


def build_stacked(ss: LtiSS, n: int) -> StackedOperators:
    """Stacked operators for window length ``n``; uses ``A - KC``, ``B - KD`` if ``K`` is set."""
    if n < 0:
        raise ValueError(f"window length n={n} must be >= 0")
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    if ss.K is not None:
        A = A - ss.K @ C
        B = B - ss.K @ D
    pows = [np.eye(ss.nx)]
    for _ in range(n):
        pows.append(pows[-1] @ A)
    O_n = observability_matrix(A, C, n)
    T_n = _toeplitz_upper(D, [C @ pows[i] @ B for i in range(n)], n)
    r_n = np.hstack([np.zeros_like(B)] + [pows[i] @ B for i in range(n)])
    Lam = lam = None
    if ss.K is not None:
        K = ss.K
        Lam = _toeplitz_upper(np.zeros((ss.ny, ss.ny)), [C @ pows[i] @ K for i in range(n)], n)
        lam = np.hstack([np.zeros_like(K)] + [pows[i] @ K for i in range(n)])
    return StackedOperators(n=n, O_n=O_n, T_n=T_n, r_n=r_n, A_pow_n=pows[n], Lambda_n=Lam, lambda_n=lam)


def left_inverse(O: np.ndarray, nx: Optional[int] = None) -> np.ndarray:
    """Moore-Penrose left inverse; raises :class:`UnobservableError` on rank deficiency."""
    O = np.atleast_2d(np.asarray(O, dtype=np.float64))
    nx = O.shape[1] if nx is None else nx
    rank = numerical_rank(O)
    if rank < nx:
        raise UnobservableError(rank, nx)
    return np.linalg.pinv(O)


def _stability_warning(A: np.ndarray) -> Optional[str]:
    rho = np.max(np.abs(np.linalg.eigvals(A))) if A.size else 0.0
    if rho >= 1.0:
        msg = f"reconstruction error term grows: spectral radius {rho:.4g} >= 1"
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return msg
    return None


def noiseless_maps(ss: LtiSS, n: int) -> ReconstructabilityMaps:
    """``W_y = A^n O_n^+``, ``W_u = r_n - A^n O_n^+ T_n`` (any ``K`` on ``ss`` is ignored)."""
    ops = build_stacked(ss.without_noise(), n)
    G = ops.A_pow_n @ left_inverse(ops.O_n, ss.nx)
    return ReconstructabilityMaps(W_y=G, W_u=ops.r_n - G @ ops.T_n, n=n, noisy=False,
                                  warning=_stability_warning(ss.A))


def noisy_maps(ss: LtiSS, n: int) -> ReconstructabilityMaps:
    """Conditional-mean maps for an innovation-form model (``ss.K`` required)."""
    if ss.K is None:
        raise ValueError("noisy_maps needs an innovation-form model (K is None)")
    ops = build_stacked(ss, n)
    G = ops.A_pow_n @ left_inverse(ops.O_n, ss.nx)
    I = np.eye(ops.Lambda_n.shape[0])
    W_y = G @ (I - ops.Lambda_n) + ops.lambda_n
    W_u = ops.r_n - G @ ops.T_n
    return ReconstructabilityMaps(W_y=W_y, W_u=W_u, n=n, noisy=True,
                                  warning=_stability_warning(ss.A - ss.K @ ss.C))


def error_gain(ss: LtiSS, n: int) -> np.ndarray:
    """``Ã^n Õ_n^+``: maps the stacked innovations to the noisy-map estimation error."""
    ops = build_stacked(ss, n)
    return ops.A_pow_n @ left_inverse(ops.O_n, ss.nx)


def reconstruct(maps: ReconstructabilityMaps, w: StackedWindow) -> np.ndarray:
    if w.n != maps.n:
        raise ValueError(f"window length {w.n} does not match maps built for n={maps.n}")
    if len(w.y_stack) != maps.W_y.shape[1] or len(w.u_stack) != maps.W_u.shape[1]:
        raise ValueError(
            f"window sizes ({len(w.y_stack)}, {len(w.u_stack)}) do not match maps "
            f"({maps.W_y.shape[1]}, {maps.W_u.shape[1]})")
    return maps.W_y @ w.y_stack + maps.W_u @ w.u_stack


def shift_to_past_window(maps: ReconstructabilityMaps, ss: LtiSS) -> ReconstructabilityMaps:
    """Re-target maps so the window ending at ``k-1`` estimates ``x_k``.

    Composes one model step onto the estimate of ``x_{k-1}``; block 0 of the
    window (the newest sample, ``u_{k-1}``/``y_{k-1}``) absorbs the direct terms.
    """
    A, B = ss.A, ss.B
    W_y = A @ maps.W_y
    W_u = A @ maps.W_u
    if maps.noisy:
        if ss.K is None:
            raise ValueError("noisy maps need the innovation-form model to be shifted")
        At = ss.A - ss.K @ ss.C
        W_y = At @ maps.W_y
        W_u = At @ maps.W_u
        W_y[:, :ss.ny] += ss.K
        B = ss.B - ss.K @ ss.D
    W_u[:, :ss.nu] += B
    return ReconstructabilityMaps(W_y=W_y, W_u=W_u, n=maps.n, noisy=maps.noisy, warning=maps.warning)
