"""Shared types: LTI models, I/O records, stacked windows and seeded RNG streams.

Stacked vectors use descending time order everywhere: block 0 holds the most
recent sample and block ``n`` the oldest.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

RANK_RTOL = 1e-12


def _as_matrix(a, rows: Optional[int] = None, cols: Optional[int] = None) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got shape {m.shape}")
    return m


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LtiSS:
    """Discrete-time LTI model ``x+ = A x + B u (+ K e)``, ``y = C x + D u (+ e)``.

    Supplying ``K`` puts the model in innovation form.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: Optional[np.ndarray] = None
    K: Optional[np.ndarray] = None
    sigma_e: Optional[np.ndarray] = None

    def __post_init__(self):
        A = _as_matrix(self.A)
        nx = A.shape[0]
        if A.shape != (nx, nx):
            raise ValueError(f"A must be square, got {A.shape}")
        B = _as_matrix(self.B, rows=nx)
        C = _as_matrix(self.C, cols=nx)
        nu, ny = B.shape[1], C.shape[0]
        D = np.zeros((ny, nu)) if self.D is None else _as_matrix(self.D, ny, nu)
        object.__setattr__(self, "A", _freeze(A))
        object.__setattr__(self, "B", _freeze(B))
        object.__setattr__(self, "C", _freeze(C))
        object.__setattr__(self, "D", _freeze(D))
        if self.K is not None:
            object.__setattr__(self, "K", _freeze(_as_matrix(self.K, nx, ny)))
        if self.sigma_e is not None:
            S = _as_matrix(self.sigma_e, ny, ny)
            if not np.allclose(S, S.T, atol=1e-12):
                raise ValueError("sigma_e must be symmetric")
            if np.linalg.eigvalsh(S).min() < -1e-12 * max(1.0, np.abs(S).max()):
                raise ValueError("sigma_e must be positive semidefinite")
            object.__setattr__(self, "sigma_e", _freeze(S))

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def ny(self) -> int:
        return self.C.shape[0]

    @property
    def innovation(self) -> bool:
        return self.K is not None

    def without_noise(self) -> "LtiSS":
        return LtiSS(self.A, self.B, self.C, self.D)

    def simulate(self, u, x0=None, e=None):
        """Simulate from ``x0``; returns ``(y, x)`` with ``x[k]`` the state at sample ``k``.

        ``e`` (innovation sequence) is only used when ``K`` is set, but is
        always added to the output.
        """
        u = np.asarray(u, dtype=np.float64).reshape(len(u), self.nu)
        N = len(u)
        x = np.zeros(self.nx) if x0 is None else np.asarray(x0, dtype=np.float64)
        e = np.zeros((N, self.ny)) if e is None else np.asarray(e, dtype=np.float64).reshape(N, self.ny)
        xs = np.empty((N, self.nx))
        ys = np.empty((N, self.ny))
        for k in range(N):
            xs[k] = x
            ys[k] = self.C @ x + self.D @ u[k] + e[k]
            x = self.A @ x + self.B @ u[k]
            if self.K is not None:
                x = x + self.K @ e[k]
        return ys, xs


@dataclass(frozen=True)
class IoDataset:
    """Sampled input/output record, optionally with true state and noise traces."""

    u: np.ndarray
    y: np.ndarray
    ts: float
    x_true: Optional[np.ndarray] = None
    e_true: Optional[np.ndarray] = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        u = u.reshape(len(u), -1)
        y = y.reshape(len(y), -1)
        if len(u) != len(y) or len(u) < 1:
            raise ValueError(f"u and y must have equal length >= 1, got {len(u)} and {len(y)}")
        object.__setattr__(self, "u", _freeze(u))
        object.__setattr__(self, "y", _freeze(y))
        for name in ("x_true", "e_true"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                v = v.reshape(len(v), -1)
                if len(v) != len(u):
                    raise ValueError(f"{name} has length {len(v)}, expected {len(u)}")
                object.__setattr__(self, name, _freeze(v))

    def __len__(self) -> int:
        return len(self.u)

    @property
    def nu(self) -> int:
        return self.u.shape[1]

    @property
    def ny(self) -> int:
        return self.y.shape[1]

    def to_csv(self, path) -> None:
        """Write one row per sample: ``k,u_*,y_*[,x_*][,e_*]`` with 17 significant digits."""
        cols = [("u", self.u), ("y", self.y)]
        if self.x_true is not None:
            cols.append(("x", self.x_true))
        if self.e_true is not None:
            cols.append(("e", self.e_true))
        header = ["k"] + [f"{p}_{i}" for p, a in cols for i in range(a.shape[1])]
        data = np.hstack([a for _, a in cols])
        with open(path, "w", newline="") as fh:
            fh.write(f"# ts={self.ts!r}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for k, row in enumerate(data):
                w.writerow([k] + [format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path) -> "IoDataset":
        with open(path, newline="") as fh:
            first = fh.readline()
            if not first.startswith("# ts="):
                raise ValueError(f"{path}: missing '# ts=' header line")
            ts = float(first.split("=", 1)[1])
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
        groups: dict[str, list[int]] = {}
        for j, name in enumerate(header[1:], start=1):
            groups.setdefault(name.split("_")[0], []).append(j)
        pick = {p: body[:, idx] for p, idx in groups.items()}
        return cls(pick["u"], pick["y"], ts, pick.get("x"), pick.get("e"))


@dataclass(frozen=True)
class StackedWindow:
    """Descending-time stacks ``[y_k; y_{k-1}; ...; y_{k-n}]`` and likewise for ``u``."""

    y_stack: np.ndarray
    u_stack: np.ndarray
    n: int

    def y_block(self, j: int) -> np.ndarray:
        ny = len(self.y_stack) // (self.n + 1)
        return self.y_stack[j * ny:(j + 1) * ny]

    def u_block(self, j: int) -> np.ndarray:
        nu = len(self.u_stack) // (self.n + 1)
        return self.u_stack[j * nu:(j + 1) * nu]


def stack_desc(seq: np.ndarray, k: int, count: int) -> np.ndarray:
    """Flatten ``seq[k], seq[k-1], ..., seq[k-count+1]`` into one vector."""
    return seq[k - count + 1:k + 1][::-1].reshape(-1)


def lag_matrix(seq: np.ndarray, ends: np.ndarray, count: int) -> np.ndarray:
    """Row ``i`` is ``stack_desc(seq, ends[i], count)``; vectorised over window ends."""
    ends = np.asarray(ends)
    idx = ends[:, None] - np.arange(count)[None, :]
    return seq[idx].reshape(len(ends), -1)


def make_window(data: IoDataset, k: int, n: int) -> StackedWindow:
    N = len(data)
    if n < 0:
        raise IndexError(f"window length n={n} must be >= 0")
    if k >= N:
        raise IndexError(f"k={k} exceeds last sample index {N - 1}")
    if k - n < 0:
        raise IndexError(f"window start k-n={k - n} is before sample 0 (need k >= n)")
    return StackedWindow(stack_desc(data.y, k, n + 1), stack_desc(data.u, k, n + 1), n)


def numerical_rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > max(M.shape) * s[0] * RANK_RTOL))


def observability_matrix(A: np.ndarray, C: np.ndarray, n: int) -> np.ndarray:
    """Rows ``[C A^n; C A^{n-1}; ...; C]``."""
    blocks = [C]
    for _ in range(n):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks[::-1])


def observability_rank(ss: LtiSS, n: int) -> int:
    return numerical_rank(observability_matrix(ss.A, ss.C, n))


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream_id),))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, stream_id: int) -> "RngStream":
        """Independent stream derived from this seed (sub-id appended)."""
        return RngStream(self.seed, self.stream_id * 1_000_003 + stream_id + 1)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)
