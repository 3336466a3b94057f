"""Levy-Ciesielski parametrization of Brownian paths.

Basis index ``n = 1`` is the linear function ``t``; index ``n = 2**(l-1) + j``
(``l >= 1``, ``1 <= j <= 2**(l-1)``) is a hat supported on
``[(j-1)/2**(l-1), j/2**(l-1)]`` peaking at ``2**(-(l+1)/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import write_rows_csv

__all__ = [
    "BrownianPath",
    "level_of",
    "faber_schauder",
    "faber_schauder_matrix",
    "brownian_eval",
    "check_gamma_membership",
    "sample_parameters",
    "write_parameters_csv",
    "read_parameters_csv",
]


def level_of(n: int) -> int:
    """Level ``l`` of basis index ``n`` (``n = 1`` is level 0)."""
    if n < 1:
        raise ValueError(f"basis index must be >= 1, got {n}")
    return int(n - 1).bit_length()


def faber_schauder(n: int, t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    return float(faber_schauder_matrix(n, np.array([t]))[-1, 0])


def faber_schauder_matrix(s: int, t: np.ndarray) -> np.ndarray:
    """Values of the first ``s`` basis functions at times ``t`` in [0,1], shape (s, len(t))."""
    if s < 1:
        raise ValueError(f"need at least one basis function, got s={s}")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((s, t.size))
    out[0] = t
    for n in range(2, s + 1):
        lev = level_of(n)
        width = 2.0 ** (1 - lev)
        j = n - 2 ** (lev - 1)
        left = (j - 1) * width
        peak = 2.0 ** (-(lev + 1) / 2)
        hat = 1.0 - np.abs((t - left) / (0.5 * width) - 1.0)
        out[n - 1] = peak * np.clip(hat, 0.0, None)
    return out


@dataclass(frozen=True)
class BrownianPath:
    y: np.ndarray
    T: float

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if y.ndim != 1 or y.size < 1 or not np.all(np.isfinite(y)):
            raise ValueError("parameter vector must be a nonempty finite 1d array")
        if self.T <= 0:
            raise ValueError("final time must be positive")
        object.__setattr__(self, "y", y)

    def __call__(self, t):
        return brownian_eval(self, t)


def brownian_eval(path: BrownianPath, t):
    """``W(y, t) = sqrt(T) * sum_n y_n eta_n(t / T)``; vectorized over ``t``."""
    tt = np.asarray(t, dtype=float)
    eps = 1e-12 * path.T
    if np.any(tt < -eps) or np.any(tt > path.T + eps):
        raise ValueError(f"time outside [0, {path.T}]")
    u = np.clip(np.atleast_1d(tt) / path.T, 0.0, 1.0)
    w = np.sqrt(path.T) * (path.y @ faber_schauder_matrix(path.y.size, u))
    return float(w[0]) if tt.ndim == 0 else w


def check_gamma_membership(y, delta: float = 0.0) -> float:
    """Partial sum of the level-wise Hoelder summability series for ``y``."""
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    y = np.abs(np.asarray(y, dtype=float).ravel())
    total, lev = 0.0, 0
    while True:
        start = int(np.floor(2.0 ** (lev - 1)))  # indices start+1 .. start+ceil(2**(l-1))
        if start >= y.size:
            break
        count = int(np.ceil(2.0 ** (lev - 1)))
        total += y[start : start + count].max() * 2.0 ** (-(1 - delta) * lev / 2)
        lev += 1
    return total


def sample_parameters(s: int, count: int, seed) -> np.ndarray:
    """``count`` i.i.d. standard normal vectors of length ``s``, one per row.

    Drawn with numpy's PCG64 generator, so the stream is fixed by ``seed``
    (an integer or a ``SeedSequence``).
    """
    if s < 1 or count < 1:
        raise ValueError("s and count must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal((count, s))


def write_parameters_csv(path, ys: np.ndarray) -> None:
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    write_rows_csv(path, [f"y{i + 1}" for i in range(ys.shape[1])], ys.tolist())


def read_parameters_csv(path) -> np.ndarray:
    return np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
