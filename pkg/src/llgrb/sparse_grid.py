"""Sparse grid interpolation on Gaussian parameters (nested inverse-erf nodes, combination technique)."""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erfinv

from . import io

__all__ = [
    "IndexSetOverflow",
    "n_nodes_1d",
    "node_position",
    "nodes_1d",
    "interp_weights_1d",
    "interp_1d",
    "profit",
    "MultiIndexSet",
    "build_index_set",
    "SparseGridOp",
    "interpolate",
]

DEFAULT_CAP = 200_000


class IndexSetOverflow(RuntimeError):
    """The requested index set exceeds the cardinality cap."""


def n_nodes_1d(nu: int) -> int:
    if nu < 0:
        raise ValueError("level must be nonnegative")
    return 1 if nu == 0 else 2 ** (nu + 1) - 1


def _ticks(nu: int) -> list[Fraction]:
    # nodes of level nu sit at phi(t) with t = i / 2^nu - 1, i = 1 .. 2^(nu+1) - 1
    if nu == 0:
        return [Fraction(0)]
    d = 2**nu
    return [Fraction(i, d) - 1 for i in range(1, 2 * d)]


def node_position(t) -> float:
    """``2 sqrt(2) erfinv(t)``: maps uniform ticks in (-1, 1) to the real line."""
    return float(2.0 * math.sqrt(2.0) * erfinv(float(t)))


@lru_cache(maxsize=None)
def nodes_1d(nu: int) -> tuple:
    """Sorted nodes of level ``nu`` (``m(nu)`` of them, nested in ``nu``)."""
    return tuple(node_position(t) for t in _ticks(nu))


@lru_cache(maxsize=None)
def _groups(nu: int, p: int):
    """Start indices of the polynomial spans and the breakpoints between them."""
    m = n_nodes_1d(nu)
    if p < 1:
        raise ValueError("degree must be at least 1")
    if p + 1 > m:
        raise ValueError(f"degree {p} needs {p + 1} nodes per span, level {nu} has {m}")
    starts = list(range(0, m - p, p))
    if starts[-1] + p < m - 1:
        starts.append(m - 1 - p)
    x = nodes_1d(nu)
    breaks = np.array([x[starts[k - 1] + p] for k in range(1, len(starts))])
    return np.array(starts), breaks


def interp_weights_1d(nu: int, p: int, x) -> np.ndarray:
    """Matrix ``(len(x), m(nu))`` such that ``W @ samples`` is the level-``nu`` interpolant at ``x``.

    Level 0 is the constant through the single node; higher levels are piecewise
    Lagrange polynomials of degree ``p`` on consecutive spans of ``p + 1`` nodes,
    and outside the node range the boundary polynomial is extended.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = n_nodes_1d(nu)
    if nu == 0:
        return np.ones((len(x), 1))
    starts, breaks = _groups(nu, p)
    nodes = np.asarray(nodes_1d(nu))
    g = np.searchsorted(breaks, x, side="right")
    W = np.zeros((len(x), m))
    rows = np.arange(len(x))
    for j in range(p + 1):
        idx = starts[g] + j
        w = np.ones(len(x))
        for k in range(p + 1):
            if k != j:
                xk = nodes[starts[g] + k]
                w *= (x - xk) / (nodes[idx] - xk)
        W[rows, idx] = w
    return W


def interp_1d(nu: int, values, p: int, x):
    values = np.asarray(values, dtype=float)
    if values.shape[0] != n_nodes_1d(nu):
        raise ValueError(f"level {nu} needs {n_nodes_1d(nu)} samples, got {values.shape[0]}")
    out = interp_weights_1d(nu, p, x) @ values
    return out[0] if np.ndim(x) == 0 else out


def _factor(i: int, k: int, p: int) -> float:
    # per-coordinate factor of the profit; i is the 1-based coordinate
    if k == 0:
        return 1.0
    c = math.ceil(math.log2(i)) if i > 1 else 0
    head = 2.0 ** (-1.5 * c) if k == 1 else 2.0 ** (-(k + 0.5 * c) * p)
    return head / (p * 2.0**k)


def profit(nu: Sequence[int], p: int = 1) -> float:
    """Profit of a multi-index; coordinates are numbered from 1."""
    if p < 1:
        raise ValueError("degree must be at least 1")
    out = 1.0
    for i, k in enumerate(nu, start=1):
        if k < 0:
            raise ValueError("multi-index entries must be nonnegative")
        out *= _factor(i, int(k), p)
    return out


def _closed_factor(i: int, k: int, p: int) -> float:
    return min(_factor(i, j, p) for j in range(k + 1))


@dataclass(frozen=True)
class MultiIndexSet:
    """Finite set of multi-indices of length ``s``, stored sparsely as ``((dim, level), ...)``."""

    s: int
    sparse: frozenset

    @classmethod
    def from_dense(cls, indices: Iterable[Sequence[int]], s: int | None = None) -> "MultiIndexSet":
        idx = [tuple(int(v) for v in nu) for nu in indices]
        s = s if s is not None else (len(idx[0]) if idx else 0)
        if any(len(nu) != s for nu in idx):
            raise ValueError("all multi-indices must have length s")
        return cls(s, frozenset(tuple((d, v) for d, v in enumerate(nu) if v) for nu in idx))

    def dense(self) -> list[tuple]:
        out = []
        for key in self.sparse:
            nu = [0] * self.s
            for d, v in key:
                nu[d] = v
            out.append(tuple(nu))
        return sorted(out)

    def __len__(self) -> int:
        return len(self.sparse)

    def __contains__(self, nu) -> bool:
        return tuple((d, v) for d, v in enumerate(nu) if v) in self.sparse

    def is_downward_closed(self) -> bool:
        for key in self.sparse:
            for j, (d, v) in enumerate(key):
                lower = key[:j] + ((d, v - 1),) + key[j + 1 :] if v > 1 else key[:j] + key[j + 1 :]
                if lower not in self.sparse:
                    return False
        return True

    @property
    def active_dimensions(self) -> int:
        return len({d for key in self.sparse for d, _ in key})

    def save(self, path) -> None:
        io.write_rows_csv(path, [f"nu{d + 1}" for d in range(self.s)], self.dense())

    @classmethod
    def load(cls, path, s: int) -> "MultiIndexSet":
        rows = io.read_rows_csv(path)
        return cls.from_dense([[int(r[f"nu{d + 1}"]) for d in range(s)] for r in rows], s)


def build_index_set(s: int, eps: float, p: int = 1, cap: int = DEFAULT_CAP) -> MultiIndexSet:
    """Largest downward-closed set of multi-indices with profit above ``eps``.

    The zero index is always included. Per coordinate the profit is replaced by
    its running minimum over lower levels, which makes the thresholded set
    downward-closed; where the raw profit is already monotone this is the plain
    threshold set.
    """
    if s < 1:
        raise ValueError("dimension must be positive")
    if eps <= 0:
        raise ValueError("threshold must be positive")
    if p < 1:
        raise ValueError("degree must be at least 1")
    root: tuple = ()
    seen = {root: 1.0}
    queue = deque([root])
    while queue:
        key = queue.popleft()
        val = seen[key]
        levels = dict(key)
        for d in range(s):
            k = levels.get(d, 0)
            new_val = val * _closed_factor(d + 1, k + 1, p) / _closed_factor(d + 1, k, p)
            if new_val <= eps:
                continue
            new_key = tuple(sorted({**levels, d: k + 1}.items()))
            if new_key in seen:
                continue
            seen[new_key] = new_val
            if len(seen) > cap:
                raise IndexSetOverflow(f"index set exceeds {cap} multi-indices at eps={eps}")
            queue.append(new_key)
    return MultiIndexSet(s, frozenset(seen))


def _combination_coefficients(iset: MultiIndexSet) -> dict:
    """``c_nu = sum over e in {0,1}^s with nu + e in the set of (-1)^|e|``."""
    members = iset.sparse
    coeffs = {}
    for key in members:
        levels = dict(key)

        def bump(dims):
            lv = dict(levels)
            for d in dims:
                lv[d] = lv.get(d, 0) + 1
            return tuple(sorted(lv.items()))

        cands = [d for d in range(iset.s) if bump((d,)) in members]
        total = 0
        # depth-first over subsets; downward closedness lets a failed subset prune all supersets
        stack = [((), 0)]
        while stack:
            dims, start = stack.pop()
            total += (-1) ** len(dims)
            for j in range(start, len(cands)):
                nd = dims + (cands[j],)
                if len(nd) == 1 or bump(nd) in members:
                    stack.append((nd, j + 1))
        if total:
            coeffs[key] = total
    return coeffs


@dataclass
class SparseGridOp:
    """Sparse grid interpolation operator for an index set and 1D degree ``p``."""

    index_set: MultiIndexSet
    p: int = 1

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("degree must be at least 1")
        if () not in self.index_set.sparse:
            raise ValueError("index set must contain the zero multi-index")
        if not self.index_set.is_downward_closed():
            raise ValueError("index set must be downward-closed")
        for key in self.index_set.sparse:
            for _, v in key:
                _groups(v, self.p)  # rejects degree/level combinations without a full span

    @property
    def s(self) -> int:
        return self.index_set.s

    @cached_property
    def _structure(self):
        node_ids: dict = {}
        terms = []
        coeffs = _combination_coefficients(self.index_set)
        for key in sorted(self.index_set.sparse, key=lambda k: (sum(v for _, v in k), k)):
            dims = [d for d, _ in key]
            levels = [v for _, v in key]
            ticks = [_ticks(v) for v in levels]
            ids = []
            for combo in itertools.product(*ticks):
                nk = tuple((d, t) for d, t in zip(dims, combo) if t != 0)
                if nk not in node_ids:
                    node_ids[nk] = len(node_ids)
                ids.append(node_ids[nk])
            if key in coeffs:
                shape = [len(t) for t in ticks]
                terms.append((coeffs[key], dims, levels, np.array(ids, dtype=np.int64).reshape(shape)))
        return node_ids, terms

    @property
    def node_keys(self) -> list:
        """Sparse node keys ``((dim, tick), ...)`` in index order."""
        return list(self._structure[0])

    @property
    def n_nodes(self) -> int:
        return len(self._structure[0])

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates as an ``(n_nodes, s)`` array."""
        out = np.zeros((self.n_nodes, self.s))
        for j, key in enumerate(self.node_keys):
            for d, t in key:
                out[j, d] = node_position(t)
        return out

    @property
    def combination_coefficients(self) -> dict:
        return {key: c for key, c in _combination_coefficients(self.index_set).items()}

    def lagrange_weights(self, y) -> np.ndarray:
        """Values of the interpolation basis functions ``L_node(y)`` for all nodes."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.s,):
            raise ValueError(f"query must have shape ({self.s},), got {y.shape}")
        _, terms = self._structure
        w = np.zeros(self.n_nodes)
        for c, dims, levels, ids in terms:
            if not dims:
                w[ids] += c
                continue
            t = np.ones(())
            for d, v in zip(dims, levels):
                t = np.multiply.outer(t, interp_weights_1d(v, self.p, y[d])[0])
            np.add.at(w, ids.ravel(), c * t.ravel())
        return w

    def interpolate(self, values: np.ndarray, y) -> np.ndarray:
        """Interpolant at ``y`` of node values ``values`` (first axis indexes nodes)."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_nodes:
            raise ValueError(f"expected {self.n_nodes} node values, got {values.shape[0]}")
        return np.tensordot(self.lagrange_weights(y), values, axes=(0, 0))

    def save(self, directory) -> None:
        d = Path(directory)
        self.index_set.save(d / "multi_indices.csv")
        io.write_rows_csv(
            d / "nodes.csv",
            ["node"] + [f"y{k + 1}" for k in range(self.s)],
            [[j] + list(row) for j, row in enumerate(self.nodes)],
        )
        io.write_json(d / "grid.json", {"s": self.s, "p": self.p, "n_nodes": self.n_nodes})

    @classmethod
    def load(cls, directory) -> "SparseGridOp":
        d = Path(directory)
        meta = io.read_json(d / "grid.json")
        return cls(MultiIndexSet.load(d / "multi_indices.csv", meta["s"]), meta["p"])


def interpolate(op: SparseGridOp, samples: Mapping, y_query) -> np.ndarray:
    """Interpolate samples given as ``{node_coordinates_tuple or node_key: value}``."""
    keys = op.node_keys
    vals = []
    for j, key in enumerate(keys):
        if key in samples:
            vals.append(samples[key])
            continue
        coord = tuple(op.nodes[j])
        if coord not in samples:
            raise KeyError(f"no sample for sparse grid node {coord}")
        vals.append(samples[coord])
    return op.interpolate(np.asarray(vals, dtype=float), y_query)
