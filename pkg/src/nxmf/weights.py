"""Sparse connection matrices and their scaling diagnostics.

The connection matrix w_ij couples N agents pairwise.  The admissible
scaling regime keeps every row and column absolute sum of order one while
each individual weight vanishes, so that an agent feels an O(1) total
interaction assembled from many small contributions.  This module stores
such matrices sparsely, generates the standard families (uniform,
class-permutation, graphon-sampled), verifies the scaling quantities
exactly, and applies the matrix as an operator on per-agent vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .seeding import GRAPH, stream

__all__ = [
    "SparseWeights",
    "ScalingReport",
    "EmpiricalGraphon",
    "check_scaling",
    "gen_uniform",
    "gen_class_permutation",
    "gen_from_graphon",
    "kernel_apply",
    "save_edge_list",
    "load_edge_list",
]


class SparseWeights:
    """Immutable sparse N x N weight matrix with 1-based external indices.

    Entries are stored sorted by (row, col); duplicates are rejected.
    Row and column adjacency views are derived from the same storage, so
    they cannot drift out of sync.
    """

    def __init__(self, n_agents, rows, cols, vals, _validated=False):
        n = int(n_agents)
        if n < 1:
            raise ValueError("n_agents must be >= 1")
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, vals must be 1-D arrays of equal length")
        if not _validated:
            if rows.size:
                if rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= n:
                    raise ValueError("entry index out of range")
                if not np.all(np.isfinite(vals)):
                    raise ValueError("weights must be finite")
            order = np.lexsort((cols, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            if rows.size > 1:
                same = (np.diff(rows) == 0) & (np.diff(cols) == 0)
                if same.any():
                    raise ValueError("duplicate (i, j) entry")
        self.n_agents = n
        self._rows = rows
        self._cols = cols
        self._vals = vals
        for a in (self._rows, self._cols, self._vals):
            a.setflags(write=False)
        # CSR row pointer over the (row, col)-sorted entries
        self._indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self._indptr, rows + 1, 1)
        np.cumsum(self._indptr, out=self._indptr)
        self._csr = None
        self._csc = None

    @classmethod
    def from_entries(cls, n_agents: int, entries) -> "SparseWeights":
        """Build from an iterable of 1-based (i, j, w) triples."""
        rows, cols, vals = [], [], []
        for i, j, w in entries:
            rows.append(int(i) - 1)
            cols.append(int(j) - 1)
            vals.append(float(w))
        return cls(n_agents, rows, cols, vals)

    # storage views -----------------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self._vals.size)

    @property
    def rows0(self) -> np.ndarray:
        """0-based row index per stored entry, sorted by (row, col)."""
        return self._rows

    @property
    def cols0(self) -> np.ndarray:
        return self._cols

    @property
    def values(self) -> np.ndarray:
        return self._vals

    def entries(self):
        """Iterate 1-based (i, j, w) in storage order."""
        for r, c, v in zip(self._rows, self._cols, self._vals):
            yield int(r) + 1, int(c) + 1, float(v)

    def row_entries(self, i: int) -> list[tuple[int, float]]:
        """Adjacency of row i (1-based): list of (j, w_ij)."""
        lo, hi = self._indptr[i - 1], self._indptr[i]
        return [(int(c) + 1, float(v)) for c, v in zip(self._cols[lo:hi], self._vals[lo:hi])]

    def col_entries(self, j: int) -> list[tuple[int, float]]:
        """Adjacency of column j (1-based): list of (i, w_ij)."""
        mask = self._cols == j - 1
        return [(int(r) + 1, float(v)) for r, v in zip(self._rows[mask], self._vals[mask])]

    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self._vals, (self._rows, self._cols)), shape=(self.n_agents, self.n_agents)
            )
        return self._csr

    def csc_t(self) -> sp.csr_matrix:
        """Transpose as CSR (column action)."""
        if self._csc is None:
            self._csc = sp.csr_matrix(
                (self._vals, (self._cols, self._rows)), shape=(self.n_agents, self.n_agents)
            )
        return self._csc

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n_agents, self.n_agents))
        a[self._rows, self._cols] = self._vals
        return a

    def permuted(self, perm: np.ndarray) -> "SparseWeights":
        """Simultaneous row/column relabeling: w'_ij = w_{perm(i), perm(j)}.

        perm is a 0-based permutation of range(n_agents).
        """
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self.n_agents)):
            raise ValueError("perm must be a permutation of 0..n_agents-1")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.n_agents)
        return SparseWeights(self.n_agents, inv[self._rows], inv[self._cols], self._vals)

    def __eq__(self, other):
        return (
            isinstance(other, SparseWeights)
            and self.n_agents == other.n_agents
            and np.array_equal(self._rows, other._rows)
            and np.array_equal(self._cols, other._cols)
            and np.array_equal(self._vals, other._vals)
        )

    def __repr__(self):
        return f"SparseWeights(n={self.n_agents}, nnz={self.nnz})"


@dataclass(frozen=True)
class ScalingReport:
    """Exact scaling quantities of a weight matrix."""

    max_row_abs_sum: float
    max_col_abs_sum: float
    max_entry_abs: float
    density: float


class EmpiricalGraphon:
    """Piecewise-constant kernel N * w_ij on the N x N cell grid of [0,1]^2."""

    def __init__(self, weights: SparseWeights):
        self.weights = weights
        self.n_cells = weights.n_agents
        self._dense = None

    def cell_value(self, i: int, j: int) -> float:
        """Value on cell (i, j), 1-based: N * w_ij."""
        n = self.n_cells
        if not (1 <= i <= n and 1 <= j <= n):
            raise ValueError("cell index out of range")
        lo, hi = self.weights._indptr[i - 1], self.weights._indptr[i]
        cols = self.weights.cols0[lo:hi]
        k = np.searchsorted(cols, j - 1)
        if k < cols.size and cols[k] == j - 1:
            return n * float(self.weights.values[lo + k])
        return 0.0

    def value_at(self, xi: float, zeta: float) -> float:
        """Kernel value at a point of [0,1]^2 (right-open cells, last closed)."""
        n = self.n_cells
        i = min(int(xi * n), n - 1) + 1
        j = min(int(zeta * n), n - 1) + 1
        return self.cell_value(i, j)

    def to_dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.n_cells * self.weights.to_dense()
        return self._dense


def check_scaling(w: SparseWeights) -> ScalingReport:
    """Row/column absolute sums, max weight and density, computed exactly.

    Sums use math.fsum so the report is identical across platforms and
    entry orderings.
    """
    n = w.n_agents
    if w.nnz == 0:
        return ScalingReport(0.0, 0.0, 0.0, 0.0)
    absvals = np.abs(w.values)
    max_row = 0.0
    for i in range(n):
        lo, hi = w._indptr[i], w._indptr[i + 1]
        if hi > lo:
            s = math.fsum(absvals[lo:hi])
            if s > max_row:
                max_row = s
    col_sums = [[] for _ in range(n)]
    for c, v in zip(w.cols0, absvals):
        col_sums[c].append(v)
    max_col = max((math.fsum(s) for s in col_sums if s), default=0.0)
    return ScalingReport(
        max_row_abs_sum=max_row,
        max_col_abs_sum=max_col,
        max_entry_abs=float(absvals.max()),
        density=w.nnz / float(n * n),
    )


def gen_uniform(n: int, w_bar: float, include_diagonal: bool = False) -> SparseWeights:
    """All-to-all coupling with every stored weight equal to w_bar / n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    if not include_diagonal:
        keep = ii != jj
        ii, jj = ii[keep], jj[keep]
    vals = np.full(ii.size, w_bar / n)
    return SparseWeights(n, ii, jj, vals, _validated=True)


def gen_class_permutation(n: int, m: int, perm) -> SparseWeights:
    """Sparse class-to-class coupling.

    Agents are split into n/m consecutive blocks of size m; every agent of
    block k is coupled with weight 1/m to every agent of block perm(k).
    Every row and column sum is exactly 1 while each weight is only 1/m,
    so the family stays in the admissible scaling regime with density m/n.
    """
    if n < 1 or m < 1 or n % m != 0:
        raise ValueError("m must divide n")
    n_classes = n // m
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(1, n_classes + 1)):
        raise ValueError(f"perm must be a bijection on 1..{n_classes}")
    rows = np.repeat(np.arange(n), m)
    starts = np.asarray([(perm[k] - 1) * m for k in range(n_classes)])
    cols = (np.repeat(starts, m * m).reshape(n, m) + np.arange(m)).ravel()
    vals = np.full(rows.size, 1.0 / m)
    return SparseWeights(n, rows, cols, vals, _validated=True)


def gen_from_graphon(n, g, rng_seed=None, mode="midpoint"):
    """Discretize a bounded kernel g on [0,1]^2 into agent weights.

    midpoint mode (default, deterministic): w_ij = g((i-1/2)/n, (j-1/2)/n) / n
    on the full n x n grid, diagonal included.  bernoulli mode samples an
    unweighted random graph with edge probability clip(g, 0, 1) at the
    midpoints and weight 1/n per sampled edge.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = (np.arange(n) + 0.5) / n
    xi, ze = np.meshgrid(pts, pts, indexing="ij")
    gv = np.asarray(np.vectorize(g)(xi, ze), dtype=np.float64)
    if mode == "midpoint":
        vals = gv / n
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        return SparseWeights(n, ii.ravel(), jj.ravel(), vals.ravel(), _validated=True)
    if mode == "bernoulli":
        rng = stream(0 if rng_seed is None else rng_seed, GRAPH)
        p = np.clip(gv, 0.0, 1.0)
        adj = rng.random((n, n)) < p
        ii, jj = np.nonzero(adj)
        return SparseWeights(n, ii, jj, np.full(ii.size, 1.0 / n), _validated=True)
    raise ValueError(f"unknown sampling mode {mode!r}")


def kernel_apply(w: SparseWeights, phi: np.ndarray, side: str = "row") -> np.ndarray:
    """Apply the weight matrix to a per-agent vector (or stack of vectors).

    row side: out_i = sum_j w_ij phi_j, i.e. the action of the empirical
    kernel on functions of the second variable; col side transposes.  The
    empirical-graphon normalization N * w_ij cancels against the 1/N cell
    measure, so the raw stored weights apply with no extra factor.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[0] != w.n_agents:
        raise ValueError(f"phi has leading size {phi.shape[0]}, expected {w.n_agents}")
    mat = w.csr() if side == "row" else w.csc_t() if side == "col" else None
    if mat is None:
        raise ValueError("side must be 'row' or 'col'")
    if phi.ndim == 1:
        return mat @ phi
    flat = mat @ phi.reshape(phi.shape[0], -1)
    return flat.reshape(phi.shape)


def save_edge_list(w: SparseWeights, path) -> None:
    """Text edge list: header 'N <n>' then 1-based 'i j w' lines.

    Weights are written with 17 significant digits so the round trip is
    bit-exact.
    """
    with open(path, "w") as fh:
        fh.write(f"N {w.n_agents}\n")
        for i, j, v in w.entries():
            fh.write(f"{i} {j} {v:.17g}\n")


def load_edge_list(path) -> SparseWeights:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "N":
            raise ValueError("edge list must start with 'N <n_agents>'")
        n = int(header[1])
        entries = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            i, j, v = line.split()
            entries.append((int(i), int(j), float(v)))
    return SparseWeights.from_entries(n, entries)
