"""Directed communication graphs.

Agents are numbered ``1..n``. An edge ``(j, i)`` means agent ``i`` can send to
agent ``j``; hence ``in_neighbors(i) = {j : (i, j) in E}`` and
``out_neighbors(i) = {j : (j, i) in E}``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sps

from .errors import GenerationFailure, InvalidArgument

__all__ = [
    "Digraph",
    "SupportPattern",
    "in_neighbors",
    "out_neighbors",
    "is_strongly_connected",
    "ring",
    "random_strongly_connected",
    "from_edge_list",
    "five_agent_testbed",
    "parse_edge_list",
    "format_edge_list",
]


@dataclass(frozen=True)
class Digraph:
    n: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise InvalidArgument(f"agent count must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "edges", frozenset((int(a), int(b)) for a, b in self.edges))
        for a, b in self.edges:
            if a == b:
                raise InvalidArgument(f"self-loop ({a}, {b}) is not allowed")
            if not (1 <= a <= self.n and 1 <= b <= self.n):
                raise InvalidArgument(f"edge ({a}, {b}) has an id outside [1, {self.n}]")

    def _check(self, i: int) -> None:
        if not (1 <= i <= self.n):
            raise InvalidArgument(f"agent id {i} outside [1, {self.n}]")

    @cached_property
    def _in(self) -> dict[int, frozenset[int]]:
        acc: dict[int, set[int]] = {i: set() for i in range(1, self.n + 1)}
        for recv, send in self.edges:
            acc[recv].add(send)
        return {i: frozenset(s) for i, s in acc.items()}

    @cached_property
    def _out(self) -> dict[int, frozenset[int]]:
        acc: dict[int, set[int]] = {i: set() for i in range(1, self.n + 1)}
        for recv, send in self.edges:
            acc[send].add(recv)
        return {i: frozenset(s) for i, s in acc.items()}

    def in_neighbors(self, i: int) -> frozenset[int]:
        self._check(i)
        return self._in[i]

    def out_neighbors(self, i: int) -> frozenset[int]:
        self._check(i)
        return self._out[i]

    def neighbors(self, i: int) -> frozenset[int]:
        return self.in_neighbors(i) | self.out_neighbors(i)

    @property
    def max_degree(self) -> int:
        """max over agents of max(|in|, |out|)."""
        return max(max(len(self._in[i]), len(self._out[i])) for i in range(1, self.n + 1))

    @cached_property
    def pattern(self) -> "SupportPattern":
        return SupportPattern.from_graph(self)

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": sorted([list(e) for e in self.edges])}


@dataclass(frozen=True, eq=False)
class SupportPattern:
    """Nonzero support of the mixing matrices, in 0-based array form.

    Entry ``e`` is the pair ``(rows[e], cols[e])`` with ``cols[e]`` in
    ``N_in(rows[e]) + {rows[e]}``. R, A and C share this support: ``C_ij`` is
    nonzero exactly when ``i`` is an out-neighbour of ``j`` or ``i == j``.
    Entries are sorted by (row, col).
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    diag: np.ndarray  # diag[i] = entry index of (i, i)
    row_size: np.ndarray  # |N_in(i)| + 1
    col_size: np.ndarray  # |N_out(j)| + 1
    gather_rows: sps.csr_matrix  # (n, nnz) sums entries by row
    gather_cols: sps.csr_matrix  # (n, nnz) sums entries by column

    @classmethod
    def from_graph(cls, g: Digraph) -> "SupportPattern":
        pairs = sorted({(i, i) for i in range(1, g.n + 1)} | set(g.edges))
        rows = np.array([p[0] - 1 for p in pairs], dtype=np.int64)
        cols = np.array([p[1] - 1 for p in pairs], dtype=np.int64)
        nnz = len(pairs)
        diag = np.flatnonzero(rows == cols)
        ones = np.ones(nnz)
        gr = sps.csr_matrix((ones, (rows, np.arange(nnz))), shape=(g.n, nnz))
        gc = sps.csr_matrix((ones, (cols, np.arange(nnz))), shape=(g.n, nnz))
        for arr in (rows, cols, diag):
            arr.setflags(write=False)
        return cls(
            n=g.n,
            rows=rows,
            cols=cols,
            diag=diag,
            row_size=np.bincount(rows, minlength=g.n),
            col_size=np.bincount(cols, minlength=g.n),
            gather_rows=gr,
            gather_cols=gc,
        )

    @property
    def nnz(self) -> int:
        return len(self.rows)

    def index(self, i: int, j: int) -> int | None:
        """Entry index of 1-based pair (i, j), or None when off-support."""
        lo = np.searchsorted(self.rows, i - 1, side="left")
        hi = np.searchsorted(self.rows, i - 1, side="right")
        pos = lo + np.searchsorted(self.cols[lo:hi], j - 1)
        if pos < hi and self.cols[pos] == j - 1:
            return int(pos)
        return None


def in_neighbors(g: Digraph, i: int) -> frozenset[int]:
    return g.in_neighbors(i)


def out_neighbors(g: Digraph, i: int) -> frozenset[int]:
    return g.out_neighbors(i)


def _reach(adj: dict[int, frozenset[int]], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def is_strongly_connected(g: Digraph) -> bool:
    """True iff every agent reaches every other along directed edges.

    One forward and one backward search from agent 1 suffice.
    """
    if g.n == 1:
        return True
    full = g.n
    return len(_reach(g._out, 1)) == full and len(_reach(g._in, 1)) == full


def ring(n: int) -> Digraph:
    """Directed cycle 1 -> 2 -> ... -> n -> 1."""
    if n < 2:
        raise InvalidArgument(f"ring needs n >= 2, got {n}")
    return Digraph(n, frozenset((i % n + 1, i) for i in range(1, n + 1)))


def random_strongly_connected(
    n: int, edge_probability: float, seed: int, max_attempts: int = 100
) -> Digraph:
    """Random digraph that contains a hidden Hamiltonian cycle.

    A random permutation fixes the cycle, then every other ordered pair is added
    independently with ``edge_probability``. Deterministic under ``seed``.
    """
    if n < 2:
        raise InvalidArgument(f"random graph needs n >= 2, got {n}")
    if not 0.0 <= edge_probability <= 1.0:
        raise InvalidArgument(f"edge probability must lie in [0, 1], got {edge_probability}")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        perm = rng.permutation(n) + 1
        edges = {(int(perm[(t + 1) % n]), int(perm[t])) for t in range(n)}
        extra = rng.random((n, n)) < edge_probability
        np.fill_diagonal(extra, False)
        recv, send = np.nonzero(extra)
        edges.update(zip((recv + 1).tolist(), (send + 1).tolist()))
        g = Digraph(n, frozenset(edges))
        if is_strongly_connected(g):
            return g
    raise GenerationFailure(f"no strongly connected digraph after {max_attempts} attempts")


def from_edge_list(pairs: Iterable[tuple[int, int]], n: int | None = None) -> Digraph:
    """Build a digraph from ``(j, i)`` pairs; ``n`` defaults to the largest id."""
    pairs = [(int(a), int(b)) for a, b in pairs]
    if n is None:
        if not pairs:
            raise InvalidArgument("cannot infer n from an empty edge list")
        n = max(max(p) for p in pairs)
    return Digraph(n, frozenset(pairs))


def five_agent_testbed() -> Digraph:
    """Five-agent strongly connected digraph used by the privacy experiments.

    Agent 1 sends to 2, 4, 5 and hears from 2 and 3, so agent 2 is both an out-
    and an in-neighbour of agent 1 and agents {4, 5} observe agent 1 directly.
    """
    sends = [(1, 2), (1, 4), (1, 5), (2, 1), (2, 3), (3, 1), (3, 4), (4, 5), (4, 2), (5, 3)]
    return Digraph(5, frozenset((dst, src) for src, dst in sends))


def format_edge_list(g: Digraph) -> str:
    lines = [f"digraph n={g.n}"]
    lines += [f"{j} {i}" for j, i in sorted(g.edges)]
    return "\n".join(lines) + "\n"


def parse_edge_list(text: str) -> Digraph:
    """Parse the ``digraph n=<n>`` + ``j i`` line format."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("digraph n="):
        raise InvalidArgument("edge list must start with a 'digraph n=<n>' header")
    try:
        n = int(lines[0].split("=", 1)[1])
        pairs = [tuple(int(tok) for tok in ln.split()) for ln in lines[1:]]
    except ValueError as exc:
        raise InvalidArgument(f"malformed edge list: {exc}") from None
    if any(len(p) != 2 for p in pairs):
        raise InvalidArgument("each edge line must hold exactly two ids")
    return Digraph(n, frozenset(pairs))


def read_edge_list(path: str | Path) -> Digraph:
    return parse_edge_list(Path(path).read_text())
