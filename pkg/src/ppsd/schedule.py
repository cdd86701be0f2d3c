"""Per-iteration mixing weights and their stochasticity constraints.

Iteration 0 uses arbitrary real weights stored per coordinate (shape
``(entries, d)``); the self weight ``C_ii`` is closed so that every column of
the augmented matrix sums to one. From iteration 1 on every weight is a scalar
multiple of the identity (stored with a trailing axis of length 1), drawn in
``[eta, 1]`` with the decentralized normalization rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .errors import InvalidArgument, InvariantViolation
from .topology import Digraph, SupportPattern

__all__ = [
    "IterationWeights",
    "WeightHistory",
    "normalize_eta",
    "default_eta",
    "max_feasible_eta",
    "init_weights_k0",
    "weights_k",
    "assemble_augmented",
    "validate",
    "STOCHASTIC_TOL",
]

STOCHASTIC_TOL = 1e-10

_PAIR_FIELDS = ("R", "A", "C")
_AGENT_FIELDS = ("Lambda", "PhiAlpha", "PhiBeta")
_JSON_KEYS = {"R": "R", "A": "A", "C": "C", "Lambda": "Lam", "PhiAlpha": "PhiA", "PhiBeta": "PhiB"}


@dataclass(frozen=True, eq=False)
class IterationWeights:
    """One iteration's complete weight set.

    ``R``, ``A`` and ``C`` are indexed by the support entries of ``pattern``
    (entry ``e`` is the block ``(rows[e], cols[e])``). ``Lam``, ``PhiA`` and
    ``PhiB`` are indexed by agent. The trailing axis has length ``d`` at k=0
    and 1 afterwards.
    """

    k: int
    d: int
    pattern: SupportPattern
    R: np.ndarray
    A: np.ndarray
    C: np.ndarray
    Lam: np.ndarray
    PhiA: np.ndarray
    PhiB: np.ndarray
    eta: float | None = None

    def __post_init__(self):
        nnz, n = self.pattern.nnz, self.pattern.n
        for name in ("R", "A", "C", "Lam", "PhiA", "PhiB"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            rows = nnz if name in ("R", "A", "C") else n
            if arr.shape[0] != rows or arr.shape[1] not in (1, self.d):
                raise InvalidArgument(f"{name} has shape {arr.shape}, expected ({rows}, 1|{self.d})")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.pattern.n

    @property
    def is_scalar(self) -> bool:
        return all(getattr(self, f).shape[1] == 1 for f in ("R", "A", "C", "Lam", "PhiA", "PhiB"))

    def block(self, name: str, i: int, j: int | None = None) -> np.ndarray:
        """Diagonal of one d x d block as a length-d vector (1-based ids).

        Pair fields (R, A, C) take ``(i, j)`` and return zeros off the support.
        Agent fields (Lambda, PhiAlpha, PhiBeta) take ``i`` only.
        """
        if name in _PAIR_FIELDS:
            if j is None:
                raise InvalidArgument(f"{name} needs a pair of agent ids")
            e = self.pattern.index(i, j)
            if e is None:
                return np.zeros(self.d)
            row = getattr(self, name)[e]
        elif name in _AGENT_FIELDS:
            row = getattr(self, _JSON_KEYS[name])[i - 1]
        else:
            raise InvalidArgument(f"unknown weight field {name!r}")
        return np.broadcast_to(row, (self.d,)).copy()

    def expanded(self) -> "IterationWeights":
        """Copy with every field stored per coordinate."""
        full = {
            f: np.broadcast_to(getattr(self, f), (getattr(self, f).shape[0], self.d)).copy()
            for f in ("R", "A", "C", "Lam", "PhiA", "PhiB")
        }
        return replace(self, **full)

    def with_fields(self, **arrays) -> "IterationWeights":
        return replace(self, **arrays)

    def to_json_dict(self) -> dict:
        out = {
            "k": self.k,
            "d": self.d,
            "eta": self.eta,
            "support": [[int(r) + 1, int(c) + 1] for r, c in zip(self.pattern.rows, self.pattern.cols)],
        }
        for key, attr in _JSON_KEYS.items():
            out[key] = getattr(self, attr).tolist()
        return out

    @classmethod
    def from_json_dict(cls, data: dict, pattern: SupportPattern) -> "IterationWeights":
        support = [[int(r) + 1, int(c) + 1] for r, c in zip(pattern.rows, pattern.cols)]
        if data["support"] != support:
            raise InvalidArgument("weight dump support does not match the graph")
        arrays = {attr: np.asarray(data[key], dtype=float) for key, attr in _JSON_KEYS.items()}
        return cls(k=data["k"], d=data["d"], pattern=pattern, eta=data.get("eta"), **arrays)


@dataclass
class WeightHistory:
    """Append-only list of IterationWeights with contiguous indices from 0."""

    items: list[IterationWeights] = field(default_factory=list)

    def append(self, w: IterationWeights) -> None:
        if w.k != len(self.items):
            raise InvalidArgument(f"expected weights for k={len(self.items)}, got k={w.k}")
        self.items.append(w)

    def __getitem__(self, k: int) -> IterationWeights:
        return self.items[k]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[IterationWeights]:
        return iter(self.items)

    def replaced(self, k: int, w: IterationWeights) -> "WeightHistory":
        """Copy of the history with iteration ``k`` swapped for ``w``."""
        if w.k != k:
            raise InvalidArgument("replacement weights carry the wrong iteration index")
        items = list(self.items)
        items[k] = w
        return WeightHistory(items)

    def to_json(self) -> str:
        return json.dumps({"iterations": [w.to_json_dict() for w in self.items]})

    @classmethod
    def from_json(cls, text: str, graph: Digraph) -> "WeightHistory":
        data = json.loads(text)
        hist = cls()
        for item in data["iterations"]:
            hist.append(IterationWeights.from_json_dict(item, graph.pattern))
        return hist


def normalize_eta(raw, eta: float) -> np.ndarray:
    """Map raw values in [0, 1] to weights in [eta, 1] that sum to one.

    ``w_q = (1 - m*eta) * ((1 - eta)*p_q + eta) / ((1 - eta)*sum(p) + m*eta) + eta``
    """
    p = np.asarray(raw, dtype=float).ravel()
    m = p.size
    if m < 1:
        raise InvalidArgument("normalize_eta needs at least one raw value")
    if eta < 0 or m * eta > 1 + 1e-15:
        raise InvalidArgument(f"{m} weights cannot all be >= eta={eta}")
    denom = (1 - eta) * p.sum() + m * eta
    if denom == 0:
        # all-zero raw values with eta = 0: fall back to the uniform split
        return np.full(m, 1.0 / m)
    return (1 - m * eta) * ((1 - eta) * p + eta) / denom + eta


def _normalize_groups(p: np.ndarray, group: np.ndarray, size: np.ndarray, sums: np.ndarray, eta: float):
    """Vectorized normalize_eta over many groups.

    ``group[e]`` names the group of entry ``e``; ``size`` and ``sums`` are the
    per-group entry counts and raw sums.
    """
    m = size[group]
    denom = (1 - eta) * sums[group] + m * eta
    return (1 - m * eta) * ((1 - eta) * p + eta) / denom + eta


def max_feasible_eta(g: Digraph) -> float:
    """Largest eta for which every R/A row and augmented C column fits in [eta, 1]."""
    pat = g.pattern
    worst = max(int(pat.row_size.max()), int(pat.col_size.max()) + 1)
    return 1.0 / worst


def default_eta(g: Digraph) -> float:
    return 1.0 / (2 * (g.max_degree + 2))


def init_weights_k0(g: Digraph, d: int, rng: np.random.Generator, magnitude: float = 10.0) -> IterationWeights:
    """Arbitrary real weights for iteration 0.

    Every free entry is uniform on ``[-magnitude, magnitude]`` per coordinate.
    ``C_ii`` closes the augmented column: ``C_ii = 1 - sum_{j out} C_ji - PhiAlpha_i``.
    """
    if d < 1:
        raise InvalidArgument(f"dimension must be >= 1, got {d}")
    if magnitude <= 0:
        raise InvalidArgument("magnitude must be positive")
    pat = g.pattern
    n, nnz = g.n, pat.nnz

    def draw(rows):
        return rng.uniform(-magnitude, magnitude, size=(rows, d))

    R, A, C = draw(nnz), draw(nnz), draw(nnz)
    Lam, PhiA, PhiB = draw(n), draw(n), draw(n)
    C[pat.diag] = 0.0
    C[pat.diag] = 1.0 - (pat.gather_cols @ C) - PhiA
    return IterationWeights(k=0, d=d, pattern=pat, R=R, A=A, C=C, Lam=Lam, PhiA=PhiA, PhiB=PhiB)


def weights_k(
    g: Digraph, d: int, eta: float, rng: np.random.Generator, k: int = 1, gamma: float = 1.0
) -> IterationWeights:
    """Scalar-regime weights for an iteration k >= 1.

    R and A rows are normalized over ``N_in(i) + {i}``. The augmented column of
    agent ``i`` (``C_ji`` for ``j`` in ``N_out(i) + {i}`` plus ``PhiAlpha_i``)
    is normalized as the out-neighbourhood of the decomposed sub-agent, which
    has ``|N_out(i)| + 1`` out-neighbours. PhiBeta is uniform on ``[eta, 1]``
    and Lambda is ``gamma`` for every agent.
    """
    if k < 1:
        raise InvalidArgument("weights_k is for iterations k >= 1")
    if d < 1:
        raise InvalidArgument(f"dimension must be >= 1, got {d}")
    if not 0 < eta < 1:
        raise InvalidArgument(f"eta must lie in (0, 1), got {eta}")
    limit = max_feasible_eta(g)
    if eta > limit * (1 + 1e-12):
        raise InvalidArgument(f"eta={eta} exceeds the feasible bound {limit} for this degree profile")
    if gamma <= 0:
        raise InvalidArgument("gamma must be positive")
    pat = g.pattern
    n, nnz = g.n, pat.nnz

    def rows_normalized():
        p = rng.random(nnz)
        sums = pat.gather_rows @ p
        return _normalize_groups(p, pat.rows, pat.row_size, sums, eta)

    R = rows_normalized()
    A = rows_normalized()
    p_c = rng.random(nnz)
    p_alpha = rng.random(n)
    sums = pat.gather_cols @ p_c + p_alpha
    size = pat.col_size + 1
    C = _normalize_groups(p_c, pat.cols, size, sums, eta)
    PhiA = _normalize_groups(p_alpha, np.arange(n), size, sums, eta)
    PhiB = rng.uniform(eta, 1.0, size=n)
    Lam = np.full(n, float(gamma))
    return IterationWeights(k=k, d=d, pattern=pat, R=R, A=A, C=C, Lam=Lam, PhiA=PhiA, PhiB=PhiB, eta=eta)


def _column_sums(w: IterationWeights) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate sums of the alpha- and beta-columns of the augmented matrix."""
    pat = w.pattern
    C = np.broadcast_to(w.C, (pat.nnz, w.d))
    alpha_cols = pat.gather_cols @ C + np.broadcast_to(w.PhiA, (w.n, w.d))
    PhiB = np.broadcast_to(w.PhiB, (w.n, w.d))
    beta_cols = (1.0 - PhiB) + PhiB
    return alpha_cols, beta_cols


def validate(w: IterationWeights, tol: float = STOCHASTIC_TOL) -> list[str]:
    """Return human-readable violations of the weight constraints for ``w.k``."""
    problems: list[str] = []
    pat = w.pattern
    for name in ("R", "A", "C", "Lam", "PhiA", "PhiB"):
        if not np.all(np.isfinite(getattr(w, name))):
            problems.append(f"{name}: non-finite entries")
    if problems:
        return problems

    alpha_cols, beta_cols = _column_sums(w)
    bad = np.argwhere(np.abs(alpha_cols - 1.0) > tol)
    for i, l in bad[:10]:
        problems.append(f"C column {i + 1} coord {l}: augmented sum {alpha_cols[i, l]!r} != 1")
    bad = np.argwhere(np.abs(beta_cols - 1.0) > tol)
    for i, l in bad[:10]:
        problems.append(f"PhiBeta column {i + 1} coord {l}: sum {beta_cols[i, l]!r} != 1")

    if w.k == 0:
        return problems

    if w.eta is None:
        problems.append("k>=1 weights must record eta")
        return problems
    eta = w.eta
    for name in ("R", "A", "C", "Lam", "PhiA", "PhiB"):
        arr = getattr(w, name)
        if arr.shape[1] > 1 and np.ptp(arr, axis=1).max() > tol:
            problems.append(f"{name}: coordinates differ (k>=1 requires scalar * identity)")
    for name in ("R", "A", "C", "PhiA", "PhiB"):
        arr = getattr(w, name)
        low = arr < eta - tol
        high = arr > 1.0 + tol
        if low.any() or high.any():
            where = np.argwhere(low | high)[0]
            problems.append(f"{name}: entry {tuple(int(t) for t in where)} = {arr[tuple(where)]!r} outside [eta, 1]")
    for name in ("R", "A"):
        arr = np.broadcast_to(getattr(w, name), (pat.nnz, w.d))
        sums = pat.gather_rows @ arr
        bad = np.argwhere(np.abs(sums - 1.0) > tol)
        for i, l in bad[:10]:
            problems.append(f"{name} row {i + 1} coord {l}: sum {sums[i, l]!r} != 1")
    lam = w.Lam
    if np.any(lam <= 0) or np.ptp(lam) > tol:
        problems.append("Lambda must be the same positive step size for every agent")
    return problems


def assemble_augmented(w: IterationWeights) -> np.ndarray:
    """Dense augmented mixing matrix, one ``2n x 2n`` slice per coordinate.

    Layout per coordinate: ``[[C, I - PhiBeta], [PhiAlpha, PhiBeta]]``.
    """
    problems = validate(w)
    if problems:
        raise InvariantViolation("; ".join(problems[:5]))
    n, d, pat = w.n, w.d, w.pattern
    C = np.broadcast_to(w.C, (pat.nnz, d))
    PhiA = np.broadcast_to(w.PhiA, (n, d))
    PhiB = np.broadcast_to(w.PhiB, (n, d))
    out = np.zeros((d, 2 * n, 2 * n))
    idx = np.arange(n)
    out[:, pat.rows, pat.cols] = C.T
    out[:, idx, n + idx] = 1.0 - PhiB.T
    out[:, n + idx, idx] = PhiA.T
    out[:, n + idx, n + idx] = PhiB.T
    return out
