"""Local objectives, gradient oracles and the two experiment families."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateProblem, InvalidArgument

__all__ = [
    "LocalObjective",
    "ProblemInstance",
    "rendezvous",
    "linear_regression",
    "make_regression",
    "make_rendezvous",
    "global_gradient_at",
    "smoothness_constants",
    "instance_from_dict",
]


@dataclass(frozen=True)
class LocalObjective:
    d: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    L: float
    mu: float
    params: dict = field(default_factory=dict, compare=False)


class ProblemInstance:
    """A sum of ``n`` local objectives over R^d.

    ``gradients(X)`` evaluates every local gradient at the rows of ``X`` in one
    call; families supply a vectorized kernel, otherwise the oracles are looped.
    ``shift`` adds a constant vector to selected agents' gradients (the shadow
    objectives used by the privacy audit).
    """

    def __init__(
        self,
        kind: str,
        objectives: Sequence[LocalObjective],
        mu: float,
        x_star: np.ndarray | None = None,
        params: dict | None = None,
        batch_grad: Callable[[np.ndarray], np.ndarray] | None = None,
        shift: np.ndarray | None = None,
    ):
        if not objectives:
            raise InvalidArgument("a problem needs at least one local objective")
        self.kind = kind
        self.objectives = tuple(objectives)
        self.d = objectives[0].d
        if any(o.d != self.d for o in objectives):
            raise InvalidArgument("local objectives disagree on the dimension")
        if mu <= 0:
            raise DegenerateProblem(f"global objective is not strongly convex (mu={mu})")
        self.mu = float(mu)
        self.L = max(o.L for o in objectives)
        self.L_bar = float(sum(o.L for o in objectives))
        self.x_star = None if x_star is None else np.asarray(x_star, dtype=float)
        self.params = dict(params or {})
        self._batch_grad = batch_grad
        self.shift = None if shift is None else np.asarray(shift, dtype=float)

    @property
    def n(self) -> int:
        return len(self.objectives)

    def gradients(self, X: np.ndarray) -> np.ndarray:
        if self._batch_grad is not None:
            G = self._batch_grad(X)
        else:
            G = np.stack([o.grad(x) for o, x in zip(self.objectives, X)])
        if self.shift is not None:
            G = G + self.shift
        return G

    def local_gradient(self, i: int, x) -> np.ndarray:
        """Gradient of agent ``i`` (1-based) at ``x``, shift included."""
        g = np.asarray(self.objectives[i - 1].grad(np.asarray(x, dtype=float)), dtype=float)
        if self.shift is not None:
            g = g + self.shift[i - 1]
        return g

    def local_value(self, i: int, x) -> float:
        x = np.asarray(x, dtype=float)
        val = self.objectives[i - 1].value(x)
        if self.shift is not None:
            val += float(self.shift[i - 1] @ x)
        return val

    def with_gradient_shifts(self, shifts: dict[int, np.ndarray]) -> "ProblemInstance":
        """Copy whose agent ``i`` gradient is offset by ``shifts[i]``.

        The minimizer is only preserved when the shifts sum to zero; it is kept
        in that case and dropped otherwise.
        """
        total = np.zeros((self.n, self.d)) if self.shift is None else self.shift.copy()
        for i, s in shifts.items():
            total[i - 1] += np.asarray(s, dtype=float)
        x_star = self.x_star if not np.any(total.sum(axis=0)) else None
        return ProblemInstance(
            self.kind, self.objectives, self.mu, x_star, self.params, self._batch_grad, total
        )

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def global_gradient_at(instance: ProblemInstance, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return instance.gradients(np.tile(x, (instance.n, 1))).sum(axis=0)


def smoothness_constants(instance: ProblemInstance) -> tuple[float, float, float]:
    """(mu, L, L_bar) with L = max L_i and L_bar = sum L_i."""
    return instance.mu, instance.L, instance.L_bar


def rendezvous(points) -> ProblemInstance:
    """f_i(x) = 0.5 * ||x - p_i||^2; the minimizer is the centroid."""
    pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    if not pts:
        raise InvalidArgument("rendezvous needs at least one point")
    d = pts[0].size
    if any(p.ndim != 1 or p.size != d for p in pts):
        raise InvalidArgument("rendezvous points must share one dimension")
    P = np.stack(pts)

    def make(p):
        return LocalObjective(
            d=d,
            value=lambda x, p=p: 0.5 * float(np.sum((x - p) ** 2)),
            grad=lambda x, p=p: np.asarray(x, dtype=float) - p,
            L=1.0,
            mu=1.0,
            params={"p": p},
        )

    return ProblemInstance(
        "rendezvous",
        [make(p) for p in P],
        mu=float(len(P)),
        x_star=P.mean(axis=0),
        params={"points": P.tolist()},
        batch_grad=lambda X: X - P,
    )


def linear_regression(Q: Sequence, m: Sequence, params: dict | None = None) -> ProblemInstance:
    """f_i(x) = ||Q_i x - m_i||^2 with gradient 2 Q_i^T (Q_i x - m_i)."""
    Qs = [np.atleast_2d(np.asarray(q, dtype=float)) for q in Q]
    ms = [np.atleast_1d(np.asarray(v, dtype=float)) for v in m]
    if len(Qs) != len(ms) or not Qs:
        raise InvalidArgument("need one measurement vector per observation matrix")
    d = Qs[0].shape[1]
    for q, v in zip(Qs, ms):
        if q.shape[1] != d or q.shape[0] != v.size:
            raise InvalidArgument(f"non-conformable shapes {q.shape} and {v.shape}")
    H = sum(q.T @ q for q in Qs)
    b = sum(q.T @ v for q, v in zip(Qs, ms))
    eig_min = float(np.linalg.eigvalsh(H)[0])
    if eig_min <= 1e-12 * max(1.0, float(np.abs(H).max())):
        raise DegenerateProblem("sum of Q_i^T Q_i is singular")
    x_star = np.linalg.solve(H, b)

    def make(q, v):
        smax = float(np.linalg.svd(q, compute_uv=False)[0])
        smin = float(np.linalg.svd(q, compute_uv=False)[-1]) if q.shape[0] >= d else 0.0
        return LocalObjective(
            d=d,
            value=lambda x, q=q, v=v: float(np.sum((q @ x - v) ** 2)),
            grad=lambda x, q=q, v=v: 2.0 * q.T @ (q @ x - v),
            L=2.0 * smax**2,
            mu=2.0 * smin**2,
            params={"Q": q, "m": v},
        )

    batch = None
    if len({q.shape for q in Qs}) == 1:
        Qa = np.stack(Qs)
        Ma = np.stack(ms)

        def batch(X):
            resid = np.einsum("npd,nd->np", Qa, X) - Ma
            return 2.0 * np.einsum("npd,np->nd", Qa, resid)

    meta = params if params is not None else {"Q": [q.tolist() for q in Qs], "m": [v.tolist() for v in ms]}
    return ProblemInstance(
        "linear_regression",
        [make(q, v) for q, v in zip(Qs, ms)],
        mu=2.0 * eig_min,
        x_star=x_star,
        params=meta,
        batch_grad=batch,
    )


def make_regression(n: int, d: int = 10, p: int = 10, noise: float = 0.2, seed: int = 0) -> ProblemInstance:
    """Seeded regression instance: m_i = Q_i s0 + noise.

    ``s0`` and the entries of each ``Q_i`` are standard normal; each ``Q_i`` is
    divided by its spectral norm; ``noise`` is the standard deviation.
    """
    rng = np.random.default_rng(seed)
    s0 = rng.standard_normal(d)
    Qs, ms = [], []
    for _ in range(n):
        q = rng.standard_normal((p, d))
        q /= np.linalg.norm(q, 2)
        Qs.append(q)
        ms.append(q @ s0 + noise * rng.standard_normal(p))
    params = {"generator": {"n": n, "d": d, "p": p, "noise": noise, "seed": seed}}
    inst = linear_regression(Qs, ms, params=params)
    inst.params["signal"] = s0.tolist()
    return inst


def make_rendezvous(n: int, d: int = 1, scale: float = 10.0, seed: int = 0) -> ProblemInstance:
    rng = np.random.default_rng(seed)
    inst = rendezvous(rng.uniform(-scale, scale, size=(n, d)))
    inst.params = {"generator": {"n": n, "d": d, "scale": scale, "seed": seed}}
    return inst


def instance_from_dict(spec: dict) -> ProblemInstance:
    """Rebuild an instance from its serialized form (explicit data or generator)."""
    kind = spec.get("kind")
    gen = spec.get("generator")
    if kind == "rendezvous":
        if gen is not None:
            return make_rendezvous(**gen)
        return rendezvous(spec["points"])
    if kind == "linear_regression":
        if gen is not None:
            return make_regression(**gen)
        return linear_regression(spec["Q"], spec["m"])
    raise InvalidArgument(f"unknown problem kind {kind!r}")
