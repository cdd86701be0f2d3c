"""PPSD and baseline push-pull iterations, runs and per-iteration diagnostics."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .objective import ProblemInstance
from .schedule import (
    IterationWeights,
    WeightHistory,
    default_eta,
    init_weights_k0,
    weights_k,
)
from .topology import Digraph, is_strongly_connected

__all__ = [
    "AgentState",
    "NetworkState",
    "PushPullState",
    "RunConfig",
    "RunRecord",
    "init_state",
    "ppsd_step",
    "pushpull_step",
    "run",
    "replay",
    "tracking_residual",
    "error_triplet",
    "phi_backward",
    "DIAGNOSTIC_COLUMNS",
]

DIAGNOSTIC_COLUMNS = ("residual", "tracking_residual", "consensus_err", "opt_gap", "grad_est_err")


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    y_alpha: np.ndarray
    y_beta: np.ndarray


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Stacked agent states at iteration ``k``; row ``i-1`` belongs to agent ``i``.

    ``v`` is the normalizing probability vector over the ``2n`` sub-agents
    (alpha block first); it is undefined at k=0.
    """

    k: int
    x: np.ndarray
    y_alpha: np.ndarray
    y_beta: np.ndarray
    v: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def agent(self, i: int) -> AgentState:
        return AgentState(self.x[i - 1].copy(), self.y_alpha[i - 1].copy(), self.y_beta[i - 1].copy())

    @property
    def y(self) -> np.ndarray:
        return np.vstack([self.y_alpha, self.y_beta])

    @property
    def s(self) -> np.ndarray:
        """``y`` rescaled by ``1/v`` (only defined for k >= 1)."""
        if self.v is None:
            raise InvalidArgument("s is undefined before the normalizing sequence starts (k=0)")
        return self.y / self.v[:, None]


@dataclass(frozen=True, eq=False)
class PushPullState:
    k: int
    x: np.ndarray
    y: np.ndarray


@dataclass
class RunConfig:
    algorithm: str = "ppsd"
    gamma: float | None = None
    eta: float | None = None
    k_max: int = 5000
    eps: float = 1e-8
    seed: int = 0
    weight_magnitude: float = 10.0
    init_magnitude: float = 10.0
    x0_policy: str = "zeros"
    divergence_threshold: float = 1e12
    keep_states: bool = True
    keep_weights: bool = True

    def resolved(self, g: Digraph, instance: ProblemInstance) -> "RunConfig":
        cfg = RunConfig(**asdict(self))
        if cfg.gamma is None:
            cfg.gamma = 1.0 / (2 * instance.n * instance.L)
        if cfg.eta is None:
            cfg.eta = default_eta(g)
        return cfg


def init_state(
    instance: ProblemInstance,
    rng: np.random.Generator,
    x0_policy: str = "zeros",
    magnitude: float = 10.0,
) -> NetworkState:
    """Initial PPSD state with ``y_alpha + y_beta = grad f_i(x_i^0)`` per agent."""
    n, d = instance.n, instance.d
    if x0_policy == "zeros":
        x0 = np.zeros((n, d))
    elif x0_policy == "gaussian":
        x0 = rng.standard_normal((n, d))
    else:
        raise InvalidArgument(f"unknown x0 policy {x0_policy!r}")
    ya = rng.uniform(-magnitude, magnitude, size=(n, d))
    yb = instance.gradients(x0) - ya
    return NetworkState(0, x0, ya, yb, None)


def _ppsd_step(s: NetworkState, w: IterationWeights, instance: ProblemInstance, g_old: np.ndarray):
    if w.k != s.k:
        raise InvalidArgument(f"weights for k={w.k} applied to state k={s.k}")
    pat = w.pattern
    src = pat.cols
    sent = w.Lam * s.y_alpha  # step size applied at the sender
    x_new = pat.gather_rows @ (w.R * s.x[src] - w.A * sent[src])
    ya_new = pat.gather_rows @ (w.C * s.y_alpha[src]) + (1.0 - w.PhiB) * s.y_beta
    g_new = instance.gradients(x_new)
    yb_new = w.PhiA * s.y_alpha + w.PhiB * s.y_beta + g_new - g_old

    n = s.n
    if s.k == 0:
        v_new = np.full(2 * n, 1.0 / (2 * n))
    else:
        c = w.C[:, 0]
        alpha, beta = w.PhiA[:, 0], w.PhiB[:, 0]
        va, vb = s.v[:n], s.v[n:]
        v_new = np.concatenate([pat.gather_rows @ (c * va[src]) + (1.0 - beta) * vb, alpha * va + beta * vb])
    return NetworkState(s.k + 1, x_new, ya_new, yb_new, v_new), g_new


def ppsd_step(s: NetworkState, w: IterationWeights, instance: ProblemInstance) -> NetworkState:
    """One synchronous PPSD iteration.

    ``x_i' = sum_j R_ij x_j - A_ij Lambda_j y_j,alpha`` (j over in-neighbours
    and i), ``y_i,alpha' = sum_j C_ij y_j,alpha + (I - PhiBeta_i) y_i,beta`` and
    ``y_i,beta' = PhiAlpha_i y_i,alpha + PhiBeta_i y_i,beta + grad f_i(x_i') - grad f_i(x_i)``.
    """
    new, _ = _ppsd_step(s, w, instance, instance.gradients(s.x))
    return new


def pushpull_step(s: PushPullState, g: Digraph, instance: ProblemInstance, gamma: float) -> PushPullState:
    """Baseline push-pull with uniform weights 1/(|N_in(i)|+1) and 1/(|N_out(j)|+1)."""
    new, _ = _pushpull_step(s, g, instance, gamma, instance.gradients(s.x))
    return new


def _pushpull_step(s: PushPullState, g: Digraph, instance, gamma, g_old):
    pat = g.pattern
    src = pat.cols
    r = (1.0 / pat.row_size[pat.rows])[:, None]
    c = (1.0 / pat.col_size[src])[:, None]
    x_new = pat.gather_rows @ (r * s.x[src]) - gamma * s.y
    g_new = instance.gradients(x_new)
    y_new = pat.gather_rows @ (c * s.y[src]) + g_new - g_old
    return PushPullState(s.k + 1, x_new, y_new), g_new


def tracking_residual(s, instance: ProblemInstance) -> float:
    """``||sum_i (y_i,alpha + y_i,beta) - sum_i grad f_i(x_i)||``."""
    return _tracking(s, instance.gradients(s.x))


def _tracking(s, grads: np.ndarray) -> float:
    if isinstance(s, PushPullState):
        total = s.y.sum(axis=0)
    else:
        total = s.y_alpha.sum(axis=0) + s.y_beta.sum(axis=0)
    return float(np.linalg.norm(total - grads.sum(axis=0)))


def error_triplet(s, instance: ProblemInstance, phi: np.ndarray | None = None) -> tuple[float, float, float]:
    """(consensus error, optimality gap, gradient-estimation error).

    ``phi`` estimates the absolute probability sequence of the row-stochastic
    chain at this iteration; the uniform vector is used when omitted. The
    gradient-estimation error is NaN where ``v`` is undefined.
    """
    x = s.x
    n = x.shape[0]
    phi = np.full(n, 1.0 / n) if phi is None else np.asarray(phi, dtype=float)
    xbar = phi @ x
    consensus = float(np.linalg.norm(x - xbar))
    if instance.x_star is None:
        gap = float("nan")
    else:
        gap = float(np.sqrt(n) * np.linalg.norm(xbar - instance.x_star))
    v = getattr(s, "v", None)
    if v is None:
        est = float("nan")
    else:
        y = s.y
        sval = y / v[:, None]
        est = float(np.linalg.norm(sval - y.sum(axis=0)))
    return consensus, gap, est


def _residual(x: np.ndarray, instance: ProblemInstance) -> float:
    if instance.x_star is None:
        return float("nan")
    return float(np.linalg.norm(x - instance.x_star))


@dataclass
class RunRecord:
    config: dict
    seed: int
    graph: Digraph
    instance: ProblemInstance
    diagnostics: dict[str, np.ndarray]
    final_state: object
    stop_reason: str
    iterations: int
    weights: WeightHistory | None = None
    states: list | None = None
    extra: dict = field(default_factory=dict)

    @property
    def residuals(self) -> np.ndarray:
        return self.diagnostics["residual"]

    def state(self, k: int):
        if self.states is None:
            raise InvalidArgument("this run did not keep its state trajectory")
        return self.states[k]

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("k",) + DIAGNOSTIC_COLUMNS)
        cols = [self.diagnostics[c] for c in DIAGNOSTIC_COLUMNS]
        for k in range(self.iterations + 1):
            writer.writerow([k] + [format(float(col[k]), ".17g") for col in cols])
        return buf.getvalue()

    def sidecar(self) -> dict:
        final = self.final_state.x
        return {
            "config": self.config,
            "seed": self.seed,
            "stop_reason": self.stop_reason,
            "iterations": self.iterations,
            "final_residual": float(self.residuals[-1]),
            "graph": self.graph.to_dict(),
            "problem": self.instance.to_dict(),
            "final_x": final.tolist(),
        }

    def write(self, out_dir: str | Path, stem: str = "run") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        json_path = out / f"{stem}.json"
        atomic_write(csv_path, self.csv_text())
        atomic_write(json_path, json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _execute(
    g: Digraph,
    instance: ProblemInstance,
    cfg: RunConfig,
    state0,
    weight_source: Callable[[int], IterationWeights] | None,
    k_max: int,
    stop_on_eps: bool,
) -> RunRecord:
    ppsd = cfg.algorithm == "ppsd"
    cols = {c: [] for c in DIAGNOSTIC_COLUMNS}
    states = [state0] if cfg.keep_states else None
    history = WeightHistory() if (ppsd and cfg.keep_weights) else None

    state = state0
    grads = instance.gradients(state.x)

    def record(st, gr) -> float:
        res = _residual(st.x, instance)
        cols["residual"].append(res)
        cols["tracking_residual"].append(_tracking(st, gr))
        cons, gap, est = error_triplet(st, instance)
        cols["consensus_err"].append(cons)
        cols["opt_gap"].append(gap)
        cols["grad_est_err"].append(est)
        return res if instance.x_star is not None else float(np.linalg.norm(st.x))

    res = record(state, grads)
    reason = "max_iterations"
    for k in range(k_max):
        if stop_on_eps and instance.x_star is not None and res < cfg.eps:
            reason = "converged"
            break
        if ppsd:
            w = weight_source(k)
            if history is not None:
                history.append(w)
            state, grads = _ppsd_step(state, w, instance, grads)
        else:
            state, grads = _pushpull_step(state, g, instance, cfg.gamma, grads)
        if states is not None:
            states.append(state)
        res = record(state, grads)
        if not np.isfinite(res) or res > cfg.divergence_threshold:
            reason = "diverged"
            break
    else:
        if stop_on_eps and instance.x_star is not None and res < cfg.eps:
            reason = "converged"

    diagnostics = {c: np.asarray(v, dtype=float) for c, v in cols.items()}
    return RunRecord(
        config=asdict(cfg),
        seed=cfg.seed,
        graph=g,
        instance=instance,
        diagnostics=diagnostics,
        final_state=state,
        stop_reason=reason,
        iterations=state.k,
        weights=history,
        states=states,
    )


def run(
    g: Digraph,
    instance: ProblemInstance,
    gamma: float | None = None,
    eta: float | None = None,
    k_max: int = 5000,
    eps: float = 1e-8,
    seed: int = 0,
    algorithm: str = "ppsd",
    **options,
) -> RunRecord:
    """Run PPSD (or the push-pull baseline) until the residual drops below ``eps``.

    Stops with reason ``converged``, ``max_iterations`` or ``diverged``
    (residual above the divergence threshold). Everything random derives from
    ``seed``; two calls with the same arguments give identical records.
    Set ``eps=0`` to always run ``k_max`` iterations.
    """
    cfg = RunConfig(algorithm=algorithm, gamma=gamma, eta=eta, k_max=k_max, eps=eps, seed=seed, **options)
    return run_config(g, instance, cfg)


def run_config(g: Digraph, instance: ProblemInstance, cfg: RunConfig) -> RunRecord:
    if cfg.algorithm not in ("ppsd", "pushpull"):
        raise InvalidArgument(f"unknown algorithm {cfg.algorithm!r}")
    if g.n != instance.n:
        raise InvalidArgument(f"graph has {g.n} agents but the problem has {instance.n}")
    if not is_strongly_connected(g):
        raise InvalidArgument("communication graph must be strongly connected")
    cfg = cfg.resolved(g, instance)
    if cfg.gamma <= 0:
        raise InvalidArgument("gamma must be positive")
    init_ss, w0_ss, wk_ss = np.random.SeedSequence(cfg.seed).spawn(3)

    if cfg.algorithm == "pushpull":
        x0 = init_state(instance, np.random.default_rng(init_ss), cfg.x0_policy, cfg.init_magnitude).x
        state0 = PushPullState(0, x0, instance.gradients(x0))
        return _execute(g, instance, cfg, state0, None, cfg.k_max, True)

    state0 = init_state(instance, np.random.default_rng(init_ss), cfg.x0_policy, cfg.init_magnitude)
    rng0 = np.random.default_rng(w0_ss)
    rngk = np.random.default_rng(wk_ss)
    d = instance.d

    def source(k: int) -> IterationWeights:
        if k == 0:
            return init_weights_k0(g, d, rng0, cfg.weight_magnitude)
        return weights_k(g, d, cfg.eta, rngk, k=k, gamma=cfg.gamma)

    return _execute(g, instance, cfg, state0, source, cfg.k_max, True)


def replay(
    g: Digraph,
    instance: ProblemInstance,
    state0: NetworkState,
    weights: WeightHistory,
    iterations: int | None = None,
    config: dict | None = None,
) -> RunRecord:
    """Re-execute PPSD from ``state0`` with a recorded weight history.

    Runs exactly ``iterations`` steps (default: the whole history) and keeps
    states and weights.
    """
    steps = len(weights) if iterations is None else iterations
    if steps > len(weights):
        raise InvalidArgument(f"history holds {len(weights)} iterations, {steps} requested")
    base = dict(config or {})
    base.update(algorithm="ppsd", keep_states=True, keep_weights=True, k_max=steps)
    allowed = {f for f in RunConfig.__dataclass_fields__}
    cfg = RunConfig(**{k: v for k, v in base.items() if k in allowed})
    if cfg.gamma is None:
        cfg = cfg.resolved(g, instance)
    return _execute(g, instance, cfg, state0, lambda k: weights[k], steps, False)


def phi_backward(weights: WeightHistory) -> np.ndarray:
    """Backward estimate of the absolute probability sequence of ``R^k``.

    Starts from a uniform guess at the last recorded iteration and applies
    ``phi^k = (R^k)^T phi^(k+1)``. Row ``k`` holds the estimate for iteration
    ``k``; row 0 is NaN because the iteration-0 weights are not stochastic.
    """
    K = len(weights)
    if K == 0:
        raise InvalidArgument("empty weight history")
    n = weights[0].n
    out = np.full((K + 1, n), np.nan)
    out[K] = 1.0 / n
    for k in range(K - 1, 0, -1):
        w = weights[k]
        pat = w.pattern
        r = w.R[:, 0]
        out[k] = pat.gather_cols @ (r * out[k + 1][pat.rows])
    return out
