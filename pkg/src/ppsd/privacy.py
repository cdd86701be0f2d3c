"""Adversary views, shadow-parameter audits, the inference attack and the eavesdropper.

Keys of an information set are tuples ``(agent, field, partner)``. The agent is
the owner of the quantity (the sender of a message, the row of ``R``/``A``,
the column of ``C``); ``partner`` is the other index of a pair field and 0 for
single-agent fields. Message fields:

* ``("x", l)``: ``x_l``
* ``("Lam_y", l)``: ``Lambda_l y_l,alpha``
* ``("C_y", l, p)``: ``C_pl y_l,alpha`` (``p == l`` is the self term)
* ``("y_alpha", j)``: a corrupted agent's own ``y_j,alpha``

Weight fields are ``R``, ``A`` (row owner, column partner), ``C`` (column
owner, row partner), ``Lambda``, ``PhiAlpha`` and ``PhiBeta``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .engine import NetworkState, RunRecord, replay
from .errors import (
    AuditInconclusive,
    AuditPreconditionError,
    InsufficientInformation,
    InvalidArgument,
    ResampleRequired,
)
from .objective import ProblemInstance
from .schedule import WeightHistory

__all__ = [
    "InformationSet",
    "AttackerLog",
    "ShadowSpec",
    "ShadowSetup",
    "Verdict",
    "SweepResult",
    "AttackResult",
    "record_view",
    "eavesdropper_view",
    "construct_shadow",
    "verify_indistinguishable",
    "verify_eavesdropper",
    "privacy_sweep",
    "inference_attack",
    "deviation",
    "audit_report",
    "DENOMINATOR_FLOOR",
]

DENOMINATOR_FLOOR = 1e-6

Key = tuple


@dataclass
class InformationSet:
    k: int
    entries: dict[Key, np.ndarray] = field(default_factory=dict)

    def keys(self) -> list[Key]:
        return sorted(self.entries)

    def flatten(self) -> np.ndarray:
        if not self.entries:
            return np.zeros(0)
        return np.concatenate([self.entries[key] for key in self.keys()])


@dataclass
class AttackerLog:
    """Everything an adversary observed over iterations ``0..kappa``.

    ``kind`` is ``"insider"`` for a corrupted set and ``"eavesdropper"`` for
    an external wiretapper, in which case ``hidden`` names the unobserved link
    ``(sender, receiver)``.
    """

    adversary: frozenset[int]
    kappa: int
    sets: list[InformationSet]
    kind: str = "insider"
    hidden: tuple[int, int] | None = None

    def get(self, k: int, key: Key) -> np.ndarray:
        try:
            return self.sets[k].entries[key]
        except KeyError:
            raise InsufficientInformation(f"{key} was not observed at k={k}") from None

    def __contains__(self, item) -> bool:
        k, key = item
        return 0 <= k < len(self.sets) and key in self.sets[k].entries

    def flatten(self) -> np.ndarray:
        """Per iteration, entries in sorted key order (agent, field, partner), then coordinates."""
        parts = [s.flatten() for s in self.sets]
        return np.concatenate(parts) if parts else np.zeros(0)

    def to_csv(self, other: "AttackerLog | None" = None) -> str:
        """Long-form CSV: one row per observed scalar, optionally beside a second log."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["k", "agent", "field", "partner", "coord", "value"]
        w.writerow(head + (["shadow_value"] if other is not None else []))
        for k, s in enumerate(self.sets):
            for key in s.keys():
                vals = s.entries[key]
                alt = other.sets[k].entries[key] if other is not None else None
                agent, name, partner = key
                for l, v in enumerate(vals):
                    row = [k, agent, name, partner, l, format(float(v), ".17g")]
                    if alt is not None:
                        row.append(format(float(alt[l]), ".17g"))
                    w.writerow(row)
        return buf.getvalue()


def _require_trajectory(run: RunRecord, kappa: int | None) -> int:
    if run.states is None or run.weights is None:
        raise InvalidArgument("the run must keep states and weights to be audited")
    if run.config.get("algorithm", "ppsd") != "ppsd":
        raise InvalidArgument("only PPSD runs can be audited")
    limit = len(run.weights) - 1
    if kappa is None:
        kappa = limit
    if not 0 <= kappa <= limit:
        raise InvalidArgument(f"kappa must lie in [0, {limit}] for this run, got {kappa}")
    return kappa


class _Products:
    """Per-iteration transmitted quantities of every agent."""

    def __init__(self, state: NetworkState, w):
        pat = w.pattern
        d = state.d
        self.pattern = pat
        self.x = state.x
        self.ya = state.y_alpha
        self.lam_y = np.broadcast_to(w.Lam, (pat.n, d)) * state.y_alpha
        self.c_y = np.broadcast_to(w.C, (pat.nnz, d)) * state.y_alpha[pat.cols]
        self.w = w
        self.d = d

    def weight(self, name: str, i: int, j: int | None = None) -> np.ndarray:
        return self.w.block(name, i, j)


def _entry_index(pat) -> dict[tuple[int, int], int]:
    return {(int(r) + 1, int(c) + 1): e for e, (r, c) in enumerate(zip(pat.rows, pat.cols))}


def _messages(P: _Products, idx, sender: int, receiver: int, out: dict) -> None:
    """Message on link sender -> receiver: x, Lambda y_alpha and C_rs y_alpha."""
    out[(sender, "x", 0)] = P.x[sender - 1].copy()
    out[(sender, "Lam_y", 0)] = P.lam_y[sender - 1].copy()
    out[(sender, "C_y", receiver)] = P.c_y[idx[(receiver, sender)]].copy()


def _insider_set(run: RunRecord, A: frozenset[int], k: int, idx) -> InformationSet:
    g = run.graph
    P = _Products(run.states[k], run.weights[k])
    out: dict[Key, np.ndarray] = {}
    for j in sorted(A):
        # own state
        out[(j, "x", 0)] = P.x[j - 1].copy()
        out[(j, "y_alpha", 0)] = P.ya[j - 1].copy()
        out[(j, "Lam_y", 0)] = P.lam_y[j - 1].copy()
        out[(j, "C_y", j)] = P.c_y[idx[(j, j)]].copy()
        for m in g.out_neighbors(j):
            _messages(P, idx, j, m, out)
        for l in g.in_neighbors(j):
            _messages(P, idx, l, j, out)
        # own weights
        out[(j, "Lambda", 0)] = P.weight("Lambda", j)
        out[(j, "PhiAlpha", 0)] = P.weight("PhiAlpha", j)
        out[(j, "PhiBeta", 0)] = P.weight("PhiBeta", j)
        for l in g.in_neighbors(j) | {j}:
            out[(j, "R", l)] = P.weight("R", j, l)
            out[(j, "A", l)] = P.weight("A", j, l)
        for m in g.out_neighbors(j) | {j}:
            out[(j, "C", m)] = P.weight("C", m, j)
        if k >= 1:
            others = [l for l in range(1, g.n + 1) if l != j]
            for l in others:
                out[(l, "Lambda", 0)] = P.weight("Lambda", l)
                out[(l, "PhiAlpha", 0)] = P.weight("PhiAlpha", l)
            for (r, c) in idx:
                if r != j and c != j:
                    out[(r, "R", c)] = P.weight("R", r, c)
                    out[(r, "A", c)] = P.weight("A", r, c)
                    out[(c, "C", r)] = P.weight("C", r, c)
    return InformationSet(k, out)


def record_view(run: RunRecord, adversary, kappa: int | None = None) -> AttackerLog:
    """Extract the corrupted set's information over iterations ``0..kappa``.

    Per corrupted agent ``j`` and iteration ``k``: its own ``x_j``,
    ``y_j,alpha``, ``Lambda_j y_j,alpha`` and ``C_jj y_j,alpha``; every message
    it sends or receives; its own weights (row ``j`` of R and A, column ``j``
    of C, Lambda, PhiAlpha, PhiBeta); and for ``k >= 1`` the Lambda, R, A, C
    and PhiAlpha weights of all other agents. Nothing else is recorded; in
    particular no ``y_beta`` and no weights of other agents at ``k = 0``.
    """
    A = frozenset(int(a) for a in adversary)
    for a in A:
        if not 1 <= a <= run.graph.n:
            raise InvalidArgument(f"adversary id {a} outside [1, {run.graph.n}]")
    kappa = _require_trajectory(run, kappa)
    idx = _entry_index(run.graph.pattern)
    sets = [_insider_set(run, A, k, idx) if A else InformationSet(k) for k in range(kappa + 1)]
    return AttackerLog(A, kappa, sets)


def _hidden_link(g, channel) -> tuple[int, int]:
    if channel is None:
        raise AuditPreconditionError("an eavesdropper audit needs one hidden channel")
    i, m = (int(c) for c in channel)
    if m in g.out_neighbors(i):
        return i, m
    if m in g.in_neighbors(i):
        return m, i
    raise AuditPreconditionError(f"agents {i} and {m} share no channel")


def eavesdropper_view(run: RunRecord, channel, kappa: int | None = None) -> AttackerLog:
    """Every transmitted message except those on the hidden link.

    ``channel = (i, m)`` hides the link ``i -> m`` when ``m`` is an
    out-neighbour of ``i`` and otherwise the link ``m -> i``.
    """
    kappa = _require_trajectory(run, kappa)
    g = run.graph
    hidden = _hidden_link(g, channel)
    idx = _entry_index(g.pattern)
    sets = []
    for k in range(kappa + 1):
        P = _Products(run.states[k], run.weights[k])
        out: dict[Key, np.ndarray] = {}
        for recv, send in sorted(g.edges):
            if (send, recv) == hidden:
                continue
            msg: dict[Key, np.ndarray] = {}
            _messages(P, idx, send, recv, msg)
            out.update(msg)
        sets.append(InformationSet(k, out))
    return AttackerLog(frozenset(), kappa, sets, kind="eavesdropper", hidden=hidden)


@dataclass(frozen=True)
class ShadowSpec:
    """Perturbation of agent ``i``'s gradient by ``delta``, compensated through ``m``.

    ``case`` is ``"I"`` (``m`` out-neighbour of ``i``), ``"II"`` (``m``
    in-neighbour) or ``"auto"`` (I whenever possible). ``delta_alpha`` fixes
    the split ``delta = delta_alpha + delta_beta``; when omitted it starts at
    ``delta / 2`` and is resampled if a denominator falls below the floor.
    ``restricted`` pins ``delta_alpha = 0`` so that only weights never put on
    a wire change (the eavesdropper construction).
    """

    i: int
    m: int
    delta: tuple[float, ...]
    case: str = "auto"
    delta_alpha: tuple[float, ...] | None = None
    restricted: bool = False
    seed: int = 0

    @classmethod
    def make(cls, i, m, delta, case="auto", delta_alpha=None, restricted=False, seed=0) -> "ShadowSpec":
        da = None if delta_alpha is None else tuple(float(v) for v in np.atleast_1d(delta_alpha))
        return cls(int(i), int(m), tuple(float(v) for v in np.atleast_1d(delta)), case, da, restricted, seed)

    def resolved_case(self, g) -> str:
        out_m = self.m in g.out_neighbors(self.i)
        in_m = self.m in g.in_neighbors(self.i)
        if self.case == "auto":
            if out_m:
                return "I"
            if in_m:
                return "II"
            raise AuditPreconditionError(f"agent {self.m} is not a neighbour of agent {self.i}")
        if self.case == "I" and not out_m:
            raise AuditPreconditionError(f"case I needs {self.m} in N_out({self.i})")
        if self.case == "II" and not in_m:
            raise AuditPreconditionError(f"case II needs {self.m} in N_in({self.i})")
        if self.case not in ("I", "II"):
            raise InvalidArgument(f"unknown case {self.case!r}")
        return self.case


@dataclass
class ShadowSetup:
    spec: ShadowSpec
    case: str
    instance: ProblemInstance
    state0: NetworkState
    weights: WeightHistory
    delta_alpha: np.ndarray
    delta_beta: np.ndarray


def _floor_ok(base: np.ndarray, shifted: np.ndarray) -> bool:
    return bool(np.all(np.abs(shifted) >= DENOMINATOR_FLOOR * (1.0 + np.abs(base))))


def _split(spec: ShadowSpec, delta, ya_i, ya_m, yb_i, yb_m) -> tuple[np.ndarray, np.ndarray]:
    def ok(da):
        db = delta - da
        return (
            _floor_ok(ya_i, ya_i + da)
            and _floor_ok(ya_m, ya_m - da)
            and _floor_ok(yb_i, yb_i + db)
            and _floor_ok(yb_m, yb_m - db)
        )

    if spec.restricted:
        da = np.zeros_like(delta)
        if not ok(da):
            raise ResampleRequired("restricted shadow has a vanishing denominator; the split is pinned")
        return da, delta - da
    if spec.delta_alpha is not None:
        da = np.asarray(spec.delta_alpha, dtype=float)
        if da.shape != delta.shape:
            raise InvalidArgument("delta_alpha must have the dimension of delta")
        if not ok(da):
            raise ResampleRequired("the given delta_alpha puts a denominator below the floor")
        return da, delta - da
    da = 0.5 * delta
    rng = np.random.default_rng(spec.seed)
    for _ in range(100):
        if ok(da):
            return da, delta - da
        da = rng.uniform(0.1, 0.9, size=delta.shape) * delta + rng.uniform(-1.0, 1.0, size=delta.shape)
    raise ResampleRequired("no admissible delta_alpha split after 100 draws")


def construct_shadow(run: RunRecord, spec: ShadowSpec, negative_control: bool = False) -> ShadowSetup:
    """Build the shadow problem, initial state and weight history.

    Agent ``i`` gets ``grad f_i + delta`` and ``m`` gets ``grad f_m - delta``.
    With ``r_i = y_i / (y_i + da)`` and ``r_m = y_m / (y_m - da)`` (initial
    alpha substates, per coordinate) the iteration-0 weights become:

    * ``Lambda_i *= r_i``, ``Lambda_m *= r_m``;
    * column ``i`` of C scaled by ``r_i``, column ``m`` by ``r_m``;
    * case I: ``C_mi += delta / (y_i + da)``, ``C_mm -= delta / (y_m - da)``;
      case II: ``C_ii += delta / (y_i + da)``, ``C_im -= delta / (y_m - da)``;
    * ``PhiBeta_i = (PhiBeta_i yb_i + db) / (yb_i + db)``,
      ``PhiBeta_m = (PhiBeta_m yb_m - db) / (yb_m - db)``;
    * ``PhiAlpha_i = (PhiAlpha_i y_i - db) / (y_i + da)``,
      ``PhiAlpha_m = (PhiAlpha_m y_m + db) / (y_m - da)``.

    Everything else, and every weight from iteration 1 on, is copied. The
    ratios are applied multiplicatively so that ``delta = 0`` reproduces the
    original bit for bit. ``negative_control`` drops the ``+delta`` term.
    """
    g = run.graph
    _require_trajectory(run, None)
    case = spec.resolved_case(g)
    i, m = spec.i, spec.m
    s0: NetworkState = run.states[0]
    delta = np.asarray(spec.delta, dtype=float)
    if delta.shape != (s0.d,):
        raise InvalidArgument(f"delta has dimension {delta.size}, the problem has {s0.d}")
    ya_i, ya_m = s0.y_alpha[i - 1], s0.y_alpha[m - 1]
    yb_i, yb_m = s0.y_beta[i - 1], s0.y_beta[m - 1]
    da, db = _split(spec, delta, ya_i, ya_m, yb_i, yb_m)

    den_i, den_m = ya_i + da, ya_m - da
    r_i, r_m = ya_i / den_i, ya_m / den_m
    w0 = run.weights[0].expanded()
    pat = w0.pattern
    Lam, C = w0.Lam.copy(), w0.C.copy()
    PhiA, PhiB = w0.PhiA.copy(), w0.PhiB.copy()

    Lam[i - 1] *= r_i
    Lam[m - 1] *= r_m
    C[pat.cols == i - 1] *= r_i
    C[pat.cols == m - 1] *= r_m
    plus, minus = ((m, i), (m, m)) if case == "I" else ((i, i), (i, m))
    if not negative_control:
        C[pat.index(*plus)] += delta / den_i
    C[pat.index(*minus)] -= delta / den_m

    bden_i, bden_m = yb_i + db, yb_m - db
    PhiB[i - 1] = PhiB[i - 1] * (yb_i / bden_i) + db / bden_i
    PhiB[m - 1] = PhiB[m - 1] * (yb_m / bden_m) - db / bden_m
    PhiA[i - 1] = PhiA[i - 1] * r_i - db / den_i
    PhiA[m - 1] = PhiA[m - 1] * r_m + db / den_m

    w0_shadow = w0.with_fields(Lam=Lam, C=C, PhiA=PhiA, PhiB=PhiB)
    history = run.weights.replaced(0, w0_shadow)

    ya, yb = s0.y_alpha.copy(), s0.y_beta.copy()
    ya[i - 1] = ya_i + da
    yb[i - 1] = yb_i + db
    ya[m - 1] = ya_m - da
    yb[m - 1] = yb_m - db
    state0 = NetworkState(0, s0.x.copy(), ya, yb, None)
    instance = run.instance.with_gradient_shifts({i: delta, m: -delta})
    return ShadowSetup(spec, case, instance, state0, history, da, db)


def deviation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Entrywise ``|a - b| / max(1, |a|, |b|)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return np.abs(a - b) / scale


def _compare(log_a: AttackerLog, log_b: AttackerLog) -> np.ndarray:
    out = np.zeros(len(log_a.sets))
    for k, (sa, sb) in enumerate(zip(log_a.sets, log_b.sets)):
        if sa.keys() != sb.keys():
            raise AuditInconclusive(f"information sets differ in structure at k={k}")
        if sa.entries:
            out[k] = float(np.max(deviation(sa.flatten(), sb.flatten())))
    return out


@dataclass
class Verdict:
    passed: bool
    case: str
    delta: list[float]
    delta_alpha: list[float]
    max_deviation: float
    per_iteration: np.ndarray
    absorption: float
    gradient_shift_error: float
    final_gap: float
    tolerance: float
    kind: str = "insider"
    negative_control: bool = False
    logs: tuple[AttackerLog, AttackerLog] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "case": self.case,
            "delta": self.delta,
            "delta_alpha": self.delta_alpha,
            "negative_control": self.negative_control,
            "verdict": "pass" if self.passed else "fail",
            "max_deviation": self.max_deviation,
            "absorption": self.absorption,
            "gradient_shift_error": self.gradient_shift_error,
            "final_gap": self.final_gap,
            "tolerance": self.tolerance,
            "per_iteration_max_deviation": self.per_iteration.tolist(),
        }


def _check_adversary(g, i: int, m: int, A: frozenset[int]) -> None:
    if i in A:
        raise AuditPreconditionError(f"target agent {i} is itself corrupted")
    nbrs = g.out_neighbors(i) | g.in_neighbors(i)
    if nbrs <= A:
        raise AuditPreconditionError(f"every neighbour of agent {i} is corrupted; nothing can mask its gradient")
    if m in A:
        raise AuditPreconditionError(f"accomplice {m} is corrupted")


def _shadow_run(run: RunRecord, setup: ShadowSetup) -> RunRecord:
    shadow = replay(run.graph, setup.instance, setup.state0, setup.weights, config=run.config)
    if shadow.stop_reason == "diverged":
        raise AuditInconclusive("the shadow run diverged")
    return shadow


def _finish(run, shadow, setup, log_a, log_b, tol, kind, negative_control) -> Verdict:
    per = _compare(log_a, log_b)
    s1, t1 = run.states[1], shadow.states[1]
    absorption = max(
        float(np.max(np.abs(s1.x - t1.x))),
        float(np.max(np.abs(s1.y_alpha - t1.y_alpha))),
        float(np.max(np.abs(s1.y_beta - t1.y_beta))),
    )
    i = setup.spec.i
    x0 = run.states[0].x[i - 1]
    delta = np.asarray(setup.spec.delta)
    shift = setup.instance.local_gradient(i, x0) - run.instance.local_gradient(i, x0)
    grad_err = float(np.max(deviation(shift, delta)))
    final_gap = float(np.max(deviation(run.final_state.x, shadow.final_state.x)))
    max_dev = float(per.max()) if per.size else 0.0
    passed = max_dev <= tol and grad_err <= 1e-12 and final_gap <= tol
    return Verdict(
        passed=passed,
        case=setup.case,
        delta=delta.tolist(),
        delta_alpha=setup.delta_alpha.tolist(),
        max_deviation=max_dev,
        per_iteration=per,
        absorption=absorption,
        gradient_shift_error=grad_err,
        final_gap=final_gap,
        tolerance=tol,
        kind=kind,
        negative_control=negative_control,
        logs=(log_a, log_b),
    )


def verify_indistinguishable(
    run: RunRecord,
    spec: ShadowSpec,
    adversary,
    kappa: int | None = None,
    tolerance: float = 1e-9,
    negative_control: bool = False,
) -> Verdict:
    """Replay the shadow run and compare both adversary views.

    Passes when every logged entry agrees within ``tolerance`` in the mixed
    metric ``|a - b| / max(1, |a|, |b|)``, agent ``i``'s gradients differ by
    ``delta``, and both runs end at the same point.

    Raises:
        AuditPreconditionError: ``i`` or ``m`` corrupted, or all neighbours of ``i`` corrupted.
        AuditInconclusive: the shadow run diverged.
    """
    A = frozenset(int(a) for a in adversary)
    _check_adversary(run.graph, spec.i, spec.m, A)
    setup = construct_shadow(run, spec, negative_control)
    shadow = _shadow_run(run, setup)
    log_a = record_view(run, A, kappa)
    log_b = record_view(shadow, A, log_a.kappa)
    return _finish(run, shadow, setup, log_a, log_b, tolerance, "insider", negative_control)


def verify_eavesdropper(
    run: RunRecord,
    channel,
    delta,
    kappa: int | None = None,
    tolerance: float = 1e-9,
    negative_control: bool = False,
) -> Verdict:
    """Audit against an external wiretapper that misses one channel.

    The shadow keeps ``delta_alpha = 0``: only ``C_mi`` (or ``C_ii``),
    ``C_mm`` (or ``C_im``) and the PhiAlpha/PhiBeta of the two endpoints
    change, none of which travels on a wire, and the only message that changes
    is the one on the hidden link.
    """
    g = run.graph
    sender, receiver = _hidden_link(g, channel)
    i = int(channel[0])
    m = receiver if sender == i else sender
    case = "I" if sender == i else "II"
    spec = ShadowSpec.make(i, m, delta, case=case, restricted=True)
    setup = construct_shadow(run, spec, negative_control)
    shadow = _shadow_run(run, setup)
    log_a = eavesdropper_view(run, channel, kappa)
    log_b = eavesdropper_view(shadow, channel, log_a.kappa)
    return _finish(run, shadow, setup, log_a, log_b, tolerance, "eavesdropper", negative_control)


@dataclass
class SweepResult:
    passed: int
    total: int
    verdicts: list[Verdict]

    @property
    def all_passed(self) -> bool:
        return self.passed == self.total


def privacy_sweep(
    run: RunRecord,
    i: int,
    m: int,
    deltas,
    adversary,
    case: str = "auto",
    kappa: int | None = None,
    tolerance: float = 1e-9,
) -> SweepResult:
    """Audit a family of perturbations; all passing witnesses unbounded diameter."""
    A = frozenset(int(a) for a in adversary)
    _check_adversary(run.graph, i, m, A)
    verdicts = [
        verify_indistinguishable(run, ShadowSpec.make(i, m, dv, case=case), A, kappa, tolerance)
        for dv in deltas
    ]
    return SweepResult(sum(v.passed for v in verdicts), len(verdicts), verdicts)


@dataclass
class AttackResult:
    estimate: np.ndarray
    x_observed: np.ndarray
    kappa: int
    true_gradient: np.ndarray | None
    error: float | None
    run_residual: float
    anchor_error: float

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate.tolist(),
            "x_observed": self.x_observed.tolist(),
            "kappa": self.kappa,
            "true_gradient_at_x_star": None if self.true_gradient is None else self.true_gradient.tolist(),
            "error": self.error,
            "run_residual": self.run_residual,
            "anchor_error": self.anchor_error,
        }


def inference_attack(log: AttackerLog, run: RunRecord, i: int) -> AttackResult:
    """Recover ``grad f_i`` at the limit point from the corrupted neighbours' view.

    Accumulates ``-sum_t (sum_{j in N_in(i)} C_ij y_j,alpha - sum_{j in N_out(i)} C_ji y_i,alpha)``
    over ``t = 0..kappa``, which equals ``grad f_i(x_i^(kappa+1)) - z_i^(kappa+1)``
    with ``z_i = y_i,alpha + y_i,beta`` vanishing at convergence. Only log
    entries are read; the run supplies the ground truth for the error report.

    Raises:
        InsufficientInformation: some neighbour of ``i`` is not corrupted, or
            a needed product is missing from the log.
    """
    g = run.graph
    if log.kind != "insider":
        raise InsufficientInformation("the attack needs an insider log")
    nbrs = g.out_neighbors(i) | g.in_neighbors(i)
    missing = sorted(nbrs - log.adversary)
    if missing:
        raise InsufficientInformation(f"neighbours {missing} of agent {i} are not corrupted")
    total = np.zeros(run.final_state.d)
    for t in range(log.kappa + 1):
        for j in g.in_neighbors(i):
            total += log.get(t, (j, "C_y", i))
        for j in g.out_neighbors(i):
            total -= log.get(t, (i, "C_y", j))
    estimate = -total
    x_obs = log.get(log.kappa, (i, "x", 0))

    s0 = run.states[0]
    z0 = s0.y_alpha[i - 1] + s0.y_beta[i - 1]
    anchor = float(np.max(np.abs(z0 - run.instance.local_gradient(i, s0.x[i - 1]))))
    truth, err = None, None
    if run.instance.x_star is not None:
        truth = run.instance.local_gradient(i, run.instance.x_star)
        err = float(np.linalg.norm(estimate - truth))
    return AttackResult(
        estimate=estimate,
        x_observed=x_obs.copy(),
        kappa=log.kappa,
        true_gradient=truth,
        error=err,
        run_residual=float(run.residuals[-1]),
        anchor_error=anchor,
    )


def audit_report(verdicts: list[Verdict], extra: dict | None = None) -> str:
    body = {"audits": [v.to_dict() for v in verdicts]}
    if extra:
        body.update(extra)
    return json.dumps(body, indent=2, sort_keys=True) + "\n"
