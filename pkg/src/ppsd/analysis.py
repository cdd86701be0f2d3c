"""Convergence-rate fitting and the theoretical step-size machinery.

The theory constants grow like powers of ``1/eta`` and are handled in log
space. ``build_U`` assembles the companion-block bound matrix ``U(gamma)``
whose spectral radius certifies R-linear convergence when below one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AdvisoryEmpty, ConstantsIntractable, FitUndefined, InvalidArgument

__all__ = [
    "RateFit",
    "TheoryConstants",
    "AdvisorReport",
    "fit_linear_rate",
    "theoretical_constants",
    "build_U",
    "spectral_radius",
    "step_size_advisor",
    "N_CAP",
]

N_CAP = 5000


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit ``log r_k ~ log c + k log lambda`` over ``[start, stop)``.

    ``fit_residual`` is the root-mean-square deviation of ``log10 r_k`` from
    the fitted line, i.e. the typical misfit in decades.
    """

    lam: float
    c: float
    start: int
    stop: int
    fit_residual: float

    @property
    def points(self) -> int:
        return self.stop - self.start

    def to_dict(self) -> dict:
        return asdict(self)


def fit_linear_rate(residuals, burn_in: float | int | None = None, stop: int | None = None) -> RateFit:
    """Fit a geometric rate to a residual series.

    Args:
        residuals: residual per iteration, index = k.
        burn_in: iterations to skip. A float in [0, 1) is a fraction of the
            series length; the default skips the first 10%.
        stop: exclusive end of the window (default: whole series).

    Raises:
        FitUndefined: fewer than 10 points in the window, or a non-positive
            or non-finite residual inside it.
    """
    r = np.asarray(residuals, dtype=float)
    end = r.size if stop is None else min(int(stop), r.size)
    if burn_in is None:
        burn_in = 0.1
    start = int(math.floor(burn_in * end)) if isinstance(burn_in, float) and burn_in < 1 else int(burn_in)
    if end - start < 10:
        raise FitUndefined(f"need at least 10 points after burn-in, have {max(end - start, 0)}")
    window = r[start:end]
    if not np.all(np.isfinite(window)) or np.any(window <= 0):
        raise FitUndefined("residuals in the fit window must be finite and strictly positive")
    k = np.arange(start, end, dtype=float)
    logs = np.log(window)
    slope, intercept = np.polyfit(k, logs, 1)
    misfit = (logs - (slope * k + intercept)) / math.log(10)
    return RateFit(
        lam=float(math.exp(slope)),
        c=float(math.exp(intercept)),
        start=start,
        stop=end,
        fit_residual=float(np.sqrt(np.mean(misfit**2))),
    )


@dataclass(frozen=True)
class TheoryConstants:
    """Ergodicity constants of the row- and column-stochastic chains.

    Quantities that can overflow are kept as natural logs (``log_*``); the
    plain attributes are their exponentials and may be ``inf``. ``tractable``
    is False when ``N_R`` or ``N_P`` exceeds the cap, in which case the
    offending ``N`` holds the smallest admissible integer that was found
    (possibly larger than the cap, or -1 when not representable).
    """

    n: int
    eta: float
    L: float
    mu: float
    log_Q_R: float
    r_R: float
    N_R: int
    log_Q_P: float
    r_P: float
    N_P: int
    log_q1: float
    log_q2: float
    q3: float
    cap: int = N_CAP
    tractable: bool = True

    @property
    def N_bar(self) -> int:
        return max(self.N_R, self.N_P)

    @property
    def Q_R(self) -> float:
        return _exp(self.log_Q_R)

    @property
    def Q_P(self) -> float:
        return _exp(self.log_Q_P)

    @property
    def q1(self) -> float:
        return _exp(self.log_q1)

    @property
    def q2(self) -> float:
        return _exp(self.log_q2)

    @classmethod
    def synthetic(
        cls,
        r_R: float = 0.5,
        r_P: float = 0.5,
        q1: float = 1.0,
        q2: float = 1.0,
        q3: float = 1.0,
        N_bar: int = 2,
        n: int = 2,
        L: float = 1.0,
        eta: float = 0.5,
    ) -> "TheoryConstants":
        """Hand-picked constants for exercising ``U(gamma)`` (``mu = n*q3``)."""
        if not (0 < r_R < 1 and 0 < r_P < 1):
            raise InvalidArgument("synthetic r_R and r_P must lie in (0, 1)")
        if N_bar < 2:
            raise InvalidArgument("U(gamma) needs N_bar >= 2")
        return cls(
            n=n,
            eta=eta,
            L=L,
            mu=n * q3,
            log_Q_R=float("nan"),
            r_R=r_R,
            N_R=N_bar,
            log_Q_P=float("nan"),
            r_P=r_P,
            N_P=N_bar,
            log_q1=math.log(q1),
            log_q2=math.log(q2),
            q3=q3,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(N_bar=self.N_bar, Q_R=self.Q_R, Q_P=self.Q_P, q1=self.q1, q2=self.q2)
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in out.items()}


def _exp(x: float) -> float:
    if math.isnan(x):
        return float("nan")
    return math.exp(x) if x < 709.0 else float("inf")


def _smallest_N(log_Q: float, log_base: float, span: int) -> int:
    """Smallest integer N with ``log_Q + (N-1)/span * log_base < 0``.

    ``log_base`` is ``log(1 - x)`` with ``x`` in (0, 1); returns -1 when the
    answer is not representable.
    """
    if log_Q < 0:
        return 1
    if log_base >= 0:
        return -1
    t = span * log_Q / (-log_base)
    if not math.isfinite(t) or t > 1e15:
        return -1
    return int(math.floor(t)) + 2


def theoretical_constants(n: int, eta: float, L: float, mu: float, cap: int = N_CAP) -> TheoryConstants:
    """Evaluate ``Q_R, r_R, N_R, Q_P, r_P, N_P, q1, q2, q3``.

    With ``m = 2n`` sub-agents:

    * ``Q_R = 2n (1 + eta^-(n-1)) / (1 - eta^(n-1))`` and ``N_R`` is the
      smallest integer with ``r_R = Q_R (1 - eta^(n-1))^((N_R-1)/(n-1)) < 1``;
    * ``Q_P = 2m (1 + (m eta^-m)^(m-1)) / (1 - (eta^m / m)^(n-1))`` and
      ``N_P`` the smallest integer with
      ``r_P = Q_P (1 - (eta^m / m)^(m-1))^((N_P-1)/(m-1)) < 1``;
    * ``q1 = m sqrt(n) L Q_P / eta^(m-1)``, ``q2 = Q_R sqrt(n)``, ``q3 = mu / n``.

    Intractability (an ``N`` above ``cap``) is flagged, not raised.
    """
    if n < 2:
        raise InvalidArgument("theory constants need n >= 2")
    if not 0 < eta < 1:
        raise InvalidArgument(f"eta must lie in (0, 1), got {eta}")
    if L <= 0 or mu <= 0:
        raise InvalidArgument("L and mu must be positive")
    m = 2 * n
    le = math.log(eta)

    # row-stochastic chain
    log_a = (n - 1) * le  # log eta^(n-1)
    log_Q_R = math.log(2 * n) + np.logaddexp(0.0, -log_a) - math.log(-math.expm1(log_a))
    log_base_R = math.log1p(-math.exp(log_a))
    N_R = _smallest_N(log_Q_R, log_base_R, n - 1)

    # augmented column-stochastic chain
    log_b = m * le - math.log(m)  # log(eta^m / m)
    log_Q_P = (
        math.log(2 * m)
        + np.logaddexp(0.0, (m - 1) * (math.log(m) - m * le))
        - math.log(-math.expm1((n - 1) * log_b))
    )
    log_base_P = math.log1p(-math.exp((m - 1) * log_b))
    N_P = _smallest_N(log_Q_P, log_base_P, m - 1)

    def r_at(log_Q, log_base, span, N):
        if N < 0:
            return float("nan")
        return _exp(log_Q + (N - 1) / span * log_base)

    r_R = r_at(log_Q_R, log_base_R, n - 1, N_R)
    r_P = r_at(log_Q_P, log_base_P, m - 1, N_P)
    log_q1 = math.log(m) + 0.5 * math.log(n) + math.log(L) + log_Q_P - (m - 1) * le
    log_q2 = log_Q_R + 0.5 * math.log(n)
    tractable = 0 < N_R <= cap and 0 < N_P <= cap
    return TheoryConstants(
        n=n,
        eta=eta,
        L=L,
        mu=mu,
        log_Q_R=float(log_Q_R),
        r_R=r_R,
        N_R=N_R,
        log_Q_P=float(log_Q_P),
        r_P=r_P,
        N_P=N_P,
        log_q1=float(log_q1),
        log_q2=float(log_q2),
        q3=mu / n,
        cap=cap,
        tractable=tractable,
    )


def _blocks(gamma: float, c: TheoryConstants):
    n, L = c.n, c.L
    q1, q2, q3 = c.q1, c.q2, c.q3
    eta_pow = c.eta ** (n - 1)
    top = [gamma * n * L * q2, gamma * n * L * q2, gamma * q2]
    bottom = [2 * q1 + gamma * n * L * q1, gamma * n * L * q1, gamma * q1]
    Ua = np.array([top, [gamma * n * L, 1 - gamma * eta_pow * q3, gamma * n], bottom])
    Ub = np.array([top, [0.0, 0.0, 0.0], bottom])
    Uc = Ub.copy()
    Uc[0, 0] += c.r_R
    Uc[2, 2] += c.r_P
    return Ua, Ub, Uc


def build_U(gamma: float, constants: TheoryConstants) -> np.ndarray:
    """Assemble the ``3 N_bar x 3 N_bar`` matrix ``U(gamma)``.

    Top block row ``[U_a, U_b, ..., U_b, U_c]``, identity blocks on the block
    subdiagonal, zeros elsewhere.
    """
    c = constants
    if not c.tractable:
        raise ConstantsIntractable(f"N_R={c.N_R}, N_P={c.N_P} exceed the cap {c.cap}")
    N = c.N_bar
    if N < 2:
        raise InvalidArgument("U(gamma) needs N_bar >= 2")
    if gamma < 0:
        raise InvalidArgument("gamma must be nonnegative")
    Ua, Ub, Uc = _blocks(gamma, c)
    if not (np.all(np.isfinite(Ua)) and np.all(np.isfinite(Uc))):
        raise ConstantsIntractable("theory constants overflow double precision")
    U = np.zeros((3 * N, 3 * N))
    U[0:3, 0:3] = Ua
    for b in range(1, N - 1):
        U[0:3, 3 * b : 3 * b + 3] = Ub
    U[0:3, 3 * (N - 1) :] = Uc
    U[3:, :-3] += np.eye(3 * (N - 1))
    return U


def spectral_radius(M, tol: float = 1e-10, max_iter: int = 20000, method: str = "auto") -> float:
    """Spectral radius of a square matrix.

    ``method="power"`` runs power iteration from the all-ones vector, which
    suits nonnegative (Perron) matrices; ``"dense"`` takes the largest
    eigenvalue modulus from a full eigendecomposition. ``"auto"`` tries power
    iteration and falls back to the dense solver when the matrix has negative
    entries or the iteration stalls (e.g. periodic or defective cases).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument("spectral radius needs a square matrix")
    if method not in ("auto", "power", "dense"):
        raise InvalidArgument(f"unknown method {method!r}")
    if method == "dense" or (method == "auto" and np.any(M < 0)):
        return float(np.max(np.abs(np.linalg.eigvals(M))))
    x = np.ones(M.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        y = M @ x
        norm = np.max(np.abs(y))
        if norm == 0:
            return 0.0
        y /= norm
        # Collatz-Wielandt style estimate on the positive part
        if abs(norm - lam) <= tol * max(1.0, norm) and np.max(np.abs(y - x)) <= math.sqrt(tol):
            return float(norm)
        lam, x = norm, y
    if method == "power":
        return float(lam)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class AdvisorReport:
    feasible: bool
    gamma: float | None
    rho: float | None
    gamma_upper: float | None
    rho_upper: float | None
    constants: TheoryConstants
    scanned: int
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "gamma": self.gamma,
            "rho": self.rho,
            "gamma_upper": self.gamma_upper,
            "rho_upper": self.rho_upper,
            "scanned": self.scanned,
            "note": self.note,
            "constants": self.constants.to_dict(),
        }


def step_size_advisor(
    constants: TheoryConstants,
    gamma_range: tuple[float, float] = (1e-12, 1.0),
    grid: int = 61,
    rel_tol: float = 1e-6,
) -> AdvisorReport:
    """Largest step size in ``gamma_range`` with ``rho(U(gamma)) < 1``.

    A log-spaced scan brackets the last feasible grid point; bisection in log
    space then refines it until the bracket is within ``rel_tol``. The report
    carries the certified ``gamma`` (rho < 1) and the first infeasible value
    above it.

    Raises:
        ConstantsIntractable: the constants exceed the cap.
        AdvisoryEmpty: no scanned gamma gives rho < 1. The constants are very
            conservative, so this is the common outcome on realistic networks.
            Both exceptions carry a ``report`` with ``feasible=False``.
    """
    lo, hi = gamma_range
    if not 0 < lo < hi:
        raise InvalidArgument("gamma range must satisfy 0 < low < high")
    if not constants.tractable:
        note = "constants intractable at the cap"
        raise ConstantsIntractable(note, AdvisorReport(False, None, None, None, None, constants, 0, note))
    try:
        build_U(lo, constants)
    except ConstantsIntractable as exc:
        exc.report = AdvisorReport(False, None, None, None, None, constants, 0, str(exc))
        raise

    def rho(g):
        return spectral_radius(build_U(g, constants), method="dense")

    gammas = np.geomspace(lo, hi, grid)
    rhos = [rho(g) for g in gammas]
    feasible = [i for i, r in enumerate(rhos) if r < 1.0]
    if not feasible:
        note = "no gamma in range gives rho < 1"
        raise AdvisoryEmpty(note, AdvisorReport(False, None, None, None, None, constants, grid, note))
    best = feasible[-1]
    if best == grid - 1:
        return AdvisorReport(True, float(gammas[best]), rhos[best], None, None, constants, grid, "upper end of range is feasible")
    a, b = math.log(gammas[best]), math.log(gammas[best + 1])
    ra, rb = rhos[best], rhos[best + 1]
    while b - a > rel_tol:
        mid = 0.5 * (a + b)
        rm = rho(math.exp(mid))
        if rm < 1.0:
            a, ra = mid, rm
        else:
            b, rb = mid, rm
    return AdvisorReport(True, math.exp(a), ra, math.exp(b), rb, constants, grid)
