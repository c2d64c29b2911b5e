"""Closed-form benchmark solutions for Brownian straddle problems on the half-line.

All solutions share the call-spread payoff g(x) = clip(x - c1, 0, c2 - c1),
no running reward, and generator u''/2 away from the boundary, so on any
continuation interval the value is a combination of exp(+-sqrt(2a) x).
Free boundaries are found by bracketing root-finders on smooth-fit residuals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .core import InvalidInput, SampledFunction, SolverError, StateSpace, call_spread
from .generators import DiscreteMeasure, StickyReflecting

ROOT_XTOL = 1e-14
AUDIT_POINTS = 10_000


def _check_strikes(c1, c2):
    if not 0 < c1 < c2:
        raise InvalidInput(f"need 0 < c1 < c2, got c1={c1}, c2={c2}", code="invalid-strikes", field="payoff.c1")


def _check_positive(name, value):
    if not value > 0:
        raise InvalidInput(f"{name} must be positive, got {value}", code=f"invalid-{name}", field=name)


def _brackets(fn, lo, hi, n=400):
    """Sign-change brackets of ``fn`` on a uniform scan of [lo, hi]."""
    xs = np.linspace(lo, hi, n + 1)
    vals = np.array([fn(x) for x in xs])
    out = []
    for i in range(n):
        if vals[i] == 0.0:
            out.append((xs[i], xs[i]))
        elif np.isfinite(vals[i]) and np.isfinite(vals[i + 1]) and vals[i] * vals[i + 1] < 0:
            out.append((xs[i], xs[i + 1]))
    if vals[-1] == 0.0:
        out.append((xs[-1], xs[-1]))
    return out


def _root(fn, bracket):
    lo, hi = bracket
    if lo == hi:
        return float(lo)
    return float(optimize.brentq(fn, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500))


# ---------------------------------------------------------------------------
# piecewise-linear sources and the half-line resolvent


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear function on [0, inf) with kinks at ``knots``.

    ``knots`` are sorted positive points with ``values`` there; outside the
    knots the function extends with ``left_slope`` / ``right_slope``.
    """

    knots: tuple
    values: tuple
    left_slope: float = 0.0
    right_slope: float = 0.0

    @classmethod
    def straddle(cls, c1: float, c2: float) -> "PiecewiseLinear":
        _check_strikes(c1, c2)
        return cls((c1, c2), (0.0, c2 - c1))

    @classmethod
    def linear(cls, intercept: float, slope: float) -> "PiecewiseLinear":
        return cls((), (), slope, slope) if intercept == 0 else cls((1.0,), (intercept + slope,), slope, slope)

    def pieces(self):
        """(start, end, intercept, slope) for each linear piece covering [0, inf)."""
        t = list(self.knots)
        v = list(self.values)
        if not t:
            return [(0.0, np.inf, 0.0, self.right_slope)]
        bounds = [0.0, *t, np.inf]
        slopes = [self.left_slope] + [(v[i + 1] - v[i]) / (t[i + 1] - t[i]) for i in range(len(t) - 1)] + [self.right_slope]
        out = []
        for j in range(len(bounds) - 1):
            anchor = j - 1 if j > 0 else 0
            s = slopes[j]
            p = v[anchor] - s * t[anchor]
            if bounds[j + 1] > 0:
                out.append((bounds[j], bounds[j + 1], p, s))
        return [pc for pc in out if pc[1] > pc[0]]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for lo, hi, p, s in self.pieces():
            m = (x >= lo) & (x < hi) if np.isfinite(hi) else x >= lo
            out = np.where(m, p + s * x, out)
        return out


@dataclass(frozen=True)
class HalfLineFunction:
    """u(x) = (p_j + s_j x)/a + A_j e^{k(x - r_j)} + B_j e^{-k(x - l_j)} on piece j."""

    a: float
    pieces: tuple
    A: np.ndarray
    B: np.ndarray

    @property
    def k(self) -> float:
        return float(np.sqrt(2.0 * self.a))

    def _eval(self, x, order: int):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        k = self.k
        for j, (lo, hi, p, s) in enumerate(self.pieces):
            m = (x >= lo) & (x < hi) if np.isfinite(hi) else x >= lo
            if not m.any():
                continue
            xm = x[m]
            ea = np.exp(k * (xm - hi)) if np.isfinite(hi) else np.zeros_like(xm)
            eb = np.exp(-k * (xm - lo))
            if order == 0:
                part = (p + s * xm) / self.a + self.A[j] * ea + self.B[j] * eb
            elif order == 1:
                part = s / self.a + k * (self.A[j] * ea - self.B[j] * eb)
            else:
                part = k**2 * (self.A[j] * ea + self.B[j] * eb)
            out[m] = part
        return out

    def __call__(self, x):
        return self._eval(x, 0)

    def derivative(self, x, order: int = 1):
        return self._eval(x, order)


def halfline_resolvent(a: float, boundary, h: PiecewiseLinear) -> HalfLineFunction:
    """Bounded solution of (a - u''/2) = h on [0, inf) with a boundary condition at 0.

    ``boundary`` is ``"reflected"`` (u'(0) = 0), ``"sticky"`` (u''(0) = 0) or a
    :class:`StickyReflecting` (u''(0) = c u'(0)).
    """
    _check_positive("discount", a)
    pieces = h.pieces()
    m = len(pieces)
    k = np.sqrt(2.0 * a)
    n = 2 * m
    M = np.zeros((n, n))
    rhs = np.zeros(n)
    # unknown layout: A_0..A_{m-1}, B_0..B_{m-1}
    iA = lambda j: j
    iB = lambda j: m + j
    row = 0
    for j in range(m - 1):
        lo, t, p, s = pieces[j]
        lo2, hi2, p2, s2 = pieces[j + 1]
        eb_l = np.exp(-k * (t - lo))  # B_j term at the right end of piece j
        ea_r = np.exp(k * (t - hi2)) if np.isfinite(hi2) else 0.0  # A_{j+1} term at the left end of piece j+1
        # value continuity
        M[row, iA(j)] = 1.0
        M[row, iB(j)] = eb_l
        M[row, iA(j + 1)] = -ea_r
        M[row, iB(j + 1)] = -1.0
        rhs[row] = ((p2 + s2 * t) - (p + s * t)) / a
        row += 1
        # slope continuity
        M[row, iA(j)] = k
        M[row, iB(j)] = -k * eb_l
        M[row, iA(j + 1)] = -k * ea_r
        M[row, iB(j + 1)] = k
        rhs[row] = (s2 - s) / a
        row += 1
    # boundedness at infinity
    M[row, iA(m - 1)] = 1.0
    row += 1
    lo, hi, p, s = pieces[0]
    ea0 = np.exp(k * (0.0 - hi)) if np.isfinite(hi) else 0.0
    if boundary == "reflected":
        M[row, iA(0)] = k * ea0
        M[row, iB(0)] = -k
        rhs[row] = -s / a
    elif boundary == "sticky":
        M[row, iA(0)] = ea0
        M[row, iB(0)] = 1.0
    elif isinstance(boundary, StickyReflecting):
        c = boundary.c
        # u''(0) = 2a * (homogeneous part at 0) = c u'(0)
        M[row, iA(0)] = 2 * a * ea0 - c * k * ea0
        M[row, iB(0)] = 2 * a + c * k
        rhs[row] = c * s / a
    else:
        raise InvalidInput(f"no closed-form resolvent for boundary {boundary!r}", code="unsupported-boundary")
    sol = np.linalg.solve(M, rhs)
    return HalfLineFunction(a, tuple(pieces), sol[:m], sol[m:])


# ---------------------------------------------------------------------------
# result containers


@dataclass
class AnalyticSolution:
    """Base: a callable value on [0, inf) (per regime for regime-switching) plus parameters."""

    a: float
    c1: float
    c2: float

    def params(self) -> dict:
        raise NotImplementedError

    def g(self, x):
        return call_spread(x, self.c1, self.c2)

    def sample(self, space: StateSpace) -> SampledFunction:
        if space.layout == "regime":
            vals = np.concatenate([self.value(space.grid.nodes, regime=i + 1) for i in range(space.outer_size)])
        else:
            vals = self.value(space.x_values())
        return SampledFunction(space, vals)

    def to_json(self, path=None) -> str:
        text = json.dumps(_jsonable(self.params()), sort_keys=True, indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_csv(self, space: StateSpace, path=None) -> str:
        return self.sample(space).to_csv(path)

    def audit(self, hi: float | None = None, n: int = AUDIT_POINTS) -> float:
        """min(u - g) over an audit grid of [0, hi]."""
        hi = hi if hi is not None else self.c2 + 2.0
        x = np.linspace(0.0, hi, n)
        regimes = getattr(self, "regimes", (None,))
        return float(min(np.min(self.value(x, regime=r) - self.g(x)) if r else np.min(self.value(x) - self.g(x)) for r in regimes))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


@dataclass
class AnalyticReflectedSolution(AnalyticSolution):
    C: float = 0.0
    x_star: float = 0.0
    boundary: str = "reflected"

    def basis(self, x, order: int = 0):
        k = np.sqrt(2 * self.a)
        x = np.asarray(x, dtype=float)
        if self.boundary == "reflected":
            f = [np.cosh, np.sinh][order % 2]
        else:
            f = [np.sinh, np.cosh][order % 2]
        return 2.0 * k**order * f(k * x)

    def value(self, x, regime=None):
        x = np.asarray(x, dtype=float)
        return np.where(x < self.x_star, self.C * self.basis(x), self.g(x))

    def params(self) -> dict:
        return {"boundary": self.boundary, "a": self.a, "c1": self.c1, "c2": self.c2, "C": self.C, "x_star": self.x_star}


def _envelope_solution(a, c1, c2, boundary) -> AnalyticReflectedSolution:
    _check_positive("discount", a)
    _check_strikes(c1, c2)
    sol = AnalyticReflectedSolution(a, c1, c2, boundary=boundary)
    # smooth fit on the linear segment: C phi(x) = x - c1, C phi'(x) = 1
    fit = lambda x: (x - c1) * sol.basis(x, 1) - sol.basis(x)
    br = _brackets(fit, c1, c2, 200)
    if br:
        x_star = _root(fit, br[0])
    else:
        x_star = c2  # tangency degenerates into the kink of g
    sol.x_star = x_star
    sol.C = float(call_spread(x_star, c1, c2) / sol.basis(x_star))
    if sol.C <= 0:
        raise SolverError("no positive tangency multiple", code="no-tangency")
    return sol


def reflected_straddle_solution(a: float, c1: float, c2: float) -> AnalyticReflectedSolution:
    """Reflected BM: V = C (e^{kx} + e^{-kx}) on [0, x*), V = g beyond, k = sqrt(2a)."""
    return _envelope_solution(a, c1, c2, "reflected")


def sticky_straddle_solution(a: float, c1: float, c2: float) -> AnalyticReflectedSolution:
    """BM absorbed at 0: V = C (e^{kx} - e^{-kx}) on [0, x*), V = g beyond."""
    return _envelope_solution(a, c1, c2, "sticky")


# ---------------------------------------------------------------------------
# jump at the boundary


@dataclass
class JumpCandidate:
    x_star: float
    C1: float
    C2: float
    kind: str  # "smooth-fit" or "kink"
    min_slack: float
    linkage_residual: float

    @property
    def value_at_zero(self) -> float:
        return self.C1 + self.C2


@dataclass
class AnalyticJumpSolution(AnalyticSolution):
    lam: float = 1.0
    jump_dist: DiscreteMeasure | None = None
    C1: float = 0.0
    C2: float = 0.0
    x_star: float = 0.0
    kind: str = "smooth-fit"
    candidates: list = field(default_factory=list)

    def value(self, x, regime=None):
        x = np.asarray(x, dtype=float)
        k = np.sqrt(2 * self.a)
        cont = self.C1 * np.exp(-k * np.minimum(x, self.x_star)) + self.C2 * np.exp(k * np.minimum(x, self.x_star))
        return np.where(x < self.x_star, cont, self.g(x))

    def linkage_residual(self) -> float:
        return _linkage(self.a, self.lam, self.jump_dist, self.c1, self.c2, self.x_star, self.C1, self.C2)

    def params(self) -> dict:
        return {
            "a": self.a,
            "lambda": self.lam,
            "c1": self.c1,
            "c2": self.c2,
            "jump_dist": self.jump_dist.to_dict(),
            "C1": self.C1,
            "C2": self.C2,
            "x_star": self.x_star,
            "kind": self.kind,
            "candidates": [
                {"x_star": c.x_star, "C1": c.C1, "C2": c.C2, "kind": c.kind, "min_slack": c.min_slack, "selected": c.x_star == self.x_star and c.kind == self.kind}
                for c in self.candidates
            ],
            "selection": "largest value at 0 among candidates with u >= g",
        }


def _linkage(a, lam, F, c1, c2, x_star, C1, C2) -> float:
    """a u(0) - lam (int u dF - u(0)) with u = g beyond x*."""
    k = np.sqrt(2 * a)
    y = F.atoms
    uy = np.where(y < x_star, C1 * np.exp(-k * np.minimum(y, x_star)) + C2 * np.exp(k * np.minimum(y, x_star)), call_spread(y, c1, c2))
    return float(a * (C1 + C2) - lam * (F.weights @ uy) + lam * (C1 + C2))


def _smooth_fit_coeffs(a, c1, x):
    k = np.sqrt(2 * a)
    C1 = 0.5 * ((x - c1) - 1.0 / k) * np.exp(k * x)
    C2 = 0.5 * ((x - c1) + 1.0 / k) * np.exp(-k * x)
    return C1, C2


def jump_boundary_solution(a: float, lam: float, F: DiscreteMeasure, c1: float, c2: float) -> AnalyticJumpSolution:
    """BM that waits Exp(lam) at 0 and then jumps to an F-distributed point.

    Candidates are smooth-fit roots of the boundary linkage on (c1, c2) plus a
    kink candidate x* = c2 (value matching and linkage only). The selected
    candidate is the one with the largest value among those dominating g.
    """
    _check_positive("discount", a)
    _check_positive("lambda", lam)
    _check_strikes(c1, c2)
    if np.any(F.atoms <= 0):
        raise InvalidInput("jump atoms must be positive", code="invalid-measure")
    k = np.sqrt(2 * a)

    def residual(x):
        C1, C2 = _smooth_fit_coeffs(a, c1, x)
        return _linkage(a, lam, F, c1, c2, x, C1, C2)

    probe = AnalyticJumpSolution(a, c1, c2, lam=lam, jump_dist=F)
    cands = []

    def add(x, C1, C2, kind):
        probe.C1, probe.C2, probe.x_star = C1, C2, x
        slack = probe.audit()
        cands.append(JumpCandidate(float(x), float(C1), float(C2), kind, slack, abs(residual(x)) if kind == "smooth-fit" else abs(_linkage(a, lam, F, c1, c2, x, C1, C2))))

    # residual jumps where x* crosses an atom, so brentq brackets straddling an atom are rejected
    for br in _brackets(residual, c1 + 1e-12, c2, 2000):
        x = _root(residual, br)
        if abs(residual(x)) <= 1e-8:
            add(x, *_smooth_fit_coeffs(a, c1, x), "smooth-fit")
    # kink at c2: C1 e^{-k c2} + C2 e^{k c2} = c2 - c1 together with the linkage
    y = F.atoms
    inside = y < c2
    row = np.array([a + lam, a + lam]) - lam * np.array([F.weights[inside] @ np.exp(-k * y[inside]), F.weights[inside] @ np.exp(k * y[inside])])
    M = np.array([[np.exp(-k * c2), np.exp(k * c2)], row])
    rhs = np.array([c2 - c1, lam * (F.weights[~inside] @ call_spread(y[~inside], c1, c2))])
    C1, C2 = np.linalg.solve(M, rhs)
    add(c2, C1, C2, "kink")

    valid = [c for c in cands if c.min_slack >= -1e-9]
    if not valid:
        raise SolverError(
            "no candidate free boundary dominates the payoff", code="no-root-in-bracket"
        )
    best = max(valid, key=lambda c: c.value_at_zero)
    return AnalyticJumpSolution(a, c1, c2, lam, F, best.C1, best.C2, best.x_star, best.kind, cands)


# ---------------------------------------------------------------------------
# regime switching with boundary behaviour depending on the regime


@dataclass
class AnalyticRegimeSolution(AnalyticSolution):
    q1: float = 0.0
    q2: float = 0.0
    l: int = 2
    boundaries: tuple = ("sticky", "reflected")
    A: np.ndarray = None
    B: np.ndarray = None
    x1_star: float = 0.0
    x2_star: float = 0.0
    particular_boundary: object = None
    regimes: tuple = (1, 2)

    @property
    def beta(self) -> np.ndarray:
        return regime_betas(self.a, self.q1, self.q2)

    @property
    def alpha(self) -> np.ndarray:
        return regime_alphas(self.a, self.q1, self.q2)

    @property
    def gamma(self) -> np.ndarray:
        return np.sqrt(2 * (self.a + np.array([self.q1, self.q2])))

    def _particular(self):
        ql = (self.q1, self.q2)[self.l - 1]
        if getattr(self, "_v", None) is None:
            self._v = halfline_resolvent(self.a + ql, self.particular_boundary, PiecewiseLinear.straddle(self.c1, self.c2))
        return self._v, ql

    def _inner(self, x, regime, order=0):
        b = self.beta
        return (self.alpha[regime - 1] * self.A * b**order) @ np.exp(np.multiply.outer(b, x))

    def _outer(self, x, order=0):
        gl = self.gamma[self.l - 1]
        v, ql = self._particular()
        hom = self.B[0] * gl**order * np.exp(gl * x) + self.B[1] * (-gl) ** order * np.exp(-gl * x)
        return hom + ql * v.derivative(x, order) if order else hom + ql * v(x)

    def value(self, x, regime: int = 1):
        x = np.asarray(x, dtype=float)
        inner = self._inner(x, regime)
        if regime == self.l:
            mid = self._outer(np.clip(x, self.x1_star, self.x2_star))
            out = np.where(x < self.x1_star, inner, np.where(x < self.x2_star, mid, self.g(x)))
        else:
            out = np.where(x < self.x1_star, inner, self.g(x))
        return out

    def derivative(self, x, regime: int = 1):
        x = np.asarray(x, dtype=float)
        d_inner = self._inner(x, regime, 1)
        gp = ((x > self.c1) & (x < self.c2)).astype(float)
        if regime == self.l:
            mid = self._outer(np.clip(x, self.x1_star, self.x2_star), 1)
            return np.where(x < self.x1_star, d_inner, np.where(x < self.x2_star, mid, gp))
        return np.where(x < self.x1_star, d_inner, gp)

    def linkage_residuals(self) -> np.ndarray:
        M, rhs = _regime_system(self, self.x1_star, self.x2_star)
        return M @ np.concatenate([self.A, self.B]) - rhs

    def params(self) -> dict:
        return {
            "a": self.a,
            "q1": self.q1,
            "q2": self.q2,
            "c1": self.c1,
            "c2": self.c2,
            "l": self.l,
            "boundaries": list(self.boundaries),
            "A": list(self.A),
            "B": list(self.B),
            "x1_star": self.x1_star,
            "x2_star": self.x2_star,
            "beta": list(self.beta),
            "gamma": list(self.gamma),
            "alpha": self.alpha.tolist(),
        }


def regime_betas(a, q1, q2) -> np.ndarray:
    k = np.sqrt(2 * a)
    k3 = np.sqrt(2 * (a + q1 + q2))
    return np.array([k, -k, k3, -k3])


def regime_alphas(a, q1, q2) -> np.ndarray:
    """Rows: regime 1 and regime 2 weights of each exponential e^{beta_k x}.

    Regime 1's equation (a + q1 - u''/2) u1 = q1 u2 gives the regime-2 weight
    (a + q1 - beta_k^2/2)/q1: 1 for the slow pair, -q2/q1 for the fast pair.
    """
    b = regime_betas(a, q1, q2)
    return np.vstack([np.ones(4), (a + q1 - 0.5 * b**2) / q1])


def _boundary_row(alpha_row, beta, kind):
    if kind == "reflected":
        return alpha_row * beta
    if kind == "sticky":
        return alpha_row * beta**2
    raise InvalidInput(f"regime boundary must be 'sticky' or 'reflected', got {kind!r}", code="unsupported-boundary")


def _regime_system(sol: AnalyticRegimeSolution, x1, x2):
    """Six linear conditions on (A1..A4, B1, B2) for trial free boundaries x1 < x2."""
    b, al, gam = sol.beta, sol.alpha, sol.gamma
    l, o = sol.l, 3 - sol.l
    gl = gam[l - 1]
    v, ql = sol._particular()
    g = lambda x: float(call_spread(x, sol.c1, sol.c2))
    M = np.zeros((6, 6))
    rhs = np.zeros(6)
    M[0, :4] = _boundary_row(al[0], b, sol.boundaries[0])
    M[1, :4] = _boundary_row(al[1], b, sol.boundaries[1])
    # regime 3-l meets g at x1
    M[2, :4] = al[o - 1] * np.exp(b * x1)
    rhs[2] = g(x1)
    # regime l: C^1 across x1
    M[3, :4] = al[l - 1] * np.exp(b * x1)
    M[3, 4:] = [-np.exp(gl * x1), -np.exp(-gl * x1)]
    rhs[3] = ql * float(v(x1))
    M[4, :4] = al[l - 1] * b * np.exp(b * x1)
    M[4, 4:] = [-gl * np.exp(gl * x1), gl * np.exp(-gl * x1)]
    rhs[4] = ql * float(v.derivative(x1))
    # regime l meets g at x2
    M[5, 4:] = [np.exp(gl * x2), np.exp(-gl * x2)]
    rhs[5] = g(x2) - ql * float(v(x2))
    return M, rhs


def _solve_trial(sol, x1, x2):
    M, rhs = _regime_system(sol, x1, x2)
    s = np.linalg.solve(M, rhs)
    sol.A, sol.B, sol.x1_star, sol.x2_star = s[:4], s[4:], x1, x2
    return sol


def regime_switching_solution(
    a: float,
    q1: float,
    q2: float,
    c1: float,
    c2: float,
    l: int = 2,
    boundaries=("sticky", "reflected"),
    particular_boundary=None,
) -> AnalyticRegimeSolution:
    """Two-regime BM whose boundary behaviour at 0 depends on the regime.

    Regime 3-l stops first, at x1*; regime l continues on [x1*, x2*) and
    stops at x2*. Both are pinned by smooth fit with a nested bracketing
    search: the inner root places x2* for given x1*, the outer root places x1*.
    """
    _check_positive("discount", a)
    _check_positive("q1", q1)
    _check_positive("q2", q2)
    _check_strikes(c1, c2)
    if l not in (1, 2):
        raise InvalidInput("l must be 1 or 2", field="l")
    pb = particular_boundary if particular_boundary is not None else boundaries[l - 1]
    sol = AnalyticRegimeSolution(a, c1, c2, q1, q2, l, tuple(boundaries), particular_boundary=pb)
    o = 3 - l

    def n2(x1, x2):
        _solve_trial(sol, x1, x2)
        return float(sol._outer(np.array([x2]), 1)[0]) - 1.0

    def x2_of(x1):
        br = _brackets(lambda x2: n2(x1, x2), x1 + 1e-9, c2, 48)
        if not br:
            return None
        return _root(lambda x2: n2(x1, x2), br[0])

    def n1(x1):
        x2 = x2_of(x1)
        if x2 is None:
            return np.nan
        _solve_trial(sol, x1, x2)
        return float(sol._inner(np.array([x1]), o, 1)[0]) - 1.0

    br = _brackets(n1, c1 + 1e-6, c2 - 1e-6, 32)
    if not br:
        raise SolverError("no bracket for the regime free boundaries", code="bracket-failure")
    x1 = _root(n1, br[0])
    x2 = x2_of(x1)
    _solve_trial(sol, x1, x2)
    return sol
