"""Sparse rate matrices approximating Feller generators.

Every builder returns a :class:`GeneratorMatrix` whose off-diagonal entries are
transition rates and whose diagonal is minus the total exit rate, so the
discrete positive maximum principle holds by construction. Diffusion parts are
finite-volume stencils, drifts are upwinded and jumps are snapped to the
nearest grid node (clipped to the truncation window).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy import integrate, optimize

from .core import BoundaryKind, Grid1D, InvalidInput, StateSpace

ROW_SUM_TOL = 1e-10


class InvariantViolation(InvalidInput):
    code = "invariant-violation"


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    space: StateSpace
    entries: sp.csr_matrix
    conservative: bool = field(init=False)

    def __post_init__(self):
        m = sp.csr_matrix(self.entries, dtype=float)
        m.sum_duplicates()
        m.eliminate_zeros()
        if m.shape != (self.space.size, self.space.size):
            raise InvalidInput(
                f"matrix shape {m.shape} does not match state space size {self.space.size}",
                code="space-mismatch",
            )
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "conservative", bool(np.all(np.abs(self.row_sums()) <= ROW_SUM_TOL)))

    @property
    def size(self) -> int:
        return self.space.size

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=1)).ravel()

    def diagonal(self) -> np.ndarray:
        return self.entries.diagonal()

    def exit_rates(self) -> np.ndarray:
        return -self.diagonal()

    def __matmul__(self, u):
        return self.entries @ np.asarray(getattr(u, "values", u), dtype=float)

    def dense(self) -> np.ndarray:
        return self.entries.toarray()

    def header(self) -> dict:
        return {
            "space": self.space.describe(),
            "conservative": self.conservative,
            "nnz": int(self.entries.nnz),
        }

    def write_triplets(self, path) -> None:
        """Text export: a ``# {json header}`` line, then ``row,col,rate`` rows."""
        coo = self.entries.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = ["# " + json.dumps(self.header(), sort_keys=True), "row,col,rate"]
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            lines.append(f"{r},{c},{format(float(v), '.17g')}")
        Path(path).write_text("\n".join(lines) + "\n", newline="")


def read_triplets(path, space: StateSpace) -> GeneratorMatrix:
    text = Path(path).read_text().splitlines()
    header = json.loads(text[0][2:])
    if header["space"]["shape"] != list(space.shape):
        raise InvalidInput("triplet file does not match the given state space", code="space-mismatch")
    body = np.array([[float(t) for t in line.split(",")] for line in text[2:] if line], ndmin=2)
    if body.size == 0:
        return GeneratorMatrix(space, sp.csr_matrix((space.size, space.size)))
    rows, cols, vals = body[:, 0].astype(int), body[:, 1].astype(int), body[:, 2]
    return GeneratorMatrix(space, sp.csr_matrix((vals, (rows, cols)), shape=(space.size, space.size)))


@dataclass
class GeneratorReport:
    violations: list
    absorbing_rows: list
    conservative: bool

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "conservative": self.conservative,
            "violations": self.violations,
            "absorbing_rows": self.absorbing_rows,
        }


def validate_generator(G: GeneratorMatrix, max_listed: int = 50) -> GeneratorReport:
    """List violations of off-diagonal nonnegativity and of the row-sum sign.

    Absorbing (all-zero) rows are valid and only reported informationally.
    """
    m = G.entries.tocoo()
    off = m.row != m.col
    bad = off & (m.data < 0)
    violations = [
        {"kind": "negative-off-diagonal", "row": int(r), "col": int(c), "value": float(v)}
        for r, c, v in zip(m.row[bad][:max_listed], m.col[bad][:max_listed], m.data[bad][:max_listed])
    ]
    sums = G.row_sums()
    for r in np.flatnonzero(sums > ROW_SUM_TOL)[:max_listed]:
        violations.append({"kind": "positive-row-sum", "row": int(r), "value": float(sums[r])})
    nnz_per_row = np.diff(G.entries.indptr)
    absorbing = [int(r) for r in np.flatnonzero(nnz_per_row == 0)]
    return GeneratorReport(violations, absorbing, G.conservative)


def ensure_valid(G: GeneratorMatrix) -> GeneratorMatrix:
    report = validate_generator(G)
    if not report.ok:
        first = report.violations[0]
        raise InvariantViolation(f"generator violates the positive maximum principle: {first}")
    return G


def _assemble(space: StateSpace, rows, cols, rates) -> GeneratorMatrix:
    """Build a conservative generator from off-diagonal (row, col, rate) triples."""
    rows = np.asarray(np.concatenate([np.ravel(r) for r in rows]) if rows else [], dtype=np.int64)
    cols = np.asarray(np.concatenate([np.ravel(c) for c in cols]) if cols else [], dtype=np.int64)
    rates = np.asarray(np.concatenate([np.ravel(v) for v in rates]) if rates else [], dtype=float)
    keep = (rows != cols) & (rates != 0.0)
    rows, cols, rates = rows[keep], cols[keep], rates[keep]
    n = space.size
    off = sp.csr_matrix((rates, (rows, cols)), shape=(n, n))
    off.sum_duplicates()
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return ensure_valid(GeneratorMatrix(space, (off + sp.diags(diag)).tocsr()))


# ---------------------------------------------------------------------------
# jump measures, boundary specs


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finite probability measure given by atoms and weights."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_1d(np.asarray(self.atoms, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if atoms.shape != weights.shape or atoms.size == 0:
            raise InvalidInput("atoms and weights must be nonempty and of equal length", code="invalid-measure")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidInput("weights must be positive and sum to one", code="invalid-measure")
        if not np.all(np.isfinite(atoms)):
            raise InvalidInput("atoms must be finite", code="invalid-measure")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def point_mass(cls, x: float) -> "DiscreteMeasure":
        return cls([x], [1.0])

    @classmethod
    def exponential(cls, gamma: float, step: float, n_atoms: int) -> "DiscreteMeasure":
        """Exp(gamma) binned on (k-1, k]*step, mass placed at k*step, renormalized."""
        if gamma <= 0 or step <= 0 or n_atoms < 1:
            raise InvalidInput("need gamma > 0, step > 0, n_atoms >= 1", code="invalid-measure")
        k = np.arange(1, n_atoms + 1)
        mass = np.exp(-gamma * step * (k - 1)) - np.exp(-gamma * step * k)
        return cls(step * k, mass / mass.sum())

    def mean(self) -> float:
        return float(self.atoms @ self.weights)

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True)
class JumpBoundarySpec:
    """Hold at the left boundary for Exp(lambda_rate), then jump to lo + atom."""

    lambda_rate: float
    jump_dist: DiscreteMeasure

    def __post_init__(self):
        if not self.lambda_rate > 0:
            raise InvalidInput("jump boundary rate must be positive", code="negative-rate")
        if np.any(self.jump_dist.atoms <= 0):
            raise InvalidInput("jump boundary atoms must be positive", code="invalid-measure")


@dataclass(frozen=True)
class StickyReflecting:
    """Boundary condition u''(0) = c u'(0) with c > 0."""

    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise InvalidInput("sticky-reflecting parameter must be positive", code="invalid-boundary")


Boundary = Union[str, StickyReflecting, JumpBoundarySpec]


# ---------------------------------------------------------------------------
# local (diffusion + drift) stencils


def _local_rates(grid: Grid1D, face_coef, node_scale, drift, left_kind=None, right_kind=None):
    """Finite-volume rates of node_scale/2 * d/dx(face_coef d/dx) + drift d/dx.

    Returns (left_rate, right_rate) arrays of length n; boundary rows use the
    half-cell zero-flux closure, or are zeroed when the boundary is absorbing.
    """
    x = grid.nodes
    n = grid.n
    dx = np.diff(x)
    face_coef = np.broadcast_to(np.asarray(face_coef, dtype=float), (n - 1,))
    node_scale = np.broadcast_to(np.asarray(node_scale, dtype=float), (n,))
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (n,))
    cw = np.empty(n)
    cw[1:-1] = 0.5 * (x[2:] - x[:-2])
    cw[0] = 0.5 * dx[0]
    cw[-1] = 0.5 * dx[-1]

    left = np.zeros(n)
    right = np.zeros(n)
    right[:-1] = node_scale[:-1] * face_coef / (2.0 * dx * cw[:-1]) + np.maximum(drift[:-1], 0.0) / dx
    left[1:] = node_scale[1:] * face_coef / (2.0 * dx * cw[1:]) + np.maximum(-drift[1:], 0.0) / dx
    if BoundaryKind(left_kind or grid.left_kind) is BoundaryKind.ABSORBING:
        right[0] = 0.0
    if BoundaryKind(right_kind or grid.right_kind) is BoundaryKind.ABSORBING:
        left[-1] = 0.0
    return left, right


def _neighbour_triples(left, right):
    n = left.size
    i = np.arange(n)
    return [i[1:], i[:-1]], [i[:-1], i[1:]], [left[1:], right[:-1]]


def _line_generator(grid: Grid1D, left, right, extra=()) -> GeneratorMatrix:
    rows, cols, rates = _neighbour_triples(left, right)
    for r, c, v in extra:
        rows.append(r)
        cols.append(c)
        rates.append(v)
    return _assemble(StateSpace.line(grid), rows, cols, rates)


def _require_uniform(grid: Grid1D) -> float:
    if not grid.uniform:
        raise InvalidInput("this builder needs a uniform grid", code="nonuniform-grid")
    return grid.h


def _jump_targets(grid: Grid1D, origins: np.ndarray, dist: DiscreteMeasure):
    """(row, col, weight) for jumps origin -> origin + atom, snapped and clipped to the window."""
    idx = np.arange(origins.size)
    rows = np.repeat(idx, dist.atoms.size)
    dest = np.add.outer(origins, dist.atoms).ravel()
    cols = grid.nearest(dest)
    w = np.tile(dist.weights, origins.size)
    return rows, cols, w


# ---------------------------------------------------------------------------
# builders


def bm_generator(grid: Grid1D, boundary: Boundary = "reflected") -> GeneratorMatrix:
    """Standard BM (generator u''/2) with a chosen behaviour at the left end.

    ``boundary`` is ``"reflected"``, ``"sticky"`` (absorbing), a
    :class:`StickyReflecting` or a :class:`JumpBoundarySpec`. The right end is
    closed according to ``grid.right_kind``.
    """
    h = _require_uniform(grid)
    left, right = _local_rates(grid, 1.0, 1.0, 0.0, left_kind=BoundaryKind.REFLECTING)
    extra = []
    if isinstance(boundary, str):
        if boundary == "reflected":
            pass
        elif boundary == "sticky":
            right[0] = 0.0
        else:
            raise InvalidInput(f"unknown boundary {boundary!r}", code="invalid-boundary")
    elif isinstance(boundary, StickyReflecting):
        c = boundary.c
        # ghost node eliminated from u''(0) = c u'(0)
        right[0] = c / (h * (2.0 + c * h))
    elif isinstance(boundary, JumpBoundarySpec):
        dist = boundary.jump_dist
        dest = grid.lo + dist.atoms
        if np.any(dest > grid.hi + 0.5 * h):
            raise InvalidInput(
                f"jump atom lands beyond the truncation window (hi={grid.hi})", code="atom-outside-domain"
            )
        right[0] = 0.0
        extra.append((np.zeros(dist.atoms.size, dtype=int), grid.nearest(dest), boundary.lambda_rate * dist.weights))
    else:
        raise InvalidInput(f"unknown boundary {boundary!r}", code="invalid-boundary")
    return _line_generator(grid, left, right, extra)


def skew_bm_generator(grid: Grid1D, beta: float) -> GeneratorMatrix:
    """Skew BM: at the node x=0 the chain steps right w.p. beta, left w.p. 1-beta."""
    if not 0.0 < beta < 1.0:
        raise InvalidInput(f"beta must lie in (0, 1), got {beta}", code="invalid-beta")
    h = _require_uniform(grid)
    j = grid.node_index(0.0)
    if j is None or j == 0 or j == grid.n - 1:
        raise InvalidInput("0 must be an interior grid node", code="zero-not-interior")
    left, right = _local_rates(grid, 1.0, 1.0, 0.0)
    left[j] = (1.0 - beta) / h**2
    right[j] = beta / h**2
    return _line_generator(grid, left, right)


@dataclass(frozen=True)
class PiecewiseDiffusionSpec:
    """Coefficients of (rho/2) d/dx(sigma du/dx) + mu du/dx, smooth off ``discontinuities``."""

    sigma: Callable
    rho: Callable
    mu: Callable
    discontinuities: tuple = ()
    ellipticity_floor: float = 1e-8

    @classmethod
    def piecewise_constant(cls, breakpoints, sigma, rho, mu=None, ellipticity_floor: float = 1e-8):
        """Coefficients constant between sorted ``breakpoints`` (len(values) = len(breakpoints)+1)."""
        bp = np.asarray(breakpoints, dtype=float)
        mu = np.zeros(bp.size + 1) if mu is None else mu

        def piece(values):
            values = np.asarray(values, dtype=float)
            if values.size != bp.size + 1:
                raise InvalidInput("need one coefficient value per piece", code="invalid-coefficients")
            return lambda x: values[np.searchsorted(bp, np.asarray(x, dtype=float), side="right")]

        return cls(piece(sigma), piece(rho), piece(mu), tuple(bp.tolist()), ellipticity_floor)


def harmonic_mean(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 2.0 * a * b / (a + b)


def piecewise_diffusion_generator(grid: Grid1D, spec: PiecewiseDiffusionSpec) -> GeneratorMatrix:
    """Finite volumes with harmonic face averaging of sigma.

    Each discontinuity must sit on a node, so every cell face lies inside a
    smooth piece; flux continuity across the node then encodes the
    transmission condition sigma(x-)u'(x-) = sigma(x+)u'(x+).
    """
    for xj in spec.discontinuities:
        if grid.node_index(xj) is None and grid.lo <= xj <= grid.hi:
            raise InvalidInput(f"discontinuity {xj} is not a grid node", code="J-not-on-grid")
    x = grid.nodes
    dx = np.diff(x)
    eps = 1e-9 * dx
    # one-sided limits into each interval
    sig_l = np.asarray(spec.sigma(x[:-1] + eps), dtype=float)
    sig_r = np.asarray(spec.sigma(x[1:] - eps), dtype=float)
    eps_n = 1e-9 * np.concatenate([dx[:1], np.minimum(dx[:-1], dx[1:]), dx[-1:]])
    rho_m = np.asarray(spec.rho(x - eps_n), dtype=float)
    rho_p = np.asarray(spec.rho(x + eps_n), dtype=float)
    rho_m[0] = rho_p[0]
    rho_p[-1] = rho_m[-1]
    mu_m = np.asarray(spec.mu(x - eps_n), dtype=float)
    mu_p = np.asarray(spec.mu(x + eps_n), dtype=float)
    mu = 0.5 * (mu_m + mu_p)
    floor = spec.ellipticity_floor
    if np.any(sig_l < floor) or np.any(sig_r < floor) or np.any(rho_m < floor) or np.any(rho_p < floor):
        raise InvalidInput(f"sigma and rho must stay above {floor}", code="ellipticity-violation")
    face = harmonic_mean(sig_l, sig_r)
    rho = harmonic_mean(rho_m, rho_p)
    left, right = _local_rates(grid, face, rho, mu)
    return _line_generator(grid, left, right)


def compound_poisson_generator(grid: Grid1D, rate: float, jump_dist: DiscreteMeasure) -> GeneratorMatrix:
    """Bounded jump operator rate * sum_k w_k (u(x + y_k) - u(x)); targets clipped to the window."""
    if rate < 0:
        raise InvalidInput("jump rate must be nonnegative", code="negative-rate")
    space = StateSpace.line(grid)
    if rate == 0:
        return _assemble(space, [], [], [])
    r, c, w = _jump_targets(grid, grid.nodes, jump_dist)
    return _assemble(space, [r], [c], [rate * w])


def levy_cpd_generator(
    grid: Grid1D,
    drift: float,
    diffusion: float,
    jump_rate: float = 0.0,
    jump_dist: DiscreteMeasure | None = None,
) -> GeneratorMatrix:
    """1-D finite-activity Levy generator: drift u' + diffusion^2/2 u'' + jumps."""
    if diffusion < 0:
        raise InvalidInput("diffusion must be nonnegative", code="negative-diffusion")
    if jump_rate < 0:
        raise InvalidInput("jump rate must be nonnegative", code="negative-rate")
    _require_uniform(grid)
    left, right = _local_rates(grid, diffusion**2, 1.0, drift)
    extra = []
    if jump_rate > 0:
        if jump_dist is None:
            raise InvalidInput("a positive jump rate needs a jump distribution", code="invalid-measure")
        r, c, w = _jump_targets(grid, grid.nodes, jump_dist)
        extra.append((r, c, jump_rate * w))
    return _line_generator(grid, left, right, extra)


def perturb_generator(base: GeneratorMatrix, bounded_op: GeneratorMatrix) -> GeneratorMatrix:
    if base.space != bounded_op.space:
        raise InvalidInput("generators live on different state spaces", code="space-mismatch")
    ensure_valid(bounded_op)
    return ensure_valid(GeneratorMatrix(base.space, base.entries + bounded_op.entries))


@dataclass(frozen=True, eq=False)
class RegimeCouplingSpec:
    """Switching rates q[i][j] (constants or functions of x); the diagonal is ignored."""

    q: Sequence

    def __post_init__(self):
        n = len(self.q)
        if n < 1 or any(len(row) != n for row in self.q):
            raise InvalidInput("coupling must be a square N x N table", code="coupling-dimension-mismatch")

    @property
    def n(self) -> int:
        return len(self.q)

    def rates_at(self, x: np.ndarray) -> np.ndarray:
        """Array q[i, j, k] of switching rates at the nodes x[k]."""
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.n, self.n, x.size))
        for i in range(self.n):
            for j in range(self.n):
                if i == j:
                    continue
                qij = self.q[i][j]
                out[i, j] = np.broadcast_to(np.asarray(qij(x) if callable(qij) else qij, dtype=float), x.shape)
        if np.any(~np.isfinite(out)) or np.any(out < 0):
            raise InvalidInput("switching rates must be finite and nonnegative", code="negative-rate")
        return out


def regime_switching_generator(per_regime: Sequence[GeneratorMatrix], coupling: RegimeCouplingSpec) -> GeneratorMatrix:
    """Block-diagonal regime generators plus switching rates at matching nodes."""
    if len(per_regime) != coupling.n:
        raise InvalidInput(
            f"{len(per_regime)} regime generators but coupling is {coupling.n} x {coupling.n}",
            code="coupling-dimension-mismatch",
        )
    grids = [G.space for G in per_regime]
    if any(s.layout != "line" for s in grids) or any(s != grids[0] for s in grids):
        raise InvalidInput("regime generators must share one line grid", code="grid-mismatch")
    grid = grids[0].grid
    n = grid.n
    space = StateSpace.regimes(coupling.n, grid)
    rows, cols, rates = [], [], []
    for i, G in enumerate(per_regime):
        m = G.entries.tocoo()
        off = m.row != m.col
        rows.append(m.row[off] + i * n)
        cols.append(m.col[off] + i * n)
        rates.append(m.data[off])
    q = coupling.rates_at(grid.nodes)
    k = np.arange(n)
    for i in range(coupling.n):
        for j in range(coupling.n):
            if i != j:
                rows.append(k + i * n)
                cols.append(k + j * n)
                rates.append(q[i, j])
    return _assemble(space, rows, cols, rates)


# ---------------------------------------------------------------------------
# semi-Markov lift


def constant_hazard(rate: float) -> Callable:
    return lambda s: np.full(np.shape(s), float(rate))


def mixture_exponential_hazard(weights, rates) -> Callable:
    """p/(1-P) for P = sum_i w_i (1 - exp(-rate_i s)); tends to min(rates)."""
    w = np.asarray(weights, dtype=float)
    lam = np.asarray(rates, dtype=float)
    if np.any(w <= 0) or abs(w.sum() - 1) > 1e-12 or np.any(lam <= 0):
        raise InvalidInput("mixture weights must be positive summing to one, rates positive", code="invalid-hazard")
    lmin = lam.min()

    def hazard(s):
        s = np.asarray(s, dtype=float)
        e = np.exp(-np.multiply.outer(s, lam - lmin))  # scaled survival terms, no underflow
        return (e * (w * lam)).sum(axis=-1) / (e * w).sum(axis=-1)

    return hazard


def beta_prime_hazard() -> Callable:
    """Hazard 1/(1+s) of P(s) = s/(1+s)."""
    return lambda s: 1.0 / (1.0 + np.asarray(s, dtype=float))


def clock_horizon(hazard: Callable, survival_tol: float = 1e-6, s_cap: float = 1e9) -> float:
    """Smallest S with exp(-int_0^S hazard) <= survival_tol."""
    target = -np.log(survival_tol)

    def cum(S):
        return integrate.quad(lambda s: float(hazard(s)), 0.0, S, limit=200)[0] - target

    hi = 1.0
    while cum(hi) < 0:
        hi *= 2.0
        if hi > s_cap:
            raise InvalidInput("hazard integrates too slowly to truncate the clock", code="invalid-hazard")
    return float(optimize.brentq(cum, 0.0, hi, xtol=1e-10))


@dataclass(frozen=True, eq=False)
class SemiMarkovSpec:
    hazard: Callable
    jump_dist: DiscreteMeasure
    clock_grid: Grid1D


def semi_markov_lift_generator(space_grid: Grid1D, spec: SemiMarkovSpec) -> GeneratorMatrix:
    """Generator of (clock, position): the clock runs at unit speed (upwind in s) and
    renewals at rate Q(s) reset it to 0 while the position jumps by an atom of F.

    The top clock node has no transport term, which closes the compactified clock.
    """
    cg = spec.clock_grid
    hs = _require_uniform(cg)
    Q = np.asarray(spec.hazard(cg.nodes), dtype=float)
    if Q.shape != cg.nodes.shape or np.any(~np.isfinite(Q)) or np.any(Q < 0):
        raise InvalidInput("hazard must be finite and nonnegative on the clock grid", code="negative-hazard")
    ns, nx = cg.n, space_grid.n
    space = StateSpace.clock(cg, space_grid)
    rows, cols, rates = [], [], []
    xi = np.arange(nx)
    for si in range(ns - 1):
        rows.append(si * nx + xi)
        cols.append((si + 1) * nx + xi)
        rates.append(np.full(nx, 1.0 / hs))
    r, c, w = _jump_targets(space_grid, space_grid.nodes, spec.jump_dist)
    for si in range(ns):
        if Q[si] == 0:
            continue
        rows.append(si * nx + r)
        cols.append(c)  # clock reset to s = 0
        rates.append(Q[si] * w)
    return _assemble(space, rows, cols, rates)
