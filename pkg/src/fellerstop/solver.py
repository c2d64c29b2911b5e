"""Penalized resolvent iteration for discounted optimal stopping.

For a penalty weight ``lam`` the penalized value ``v_lam`` solves

    a v - G v - f = lam (g - v)^+ ,

equivalently the fixed point ``v = R_{a+lam}(f + lam max(g, v))``. The map on
the right is a sup-norm contraction with factor lam/(a+lam) and ``v_lam``
increases to the value function as lam grows, with

    ||V - v_lam|| <= ||(a - G) g - f|| / (a + lam)

whenever g lies in the discrete domain. ``solve_value_function`` walks an
increasing lam schedule with warm starts.

Each stage can be solved either by iterating the contraction literally
(``inner_solver="contraction"``) or by exact linear solves on the current
penalized set (``inner_solver="active_set"``, the default). The latter reaches
the same fixed point in a handful of solves independently of lam, which is what
makes the large penalties needed for 1e-8 accuracy affordable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import InvalidInput, SampledFunction, SolverError, StateSpace, StoppingProblem, sup_norm
from .generators import GeneratorMatrix

INNER_SOLVERS = ("active_set", "contraction")


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty schedule and tolerances. ``None`` fields are resolved from the discount rate."""

    lambda_schedule: tuple | None = None
    fixed_point_tol: float = 1e-10
    max_inner_iters: int | None = None
    outer_stop_tol: float = 1e-8
    inner_solver: str = "active_set"

    def __post_init__(self):
        if self.inner_solver not in INNER_SOLVERS:
            raise InvalidInput(f"inner_solver must be one of {INNER_SOLVERS}", field="solver.inner_solver")
        if not (self.fixed_point_tol > 0 and self.outer_stop_tol > 0):
            raise InvalidInput("tolerances must be positive", code="invalid-tolerance", field="solver")
        if self.max_inner_iters is not None and self.max_inner_iters < 1:
            raise InvalidInput("max_inner_iters must be at least 1", field="solver.max_inner_iters")
        if self.lambda_schedule is not None:
            s = np.asarray(self.lambda_schedule, dtype=float)
            if s.ndim != 1 or s.size == 0 or np.any(s <= 0) or np.any(np.diff(s) <= 0):
                raise InvalidInput(
                    "lambda_schedule must be positive and strictly increasing",
                    code="invalid-schedule",
                    field="solver.lambda_schedule",
                )
            object.__setattr__(self, "lambda_schedule", tuple(float(x) for x in s))

    def schedule(self, a: float) -> np.ndarray:
        """Explicit schedule, or a * 2^k for k = 1..40 (k = 1..20 for the plain contraction)."""
        if self.lambda_schedule is not None:
            return np.asarray(self.lambda_schedule)
        top = 40 if self.inner_solver == "active_set" else 20
        return a * 2.0 ** np.arange(1, top + 1)

    def inner_limit(self, a: float, lam: float, method: str | None = None) -> int:
        if self.max_inner_iters is not None:
            return int(self.max_inner_iters)
        if (method or self.inner_solver) == "active_set":
            return 200
        return 10 * math.ceil(math.log(self.fixed_point_tol) / math.log(lam / (a + lam)))

    def to_dict(self) -> dict:
        return {
            "lambda_schedule": None if self.lambda_schedule is None else list(self.lambda_schedule),
            "fixed_point_tol": self.fixed_point_tol,
            "max_inner_iters": self.max_inner_iters,
            "outer_stop_tol": self.outer_stop_tol,
            "inner_solver": self.inner_solver,
        }


def _values(u, n: int) -> np.ndarray:
    v = np.asarray(getattr(u, "values", u), dtype=float)
    if v.shape != (n,):
        raise InvalidInput(f"vector of length {v.size} does not match state space size {n}", code="space-mismatch")
    return v


class ShiftedSolver:
    """Cached factorization of (shift I - G) plus optional diagonal penalty."""

    def __init__(self, G: GeneratorMatrix, shift, check: bool = True):
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (G.size,))
        self.matrix = (sp.diags(shift) - G.entries).tocsc()
        self.check = check
        try:
            # the matrix is a strictly diagonally dominant M-matrix, so diagonal
            # pivots are stable; partial pivoting here loses ~eps*lam accuracy
            self._lu = splu(
                self.matrix,
                permc_spec="COLAMD",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SolverError(f"resolvent system is singular: {exc}", code="singular-system") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        u = self._lu.solve(rhs)
        if self.check:
            res = sup_norm(self.matrix @ u - rhs)
            if not np.all(np.isfinite(u)) or res > 1e-10 * (1.0 + sup_norm(rhs)):
                raise SolverError(f"resolvent residual {res:.3e} too large", code="singular-system")
        return u


def resolvent_apply(G: GeneratorMatrix, lam: float, h) -> SampledFunction:
    """u = (lam I - G)^{-1} h by a sparse direct solve."""
    if not lam > 0:
        raise InvalidInput("resolvent parameter must be positive", code="invalid-lambda")
    rhs = _values(h, G.size)
    return SampledFunction(G.space, ShiftedSolver(G, lam).solve(rhs))


def _check_problem(G: GeneratorMatrix, problem: StoppingProblem):
    if G.space != problem.space:
        raise InvalidInput("generator and problem live on different state spaces", code="space-mismatch")


def penalty_map(G: GeneratorMatrix, problem: StoppingProblem, lam: float, w, solver: ShiftedSolver | None = None):
    """Z w = R_{a+lam}(f + lam max(g, w))."""
    _check_problem(G, problem)
    w = _values(w, G.size)
    solver = solver or ShiftedSolver(G, problem.a + lam)
    return solver.solve(problem.f.values + lam * np.maximum(problem.g.values, w))


def penalty_residual(G: GeneratorMatrix, problem: StoppingProblem, lam: float, v) -> np.ndarray:
    """a v - G v - f - lam (g - v)^+ componentwise."""
    v = _values(v, G.size)
    g = problem.g.values
    return problem.a * v - G.entries @ v - problem.f.values - lam * np.maximum(g - v, 0.0)


def complementarity_residual(G: GeneratorMatrix, problem: StoppingProblem, v) -> np.ndarray:
    """min(a v - G v - f, v - g) componentwise; zero at the discrete value function."""
    v = _values(v, G.size)
    return np.minimum(problem.a * v - G.entries @ v - problem.f.values, v - problem.g.values)


@dataclass(frozen=True)
class PenaltySolution:
    v: SampledFunction
    lam: float
    inner_iterations: int
    final_update_norm: float
    converged: bool = True


def penalty_fixed_point(
    G: GeneratorMatrix,
    problem: StoppingProblem,
    lam: float,
    warm_start=None,
    params: PenaltyParams | None = None,
    raise_on_max: bool = True,
) -> PenaltySolution:
    """Iterate w <- Z w from ``warm_start`` until successive iterates differ by <= tol."""
    _check_problem(G, problem)
    params = params or PenaltyParams(inner_solver="contraction")
    w = np.zeros(G.size) if warm_start is None else _values(warm_start, G.size).copy()
    solver = ShiftedSolver(G, problem.a + lam, check=False)
    tol = params.fixed_point_tol
    limit = params.inner_limit(problem.a, lam, "contraction")
    upd = np.inf
    for it in range(1, limit + 1):
        w_new = solver.solve(problem.f.values + lam * np.maximum(problem.g.values, w))
        upd = sup_norm(w_new - w)
        w = w_new
        if upd <= tol:
            return PenaltySolution(SampledFunction(G.space, w), lam, it, upd, True)
    if raise_on_max:
        raise SolverError(
            f"fixed point not reached in {limit} iterations (last update {upd:.3e})", code="max-iters-exceeded"
        )
    return PenaltySolution(SampledFunction(G.space, w), lam, limit, upd, False)


def penalty_active_set(
    G: GeneratorMatrix,
    problem: StoppingProblem,
    lam: float,
    warm_start=None,
    params: PenaltyParams | None = None,
    raise_on_max: bool = True,
) -> PenaltySolution:
    """Solve the penalized equation exactly on the set {g > w}, updating the set until it is stable.

    Once the set reproduces itself the linear solve is the exact fixed point, so
    stability is the convergence test. ``final_update_norm`` is ||res||/(a+lam)
    with ``res`` the penalty residual, a bound on ||Z w - w|| for the
    contraction Z (it sits at rounding level after convergence).
    """
    _check_problem(G, problem)
    params = params or PenaltyParams()
    a, f, g = problem.a, problem.f.values, problem.g.values
    w = np.zeros(G.size) if warm_start is None else _values(warm_start, G.size).copy()
    limit = params.inner_limit(a, lam, "active_set")
    active = g > w
    converged = False
    for it in range(1, limit + 1):
        solver = ShiftedSolver(G, a + lam * active, check=False)
        w = solver.solve(f + lam * active * g)
        new_active = g > w
        if np.array_equal(new_active, active):
            converged = True
            break
        active = new_active
    upd = sup_norm(penalty_residual(G, problem, lam, w)) / (a + lam)
    if not converged and raise_on_max:
        raise SolverError(f"active set not settled in {limit} solves (residual {upd:.3e})", code="max-iters-exceeded")
    return PenaltySolution(SampledFunction(G.space, w), lam, it, upd, converged)


def solve_penalized(G, problem, lam, warm_start=None, params: PenaltyParams | None = None, raise_on_max=True):
    params = params or PenaltyParams()
    fn = penalty_active_set if params.inner_solver == "active_set" else penalty_fixed_point
    return fn(G, problem, lam, warm_start, params, raise_on_max)


@dataclass
class ValueFunction:
    problem: StoppingProblem
    v: SampledFunction
    stopping_mask: np.ndarray
    exercise_boundaries: tuple
    contact_tol: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def space(self) -> StateSpace:
        return self.problem.space

    @property
    def converged(self) -> bool:
        return self.diagnostics.get("warning") is None

    @property
    def warning(self):
        return self.diagnostics.get("warning")

    def exercise_point(self, outer: int = 0) -> float:
        """First continuation-to-stopping switch in a slice (nan if the slice never switches)."""
        mask = self.mask_slice(outer)
        x = self.space.grid.nodes
        idx = np.flatnonzero(~mask[:-1] & mask[1:])
        return float(0.5 * (x[idx[0]] + x[idx[0] + 1])) if idx.size else float("nan")

    def mask_slice(self, outer: int = 0) -> np.ndarray:
        n = self.space.grid.n
        return self.stopping_mask[outer * n : (outer + 1) * n]

    def to_dict(self) -> dict:
        d = self.diagnostics
        return {
            "lambda_schedule": d["lambdas"],
            "per_stage_update_norms": d["stage_differences"],
            "inner_iterations": d["inner_iterations"],
            "inner_update_norms": d["inner_update_norms"],
            "inner_solver": d["inner_solver"],
            "contact_tol": self.contact_tol,
            "boundaries": [list(b) for b in self.exercise_boundaries],
            "converged": self.converged,
            "warning": self.warning,
            "space": self.space.describe(),
            "discount_a": self.problem.a,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _switch_points(space: StateSpace, mask: np.ndarray) -> tuple:
    x = space.grid.nodes
    n = space.grid.n
    out = []
    for k in range(space.outer_size):
        m = mask[k * n : (k + 1) * n]
        idx = np.flatnonzero(m[:-1] != m[1:])
        out.append(tuple(float(0.5 * (x[i] + x[i + 1])) for i in idx))
    return tuple(out)


def make_value_function(problem: StoppingProblem, v: np.ndarray, contact_tol: float, diagnostics=None) -> ValueFunction:
    mask = (v - problem.g.values) <= contact_tol
    mask.setflags(write=False)
    return ValueFunction(
        problem,
        SampledFunction(problem.space, v),
        mask,
        _switch_points(problem.space, mask),
        contact_tol,
        diagnostics or {},
    )


def solve_value_function(
    G: GeneratorMatrix,
    problem: StoppingProblem,
    params: PenaltyParams | None = None,
    warm_start=None,
) -> ValueFunction:
    """lam-continuation until consecutive stages agree to ``outer_stop_tol``.

    Never raises on non-convergence: the best iterate is returned with
    ``diagnostics["warning"]`` set.
    """
    _check_problem(G, problem)
    params = params or PenaltyParams()
    w = None if warm_start is None else _values(warm_start, G.size)
    diag = {
        "lambdas": [],
        "inner_iterations": [],
        "inner_update_norms": [],
        "stage_differences": [],
        "inner_solver": params.inner_solver,
        "warning": None,
    }
    inner_failed = False
    converged = False
    prev = None
    for lam in params.schedule(problem.a):
        sol = solve_penalized(G, problem, float(lam), w, params, raise_on_max=False)
        w = sol.v.values
        diag["lambdas"].append(float(lam))
        diag["inner_iterations"].append(sol.inner_iterations)
        diag["inner_update_norms"].append(sol.final_update_norm)
        inner_failed |= not sol.converged
        if prev is not None:
            d = sup_norm(w - prev)
            diag["stage_differences"].append(d)
            if d <= params.outer_stop_tol:
                converged = True
                break
        prev = w
    if inner_failed:
        diag["warning"] = "inner-max-iters"
    elif not converged:
        diag["warning"] = "schedule-exhausted"
    return make_value_function(problem, w, 10.0 * params.outer_stop_tol, diag)


@dataclass(frozen=True, eq=False)
class StoppingRegion:
    """Boolean stopping set; ``gamma`` is the clock threshold curve on two-grid spaces."""

    space: StateSpace
    mask: np.ndarray

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool).ravel()
        if m.size != self.space.size:
            raise InvalidInput("mask does not match the state space", code="space-mismatch")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    def contains(self, index: int) -> bool:
        return bool(self.mask[index])

    @property
    def gamma(self) -> np.ndarray | None:
        """gamma(x) = smallest clock node where stopping holds, +inf if none."""
        if self.space.layout != "clock":
            return None
        m = self.mask.reshape(self.space.shape)
        s = self.space.factors[0].nodes
        first = np.argmax(m, axis=0)
        return np.where(m.any(axis=0), s[first], np.inf)

    def shifted(self, k: int) -> "StoppingRegion":
        """Move the set by k nodes along the spatial grid in every slice (edges extended)."""
        if k == 0:
            return self
        m = self.mask.reshape(-1, self.space.grid.n)
        out = np.empty_like(m)
        if k > 0:
            out[:, k:] = m[:, :-k]
            out[:, :k] = m[:, :1]
        else:
            out[:, :k] = m[:, -k:]
            out[:, k:] = m[:, -1:]
        return StoppingRegion(self.space, out.ravel())

    @classmethod
    def everywhere(cls, space: StateSpace) -> "StoppingRegion":
        return cls(space, np.ones(space.size, dtype=bool))

    @classmethod
    def nowhere(cls, space: StateSpace) -> "StoppingRegion":
        return cls(space, np.zeros(space.size, dtype=bool))


def stopping_rule(vf: ValueFunction) -> StoppingRegion:
    return StoppingRegion(vf.space, vf.stopping_mask)
