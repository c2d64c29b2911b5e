"""Grids, state spaces, sampled functions and stopping problems.

Everything here is immutable after construction: arrays are copied and
flagged read-only so that solver, Monte Carlo and CLI code can share them
freely.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np


class FellerStopError(Exception):
    """Base class for library errors. ``code`` is a short machine-readable tag."""

    code = "error"

    def __init__(self, message: str, code: str | None = None, field: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.field = field


class InvalidInput(FellerStopError, ValueError):
    code = "invalid-input"


class SolverError(FellerStopError, RuntimeError):
    code = "solver-error"


class BoundaryKind(str, enum.Enum):
    REFLECTING = "reflecting"
    ABSORBING = "absorbing"
    TRUNCATION = "truncation"  # artificial cut of an unbounded domain; closed like REFLECTING


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Grid1D:
    nodes: np.ndarray
    left_kind: BoundaryKind = BoundaryKind.REFLECTING
    right_kind: BoundaryKind = BoundaryKind.TRUNCATION

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise InvalidInput("a grid needs at least 3 nodes", code="too-few-nodes")
        if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
            raise InvalidInput("grid nodes must be finite and strictly increasing", code="invalid-range")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "left_kind", BoundaryKind(self.left_kind))
        object.__setattr__(self, "right_kind", BoundaryKind(self.right_kind))

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def lo(self) -> float:
        return float(self.nodes[0])

    @property
    def hi(self) -> float:
        return float(self.nodes[-1])

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def uniform(self) -> bool:
        d = self.spacings
        return bool(d.max() / d.min() < 1.0 + 1e-12)

    @property
    def h(self) -> float:
        """Spacing of a uniform grid."""
        if not self.uniform:
            raise InvalidInput("grid is not uniform", code="nonuniform-grid")
        return float(self.spacings.mean())

    def nearest(self, x) -> np.ndarray:
        """Index of the node nearest to each ``x`` (clipped to the window)."""
        x = np.asarray(x, dtype=float)
        j = np.searchsorted(self.nodes, x)
        j = np.clip(j, 1, self.n - 1)
        left = self.nodes[j - 1]
        right = self.nodes[j]
        return np.where(x - left <= right - x, j - 1, j)

    def node_index(self, x: float, rtol: float = 1e-9) -> int | None:
        """Index of a node coinciding with ``x`` (to ``rtol`` of the local spacing), else None."""
        j = int(self.nearest(x))
        scale = self.spacings[min(j, self.n - 2)]
        return j if abs(self.nodes[j] - x) <= rtol * scale else None

    def with_kinds(self, left=None, right=None) -> "Grid1D":
        return Grid1D(self.nodes, left or self.left_kind, right or self.right_kind)

    def __eq__(self, other):
        if not isinstance(other, Grid1D):
            return NotImplemented
        return (
            self.left_kind == other.left_kind
            and self.right_kind == other.right_kind
            and self.nodes.shape == other.nodes.shape
            and bool(np.array_equal(self.nodes, other.nodes))
        )

    def __hash__(self):
        return hash((self.nodes.tobytes(), self.left_kind, self.right_kind))


def make_uniform_grid(
    lo: float,
    hi: float,
    n: int,
    left: BoundaryKind = BoundaryKind.REFLECTING,
    right: BoundaryKind = BoundaryKind.TRUNCATION,
) -> Grid1D:
    if not lo < hi:
        raise InvalidInput(f"need lo < hi, got lo={lo}, hi={hi}", code="invalid-range")
    if n < 3:
        raise InvalidInput(f"need n >= 3 nodes, got {n}", code="too-few-nodes")
    return Grid1D(np.linspace(lo, hi, int(n)), left, right)


@dataclass(frozen=True)
class RegimeFactor:
    """Finite regime set {0, ..., size-1}."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise InvalidInput("regime set must be nonempty")

    @property
    def n(self) -> int:
        return self.size


Factor = Union[RegimeFactor, Grid1D]


@dataclass(frozen=True)
class StateSpace:
    """Product of at most one regime factor and at most two grids, flattened in C order.

    The last factor varies fastest, so a regime/grid space is regime-major and a
    clock/space product is clock-major.
    """

    factors: tuple

    def __post_init__(self):
        factors = tuple(self.factors)
        if not factors:
            raise InvalidInput("state space needs at least one factor")
        n_regime = sum(isinstance(f, RegimeFactor) for f in factors)
        n_grid = sum(isinstance(f, Grid1D) for f in factors)
        if n_regime + n_grid != len(factors):
            raise InvalidInput("factors must be RegimeFactor or Grid1D")
        if n_regime > 1 or n_grid > 2 or n_grid == 0:
            raise InvalidInput("at most one regime factor and one or two grid factors are supported")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def line(cls, grid: Grid1D) -> "StateSpace":
        return cls((grid,))

    @classmethod
    def regimes(cls, n_regimes: int, grid: Grid1D) -> "StateSpace":
        return cls((RegimeFactor(n_regimes), grid))

    @classmethod
    def clock(cls, clock_grid: Grid1D, space_grid: Grid1D) -> "StateSpace":
        return cls((clock_grid, space_grid))

    @property
    def shape(self) -> tuple:
        return tuple(f.n for f in self.factors)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def layout(self) -> str:
        if len(self.factors) == 1:
            return "line"
        return "regime" if isinstance(self.factors[0], RegimeFactor) else "clock"

    @property
    def grid(self) -> Grid1D:
        """The spatial grid (always the last factor)."""
        return self.factors[-1]

    @property
    def outer_size(self) -> int:
        """Number of slices along the first factor (1 for a bare line)."""
        return 1 if self.layout == "line" else self.factors[0].n

    def index(self, *coords) -> int:
        return int(np.ravel_multi_index(tuple(int(c) for c in coords), self.shape))

    def coords(self, flat) -> tuple:
        return np.unravel_index(flat, self.shape)

    def x_values(self) -> np.ndarray:
        """Spatial coordinate of every flat state."""
        return np.tile(self.grid.nodes, self.outer_size)

    def outer_values(self) -> np.ndarray:
        """Regime index or clock value of every flat state."""
        n = self.grid.n
        if self.layout == "line":
            return np.zeros(self.size)
        if self.layout == "regime":
            return np.repeat(np.arange(self.outer_size, dtype=float), n)
        return np.repeat(self.factors[0].nodes, n)

    def coordinate_columns(self) -> tuple:
        return {"line": ("x",), "regime": ("regime", "x"), "clock": ("s", "x")}[self.layout]

    def describe(self) -> dict:
        out = {"layout": self.layout, "shape": list(self.shape), "factors": []}
        for f in self.factors:
            if isinstance(f, RegimeFactor):
                out["factors"].append({"kind": "regime", "size": f.size})
            else:
                out["factors"].append(
                    {
                        "kind": "grid",
                        "lo": f.lo,
                        "hi": f.hi,
                        "n": f.n,
                        "left": f.left_kind.value,
                        "right": f.right_kind.value,
                    }
                )
        return out


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass(frozen=True, eq=False)
class SampledFunction:
    space: StateSpace
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values).ravel()
        if values.size != self.space.size:
            raise InvalidInput(
                f"function has {values.size} values, state space has {self.space.size}",
                code="space-mismatch",
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInput("sampled function has non-finite values", code="non-finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_x(cls, space: StateSpace, fn: Callable[[np.ndarray], np.ndarray]) -> "SampledFunction":
        """Sample a function of the spatial coordinate on every state (same in every regime/clock)."""
        return cls(space, np.asarray(fn(space.x_values()), dtype=float))

    @classmethod
    def constant(cls, space: StateSpace, c: float) -> "SampledFunction":
        return cls(space, np.full(space.size, float(c)))

    def as_array(self) -> np.ndarray:
        return self.values

    def slice(self, outer: int = 0) -> np.ndarray:
        n = self.space.grid.n
        return self.values[outer * n : (outer + 1) * n]

    def to_csv(self, path=None) -> str:
        """CSV with header ``x,value`` (or ``regime,x,value`` / ``s,x,value``)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.space.coordinate_columns()
        w.writerow([*cols, "value"])
        xs = self.space.x_values()
        outer = self.space.outer_values()
        for i in range(self.space.size):
            if self.space.layout == "line":
                w.writerow([_fmt(xs[i]), _fmt(self.values[i])])
            elif self.space.layout == "regime":
                w.writerow([int(outer[i]), _fmt(xs[i]), _fmt(self.values[i])])
            else:
                w.writerow([_fmt(outer[i]), _fmt(xs[i]), _fmt(self.values[i])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, newline="")
        return text

    @classmethod
    def from_csv(cls, space: StateSpace, source) -> "SampledFunction":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if tuple(header) != (*space.coordinate_columns(), "value"):
            raise InvalidInput(f"unexpected CSV header {header}", code="space-mismatch")
        return cls(space, np.array([float(r[-1]) for r in body]))


def sup_norm(u) -> float:
    v = u.values if isinstance(u, SampledFunction) else np.asarray(u, dtype=float)
    return float(np.max(np.abs(v))) if v.size else 0.0


def sup_norm_diff(u, v) -> float:
    if isinstance(u, SampledFunction) and isinstance(v, SampledFunction):
        if u.space != v.space:
            raise InvalidInput("functions live on different state spaces", code="space-mismatch")
        return sup_norm(u.values - v.values)
    a = np.asarray(getattr(u, "values", u), dtype=float)
    b = np.asarray(getattr(v, "values", v), dtype=float)
    if a.shape != b.shape:
        raise InvalidInput("shape mismatch", code="space-mismatch")
    return sup_norm(a - b)


def call_spread(x, c1: float, c2: float) -> np.ndarray:
    """(x - c1)^+ - (x - c2)^+ : zero below c1, slope one up to c2, flat at c2 - c1 above."""
    if not c1 < c2:
        raise InvalidInput(f"need c1 < c2, got c1={c1}, c2={c2}", code="invalid-strikes", field="payoff.c1")
    x = np.asarray(x, dtype=float)
    return np.clip(x - c1, 0.0, c2 - c1)


def straddle_payoff(grid_or_space, c1: float, c2: float) -> SampledFunction:
    space = grid_or_space if isinstance(grid_or_space, StateSpace) else StateSpace.line(grid_or_space)
    if not c1 < c2:
        raise InvalidInput(f"need c1 < c2, got c1={c1}, c2={c2}", code="invalid-strikes", field="payoff.c1")
    return SampledFunction.from_x(space, lambda x: call_spread(x, c1, c2))


@dataclass(frozen=True)
class StoppingProblem:
    """Discounted problem sup_tau E[int_0^tau e^{-as} f ds + e^{-a tau} g(X_tau)]."""

    space: StateSpace
    discount_a: float
    f: SampledFunction
    g: SampledFunction

    def __post_init__(self):
        if not (np.isfinite(self.discount_a) and self.discount_a > 0):
            raise InvalidInput(f"discount rate must be positive, got {self.discount_a}", code="invalid-discount", field="discount_a")
        for name in ("f", "g"):
            if getattr(self, name).space != self.space:
                raise InvalidInput(f"{name} is sampled on a different state space", code="space-mismatch")

    @classmethod
    def from_arrays(cls, space: StateSpace, a: float, f, g) -> "StoppingProblem":
        f = SampledFunction(space, np.broadcast_to(np.asarray(f, dtype=float), (space.size,)))
        g = SampledFunction(space, np.broadcast_to(np.asarray(g, dtype=float), (space.size,)))
        return cls(space, float(a), f, g)

    @property
    def a(self) -> float:
        return self.discount_a

    def reward_bound(self) -> float:
        """||g|| + ||f||/a, the bound on any |J_x(tau)|."""
        return sup_norm(self.g) + sup_norm(self.f) / self.discount_a
