"""Experiment configs and the runners behind the command-line interface.

A config is a JSON document::

    {
      "schema_version": 1,
      "process": {"type": "bm", "boundary": "reflected"},
      "payoff": {"c1": 1.0, "c2": 4.0},
      "discount_a": 0.1,
      "grid": {"lo": 0.0, "hi": 12.0, "n": 961},
      "solver": {},
      "mc": {"n_paths": 20000},
      "outputs": "out"
    }

Process tags: ``bm``, ``skew_bm``, ``piecewise_diffusion``, ``levy``,
``bm_compound_poisson``, ``regime_switching``, ``semi_markov``.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constants
from .analytic import (
    jump_boundary_solution,
    reflected_straddle_solution,
    regime_switching_solution,
    sticky_straddle_solution,
)
from .core import (
    FellerStopError,
    InvalidInput,
    SampledFunction,
    StateSpace,
    StoppingProblem,
    call_spread,
    make_uniform_grid,
    sup_norm,
)
from .generators import (
    DiscreteMeasure,
    JumpBoundarySpec,
    PiecewiseDiffusionSpec,
    RegimeCouplingSpec,
    SemiMarkovSpec,
    StickyReflecting,
    beta_prime_hazard,
    bm_generator,
    clock_horizon,
    compound_poisson_generator,
    constant_hazard,
    levy_cpd_generator,
    mixture_exponential_hazard,
    perturb_generator,
    piecewise_diffusion_generator,
    regime_switching_generator,
    semi_markov_lift_generator,
    skew_bm_generator,
)
from .mc import SimConfig, simulate_stopped_value
from .solver import PenaltyParams, solve_value_function, stopping_rule

SCHEMA_VERSION = 1
PROCESS_TAGS = (
    "bm",
    "skew_bm",
    "piecewise_diffusion",
    "levy",
    "bm_compound_poisson",
    "regime_switching",
    "semi_markov",
)
OUT_ENV = "FELLER_STOP_OUT"


def _fail(message: str, fld: str, code: str = "invalid-config"):
    raise InvalidInput(message, code=code, field=fld)


@dataclass
class ExperimentConfig:
    process: dict
    payoff: dict
    discount_a: float
    grid: dict
    solver: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    outputs: str | None = None
    running_reward: float = 0.0
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            _fail("config must be a JSON object", "")
        known = {"schema_version", "process", "payoff", "discount_a", "grid", "solver", "mc", "outputs", "running_reward"}
        extra = set(d) - known
        if extra:
            _fail(f"unknown config keys {sorted(extra)}", sorted(extra)[0])
        for key in ("process", "payoff", "discount_a", "grid"):
            if key not in d:
                _fail(f"missing required key {key!r}", key)
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            _fail(f"unsupported schema_version {version}", "schema_version")
        cfg = cls(
            process=copy.deepcopy(d["process"]),
            payoff=copy.deepcopy(d["payoff"]),
            discount_a=d["discount_a"],
            grid=copy.deepcopy(d["grid"]),
            solver=copy.deepcopy(d.get("solver", {})),
            mc=copy.deepcopy(d.get("mc", {})),
            outputs=d.get("outputs"),
            running_reward=d.get("running_reward", 0.0),
            schema_version=version,
        )
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            _fail(f"config file {path} not found", "", code="config-not-found")
        except json.JSONDecodeError as exc:
            _fail(f"config is not valid JSON: {exc}", "", code="invalid-json")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "process": copy.deepcopy(self.process),
            "payoff": copy.deepcopy(self.payoff),
            "discount_a": self.discount_a,
            "grid": copy.deepcopy(self.grid),
            "solver": copy.deepcopy(self.solver),
            "mc": copy.deepcopy(self.mc),
            "outputs": self.outputs,
            "running_reward": self.running_reward,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def validate(self) -> None:
        """Check everything that can be checked without building matrices."""
        if not isinstance(self.discount_a, (int, float)) or not self.discount_a > 0:
            _fail("discount_a must be a positive number", "discount_a", "invalid-discount")
        g = self.grid
        for key in ("lo", "hi", "n"):
            if key not in g:
                _fail(f"grid needs {key!r}", f"grid.{key}")
        if not g["lo"] < g["hi"]:
            _fail("grid.lo must be below grid.hi", "grid.lo", "invalid-range")
        if int(g["n"]) != g["n"] or g["n"] < 3:
            _fail("grid.n must be an integer >= 3", "grid.n", "too-few-nodes")
        p = self.payoff
        if "table" in p:
            t = p["table"]
            if len(t.get("x", [])) < 2 or len(t.get("x", [])) != len(t.get("g", [])):
                _fail("payoff.table needs equal-length x and g lists", "payoff.table")
            if np.any(np.diff(np.asarray(t["x"], dtype=float)) <= 0):
                _fail("payoff.table.x must be increasing", "payoff.table.x")
        else:
            for key in ("c1", "c2"):
                if key not in p:
                    _fail(f"payoff needs {key!r}", f"payoff.{key}")
            if not p["c1"] < p["c2"]:
                _fail(f"payoff.c1 must be below payoff.c2 (got {p['c1']} >= {p['c2']})", "payoff.c1", "invalid-strikes")
        tag = self.process.get("type")
        if tag not in PROCESS_TAGS:
            _fail(f"unknown process type {tag!r}; expected one of {PROCESS_TAGS}", "process.type")
        for name, build in (("solver", penalty_params), ("mc", sim_config)):
            try:
                build(self)
            except TypeError as exc:
                _fail(f"unknown {name} override: {exc}", name)


# ---------------------------------------------------------------------------
# builders


def penalty_params(cfg: ExperimentConfig) -> PenaltyParams:
    return PenaltyParams(**cfg.solver)


def sim_config(cfg: ExperimentConfig) -> SimConfig:
    mc = {k: v for k, v in cfg.mc.items() if k not in ("start_nodes", "grid_n", "enabled")}
    mc.setdefault("n_paths", 20_000)
    return SimConfig(**mc)


def _grid(cfg: ExperimentConfig, n: int | None = None):
    g = cfg.grid
    return make_uniform_grid(float(g["lo"]), float(g["hi"]), int(n or g["n"]))


def _measure(spec: dict, grid, fld: str) -> DiscreteMeasure:
    if spec is None:
        _fail("jump distribution missing", fld)
    try:
        if "exponential" in spec:
            e = spec["exponential"]
            return DiscreteMeasure.exponential(float(e["gamma"]), float(e.get("step") or grid.h), int(e["n_atoms"]))
        return DiscreteMeasure(spec["atoms"], spec["weights"])
    except KeyError as exc:
        _fail(f"jump distribution needs {exc}", fld)


def _boundary(spec, grid, fld: str):
    if spec in ("reflected", "sticky"):
        return spec
    if isinstance(spec, dict) and "sticky_reflecting" in spec:
        return StickyReflecting(float(spec["sticky_reflecting"]))
    if isinstance(spec, dict) and "jump" in spec:
        j = spec["jump"]
        return JumpBoundarySpec(float(j["lambda"]), _measure(j, grid, fld + ".jump"))
    _fail(f"unknown boundary {spec!r}", fld)


def _hazard(spec: dict, fld: str):
    kind = spec.get("kind")
    if kind == "constant":
        return constant_hazard(float(spec["rate"]))
    if kind == "mixture_exponential":
        return mixture_exponential_hazard(spec["weights"], spec["rates"])
    if kind == "beta_prime":
        return beta_prime_hazard()
    _fail(f"unknown hazard kind {kind!r}", fld + ".kind")


def build_generator(cfg: ExperimentConfig, grid=None):
    grid = grid or _grid(cfg)
    p = cfg.process
    tag = p["type"]
    try:
        if tag == "bm":
            return bm_generator(grid, _boundary(p.get("boundary", "reflected"), grid, "process.boundary"))
        if tag == "skew_bm":
            return skew_bm_generator(grid, float(p["beta"]))
        if tag == "piecewise_diffusion":
            spec = PiecewiseDiffusionSpec.piecewise_constant(p.get("breakpoints", []), p["sigma"], p["rho"], p.get("mu"))
            return piecewise_diffusion_generator(grid, spec)
        if tag == "levy":
            dist = _measure(p["jump_dist"], grid, "process.jump_dist") if p.get("jump_rate", 0) > 0 else None
            return levy_cpd_generator(grid, float(p.get("drift", 0)), float(p.get("diffusion", 1)), float(p.get("jump_rate", 0)), dist)
        if tag == "bm_compound_poisson":
            base = bm_generator(grid, _boundary(p.get("boundary", "reflected"), grid, "process.boundary"))
            jumps = compound_poisson_generator(grid, float(p["jump_rate"]), _measure(p["jump_dist"], grid, "process.jump_dist"))
            return perturb_generator(base, jumps)
        if tag == "regime_switching":
            blocks = [bm_generator(grid, _boundary(b, grid, f"process.regimes[{i}]")) for i, b in enumerate(p["regimes"])]
            return regime_switching_generator(blocks, RegimeCouplingSpec(p["q"]))
        if tag == "semi_markov":
            hazard = _hazard(p["hazard"], "process.hazard")
            s_max = p.get("clock_max") or clock_horizon(hazard, float(p.get("survival_tol", 1e-6)))
            clock = make_uniform_grid(0.0, float(s_max), int(p.get("clock_n", 40)))
            spec = SemiMarkovSpec(hazard, _measure(p["jump_dist"], grid, "process.jump_dist"), clock)
            return semi_markov_lift_generator(grid, spec)
    except KeyError as exc:
        _fail(f"process {tag!r} needs parameter {exc}", f"process.{exc.args[0]}")
    except InvalidInput as exc:
        if exc.field is None:
            exc.field = "process"
        raise
    _fail(f"unknown process type {tag!r}", "process.type")


def build_problem(cfg: ExperimentConfig, space: StateSpace) -> StoppingProblem:
    p = cfg.payoff
    if "table" in p:
        xs = np.asarray(p["table"]["x"], dtype=float)
        gs = np.asarray(p["table"]["g"], dtype=float)
        g = SampledFunction.from_x(space, lambda x: np.interp(x, xs, gs))
    else:
        g = SampledFunction.from_x(space, lambda x: call_spread(x, float(p["c1"]), float(p["c2"])))
    f = SampledFunction.constant(space, float(cfg.running_reward))
    return StoppingProblem(space, float(cfg.discount_a), f, g)


# ---------------------------------------------------------------------------
# output helpers


def output_dir(cli_out=None, cfg: ExperimentConfig | None = None) -> Path:
    out = cli_out or (cfg.outputs if cfg is not None else None) or os.environ.get(OUT_ENV) or "fellerstop_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def region_rows(vf):
    space = vf.space
    xs = space.x_values()
    outer = space.outer_values()
    for i in range(space.size):
        coords = [] if space.layout == "line" else [int(outer[i]) if space.layout == "regime" else float(outer[i])]
        yield [*coords, float(xs[i]), int(vf.stopping_mask[i])]


# ---------------------------------------------------------------------------
# runners


@dataclass
class SolveResult:
    config: ExperimentConfig
    generator: object
    problem: StoppingProblem
    value: object
    files: list


def run_solve(cfg: ExperimentConfig, out: Path | None = None) -> SolveResult:
    G = build_generator(cfg)
    problem = build_problem(cfg, G.space)
    vf = solve_value_function(G, problem, penalty_params(cfg))
    files = []
    if out is not None:
        vf.v.to_csv(out / "value.csv")
        write_json(out / "solve.json", {**vf.to_dict(), "config": cfg.to_dict()})
        write_csv(out / "stopping_region.csv", [*G.space.coordinate_columns(), "stop"], region_rows(vf))
        files = [out / "value.csv", out / "solve.json", out / "stopping_region.csv"]
    return SolveResult(cfg, G, problem, vf, files)


def analytic_benchmark(cfg: ExperimentConfig):
    """Closed-form solution matching the config, or None when there is none."""
    p = cfg.process
    pay = cfg.payoff
    if "table" in pay or cfg.running_reward != 0 or cfg.grid["lo"] != 0:
        return None
    a, c1, c2 = float(cfg.discount_a), float(pay["c1"]), float(pay["c2"])
    if c1 <= 0:
        return None
    if p["type"] == "bm":
        b = p.get("boundary", "reflected")
        if b == "reflected":
            return reflected_straddle_solution(a, c1, c2)
        if b == "sticky":
            return sticky_straddle_solution(a, c1, c2)
        if isinstance(b, dict) and "jump" in b:
            grid = _grid(cfg)
            return jump_boundary_solution(a, float(b["jump"]["lambda"]), _measure(b["jump"], grid, "process.boundary.jump"), c1, c2)
        return None
    if p["type"] == "regime_switching":
        bounds = tuple(p["regimes"])
        q = p["q"]
        if len(bounds) != 2 or any(b not in ("sticky", "reflected") for b in bounds):
            return None
        if any(callable(v) for row in q for v in row):
            return None
        for l in (2, 1):
            try:
                sol = regime_switching_solution(a, float(q[0][1]), float(q[1][0]), c1, c2, l=l, boundaries=bounds)
            except FellerStopError:
                continue
            if sol.audit() >= -1e-9:
                return sol
        return None
    return None


def run_crosscheck(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    """Solver vs closed form (when available) vs Monte Carlo; verdict dict with a ``pass`` flag."""
    res = run_solve(cfg, out)
    vf, G, _problem = res.value, res.generator, res.problem
    verdict = {"config": cfg.to_dict(), "solver": {"converged": vf.converged, "warning": vf.warning}, "checks": []}

    def check(name, value, threshold, ok=None, **extra):
        ok = bool(value <= threshold) if ok is None else bool(ok)
        verdict["checks"].append({"name": name, "value": float(value), "threshold": float(threshold), "pass": ok, **extra})

    ana = analytic_benchmark(cfg)
    if ana is not None:
        diff = sup_norm(vf.v.values - ana.sample(G.space).values)
        check("solver_vs_analytic_sup", diff, constants.ANALYTIC_SUP_TOL)
        verdict["analytic"] = ana.params()

    if cfg.process["type"] == "semi_markov" and cfg.process.get("hazard", {}).get("kind") == "constant":
        V = vf.v.values.reshape(G.space.shape)
        check("clock_variation", float(np.ptp(V, axis=0).max()), constants.SEMI_MARKOV_S_VARIATION_TOL)
        grid = G.space.grid
        p = cfg.process
        Gc = compound_poisson_generator(grid, float(p["hazard"]["rate"]), _measure(p["jump_dist"], grid, "process.jump_dist"))
        vc = solve_value_function(Gc, build_problem(cfg, Gc.space), penalty_params(cfg))
        check("matches_compound_poisson", float(np.abs(V - vc.v.values).max()), constants.SEMI_MARKOV_MATCH_TOL)

    if cfg.mc.get("enabled", True):
        # the chain is simulated on its own (coarser) grid and compared with the solver on that grid
        mc_n = int(cfg.mc.get("grid_n", min(int(cfg.grid["n"]), 61)))
        mgrid = _grid(cfg, mc_n)
        Gm = build_generator(cfg, mgrid)
        pm = build_problem(cfg, Gm.space)
        vm = solve_value_function(Gm, pm, penalty_params(cfg))
        region = stopping_rule(vm)
        starts = cfg.mc.get("start_nodes")
        if starts is None:
            cont = np.flatnonzero(~vm.stopping_mask)
            starts = cont[np.linspace(0, cont.size - 1, min(5, cont.size)).astype(int)].tolist() if cont.size else [0]
        scfg = sim_config(cfg)
        for s in starts:
            est = simulate_stopped_value(Gm, pm, region, int(s), scfg)
            gap = abs(est.mean - vm.v.values[int(s)])
            check(
                f"mc_start_{int(s)}",
                gap,
                constants.MC_SIGMAS * est.std_error + est.truncation_bias_bound,
                mc_mean=est.mean,
                std_error=est.std_error,
                solver_value=float(vm.v.values[int(s)]),
                mc_grid_n=mc_n,
            )
    verdict["pass"] = all(c["pass"] for c in verdict["checks"]) and vf.converged
    if out is not None:
        write_json(out / "crosscheck.json", verdict)
    return verdict


# ---------------------------------------------------------------------------
# figures


REGIME_README = """# Regime-switching figure data

Curves, from lowest to highest value:

- `sticky_bm`: Brownian motion absorbed at 0 (u''(0) = 0).
- `regime_sticky`: regime 1 of the two-regime process. Its boundary at 0 is sticky.
- `regime_reflected`: regime 2 of the two-regime process. Its boundary at 0 is reflecting.
- `reflected_bm`: Brownian motion reflected at 0 (u'(0) = 0).

Regime numbering follows the generator domain: regime 1 is sticky and regime 2 is
reflected. Under the opposite numbering the two middle curves swap names; the data
is unchanged.

Files: `figure2_values.csv` (curve, x, V_numeric, V_analytic) and
`figure2_exercise_points.csv` (curve, x_star_numeric, x_star_analytic).
"""


def _line_problem(grid, a, c1, c2):
    space = StateSpace.line(grid)
    return StoppingProblem(space, a, SampledFunction.constant(space, 0.0), SampledFunction.from_x(space, lambda x: call_spread(x, c1, c2)))


def jump_boundary_figure(out: Path, grid_n: int | None = None, params: PenaltyParams | None = None) -> dict:
    c = constants.FIGURE1
    grid = make_uniform_grid(constants.BENCH_GRID["lo"], constants.BENCH_GRID["hi"], grid_n or constants.BENCH_GRID["n"])
    problem = _line_problem(grid, c["a"], c["c1"], c["c2"])
    rows, points, warnings = [], [], []
    for d in c["jump_sizes"]:
        F = DiscreteMeasure.point_mass(d)
        vf = solve_value_function(bm_generator(grid, JumpBoundarySpec(c["lam"], F)), problem, params)
        ana = jump_boundary_solution(c["a"], c["lam"], F, c["c1"], c["c2"])
        va = ana.value(grid.nodes)
        rows += [[float(d), float(x), float(v), float(w)] for x, v, w in zip(grid.nodes, vf.v.values, va)]
        points.append([float(d), vf.exercise_point(), ana.x_star])
        warnings.append(vf.warning)
    write_csv(out / "figure1_values.csv", ["jump_size", "x", "V_numeric", "V_analytic"], rows)
    write_csv(out / "figure1_exercise_points.csv", ["jump_size", "x_star_numeric", "x_star_analytic"], points)
    summary = {"parameters": {**c, "jump_sizes": list(c["jump_sizes"])}, "exercise_points": points, "warnings": warnings}
    write_json(out / "figure1_summary.json", summary)
    return summary


def regime_figure(out: Path, grid_n: int | None = None, params: PenaltyParams | None = None) -> dict:
    c = constants.FIGURE2
    grid = make_uniform_grid(constants.BENCH_GRID["lo"], constants.BENCH_GRID["hi"], grid_n or constants.BENCH_GRID["n"])
    a, c1, c2 = c["a"], c["c1"], c["c2"]
    line = _line_problem(grid, a, c1, c2)
    curves = {}
    vs = solve_value_function(bm_generator(grid, "sticky"), line, params)
    curves["sticky_bm"] = (vs, 0, sticky_straddle_solution(a, c1, c2).value(grid.nodes), sticky_straddle_solution(a, c1, c2).x_star)
    G = regime_switching_generator(
        [bm_generator(grid, "sticky"), bm_generator(grid, "reflected")],
        RegimeCouplingSpec([[0.0, c["q1"]], [c["q2"], 0.0]]),
    )
    space = G.space
    problem = StoppingProblem(space, a, SampledFunction.constant(space, 0.0), SampledFunction.from_x(space, lambda x: call_spread(x, c1, c2)))
    vreg = solve_value_function(G, problem, params)
    ana = regime_switching_solution(a, c["q1"], c["q2"], c1, c2, l=2)
    curves["regime_sticky"] = (vreg, 0, ana.value(grid.nodes, 1), ana.x1_star)
    curves["regime_reflected"] = (vreg, 1, ana.value(grid.nodes, 2), ana.x2_star)
    vr = solve_value_function(bm_generator(grid, "reflected"), line, params)
    ref = reflected_straddle_solution(a, c1, c2)
    curves["reflected_bm"] = (vr, 0, ref.value(grid.nodes), ref.x_star)
    rows, points = [], []
    for name, (vf, k, va, xa) in curves.items():
        v = vf.v.slice(k)
        rows += [[name, float(x), float(u), float(w)] for x, u, w in zip(grid.nodes, v, va)]
        points.append([name, vf.exercise_point(k), float(xa)])
    write_csv(out / "figure2_values.csv", ["curve", "x", "V_numeric", "V_analytic"], rows)
    write_csv(out / "figure2_exercise_points.csv", ["curve", "x_star_numeric", "x_star_analytic"], points)
    (out / "README.md").write_text(REGIME_README, encoding="utf-8")
    summary = {
        "parameters": c,
        "exercise_points": points,
        "warnings": [vs.warning, vreg.warning, vr.warning],
        "sticky_value_at_zero": float(vs.v.values[0]),
    }
    write_json(out / "figure2_summary.json", summary)
    return summary


FIGURES = {"jump_boundary_fig": jump_boundary_figure, "regime_fig": regime_figure}
