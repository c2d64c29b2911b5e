"""Monte Carlo simulation of the continuous-time chain defined by a generator matrix.

Paths use exponential holding times with rate -G[i, i] and jump to j with
probability G[i, j] / -G[i, i]. The running reward is integrated exactly
between jumps, absorbing states receive their closed-form tail f/a, and the
horizon is cut at ``t_max`` with an explicit bias bound.

Random numbers come from a counter-based splitmix64 hash of
(seed, path, draw), so each path's stream depends only on its index and the
estimate does not depend on the order in which paths are run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from .core import InvalidInput, StoppingProblem
from .generators import GeneratorMatrix
from .solver import StoppingRegion, ValueFunction, stopping_rule

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimConfig:
    """``t_max=None`` picks the horizon so the truncation bias is at most target_se/2."""

    n_paths: int = 200_000
    t_max: float | None = None
    rng_seed: int = 12345
    antithetic: bool = False
    target_se: float = 1e-4

    def __post_init__(self):
        if self.n_paths < 1:
            raise InvalidInput("n_paths must be at least 1", field="mc.n_paths")
        if self.antithetic and self.n_paths % 2:
            raise InvalidInput("antithetic sampling needs an even n_paths", field="mc.n_paths")
        if self.t_max is not None and not self.t_max > 0:
            raise InvalidInput("t_max must be positive", field="mc.t_max")
        if not self.target_se > 0:
            raise InvalidInput("target_se must be positive", field="mc.target_se")
        if not 0 <= int(self.rng_seed) <= _MASK64:
            raise InvalidInput("rng_seed must be an unsigned 64-bit integer", field="mc.rng_seed")

    def horizon(self, problem: StoppingProblem) -> float:
        if self.t_max is not None:
            return float(self.t_max)
        bound = problem.reward_bound()
        if bound == 0:
            return 1.0
        return max(math.log(2.0 * bound / self.target_se), 0.0) / problem.a + 1.0

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "t_max": self.t_max,
            "rng_seed": int(self.rng_seed),
            "antithetic": self.antithetic,
            "target_se": self.target_se,
        }


@dataclass(frozen=True)
class PathEstimate:
    mean: float
    std_error: float
    n_paths: int
    truncation_bias_bound: float
    t_max: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "bias_bound": self.truncation_bias_bound,
            "t_max": self.t_max,
        }


@dataclass
class MCReport:
    estimate: PathEstimate
    checks: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def add_check(self, name: str, margin: float):
        """Record a check that passes when ``margin`` >= 0."""
        self.checks.append({"name": name, "pass": bool(margin >= 0), "margin": float(margin)})

    def to_dict(self) -> dict:
        out = {
            "mean": self.estimate.mean,
            "std_error": self.estimate.std_error,
            "n_paths": self.estimate.n_paths,
            "bias_bound": self.estimate.truncation_bias_bound,
            "checks": self.checks,
        }
        out.update(self.details)
        return out

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _mix(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _uniform(key, counter, flip):
    """Uniform on (0, 1) from draw ``counter`` of the stream ``key``."""
    bits = _mix(key + np.uint64(counter)) >> np.uint64(11)
    u = (np.float64(bits) + 0.5) * (1.0 / 9007199254740992.0)
    return 1.0 - u if flip else u


@numba.njit(cache=True)
def _path_key(seed, path, antithetic):
    stream = path // 2 if antithetic else path
    return _mix(np.uint64(seed) ^ _mix(np.uint64(stream)))


@numba.njit(cache=True)
def _jump(i, u, indptr, indices, cum):
    lo = indptr[i]
    hi = indptr[i + 1] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return indices[lo]


@numba.njit(cache=True)
def _stopped_kernel(start, indptr, indices, cum, rate, f, g, stop, a, t_max, seed, n_paths, antithetic):
    out = np.empty(n_paths)
    for p in range(n_paths):
        key = _path_key(seed, p, antithetic)
        flip = antithetic and (p % 2 == 1)
        i = start
        t = 0.0
        acc = 0.0
        c = 0
        if stop[i]:
            out[p] = g[i]
            continue
        while True:
            disc = math.exp(-a * t) if f[i] != 0.0 or rate[i] == 0.0 else 0.0
            if rate[i] == 0.0:
                acc += f[i] / a * disc
                break
            dt = -math.log(_uniform(key, c, flip)) / rate[i]
            c += 1
            if t + dt >= t_max:
                acc += f[i] / a * (disc - math.exp(-a * t_max))
                break
            if f[i] != 0.0:
                acc += f[i] / a * (disc - math.exp(-a * (t + dt)))
            t += dt
            i = _jump(i, _uniform(key, c, flip), indptr, indices, cum)
            c += 1
            if stop[i]:
                acc += math.exp(-a * t) * g[i]
                break
        out[p] = acc
    return out


@numba.njit(cache=True)
def _martingale_kernel(start, indptr, indices, cum, rate, f, u, stop, a, checkpoints, seed, n_paths, antithetic):
    """M(t) = e^{-at} u(X_t) + int_0^t e^{-as} f ds at each checkpoint, stopped and unstopped."""
    nc = checkpoints.size
    stopped = np.empty((n_paths, nc))
    free = np.empty((n_paths, nc))
    t_end = checkpoints[nc - 1]
    for p in range(n_paths):
        key = _path_key(seed, p, antithetic)
        flip = antithetic and (p % 2 == 1)
        i = start
        t = 0.0
        acc = 0.0
        c = 0
        k = 0
        tau_done = stop[i]
        m_tau = u[i]
        while k < nc:
            if rate[i] == 0.0:
                dt = np.inf
            else:
                dt = -math.log(_uniform(key, c, flip)) / rate[i]
                c += 1
            t_next = t + dt
            # record checkpoints falling in [t, t_next)
            while k < nc and checkpoints[k] < t_next:
                tc = checkpoints[k]
                mc = acc + f[i] / a * (math.exp(-a * t) - math.exp(-a * tc)) + math.exp(-a * tc) * u[i]
                free[p, k] = mc
                stopped[p, k] = m_tau if tau_done else mc
                k += 1
            if k >= nc or t_next > t_end:
                break
            if f[i] != 0.0:
                acc += f[i] / a * (math.exp(-a * t) - math.exp(-a * t_next))
            t = t_next
            i = _jump(i, _uniform(key, c, flip), indptr, indices, cum)
            c += 1
            if not tau_done and stop[i]:
                tau_done = True
                m_tau = acc + math.exp(-a * t) * u[i]
    return stopped, free


@numba.njit(cache=True)
def _endstate_kernel(start, indptr, indices, cum, rate, t_end, seed, n_paths):
    out = np.empty(n_paths, dtype=np.int64)
    for p in range(n_paths):
        key = _path_key(seed, p, False)
        i = start
        t = 0.0
        c = 0
        while rate[i] > 0.0:
            t += -math.log(_uniform(key, c, False)) / rate[i]
            c += 1
            if t >= t_end:
                break
            i = _jump(i, _uniform(key, c, False), indptr, indices, cum)
            c += 1
        out[p] = i
    return out


# ---------------------------------------------------------------------------
# drivers


def _chain(G: GeneratorMatrix):
    """Exit rates and per-row cumulative jump probabilities (CSR, off-diagonal only)."""
    m = G.entries.tocsr().copy()
    m.setdiag(0.0)
    m.eliminate_zeros()
    m.sort_indices()
    rate = np.asarray(m.sum(axis=1)).ravel()
    cum = m.data.copy()
    for i in range(m.shape[0]):
        lo, hi = m.indptr[i], m.indptr[i + 1]
        if hi > lo:
            cum[lo:hi] = np.cumsum(cum[lo:hi]) / rate[i]
            cum[hi - 1] = 1.0
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), cum, rate


def _estimate(samples: np.ndarray, antithetic: bool):
    if antithetic:
        samples = 0.5 * (samples[0::2] + samples[1::2])
    n = samples.size
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _check_region(problem, region):
    if region.space != problem.space:
        raise InvalidInput("stopping region lives on a different state space", code="space-mismatch")


def simulate_stopped_value(
    G: GeneratorMatrix, problem: StoppingProblem, region: StoppingRegion, start_index: int, cfg: SimConfig
) -> PathEstimate:
    """Estimate J_x(tau) for tau = first entry of the chain into ``region``."""
    _check_region(problem, region)
    indptr, indices, cum, rate = _chain(G)
    t_max = cfg.horizon(problem)
    samples = _stopped_kernel(
        int(start_index),
        indptr,
        indices,
        cum,
        rate,
        problem.f.values,
        problem.g.values,
        region.mask,
        problem.a,
        t_max,
        np.uint64(cfg.rng_seed),
        cfg.n_paths,
        cfg.antithetic,
    )
    mean, se = _estimate(samples, cfg.antithetic)
    bias = math.exp(-problem.a * t_max) * problem.reward_bound()
    return PathEstimate(mean, se, cfg.n_paths, bias, t_max)


def martingale_check(
    G: GeneratorMatrix, problem: StoppingProblem, vf: ValueFunction, start_index: int, checkpoints, cfg: SimConfig
) -> MCReport:
    """Test that M stopped at tau* has mean V(start) and unstopped M is a supermartingale."""
    cps = np.sort(np.asarray(checkpoints, dtype=float))
    if cps.size == 0 or np.any(cps < 0):
        raise InvalidInput("checkpoints must be a nonempty list of nonnegative times", field="checkpoints")
    indptr, indices, cum, rate = _chain(G)
    region = stopping_rule(vf)
    v = vf.v.values
    v0 = float(v[start_index])
    stopped, free = _martingale_kernel(
        int(start_index),
        indptr,
        indices,
        cum,
        rate,
        problem.f.values,
        v,
        region.mask,
        problem.a,
        cps,
        np.uint64(cfg.rng_seed),
        cfg.n_paths,
        cfg.antithetic,
    )
    report = MCReport(PathEstimate(v0, 0.0, cfg.n_paths, 0.0, float(cps[-1])), details={"V_start": v0, "checkpoints": []})
    for k, t in enumerate(cps):
        ms, se_s = _estimate(stopped[:, k], cfg.antithetic)
        mf, se_f = _estimate(free[:, k], cfg.antithetic)
        report.add_check(f"martingale_to_tau@{t:g}", 3 * se_s - abs(ms - v0) + 1e-12)
        report.add_check(f"supermartingale@{t:g}", v0 + 3 * se_f - mf + 1e-12)
        report.details["checkpoints"].append(
            {"t": float(t), "stopped_mean": ms, "stopped_se": se_s, "free_mean": mf, "free_se": se_f}
        )
    return report


def perturbed_region_suboptimality(
    G: GeneratorMatrix,
    problem: StoppingProblem,
    vf: ValueFunction,
    shift: int,
    start_index: int,
    cfg: SimConfig,
) -> MCReport:
    """Simulate the optimal region moved by ``shift`` grid nodes and check J <= V(start) + 3 SE."""
    region = stopping_rule(vf).shifted(int(shift))
    est = simulate_stopped_value(G, problem, region, start_index, cfg)
    v0 = float(vf.v.values[start_index])
    report = MCReport(est, details={"V_start": v0, "shift": int(shift)})
    report.add_check(f"suboptimal_shift{int(shift):+d}", v0 + 3 * est.std_error - est.mean)
    return report


def simulate_end_states(G: GeneratorMatrix, start_index: int, t: float, n_paths: int, seed: int = 0) -> np.ndarray:
    """States of independent chains started at ``start_index`` after time t."""
    indptr, indices, cum, rate = _chain(G)
    return _endstate_kernel(int(start_index), indptr, indices, cum, rate, float(t), np.uint64(seed), int(n_paths))


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return replace(cfg, rng_seed=int(seed))
