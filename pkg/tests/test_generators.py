import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from processes import build_all

from fellerstop.core import Grid1D, InvalidInput, StateSpace, make_uniform_grid
from fellerstop.generators import (
    DiscreteMeasure,
    GeneratorMatrix,
    InvariantViolation,
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
    ensure_valid,
    levy_cpd_generator,
    mixture_exponential_hazard,
    piecewise_diffusion_generator,
    read_triplets,
    regime_switching_generator,
    semi_markov_lift_generator,
    skew_bm_generator,
    validate_generator,
)

FAMILIES = build_all(n=41)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_every_family_is_a_valid_generator(name):
    G = FAMILIES[name]
    report = validate_generator(G)
    assert report.ok
    assert G.conservative
    assert np.abs(G @ np.ones(G.size)).max() <= 1e-10
    off = G.dense() - np.diag(G.diagonal())
    assert off.min() >= 0


def test_reflected_three_nodes():
    G = bm_generator(make_uniform_grid(0, 10, 3))
    assert np.allclose(G.dense()[0, :2], [-0.04, 0.04], atol=1e-15)
    assert np.allclose(G.dense()[1], [0.02, -0.04, 0.02], atol=1e-15)


def test_sticky_row_is_absorbing():
    G = bm_generator(make_uniform_grid(0, 10, 11), "sticky")
    assert np.all(G.dense()[0] == 0)
    assert validate_generator(G).absorbing_rows == [0]


def test_sticky_reflecting_rate():
    grid = make_uniform_grid(0, 1, 11)
    c, h = 3.0, grid.h
    G = bm_generator(grid, StickyReflecting(c))
    assert G.dense()[0, 1] == pytest.approx(c / (h * (2 + c * h)), rel=1e-14)
    with pytest.raises(InvalidInput):
        StickyReflecting(0.0)


def test_jump_boundary_lands_on_grid():
    grid = make_uniform_grid(0, 12, 961)
    G = bm_generator(grid, JumpBoundarySpec(1.0, DiscreteMeasure.point_mass(3.0)))
    row = G.dense()[0]
    assert row[240] == 1.0
    assert row[0] == -1.0
    assert np.count_nonzero(row) == 2


def test_jump_boundary_outside_window():
    with pytest.raises(InvalidInput) as exc:
        bm_generator(make_uniform_grid(0, 4, 41), JumpBoundarySpec(1.0, DiscreteMeasure.point_mass(5.0)))
    assert exc.value.code == "atom-outside-domain"


def test_skew_node_rates():
    G = skew_bm_generator(make_uniform_grid(-1, 1, 21), 0.9)
    j = 10
    row = G.dense()[j]
    assert row[j - 1] == pytest.approx(10.0)
    assert row[j] == pytest.approx(-100.0)
    assert row[j + 1] == pytest.approx(90.0)


@pytest.mark.parametrize("grid,beta,code", [
    (make_uniform_grid(-1, 1, 21), 1.0, "invalid-beta"),
    (make_uniform_grid(0, 1, 21), 0.5, "zero-not-interior"),
    (make_uniform_grid(-1, 1.05, 21), 0.5, "zero-not-interior"),
    (Grid1D([-1.0, 0.0, 0.5, 2.0]), 0.5, "nonuniform-grid"),
])
def test_skew_errors(grid, beta, code):
    with pytest.raises(InvalidInput) as exc:
        skew_bm_generator(grid, beta)
    assert exc.value.code == code


def _harmonic_profile(G, lo_value=0.0, hi_value=1.0):
    """Solve G u = 0 in the interior with Dirichlet ends."""
    A = G.dense()
    n = A.shape[0]
    A[0] = 0
    A[0, 0] = 1
    A[-1] = 0
    A[-1, -1] = 1
    rhs = np.zeros(n)
    rhs[0], rhs[-1] = lo_value, hi_value
    return np.linalg.solve(A, rhs)


@given(st.floats(0.05, 0.95))
def test_skew_harmonic_slopes(beta):
    L = 1.0
    grid = make_uniform_grid(-L, L, 41)
    u = _harmonic_profile(skew_bm_generator(grid, beta))
    s = np.diff(u) / grid.h
    # flux balance at 0: beta * s+ = (1 - beta) * s-
    assert np.allclose(s[:20], beta / L, atol=1e-10)
    assert np.allclose(s[20:], (1 - beta) / L, atol=1e-10)


def test_piecewise_transmission():
    L = 1.0
    grid = make_uniform_grid(-L, L, 41)
    spec = PiecewiseDiffusionSpec.piecewise_constant([0.0], [1.0, 2.0], [1.0, 1.0])
    u = _harmonic_profile(piecewise_diffusion_generator(grid, spec))
    s = np.diff(u) / grid.h
    assert np.allclose(s[:20], 2 / (3 * L), atol=1e-10)
    assert np.allclose(s[20:], 1 / (3 * L), atol=1e-10)


def test_piecewise_errors():
    grid = make_uniform_grid(0, 1, 11)
    off_grid = PiecewiseDiffusionSpec.piecewise_constant([0.55], [1.0, 2.0], [1.0, 1.0])
    with pytest.raises(InvalidInput) as exc:
        piecewise_diffusion_generator(grid, off_grid)
    assert exc.value.code == "J-not-on-grid"
    degenerate = PiecewiseDiffusionSpec.piecewise_constant([0.5], [1.0, 0.0], [1.0, 1.0])
    with pytest.raises(InvalidInput) as exc:
        piecewise_diffusion_generator(grid, degenerate)
    assert exc.value.code == "ellipticity-violation"


def test_piecewise_smooth_matches_bm():
    grid = make_uniform_grid(0, 5, 51)
    spec = PiecewiseDiffusionSpec(lambda x: np.ones_like(x), lambda x: np.ones_like(x), lambda x: np.zeros_like(x))
    assert np.allclose(piecewise_diffusion_generator(grid, spec).dense(), bm_generator(grid).dense(), atol=1e-12)


def test_levy_errors():
    grid = make_uniform_grid(0, 1, 11)
    with pytest.raises(InvalidInput) as exc:
        levy_cpd_generator(grid, 0.0, -1.0)
    assert exc.value.code == "negative-diffusion"
    with pytest.raises(InvalidInput) as exc:
        compound_poisson_generator(grid, -1.0, DiscreteMeasure.point_mass(0.1))
    assert exc.value.code == "negative-rate"


def test_compound_poisson_mean_drift():
    grid = make_uniform_grid(0, 10, 101)
    dist = DiscreteMeasure([0.2, 0.5], [0.25, 0.75])
    G = compound_poisson_generator(grid, 2.0, dist)
    x = grid.nodes
    drift = (G @ x)[:50]
    assert np.allclose(drift, 2.0 * dist.mean(), atol=1e-12)


def test_exponential_measure():
    m = DiscreteMeasure.exponential(1.0, 0.1, 200)
    assert m.weights.sum() == pytest.approx(1.0)
    assert m.mean() == pytest.approx(1.0 + 0.05, abs=2e-3)
    with pytest.raises(InvalidInput):
        DiscreteMeasure([1.0], [0.5])


def test_regime_coupling():
    grid = make_uniform_grid(0, 1, 5)
    G = regime_switching_generator(
        [bm_generator(grid), bm_generator(grid)], RegimeCouplingSpec([[0, 0.3], [lambda x: 1 + x, 0]])
    )
    D = G.dense()
    assert D[2, 7] == pytest.approx(0.3)
    assert D[7, 2] == pytest.approx(1.5)
    assert G.space.layout == "regime"


def test_regime_errors():
    grid = make_uniform_grid(0, 1, 5)
    with pytest.raises(InvalidInput) as exc:
        regime_switching_generator([bm_generator(grid)], RegimeCouplingSpec([[0, 1], [1, 0]]))
    assert exc.value.code == "coupling-dimension-mismatch"
    with pytest.raises(InvalidInput) as exc:
        regime_switching_generator(
            [bm_generator(grid), bm_generator(make_uniform_grid(0, 2, 5))], RegimeCouplingSpec([[0, 1], [1, 0]])
        )
    assert exc.value.code == "grid-mismatch"
    with pytest.raises(InvalidInput):
        RegimeCouplingSpec([[0, 1]])


def test_hazards():
    s = np.linspace(0, 50, 11)
    assert np.allclose(constant_hazard(2.0)(s), 2.0)
    h = mixture_exponential_hazard([0.5, 0.5], [1.0, 3.0])(s)
    assert h[0] == pytest.approx(2.0)
    assert h[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(h) <= 0)
    assert np.allclose(beta_prime_hazard()(s), 1 / (1 + s))
    assert clock_horizon(constant_hazard(1.0), 1e-6) == pytest.approx(np.log(1e6), rel=1e-8)


def test_semi_markov_structure():
    grid = make_uniform_grid(0, 1, 6)
    clock = make_uniform_grid(0, 2, 5)
    G = semi_markov_lift_generator(grid, SemiMarkovSpec(constant_hazard(1.0), DiscreteMeasure.point_mass(0.2), clock))
    D = G.dense()
    nx = grid.n
    assert D[nx + 2, 2 * nx + 2] == pytest.approx(1 / clock.h)
    assert D[nx + 2, 3] == pytest.approx(1.0)
    top = (clock.n - 1) * nx + 2
    assert D[top, top] == pytest.approx(-1.0)
    with pytest.raises(InvalidInput) as exc:
        semi_markov_lift_generator(grid, SemiMarkovSpec(lambda s: -np.ones_like(s), DiscreteMeasure.point_mass(0.2), clock))
    assert exc.value.code == "negative-hazard"


def test_invariant_violation_names_row():
    space = StateSpace.line(make_uniform_grid(0, 1, 3))
    bad = GeneratorMatrix(space, np.array([[-1.0, 1.0, 0.0], [-0.5, 0.0, 0.5], [0.0, 0.0, 0.0]]))
    report = validate_generator(bad)
    assert not report.ok
    assert report.violations[0] == {"kind": "negative-off-diagonal", "row": 1, "col": 0, "value": -0.5}
    with pytest.raises(InvariantViolation):
        ensure_valid(bad)
    surplus = GeneratorMatrix(space, np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    assert validate_generator(surplus).violations[0]["kind"] == "positive-row-sum"


@pytest.mark.parametrize("name", ["bm_jump_boundary", "regime_switching", "semi_markov"])
def test_triplet_round_trip(tmp_path, name):
    G = FAMILIES[name]
    path = tmp_path / "g.csv"
    G.write_triplets(path)
    back = read_triplets(path, G.space)
    assert (back.entries != G.entries).nnz == 0
    assert path.read_text().splitlines()[1] == "row,col,rate"


@given(st.integers(3, 60), st.floats(0.1, 20))
def test_bm_rows_conservative(n, width):
    G = bm_generator(make_uniform_grid(0, width, n))
    assert np.abs(G.row_sums()).max() <= 1e-10 * (n / width) ** 2
