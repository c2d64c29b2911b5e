"""Parameters of the two reference figures and the default benchmark grid."""

FIGURE1 = {
    "a": 0.1,
    "lam": 1.0,
    "c1": 1.0,
    "c2": 4.0,
    "jump_sizes": (0.5, 3.0, 5.0),
}

FIGURE2 = {
    "a": 0.1,
    "q1": 0.1,
    "q2": 0.1,
    "c1": 1.0,
    "c2": 4.0,
}

# [0, 12] leaves 8 units beyond c2; the far-field error decays like exp(-sqrt(2a) * 8)
BENCH_GRID = {"lo": 0.0, "hi": 12.0, "n": 961}

# thresholds used by the crosscheck verdict
ANALYTIC_SUP_TOL = 5e-3
MC_SIGMAS = 3.0
SEMI_MARKOV_S_VARIATION_TOL = 1e-6
SEMI_MARKOV_MATCH_TOL = 1e-4
