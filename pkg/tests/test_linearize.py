import numpy as np
import pytest

from treewave.graph import interval_graph, star_graph
from treewave.linearize import (
    DtnOracle,
    combo_cache,
    extract_linear_dtn,
    interaction_integral,
    known_region_correction,
    trilinear_trace,
    volumetric_interaction,
    _pair_against,
)
from treewave.samples import Coverage, CoverageError, RecoveredSample
from treewave.graph import Band
from treewave.solver import (
    BoundarySignal,
    Coefficients,
    boundary_derivative,
    build_grid,
    solve_linear,
)


def bump(t, t0, w, power=3):
    s = (t - t0) / w
    out = np.zeros_like(np.asarray(t, dtype=float))
    m = (s > 0) & (s < 1)
    out[m] = np.sin(np.pi * s[m]) ** power
    return out


@pytest.fixture(scope="module")
def interval_setup():
    g = interval_graph(1.0)
    grid = build_grid(g, 2.5e-3, 0.9, 3.0)
    t = grid.times

    def sig(vals):
        return BoundarySignal(grid.dt, {"a": vals})

    coeffs = Coefficients.sample(
        grid,
        lambda e, x, d, tt: 0.5 * np.cos(np.pi * x),
        lambda e, x, d, tt: 1.0 + 0.5 * np.sin(x + tt),
    )
    oracle = DtnOracle.from_simulation(grid, coeffs, guard=50.0)
    f1 = sig(bump(t, 0.3, 0.6))
    f2 = sig(bump(t, 0.35, 0.5))
    f3 = sig(bump(t, 0.4, 0.55))
    h = sig(bump(t, 1.2, 0.8))
    return g, grid, coeffs, oracle, sig, (f1, f2, f3, h)


def test_extract_linear_dtn_exact_for_linear_map(interval_setup):
    g, grid, coeffs, _, sig, (f1, *_rest) = interval_setup
    lin = Coefficients(coeffs.q, None)
    oracle = DtnOracle.from_simulation(grid, lin)
    for eps in (1.0, 0.1):
        out = extract_linear_dtn(oracle, f1, eps)
        ref = oracle(f1)
        assert np.max(np.abs(out.leaf("a") - ref.leaf("a"))) < 1e-11
        assert out.diagnostics["richardson_gap"] < 1e-11


def test_extract_linear_dtn_zero(interval_setup):
    _, grid, _, oracle, sig, _ = interval_setup
    z = sig(np.zeros(grid.nt + 1))
    assert extract_linear_dtn(oracle, z, 0.1).norm() == 0.0


def test_extract_linear_dtn_richardson_slope():
    g = interval_graph(1.0)
    grid = build_grid(g, 5e-3, 0.9, 2.5)
    t = grid.times
    coeffs = Coefficients.sample(grid, None, lambda e, x, d, tt: 1.0)
    oracle = DtnOracle.from_simulation(grid, coeffs, guard=50.0)
    f = BoundarySignal(grid.dt, {"a": bump(t, 0.2, 0.8)})
    lin = DtnOracle.from_simulation(grid, Coefficients(coeffs.q, None))
    ref = lin(f).leaf("a")
    errs = []
    for eps in (0.4, 0.2):
        out = extract_linear_dtn(oracle, f, eps)
        errs.append(np.max(np.abs(out.leaf("a") - ref)))
    slope = np.log2(errs[0] / errs[1])
    assert 1.7 < slope < 2.3


def test_trilinear_trace_vanishes_for_linear_map(interval_setup):
    g, grid, coeffs, _, sig, (f1, f2, f3, _h) = interval_setup
    lin_oracle = DtnOracle.from_simulation(grid, Coefficients(coeffs.q, None))
    tr = trilinear_trace(lin_oracle, f1, f2, f3, 0.1, 0.1, 0.1)
    # the 1/eps^3 factor amplifies solver round-off; 1e-8 is 8 orders below signal scale
    assert tr.norm() < 1e-8


def test_trilinear_trace_permutation_symmetric(interval_setup):
    _, grid, _, oracle, _, (f1, f2, f3, _h) = interval_setup
    cache = combo_cache()
    base = trilinear_trace(oracle, f1, f2, f3, 0.1, 0.1, 0.1, cache=cache)
    perm = trilinear_trace(oracle, f3, f1, f2, 0.1, 0.1, 0.1, cache=cache)
    assert np.max(np.abs(base.leaf("a") - perm.leaf("a"))) < 1e-9 * max(base.norm(), 1e-300)


def test_trilinear_trace_matches_direct_response(interval_setup):
    """D3 of the boundary map approaches the boundary derivative of the solution
    driven by -6 a v1 v2 v3, at the cubic O(eps^2) rate."""
    g, grid, coeffs, oracle, _, (f1, f2, f3, _h) = interval_setup
    qonly = Coefficients(coeffs.q, None)
    v1 = solve_linear(grid, qonly, f1)
    v2 = solve_linear(grid, qonly, f2)
    v3 = solve_linear(grid, qonly, f3)
    F = -6.0 * coeffs.a * (v1.data * v2.data * v3.data).real
    w = solve_linear(grid, qonly, None, F=F)
    ref = boundary_derivative(w).leaf("a")

    errs = []
    cache = combo_cache()
    for eps in (0.2, 0.1):
        tr = trilinear_trace(oracle, f1, f2, f3, eps, eps, eps, cache=cache)
        errs.append(np.max(np.abs(tr.leaf("a") - ref)))
    slope = np.log2(errs[0] / errs[1])
    assert 1.6 < slope < 2.4
    assert errs[1] < 0.05 * np.max(np.abs(ref))


def test_interaction_integral_zero_when_a_zero(interval_setup):
    g, grid, coeffs, _, sig, (f1, f2, f3, h) = interval_setup
    oracle = DtnOracle.from_simulation(grid, Coefficients(coeffs.q, None))
    res = interaction_integral(oracle, h, f1, f2, f3, eps=0.1, max_halvings=1)
    assert abs(res.value) < 1e-10


def test_interaction_integral_matches_volumetric(interval_setup):
    g, grid, coeffs, oracle, _, (f1, f2, f3, h) = interval_setup
    ref = volumetric_interaction(grid, coeffs, f1, f2, f3, h)
    res = interaction_integral(oracle, h, f1, f2, f3)
    assert abs(res.value - ref) / abs(ref) < 0.01
    # ladder decreasing toward the reference
    errs = [abs(v - ref) for _e, v in res.ladder]
    assert errs[-1] < errs[0]


def test_interaction_multilinearity(interval_setup):
    _, grid, _, oracle, sig, (f1, f2, f3, h) = interval_setup
    cache = combo_cache()
    t = grid.times
    g1 = sig(bump(t, 0.5, 0.4))
    eps = 0.1
    lhs = trilinear_trace(oracle, f1 + g1, f2, f3, eps, eps, eps, cache=cache)
    r1 = trilinear_trace(oracle, f1, f2, f3, eps, eps, eps, cache=cache)
    r2 = trilinear_trace(oracle, g1, f2, f3, eps, eps, eps, cache=cache)
    gap = np.max(np.abs(lhs.leaf("a") - r1.leaf("a") - r2.leaf("a")))
    assert gap < 0.05 * max(lhs.norm(), 1e-300)


def test_time_shift_consistency():
    """With constant a the boundary map commutes with time shifts; with a
    genuinely time-dependent a it does not."""
    g = interval_graph(1.0)
    grid = build_grid(g, 5e-3, 0.9, 3.0)
    t = grid.times
    f = BoundarySignal(grid.dt, {"a": 0.3 * bump(t, 0.2, 0.5)})
    shift_steps = int(round(0.4 / grid.dt))

    def shifted(sig_in):
        arr = np.zeros_like(sig_in.leaf("a"))
        arr[shift_steps:] = sig_in.leaf("a")[: len(arr) - shift_steps]
        return BoundarySignal(grid.dt, {"a": arr})

    for afun, should_commute in (
        (lambda e, x, d, tt: 1.0, True),
        (lambda e, x, d, tt: 1.0 + np.sin(3 * tt), False),
    ):
        coeffs = Coefficients.sample(grid, None, afun)
        oracle = DtnOracle.from_simulation(grid, coeffs, guard=50.0)
        a_then_shift = shifted(oracle(f))
        shift_then_a = oracle(shifted(f))
        # compare the nonlinear parts: subtract the linear response
        lin = DtnOracle.from_simulation(grid, Coefficients(coeffs.q, None))
        lin_shift = shifted(lin(f))
        lhs = a_then_shift.leaf("a") - lin_shift.leaf("a")
        rhs = shift_then_a.leaf("a") - lin(shifted(f)).leaf("a")
        scale = max(np.max(np.abs(lhs)), 1e-300)
        gap = np.max(np.abs(lhs - rhs)) / scale
        if should_commute:
            assert gap < 1e-6
        else:
            assert gap > 0.02


def test_known_region_correction_empty_mask(interval_setup):
    g, grid, coeffs, _, _, (f1, f2, f3, h) = interval_setup
    cov = Coverage()  # no bands at all
    res = known_region_correction(grid, coeffs, cov, f1, f2, f3, h)
    assert res.value == 0.0
    assert res.n_points == 0


def test_known_region_correction_accounts_for_band():
    """Correction over a band holding the true a equals the volumetric integral
    restricted there (ground-truth closure on a synthetic patch)."""
    g = interval_graph(1.0)
    grid = build_grid(g, 2.5e-3, 0.9, 3.0)
    t = grid.times

    def sig(vals):
        return BoundarySignal(grid.dt, {"a": vals})

    f1 = sig(bump(t, 0.3, 0.6))
    f2 = sig(bump(t, 0.35, 0.5))
    f3 = sig(bump(t, 0.4, 0.55))
    h = sig(bump(t, 1.2, 0.8))
    a_true = lambda e, x, d, tt: 1.0 + 0.2 * x
    coeffs = Coefficients.sample(grid, None, a_true)

    # coverage band holding the whole interaction region, sampled densely
    cov = Coverage()
    cov.add_band(Band(edge="e0", slope=0.0, c_lo=0.0, c_hi=3.0))
    for x in np.linspace(0.0, 1.0, 21):
        for tt in np.linspace(0.0, 3.0, 31):
            cov.add_sample(RecoveredSample("e0", float(x), float(tt), 1.0 + 0.2 * float(x), 0.0, "seed"))

    res = known_region_correction(grid, coeffs, cov, f1, f2, f3, h)
    ref = volumetric_interaction(grid, coeffs, f1, f2, f3, h)
    assert abs(res.value - ref) / abs(ref) < 0.02
    assert abs(res.unaccounted) < 1e-12


def test_known_region_correction_missing_samples_error():
    g = interval_graph(1.0)
    grid = build_grid(g, 5e-3, 0.9, 3.0)
    t = grid.times

    def sig(vals):
        return BoundarySignal(grid.dt, {"a": vals})

    f1 = sig(bump(t, 0.3, 0.6))
    f2 = sig(bump(t, 0.35, 0.5))
    f3 = sig(bump(t, 0.4, 0.55))
    h = sig(bump(t, 1.2, 0.8))
    coeffs = Coefficients.sample(grid, None, lambda e, x, d, tt: 1.0)
    cov = Coverage()
    cov.add_band(Band(edge="e0", slope=0.0, c_lo=0.0, c_hi=3.0))  # band but no samples
    with pytest.raises(CoverageError, match="no recovered samples"):
        known_region_correction(grid, coeffs, cov, f1, f2, f3, h)
