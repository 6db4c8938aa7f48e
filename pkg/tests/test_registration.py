import numpy as np
import pytest

from phasereg import build_grid, shapes
from phasereg.adjoint import endpoint_cost
from phasereg.controls import MomentaField, NormalControl
from phasereg.optimizer import OptimizerConfig
from phasereg.registration import (RegistrationError, RegistrationProblem, component_count,
                                   decompose, discrepancy, flow_particles, solve, target_endpoint)


@pytest.fixture(scope="module")
def grid():
    return build_grid(33, 1.0, 6, 0.15)


def _problem(grid, f0, ft, iters=10, **kw):
    return RegistrationProblem(f0, ft, grid, C_top=1e4, C_end=1e6,
                               optimizer=OptimizerConfig(max_iters=iters), **kw)


def test_component_count_cases(grid):
    assert component_count(np.zeros((33, 33))) == 0
    assert component_count(shapes.two_discs(grid)) == 2
    assert component_count(shapes.four_discs(grid)) == 4


def test_component_count_pinched_neck():
    g = build_grid(41)
    X1, X2 = g.meshgrid()
    body = shapes.discs(g, 0.25, [(-0.4, 0.0), (0.4, 0.0)])
    neck = (np.abs(X2) < g.dx / 2) & (np.abs(X1) <= 0.4)  # exactly one cell wide
    before = np.maximum(body, neck.astype(float))
    assert neck.sum(axis=1).max() == 1
    assert component_count(before) == 1
    after = before.copy()
    after[20, :] = np.where(neck[20, :], 0.0, after[20, :])  # cut the neck at x1 = 0
    assert component_count(after) == 2
    # diagonal contact does not connect under 4-connectivity
    diag = np.zeros((5, 5))
    diag[1, 1] = diag[2, 2] = 1
    assert component_count(diag) == 2


def test_flow_particles_identity_and_translation(grid):
    pts = np.array([[0.0, 0.0], [0.3, -0.2], [-0.5, 0.5]])
    z = np.zeros((grid.T - 1, 33, 33))
    out = flow_particles(grid, z, z, pts)
    assert out.shape == (grid.T, 3, 2)
    np.testing.assert_array_equal(out[-1], pts)
    c = 0.3
    out = flow_particles(grid, np.full_like(z, c), z, pts)
    np.testing.assert_allclose(out[-1] - pts, [[c, 0.0]] * 3, atol=1e-12)
    back = flow_particles(grid, np.full_like(z, c), z, out[-1], backward=True)
    np.testing.assert_allclose(back[-1], pts, atol=1e-12)


def test_problem_validation(grid):
    d = shapes.disc(grid, 0.3)
    with pytest.raises(ValueError):
        RegistrationProblem(d, d[:5, :5], grid)
    with pytest.raises(ValueError):
        RegistrationProblem(d, d, grid, C_end=0.0)
    with pytest.raises(ValueError):
        RegistrationProblem(d, d, grid, C_top=-1.0)


def test_identical_shapes_have_zero_discrepancy(grid):
    d = shapes.disc(grid, 0.35)
    res = discrepancy(d, d, _problem(grid, d, d))
    assert res.d_sigma == 0.0 and res.rho_forward == res.rho_backward == 0.0
    assert not res.partial
    assert all(r.iterations == 0 for r in res.reports)


def test_discrepancy_symmetric_bit_exact(grid):
    a, b = shapes.disc(grid, 0.35), shapes.two_discs(grid)
    p = _problem(grid, a, b, iters=5)
    ab = discrepancy(a, b, p)
    ba = discrepancy(b, a, p)
    assert ab.d_sigma == ba.d_sigma
    assert ab.rho_forward == ba.rho_backward and ab.rho_backward == ba.rho_forward
    assert ab.d_sigma == min(ab.rho_forward, ab.rho_backward)
    par = discrepancy(a, b, p, parallel=True)
    assert par.d_sigma == ab.d_sigma


def test_solve_disc_to_two_discs(grid):
    p = _problem(grid, shapes.one_disc(grid), shapes.two_discs(grid), iters=20)
    sol = solve(p)
    report, rho = sol
    assert np.isfinite(rho) and rho == sol.objective.E
    u, m = sol.controls
    assert np.any(u.coeffs) and np.any(m.m1)
    zero = endpoint_cost(_uncontrolled_end(p), sol.target_endpoint, p.powers, p.C_end, p.kernels)
    assert rho < zero
    assert report.E_trace[0] == pytest.approx(zero)


def _uncontrolled_end(p):
    """Endpoint of ``f0`` under zero controls (the target map applied to the swapped problem)."""
    return target_endpoint(p.swapped())


def test_empty_target_rho_bounded_by_zero_control_cost(grid):
    d = shapes.disc(grid, 0.3)
    p = _problem(grid, d, np.zeros_like(d), iters=10)
    sol = solve(p)
    zero = endpoint_cost(_uncontrolled_end(p), sol.target_endpoint, p.powers, p.C_end, p.kernels)
    assert 0 < sol.rho < zero
    assert sol.objective.control_u > sol.objective.control_v


def test_restarts_keep_the_best(grid):
    p = _problem(grid, shapes.one_disc(grid), shapes.two_discs(grid), iters=5)
    plain = solve(p)
    multi = solve(_problem(grid, p.f0, p.f_target, iters=5, restarts=2, seed=3))
    assert multi.rho <= plain.rho


def test_decompose_zero_velocity_is_identity(grid):
    p = _problem(grid, shapes.one_disc(grid), shapes.two_discs(grid), iters=3)
    sol = solve(p)
    d = decompose(sol, p, stride=4)
    assert d.particles.shape[0] == grid.T
    assert d.labels.shape == (d.particles.shape[1],)
    assert component_count(d.advected_indicator) == component_count(p.f0)
    # v-only endpoint equals evolving with u dropped
    from phasereg.forward import evolve
    u, m = sol.controls
    ref = evolve(np.asarray(p.f0, float), NormalControl.zeros(grid), m, p.kernels, p.scheme)
    np.testing.assert_array_equal(d.v_only_endpoint, ref.endpoint)
    ref_u = evolve(np.asarray(p.f0, float), u, MomentaField.zeros(grid), p.kernels, p.scheme)
    np.testing.assert_array_equal(d.u_only_endpoint, ref_u.endpoint)


def test_decompose_with_no_motion(grid):
    d0 = shapes.disc(grid, 0.3)
    p = _problem(grid, d0, d0)
    sol = solve(p)
    d = decompose(sol, p)
    np.testing.assert_array_equal(d.particles[-1], d.particles[0])
    np.testing.assert_array_equal(d.advected_indicator, d0)


def test_registration_error_carries_partial(grid, monkeypatch):
    import phasereg.registration as reg
    from phasereg.optimizer import OptimizationError

    def boom(*a, **k):
        raise OptimizationError("non-finite objective", 7)
    monkeypatch.setattr(reg, "minimize", boom)
    d = shapes.disc(grid, 0.3)
    with pytest.raises(RegistrationError) as ei:
        solve(_problem(grid, d, d))
    assert "iteration 7" in str(ei.value)
    res = discrepancy(d, d, _problem(grid, d, d))
    assert res.partial and res.d_sigma == np.inf
