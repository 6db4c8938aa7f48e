import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from phasereg import build_grid, build_kernels
from phasereg.grid import RadialKernelSpec, adjoint_convolve, convolve, odd_grid_size


def test_default_grid_after_coercion():
    N = odd_grid_size(150)
    assert N == 151
    g = build_grid(N, 1.0, 30, 0.1)
    assert g.dt == pytest.approx(1 / 29)
    assert g.tau == pytest.approx(0.1 / math.sqrt(29))
    assert g.dx == pytest.approx(2 / 150)
    # with the literal N=150 the spacing would be 2/149
    assert 2 * 1.0 / (150 - 1) == pytest.approx(2 / 149)


def test_smallest_grid():
    g = build_grid(3, 1.0, 2, 1.0)
    np.testing.assert_array_equal(g.x, [-1.0, 0.0, 1.0])
    assert g.dt == 1.0


@pytest.mark.parametrize("args", [(4, 1, 30, 0.1), (1, 1, 30, 0.1), (5, 0, 30, 0.1),
                                  (5, 1, 1, 0.1), (5, 1, 30, 0.0), (5, -1, 30, 0.1)])
def test_build_grid_rejects(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_origin_is_a_node():
    g = build_grid(101)
    assert g.x[50] == 0.0
    assert g.x[0] == pytest.approx(-1.0) and g.x[-1] == pytest.approx(1.0)


def test_kernel_entries_match_loop_oracle():
    g = build_grid(21, 1.0, 5, 0.3)
    k = build_kernels(g)
    np.testing.assert_allclose(k.M, oracles.heat_kernel(21, 1.0, g.tau), rtol=1e-13)
    c = 10
    assert k.M[c, c] == pytest.approx(g.dx ** 2 / (2 * math.pi * g.tau ** 2))
    assert k.DM[c, c] == 0.0
    np.testing.assert_allclose(k.DM, -(g.meshgrid()[0] / g.tau ** 2) * k.M)


def test_kernel_symmetries():
    g = build_grid(31, 1.0, 5, 0.2)
    k = build_kernels(g)
    np.testing.assert_allclose(k.M, k.M[::-1, :])
    np.testing.assert_allclose(k.M, k.M[:, ::-1])
    np.testing.assert_allclose(k.M, k.M.T)
    np.testing.assert_allclose(k.DM, -k.DM[::-1, :])
    np.testing.assert_array_equal(k.DMT, k.DM.T)


def test_kernel_mass_n101():
    g = build_grid(101, 1.0, 2, 0.1)  # dt = 1 so tau = sigma = 0.1 = 5 dx
    k = build_kernels(g)
    assert g.tau >= 5 * g.dx
    mass = k.M.sum()
    assert abs(mass - 1) <= 1e-6
    # double-resolution quadrature oracle agrees
    assert abs(oracles.gaussian_mass(201, 1.0, g.tau) - mass) <= 1e-6


def test_kernel_mass_looser_at_three_cells():
    g = build_grid(67, 1.0, 2, 0.1)
    assert g.tau >= 3 * g.dx
    assert abs(build_kernels(g).M.sum() - 1) <= 1e-3


def test_ktilde_shape_and_centre():
    g = build_grid(9, 1.0, 3, 0.1)
    k = build_kernels(g)
    assert k.Ktilde.shape == (17, 17)
    assert k.Ktilde[8, 8] == 1.0
    np.testing.assert_allclose(k.Ktilde_center, k.Ktilde[4:13, 4:13])


def test_convolve_trivial_cases():
    g = build_grid(15, 1.0, 3, 0.2)
    k = build_kernels(g)
    np.testing.assert_array_equal(convolve(k.M, np.zeros((15, 15))), 0)
    delta = np.zeros((15, 15))
    delta[7, 7] = 1
    np.testing.assert_allclose(convolve(k.M, delta), k.M, atol=1e-15)
    np.testing.assert_allclose(convolve(k.M, delta, method="direct"), k.M, atol=1e-15)


def test_convolve_matches_nested_loop_oracle(rng):
    g = build_grid(11, 1.0, 3, 0.3)
    k = build_kernels(g)
    h = rng.standard_normal((11, 11))
    for K in (k.M, k.DM, k.Ktilde):
        ref = oracles.direct_convolve(K, h)
        np.testing.assert_allclose(convolve(K, h), ref, rtol=1e-10, atol=1e-13)


def test_convolve_constant_field_interior_and_boundary():
    g = build_grid(41, 1.0, 2, 0.1)
    k = build_kernels(g)
    out = convolve(k.M, np.ones((41, 41)))
    assert abs(out[20, 20] - 1) < 1e-6
    assert out[0, 0] < out[0, 20] < out[20, 20]
    # boundary decay follows the direct-summation oracle
    g2 = build_grid(15, 1.0, 2, 0.3)
    k2 = build_kernels(g2)
    ones = np.ones((15, 15))
    np.testing.assert_allclose(convolve(k2.M, ones), oracles.direct_convolve(k2.M, ones), rtol=1e-12)


def test_fast_and_direct_paths_agree(rng):
    g = build_grid(33, 1.0, 5, 0.1)
    k = build_kernels(g)
    h = rng.standard_normal((33, 33))
    for K in (k.M, k.DM):
        a = convolve(K, h, method="fft")
        b = convolve(K, h, method="direct")
        assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)
    np.testing.assert_allclose(k.conv("DM", h), convolve(k.DM, h), rtol=1e-12, atol=1e-14)


def test_adjoint_convolve_identities(rng):
    g = build_grid(17, 1.0, 5, 0.1)
    k = build_kernels(g)
    b = rng.standard_normal((17, 17))
    np.testing.assert_allclose(adjoint_convolve(k.M, b), convolve(k.M, b), atol=1e-14)
    np.testing.assert_allclose(adjoint_convolve(k.DM, b), -convolve(k.DM, b), atol=1e-14)


def test_convolve_rejects_bad_shapes():
    with pytest.raises(ValueError):
        convolve(np.ones((4, 4)), np.ones((5, 5)))
    with pytest.raises(ValueError):
        convolve(np.ones((3, 3)), np.ones((5, 5)))
    with pytest.raises(ValueError):
        convolve(np.ones((5, 5)), np.ones((5, 5)), method="magic")


def test_derivative_kernel_ramp():
    g = build_grid(101, 1.0, 2, 0.1)
    k = build_kernels(g)
    X1, X2 = g.meshgrid()
    interior = (np.abs(X1) < 0.5) & (np.abs(X2) < 0.5)
    assert np.max(np.abs(k.conv("DM", X1)[interior] - 1)) <= 1e-3
    assert np.max(np.abs(k.conv("DMT", X2)[interior] - 1)) <= 1e-3
    assert np.max(np.abs(k.conv("DM", X2)[interior])) <= 1e-3


def test_m_contraction_in_max_norm(rng):
    g = build_grid(25, 1.0, 4, 0.1)
    k = build_kernels(g)
    h = rng.uniform(-3, 3, (25, 25))
    assert np.abs(k.conv("M", h)).max() <= k.M.sum() * np.abs(h).max() + 1e-12


def test_kernel_width_default_and_override():
    g = build_grid(21, 1.0, 3, 0.1)
    assert RadialKernelSpec().resolve_width(g) == pytest.approx(10 * g.dx)
    assert RadialKernelSpec(0.3).resolve_width(g) == 0.3


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), n=st.sampled_from([5, 9, 13]))
def test_adjoint_inner_product_property(seed, n):
    r = np.random.default_rng(seed)
    g = build_grid(n, 1.0, 3, 0.2)
    k = build_kernels(g)
    a = r.standard_normal((n, n))
    b = r.standard_normal((n, n))
    for name in ("M", "DM", "DMT", "Ktilde"):
        lhs = np.sum(k.conv(name, a) * b)
        rhs = np.sum(a * k.conv_adj(name, b))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)
