import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import direct_backward_euler, steady_flux
from wallbayes.errors import InvalidArgumentError, OutOfRangeError
from wallbayes.heat_model import (BoundarySeries, ThermalSample, build_mesh, compute_c_value,
                                  compute_u_value, restrict_to_mesh, simulate_states, solve_hdm,
                                  solve_hdm_batch)

DAY = 86400.0


def constant_boundary(t_int, t_ext, t_end=10 * DAY):
    return BoundarySeries([0.0, t_end], [t_int, t_int], [t_ext, t_ext])


def layered_sample(mesh, r_i=0.13, r_e=0.04):
    x = mesh.midpoints
    kappa = np.where(x < 0.1, 0.8, np.where(x < 0.2, 0.3, 1.1))
    c = np.where(x < 0.1, 1.2e6, np.where(x < 0.2, 4e5, 1.5e6))
    return ThermalSample(kappa, c, np.full(mesh.n_nodes, 285.0), r_i, r_e)


def wavy_boundary(t_end=3 * DAY, step=300.0):
    t = np.arange(0.0, t_end + step, step)
    return BoundarySeries(t, 294 + 2 * np.sin(2 * np.pi * t / DAY), 278 + 5 * np.sin(2 * np.pi * t / DAY - 1.0))


class TestMesh:
    def test_uniform_mesh(self):
        mesh = build_mesh(0.31, 4)
        assert mesh.n_nodes == 5
        np.testing.assert_allclose(mesh.element_widths, 0.0775)
        assert mesh.node_positions[-1] == 0.31

    @pytest.mark.parametrize("length,n", [(0.0, 4), (-1.0, 4), (0.3, 0), (0.3, 2.5)])
    def test_invalid_mesh(self, length, n):
        with pytest.raises(InvalidArgumentError):
            build_mesh(length, n)

    def test_restrict_midpoint_sampling(self):
        fine = build_mesh(1.0, 9)
        coarse = build_mesh(1.0, 3)
        np.testing.assert_array_equal(restrict_to_mesh(np.arange(9.0), fine, coarse), [1.0, 4.0, 7.0])


class TestEffectiveProperties:
    def test_homogeneous_u_value(self):
        mesh = build_mesh(0.31, 8)
        s = ThermalSample(np.full(8, 0.75), np.full(8, 1e6), np.zeros(9), 0.13, 0.04)
        expected = 1.0 / (0.13 + 0.04 + 0.31 / 0.75)
        assert compute_u_value(s, mesh) == pytest.approx(expected, rel=1e-12)
        assert compute_c_value(s, mesh) == pytest.approx(0.31e6, rel=1e-12)

    def test_two_layer_closed_form(self):
        mesh = build_mesh(0.2, 2)
        s = ThermalSample([0.5, 2.0], [1e6, 2e6], np.zeros(3), 0.1, 0.05)
        assert compute_u_value(s, mesh) == pytest.approx(1 / (0.15 + 0.1 / 0.5 + 0.1 / 2.0), rel=1e-12)
        assert compute_c_value(s, mesh) == pytest.approx(0.1e6 + 0.2e6, rel=1e-12)

    def test_mesh_mismatch(self):
        s = ThermalSample(np.ones(4), np.ones(4), np.zeros(5), 0.1, 0.1)
        with pytest.raises(InvalidArgumentError):
            compute_u_value(s, build_mesh(1.0, 8))

    @pytest.mark.parametrize("bad", [dict(kappa=[1.0, 0.0]), dict(c=[1.0, -1.0]), dict(r_i=0.0),
                                     dict(t0=[0.0, 0.0])])
    def test_invalid_sample(self, bad):
        kw = dict(kappa=[1.0, 1.0], c=[1.0, 1.0], t0=[0.0, 0.0, 0.0], r_i=0.1, r_e=0.1)
        kw.update(bad)
        with pytest.raises(InvalidArgumentError):
            ThermalSample(**kw)


class TestSteadyState:
    def test_analytic_steady_flux(self):
        mesh = build_mesh(0.31, 32)
        s = layered_sample(mesh)
        b = constant_boundary(293.0, 273.0, 30 * DAY)
        hist = solve_hdm(s, b, mesh, 3600.0, [30 * DAY])
        expected = steady_flux(s.kappa, mesh.element_widths, s.r_i, s.r_e, 293.0, 273.0)
        assert hist.q_internal[0] == pytest.approx(expected, rel=1e-3)
        assert hist.q_external[0] == pytest.approx(expected, rel=1e-3)
        assert expected == pytest.approx(20.0 * compute_u_value(s, mesh), rel=1e-12)

    def test_equilibrium_stays_put(self):
        mesh = build_mesh(0.31, 16)
        s = ThermalSample(np.ones(16), np.full(16, 1e6), np.full(17, 280.0), 0.13, 0.04)
        hist = solve_hdm(s, constant_boundary(280.0, 280.0), mesh, 300.0, [DAY, 2 * DAY])
        np.testing.assert_allclose(hist.q_internal, 0.0, atol=1e-9)
        np.testing.assert_allclose(hist.final_temperature, 280.0, rtol=1e-12)


class TestAgainstDirectSolver:
    def test_modal_matches_direct_backward_euler(self):
        mesh = build_mesh(0.31, 16)
        s = layered_sample(mesh)
        s = ThermalSample(s.kappa, s.c, np.linspace(292, 276, 17), s.r_i, s.r_e)
        b = wavy_boundary(1 * DAY)
        dt = 300.0
        times = b.times
        q_in, q_out, T_end = direct_backward_euler(s.kappa, s.c, mesh.element_widths, s.r_i, s.r_e,
                                                   s.t0, times, b.t_internal, b.t_external, dt)
        hist = solve_hdm(s, b, mesh, dt, times)
        np.testing.assert_allclose(hist.q_internal, q_in, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(hist.q_external, q_out, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(hist.final_temperature, T_end, rtol=1e-12)

    def test_batch_equals_single(self):
        mesh = build_mesh(0.31, 8)
        rng = np.random.default_rng(0)
        J = 5
        kappa = rng.uniform(0.3, 2.0, (J, 8))
        c = rng.uniform(3e5, 2e6, (J, 8))
        t0 = rng.uniform(275, 295, (J, 9))
        r_i = rng.uniform(0.05, 0.2, J)
        r_e = rng.uniform(0.02, 0.1, J)
        b = wavy_boundary(DAY)
        out = b.times[1::7]
        batch = solve_hdm_batch(kappa, c, t0, r_i, r_e, b, mesh, 300.0, out)
        for j in range(J):
            single = solve_hdm(ThermalSample(kappa[j], c[j], t0[j], r_i[j], r_e[j]), b, mesh, 300.0, out)
            np.testing.assert_array_equal(batch.q_internal[j], single.q_internal)
            np.testing.assert_array_equal(batch.q_external[j], single.q_external)

    def test_off_grid_output_interpolates(self):
        mesh = build_mesh(0.31, 8)
        s = layered_sample(mesh)
        b = wavy_boundary(DAY)
        on = solve_hdm(s, b, mesh, 300.0, [600.0, 900.0])
        # the last output time becomes a step, so 750 s falls between the steps at 600 and 900 s
        mid = solve_hdm(s, b, mesh, 300.0, [750.0, 900.0])
        ti, _ = b.at([600.0, 750.0, 900.0])
        s_600 = ti[0] - on.q_internal[0] * s.r_i
        s_900 = ti[2] - on.q_internal[1] * s.r_i
        assert mid.q_internal[0] == pytest.approx((ti[1] - 0.5 * (s_600 + s_900)) / s.r_i, rel=1e-12)


class TestConservation:
    def test_energy_balance_per_step(self):
        mesh = build_mesh(0.31, 32)
        s = layered_sample(mesh)
        b = wavy_boundary(2 * DAY)
        steps, T, (ti, te), M = simulate_states(s, b, mesh, 300.0, 2 * DAY)
        energy = T @ M.sum(axis=0)
        q_i = (ti - T[:, 0]) / s.r_i
        q_e = (T[:, -1] - te) / s.r_e
        dt = np.diff(steps)
        residual = np.diff(energy) - dt * (q_i[1:] - q_e[1:])
        scale = np.abs(np.diff(energy)) + dt * (np.abs(q_i[1:]) + np.abs(q_e[1:]))
        assert np.max(np.abs(residual) / scale) <= 1e-8

    def test_maximum_principle(self):
        mesh = build_mesh(0.31, 16)
        s = layered_sample(mesh)
        h = mesh.element_widths[0]
        dt = max(np.max(s.c * h ** 2 / (6 * s.kappa)), 300.0)
        b = wavy_boundary(2 * DAY)
        _, T, _, _ = simulate_states(s, b, mesh, dt, 2 * DAY)
        lo = min(s.t0.min(), b.t_internal.min(), b.t_external.min())
        hi = max(s.t0.max(), b.t_internal.max(), b.t_external.max())
        assert T.min() >= lo - 1e-9 and T.max() <= hi + 1e-9


def test_second_order_spatial_convergence():
    """Errors against a fine reference shrink by about 4 per halving of h."""
    b = wavy_boundary(0.25 * DAY, 60.0)
    dt = 60.0
    t_out = [0.25 * DAY]

    def flux(n):
        mesh = build_mesh(0.31, n)
        s = ThermalSample(np.full(n, 0.9), np.full(n, 1.3e6), np.full(n + 1, 285.0), 0.13, 0.04)
        h = solve_hdm(s, b, mesh, dt, t_out)
        return np.array([h.q_internal[0], h.q_external[0]])

    ref = flux(1024)
    errs = [np.max(np.abs(flux(n) - ref)) for n in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), orders


class TestErrors:
    def test_output_beyond_coverage(self):
        mesh = build_mesh(0.31, 4)
        s = ThermalSample(np.ones(4), np.ones(4) * 1e6, np.full(5, 280.0), 0.1, 0.1)
        with pytest.raises(OutOfRangeError):
            solve_hdm(s, constant_boundary(290, 270, DAY), mesh, 300.0, [2 * DAY])

    def test_start_before_coverage(self):
        mesh = build_mesh(0.31, 4)
        s = ThermalSample(np.ones(4), np.ones(4) * 1e6, np.full(5, 280.0), 0.1, 0.1)
        with pytest.raises(OutOfRangeError):
            solve_hdm(s, constant_boundary(290, 270, DAY), mesh, 300.0, [DAY / 2], t_start=-10.0)

    def test_bad_dt(self):
        mesh = build_mesh(0.31, 4)
        s = ThermalSample(np.ones(4), np.ones(4) * 1e6, np.full(5, 280.0), 0.1, 0.1)
        with pytest.raises(InvalidArgumentError):
            solve_hdm(s, constant_boundary(290, 270, DAY), mesh, 0.0, [DAY / 2])

    def test_boundary_validation(self):
        with pytest.raises(InvalidArgumentError):
            BoundarySeries([0.0, 0.0], [1.0, 1.0], [1.0, 1.0])
        with pytest.raises(InvalidArgumentError):
            BoundarySeries([0.0], [1.0], [1.0])


@given(shift=st.floats(-30, 30), seed=st.integers(0, 2 ** 16))
def test_flux_invariant_under_uniform_temperature_shift(shift, seed):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(0.31, 6)
    kappa = rng.uniform(0.2, 2.0, 6)
    c = rng.uniform(2e5, 2e6, 6)
    t0 = rng.uniform(275, 295, 7)
    b = wavy_boundary(0.5 * DAY, 900.0)
    out = b.times[1::5]
    base = solve_hdm(ThermalSample(kappa, c, t0, 0.1, 0.05), b, mesh, 900.0, out)
    b2 = BoundarySeries(b.times, b.t_internal + shift, b.t_external + shift)
    moved = solve_hdm(ThermalSample(kappa, c, t0 + shift, 0.1, 0.05), b2, mesh, 900.0, out)
    np.testing.assert_allclose(moved.q_internal, base.q_internal, atol=1e-8)
    np.testing.assert_allclose(moved.q_external, base.q_external, atol=1e-8)


@given(seed=st.integers(0, 2 ** 16), scale=st.floats(0.5, 2.0))
def test_flux_linear_in_temperature_scaling(seed, scale):
    """With zero reference temperature the map from (T0, T_I, T_E) to fluxes is linear."""
    rng = np.random.default_rng(seed)
    mesh = build_mesh(0.31, 5)
    kappa = rng.uniform(0.2, 2.0, 5)
    c = rng.uniform(2e5, 2e6, 5)
    t0 = rng.uniform(-5, 5, 6)
    b = wavy_boundary(0.5 * DAY, 900.0)
    b0 = BoundarySeries(b.times, b.t_internal - 285, b.t_external - 285)
    bs = BoundarySeries(b.times, scale * b0.t_internal, scale * b0.t_external)
    out = b.times[2::6]
    h1 = solve_hdm(ThermalSample(kappa, c, t0, 0.12, 0.05), b0, mesh, 900.0, out)
    h2 = solve_hdm(ThermalSample(kappa, c, scale * t0, 0.12, 0.05), bs, mesh, 900.0, out)
    np.testing.assert_allclose(h2.q_internal, scale * h1.q_internal, rtol=1e-9, atol=1e-9)


@given(kappa=st.lists(st.floats(0.05, 5.0), min_size=1, max_size=12),
       r_i=st.floats(0.01, 1.0), r_e=st.floats(0.01, 1.0))
def test_u_value_bounded_by_film_resistances(kappa, r_i, r_e):
    n = len(kappa)
    mesh = build_mesh(0.31, n)
    s = ThermalSample(kappa, np.ones(n), np.zeros(n + 1), r_i, r_e)
    u = compute_u_value(s, mesh)
    assert 0 < u < 1 / (r_i + r_e)
