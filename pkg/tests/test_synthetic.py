import os

import numpy as np
import pytest

from wallbayes.errors import InvalidArgumentError
from wallbayes.synthetic import (DAY, AirTemperature, Layer, TruthSpec, gen_boundary_temperatures, generate,
                                 layer_table, spin_up_t0, window_sigmas)
from wallbayes.rng import Streams

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def quiet_spec(**kw):
    base = dict(fine_exponent=6, spinup_days=2.0, campaign_days=2.0)
    base.update(kw)
    return TruthSpec.default().with_updates(**base)


class TestTruth:
    def test_default_u_and_c(self):
        spec = TruthSpec.default()
        assert spec.u_value == pytest.approx(1.715, abs=1e-12)
        assert spec.c_value == pytest.approx(3.55e5, rel=1e-12)
        assert [row["name"] for row in layer_table(spec)][0] == "plaster"

    def test_layers_must_tile_wall(self):
        with pytest.raises(InvalidArgumentError):
            TruthSpec((Layer("a", 0.2, 1.0, 1e6),), length=0.31)
        with pytest.raises(InvalidArgumentError):
            TruthSpec((Layer("a", 0.31, -1.0, 1e6),))

    def test_dict_roundtrip(self):
        spec = TruthSpec.default()
        assert TruthSpec.from_dict(spec.to_dict()) == spec

    def test_element_values_on_aligned_mesh(self):
        spec = TruthSpec.default()
        mesh = spec.fine_mesh
        kappa, _ = spec.element_values(mesh)
        w = mesh.element_widths
        u = 1.0 / (spec.r_i + spec.r_e + np.sum(w / kappa))
        assert u == pytest.approx(spec.u_value, rel=1e-12)


class TestBoundary:
    def test_zero_grf_is_periodic(self):
        air = AirTemperature(290.0, ((3.0, DAY, 0.2),))
        spec = quiet_spec(internal_air=air, external_air=AirTemperature(275.0, ((4.0, DAY, 1.0),)))
        b = gen_boundary_temperatures(spec, Streams(0))
        per_day = int(DAY / spec.sample_interval)
        np.testing.assert_allclose(b.t_internal[per_day:], b.t_internal[:-per_day], atol=1e-9)
        np.testing.assert_allclose(b.t_external[per_day:], b.t_external[:-per_day], atol=1e-9)

    def test_time_grid_covers_spinup_and_campaign(self):
        spec = quiet_spec()
        t = spec.time_grid()
        assert t[0] == -2 * DAY and t[-1] == 2 * DAY
        assert np.all(np.diff(t) == spec.sample_interval)


class TestSpinUp:
    def test_initial_state_forgotten(self):
        spec = quiet_spec(spinup_days=6.25)
        b = gen_boundary_temperatures(spec, Streams(3).child("synth"))
        n = spec.fine_mesh.n_nodes
        a = spin_up_t0(spec, b, np.full(n, 260.0))
        c = spin_up_t0(spec, b, np.full(n, 320.0))
        assert np.max(np.abs(a - c)) < 1e-6

    def test_constant_boundaries_give_steady_state(self):
        spec = quiet_spec(internal_air=AirTemperature(294.0), external_air=AirTemperature(274.0),
                          spinup_days=30.0, rel_error=0.0)
        d = generate(spec, 1)
        q = 20.0 * spec.u_value
        np.testing.assert_allclose(d.clean.q_internal, q, rtol=1e-6)
        np.testing.assert_allclose(d.clean.q_external, q, rtol=1e-6)
        assert d.t0_true[0] == pytest.approx(294.0 - spec.r_i * q, abs=1e-4)

    def test_boundary_must_cover_spinup(self):
        spec = quiet_spec()
        b = gen_boundary_temperatures(spec.with_updates(spinup_days=1.0), Streams(0))
        with pytest.raises(InvalidArgumentError):
            spin_up_t0(spec, b)


class TestNoise:
    def test_window_sigmas(self):
        q = np.array([5.0, 1.0, -3.0, 10.0, 20.0, 7.0])
        np.testing.assert_allclose(window_sigmas(q, 0.1, 2), [0.2, 0.2, 0.2, 1.5, 1.5, 0.7])

    def test_zero_error_is_noiseless(self):
        d = generate(quiet_spec(rel_error=0.0), 5)
        np.testing.assert_array_equal(d.noisy.q_internal, d.clean.q_internal)
        np.testing.assert_array_equal(d.noisy.q_external, d.clean.q_external)

    def test_noise_level(self, default_dataset):
        d = default_dataset
        for noisy, clean, sig in ((d.noisy.q_internal, d.clean.q_internal, d.sigma_internal),
                                  (d.noisy.q_external, d.clean.q_external, d.sigma_external)):
            z = (noisy - clean) / sig
            assert z.std() == pytest.approx(1.0, rel=0.05)
            assert abs(z.mean()) < 4 / np.sqrt(z.size)
            blk = slice(1, 31)
            assert sig[5] == pytest.approx(0.05 * np.mean(np.abs(clean[blk])), rel=1e-12)


class TestDataset:
    def test_deterministic_in_seed(self):
        spec = quiet_spec()
        a, b, c = generate(spec, 8), generate(spec, 8), generate(spec, 9)
        np.testing.assert_array_equal(a.noisy.q_internal, b.noisy.q_internal)
        np.testing.assert_array_equal(a.boundary.t_external, b.boundary.t_external)
        assert not np.array_equal(a.noisy.q_internal, c.noisy.q_internal)

    def test_campaign_span(self, default_dataset):
        t = default_dataset.noisy.times
        assert t[0] == 0.0 and t[-1] == pytest.approx(13.5 * DAY)
        rec = default_dataset.truth_record()
        assert rec["u_true"] == pytest.approx(1.715)
        assert len(rec["t0_true"]) == 513

    def test_golden_series(self, default_dataset):
        gold = np.genfromtxt(os.path.join(GOLDEN, "default_seed42_hourly.csv"), delimiter=",", names=True)
        c = default_dataset.clean
        np.testing.assert_array_equal(c.times[::12], gold["time_s"])
        np.testing.assert_allclose(c.t_internal[::12], gold["t_internal_K"], rtol=1e-10)
        np.testing.assert_allclose(c.t_external[::12], gold["t_external_K"], rtol=1e-10)
        np.testing.assert_allclose(c.q_internal[::12], gold["q_internal_Wm2"], rtol=1e-7, atol=1e-7)
        np.testing.assert_allclose(c.q_external[::12], gold["q_external_Wm2"], rtol=1e-7, atol=1e-7)

    def test_golden_initial_temperature(self, default_dataset):
        gold = np.genfromtxt(os.path.join(GOLDEN, "default_seed42_t0.csv"), delimiter=",", names=True)
        np.testing.assert_allclose(default_dataset.t0_true[::8], gold["t0_K"], rtol=1e-10)
