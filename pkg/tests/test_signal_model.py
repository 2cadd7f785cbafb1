import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isactensor.signal_model import (SPEED_OF_LIGHT, ArrayConfig, ScatterKind, Scatterer, ScatterSet,
                                     ScenarioBounds, comm_channel, delay_to_range, doppler_to_velocity,
                                     generate_scenario, max_target_doppler, sensing_channel, steering_matrix,
                                     steering_vector, ula_response)

from helpers import four_targets


class TestArrayConfig:
    def test_reference_timing(self):
        cfg = ArrayConfig()
        assert cfg.delta_f == pytest.approx(781_250.0)
        assert cfg.t_cp == pytest.approx(0.64e-6)
        assert cfg.t_sym == pytest.approx(1.92e-6)
        assert cfg.delay_period == pytest.approx(1.28e-6)
        assert cfg.wavelength == pytest.approx(SPEED_OF_LIGHT / 28e9)

    def test_explicit_cp(self):
        cfg = ArrayConfig(f_s=1e9, t_cp=128 / 1e9)
        assert cfg.t_sym == pytest.approx(2 * 128e-9)

    def test_freq_ratio(self):
        cfg = ArrayConfig(f_s=1e9)
        assert cfg.freq_ratio(128) == pytest.approx(1e9 / 28e9)

    @pytest.mark.parametrize("kw", [{"m_bs": 0}, {"k0": 0}, {"f_s": 0.0}, {"f_c": -1.0}, {"t_cp": -1e-9}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ArrayConfig(**kw)

    def test_rx_antennas(self):
        cfg = ArrayConfig(m_re=6, m_ue=4)
        assert (cfg.rx_antennas("bs"), cfg.rx_antennas("ue")) == (6, 4)
        with pytest.raises(ValueError):
            cfg.rx_antennas("x")


class TestSteering:
    def test_reference_element_is_one(self):
        assert steering_vector(8, 0.7)[0] == 1.0

    def test_broadside_is_all_ones(self):
        np.testing.assert_allclose(steering_vector(5, 0.0), np.ones(5))

    def test_half_wavelength_phase_progression(self):
        a = steering_vector(4, np.pi / 6)
        np.testing.assert_allclose(a[1:] / a[:-1], np.exp(-1j * np.pi * 0.5))

    def test_beam_squint_scales_phase(self):
        a0 = steering_vector(4, 0.3)
        a1 = steering_vector(4, 0.3, freq_ratio=0.1)
        np.testing.assert_allclose(np.angle(a1[1]), np.angle(a0[1]) * 1.1)

    @given(st.lists(st.floats(-1.4, 1.4), min_size=1, max_size=5))
    def test_matrix_matches_vectors(self, angles):
        m = steering_matrix(6, angles)
        for j, th in enumerate(angles):
            np.testing.assert_allclose(m[:, j], steering_vector(6, th))
        np.testing.assert_allclose(ula_response(6, np.sin(angles)), m)

    def test_invalid(self):
        with pytest.raises(ValueError):
            steering_vector(0, 0.1)
        with pytest.raises(ValueError):
            steering_vector(3, 0.1, freq_ratio=-0.1)


class TestScatterSet:
    def test_from_arrays_round_trip(self):
        s = four_targets()
        assert len(s) == 4
        assert isinstance(s[0], Scatterer)
        np.testing.assert_allclose(s.aoas, np.radians([-40.0, -10.0, 20.0, 50.0]))

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            ScatterSet(())

    def test_check_accepts_valid(self):
        four_targets().check(ArrayConfig())

    @pytest.mark.parametrize("field,value", [("aoa", np.pi / 2), ("delay", -1e-9), ("doppler", 1e6)])
    def test_check_rejects(self, field, value):
        kw = dict(coeff=[1.0], aoa=[0.1], aod=[0.1], delay=[1e-7], doppler=[0.0])
        kw[field] = [value]
        with pytest.raises(ValueError):
            ScatterSet.from_arrays(**kw).check(ArrayConfig())

    def test_check_rejects_coincident_generators(self):
        s = ScatterSet.from_arrays([1, 1], [0.1, 0.2], [0.1, 0.2], [1e-7, 1e-7], [0, 0])
        with pytest.raises(ValueError):
            s.check(ArrayConfig())


class TestScenario:
    def test_ranges(self):
        cfg = ArrayConfig()
        s = generate_scenario(0, 200, cfg)
        assert np.all(np.abs(s.aoas) <= np.pi / 3) and np.all(np.abs(s.aods) <= np.pi / 3)
        assert np.all((s.delays >= 0) & (s.delays <= cfg.t_cp))
        assert np.all(np.abs(s.dopplers) <= max_target_doppler(cfg, 30.0))
        s.check(cfg)

    def test_reference_max_doppler(self):
        assert max_target_doppler(ArrayConfig(), 30.0) == pytest.approx(2 * 30 * 28e9 / SPEED_OF_LIGHT)

    def test_multipath_doppler_range(self):
        s = generate_scenario(1, 200, ArrayConfig(), kind="multipaths")
        assert s.kind is ScatterKind.MULTIPATHS
        assert np.all(np.abs(s.dopplers) <= 1.4e3)

    def test_deterministic(self):
        assert generate_scenario(5, 4, ArrayConfig()) == generate_scenario(5, 4, ArrayConfig())

    def test_monostatic(self):
        s = generate_scenario(2, 4, ArrayConfig(), ScenarioBounds(monostatic=True))
        np.testing.assert_array_equal(s.aoas, s.aods)

    def test_interferers_appended(self):
        s = generate_scenario(3, 2, ArrayConfig(), n_interferers=3)
        assert len(s) == 5
        assert s.kind is ScatterKind.TARGETS_WITH_INTERFERERS

    def test_count_must_be_positive(self):
        with pytest.raises(ValueError):
            generate_scenario(0, 0, ArrayConfig())


class TestChannels:
    def test_sensing_channel_rank_and_oracle(self):
        cfg = ArrayConfig()
        s = four_targets(cfg)
        g = sensing_channel(s, 3, 5, cfg)
        assert g.shape == (cfg.m_re, cfg.m_bs)
        assert np.linalg.matrix_rank(g) == 4
        ref = np.zeros_like(g)
        for sc in s:
            w = sc.coeff * np.exp(-2j * np.pi * sc.delay * cfg.f_s * 5 / cfg.k0) \
                * np.exp(2j * np.pi * 3 * sc.doppler * cfg.t_sym)
            ref += w * np.outer(steering_vector(cfg.m_re, sc.aoa), steering_vector(cfg.m_bs, sc.aod))
        np.testing.assert_allclose(g, ref, atol=1e-12)

    def test_comm_channel_shape(self):
        cfg = ArrayConfig(m_ue=4)
        assert comm_channel(four_targets(cfg), 1, 1, cfg).shape == (4, cfg.m_bs)

    def test_beam_squint_changes_channel(self):
        cfg = ArrayConfig(f_s=1e9, t_cp=128e-9)
        s = four_targets(cfg)
        assert not np.allclose(sensing_channel(s, 1, 64, cfg, True), sensing_channel(s, 1, 64, cfg, False))

    @pytest.mark.parametrize("n,k", [(0, 1), (1, 0), (1, 129)])
    def test_index_bounds(self, n, k):
        with pytest.raises(IndexError):
            sensing_channel(four_targets(), n, k, ArrayConfig())


class TestConversions:
    def test_range_round_trip(self):
        assert delay_to_range(1e-6) == pytest.approx(SPEED_OF_LIGHT * 1e-6 / 2)
        assert delay_to_range(1e-6, round_trip=False) == pytest.approx(SPEED_OF_LIGHT * 1e-6)

    def test_velocity(self):
        assert doppler_to_velocity(max_target_doppler(ArrayConfig(), 30.0), 28e9) == pytest.approx(30.0)
