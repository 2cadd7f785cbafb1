import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isactensor.baselines import (als_cpd, als_cpd_detailed, als_parameters, matched_filter_map,
                                  matched_filter_range_velocity, music_1d, music_angles)
from isactensor.errors import IllConditioned
from isactensor.signal_model import ArrayConfig, ScatterSet, doppler_to_velocity, ula_response
from isactensor.tensor import FactorTriple, cpd_reconstruct
from isactensor.vandermonde import build_echo_tensor, noiseless_echo, random_training

from helpers import crandn, four_targets, random_factors


def snapshots(rng, angles, n_snap, snr_db, m=8):
    a = ula_response(m, np.sin(angles))
    s = crandn(rng, len(angles), n_snap) / np.sqrt(2)
    x = a @ s
    noise = crandn(rng, m, n_snap) / np.sqrt(2) * 10 ** (-snr_db / 20)
    return x + noise


class TestAls:
    def test_rank_one_converges_fast(self, rng):
        t = cpd_reconstruct(FactorTriple(*random_factors(rng, (4, 5, 6), 1)))
        res = als_cpd_detailed(t, 1, max_iter=50, tol=0.0, rng=0, n_init=1)
        assert res.iterations <= 50
        assert res.fit < 1e-8

    def test_residual_nonincreasing(self, rng):
        t = cpd_reconstruct(FactorTriple(*random_factors(rng, (6, 7, 8), 3))) + 0.05 * crandn(rng, 6, 7, 8)
        res = als_cpd_detailed(t, 3, max_iter=200, rng=1, n_init=1)
        assert np.all(np.diff(res.residuals) <= 1e-12)

    def test_noiseless_rank_four(self, rng):
        t = cpd_reconstruct(FactorTriple(*random_factors(rng, (8, 16, 16), 4)))
        f = als_cpd(t, 4, rng=2)
        assert np.linalg.norm(cpd_reconstruct(f) - t) / np.linalg.norm(t) < 1e-6

    def test_deterministic(self, rng):
        t = crandn(rng, 4, 4, 4)
        a, b = als_cpd(t, 2, max_iter=30, rng=5), als_cpd(t, 2, max_iter=30, rng=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_zero_tensor_rejected(self):
        with pytest.raises(ValueError):
            als_cpd(np.zeros((2, 2, 2)), 1)

    def test_singular_everywhere_is_ill_conditioned(self):
        # A rank-2 request on a tensor whose first mode has one row makes every Gram update singular.
        t = np.zeros((1, 3, 3), complex)
        t[0, 0, 0] = 1.0
        with pytest.raises((IllConditioned, ValueError)):
            als_cpd_detailed(t, 3, max_iter=5, rng=0, n_init=1, max_restarts=0)

    def test_parameters_noiseless(self):
        cfg = ArrayConfig()
        s = four_targets(cfg)
        tr = random_training(cfg.m_bs, 16, 16, 0)
        t = noiseless_echo(s, tr, cfg)
        est = als_parameters(t, tr, cfg, 4, rng=1)
        order = np.argsort(est.aoa)
        np.testing.assert_allclose(np.sin(est.aoa[order]), np.sin(np.sort(s.aoas)), atol=1e-3)


class TestMusic:
    def test_two_sources_resolved(self, rng):
        x = snapshots(rng, [-0.5, 0.5], 200, 30.0)
        np.testing.assert_allclose(np.sort(music_1d(x, 2)), [-0.5, 0.5], atol=0.01)

    def test_single_source_broadside(self, rng):
        x = snapshots(rng, [0.0], 100, 30.0)
        assert abs(music_1d(x, 1)[0]) < 2 / 4096 + 1e-12

    def test_closely_spaced_sources_not_resolved(self):
        angles = np.radians([31.87, 35.01])
        resolved = []
        for seed in range(20):
            x = snapshots(np.random.default_rng(seed), angles, 4, 10.0)
            found = music_1d(x, 2)
            resolved.append(found.size == 2 and np.all(np.abs(np.sort(found) - angles) < np.radians(1.0)))
        assert np.mean(resolved) < 0.5

    def test_too_many_sources(self, rng):
        with pytest.raises(ValueError):
            music_1d(crandn(rng, 4, 20), 4)

    @settings(max_examples=25)
    @given(scale=st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False, allow_infinity=False))
    def test_snapshot_scaling_invariance(self, scale):
        x = snapshots(np.random.default_rng(9), [-0.3, 0.6], 100, 20.0)
        np.testing.assert_allclose(music_1d(scale * x, 2), music_1d(x, 2), atol=1e-12)

    def test_padding_returns_q_angles(self, rng):
        x = snapshots(rng, [0.2], 200, 30.0)
        assert music_1d(x, 3, pad=True).size == 3

    def test_music_angles_noiseless(self):
        cfg = ArrayConfig()
        s = four_targets(cfg)
        tr = random_training(cfg.m_bs, 16, 16, 4)
        aoa, aod = music_angles(noiseless_echo(s, tr, cfg), tr, cfg, 4)
        np.testing.assert_allclose(np.sort(np.sin(aoa)), np.sort(np.sin(s.aoas)), atol=2e-3)
        assert aod.shape == (4,)


class TestMatchedFilter:
    cfg = ArrayConfig()

    def one_target_echo(self, delay, doppler, n=16, k=16):
        s = ScatterSet.from_arrays([1.0], [0.2], [0.1], [delay], [doppler])
        tr = random_training(self.cfg.m_bs, n, k, 0)
        return noiseless_echo(s, tr, self.cfg)[0]

    def test_single_target_peak_bin(self):
        # Unit precoder rows keep the Doppler phase intact through a_bs^T p_n.
        s = ScatterSet.from_arrays([1.0], [0.0], [0.0], [0.3e-6], [4000.0])
        tr = random_training(self.cfg.m_bs, 16, 16, 0)
        tr = type(tr)(np.ones_like(tr.precoder), tr.pilots)
        echo = noiseless_echo(s, tr, self.cfg)
        delays = np.linspace(0, self.cfg.t_cp, 65)
        dopplers = np.linspace(-16000, 16000, 65)
        power = matched_filter_map(echo, self.cfg, delays, dopplers)
        iv, it = np.unravel_index(np.argmax(power), power.shape)
        assert delays[it] == pytest.approx(0.3e-6, abs=delays[1] - delays[0])
        assert dopplers[iv] == pytest.approx(4000.0, abs=dopplers[1] - dopplers[0])

    @pytest.mark.parametrize("scale", [1e-4, 3.0, -2.0 + 1.0j])
    def test_peak_invariant_to_global_scale(self, scale):
        echo = self.one_target_echo(0.413e-6, -2000.0)
        a = matched_filter_range_velocity(echo, self.cfg, 1)[0]
        b = matched_filter_range_velocity(scale * echo, self.cfg, 1)[0]
        assert (a.delay, a.doppler) == (b.delay, b.doppler)

    def test_two_delays_beyond_one_cell_resolved(self):
        cell = 1 / (16 * self.cfg.delta_f)
        s = ScatterSet.from_arrays([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.2e-6, 0.2e-6 + 2.5 * cell], [0.0, 0.0])
        tr = random_training(self.cfg.m_bs, 16, 16, 0)
        tr = type(tr)(np.ones_like(tr.precoder), tr.pilots)
        peaks = matched_filter_range_velocity(noiseless_echo(s, tr, self.cfg), self.cfg, 2)
        found = np.sort([p.delay for p in peaks])
        np.testing.assert_allclose(found, s.delays, atol=0.3 * cell)

    def test_close_delays_merge(self):
        cell = 1 / (16 * self.cfg.delta_f)
        s = ScatterSet.from_arrays([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.2e-6, 0.2e-6 + 0.2 * cell], [0.0, 0.0])
        tr = random_training(self.cfg.m_bs, 16, 16, 0)
        tr = type(tr)(np.ones_like(tr.precoder), tr.pilots)
        delays = np.linspace(0, self.cfg.t_cp, 512)
        power = matched_filter_map(noiseless_echo(s, tr, self.cfg), self.cfg, delays, np.array([0.0]))[0]
        interior = power[1:-1]
        main_lobes = (interior > power[:-2]) & (interior > power[2:]) & (interior > 0.5 * power.max())
        assert np.sum(main_lobes) == 1

    def test_velocity_error_large_with_short_observation(self):
        cfg = self.cfg
        s = four_targets(cfg)
        tr = random_training(cfg.m_bs, 16, 16, 6)
        y = build_echo_tensor(s, tr, cfg, 20.0, 7)
        peaks = matched_filter_range_velocity(y, cfg, 4)
        cell_v = doppler_to_velocity(1 / (16 * cfg.t_sym), cfg.f_c)
        errs = [min(abs(doppler_to_velocity(p.doppler - nu, cfg.f_c)) for p in peaks) for nu in s.dopplers]
        assert np.sqrt(np.mean(np.square(errs))) > 0.1 * cell_v
