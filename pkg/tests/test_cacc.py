import numpy as np
import pytest

from asyncisac.cacc import (
    CaccTensor, DegenerateLosError, add_minus, bandpass_taps, cross_correlate, dfs_doppler, dynamic_static_ratio,
    image_to_true_ratio, mirrored_music, mirrored_music_full, relative_spectrum, static_filter, track_dfs,
    track_spectrum_peak,
)
from asyncisac.signal_model import ClockState, OfdmGrid, Path, clock_trace, frozen_trace, steering_phase, synthesize_csi

G64 = OfdmGrid(num_subcarriers=64, block_period=0.01, num_rx=2)
DG = np.linspace(-200e-9, 200e-9, 81)
FG = np.linspace(-50, 50, 201)


def los_dynamic(seed, snr_db=20.0, doppler=12.0, T=250, grid=G64, dyn_amp=0.1, extra=()):
    rng = np.random.default_rng(seed)
    los = Path(30e-9, 0.0, np.exp(2j * np.pi * rng.random()), aoa=rng.uniform(-1, 1), is_los=True)
    dyn = Path(80e-9, doppler, dyn_amp * np.exp(2j * np.pi * rng.random()), aoa=rng.uniform(-1, 1))
    return synthesize_csi([los, dyn, *extra], grid, clock_trace(T, grid, rng), snr_db=snr_db, rng=rng)


def rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


class TestCrossCorrelate:
    def test_clock_invariance(self):
        g = OfdmGrid(num_subcarriers=8, num_rx=3, num_tx=2)
        rng = np.random.default_rng(0)
        paths = [Path(20e-9, 3, 1, aoa=0.3), Path(70e-9, -8, 0.4j, aoa=-0.5, aod=0.2)]
        a = cross_correlate(synthesize_csi(paths, g, clock_trace(10, g, rng)), 1).data
        b = cross_correlate(synthesize_csi(paths, g, clock_trace(10, g, rng)), 1).data
        assert rel(a, b) < 1e-9

    def test_single_path_constant(self):
        g = OfdmGrid(num_subcarriers=8, num_rx=3)
        p = Path(40e-9, 5.0, 1.0, aoa=0.4)
        x = cross_correlate(synthesize_csi([p], g, clock_trace(6, g, np.random.default_rng(1)))).data
        for ant in (1, 2):
            expect = np.exp(1j * (steering_phase(p, ant, 0, g) - steering_phase(p, 0, 0, g)))
            assert np.allclose(x[:, :, ant, 0], expect, atol=1e-12)

    def test_two_paths_expand_to_four_terms(self):
        g = OfdmGrid(num_subcarriers=2, num_rx=2)
        p1 = Path(10e-9, 2.0, 0.8 + 0.1j, aoa=0.2)
        p2 = Path(60e-9, -5.0, 0.3 - 0.4j, aoa=-0.7)
        T = 2
        x = cross_correlate(synthesize_csi([p1, p2], g, clock_trace(T, g, np.random.default_rng(2)))).data
        n = np.arange(2)[:, None]
        t = np.arange(T)[None, :]

        def term(p, ant):
            return p.amplitude * np.exp(-2j * np.pi * p.delay * n * g.subcarrier_spacing
                                        + 2j * np.pi * p.doppler * t * g.block_period
                                        + 1j * steering_phase(p, ant, 0, g))

        oracle = sum(term(a, 1) * np.conj(term(b, 0)) for a in (p1, p2) for b in (p1, p2))
        assert np.allclose(x[:, :, 1, 0], oracle, atol=1e-12)

    def test_needs_two_antennas(self):
        g = OfdmGrid(num_subcarriers=4, num_rx=1)
        with pytest.raises(ValueError):
            cross_correlate(synthesize_csi([Path(0.0)], g, frozen_trace(2)))


class TestAddMinus:
    def test_zero_constants_reduce_to_plain(self):
        csi = los_dynamic(0)
        assert np.allclose(add_minus(csi, alpha=0, beta=0).data, cross_correlate(csi).data, rtol=1e-12, atol=0)

    def test_clock_invariance(self):
        g = OfdmGrid(num_subcarriers=8, num_rx=2)
        paths = [Path(30e-9, 0, 1, aoa=0.1), Path(80e-9, 12, 0.1, aoa=-0.6)]
        rng = np.random.default_rng(4)
        a = add_minus(synthesize_csi(paths, g, clock_trace(20, g, rng))).data
        b = add_minus(synthesize_csi(paths, g, clock_trace(20, g, rng))).data
        assert rel(a, b) < 1e-9

    def test_static_channel_constant_over_time(self):
        g = OfdmGrid(num_subcarriers=8, num_rx=2)
        csi = synthesize_csi([Path(30e-9, 0, 1, aoa=0.2), Path(90e-9, 0, 0.3, aoa=-0.4)], g,
                             clock_trace(12, g, np.random.default_rng(5)))
        x = add_minus(csi).data
        assert np.allclose(x, x[:, :1], atol=1e-12)

    def test_suppresses_image_against_plain(self):
        ratios = []
        for seed in range(100):
            csi = los_dynamic(seed)
            spec_p = relative_spectrum(static_filter(cross_correlate(csi)))
            spec_a = relative_spectrum(static_filter(add_minus(csi)))
            ratios.append((image_to_true_ratio(spec_a, 50e-9, 12), image_to_true_ratio(spec_p, 50e-9, 12)))
        r = np.array(ratios)
        assert r[:, 0].mean() < r[:, 1].mean()
        assert np.mean(r[:, 0] < r[:, 1]) >= 0.9


class TestStaticFilter:
    def response(self, h, f, Ts=0.01):
        k = np.arange(len(h))
        return abs(np.sum(h * np.exp(-2j * np.pi * f * k * Ts)))

    def test_stopband_and_passband(self):
        h = bandpass_taps((5, 45), 65, 0.01)
        assert 20 * np.log10(self.response(h, 0.0)) <= -40
        for f in (10, 12, 20, 30, 40):
            assert abs(20 * np.log10(self.response(h, f))) <= 0.5

    def test_constant_series_removed(self):
        g = OfdmGrid(num_subcarriers=4, num_rx=2, block_period=0.01)
        csi = synthesize_csi([Path(30e-9, 0, 1, aoa=0.3)], g, clock_trace(200, g, np.random.default_rng(0)))
        x = cross_correlate(csi)
        y = static_filter(x)
        assert np.max(np.abs(y.data[:, :, 1])) <= 1e-2 * np.max(np.abs(x.data[:, :, 1]))
        assert y.data.shape[1] == 200 - 64 and y.t_offset == 32

    def test_in_band_tone_amplitude(self):
        g = OfdmGrid(num_subcarriers=1, num_rx=2, block_period=0.01)
        t = np.arange(300)
        data = np.ones((1, 300, 2, 1), complex)
        data[0, :, 1, 0] = np.exp(2j * np.pi * 20.0 * t * 0.01)
        y = static_filter(CaccTensor(data, 0, g)).data[0, :, 1, 0]
        assert np.all(np.abs(20 * np.log10(np.abs(y))) <= 0.5)

    def test_zero_in_zero_out(self):
        g = OfdmGrid(num_subcarriers=2, num_rx=2)
        x = cross_correlate(synthesize_csi([Path(0.0)], g, frozen_trace(100)))
        zero = type(x)(np.zeros_like(x.data), 0, g)
        assert np.all(static_filter(zero).data == 0)

    def test_short_series_and_even_taps(self):
        g = OfdmGrid(num_subcarriers=2, num_rx=2)
        x = cross_correlate(synthesize_csi([Path(0.0)], g, frozen_trace(30)))
        with pytest.raises(ValueError):
            static_filter(x, taps=65)
        with pytest.raises(ValueError):
            bandpass_taps((5, 45), 64, 0.01)


class TestRelativeSpectrum:
    def test_image_pair_equal_magnitude_noiseless(self):
        g = OfdmGrid(num_subcarriers=64, block_period=0.01, num_rx=2)
        for seed in range(5):
            csi = los_dynamic(seed, snr_db=None, grid=g)
            spec = relative_spectrum(cross_correlate(csi))
            assert spec.at(-50e-9, -12) == pytest.approx(spec.at(50e-9, 12), rel=1e-6)

    def test_static_only_after_filter_is_below_noise(self):
        rng = np.random.default_rng(0)
        g = G64
        csi = synthesize_csi([Path(30e-9, 0, 1, aoa=0.2)], g, clock_trace(250, g, rng), snr_db=20, rng=rng)
        noise = synthesize_csi([Path(30e-9, 0, 1, aoa=0.2)], g, frozen_trace(250), snr_db=20, rng=1)
        x = static_filter(cross_correlate(csi))
        # noise-only reference: the same filter applied to cross-products of pure noise
        n_only = cross_correlate(noise)
        n_only = type(n_only)(n_only.data - n_only.data.mean(axis=1, keepdims=True), 0, g)
        floor = relative_spectrum(static_filter(n_only)).values.max()
        assert relative_spectrum(x).values.max() <= 2 * floor

    def test_invariant_to_clock(self):
        g = OfdmGrid(num_subcarriers=16, block_period=0.01, num_rx=2)
        paths = [Path(30e-9, 0, 1, aoa=0.1), Path(80e-9, 12, 0.1, aoa=-0.6)]
        rng = np.random.default_rng(9)
        a = relative_spectrum(cross_correlate(synthesize_csi(paths, g, clock_trace(64, g, rng)))).values
        b = relative_spectrum(cross_correlate(synthesize_csi(paths, g, clock_trace(64, g, rng)))).values
        assert rel(a, b) < 1e-9


class TestMirroredMusic:
    def test_single_path_sign_and_cell(self):
        hits = 0
        for seed in range(30):
            x = static_filter(cross_correlate(los_dynamic(seed)))
            pk = mirrored_music(x, 1, DG, FG)
            if pk and abs(pk[0].delay - 50e-9) <= 5e-9 and abs(pk[0].doppler - 12) <= 0.5:
                hits += 1
        assert hits >= 29

    def test_negative_doppler(self):
        x = static_filter(cross_correlate(los_dynamic(3, doppler=-12.0)))
        pk = mirrored_music(x, 1, DG, FG)
        assert pk[0].doppler == pytest.approx(-12, abs=0.5) and pk[0].delay == pytest.approx(50e-9, abs=5e-9)

    def test_no_dynamic_path_no_peak(self):
        rng = np.random.default_rng(0)
        csi = synthesize_csi([Path(30e-9, 0, 1, aoa=0.3)], G64, clock_trace(250, G64, rng), snr_db=20, rng=rng)
        assert mirrored_music(static_filter(cross_correlate(csi)), 1, DG, FG) == ()

    def test_two_dynamic_paths(self):
        ok = 0
        for seed in range(8):
            rng = np.random.default_rng(1000 + seed)
            extra = (Path(130e-9, -20.0, 0.1 * np.exp(2j * np.pi * rng.random()), aoa=rng.uniform(-1, 1)),)
            x = static_filter(cross_correlate(los_dynamic(seed, extra=extra)))
            pk = mirrored_music(x, 2, DG, FG)
            found = {(round(p.delay * 1e9), round(p.doppler)) for p in pk}
            ok += {(50, 12), (100, -20)} <= found
        assert ok >= 7

    def test_spectrum_symmetric_before_sign_rule(self):
        x = static_filter(cross_correlate(los_dynamic(1)))
        grid = np.linspace(-100e-9, 100e-9, 41)
        fgrid = np.linspace(-30, 30, 61)
        r = mirrored_music_full(x, 1, grid, fgrid, sign_rule="correlation")
        # correlation rule zeroes only the chosen member's image; elsewhere symmetric
        P = r.spectrum.values
        mask = (P > 0) & (P[::-1, ::-1] > 0)
        assert np.allclose(P[mask], P[::-1, ::-1][mask], rtol=1e-8)

    def test_invalid_arguments(self):
        x = static_filter(cross_correlate(los_dynamic(0)))
        with pytest.raises(ValueError):
            mirrored_music(x, 0, DG, FG)
        with pytest.raises(ValueError):
            mirrored_music(x, 1, DG, FG, sign_rule="magic")
        with pytest.raises(ValueError):
            mirrored_music(x, 1, DG, FG, window=(65, 8))


class TestDfs:
    def test_recovers_doppler(self):
        pk = dfs_doppler(los_dynamic(0), doppler_grid=FG)
        assert pk[0].doppler == pytest.approx(12, abs=0.5)

    def test_sign_follows_doppler(self):
        for seed in range(10):
            def csi(fd):
                rng = np.random.default_rng(seed)
                paths = [Path(30e-9, 0, 1, aoa=0.0, is_los=True), Path(80e-9, fd, 0.1j, aoa=0.8)]
                return synthesize_csi(paths, G64, clock_trace(250, G64, rng), snr_db=20, rng=rng)
            a = dfs_doppler(csi(15.0), doppler_grid=FG)
            b = dfs_doppler(csi(-15.0), doppler_grid=FG)
            assert a[0].doppler == pytest.approx(15, abs=0.5)
            assert a[0].doppler == pytest.approx(-b[0].doppler, abs=0.5)

    def test_static_channel_no_peak(self):
        rng = np.random.default_rng(0)
        csi = synthesize_csi([Path(30e-9, 0, 1, aoa=0.3)], G64, clock_trace(250, G64, rng))
        assert dfs_doppler(csi, doppler_grid=FG) == ()

    def test_image_free_ratio(self):
        r = dynamic_static_ratio(los_dynamic(2, snr_db=None))
        spec = np.abs(np.fft.fft(r[:, :, 0, 0], axis=1)) ** 2
        f = np.fft.fftfreq(250, 0.01)
        pos = spec[:, np.argmin(abs(f - 12))].sum()
        neg = spec[:, np.argmin(abs(f + 12))].sum()
        assert neg < 1e-3 * pos

    def test_degenerate_los(self):
        g = OfdmGrid(num_subcarriers=4, num_rx=2)
        # equal and opposite broadside paths cancel on the reference antenna
        csi = synthesize_csi([Path(0.0, 0, 1, aoa=0.5), Path(0.0, 0, -1, aoa=0.0)], g, frozen_trace(20))
        with pytest.raises(DegenerateLosError):
            dynamic_static_ratio(csi)


def test_tracking_outputs_align():
    g = OfdmGrid(num_subcarriers=8, block_period=0.01, num_rx=2)
    track = np.full(200, 20.0)
    rng = np.random.default_rng(0)
    csi = synthesize_csi([Path(30e-9, 0, 1, aoa=0.0, is_los=True), Path(80e-9, 0, 0.1, aoa=0.8, doppler_track=track)],
                         g, clock_trace(200, g, rng), snr_db=25, rng=rng)
    c1, f1 = track_dfs(csi, window=16, hop=8, doppler_grid=np.linspace(-50, 50, 201))
    assert np.nanmedian(np.abs(f1 - 20)) < 1.0
    c2, f2 = track_spectrum_peak(static_filter(add_minus(csi)), window=16, hop=8)
    assert c2[0] == 32 + 7.5
    assert np.median(np.abs(f2 - 20)) < 5.0
