"""Fiber propagation, noise loading, detection and synchronization."""

import math

import numpy as np
import pytest

from photonrc.sigproc import ComplexEnvelope, SampledSignal
from photonrc.transmitter import BitStream, TxConfig, gray_encode_pam4, shape_and_ssb
from photonrc.channel import (
    FiberParams,
    SyncError,
    amplify_noise_load,
    estimate_osnr,
    photodetect,
    propagate_ssmf,
    sync_and_downsample,
)


def gaussian_pulse_envelope(t0_ps: float, window_ps: float = 4096.0,
                            n: int = 8192, peak_w: float = 1.0) -> ComplexEnvelope:
    dt = window_ps / n
    t = (np.arange(n) - n / 2) * dt  # ps
    field = math.sqrt(peak_w) * np.exp(-(t**2) / (2.0 * t0_ps**2))
    return ComplexEnvelope(field.astype(complex), 1.0 / (dt * 1e-12))


def rms_width_ps(env: ComplexEnvelope) -> float:
    n = len(env)
    t = (np.arange(n) - n / 2) / env.sample_rate * 1e12
    p = np.abs(env.samples) ** 2
    mean = np.sum(t * p) / np.sum(p)
    return math.sqrt(float(np.sum((t - mean) ** 2 * p) / np.sum(p)))


class TestPropagation:
    def test_zero_length_identity(self):
        env = gaussian_pulse_envelope(10.0)
        out = propagate_ssmf(env, FiberParams(length=0.0))
        np.testing.assert_array_equal(out.samples, env.samples)

    def test_dispersive_broadening_matches_analytic(self):
        # Gaussian of width T0 broadens by sqrt(1 + (beta2 L / T0^2)^2).
        t0, beta2, length = 10.0, -21.7, 100.0
        env = gaussian_pulse_envelope(t0)
        out = propagate_ssmf(env, FiberParams(length=length, beta2=beta2,
                                              gamma=0.0, alpha_db=0.0))
        expected = t0 * math.sqrt(1.0 + (beta2 * length / t0**2) ** 2)
        # RMS width of a Gaussian intensity profile is T/sqrt(2).
        measured = rms_width_ps(out) * math.sqrt(2.0)
        assert measured == pytest.approx(expected, rel=0.005)

    def test_spm_peak_phase_matches_analytic(self):
        t0, gamma, length, p0 = 50.0, 1.3, 100.0, 0.005
        env = gaussian_pulse_envelope(t0, peak_w=p0)
        out = propagate_ssmf(env, FiberParams(length=length, beta2=0.0,
                                              gamma=gamma, alpha_db=0.0))
        k = int(np.argmax(np.abs(out.samples)))
        phase = np.angle(out.samples[k] / env.samples[k])
        assert phase == pytest.approx(gamma * p0 * length, rel=0.005)

    def test_energy_conserved_without_attenuation(self):
        env = gaussian_pulse_envelope(10.0, peak_w=0.2)
        out = propagate_ssmf(env, FiberParams(length=80.0, beta2=-21.7,
                                              gamma=1.3, alpha_db=0.0))
        e_in = float(np.sum(np.abs(env.samples) ** 2))
        e_out = float(np.sum(np.abs(out.samples) ** 2))
        assert abs(e_out - e_in) / e_in < 1e-9

    def test_dispersion_only_equals_single_operator(self):
        env = gaussian_pulse_envelope(10.0)
        fp = FiberParams(length=100.0, beta2=-21.7, gamma=0.0, alpha_db=0.0, step=0.1)
        stepped = propagate_ssmf(env, fp)
        w = 2.0 * np.pi * np.fft.fftfreq(len(env), d=1.0 / env.sample_rate)
        op = np.exp(0.5j * fp.beta2 * 1e-24 * w**2 * fp.length)
        direct = np.fft.ifft(np.fft.fft(env.samples) * op)
        rms = np.sqrt(np.mean(np.abs(stepped.samples - direct) ** 2)
                      / np.mean(np.abs(direct) ** 2))
        assert rms < 1e-10

    def test_attenuation_scales_power(self):
        env = gaussian_pulse_envelope(10.0)
        fp = FiberParams(length=100.0, beta2=0.0, gamma=0.0, alpha_db=0.2)
        out = propagate_ssmf(env, fp)
        expected = 10.0 ** (-0.2 * 100.0 / 10.0)
        assert out.power / env.power == pytest.approx(expected, rel=1e-9)

    def test_step_convergence_check(self):
        env = gaussian_pulse_envelope(10.0, peak_w=0.05)
        fp = FiberParams(length=20.0, beta2=-21.7, gamma=1.3, alpha_db=0.0, step=0.1)
        out = propagate_ssmf(env, fp, check_step=True)
        assert out.metadata["ssfm_step_rel_rms"] < 1e-4
        fp_coarse = FiberParams(length=20.0, beta2=-21.7, gamma=20.0,
                                alpha_db=0.0, step=10.0)
        out2 = propagate_ssmf(ComplexEnvelope(env.samples * 8, env.sample_rate),
                              fp_coarse, check_step=True)
        assert any("not converged" in w for w in out2.metadata.get("warnings", []))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            FiberParams(length=-1.0)
        with pytest.raises(ValueError):
            FiberParams(step=0.0)
        with pytest.raises(ValueError):
            FiberParams(length=1.0, step=2.0)


def pam4_envelope(n_symbols=4096, seed=0, **tx_kw):
    rng = np.random.default_rng(seed)
    symbols = gray_encode_pam4(BitStream(rng.integers(0, 2, 2 * n_symbols, dtype=np.int8)))
    cfg = TxConfig(**tx_kw)
    return shape_and_ssb(symbols, cfg, dac_seed=seed), symbols, cfg


class TestNoiseLoading:
    def test_infinite_target_is_identity(self):
        env, _, _ = pam4_envelope(1024, dac_enob=math.inf)
        out = amplify_noise_load(env, math.inf)
        np.testing.assert_array_equal(out.samples, env.samples)

    @pytest.mark.parametrize("target", [35.9, 30.0])
    def test_estimator_reads_target(self, target):
        env, _, _ = pam4_envelope(8192, dac_enob=math.inf)
        out = amplify_noise_load(env, target, seed=7)
        assert estimate_osnr(out) == pytest.approx(target, abs=0.1)

    def test_signal_power_preserved(self):
        env, _, _ = pam4_envelope(4096, dac_enob=math.inf)
        out = amplify_noise_load(env, 25.0, seed=1)
        # The loader only adds zero-mean noise on top of the signal.
        added = out.samples - env.samples
        assert out.power > env.power
        assert abs(np.mean(added)) < 4.0 * np.std(added) / math.sqrt(added.size)

    def test_unbiased_over_seeds(self):
        env, _, _ = pam4_envelope(8192, dac_enob=math.inf)
        readings = [estimate_osnr(amplify_noise_load(env, 30.0, seed=s))
                    for s in range(20)]
        assert abs(float(np.mean(readings)) - 30.0) < 0.05

    def test_low_target_rejected(self):
        env, _, _ = pam4_envelope(1024, dac_enob=math.inf)
        with pytest.raises(ValueError):
            amplify_noise_load(env, 5.0)


class TestNeighborXpm:
    def test_zero_variance_is_identity(self):
        from photonrc.channel import apply_neighbor_xpm
        env, _, _ = pam4_envelope(256, dac_enob=math.inf)
        out = apply_neighbor_xpm(env, 0.0)
        np.testing.assert_array_equal(out.samples, env.samples)

    def test_phase_variance_and_power_preserved(self):
        from photonrc.channel import apply_neighbor_xpm
        env, _, _ = pam4_envelope(2048, dac_enob=math.inf)
        out = apply_neighbor_xpm(env, 0.01, seed=3)
        phase = np.angle(out.samples / env.samples)
        assert np.var(phase) == pytest.approx(0.01, rel=0.05)
        assert out.power == pytest.approx(env.power, rel=1e-12)


class TestPhotodetect:
    def test_constant_field(self):
        env = ComplexEnvelope(2.0 * np.ones(4096, complex), 100e9)
        out = photodetect(env, 40e9)
        np.testing.assert_allclose(out.samples, 4.0, rtol=1e-9)

    def test_two_tone_beat_full_contrast(self):
        fs = 200e9
        n = 1 << 14
        t = np.arange(n) / fs
        df = 20e9  # below the PD bandwidth
        env = ComplexEnvelope(np.exp(2j * np.pi * 0.0 * t) + np.exp(2j * np.pi * df * t), fs)
        out = photodetect(env, 40e9)
        mid = out.samples[n // 4 : -n // 4]
        # |e0 + e1|^2 swings 0..4 at df with full contrast.
        assert mid.max() == pytest.approx(4.0, rel=1e-3)
        assert mid.min() == pytest.approx(0.0, abs=1e-3 * 4)
        spec = np.abs(np.fft.rfft(out.samples - out.samples.mean()))
        f = np.fft.rfftfreq(n, d=1.0 / fs)
        assert f[int(np.argmax(spec))] == pytest.approx(df, abs=fs / n)

    def test_nonnegative_before_filtering(self):
        env, _, _ = pam4_envelope(512)
        intensity = np.abs(env.samples) ** 2
        assert np.all(intensity >= 0)

    def test_beat_above_bandwidth_suppressed(self):
        fs = 200e9
        n = 1 << 13
        t = np.arange(n) / fs
        env = ComplexEnvelope(1.0 + np.exp(2j * np.pi * 60e9 * t), fs)
        out = photodetect(env, 40e9)
        mid = out.samples[n // 4 : -n // 4]
        assert float(mid.std() / mid.mean()) < 1e-3


class TestSync:
    def test_loopback_zero_delay(self):
        env, symbols, cfg = pam4_envelope(2048, dac_enob=math.inf)
        det = photodetect(env, 40e9)
        out = sync_and_downsample(det, symbols, cfg)
        assert abs(out.metadata["sync_delay_samples"]) < 0.05
        assert len(out) == 2 * len(symbols)
        assert out.sample_rate == pytest.approx(2 * cfg.baud)

    def test_known_injected_delay(self):
        env, symbols, cfg = pam4_envelope(2048, dac_enob=math.inf)
        det = photodetect(env, 40e9)
        # Shift by 13.5 samples at the 2-SpS output rate = 54 input samples.
        shift = 13.5 * cfg.sps / 2
        f = np.fft.fftfreq(len(det), d=1.0)
        delayed = np.fft.ifft(np.fft.fft(det.samples) * np.exp(-2j * np.pi * f * shift)).real
        out = sync_and_downsample(SampledSignal(delayed, det.sample_rate), symbols, cfg)
        assert out.metadata["sync_delay_samples"] == pytest.approx(13.5, abs=0.05)

    def test_alignment_recovers_symbol_centers(self):
        env, symbols, cfg = pam4_envelope(2048, dac_enob=math.inf, cspr_db=12.0)
        det = photodetect(env, 40e9)
        out = sync_and_downsample(det, symbols, cfg)
        x = out.samples.reshape(-1, 2)
        c = np.corrcoef(x[100:-100, 0], symbols.levels[100:-100])[0, 1]
        assert c > 0.95

    def test_too_few_reference_symbols(self):
        env, symbols, cfg = pam4_envelope(512, dac_enob=math.inf)
        det = photodetect(env, 40e9)
        with pytest.raises(ValueError):
            sync_and_downsample(det, symbols, cfg)

    def test_dispersed_record_syncs_with_matched_template(self):
        # After 100 km of CD the plain template is biased by many samples;
        # the dispersion-matched template recovers the true (zero) delay.
        env, symbols, cfg = pam4_envelope(2048, dac_enob=math.inf, cspr_db=12.0)
        fiber = FiberParams(length=100.0, gamma=0.0, alpha_db=0.0, step=100.0)
        det = photodetect(propagate_ssmf(env, fiber), 40e9)
        out = sync_and_downsample(det, symbols, cfg, fiber=fiber)
        assert abs(out.metadata["sync_delay_samples"]) < 0.1

    def test_featureless_input_raises_sync_error(self):
        # A constant record has no correlation peak at all.
        _, symbols, cfg = pam4_envelope(1024, dac_enob=math.inf)
        flat = SampledSignal(np.ones(1024 * cfg.sps), cfg.sample_rate)
        with pytest.raises(SyncError):
            sync_and_downsample(flat, symbols, cfg)
