"""Independent evaluation paths: linear memory capacity of the photonic
node, and the DSP baseline chain (Kramers-Kronig phase retrieval, chromatic
dispersion compensation, matched filtering, feed-forward equalization)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, hilbert

from photonrc.sigproc import ComplexEnvelope, SampledSignal, next_pow2, resample, rrc_taps
from photonrc.node import (
    EncodingMethod,
    LaserParams,
    NodeConfig,
    build_mask,
    extract_states,
    mask_symbols,
    normalize_drive,
    schedule_drive,
    simulate_laser,
)
from photonrc.readout import (
    BerReport,
    SplitSpec,
    decide_pam4,
    evaluate_ber,
    train_ridge,
)
from photonrc.transmitter import Pam4Symbols


@dataclass
class McReport:
    """Linear memory capacity: squared Pearson correlation per delay step.

    per_step_correlation[m] is the test-segment correlation when predicting
    the input m steps in the past (m=0 included as the training sanity
    check); mc sums m = 1..m_max.
    """

    per_step_correlation: np.ndarray
    mc: float


@dataclass
class KkConfig:
    upsample_factor: int = 4
    carrier_detune: float = 24.5e9   # Hz, where the carrier line sits
    baud: float = 56e9
    cd_length: float = 100.0         # km compensated
    cd_beta2: float = -21.7          # ps^2/km
    ffe_taps: int = 48
    matched_beta: float = 0.1
    matched_span: int = 32           # symbols
    sideband: str = "lower"          # which side of the carrier holds the signal

    def __post_init__(self):
        if self.upsample_factor < 2:
            raise ValueError("upsample_factor must be >= 2")
        if self.ffe_taps < 1:
            raise ValueError("ffe_taps must be >= 1")
        if self.sideband not in ("lower", "upper"):
            raise ValueError("sideband must be 'lower' or 'upper'")


def _photonic_node_states(inputs: np.ndarray, nc: NodeConfig, lp: LaserParams,
                          seed: int) -> np.ndarray:
    """Run the masking pipeline + laser on a scalar input sequence.

    Each input value fills both 2-SpS samples of one symbol; scheduling
    streams contiguously (method D open loop, method C when the loop is
    closed so the feedback echo stays symbol-aligned).
    """
    sig = SampledSignal(np.repeat(inputs, 2), 1.0)
    mask_seed = nc.mask_seed if nc.mask_seed is not None else seed
    mask = build_mask(nc.n_nodes, mask_seed)
    masked = mask_symbols(sig, mask)
    method = EncodingMethod.C if nc.loop_closed else EncodingMethod.D
    schedule = normalize_drive(schedule_drive(masked, method, nc.tau, nc.theta))
    intensity = simulate_laser(schedule, lp, nc, seed=seed)
    return extract_states(intensity, nc, schedule).values


def memory_capacity(nc: NodeConfig, lp: LaserParams, m_max: int = 10,
                    record: int = 5000, seed: int = 0, lam: float = 0.01,
                    node_fn=None) -> McReport:
    """Linear short-term memory capacity of the node.

    Drives the node with an i.i.d. uniform sequence u(k) through the same
    masking pipeline as the task; for each m = 0..m_max a ridge readout
    (taps=1, so only the states of symbol k are visible) is trained to
    predict u(k-m). The correlation is the squared Pearson correlation on a
    held-out test segment and MC sums m = 1..m_max.

    node_fn(inputs) -> states overrides the photonic node (surrogate seam
    for oracles and unit tests).
    """
    if record < 5000:
        raise ValueError(f"need a record of >= 5000 symbols, got {record}")
    rng = np.random.default_rng(seed)
    u = rng.random(record)
    if node_fn is None:
        states = _photonic_node_states(u, nc, lp, seed)
    else:
        states = np.atleast_2d(np.asarray(node_fn(u), dtype=np.float64))
    if states.shape[0] != record:
        raise ValueError("node returned a state row count != record length")
    if float(np.max(np.std(states, axis=0))) == 0.0:
        raise ValueError("degenerate node response: zero variance in every node")

    scale = float(np.sqrt(np.mean(states**2)))
    x = np.hstack([np.ones((record, 1)), states / max(scale, 1e-300)])

    n_train = int(0.6 * record)
    n_buffer = max(m_max, 50)
    test = slice(n_train + n_buffer, record)

    corr = np.empty(m_max + 1)
    for m in range(m_max + 1):
        train = slice(m, n_train)
        y = np.empty(record)
        y[m:] = u[: record - m]
        y[:m] = 0.0
        model = train_ridge(x[train], y[train], lam, bias_col=0)
        pred = model.predict(x[test])
        target = y[test]
        vp, vt = np.std(pred), np.std(target)
        if vp == 0.0 or vt == 0.0:
            corr[m] = 0.0
        else:
            c = float(np.corrcoef(pred, target)[0, 1])
            corr[m] = c * c
    return McReport(corr, float(np.sum(corr[1:])))


def kk_reconstruct(intensity: SampledSignal, cfg: KkConfig) -> ComplexEnvelope:
    """Kramers-Kronig phase retrieval from direct-detected intensity.

    Upsamples by cfg.upsample_factor, recovers the minimum-phase field
    sqrt(I)*exp(i*phase) with phase the Hilbert transform of ln(I)/2 (sign
    per cfg.sideband), then shifts the record so the signal sits at baseband
    and the carrier line at +carrier_detune. A warning is attached when the
    input had to be clamped away from zero.
    """
    up = resample(intensity, cfg.upsample_factor, 1)
    x = up.samples
    floor = 1e-9 * float(np.mean(np.abs(x)))
    clamped = int(np.sum(x < floor))
    x = np.clip(x, floor, None)

    # The DC mean of ln(I) carries no phase (H{const}=0) but would step at
    # the transform padding and leak a phase ramp, so it is removed first.
    half_log = 0.5 * np.log(x)
    half_log -= np.mean(half_log)
    analytic = hilbert(half_log, N=next_pow2(x.size))[: x.size]
    phase = analytic.imag if cfg.sideband == "upper" else -analytic.imag
    field = np.sqrt(x) * np.exp(1j * phase)

    sign = 1.0 if cfg.sideband == "lower" else -1.0
    t = np.arange(field.size) / up.sample_rate
    field = field * np.exp(sign * 2j * np.pi * cfg.carrier_detune * t)

    meta = dict(intensity.metadata)
    if clamped:
        meta.setdefault("warnings", []).append(
            f"kk_reconstruct clamped {clamped} non-positive intensity samples"
        )
    return ComplexEnvelope(field, up.sample_rate, cfg.carrier_detune, meta)


def cd_compensate(env: ComplexEnvelope, length: float, beta2: float) -> ComplexEnvelope:
    """All-pass exp(-i*beta2/2*w^2*L): exact inverse of dispersion-only
    propagation. length in km, beta2 in ps^2/km."""
    w = 2.0 * np.pi * np.fft.fftfreq(len(env), d=1.0 / env.sample_rate)
    op = np.exp(-0.5j * beta2 * 1e-24 * w**2 * length)
    out = np.fft.ifft(np.fft.fft(env.samples) * op)
    return ComplexEnvelope(out, env.sample_rate, env.center_frequency_offset,
                           dict(env.metadata))


def remove_carrier_tone(env: ComplexEnvelope, frequency: float) -> ComplexEnvelope:
    """Subtract the complex tone at `frequency` (amplitude from the record mean)."""
    t = env.times()
    tone = np.exp(2j * np.pi * frequency * t)
    amp = np.mean(env.samples * np.conj(tone))
    return ComplexEnvelope(env.samples - amp * tone, env.sample_rate, 0.0,
                           dict(env.metadata))


def ffe_train_apply(sig: SampledSignal, truth: Pam4Symbols, n_taps: int,
                    split: SplitSpec, start: int = 0) -> SampledSignal:
    """T/2-spaced least-squares feed-forward equalizer.

    Trains on the split's train segment against the true symbol levels and
    applies the taps to the whole record; the output is one soft estimate
    per symbol (sample_rate = baud).
    """
    if n_taps < 1:
        raise ValueError("n_taps must be >= 1")
    x = sig.samples
    n_sym = x.size // 2
    if len(truth) < n_sym:
        n_sym = len(truth)
    center = n_taps // 2

    pad = np.concatenate([np.zeros(center), x, np.zeros(n_taps)])
    rows = np.empty((n_sym, n_taps))
    for j in range(n_taps):
        rows[:, j] = pad[j : j + 2 * n_sym : 2]

    tr = split.train_slice(start)
    a = rows[tr]
    b = truth.levels[tr]
    # Minimum-norm least squares: dead taps (zero columns) get zero weight.
    sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank == 0:
        raise np.linalg.LinAlgError("FFE training matrix is singular (no signal)")
    out = rows @ sol
    return SampledSignal(out, sig.sample_rate / 2.0, dict(sig.metadata))


def kk_receiver_pipeline(detected: SampledSignal, cfg: KkConfig,
                         truth: Pam4Symbols, split: SplitSpec,
                         start: int = 0) -> BerReport:
    """Full DSP baseline: KK reconstruction -> CD compensation -> carrier
    removal -> matched RRC filter -> downsample to symbol-centered 2 SpS ->
    least-squares FFE -> PAM-4 decisions -> bit-error counting.

    `detected` is the synchronized 2-SpS photodetected record aligned with
    `truth`."""
    env = kk_reconstruct(detected, cfg)
    env = cd_compensate(env, cfg.cd_length, cfg.cd_beta2)
    env = remove_carrier_tone(env, cfg.carrier_detune)

    # Downshift by the carrier detune: the lower sideband lands at baseband
    # and its real part is the transmitted PAM drive (up to scale).
    sign = 1.0 if cfg.sideband == "lower" else -1.0
    baseband = env.samples * np.exp(-sign * 2j * np.pi * cfg.carrier_detune * env.times())
    pam = 2.0 * baseband.real

    sps = int(round(env.sample_rate / cfg.baud))
    taps = rrc_taps(cfg.matched_beta, cfg.matched_span, sps)
    filtered = fftconvolve(pam, taps, mode="same")

    two_sps = filtered[:: sps // 2]
    soft = ffe_train_apply(SampledSignal(two_sps, 2 * cfg.baud), truth,
                           cfg.ffe_taps, split, start)
    decided = decide_pam4(soft.samples[: len(truth)])
    return evaluate_ber(decided, truth, split, start)
