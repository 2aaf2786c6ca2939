"""Transmitter: Gray-coded PAM-4 mapping and generation of the RRC-shaped
single-sideband optical envelope with a co-propagating carrier.

The envelope convention is channel-center frame. The real RRC-shaped PAM-4
drive m(t) modulates the carrier at +carrier_detune and the upper sideband
is removed by an ideal brick-wall filter, leaving the carrier line plus the
lower sideband (m - i*Hilbert(m))/2 hugging it from below. Direct detection
of that field yields A^2 + A*m(t) + signal-signal beat interference, i.e.
the PAM waveform at baseband. With the carrier strong enough (CSPR) the
carrier-frame field is minimum-phase, which is what the Kramers-Kronig
receiver needs; check_minimum_phase counts origin encirclements of the
carrier-frame trajectory to verify it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from photonrc.sigproc import (
    ComplexEnvelope,
    SampledSignal,
    first_order_lowpass,
    freq_filter,
    quantize_enob,
    rrc_taps,
)

# Fixed Gray map: bit pair -> amplitude level. Adjacent levels differ in one bit.
#   00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
_LEVELS_BY_INDEX = np.array([-3.0, -1.0, 3.0, 1.0])  # index = 2*b0 + b1
_BITS_BY_LEVEL = {-3.0: (0, 0), -1.0: (0, 1), 1.0: (1, 1), 3.0: (1, 0)}

PAM4_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0])


@dataclass
class BitStream:
    """Binary payload; length must be even (2 bits per PAM-4 symbol)."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.int8)
        if np.any((self.bits != 0) & (self.bits != 1)):
            raise ValueError("bits must be 0/1")

    def __len__(self) -> int:
        return self.bits.size


@dataclass
class Pam4Symbols:
    """PAM-4 amplitude levels over {-3,-1,+1,+3} plus the bits they encode."""

    levels: np.ndarray
    source_bits: BitStream

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64)
        if not np.all(np.isin(self.levels, PAM4_LEVELS)):
            raise ValueError("levels must lie in {-3,-1,+1,+3}")
        if self.source_bits.bits.size != 2 * self.levels.size:
            raise ValueError("bit count must be twice the symbol count")

    def __len__(self) -> int:
        return self.levels.size


@dataclass
class TxConfig:
    baud: float = 56e9              # symbols/s
    beta: float = 0.1               # RRC roll-off
    carrier_detune: float = 24.5e9  # Hz, carrier offset from channel center
    cspr_db: float = 9.0            # carrier-to-signal power ratio, dB
    dac_enob: float = 5.5           # bits; inf = ideal DAC
    preemph_corner: float = 20e9    # Hz, inverse-filter corner (matches MZM bandwidth)
    sps: int = 8                    # internal samples per symbol (>= 4)
    rrc_span: int = 32              # shaping filter span, symbols
    ssb_cut: bool = True            # remove the sideband above the carrier
    ssb_guard: float = 0.5e9        # Hz kept above the carrier line (interleaver edge)

    def __post_init__(self):
        if self.baud <= 0:
            raise ValueError("baud must be > 0")
        if self.sps < 4:
            raise ValueError("internal oversampling must be >= 4 SpS")

    @property
    def sample_rate(self) -> float:
        return self.baud * self.sps

    @property
    def ssb_separated(self) -> bool:
        """True when the carrier sits fully outside the signal band."""
        return self.carrier_detune >= self.baud * (1.0 + self.beta) / 2.0


def gray_encode_pam4(bits: BitStream) -> Pam4Symbols:
    """Map bit pairs to PAM-4 levels with the fixed Gray code."""
    if len(bits) % 2 != 0:
        raise ValueError(f"bit count must be even, got {len(bits)}")
    b = bits.bits
    idx = 2 * b[0::2] + b[1::2]
    return Pam4Symbols(_LEVELS_BY_INDEX[idx], bits)


def gray_decode_pam4(levels: np.ndarray) -> BitStream:
    """Inverse of the Gray map, level-wise."""
    levels = np.asarray(levels, dtype=np.float64)
    bits = np.empty(2 * levels.size, dtype=np.int8)
    for lvl, (b0, b1) in _BITS_BY_LEVEL.items():
        sel = levels == lvl
        bits[0::2][sel] = b0
        bits[1::2][sel] = b1
    return BitStream(bits)


def _shaped_baseband(symbols: Pam4Symbols, cfg: TxConfig) -> np.ndarray:
    """RRC-shaped impulse train; symbol k centered at sample k*sps."""
    impulses = np.zeros(len(symbols) * cfg.sps)
    impulses[:: cfg.sps] = symbols.levels
    taps = rrc_taps(cfg.beta, cfg.rrc_span, cfg.sps)
    return fftconvolve(impulses, taps, mode="same")


def shape_and_ssb(symbols: Pam4Symbols, cfg: TxConfig, dac_seed: int = 0) -> ComplexEnvelope:
    """Generate the transmitted optical envelope.

    Drive chain: RRC shaping -> first-order inverse pre-emphasis -> DAC
    quantizer (cfg.dac_enob) -> first-order DAC/MZM response (same corner,
    so the signal path is transparent and only the quantization noise is
    shaped). The drive then linearly modulates the carrier at
    +carrier_detune; with ssb_cut the sideband above the carrier (beyond
    ssb_guard) is removed by an ideal brick-wall filter. The remaining
    signal is normalized to unit power and the carrier line carries
    10^(cspr_db/10) times the signal power.

    cspr_db=inf is the carrier-only sentinel (unit-power tone).
    """
    fs = cfg.sample_rate
    n = len(symbols) * cfg.sps
    t = np.arange(n) / fs
    tone = np.exp(2j * np.pi * cfg.carrier_detune * t)

    if math.isinf(cfg.cspr_db):
        return ComplexEnvelope(tone, fs, cfg.carrier_detune)

    drive = _shaped_baseband(symbols, cfg)
    drive = freq_filter(drive, lambda f: 1.0 + 1j * f / cfg.preemph_corner, fs)
    dac_out = quantize_enob(SampledSignal(drive, fs), cfg.dac_enob, seed=dac_seed)
    analog = freq_filter(dac_out.samples, lambda f: first_order_lowpass(f, cfg.preemph_corner), fs)

    if cfg.ssb_cut:
        # Carrier-frame brick wall: keep the lower sideband (plus a small
        # guard above the carrier, where the physical interleaver edge sits).
        signal = freq_filter(analog.astype(np.complex128),
                             lambda f: (f <= cfg.ssb_guard).astype(np.complex128), fs)
    else:
        signal = analog.astype(np.complex128)

    signal = signal / math.sqrt(float(np.mean(np.abs(signal) ** 2)))
    carrier_amp = 10.0 ** (cfg.cspr_db / 20.0)
    env = (carrier_amp + signal) * tone
    out = ComplexEnvelope(env, fs, cfg.carrier_detune, dict(dac_out.metadata))
    if not cfg.ssb_cut and not cfg.ssb_separated:
        out.metadata.setdefault("warnings", []).append(
            "double-sideband field with the carrier inside the signal band; "
            "minimum phase relies on CSPR"
        )
    return out


def check_minimum_phase(env: ComplexEnvelope) -> int:
    """Winding number of the carrier-frame field trajectory around the origin.

    0 means the minimum-phase condition holds over the record. The field is
    first shifted so the carrier (center_frequency_offset) sits at DC; a pure
    carrier is then a stationary point away from the origin.
    """
    t = env.times()
    e = env.samples * np.exp(-2j * np.pi * env.center_frequency_offset * t)
    ph = np.angle(e)
    d = np.diff(ph)
    d = (d + np.pi) % (2.0 * np.pi) - np.pi
    return int(round(float(np.sum(d)) / (2.0 * np.pi)))


def measure_cspr_db(env: ComplexEnvelope, carrier_width: float = 250e6) -> float:
    """Spectral carrier/signal power split oracle.

    Integrates the periodogram within +-carrier_width of the carrier line as
    carrier power; the signal PSD underneath the line is interpolated from
    the adjacent bins and moved back to the signal side.
    """
    n = len(env)
    spec = np.abs(np.fft.fft(env.samples)) ** 2
    offset = np.fft.fftfreq(n, d=1.0 / env.sample_rate) - env.center_frequency_offset
    window = np.abs(offset) <= carrier_width
    # One-sided floor estimates; the signal may live on only one side of the
    # line (SSB), so take the larger of the two.
    below = (offset < -carrier_width) & (offset >= -4.0 * carrier_width)
    above = (offset > carrier_width) & (offset <= 4.0 * carrier_width)
    floor = max(float(np.mean(spec[below])), float(np.mean(spec[above])))
    under_line = floor * int(np.sum(window))
    p_carrier = float(np.sum(spec[window])) - under_line
    p_signal = float(np.sum(spec[~window])) + under_line
    if p_signal <= 0 or p_carrier <= 0:
        raise ValueError("record does not contain both carrier and signal power")
    return 10.0 * math.log10(p_carrier / p_signal)


def occupied_bandwidth(env: ComplexEnvelope, drop_db: float = 20.0) -> float:
    """-drop_db occupied spectral width (Hz) of the envelope, carrier excluded.

    Welch-style coarse smoothing of the periodogram, threshold relative to
    the in-band peak after masking the carrier line.
    """
    n = len(env)
    t = env.times()
    # Remove the carrier tone so the measurement sees the signal alone.
    tone = np.exp(2j * np.pi * env.center_frequency_offset * t)
    amp = np.mean(env.samples * np.conj(tone))
    sig = env.samples - amp * tone
    spec = np.abs(np.fft.fft(sig)) ** 2
    f = np.fft.fftfreq(n, d=1.0 / env.sample_rate)
    order = np.argsort(f)
    f, spec = f[order], spec[order]
    # Smooth over ~100 MHz to knock down periodogram variance.
    width = max(1, int(100e6 * n / env.sample_rate))
    kernel = np.ones(width) / width
    smooth = np.convolve(spec, kernel, mode="same")
    thresh = smooth.max() * 10.0 ** (-drop_db / 10.0)
    above = np.nonzero(smooth >= thresh)[0]
    return float(f[above[-1]] - f[above[0]])
