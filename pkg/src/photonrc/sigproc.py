"""Shared DSP primitives: sampled-signal containers, root-raised-cosine
taps, rational resampling and finite-resolution converter models.

Every signal container carries an explicit sample rate in Hz; nothing is
resampled implicitly and mixing rates is a hard error downstream. All
operations are pure functions of their inputs; containers are treated as
immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample as _fft_resample


@dataclass
class SampledSignal:
    """Real-valued waveform at a fixed sample rate.

    samples : real vector, arbitrary units (drive levels, photocurrent, ...)
    sample_rate : Hz
    metadata : free-form bookkeeping (clipping rates, warnings, ...)
    """

    samples: np.ndarray
    sample_rate: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        """Record length in seconds."""
        return self.samples.size / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate


@dataclass
class ComplexEnvelope:
    """Complex optical field envelope (units sqrt(W)) at a fixed sample rate.

    center_frequency_offset records where the co-propagating carrier tone
    sits relative to the envelope center (Hz); 0.0 when there is none.
    """

    samples: np.ndarray
    sample_rate: float
    center_frequency_offset: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def power(self) -> float:
        """Mean |E|^2 in W."""
        if self.samples.size == 0:
            return 0.0
        return float(np.mean(np.abs(self.samples) ** 2))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate


def rrc_taps(beta: float, span: int, sps: int) -> np.ndarray:
    """Unit-energy root-raised-cosine FIR taps.

    beta : roll-off factor in [0, 1]
    span : filter length in symbols (span*sps must be even so the length
        span*sps + 1 is odd and the filter has a true center tap)
    sps : samples per symbol

    The taps are exactly even-symmetric: the positive-time half is computed
    and mirrored.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    if span < 2 or sps < 2:
        raise ValueError(f"need span >= 2 and sps >= 2, got span={span}, sps={sps}")
    if (span * sps) % 2 != 0:
        raise ValueError(f"span*sps must be even for an odd tap count, got {span*sps}")

    half_n = span * sps // 2
    t = np.arange(1, half_n + 1) / sps  # positive time, in symbols

    if beta == 0.0:
        half = np.sinc(t)
        h0 = 1.0
    else:
        half = np.empty(half_n)
        # Removable singularity of the closed form at t = 1/(4 beta).
        with np.errstate(over="ignore"):
            sing = np.isclose(4.0 * beta * t, 1.0, rtol=0.0, atol=1e-12)
        ts = t[~sing]
        num = np.sin(np.pi * ts * (1 - beta)) + 4 * beta * ts * np.cos(np.pi * ts * (1 + beta))
        den = np.pi * ts * (1 - (4 * beta * ts) ** 2)
        half[~sing] = num / den
        if np.any(sing):
            half[sing] = (beta / math.sqrt(2.0)) * (
                (1 + 2 / math.pi) * math.sin(math.pi / (4 * beta))
                + (1 - 2 / math.pi) * math.cos(math.pi / (4 * beta))
            )
        h0 = 1.0 - beta + 4 * beta / math.pi

    taps = np.concatenate([half[::-1], [h0], half])
    return taps / math.sqrt(float(np.sum(taps**2)))


def _reduce_ratio(p: int, q: int) -> tuple[int, int]:
    if p < 1 or q < 1 or p != int(p) or q != int(q):
        raise ValueError(f"resampling ratio must be positive integers, got {p}/{q}")
    g = math.gcd(int(p), int(q))
    return int(p) // g, int(q) // g


def resample(sig, p: int, q: int):
    """Rational rate change by p/q via FFT-based band-limited interpolation.

    Accepts SampledSignal or ComplexEnvelope and returns the same type with
    sample_rate scaled by p/q. The record length times p must be divisible
    by q (after gcd reduction) so the output rate is exact. The FFT method
    treats the record as periodic; callers keep guard intervals at the
    record edges where that matters.
    """
    p, q = _reduce_ratio(p, q)
    n = len(sig)
    if n == 0:
        raise ValueError("cannot resample an empty signal")
    if p == 1 and q == 1:
        return _with_samples(sig, sig.samples.copy(), sig.sample_rate)
    if (n * p) % q != 0:
        raise ValueError(f"record length {n} not divisible by {q} (resampling {p}/{q})")
    n_out = n * p // q
    out = _fft_resample(sig.samples, n_out)
    if not np.iscomplexobj(sig.samples):
        out = np.real(out)
    return _with_samples(sig, out, sig.sample_rate * p / q)


def _with_samples(sig, samples, sample_rate):
    """Rebuild a signal container of the same type with new samples/rate."""
    if isinstance(sig, ComplexEnvelope):
        return ComplexEnvelope(samples, sample_rate, sig.center_frequency_offset,
                               dict(sig.metadata))
    return SampledSignal(samples, sample_rate, dict(sig.metadata))


# SNDR of an ideal converter: 6.02*bits + 1.76 dB for a full-scale sine.
_SNDR_SLOPE_DB = 20.0 * math.log10(2.0)
_SNDR_OFFSET_DB = 10.0 * math.log10(1.5)


def quantize_enob(sig: SampledSignal, enob: float, full_scale: float | None = None,
                  seed: int = 0) -> SampledSignal:
    """Model a DAC/ADC with a given effective number of bits.

    Uniform mid-rise quantizer with floor(2**enob) levels over
    [-full_scale, +full_scale], plus additive white noise trimmed so a
    full-scale sine would measure SNDR = 6.02*enob + 1.76 dB. enob=inf is
    the transparent sentinel. full_scale=None applies the 4-sigma loading
    convention; the clip fraction is recorded in metadata and a warning is
    appended when it exceeds 1%.
    """
    if math.isinf(enob):
        return SampledSignal(sig.samples.copy(), sig.sample_rate, dict(sig.metadata))
    if not enob > 0:
        raise ValueError(f"enob must be > 0, got {enob}")

    x = sig.samples
    if full_scale is None:
        full_scale = 4.0 * float(np.std(x))
    if full_scale <= 0:
        # Degenerate (constant-zero) input: nothing to quantize.
        return SampledSignal(x.copy(), sig.sample_rate, dict(sig.metadata))

    levels = int(math.floor(2.0**enob))
    delta = 2.0 * full_scale / levels
    clipped = np.clip(x, -full_scale, full_scale)
    code = np.clip(np.floor((clipped + full_scale) / delta), 0, levels - 1)
    y = (code + 0.5) * delta - full_scale

    # Trim toward the target SNDR with white noise when the quantizer alone
    # is better than the enob figure implies.
    target_noise = (full_scale**2 / 2.0) / 10.0 ** ((_SNDR_SLOPE_DB * enob + _SNDR_OFFSET_DB) / 10.0)
    extra = target_noise - delta**2 / 12.0
    if extra > 0:
        rng = np.random.default_rng(seed)
        y = y + math.sqrt(extra) * rng.standard_normal(y.size)

    meta = dict(sig.metadata)
    clip_fraction = float(np.mean(np.abs(x) > full_scale)) if x.size else 0.0
    meta["clip_fraction"] = clip_fraction
    if clip_fraction > 0.01:
        meta.setdefault("warnings", []).append(
            f"quantizer clipping {clip_fraction:.2%} of samples (full_scale={full_scale:.3g})"
        )
    return SampledSignal(y, sig.sample_rate, meta)


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def freq_filter(samples: np.ndarray, response, sample_rate: float) -> np.ndarray:
    """Apply a frequency response H(f) to a record.

    The record is reflect-padded and zero-padded up to the next power of two
    before the transform, then cropped, so edge wrap-around stays out of the
    live region. `response` maps an array of frequencies in Hz to complex
    gains; it must be Hermitian for real inputs to stay real (the output is
    re-realed for real inputs).
    """
    x = np.asarray(samples)
    n = x.size
    m = next_pow2(n + max(32, n // 4))
    left = (m - n) // 2
    padded = np.pad(x, (left, m - n - left), mode="reflect")
    f = np.fft.fftfreq(m, d=1.0 / sample_rate)
    out = np.fft.ifft(np.fft.fft(padded) * response(f))
    out = out[left : left + n]
    if not np.iscomplexobj(x):
        out = out.real
    return out


def first_order_lowpass(f: np.ndarray, corner: float) -> np.ndarray:
    """H(f) of a single-pole RC low-pass with the given corner frequency."""
    return 1.0 / (1.0 + 1j * f / corner)


def brickwall_lowpass(f: np.ndarray, cutoff: float) -> np.ndarray:
    return (np.abs(f) <= cutoff).astype(np.complex128)
