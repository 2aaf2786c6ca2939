"""Linear readout: tapped feature assembly, ridge regression onto PAM-4
levels, nearest-level decisions, bit-error accounting and tap-count tuning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from photonrc.transmitter import Pam4Symbols, gray_decode_pam4

# Hard-decision FEC limit for error-free post-FEC decoding.
HD_FEC_LOG10_BER = -2.42


@dataclass
class SplitSpec:
    """Contiguous train -> buffer -> test segmentation, in symbols."""

    train: int = 16500
    buffer: int = 500
    test: int = 12000

    def __post_init__(self):
        if min(self.train, self.test) < 1 or self.buffer < 0:
            raise ValueError("split segments must be positive (buffer >= 0)")

    @property
    def total(self) -> int:
        return self.train + self.buffer + self.test

    def train_slice(self, start: int = 0) -> slice:
        return slice(start, start + self.train)

    def test_slice(self, start: int = 0) -> slice:
        begin = start + self.train + self.buffer
        return slice(begin, begin + self.test)


@dataclass
class RidgeModel:
    """Trained linear readout. weights[0] is the bias term."""

    weights: np.ndarray
    taps: int
    lam: float

    def predict(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights


@dataclass
class BerReport:
    bit_errors: int
    bits: int
    log10_ber: float | None   # None = zero errors (see log10_ber_bound)
    hd_fec_pass: bool

    @property
    def log10_ber_bound(self) -> float:
        """log10 BER, or its upper bound 1/bits when no errors were counted."""
        return math.log10(max(self.bit_errors, 1) / self.bits)


def build_features(states: np.ndarray, taps: int) -> np.ndarray:
    """Concatenate a centered window of state rows per symbol, plus a bias.

    Row k holds [1, states[k-P], ..., states[k+P]] with P = (taps-1)/2;
    edges are padded by replicating the terminal rows. Column 0 is the bias,
    so the window for a smaller odd tap count is a centered column slice.
    """
    if taps % 2 != 1 or taps < 1:
        raise ValueError(f"taps must be odd and >= 1, got {taps}")
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    n, width = states.shape
    if taps > n:
        raise ValueError(f"taps={taps} exceeds the {n} available symbols")
    p = (taps - 1) // 2
    padded = np.vstack([np.repeat(states[:1], p, axis=0), states,
                        np.repeat(states[-1:], p, axis=0)])
    blocks = [np.ones((n, 1))]
    for k in range(taps):
        blocks.append(padded[k : k + n])
    return np.hstack(blocks)


def _solve_ridge(gram: np.ndarray, rhs: np.ndarray, lam: float,
                 bias_col: int | None) -> np.ndarray:
    reg = lam * np.eye(gram.shape[0])
    if bias_col is not None:
        reg[bias_col, bias_col] = 0.0
    a = gram + reg
    try:
        w = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"normal equations singular (lambda={lam}); rank-deficient features"
        ) from exc
    residual = float(np.linalg.norm(a @ w - rhs))
    if residual > 1e-8 * max(float(np.linalg.norm(rhs)), 1e-300):
        raise np.linalg.LinAlgError(
            f"ill-conditioned normal equations: residual {residual:.3e} "
            f"vs ||X'y|| {float(np.linalg.norm(rhs)):.3e}"
        )
    return w


def train_ridge(features: np.ndarray, targets: np.ndarray, lam: float,
                bias_col: int | None = 0, taps: int = 1) -> RidgeModel:
    """Ridge regression: minimize ||Xw - y||^2 + lam*||w||^2.

    The designated bias column is left unregularized (bias_col=None
    regularizes everything). Solved through the normal equations; the
    solution is verified to satisfy them to 1e-8 relative.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"row mismatch: {x.shape[0]} features vs {y.shape[0]} targets")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if bias_col is not None and not 0 <= bias_col < x.shape[1]:
        raise ValueError("bias_col out of range")
    w = _solve_ridge(x.T @ x, x.T @ y, lam, bias_col)
    return RidgeModel(w, taps, lam)


def decide_pam4(predictions: np.ndarray) -> Pam4Symbols:
    """Nearest PAM-4 level; midpoint ties (-2, 0, +2) go to the lower level."""
    x = np.asarray(predictions, dtype=np.float64)
    levels = np.where(x <= -2.0, -3.0,
             np.where(x <= 0.0, -1.0,
             np.where(x <= 2.0, 1.0, 3.0)))
    return Pam4Symbols(levels, gray_decode_pam4(levels))


def evaluate_ber(decided: Pam4Symbols, truth: Pam4Symbols, split: SplitSpec,
                 start: int = 0) -> BerReport:
    """Count bit errors over the test segment (Gray-demapped, 2 bits/symbol).

    `start` offsets the split within the records (guard symbols ahead of the
    train segment). Zero errors are reported with the None sentinel; the
    bound is then 1/(2*test).
    """
    if len(decided) != len(truth):
        raise ValueError(f"length mismatch: {len(decided)} vs {len(truth)}")
    sl = split.test_slice(start)
    if sl.stop > len(truth):
        raise ValueError("test segment extends past the record")
    d_bits = decided.source_bits.bits.reshape(-1, 2)[sl]
    t_bits = truth.source_bits.bits.reshape(-1, 2)[sl]
    errors = int(np.sum(d_bits != t_bits))
    bits = 2 * split.test
    log10_ber = math.log10(errors / bits) if errors else None
    passed = errors == 0 or log10_ber <= HD_FEC_LOG10_BER
    return BerReport(errors, bits, log10_ber, passed)


def tune_taps(states: np.ndarray, truth: Pam4Symbols, split: SplitSpec,
              max_taps: int = 61, lam: float = 0.01, start: int = 0,
              per_bit: bool = False) -> tuple[RidgeModel, BerReport]:
    """Train one readout per odd tap count 1..max_taps, keep the lowest BER.

    Models are fitted on the train segment only and compared on the test
    segment; ties go to the smaller tap count. A single Gram matrix at
    max_taps is assembled and sliced per tap count (column 0 is the bias and
    smaller windows are centered column ranges), which is algebraically the
    per-tap normal-equation solve.

    per_bit=True trains one binary (+-1) regression per Gray bit instead of
    a single regression onto the symbol levels; decisions are then per-bit
    signs. The returned model carries one weight column per bit.
    """
    if max_taps % 2 != 1:
        raise ValueError(f"max_taps must be odd, got {max_taps}")
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    n_nodes = states.shape[1]
    x_full = build_features(states, max_taps)
    truth_bits = truth.source_bits.bits.reshape(-1, 2)
    if per_bit:
        y = 2.0 * truth_bits - 1.0
    else:
        y = truth.levels

    tr = split.train_slice(start)
    te = split.test_slice(start)
    if te.stop > states.shape[0]:
        raise ValueError("split extends past the available symbols")
    gram = x_full[tr].T @ x_full[tr]
    rhs = x_full[tr].T @ y[tr]

    p_max = (max_taps - 1) // 2
    best: tuple[int, RidgeModel, BerReport] | None = None
    for taps in range(1, max_taps + 1, 2):
        p = (taps - 1) // 2
        cols = np.r_[0, 1 + (p_max - p) * n_nodes : 1 + (p_max + p + 1) * n_nodes]
        w = _solve_ridge(gram[np.ix_(cols, cols)], rhs[cols], lam, bias_col=0)
        model = RidgeModel(w, taps, lam)
        pred = x_full[te][:, cols] @ w
        if per_bit:
            decided_bits = (pred > 0).astype(np.int8)
            errors = int(np.sum(decided_bits != truth_bits[te]))
        else:
            errors = int(np.sum(
                decide_pam4(pred).source_bits.bits != gray_decode_pam4(y[te]).bits
            ))
        bits = 2 * split.test
        log10_ber = math.log10(errors / bits) if errors else None
        report = BerReport(errors, bits, log10_ber,
                           errors == 0 or log10_ber <= HD_FEC_LOG10_BER)
        if best is None or errors < best[2].bit_errors:
            best = (taps, model, report)
    assert best is not None
    return best[1], best[2]
