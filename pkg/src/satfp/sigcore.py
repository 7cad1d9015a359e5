"""Signal primitives: QPSK header modulation/demodulation, normalization, noise scoring.

All operations are pure functions of their inputs and are safe to call
concurrently. Waveforms are paired I/Q sample sequences; one 16-bit header
modulates to 8 QPSK symbols.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, MalformedInputError, UndecodableError

#: Bit pattern of the Iridium downlink message header (8 QPSK symbols).
IRIDIUM_HEADER_BITS = "1100001111001100"

#: Gray bit-pair to constellation point mapping (unit-energy QPSK).
QPSK_MAP = {
    "00": (1 + 1j) / np.sqrt(2),
    "01": (-1 + 1j) / np.sqrt(2),
    "11": (-1 - 1j) / np.sqrt(2),
    "10": (1 - 1j) / np.sqrt(2),
}

_RRC_ROLLOFF = 0.4
_RRC_SPAN = 6  # symbols, total filter length span*osr + 1


@dataclass(frozen=True)
class HeaderSpec:
    """Fixed header layout: bit pattern, symbol rate, and oversampling factor."""

    bits: str = IRIDIUM_HEADER_BITS
    symbol_rate: float = 25_000.0
    oversampling: int = 40

    def __post_init__(self):
        if len(self.bits) % 2 != 0 or not self.bits:
            raise MalformedInputError(f"header bits must be a non-empty even-length string, got {len(self.bits)}")
        if set(self.bits) - {"0", "1"}:
            raise MalformedInputError("header bits must contain only '0' and '1'")
        if self.oversampling < 1:
            raise MalformedInputError(f"oversampling must be >= 1, got {self.oversampling}")

    @property
    def n_symbols(self) -> int:
        return len(self.bits) // 2

    @property
    def n_samples(self) -> int:
        return self.n_symbols * self.oversampling


@dataclass
class Waveform:
    """One burst as paired in-phase/quadrature sample sequences."""

    i: np.ndarray
    q: np.ndarray
    sample_rate_hint: float = 0.0

    def __post_init__(self):
        self.i = np.atleast_1d(np.asarray(self.i))
        self.q = np.atleast_1d(np.asarray(self.q))
        if not np.issubdtype(self.i.dtype, np.floating):
            self.i = self.i.astype(np.float64)
        if not np.issubdtype(self.q.dtype, np.floating):
            self.q = self.q.astype(np.float64)
        if self.i.shape != self.q.shape or self.i.ndim != 1 or len(self.i) < 1:
            raise MalformedInputError(
                f"i/q must be equal-length 1-D sequences, got {self.i.shape} and {self.q.shape}"
            )

    def __len__(self) -> int:
        return len(self.i)

    def to_complex(self) -> np.ndarray:
        return self.i.astype(np.float64) + 1j * self.q.astype(np.float64)

    @classmethod
    def from_complex(cls, x: np.ndarray, sample_rate_hint: float = 0.0) -> "Waveform":
        return cls(i=np.real(x).copy(), q=np.imag(x).copy(), sample_rate_hint=sample_rate_hint)

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.i)), np.max(np.abs(self.q))))


@dataclass(frozen=True)
class AlignmentReport:
    """How the demodulator aligned the received header against the ideal one."""

    rotation_deg: int  # resolved quadrant ambiguity, multiple of 90
    phase_offset_rad: float  # total estimated carrier phase (fine + quadrant)
    correlation: float  # normalized header correlation in [-1, 1]


def rrc_taps(oversampling: int, rolloff: float = _RRC_ROLLOFF, span: int = _RRC_SPAN) -> np.ndarray:
    """Root-raised-cosine taps, center tap scaled to 1."""
    n = span * oversampling
    t = (np.arange(n + 1) - n / 2) / oversampling  # in symbol periods
    h = np.empty_like(t)
    zero = np.abs(t) < 1e-12
    h[zero] = 1.0 - rolloff + 4.0 * rolloff / np.pi
    if rolloff > 0:
        brk = np.isclose(np.abs(t), 1.0 / (4.0 * rolloff), atol=1e-12)
        h[brk] = (rolloff / np.sqrt(2.0)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * rolloff))
            + (1 - 2 / np.pi) * np.cos(np.pi / (4 * rolloff))
        )
    else:
        brk = np.zeros_like(zero)
    rest = ~(zero | brk)
    tr = t[rest]
    h[rest] = (
        np.sin(np.pi * tr * (1 - rolloff)) + 4 * rolloff * tr * np.cos(np.pi * tr * (1 + rolloff))
    ) / (np.pi * tr * (1 - (4 * rolloff * tr) ** 2))
    return h / h[n // 2]


def _symbols_from_bits(bits: str) -> np.ndarray:
    try:
        return np.array([QPSK_MAP[bits[i : i + 2]] for i in range(0, len(bits), 2)])
    except KeyError:
        raise MalformedInputError("bits must contain only '0' and '1'") from None


_QUADRANT_BITS = {(1, 1): "00", (-1, 1): "01", (-1, -1): "11", (1, -1): "10"}


def _bits_from_symbols(symbols: np.ndarray) -> str:
    # Inverse of QPSK_MAP by quadrant sign; boundary points round up.
    return "".join(
        _QUADRANT_BITS[(1 if s.real >= 0 else -1, 1 if s.imag >= 0 else -1)]
        for s in symbols
    )


def modulate_qpsk(bits: str, spec: HeaderSpec, pulse_shape: str = "rrc") -> Waveform:
    """Modulate a bit string to an oversampled QPSK waveform.

    ``pulse_shape`` is ``"rrc"`` (root-raised-cosine, roll-off 0.4, span 6) or
    ``"rect"`` (each symbol held for ``oversampling`` samples). Output length
    is exactly ``len(bits)/2 * oversampling``.
    """
    if len(bits) % 2 != 0 or not bits:
        raise MalformedInputError(f"bit count must be even and positive, got {len(bits)}")
    osr = spec.oversampling
    symbols = _symbols_from_bits(bits)
    if pulse_shape == "rect":
        x = np.repeat(symbols, osr)
    elif pulse_shape == "rrc":
        taps = rrc_taps(osr)
        up = np.zeros(len(symbols) * osr, dtype=complex)
        up[::osr] = symbols
        full = np.convolve(up, taps)
        gd = (len(taps) - 1) // 2
        x = full[gd : gd + len(symbols) * osr]
    else:
        raise MalformedInputError(f"unknown pulse shape {pulse_shape!r}")
    return Waveform.from_complex(x, sample_rate_hint=spec.symbol_rate * osr)


def _estimate_symbols(w: Waveform, spec: HeaderSpec, pulse_shape: str) -> np.ndarray:
    osr = spec.oversampling
    n_sym = spec.n_symbols
    x = w.to_complex()[: n_sym * osr]
    if pulse_shape == "rect":
        return x.reshape(n_sym, osr).mean(axis=1)
    taps = rrc_taps(osr)
    gd = (len(taps) - 1) // 2
    mf = np.convolve(x, taps)[gd : gd + n_sym * osr]
    return mf[::osr] / np.sum(taps * taps)


def demodulate_header(
    w: Waveform,
    spec: HeaderSpec,
    pulse_shape: str = "rrc",
    decode_floor: float = 0.5,
) -> tuple[str, AlignmentReport]:
    """Decode the header bits and report the phase alignment used.

    The fine carrier phase is estimated with the fourth-power method; the
    remaining 4-fold QPSK ambiguity is resolved by correlating against the
    ideal header of ``spec``. Raises :class:`UndecodableError` when the best
    correlation falls below ``decode_floor``.
    """
    if len(w) < spec.n_samples:
        raise MalformedInputError(
            f"waveform has {len(w)} samples, need at least {spec.n_samples}"
        )
    est = _estimate_symbols(w, spec, pulse_shape)

    # Fourth-power phase estimate: all QPSK points satisfy s^4 = -|s|^4.
    z4 = np.sum(est**4)
    if abs(z4) > 0:
        fine = (np.angle(z4) - np.pi) / 4.0
        if fine < -np.pi / 4:
            fine += np.pi / 2
    else:
        fine = 0.0
    t = est * np.exp(-1j * fine)

    ideal = _symbols_from_bits(spec.bits)
    z = np.sum(t * np.conj(ideal))
    quadrant = int(np.round(np.angle(z) / (np.pi / 2))) % 4
    denom = np.linalg.norm(t) * np.linalg.norm(ideal)
    if denom == 0:
        raise UndecodableError(0.0, decode_floor)
    score = float(np.real(z * np.exp(-1j * quadrant * np.pi / 2)) / denom)
    if score < decode_floor:
        raise UndecodableError(score, decode_floor)

    aligned = t * np.exp(-1j * quadrant * np.pi / 2)
    bits = _bits_from_symbols(aligned)
    report = AlignmentReport(
        rotation_deg=90 * quadrant,
        phase_offset_rad=float(fine + quadrant * np.pi / 2),
        correlation=score,
    )
    return bits, report


def normalize(w: Waveform) -> Waveform:
    """Scale I and Q jointly so the largest absolute component becomes 1.

    A single divisor is used for both components, preserving IQ gain
    imbalance. Idempotent and scale-invariant.
    """
    m = w.max_abs()
    if m == 0.0 or not np.isfinite(m):
        raise DegenerateInputError("cannot normalize an all-zero or non-finite waveform")
    return Waveform(i=w.i / m, q=w.q / m, sample_rate_hint=w.sample_rate_hint)


def noise_score(w: Waveform, spec: HeaderSpec, pulse_shape: str = "rrc") -> float:
    """RMS residual against the ideal header after a joint phase/amplitude fit.

    Zero for a clean header under any global rotation or scaling; grows with
    noise power. The waveform is normalized internally so the score is
    scale-invariant.
    """
    if len(w) != spec.n_samples:
        raise MalformedInputError(
            f"waveform has {len(w)} samples, spec requires {spec.n_samples}"
        )
    x = normalize(w).to_complex()
    ref = modulate_qpsk(spec.bits, spec, pulse_shape=pulse_shape).to_complex()
    # Least-squares complex gain: fits rotation and amplitude jointly.
    a = np.vdot(ref, x) / np.vdot(ref, ref)
    res = x - a * ref
    return float(np.sqrt(np.mean(np.abs(res) ** 2)))
