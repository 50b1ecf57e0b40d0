"""Spectrum-analyzer emulation, tone suppression and the linear oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft
from scipy import signal as sps

from .blocks import BasebandBeat
from .noise import PhaseTrace

HANN_ENBW_BINS = 1.5
MAIN_LOBE_BINS = 2
ORACLE_FLOOR_DB = 80.0


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Segment-averaged spectrum.

    For a beat, ``power`` is dBc per RBW over a two-sided grid centred on
    the carrier and ``bins`` holds the linear power per bin (window peak
    normalization, so a bin-centred tone reads its power). For a phase
    trace, ``power`` is the one-sided PSD in dB rad^2/Hz and ``bins`` the
    linear PSD.
    """

    freqs: np.ndarray
    power: np.ndarray
    rbw: float
    bins: np.ndarray
    reference: float
    kind: str
    bin_width: float

    @property
    def is_beat(self) -> bool:
        return self.kind == "beat"

    def total_power(self) -> float:
        """Integrated power: mean |beat|^2, or phase variance in rad^2."""
        if self.is_beat:
            return float(np.sum(self.bins) / HANN_ENBW_BINS)
        return float(np.sum(self.bins) * self.bin_width)


def _segment_length(rate: float, rbw: float) -> int:
    return sfft.next_fast_len(int(math.ceil(HANN_ENBW_BINS * rate / rbw)))


def welch_psd(trace, rbw: float, window: str = "hann", carrier: float | None = None) -> Spectrum:
    """Welch estimate with Hann window and 50 % overlap.

    Parameters
    ----------
    trace : BasebandBeat or PhaseTrace
        Beat envelope (two-sided, dBc) or phase deviation (one-sided PSD).
    rbw : float
        Requested resolution bandwidth in Hz. The segment length is rounded
        up to an FFT-friendly size, so the realized RBW can be slightly
        smaller; it is stored on the result.
    carrier : float, optional
        Linear carrier power for dBc normalization. By default the largest
        bin of this spectrum is used.
    """
    if window != "hann":
        raise ValueError(f"only the hann window is supported, got {window!r}")
    if not rbw > 0:
        raise ValueError(f"rbw must be > 0, got {rbw}")
    if isinstance(trace, BasebandBeat):
        x = trace.samples[trace.valid_from:trace.valid_to]
        kind = "beat"
    elif isinstance(trace, PhaseTrace):
        x = trace.samples
        kind = "phase"
    else:
        raise TypeError(f"cannot analyze {type(trace).__name__}")
    rate = trace.sample_rate
    nper = _segment_length(rate, rbw)
    need = nper + nper // 2
    if x.size < need:
        raise ValueError(
            f"trace has {x.size} samples; rbw {rbw:g} Hz needs at least {need} "
            f"({need / rate:.3g} s) for two averages"
        )
    real_rbw = HANN_ENBW_BINS * rate / nper
    if kind == "beat":
        f, p = sps.welch(
            x, fs=rate, window="hann", nperseg=nper, noverlap=nper // 2,
            detrend=False, return_onesided=False, scaling="spectrum",
        )
        f, p = np.fft.fftshift(f), np.fft.fftshift(p)
        ref = float(np.max(p)) if carrier is None else float(carrier)
        if not ref > 0:
            raise ValueError("carrier power must be > 0")
        with np.errstate(divide="ignore"):
            db = 10 * np.log10(p / ref)
    else:
        f, p = sps.welch(
            x, fs=rate, window="hann", nperseg=nper, noverlap=nper // 2,
            detrend="constant", scaling="density",
        )
        ref = 1.0
        with np.errstate(divide="ignore"):
            db = 10 * np.log10(p)
    return Spectrum(f, db, real_rbw, p, ref, kind, rate / nper)


def phase_psd(trace: PhaseTrace, rbw: float) -> Spectrum:
    return welch_psd(trace, rbw)


class ToneReading(NamedTuple):
    frequency: float
    dbc: float
    floor_dbc: float
    floor_limited: bool


def tone_power_dbc(spec: Spectrum, f: float) -> ToneReading:
    """Carrier-relative power of a tone, integrated over the Hann main lobe.

    The local noise floor (mean of the bins 3 to 40 bins away, spurs and
    the carrier excluded) is scaled to the integration width and
    subtracted. A tone not exceeding that floor is flagged floor-limited
    and reported at the floor level, i.e. as an upper bound.
    """
    if not spec.freqs[0] <= f <= spec.freqs[-1]:
        raise ValueError(
            f"{f:g} Hz lies outside the spectrum grid [{spec.freqs[0]:g}, {spec.freqs[-1]:g}] Hz"
        )
    k = int(np.argmin(np.abs(spec.freqs - f)))
    lo, hi = max(k - MAIN_LOBE_BINS, 0), min(k + MAIN_LOBE_BINS + 1, spec.bins.size)
    scale = 1.0 / HANN_ENBW_BINS if spec.is_beat else spec.bin_width
    lobe = float(np.sum(spec.bins[lo:hi])) * scale
    floor = _local_floor(spec, k) * (hi - lo) * scale
    tone = lobe - floor
    limited = tone <= floor
    if limited:
        tone = floor
    dbc = 10 * math.log10(tone / spec.reference) if tone > 0 else -math.inf
    floor_dbc = 10 * math.log10(floor / spec.reference) if floor > 0 else -math.inf
    return ToneReading(float(f), dbc, floor_dbc, bool(limited))


def _local_floor(spec: Spectrum, k: int) -> float:
    j = np.r_[k - 40:k - 2, k + 3:k + 41]
    j = j[(j >= 0) & (j < spec.bins.size)]
    if spec.is_beat:
        zero = int(np.argmin(np.abs(spec.freqs)))
        j = j[np.abs(j - zero) > MAIN_LOBE_BINS + 1]
    if j.size == 0:
        return 0.0
    near = spec.bins[j]
    med = np.median(near)
    near = near[near <= 10 * med] if med > 0 else near
    return float(np.mean(near))


def lock_in(x: np.ndarray, f: float, rate: float) -> complex:
    """Complex amplitude of the ``f`` component of ``x`` (Hann weighted)."""
    x = np.asarray(x)
    w = np.hanning(x.size)
    t = np.arange(x.size) / rate
    return complex(2 * np.sum(w * x * np.exp(-2j * np.pi * f * t)) / np.sum(w))


def small_angle_gain(residual: np.ndarray, f: float, rate: float) -> float:
    """Effective gain of ``sin`` on the residual phase at frequency ``f``.

    Random phase noise compresses the sin() describing function below one;
    the feedforward loop sees ``kappa * g_ff`` instead of ``g_ff``.
    """
    x = lock_in(residual, f, rate)
    if x == 0:
        return 1.0
    return float((lock_in(np.sin(residual), f, rate) / x).real)


# --- suppression -----------------------------------------------------------

class Suppression(NamedTuple):
    value: float
    on: ToneReading
    off: ToneReading
    flags: tuple[str, ...]


def _tone_reading(run, f: float, rbw: float, carrier: float | None = None) -> ToneReading:
    return tone_power_dbc(welch_psd(run.output_beat(), rbw, carrier=carrier), f)


def suppression_at(run_on, run_off, f: float, rbw: float = 5e3) -> Suppression:
    """Tone suppression ``dBc(off) - dBc(on)`` at ``f``.

    An on-run tone at the noise floor gives a lower bound flagged
    ``floor_limited``; an invisible off-run tone is flagged ``no_tone``.
    """
    if run_on.seed != run_off.seed:
        raise ValueError(f"seed mismatch: FF-on {run_on.seed} vs FF-off {run_off.seed}")
    on = _tone_reading(run_on, f, rbw)
    off = _tone_reading(run_off, f, rbw)
    flags = []
    if on.floor_limited:
        flags.append("floor_limited")
    if off.floor_limited:
        flags.append("no_tone")
    return Suppression(off.dbc - on.dbc, on, off, tuple(flags))


class OracleValue(NamedTuple):
    db: float
    clamped: bool


def oracle_residual(g_ff, delta_tau, theta_e, H_ff, f):
    """Linearized residual transfer ``1 - g cos(theta) H e^{-i 2 pi f dtau}``."""
    return 1 - g_ff * np.cos(theta_e) * H_ff * np.exp(-2j * np.pi * f * delta_tau)


def oracle_point(g_ff, delta_tau, theta_e, H_ff=1.0, f=0.0, floor: float = ORACLE_FLOOR_DB) -> OracleValue:
    r = abs(complex(oracle_residual(g_ff, delta_tau, theta_e, H_ff, f)))
    if r <= 10 ** (-floor / 20):
        return OracleValue(floor, True)
    return OracleValue(-20 * math.log10(r), False)


def analytic_suppression(g_ff, delta_tau, theta_e, H_ff=1.0, f=0.0, floor: float = ORACLE_FLOOR_DB) -> float:
    """Predicted tone suppression in dB, clamped to ``floor``.

    The DC part of a quadrature error is a static output phase offset and
    does not enter; only the ``cos(theta_e)`` gain loss does.
    """
    return oracle_point(g_ff, delta_tau, theta_e, H_ff, f, floor).db


@dataclass(frozen=True)
class SuppressionEntry:
    frequency: float
    measured_db: float
    oracle_db: float
    flags: tuple[str, ...] = ()


@dataclass
class SuppressionReport:
    entries: list[SuppressionEntry] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([e.frequency for e in self.entries])

    @property
    def measured(self) -> np.ndarray:
        return np.array([e.measured_db for e in self.entries])

    @property
    def oracle(self) -> np.ndarray:
        return np.array([e.oracle_db for e in self.entries])

    @property
    def flagged(self) -> list[SuppressionEntry]:
        return [e for e in self.entries if e.flags]

    def at(self, f: float) -> SuppressionEntry:
        return min(self.entries, key=lambda e: abs(e.frequency - f))
