"""Baseband-equivalent signal-chain primitives.

The heterodyne carrier at the offset frequency is factored out: the
photodetected beat is carried as its complex envelope
``A_beat * exp(1j * phi_r)`` and every electrical signal after the mixer
is a real baseband voltage.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy import signal as sps

from .noise import PhaseTrace

FIBER_DELAY_PER_M = 4.90e-9  # s/m, group index ~1.468


@dataclass(frozen=True, eq=False)
class SignalTrace:
    """Real-valued electrical signal in volts.

    ``valid_from``/``valid_to`` bound the region not contaminated by
    start-up or end effects of delays and filters.
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0
    valid_from: int = 0
    valid_to: int | None = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1:
            raise ValueError("signal must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValueError("signal contains non-finite samples")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    def valid(self) -> np.ndarray:
        return self.samples[self.valid_from:self.valid_to]


@dataclass(frozen=True, eq=False)
class BasebandBeat:
    """Complex envelope of the photodetected beat note (volts).

    The magnitude is the beat amplitude and the angle is the residual
    phase of the slave relative to the reference.
    """

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0
    valid_from: int = 0
    valid_to: int | None = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=complex)
        if x.ndim != 1:
            raise ValueError("beat must be one-dimensional")
        if not np.all(np.isfinite(x)):
            raise ValueError("beat contains non-finite samples")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.samples)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.samples)


def beat_amplitude(E1: float, E2: float, G_PD: float) -> float:
    return 0.5 * G_PD * E1 * E2


def beat_detect(
    phi_ref: PhaseTrace, phi_sla: PhaseTrace, E1: float, E2: float, G_PD: float
) -> BasebandBeat:
    """Photodetect the reference/slave beat, carrier factored out."""
    if phi_ref.sample_rate != phi_sla.sample_rate or len(phi_ref) != len(phi_sla):
        raise ValueError("reference and slave traces must share rate and length")
    a = beat_amplitude(E1, E2, G_PD)
    if a < 0:
        raise ValueError("beat amplitude must be non-negative")
    return BasebandBeat(
        a * np.exp(1j * (phi_sla.samples - phi_ref.samples)), phi_sla.sample_rate, phi_sla.t0
    )


def demodulate(
    beat: BasebandBeat,
    theta_e: float,
    G_mixer: float,
    include_image: bool = False,
    carrier_hz: float | None = None,
) -> SignalTrace:
    """Mix the beat with LO2 and return the post-mixer voltage.

    The baseband term is ``A_error * sin(phi_r + theta_e)`` with
    ``A_error = A_beat * G_mixer / 2``. With ``include_image`` the sum
    frequency term at twice the carrier is added; it is only representable
    when ``2 * carrier_hz`` lies below Nyquist.
    """
    a_err = 0.5 * G_mixer * np.abs(beat.samples)
    phi = np.angle(beat.samples)
    out = a_err * np.sin(phi + theta_e)
    if include_image:
        if carrier_hz is None:
            raise ValueError("include_image needs carrier_hz")
        if 2 * carrier_hz >= 0.5 * beat.sample_rate:
            raise ValueError(
                f"image at {2 * carrier_hz:g} Hz is not representable at "
                f"{beat.sample_rate:g} S/s"
            )
        t = beat.t0 + np.arange(len(beat)) / beat.sample_rate
        out = out - a_err * np.sin(4 * np.pi * carrier_hz * t + phi - theta_e)
    return SignalTrace(out, beat.sample_rate, beat.t0, beat.valid_from, beat.valid_to)


# --- LTI filters -----------------------------------------------------------

FILTER_KINDS = ("butterworth_lowpass", "butterworth_highpass")


@dataclass(frozen=True)
class LtiFilterSpec:
    kind: str = "butterworth_lowpass"
    order: int = 1
    cutoff: float = 1e6

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}; expected one of {FILTER_KINDS}")
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"filter order must be an integer >= 1, got {self.order}")
        if not self.cutoff > 0:
            raise ValueError(f"filter cutoff must be > 0, got {self.cutoff}")

    def analog_response(self, f) -> np.ndarray:
        """Response of the analog Butterworth prototype at ``f`` (Hz)."""
        btype = "lowpass" if self.kind == "butterworth_lowpass" else "highpass"
        b, a = sps.butter(self.order, 2 * np.pi * self.cutoff, btype=btype, analog=True)
        _, h = sps.freqs(b, a, worN=2 * np.pi * np.atleast_1d(np.asarray(f, dtype=float)))
        return h


class LtiFilter:
    """Stateful discrete realization of an :class:`LtiFilterSpec`.

    The analog prototype is mapped with the bilinear transform, prewarped
    at the cutoff, so the -3 dB point lands exactly on ``spec.cutoff``.
    Passband gain (DC for lowpass, Nyquist for highpass) is normalized to 1.
    """

    def __init__(self, spec: LtiFilterSpec, sample_rate: float):
        if spec.cutoff >= 0.5 * sample_rate:
            raise ValueError(
                f"cutoff {spec.cutoff:g} Hz is not below Nyquist {0.5 * sample_rate:g} Hz"
            )
        self.spec = spec
        self.sample_rate = sample_rate
        btype = "lowpass" if spec.kind == "butterworth_lowpass" else "highpass"
        sos = sps.butter(spec.order, spec.cutoff, btype=btype, fs=sample_rate, output="sos")
        ref = 0.0 if btype == "lowpass" else 0.5 * sample_rate
        _, h = sps.sosfreqz(sos, worN=[ref], fs=sample_rate)
        sos[0, :3] /= h[0].real
        self.sos = sos
        self._zi = np.zeros((sos.shape[0], 2))

    def reset(self, x0: float = 0.0):
        """Reset to the steady state reached under constant input ``x0``."""
        self._zi = sps.sosfilt_zi(self.sos) * x0

    def process(self, x: np.ndarray) -> np.ndarray:
        y, self._zi = sps.sosfilt(self.sos, x, zi=self._zi)
        return y

    def response(self, f) -> np.ndarray:
        _, h = sps.sosfreqz(self.sos, worN=np.atleast_1d(f), fs=self.sample_rate)
        return h


def lti_filter(sig: SignalTrace, spec: LtiFilterSpec) -> SignalTrace:
    flt = LtiFilter(spec, sig.sample_rate)
    return SignalTrace(flt.process(sig.samples), sig.sample_rate, sig.t0, sig.valid_from, sig.valid_to)


# --- delays ----------------------------------------------------------------

@dataclass(frozen=True)
class DelaySpec:
    delay: float = 0.0

    def __post_init__(self):
        if not self.delay >= 0:
            raise ValueError(f"delay must be >= 0, got {self.delay}")


def fractional_kernel(mu: float, taps: int = 32, beta: float = 8.0) -> np.ndarray:
    """Kaiser-windowed sinc interpolator with delay ``taps//2 - 1 + mu`` samples."""
    half = taps // 2
    t = np.arange(taps) - (half - 1) - mu
    w = np.i0(beta * np.sqrt(np.clip(1.0 - (t / half) ** 2, 0.0, None))) / np.i0(beta)
    h = np.sinc(t) * w
    return h / h.sum()


class FractionalDelay:
    """Causal streaming delay of ``delay_samples + lookahead`` samples.

    The integer part is a sample FIFO. A non-zero fractional part goes
    through a windowed-sinc interpolator whose bulk delay is
    ``lookahead = taps//2 - 1``; callers that need the bare delay must
    compensate for it (see :func:`delay`).
    """

    def __init__(self, delay_samples: float, taps: int = 32, beta: float = 8.0):
        if delay_samples < 0:
            raise ValueError("delay must be >= 0")
        if taps < 4 or taps % 2:
            raise ValueError("taps must be an even number >= 4")
        self.delay_samples = float(delay_samples)
        self.taps = taps
        shift = math.floor(self.delay_samples)
        mu = self.delay_samples - shift
        if mu > 1 - 1e-12:
            shift, mu = shift + 1, 0.0
        if mu < 1e-12:
            self.kernel = None
            self.lookahead = 0
        else:
            self.kernel = fractional_kernel(mu, taps, beta)
            self.lookahead = taps // 2 - 1
        self.shift = shift
        self.reset()

    @property
    def total_delay(self) -> float:
        return self.delay_samples + self.lookahead

    def reset(self, x0: complex = 0.0):
        """Fill the delay line as if ``x0`` had been applied forever."""
        self._fifo = np.full(self.shift, x0, dtype=complex)
        if self.kernel is not None:
            self._zi = sps.lfilter_zi(self.kernel, [1.0]).astype(complex) * x0

    def process(self, x: np.ndarray) -> np.ndarray:
        real = not np.iscomplexobj(x)
        x = np.asarray(x, dtype=complex)
        if self.shift:
            buf = np.concatenate([self._fifo, x])
            self._fifo = buf[buf.size - self.shift:]
            x = buf[: buf.size - self.shift]
        if self.kernel is not None:
            x, self._zi = sps.lfilter(self.kernel, [1.0], x, zi=self._zi)
        return x.real if real else x


def _delay_array(x: np.ndarray, delay_samples: float, taps: int = 32) -> tuple[np.ndarray, int, int]:
    n = x.size
    fd = FractionalDelay(delay_samples, taps)
    if fd.lookahead == 0:
        return fd.process(x), min(fd.shift, n), n
    padded = np.concatenate([x, np.zeros(fd.lookahead, dtype=x.dtype)])
    y = fd.process(padded)[fd.lookahead:]
    half = taps // 2
    return y, min(fd.shift + half, n), max(n - half + 1, 0)


def delay(sig, spec: DelaySpec, taps: int = 32):
    """Delay a :class:`SignalTrace` or :class:`BasebandBeat` by ``spec.delay``.

    Output sample ``n`` approximates the input at ``n - delay * rate``.
    Samples whose interpolation stencil reaches outside the input are
    excluded from the valid region.
    """
    d = spec.delay * sig.sample_rate
    if d == 0:
        return sig
    y, start, stop = _delay_array(sig.samples, d, taps)
    valid_from = max(start, sig.valid_from + math.ceil(d))
    valid_to = stop if sig.valid_to is None else min(stop, sig.valid_to + math.ceil(d))
    return type(sig)(y, sig.sample_rate, sig.t0, valid_from, valid_to)


# --- actuators -------------------------------------------------------------

@dataclass(frozen=True)
class ActuatorSpec:
    """Feedforward amplifier, EOM and mixer gains.

    ``amp_ripple`` lists (frequency Hz, gain deviation dB) points of the
    amplifier response; it is interpolated linearly in dB and held flat
    beyond its ends.
    """

    G_EOM: float = math.pi / 4.0
    G_amp: float = 1.0
    G_mixer: float = 0.5
    amp_ripple: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if not self.G_EOM > 0:
            raise ValueError(f"G_EOM must be > 0, got {self.G_EOM}")
        ripple = tuple((float(f), float(db)) for f, db in self.amp_ripple)
        freqs = [f for f, _ in ripple]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("amp_ripple frequencies must be strictly increasing")
        object.__setattr__(self, "amp_ripple", ripple)

    def ripple_gain(self, f) -> np.ndarray:
        f = np.abs(np.asarray(f, dtype=float))
        if not self.amp_ripple:
            return np.ones_like(f)
        fr, db = np.array(self.amp_ripple).T
        return 10.0 ** (np.interp(f, fr, db) / 20.0)


class RippleFilter:
    """Zero-phase FIR realizing an amplifier gain-ripple table.

    The FIR is linear-phase with odd length; its bulk delay of
    ``(numtaps - 1) / 2`` samples is removed, since the amplifier's real
    latency is carried by the feedforward path delay.
    """

    def __init__(self, ripple: tuple[tuple[float, float], ...], sample_rate: float, numtaps: int = 129):
        if numtaps % 2 == 0:
            raise ValueError("numtaps must be odd")
        spec = ActuatorSpec(amp_ripple=ripple)
        grid = np.linspace(0.0, 0.5 * sample_rate, 513)
        self.taps = sps.firwin2(numtaps, grid, spec.ripple_gain(grid), fs=sample_rate, window="blackman")
        self.sample_rate = sample_rate

    def process(self, x: np.ndarray) -> np.ndarray:
        return sps.oaconvolve(x, self.taps, mode="same")

    def response(self, f) -> np.ndarray:
        f = np.atleast_1d(np.asarray(f, dtype=float))
        n = np.arange(self.taps.size) - (self.taps.size - 1) // 2
        return np.exp(-2j * np.pi * np.outer(f / self.sample_rate, n)) @ self.taps


def amplify(sig: SignalTrace, spec: ActuatorSpec) -> SignalTrace:
    """Flat gain ``G_amp`` plus the optional ripple correction."""
    y = spec.G_amp * sig.samples
    if spec.amp_ripple:
        y = RippleFilter(spec.amp_ripple, sig.sample_rate).process(y)
    return SignalTrace(y, sig.sample_rate, sig.t0, sig.valid_from, sig.valid_to)


def eom_apply(phi: PhaseTrace, drive: SignalTrace, G_EOM: float) -> PhaseTrace:
    """Phase-modulate: ``phi_out = phi_in - G_EOM * V_drive``."""
    if phi.sample_rate != drive.sample_rate or len(phi) != len(drive):
        raise ValueError("phase and drive must share rate and length")
    return PhaseTrace(phi.samples - G_EOM * drive.samples, phi.sample_rate, phi.t0)


# --- beat-amplitude sensing and actuation ----------------------------------

@dataclass(frozen=True)
class DetectorSpec:
    """Logarithmic RF power detector.

    Reading ``intercept + slope * (P_dB - 0)`` with ``P_dB`` the
    low-passed beat power in dB re 1 V^2, floored at ``floor_db``.
    """

    slope: float = -0.025  # V/dB
    intercept: float = 1.0  # V at 0 dB
    floor_db: float = -60.0
    bandwidth: float = 10e3

    def reading(self, power) -> np.ndarray:
        p = np.maximum(np.asarray(power, dtype=float), 10.0 ** (self.floor_db / 10.0))
        return self.intercept + self.slope * 10.0 * np.log10(p)

    def power_db(self, reading) -> np.ndarray:
        return (np.asarray(reading, dtype=float) - self.intercept) / self.slope


class PowerDetector:
    """Streaming log detector: first-order low-pass on |beat|^2, then log."""

    def __init__(self, spec: DetectorSpec, sample_rate: float):
        self.spec = spec
        self._lpf = LtiFilter(LtiFilterSpec("butterworth_lowpass", 1, spec.bandwidth), sample_rate)

    def reset(self, power: float):
        self._lpf.reset(power)

    def process(self, beat_samples: np.ndarray) -> np.ndarray:
        p = self._lpf.process(np.abs(beat_samples) ** 2)
        return self.spec.reading(p)


def rf_power_detect(beat: BasebandBeat, bandwidth: float, detector: DetectorSpec | None = None) -> SignalTrace:
    if detector is None:
        detector = DetectorSpec(bandwidth=bandwidth)
    else:
        detector = DetectorSpec(detector.slope, detector.intercept, detector.floor_db, bandwidth)
    if bandwidth >= 0.5 * beat.sample_rate:
        raise ValueError("detector bandwidth must be well below the sample rate")
    det = PowerDetector(detector, beat.sample_rate)
    return SignalTrace(det.process(beat.samples), beat.sample_rate, beat.t0)


def voa_set(E2: float, attenuation: float) -> float:
    """Transmit the slave field through the VOA (amplitude transmission)."""
    if not 0.0 <= attenuation <= 1.0:
        raise ValueError(f"attenuation must be in [0, 1], got {attenuation}")
    return attenuation * E2


class Voa:
    """Variable optical attenuator with a slew-rate limit (1/s)."""

    def __init__(self, attenuation: float = 1.0, slew_rate: float = math.inf):
        voa_set(1.0, attenuation)
        self.attenuation = float(attenuation)
        self.slew_rate = slew_rate

    def command(self, target: float, dt: float) -> float:
        target = min(max(target, 0.0), 1.0)
        step = self.slew_rate * dt
        self.attenuation += float(np.clip(target - self.attenuation, -step, step))
        return self.attenuation
