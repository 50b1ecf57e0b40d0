"""Phase-noise sources: power-law PSD synthesis and injected test tones.

Phase traces are plain uniformly sampled arrays in radians. Stochastic
noise is produced by shaping white Gaussian noise in the frequency domain,
which gives exact control over the one-sided PSD

    S_phi(f) = sum_k h_k * f**alpha_k      (rad^2/Hz)

inside ``band``. Below ``band[0]`` the PSD is held at its value at
``band[0]``; above ``band[1]`` it is zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import math

import numpy as np


@dataclass(frozen=True)
class NoisePsdSpec:
    """One-sided power-law phase-noise PSD.

    Parameters
    ----------
    segments : tuple of (alpha, h)
        Exponent and coefficient of each power-law term; ``h`` has units
        of rad^2 Hz^(-1-alpha).
    band : (f_min, f_max)
        Frequency range in Hz over which the power law is defined.
    """

    segments: tuple[tuple[float, float], ...] = ()
    band: tuple[float, float] = (10.0, 25e6)

    def __post_init__(self):
        segs = tuple((float(a), float(h)) for a, h in self.segments)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))
        for a, h in segs:
            if not (math.isfinite(a) and math.isfinite(h)):
                raise ValueError(f"non-finite PSD segment ({a}, {h})")
            if h < 0:
                raise ValueError(f"PSD coefficient must be >= 0, got {h}")
        f_min, f_max = self.band
        if not (math.isfinite(f_min) and math.isfinite(f_max)):
            raise ValueError("PSD band must be finite")
        if f_min <= 0 or f_max <= f_min:
            raise ValueError(f"invalid PSD band {self.band}")

    @property
    def is_zero(self) -> bool:
        return all(h == 0 for _, h in self.segments)

    def psd(self, f) -> np.ndarray:
        """Evaluate the requested one-sided PSD (rad^2/Hz), flat below f_min."""
        f = np.asarray(f, dtype=float)
        f_min, f_max = self.band
        fe = np.clip(np.abs(f), f_min, None)
        out = np.zeros_like(fe)
        for a, h in self.segments:
            if h:
                out += h * fe**a
        out[np.abs(f) > f_max] = 0.0
        return out

    def scaled(self, k: float) -> "NoisePsdSpec":
        return NoisePsdSpec(tuple((a, h * k) for a, h in self.segments), self.band)


@dataclass(frozen=True)
class ToneSpec:
    """Sinusoidal phase modulation ``depth * sin(2 pi f t + phase)``."""

    frequency: float
    depth: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.frequency > 0:
            raise ValueError(f"tone frequency must be > 0, got {self.frequency}")
        if self.depth < 0:
            raise ValueError(f"tone depth must be >= 0, got {self.depth}")


@dataclass(frozen=True, eq=False)
class PhaseTrace:
    """Uniformly sampled optical phase deviation (rad)."""

    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("a phase trace needs at least two samples")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("phase trace contains non-finite samples")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def nyquist(self) -> float:
        return 0.5 * self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    def __add__(self, other: "PhaseTrace") -> "PhaseTrace":
        if other.sample_rate != self.sample_rate or len(other) != len(self):
            raise ValueError("cannot add phase traces with different rates or lengths")
        return PhaseTrace(self.samples + other.samples, self.sample_rate, self.t0)


def zero_trace(n: int, rate: float, t0: float = 0.0) -> PhaseTrace:
    return PhaseTrace(np.zeros(n), rate, t0)


def synth_phase_noise(spec: NoisePsdSpec, n: int, rate: float, seed: int) -> PhaseTrace:
    """Draw a Gaussian phase trace whose one-sided PSD is ``spec.psd``.

    Parameters
    ----------
    spec : NoisePsdSpec
        Target PSD. ``spec.band[1]`` must not exceed the Nyquist frequency.
    n : int
        Number of samples, a power of two.
    rate : float
        Sample rate in Hz.
    seed : int
        Seed for ``numpy.random.default_rng``.

    Returns
    -------
    PhaseTrace
        Zero-mean trace. The construction is circular, so the trace is
        periodic with period ``n / rate``.
    """
    if n < 2 or n & (n - 1):
        raise ValueError(f"n must be a power of two >= 2, got {n}")
    if spec.band[1] > 0.5 * rate * (1 + 1e-12):
        raise ValueError(
            f"PSD band upper edge {spec.band[1]:g} Hz exceeds Nyquist {0.5 * rate:g} Hz"
        )
    if spec.is_zero:
        return zero_trace(n, rate)

    rng = np.random.default_rng(seed)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    # E|X_k|^2 = S(f_k) * rate * n / 2 reproduces the one-sided periodogram.
    amp = np.sqrt(spec.psd(freqs) * rate * n / 2.0)
    amp[0] = 0.0
    spectrum = amp * (rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size))
    spectrum /= math.sqrt(2.0)
    # Nyquist bin is real for even n.
    spectrum[-1] = spectrum[-1].real * math.sqrt(2.0)
    x = np.fft.irfft(spectrum, n=n)
    return PhaseTrace(x, rate)


def tone_samples(tone: ToneSpec, times: np.ndarray) -> np.ndarray:
    return tone.depth * np.sin(2 * np.pi * tone.frequency * times + tone.phase)


def inject_tone(trace: PhaseTrace, tone: ToneSpec) -> PhaseTrace:
    """Add ``tone`` to ``trace`` sample by sample."""
    if tone.frequency >= trace.nyquist:
        raise ValueError(
            f"tone at {tone.frequency:g} Hz is not below Nyquist {trace.nyquist:g} Hz"
        )
    if tone.depth == 0:
        return trace
    return PhaseTrace(trace.samples + tone_samples(tone, trace.times), trace.sample_rate, trace.t0)


def lorentzian_slave_spec(
    linewidth: float = 100e3,
    flicker_corner: float = 100e3,
    band: tuple[float, float] = (10.0, 25e6),
) -> NoisePsdSpec:
    """White frequency noise for a Lorentzian FWHM plus a 1/f FM segment.

    A Lorentzian of FWHM ``linewidth`` has flat frequency-noise PSD
    ``linewidth / pi`` (Hz^2/Hz), i.e. ``S_phi = (linewidth/pi) / f**2``.
    The 1/f FM term equals the white term at ``flicker_corner``.
    """
    h_white = linewidth / math.pi
    segments = [(-2.0, h_white)]
    if flicker_corner > 0:
        segments.append((-3.0, h_white * flicker_corner))
    return NoisePsdSpec(tuple(segments), band)


@dataclass(frozen=True)
class NoiseConfig:
    """Everything that perturbs the lasers before the OPLL acts.

    ``tones`` are phase modulations of the slave, like the EOM1 injection
    or intrinsic modulation peaks. With ``tone_injection="residual"`` they
    are added after the OPLL, so the loop does not suppress them (a test
    modulation seen unchanged by the beat detector and the output); with
    ``"slave"`` they enter the free-running phase and are shaped by the loop.
    """

    slave: NoisePsdSpec = field(default_factory=lorentzian_slave_spec)
    reference: NoisePsdSpec = field(default_factory=NoisePsdSpec)
    tones: tuple[ToneSpec, ...] = ()
    tone_injection: str = "residual"

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(self.tones))
        if self.tone_injection not in ("residual", "slave"):
            raise ValueError(f"tone_injection must be 'residual' or 'slave', got {self.tone_injection!r}")

    def with_tones(self, *tones: ToneSpec) -> "NoiseConfig":
        return replace(self, tones=tuple(tones))

    def without_noise(self) -> "NoiseConfig":
        return replace(
            self, slave=NoisePsdSpec(band=self.slave.band), reference=NoisePsdSpec(band=self.reference.band)
        )
