"""Feedback loops: OPLL, beat-amplitude stabilization, LO2 quadrature lock."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy import optimize
from scipy import signal as sps

from .blocks import DetectorSpec


class ServoStabilityWarning(UserWarning):
    """Loop configured with too little phase margin."""


MIN_PHASE_MARGIN_DEG = 15.0


@dataclass(frozen=True)
class PidConfig:
    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    sample_interval: float = 1e-3
    output_limits: tuple[float, float] = (-math.inf, math.inf)
    latency: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "output_limits", tuple(float(v) for v in self.output_limits))
        if not self.sample_interval > 0:
            raise ValueError(f"sample_interval must be > 0, got {self.sample_interval}")
        lo, hi = self.output_limits
        if not lo < hi:
            raise ValueError(f"output_limits must satisfy min < max, got {self.output_limits}")
        if self.latency < 0:
            raise ValueError(f"latency must be >= 0, got {self.latency}")

    @property
    def latency_steps(self) -> int:
        return int(round(self.latency / self.sample_interval))


class Pid:
    """Discrete PID with clamping anti-windup and an output latency FIFO.

    The integrator is advanced before the output is formed, so a pure
    integral controller fed a constant error ``e`` outputs ``ki*e*dt``,
    ``2*ki*e*dt``, ... until it reaches a limit. Integration stops where
    the output saturates, so the state never winds up past the limit.
    """

    def __init__(self, cfg: PidConfig, integrator: float = 0.0):
        self.cfg = cfg
        self.integrator = float(integrator)
        self.prev_error: float | None = None
        self._fifo = deque([self._clamp(integrator)] * cfg.latency_steps)

    def _clamp(self, u):
        lo, hi = self.cfg.output_limits
        return min(max(u, lo), hi)

    def step(self, error: float) -> float:
        c = self.cfg
        dt = c.sample_interval
        d = 0.0 if self.prev_error is None or c.kd == 0 else c.kd * (error - self.prev_error) / dt
        self.prev_error = error
        p = c.kp * error + d
        trial = self.integrator + c.ki * error * dt
        lo, hi = c.output_limits
        # Integrate only up to the point where the output saturates.
        if c.ki * error > 0 and p + trial > hi:
            trial = max(self.integrator, hi - p)
        elif c.ki * error < 0 and p + trial < lo:
            trial = min(self.integrator, lo - p)
        self.integrator = trial
        u = self._clamp(p + trial)
        if c.latency_steps:
            self._fifo.append(u)
            return self._fifo.popleft()
        return u


# --- OPLL ------------------------------------------------------------------

CORNER_KINDS = ("integrator", "pole", "zero")


@dataclass(frozen=True)
class OpllConfig:
    """Open-loop shape of the optical phase-locked loop.

    ``L(f) = K / (i f) * prod(corners) * exp(-2 pi i f loop_delay)`` with
    corners ``("integrator", fz) -> 1 + fz/(i f)``,
    ``("pole", fp) -> 1 / (1 + i f/fp)`` and ``("zero", fz) -> 1 + i f/fz``.
    ``K`` is fixed by ``|L(unity_gain)| = 1``.
    """

    unity_gain: float = 1.8e6
    loop_shape: tuple[tuple[str, float], ...] = (("integrator", 100e3), ("pole", 5e6))
    loop_delay: float = 40e-9
    enabled: bool = True

    def __post_init__(self):
        shape = tuple((str(k), float(f)) for k, f in self.loop_shape)
        object.__setattr__(self, "loop_shape", shape)
        if not self.unity_gain > 0:
            raise ValueError(f"unity_gain must be > 0, got {self.unity_gain}")
        if self.loop_delay < 0:
            raise ValueError(f"loop_delay must be >= 0, got {self.loop_delay}")
        for kind, f in shape:
            if kind not in CORNER_KINDS:
                raise ValueError(f"unknown loop corner {kind!r}; expected one of {CORNER_KINDS}")
            if not f > 0:
                raise ValueError(f"corner frequency must be > 0, got {f}")

    def _shape(self, f):
        f = np.asarray(f, dtype=float)
        h = 1.0 / (1j * f)
        for kind, fc in self.loop_shape:
            if kind == "integrator":
                h = h * (1 + fc / (1j * f))
            elif kind == "pole":
                h = h / (1 + 1j * f / fc)
            else:
                h = h * (1 + 1j * f / fc)
        return h

    @property
    def gain(self) -> float:
        return 1.0 / abs(self._shape(self.unity_gain))

    def open_loop(self, f, loop_delay: float | None = None) -> np.ndarray:
        tau = self.loop_delay if loop_delay is None else loop_delay
        f = np.asarray(f, dtype=float)
        return self.gain * self._shape(f) * np.exp(-2j * np.pi * f * tau)

    def residual_transfer(self, f, loop_delay: float | None = None) -> np.ndarray:
        """Closed-loop transfer from free-running to residual phase."""
        if not self.enabled:
            return np.ones_like(np.asarray(f, dtype=complex))
        return 1.0 / (1.0 + self.open_loop(f, loop_delay))

    def crossover(self) -> float:
        """Frequency where ``|L| = 1``."""
        g = lambda lf: np.log(abs(self.open_loop(10**lf)))
        return 10 ** optimize.brentq(g, math.log10(self.unity_gain) - 3, math.log10(self.unity_gain) + 3)

    def phase_margin(self, loop_delay: float | None = None) -> float:
        """Phase margin in degrees at the unity-gain crossing."""
        tau = self.loop_delay if loop_delay is None else loop_delay
        fc = self.crossover()
        phase = -math.pi / 2 - 2 * math.pi * fc * tau
        for kind, fk in self.loop_shape:
            if kind == "integrator":
                phase -= math.atan(fk / fc)
            elif kind == "pole":
                phase -= math.atan(fc / fk)
            else:
                phase += math.atan(fc / fk)
        return 180.0 + math.degrees(phase)


class Opll:
    """Discrete-time OPLL acting directly on the slave phase.

    The loop filter is the bilinear image of the analog shape (prewarped
    at the unity-gain frequency); the loop delay is a FIFO of whole
    samples, at least one since the correction computed from sample ``n``
    can only reach the slave at sample ``n + 1``.
    """

    def __init__(self, cfg: OpllConfig, sample_rate: float):
        self.cfg = cfg
        self.sample_rate = sample_rate
        self.delay_steps = max(1, int(round(cfg.loop_delay * sample_rate)))
        self.effective_delay = self.delay_steps / sample_rate
        self.b, self.a = self._design()
        pm = cfg.phase_margin(self.effective_delay)
        self.phase_margin = pm
        if cfg.enabled and pm < MIN_PHASE_MARGIN_DEG:
            warnings.warn(
                f"OPLL phase margin {pm:.1f} deg is below {MIN_PHASE_MARGIN_DEG:g} deg; "
                "the servo will oscillate",
                ServoStabilityWarning,
                stacklevel=2,
            )
        self.reset()

    def _design(self):
        cfg = self.cfg
        w = 2 * np.pi
        zeros, poles = [], [0.0]
        k = cfg.gain * w  # K/(i f) = 2 pi K / s
        for kind, fc in cfg.loop_shape:
            if kind == "integrator":
                zeros.append(-w * fc)
                poles.append(0.0)
            elif kind == "pole":
                poles.append(-w * fc)
                k *= w * fc
            else:
                zeros.append(-w * fc)
                k /= w * fc
        fu = cfg.unity_gain
        fs_warp = math.pi * fu / math.tan(math.pi * fu / self.sample_rate)
        zd, pd, kd = sps.bilinear_zpk(zeros, poles, k, fs_warp)
        b, a = sps.zpk2tf(zd, pd, kd)
        return np.real(b), np.real(a)

    def reset(self):
        self._zi = np.zeros(max(self.a.size, self.b.size) - 1)
        # step() output is applied to the next sample, which is one step of the delay.
        self._fifo = deque([0.0] * (self.delay_steps - 1))

    def open_loop_response(self, f) -> np.ndarray:
        """Realized discrete open-loop response at ``f`` (Hz)."""
        _, h = sps.freqz(self.b, self.a, worN=np.atleast_1d(f), fs=self.sample_rate)
        return h * np.exp(-2j * np.pi * np.atleast_1d(f) * self.effective_delay)

    def step(self, phi_error: float) -> float:
        """Consume the phase error of sample ``n``; return the correction for ``n + 1``."""
        y, self._zi = sps.lfilter(self.b, self.a, [phi_error], zi=self._zi)
        self._fifo.append(float(y[0]))
        return self._fifo.popleft()

    def closed_loop(self):
        """(b, a) of the residual transfer ``1 / (1 + z^-d F(z))``."""
        d = self.delay_steps
        num = np.asarray(self.a, dtype=float)
        den = np.zeros(max(num.size, self.b.size + d))
        den[: num.size] += num
        den[d : d + self.b.size] += self.b
        return num, den

    def run(self, phi_free: np.ndarray) -> np.ndarray:
        """Residual phase for a whole free-running trace, from a reset state."""
        if not self.cfg.enabled:
            return np.array(phi_free, dtype=float)
        b, a = self.closed_loop()
        return sps.lfilter(b, a, phi_free)


# --- slow stabilization loops ----------------------------------------------

@dataclass(frozen=True)
class AmplitudeLoopConfig:
    """Beat-amplitude lock: RF log detector -> PI -> VOA.

    The PID works in dB: its error is the detector deviation converted
    with the detector slope, its output the VOA transmission in dB.
    ``setpoint`` of ``None`` captures the first reading after engagement.
    """

    enabled: bool = True
    pid: PidConfig = field(
        default_factory=lambda: PidConfig(kp=0.0, ki=200.0, sample_interval=1e-3, output_limits=(-40.0, 0.0))
    )
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    setpoint: float | None = None


class AmplitudeLoop:
    def __init__(self, cfg: AmplitudeLoopConfig, attenuation: float = 1.0):
        self.cfg = cfg
        a0 = attenuation
        self.pid = Pid(cfg.pid, integrator=20.0 * math.log10(max(a0, 1e-12)))
        self.setpoint = cfg.setpoint
        self.command = a0

    def step(self, power_reading: float, setpoint: float | None = None) -> float:
        """Return the VOA attenuation command after one detector reading."""
        if setpoint is not None:
            self.setpoint = setpoint
        if self.setpoint is None:
            self.setpoint = power_reading
        err_db = (power_reading - self.setpoint) / self.cfg.detector.slope
        att_db = self.pid.step(-err_db)
        self.command = min(max(10.0 ** (att_db / 20.0), 0.0), 1.0)
        return self.command


@dataclass(frozen=True)
class QuadratureLoopConfig:
    """LO2 phase lock nulling the LP2-filtered mixer DC offset.

    Gains are in rad/(V s); the PID error is the negated offset so that a
    positive offset pulls the LO2 phase down.
    """

    enabled: bool = True
    pid: PidConfig = field(
        default_factory=lambda: PidConfig(
            kp=0.0, ki=3000.0, sample_interval=1e-3, output_limits=(-2 * math.pi, 2 * math.pi)
        )
    )


class QuadratureLoop:
    def __init__(self, cfg: QuadratureLoopConfig, correction: float = 0.0):
        self.cfg = cfg
        self.pid = Pid(cfg.pid, integrator=correction)
        self.correction = correction

    def step(self, dc_offset: float) -> float:
        """Return the LO2 phase correction (rad) after one offset reading."""
        self.correction = self.pid.step(-dc_offset)
        return self.correction
