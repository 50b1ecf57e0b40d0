"""End-to-end OPL feedforward chain.

Execution order inside :func:`run_scenario`:

1. Free-running slave/reference phase noise plus injected tones.
2. OPLL closed on the beat phase (sample-exact difference equation).
3. Per control block: beat amplitude from the VOA setting, LO2 mixing,
   LP2 offset sensing and RF power detection, then one update of the
   amplitude and quadrature loops. Block parameters are held constant.
4. Feedforward branch on the whole mixer trace: roll-off high-passes,
   LP1, amplifier P, delay alignment against the optical delay line, EOM2.

Only the relative timing ``ff_delay - optical_delay`` shapes the output
spectrum, so the common part of the two delays is carried as a time
offset of the output trace instead of being interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import functools
import logging
import math

import numpy as np

from .blocks import (
    FIBER_DELAY_PER_M,
    ActuatorSpec,
    BasebandBeat,
    FractionalDelay,
    LtiFilter,
    LtiFilterSpec,
    PowerDetector,
    RippleFilter,
    SignalTrace,
    Voa,
    beat_amplitude,
)
from .loops import (
    AmplitudeLoop,
    AmplitudeLoopConfig,
    Opll,
    OpllConfig,
    QuadratureLoop,
    QuadratureLoopConfig,
)
from .analysis import SuppressionEntry, SuppressionReport, analytic_suppression, small_angle_gain, suppression_at
from .noise import NoiseConfig, PhaseTrace, ToneSpec, synth_phase_noise, tone_samples

log = logging.getLogger(__name__)


class EngineAbort(RuntimeError):
    """A scenario diverged (unstable loop) and was stopped."""


@dataclass(frozen=True)
class ChainConfig:
    """Every parameter of the OPL feedforward topology.

    Gains follow the beat-signal model: ``A_beat = G_PD*E1*E2*a/2`` with
    VOA transmission ``a``, ``A_error = A_beat*G_mixer/2`` and
    ``g_ff = G_amp*G_EOM*A_error``.
    """

    sample_rate: float = 50e6
    delta_omega: float = 240e6
    lo1_frequency: float = 30e6
    pd_bandwidth: float = 400e6

    E1: float = 1.0
    E2: float = 1.0
    G_PD: float = 1.0
    voa_attenuation: float = 0.8
    voa_slew_rate: float = 100.0
    beat_amplitude_noise: float = 0.0

    G_mixer: float = 0.5
    G_amp: float = 4.0 / math.pi / 0.1
    G_EOM: float = math.pi / 4.0
    lo2_phase: float = 0.0
    lo2_path_delay: float = 0.0
    include_image: bool = False

    lp1: LtiFilterSpec = field(default_factory=lambda: LtiFilterSpec("butterworth_lowpass", 7, 70e6))
    lp2: LtiFilterSpec = field(default_factory=lambda: LtiFilterSpec("butterworth_lowpass", 2, 8e3))
    pd_highpass: float = 150.0
    mixer_highpass: float = 50.0
    amp_ripple: tuple[tuple[float, float], ...] = ((0.0, 0.0), (2e6, 0.0), (10e6, 0.09))
    offset_gain: tuple[tuple[float, float], ...] = ()

    ff_delay: float = 34.6e-9
    optical_delay: float = 7 * FIBER_DELAY_PER_M
    fiber_delay_per_m: float = FIBER_DELAY_PER_M
    fd_taps: int = 32

    opll: OpllConfig = field(default_factory=OpllConfig)
    amplitude_loop: AmplitudeLoopConfig = field(default_factory=AmplitudeLoopConfig)
    quadrature_loop: QuadratureLoopConfig = field(default_factory=QuadratureLoopConfig)
    enable_feedforward: bool = True

    def __post_init__(self):
        for name in ("amp_ripple", "offset_gain"):
            table = tuple((float(f), float(v)) for f, v in getattr(self, name))
            object.__setattr__(self, name, table)
        if not self.delta_omega > 0:
            raise ValueError(f"delta_omega must be > 0, got {self.delta_omega}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        if self.delta_omega > self.pd_bandwidth:
            raise ValueError(
                f"delta_omega {self.delta_omega:g} Hz exceeds the PD bandwidth {self.pd_bandwidth:g} Hz"
            )
        if not 0.0 <= self.voa_attenuation <= 1.0:
            raise ValueError(f"voa_attenuation must be in [0, 1], got {self.voa_attenuation}")
        if self.ff_delay < 0 or self.optical_delay < 0:
            raise ValueError("delays must be >= 0")
        for name in ("pd_highpass", "mixer_highpass"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        offs = [f for f, _ in self.offset_gain]
        if any(b <= a for a, b in zip(offs, offs[1:])):
            raise ValueError("offset_gain frequencies must be strictly increasing")
        ActuatorSpec(self.G_EOM, self.G_amp, self.G_mixer, self.amp_ripple)

    @property
    def actuator(self) -> ActuatorSpec:
        return ActuatorSpec(self.G_EOM, self.G_amp, self.G_mixer, self.amp_ripple)

    @property
    def delta_tau(self) -> float:
        """Timing mismatch of the feedforward correction (s)."""
        return self.ff_delay - self.optical_delay

    @property
    def lo2_frequency(self) -> float:
        return self.delta_omega

    def offset_gain_factor(self, delta_omega: float | None = None) -> float:
        if not self.offset_gain:
            return 1.0
        f, db = np.array(self.offset_gain).T
        return float(10.0 ** (np.interp(self.delta_omega if delta_omega is None else delta_omega, f, db) / 20.0))

    def a_beat(self, attenuation: float | None = None) -> float:
        a = self.voa_attenuation if attenuation is None else attenuation
        return beat_amplitude(self.E1, self.E2 * a, self.G_PD)

    def a_error(self, attenuation: float | None = None) -> float:
        return 0.5 * self.a_beat(attenuation) * self.G_mixer * self.offset_gain_factor()

    def theta_e(self) -> float:
        """Static demodulation phase error before quadrature correction."""
        return self.lo2_phase + 2 * math.pi * self.lo2_frequency * self.lo2_path_delay

    def g_ff(self, attenuation: float | None = None) -> float:
        return self.G_amp * self.G_EOM * self.a_error(attenuation)

    def lp1_realized(self) -> bool:
        return self.lp1.cutoff < 0.5 * self.sample_rate

    def highpass_specs(self) -> list[LtiFilterSpec]:
        return [
            LtiFilterSpec("butterworth_highpass", 1, fc)
            for fc in (self.pd_highpass, self.mixer_highpass)
            if fc > 0
        ]

    def ff_response(self, f) -> np.ndarray:
        """Analog frequency response of the feedforward electronics at ``f``.

        Roll-off high-passes, LP1 (when resolvable at this sample rate) and
        the amplifier ripple; flat gains and delays are excluded.
        """
        f = np.atleast_1d(np.asarray(f, dtype=float))
        h = np.ones(f.shape, dtype=complex)
        for spec in self.highpass_specs():
            h *= spec.analog_response(f)
        if self.lp1_realized():
            h *= self.lp1.analog_response(f)
        return h * self.actuator.ripple_gain(f)

    def ideal(self) -> "ChainConfig":
        """Same chain with flat, loss-free feedforward electronics."""
        return replace(self, pd_highpass=0.0, mixer_highpass=0.0, amp_ripple=(), offset_gain=())

    def with_g_ff(self, g: float) -> "ChainConfig":
        """Rescale ``G_amp`` so the nominal feedforward gain equals ``g``."""
        return replace(self, G_amp=g / (self.G_EOM * self.a_error()))


# --- drift -----------------------------------------------------------------

MULTIPLICATIVE_TARGETS = ("E1", "E2", "G_PD", "G_mixer", "G_amp")
ADDITIVE_TARGETS = ("lo2_phase", "ff_delay", "optical_delay", "beat_power_db")
DRIFT_TARGETS = MULTIPLICATIVE_TARGETS + ADDITIVE_TARGETS


@dataclass(frozen=True)
class DriftProfile:
    """Piecewise-linear drift of one chain parameter.

    Gains drift as multipliers, phases and delays as additive offsets.
    ``beat_power_db`` is a convenience target: a beat-power offset in dB
    applied through the slave field ``E2``.
    """

    target: str
    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.target not in DRIFT_TARGETS:
            raise ValueError(f"unknown drift target {self.target!r}; expected one of {DRIFT_TARGETS}")
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("drift profile needs matching, non-empty times and values")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("drift profile times must be strictly increasing")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("drift profile values must be finite")

    @property
    def multiplicative(self) -> bool:
        return self.target in MULTIPLICATIVE_TARGETS

    def value_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))


def drift_values(cfg: ChainConfig, profiles, t: float) -> dict[str, float]:
    """Drifted values of the parameters touched by ``profiles`` at time ``t``."""
    out: dict[str, float] = {}
    for p in profiles:
        v = p.value_at(t)
        if p.target == "beat_power_db":
            name, v, mult = "E2", 10.0 ** (v / 20.0), True
        else:
            name, mult = p.target, p.multiplicative
        base = out.get(name, getattr(cfg, name))
        out[name] = base * v if mult else base + v
    return out


def drifted(cfg: ChainConfig, profiles, t: float) -> ChainConfig:
    """Chain parameters at time ``t`` under ``profiles``."""
    if not profiles:
        return cfg
    return replace(cfg, **drift_values(cfg, profiles, t))


# --- results ---------------------------------------------------------------

@dataclass
class LoopState:
    """Hand-over state of the slow stabilization loops."""

    attenuation: float
    amp_integrator: float
    amp_setpoint: float | None
    theta_correction: float


@dataclass(eq=False)
class RunResult:
    """Outputs of one scenario run.

    ``output`` is the slave phase after EOM2 relative to the reference;
    ``residual`` is the post-OPLL phase seen by the beat detector. Samples
    before ``startup`` are settling transients and excluded from analysis.
    """

    config: ChainConfig
    noise: NoiseConfig
    seed: int
    output: PhaseTrace
    residual: PhaseTrace
    startup: int
    telemetry: dict
    final_state: LoopState
    beat: BasebandBeat | None = None
    v_error: SignalTrace | None = None
    drive: SignalTrace | None = None

    def output_beat(self) -> BasebandBeat:
        """Unit-amplitude beat of the output against the reference."""
        phi = self.output.samples[self.startup:]
        rate = self.output.sample_rate
        return BasebandBeat(np.exp(1j * phi), rate, self.output.t0 + self.startup / rate)

    def residual_beat(self) -> BasebandBeat:
        phi = self.residual.samples[self.startup:]
        rate = self.residual.sample_rate
        return BasebandBeat(np.exp(1j * phi), rate, self.residual.t0 + self.startup / rate)

    @property
    def mean_theta_e(self) -> float:
        return float(np.mean(self.telemetry["theta_e"]))

    @property
    def mean_attenuation(self) -> float:
        return float(np.mean(self.telemetry["attenuation"]))


# --- upstream: noise + OPLL ------------------------------------------------

def _child_seeds(seed: int, k: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(k)]


def _free_running(noise: NoiseConfig, n: int, rate: float, seed: int, t_start: float) -> np.ndarray:
    n_fft = 1 << max(1, (n - 1).bit_length())
    s_sla, s_ref = _child_seeds(seed, 2)
    x = np.zeros(n)
    if not noise.slave.is_zero:
        x += synth_phase_noise(noise.slave, n_fft, rate, s_sla).samples[:n]
    if not noise.reference.is_zero:
        x -= synth_phase_noise(noise.reference, n_fft, rate, s_ref).samples[:n]
    x -= x[0]
    if noise.tone_injection == "slave":
        _add_tones(x, noise, rate, t_start)
    return x


def _add_tones(x, noise, rate, t_start):
    if noise.tones:
        t = t_start + np.arange(x.size) / rate
        for tone in noise.tones:
            if tone.frequency >= 0.5 * rate:
                raise ValueError(f"tone at {tone.frequency:g} Hz is not below Nyquist")
            x += tone_samples(tone, t)


@functools.lru_cache(maxsize=4)
def _residual_cached(rate, opll_cfg, noise, n, seed, t_start):
    return _residual(rate, opll_cfg, noise, n, seed, t_start)


def _residual(rate, opll_cfg, noise, n, seed, t_start):
    free = _free_running(noise, n, rate, seed, t_start)
    opll = Opll(opll_cfg, rate)
    r = opll.run(free)
    if noise.tone_injection == "residual":
        _add_tones(r, noise, rate, t_start)
    if not np.all(np.isfinite(r)) or np.max(np.abs(r)) > 1e3:
        raise EngineAbort(
            f"OPLL diverged (phase margin {opll.phase_margin:.1f} deg, "
            f"peak residual {np.nanmax(np.abs(r)):.3g} rad)"
        )
    r.flags.writeable = False
    return r


def residual_phase(cfg: ChainConfig, noise: NoiseConfig, n: int, seed: int, t_start: float = 0.0) -> np.ndarray:
    """Post-OPLL residual phase; identical inputs give the identical array."""
    if n <= 1 << 21:
        return _residual_cached(cfg.sample_rate, cfg.opll, noise, n, seed, t_start)
    return _residual(cfg.sample_rate, cfg.opll, noise, n, seed, t_start)


def opll_settling(cfg: ChainConfig) -> float:
    corners = [cfg.opll.unity_gain] + [f for _, f in cfg.opll.loop_shape]
    return 10.0 / min(corners) + cfg.opll.loop_delay if cfg.opll.enabled else 0.0


def _aligned_lines(dtau: float, taps: int) -> tuple[FractionalDelay, FractionalDelay]:
    """Delay lines whose outputs differ by exactly ``dtau`` samples.

    Only the line with a fractional delay carries interpolator lookahead,
    so the other one is padded with the same number of whole samples.
    """
    d = FractionalDelay(max(dtau, 0.0), taps)
    p = FractionalDelay(max(-dtau, 0.0), taps)
    la = max(d.lookahead, p.lookahead)
    if d.lookahead < la:
        d = FractionalDelay(max(dtau, 0.0) + la, taps)
    if p.lookahead < la:
        p = FractionalDelay(max(-dtau, 0.0) + la, taps)
    return d, p


# --- scenario --------------------------------------------------------------

def _block_length(cfg: ChainConfig, n: int) -> int:
    intervals = []
    if cfg.amplitude_loop.enabled:
        intervals.append(cfg.amplitude_loop.pid.sample_interval)
    if cfg.quadrature_loop.enabled:
        intervals.append(cfg.quadrature_loop.pid.sample_interval)
    if not intervals:
        return n
    return max(1, int(round(min(intervals) * cfg.sample_rate)))


def run_scenario(
    cfg: ChainConfig,
    noise: NoiseConfig,
    duration: float,
    seed: int,
    *,
    record: bool = True,
    state: LoopState | None = None,
    profiles=(),
    t_start: float = 0.0,
) -> RunResult:
    """Simulate the chain for ``duration`` seconds.

    Parameters
    ----------
    cfg, noise
        Chain parameters and upstream perturbations.
    duration : float
        Simulated time in seconds.
    seed : int
        Seed for every stochastic source; equal seeds give bit-identical runs.
    record : bool
        Keep the beat, mixer output and EOM drive traces.
    state : LoopState, optional
        Initial state of the slow loops (default: nominal, setpoints
        captured at engagement).
    profiles : sequence of DriftProfile
        Parameter drifts, evaluated at each control block.
    t_start : float
        Absolute time of the first sample, for drift and tone phases.
    """
    rate = cfg.sample_rate
    n = int(round(duration * rate))
    if n < 64:
        raise ValueError(f"duration {duration:g} s gives only {n} samples")
    phi_r = residual_phase(cfg, noise, n, seed, t_start)

    # Slow loops, block by block.
    base = drifted(cfg, profiles, t_start)
    if state is None:
        state = LoopState(cfg.voa_attenuation, 20 * math.log10(max(cfg.voa_attenuation, 1e-12)), None, 0.0)
    voa = Voa(state.attenuation, cfg.voa_slew_rate)
    amp = AmplitudeLoop(cfg.amplitude_loop, state.attenuation)
    amp.pid.integrator = state.amp_integrator
    amp.setpoint = state.amp_setpoint
    quad = QuadratureLoop(cfg.quadrature_loop, state.theta_correction)
    lp2 = LtiFilter(cfg.lp2, rate)
    detector = PowerDetector(cfg.amplitude_loop.detector, rate)

    amp_every = max(1, int(round(cfg.amplitude_loop.pid.sample_interval * rate)))
    quad_every = max(1, int(round(cfg.quadrature_loop.pid.sample_interval * rate)))
    block = _block_length(cfg, n)
    n_blocks = -(-n // block)
    amp_noise = None
    if cfg.beat_amplitude_noise > 0:
        rng = np.random.default_rng(_child_seeds(seed, 3)[2])
        amp_noise = 1.0 + cfg.beat_amplitude_noise * rng.standard_normal(n)

    v_mix = np.empty(n)
    beat = np.empty(n, dtype=complex) if record else None
    gain_scale = np.empty(n_blocks)
    tel = {k: np.empty(n_blocks) for k in ("time", "attenuation", "a_beat", "theta_e", "dc_offset", "power_reading")}

    for b in range(n_blocks):
        s, e = b * block, min((b + 1) * block, n)
        t_b = t_start + s / rate
        p = drifted(cfg, profiles, t_b) if profiles else base
        a_beat = beat_amplitude(p.E1, p.E2 * voa.attenuation, p.G_PD)
        theta = p.theta_e() + quad.correction
        g_mix = p.G_mixer * cfg.offset_gain_factor()
        amp_b = a_beat if amp_noise is None else a_beat * amp_noise[s:e]
        v = 0.5 * g_mix * amp_b * np.sin(phi_r[s:e] + theta)
        v_mix[s:e] = v
        if record:
            beat[s:e] = amp_b * np.exp(1j * phi_r[s:e])
        if b == 0:
            lp2.reset(0.5 * g_mix * a_beat * math.sin(theta))
            detector.reset(a_beat**2)
        dc = lp2.process(v)[-1]
        reading = detector.process(np.broadcast_to(amp_b, (e - s,)) if amp_noise is None else amp_b)[-1]
        gain_scale[b] = p.G_amp / cfg.G_amp
        tel["time"][b] = t_b
        tel["attenuation"][b] = voa.attenuation
        tel["a_beat"][b] = a_beat
        tel["theta_e"][b] = theta
        tel["dc_offset"][b] = dc
        tel["power_reading"][b] = reading
        if e == s + block or e == n:
            if cfg.quadrature_loop.enabled and e % quad_every == 0:
                quad.step(dc)
            if cfg.amplitude_loop.enabled and e % amp_every == 0:
                voa.command(amp.step(reading), cfg.amplitude_loop.pid.sample_interval)

    final = LoopState(voa.attenuation, amp.pid.integrator, amp.setpoint, quad.correction)

    # Feedforward branch.
    taps = cfg.fd_taps
    dtau = (base.ff_delay - base.optical_delay) * rate
    settle = int(math.ceil(opll_settling(cfg) * rate)) + taps + int(math.ceil(abs(dtau)))
    drive = None
    if cfg.enable_feedforward:
        x = v_mix
        for spec in cfg.highpass_specs() + ([cfg.lp1] if cfg.lp1_realized() else []):
            flt = LtiFilter(spec, rate)
            flt.reset(x[0])
            x = flt.process(x)
        x = cfg.G_amp * x * np.repeat(gain_scale, block)[:n]
        if cfg.amp_ripple:
            x = RippleFilter(cfg.amp_ripple, rate).process(x)
        drive_line, phase_line = _aligned_lines(dtau, taps)
        drive_line.reset(x[0])
        phase_line.reset(phi_r[0])
        drive_d = drive_line.process(x)
        phi_o = phase_line.process(phi_r)
        out = phi_o - cfg.G_EOM * drive_d
        # Output sample n carries the optical phase of residual sample n - total.
        t0 = t_start + base.optical_delay - phase_line.total_delay / rate
        drive = SignalTrace(x, rate, t_start, settle)
    else:
        out = np.array(phi_r)
        t0 = t_start + base.optical_delay
    if not np.all(np.isfinite(out)):
        raise EngineAbort("feedforward output is not finite")

    startup = min(settle, n // 2)
    return RunResult(
        config=cfg,
        noise=noise,
        seed=seed,
        output=PhaseTrace(out, rate, t0),
        residual=PhaseTrace(np.asarray(phi_r), rate, t_start),
        startup=startup,
        telemetry=tel,
        final_state=final,
        beat=BasebandBeat(beat, rate, t_start, startup) if record else None,
        v_error=SignalTrace(v_mix, rate, t_start, startup) if record else None,
        drive=drive if record else None,
    )


def with_tone(noise: NoiseConfig, frequency: float, beta: float, phase: float = 0.0) -> NoiseConfig:
    return noise.with_tones(*noise.tones, ToneSpec(frequency, beta, phase))


def retune_offset(cfg: ChainConfig, new_delta_omega: float) -> ChainConfig:
    """Move the beat offset; LO1 and LO2 scale with it, flat parts stay."""
    if not new_delta_omega > 0:
        raise ValueError(f"offset must be > 0, got {new_delta_omega}")
    if new_delta_omega > cfg.pd_bandwidth:
        raise ValueError(
            f"offset {new_delta_omega:g} Hz exceeds the PD bandwidth {cfg.pd_bandwidth:g} Hz"
        )
    if new_delta_omega == cfg.delta_omega:
        return cfg
    k = new_delta_omega / cfg.delta_omega
    return replace(cfg, delta_omega=new_delta_omega, lo1_frequency=cfg.lo1_frequency * k)


# --- scenarios built on run_scenario ---------------------------------------

def default_rbw(f: float, rbw: float) -> float:
    """RBW that keeps a tone at ``f`` at least 8 bins away from the carrier."""
    return min(rbw, f / 8.0)


def default_duration(cfg: ChainConfig, rbw: float, averages: int = 16) -> float:
    nper = 1.5 * cfg.sample_rate / rbw
    return opll_settling(cfg) + 2e-6 + (averages + 1) * nper / 2 / cfg.sample_rate


def oracle_for(run: RunResult, f: float, *, use_kappa: bool = True) -> float:
    """Linear-oracle suppression for the static parameters realized in ``run``."""
    cfg = run.config
    a_err = 0.5 * cfg.G_mixer * cfg.offset_gain_factor() * float(np.mean(run.telemetry["a_beat"]))
    g = cfg.G_amp * cfg.G_EOM * a_err
    if use_kappa:
        g *= small_angle_gain(run.residual.samples[run.startup:], f, cfg.sample_rate)
    h = complex(cfg.ff_response(f)[0])
    return analytic_suppression(g, cfg.delta_tau, run.mean_theta_e, h, f)


def _sweep_point(cfg, noise, f, beta, seed, duration, rbw):
    r = default_rbw(f, rbw)
    dur = duration if duration is not None else default_duration(cfg, r)
    nz = with_tone(noise, f, beta)
    on = run_scenario(replace(cfg, enable_feedforward=True), nz, dur, seed, record=False)
    off = run_scenario(replace(cfg, enable_feedforward=False), nz, dur, seed, record=False)
    s = suppression_at(on, off, f, r)
    return SuppressionEntry(float(f), float(s.value), float(oracle_for(on, f)), s.flags)


def sweep_tone(
    cfg: ChainConfig,
    noise: NoiseConfig,
    frequencies,
    beta: float,
    seed: int,
    *,
    off_seed: int | None = None,
    duration: float | None = None,
    rbw: float = 100.0,
    workers: int = 1,
) -> SuppressionReport:
    """Tone suppression at each frequency, FF on versus FF off.

    Both runs of a point share ``seed``; passing a different ``off_seed``
    is an error. Points are independent and may run in ``workers``
    processes.
    """
    if off_seed is not None and off_seed != seed:
        raise ValueError(f"FF-on and FF-off runs must share a seed ({seed} != {off_seed})")
    freqs = [float(f) for f in frequencies]
    for f in freqs:
        if not 0 < f < 0.5 * cfg.sample_rate:
            raise ValueError(f"tone frequency {f:g} Hz outside (0, Nyquist)")
    args = [(cfg, noise, f, beta, seed, duration, rbw) for f in freqs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            entries = list(pool.map(_sweep_point, *zip(*args)))
    else:
        entries = [_sweep_point(*a) for a in args]
    return SuppressionReport(entries, {"beta": beta, "seed": seed, "rbw": rbw})


@dataclass
class DriftResult:
    times: np.ndarray
    suppression: np.ndarray
    flags: list[tuple[str, ...]]
    attenuation: np.ndarray
    theta_e: np.ndarray
    tone_frequency: float


def slow_loop_states(cfg: ChainConfig, profiles, checkpoints) -> list[LoopState]:
    """Loop states at each checkpoint from a quasi-static replay of the slow loops.

    Between checkpoints only the 1 ms loop updates are simulated: the
    detector and LP2 settle in well under one update interval, so they
    are evaluated at their steady-state values for the current parameters.
    """
    amp = AmplitudeLoop(cfg.amplitude_loop, cfg.voa_attenuation)
    quad = QuadratureLoop(cfg.quadrature_loop)
    voa = Voa(cfg.voa_attenuation, cfg.voa_slew_rate)
    dt = min(cfg.amplitude_loop.pid.sample_interval, cfg.quadrature_loop.pid.sample_interval)
    amp_every = max(1, int(round(cfg.amplitude_loop.pid.sample_interval / dt)))
    quad_every = max(1, int(round(cfg.quadrature_loop.pid.sample_interval / dt)))
    det = cfg.amplitude_loop.detector
    states, k, t = [], 0, 0.0
    g = {name: getattr(cfg, name) for name in ("E1", "E2", "G_PD", "G_mixer")}
    theta0 = cfg.theta_e()
    for tc in sorted(checkpoints):
        while t < tc - 1e-12:
            p = {**g, **drift_values(cfg, profiles, t)}
            a_beat = beat_amplitude(p["E1"], p["E2"] * voa.attenuation, p["G_PD"])
            k += 1
            if cfg.quadrature_loop.enabled and k % quad_every == 0:
                theta = theta0 + p.get("lo2_phase", cfg.lo2_phase) - cfg.lo2_phase + quad.correction
                quad.step(0.5 * p["G_mixer"] * cfg.offset_gain_factor() * a_beat * math.sin(theta))
            if cfg.amplitude_loop.enabled and k % amp_every == 0:
                voa.command(amp.step(float(det.reading(a_beat**2))), cfg.amplitude_loop.pid.sample_interval)
            t = k * dt
        states.append(LoopState(voa.attenuation, amp.pid.integrator, amp.setpoint, quad.correction))
    return states


def drift_run(
    cfg: ChainConfig,
    noise: NoiseConfig,
    profiles,
    checkpoints,
    seed: int,
    *,
    tone_frequency: float = 1e6,
    beta: float = 0.1,
    window: float = 20e-3,
    rbw: float = 500.0,
) -> DriftResult:
    """Suppression of a fixed tone at each checkpoint while parameters drift.

    The slow loops are replayed over the full timeline; at each checkpoint
    a short window is simulated at full rate, starting from the replayed
    loop state, with FF on and off.
    """
    checkpoints = sorted(float(c) for c in checkpoints)
    states = slow_loop_states(cfg, profiles, checkpoints)
    nz = with_tone(noise, tone_frequency, beta)
    sup, flags, att, th = [], [], [], []
    for tc, st in zip(checkpoints, states):
        on = run_scenario(replace(cfg, enable_feedforward=True), nz, window, seed,
                          record=False, state=st, profiles=profiles, t_start=tc)
        off = run_scenario(replace(cfg, enable_feedforward=False), nz, window, seed,
                           record=False, state=st, profiles=profiles, t_start=tc)
        s = suppression_at(on, off, tone_frequency, rbw)
        sup.append(s.value)
        flags.append(s.flags)
        att.append(on.mean_attenuation)
        th.append(on.mean_theta_e)
    return DriftResult(np.array(checkpoints), np.array(sup), flags, np.array(att), np.array(th), tone_frequency)
