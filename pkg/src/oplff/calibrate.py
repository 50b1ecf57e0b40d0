"""Automated feedforward tuning against an injected test tone.

The procedure follows the bench practice: with a tone injected at 2 MHz,
trim the amplifier gain and the LO2 phase until the tone is cancelled,
pick the delay fiber, then add short cables to the electrical path.
Each measurement is one short engine run with the feedforward engaged;
the tone residual is read by coherent (lock-in) detection.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np
from scipy import optimize

from .analysis import lock_in
from .engine import ChainConfig, run_scenario, with_tone
from .noise import NoiseConfig, ToneSpec

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    """Search did not converge within its evaluation budget."""

    def __init__(self, message: str, best: "CalibrationResult"):
        super().__init__(message)
        self.best = best


@dataclass
class CalibrationResult:
    """Recovered settings and the measurement history that produced them.

    ``g_amp_opt`` is the amplifier gain, ``theta_opt`` the LO2 phase
    setting, ``delay_opt`` the electrical-path delay (with cables) and
    ``fiber_delay`` the chosen optical delay line.
    """

    g_amp_opt: float
    theta_opt: float
    delay_opt: float
    fiber_delay: float
    achieved_suppression: float
    log: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    cables: int = 0
    fiber_length: float | None = None

    def apply(self, cfg: ChainConfig) -> ChainConfig:
        return replace(
            cfg, G_amp=self.g_amp_opt, lo2_phase=self.theta_opt,
            ff_delay=self.delay_opt, optical_delay=self.fiber_delay,
        )

    def as_dict(self) -> dict:
        return {
            "G_amp": self.g_amp_opt,
            "lo2_phase": self.theta_opt,
            "ff_delay": self.delay_opt,
            "optical_delay": self.fiber_delay,
            "fiber_length_m": self.fiber_length,
            "cables": self.cables,
            "achieved_suppression_db": self.achieved_suppression,
            "flags": list(self.flags),
            "evaluations": len(self.log),
        }


class Bench:
    """Engine handle used by the calibration routines.

    Every measurement reuses ``seed``, so the objective is a deterministic
    function of the settings. The quadrature loop is held open while
    calibrating; the LO2 phase is a calibration knob here.
    """

    def __init__(
        self,
        cfg: ChainConfig,
        noise: NoiseConfig | None = None,
        seed: int = 0,
        tone: ToneSpec = ToneSpec(2e6, 0.1),
        window: float = 10e-3,
    ):
        self.cfg = replace(
            cfg, enable_feedforward=True,
            quadrature_loop=replace(cfg.quadrature_loop, enabled=False),
        )
        self.noise = with_tone(NoiseConfig() if noise is None else noise, tone.frequency, tone.depth, tone.phase)
        self.seed = seed
        self.tone = tone
        self.window = window
        self.log: list[dict] = []

    def _run(self, changes):
        cfg = replace(self.cfg, **changes)
        return cfg, run_scenario(cfg, self.noise, self.window, self.seed, record=False)

    def measure(self, step: str = "", **changes) -> float:
        """Tone suppression (dB) with ``changes`` applied to the current config."""
        cfg, run = self._run(changes)
        s0 = run.startup
        f = self.tone.frequency
        x_in = lock_in(run.residual.samples[s0:], f, cfg.sample_rate)
        x_out = lock_in(run.output.samples[s0:], f, cfg.sample_rate)
        sup = 20 * math.log10(abs(x_in) / max(abs(x_out), 1e-300))
        self._record(step, changes, suppression_db=sup)
        return sup

    def measure_offset(self, step: str = "", **changes) -> float:
        """Mean LP2 reading of the mixer DC offset (V)."""
        _, run = self._run(changes)
        dc = float(np.mean(run.telemetry["dc_offset"]))
        self._record(step, changes, dc_offset=dc)
        return dc

    def _record(self, step, changes, **values):
        self.log.append({"step": step, **{k: float(v) for k, v in changes.items()}, **values})

    def update(self, **changes):
        self.cfg = replace(self.cfg, **changes)


def _bounded_search(fun, center, half_width, xatol, max_expand=4, maxiter=60):
    """Bounded golden-section/parabolic minimization with bracket expansion.

    If the minimum lands on a bound the bracket is re-centred there and
    doubled, up to ``max_expand`` times.
    """
    lo, hi = center - half_width, center + half_width
    for _ in range(max_expand + 1):
        res = optimize.minimize_scalar(fun, bounds=(lo, hi), method="bounded",
                                       options={"xatol": xatol, "maxiter": maxiter})
        edge = 3 * xatol
        if res.x - lo > edge and hi - res.x > edge:
            return float(res.x), float(res.fun), bool(res.success)
        half_width *= 2
        lo, hi = res.x - half_width, res.x + half_width
    return float(res.x), float(res.fun), False


def calibrate_gain_phase(bench: Bench, rounds: int = 3) -> CalibrationResult:
    """Alternate 1-D searches over LO2 phase and amplifier gain.

    Tone suppression depends on gain and demodulation phase only through
    ``g_ff * cos(theta_e)``, so the phase is set by the quadrature
    condition (minimum ``|DC offset|`` after LP2) and the gain by maximum
    suppression. Gain is searched in log space; the landscape is unimodal
    there at fixed phase and delay.
    """
    converged = True
    for r in range(rounds):
        th0 = bench.cfg.lo2_phase
        dth, _, ok_t = _bounded_search(
            lambda x: abs(bench.measure_offset(f"phase{r}", lo2_phase=th0 + x)), 0.0, 0.3, 2e-5)
        bench.update(lo2_phase=th0 + dth)
        g0 = bench.cfg.G_amp
        lg, _, ok_g = _bounded_search(
            lambda x: -bench.measure(f"gain{r}", G_amp=g0 * math.exp(x)), 0.0, 0.4, 1e-6)
        bench.update(G_amp=g0 * math.exp(lg))
        converged &= ok_g and ok_t
    result = _result(bench)
    if not converged:
        raise CalibrationError("gain/phase search did not converge", result)
    return result


def calibrate_delay(
    bench: Bench,
    coarse_step: float | None = None,
    fine_step: float = 0.3e-9,
    fiber_lengths=None,
) -> CalibrationResult:
    """Choose the delay fiber, then the number of short cables.

    Parameters
    ----------
    coarse_step : float, optional
        Optical delay per metre of fiber (default: the chain's value).
    fine_step : float
        Delay of one short cable added to the electrical path.
    fiber_lengths : iterable of int, optional
        Candidate fiber lengths in metres (default 1..15 m).
    """
    cfg = bench.cfg
    coarse_step = cfg.fiber_delay_per_m if coarse_step is None else coarse_step
    if not coarse_step > 0:
        raise ValueError(f"coarse_step must be > 0, got {coarse_step}")
    if not fine_step > 0:
        raise ValueError(f"fine_step must be > 0, got {fine_step}")
    lengths = list(range(1, 16)) if fiber_lengths is None else [int(m) for m in fiber_lengths]
    flags = []

    coarse = [(bench.measure("fiber", optical_delay=m * coarse_step), m) for m in lengths]
    best_m = max(coarse)[1]
    if best_m in (lengths[0], lengths[-1]) and len(lengths) > 1:
        flags.append("fiber_at_scan_boundary")

    # Cables only lengthen the electrical path, so also try the next fiber up.
    base = cfg.ff_delay
    n_cables = int(math.ceil(coarse_step / fine_step)) + 1
    fine = []
    for m in (best_m, best_m + 1):
        for k in range(n_cables + 1):
            s = bench.measure("cable", optical_delay=m * coarse_step, ff_delay=base + k * fine_step)
            fine.append((s, m, k))
    sup, m, k = max(fine)
    if k == n_cables:
        flags.append("cables_at_scan_boundary")
    bench.update(optical_delay=m * coarse_step, ff_delay=base + k * fine_step)
    result = _result(bench, sup)
    result.flags += flags
    result.cables = k
    result.fiber_length = float(m)
    return result


def _result(bench: Bench, sup: float | None = None) -> CalibrationResult:
    c = bench.cfg
    if sup is None:
        sup = bench.measure("check")
    return CalibrationResult(c.G_amp, c.lo2_phase, c.ff_delay, c.optical_delay, sup, list(bench.log))


def calibrate(
    cfg: ChainConfig,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    *,
    tone: ToneSpec = ToneSpec(2e6, 0.1),
    window: float = 10e-3,
    fine_step: float = 0.3e-9,
    fiber_lengths=None,
    rounds: int = 3,
) -> CalibrationResult:
    """Full pipeline: rough gain/phase, fiber and cables, final gain/phase."""
    bench = Bench(cfg, noise, seed, tone, window)
    flags = []
    try:
        calibrate_gain_phase(bench, rounds=1)
    except CalibrationError:
        flags.append("rough_gain_phase_not_converged")
    d = calibrate_delay(bench, fine_step=fine_step, fiber_lengths=fiber_lengths)
    flags += d.flags
    try:
        res = calibrate_gain_phase(bench, rounds=rounds)
    except CalibrationError as err:
        res = err.best
        flags.append("gain_phase_not_converged")
    res.flags = flags + res.flags
    res.cables = d.cables
    res.fiber_length = d.fiber_length
    log.info("calibration: %s", res.as_dict())
    return res


def brute_force_gain(bench: Bench, span: float = 0.01, points: int = 201) -> float:
    """Gain maximizing suppression on a dense grid around the current value."""
    g0 = bench.cfg.G_amp
    grid = g0 * (1 + np.linspace(-span, span, points))
    sups = [bench.measure("brute", G_amp=g) for g in grid]
    return float(grid[int(np.argmax(sups))])
