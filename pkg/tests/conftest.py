import math
from dataclasses import replace

import numpy as np
import pytest

from oplff.engine import ChainConfig
from oplff.noise import NoiseConfig

RATE = 50e6


def quiet_chain(**changes) -> ChainConfig:
    """Ideal flat chain with both slow loops open."""
    cfg = ChainConfig().ideal()
    cfg = replace(
        cfg,
        amplitude_loop=replace(cfg.amplitude_loop, enabled=False),
        quadrature_loop=replace(cfg.quadrature_loop, enabled=False),
        **changes,
    )
    return cfg


def static_chain(g_ff=1.0, delta_tau=0.0, theta_e=0.0, **changes) -> ChainConfig:
    cfg = quiet_chain(**changes)
    cfg = replace(cfg, ff_delay=cfg.optical_delay + delta_tau, lo2_phase=theta_e)
    return cfg.with_g_ff(g_ff)


def oracle_db(g, dtau, theta, f, h=1.0):
    """Independent restatement of the linear residual, |1 - g cos(th) H e^{-iwt}|."""
    w = 2 * math.pi * f
    re = 1 - g * math.cos(theta) * (h * complex(math.cos(w * dtau), -math.sin(w * dtau))).real
    im = -g * math.cos(theta) * (h * complex(math.cos(w * dtau), -math.sin(w * dtau))).imag
    mag2 = re * re + im * im
    return math.inf if mag2 == 0 else -10 * math.log10(mag2)


@pytest.fixture
def silent_noise():
    return NoiseConfig().without_noise()


@pytest.fixture(scope="session")
def calibrated_chain():
    """Default ledger chain after the full calibration pipeline (seed 0)."""
    from oplff.calibrate import calibrate

    cfg = ChainConfig()
    res = calibrate(cfg, NoiseConfig(), seed=0)
    return res.apply(cfg), res


def lockin(x, f, rate=RATE):
    t = np.arange(len(x)) / rate
    w = np.hanning(len(x))
    return 2 * np.sum(w * x * np.exp(-2j * np.pi * f * t)) / np.sum(w)


# --- acceptance summary ----------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def acceptance(label: str, ok: bool, detail: str) -> None:
    """Print and remember one PASS/FAIL line, then assert it."""
    line = f"{label} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:].split()[0])):
            terminalreporter.write_line(line)
