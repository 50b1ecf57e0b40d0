import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from oplff.analysis import suppression_at
from oplff.engine import (
    ChainConfig,
    DriftProfile,
    EngineAbort,
    drift_run,
    drifted,
    residual_phase,
    retune_offset,
    run_scenario,
    sweep_tone,
    with_tone,
)
from oplff.loops import OpllConfig
from oplff.noise import NoiseConfig

from conftest import oracle_db, quiet_chain, static_chain

QUIET = NoiseConfig().without_noise()


def suppression(cfg, f=2e6, beta=0.01, noise=QUIET, duration=5e-3, seed=0, rbw=5e3):
    nz = with_tone(noise, f, beta)
    on = run_scenario(replace(cfg, enable_feedforward=True), nz, duration, seed, record=False)
    off = run_scenario(replace(cfg, enable_feedforward=False), nz, duration, seed, record=False)
    return suppression_at(on, off, f, rbw)


def test_ff_off_output_is_residual():
    cfg = replace(ChainConfig(), enable_feedforward=False)
    run = run_scenario(cfg, NoiseConfig(), 2e-3, 4)
    np.testing.assert_array_equal(run.output.samples, run.residual.samples)
    np.testing.assert_array_equal(run.residual.samples, residual_phase(cfg, NoiseConfig(), run.output.samples.size, 4))


def test_ideal_chain_reaches_numerical_floor():
    assert suppression(static_chain()).value >= 60.0


def test_one_ns_mismatch_gives_38db():
    s = suppression(static_chain(delta_tau=1e-9)).value
    assert s == pytest.approx(-20 * math.log10(2 * math.sin(math.pi * 2e6 * 1e-9)), abs=1.0)
    assert s == pytest.approx(38.0, abs=1.0)


@pytest.mark.parametrize("g,dtau,theta,f", [
    (0.9, 0.0, 0.0, 1e6),
    (1.01, 0.3e-9, 0.05, 5e6),
    (1.0, 5e-9, 0.2, 2e6),
    (1.1, 1e-9, 0.2, 0.1e6),
])
def test_oracle_agreement_examples(g, dtau, theta, f):
    s = suppression(static_chain(g, dtau, theta), f=f).value
    assert s == pytest.approx(oracle_db(g, dtau, theta, f), abs=1.0)


def test_seed_determinism():
    cfg = ChainConfig()
    a = run_scenario(cfg, NoiseConfig(), 2e-3, 11)
    b = run_scenario(cfg, NoiseConfig(), 2e-3, 11)
    c = run_scenario(cfg, NoiseConfig(), 2e-3, 12)
    assert np.array_equal(a.output.samples, b.output.samples)
    assert np.array_equal(a.v_error.samples, b.v_error.samples)
    for k in a.telemetry:
        assert np.array_equal(a.telemetry[k], b.telemetry[k])
    assert not np.array_equal(a.output.samples, c.output.samples)


def test_branch_isolation():
    base = replace(ChainConfig(), enable_feedforward=False)
    other = replace(base, G_amp=3.0, ff_delay=50e-9, amp_ripple=(), pd_highpass=0.0, G_EOM=1.0)
    a = run_scenario(base, NoiseConfig(), 2e-3, 1, record=False)
    b = run_scenario(other, NoiseConfig(), 2e-3, 1, record=False)
    np.testing.assert_array_equal(a.output.samples, b.output.samples)


def test_monotone_degradation_in_delay():
    f = 2e6
    taus = np.linspace(0.0, 1 / (4 * f), 7)
    sup = [suppression(static_chain(delta_tau=t), f=f).value for t in taus]
    assert all(b <= a + 1e-6 for a, b in zip(sup, sup[1:]))


def test_negative_mismatch_is_symmetric():
    a = suppression(static_chain(delta_tau=2e-9)).value
    b = suppression(static_chain(delta_tau=-2e-9, optical_delay=40e-9)).value
    assert a == pytest.approx(b, abs=0.05)


def test_unstable_opll_aborts():
    cfg = replace(ChainConfig(), opll=OpllConfig(loop_delay=300e-9))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EngineAbort):
            run_scenario(cfg, NoiseConfig(), 2e-3, 0)


def test_startup_region_reported():
    run = run_scenario(ChainConfig(), NoiseConfig(), 2e-3, 0)
    assert 0 < run.startup < run.output.samples.size // 2
    beat = run.output_beat()
    assert beat.samples.size == run.output.samples.size - run.startup
    assert beat.t0 == pytest.approx(run.output.t0 + run.startup / run.output.sample_rate)


# --- retune ----------------------------------------------------------------

def test_retune_same_offset_is_identity():
    cfg = ChainConfig()
    assert retune_offset(cfg, cfg.delta_omega) is cfg


def test_retune_scales_lo1_and_lo2():
    cfg = retune_offset(ChainConfig(), 100e6)
    assert cfg.delta_omega == 100e6
    assert cfg.lo1_frequency == pytest.approx(30e6 * 100 / 240)
    assert cfg.lo2_frequency == 100e6
    assert cfg.G_amp == ChainConfig().G_amp


def test_retune_beyond_pd_bandwidth_rejected():
    with pytest.raises(ValueError, match="PD bandwidth"):
        retune_offset(ChainConfig(), 500e6)


def test_retune_flat_components_leaves_sweep_unchanged():
    cfg = replace(quiet_chain(), ff_delay=quiet_chain().optical_delay + 0.3e-9)
    freqs = [1e5, 2e6, 8e6]
    kw = dict(rbw=5e3, duration=5e-3)
    a = sweep_tone(cfg, NoiseConfig(), freqs, 0.1, 3, **kw)
    b = sweep_tone(retune_offset(cfg, 100e6), NoiseConfig(), freqs, 0.1, 3, **kw)
    np.testing.assert_allclose(a.measured, b.measured, atol=0.5)


# --- sweep -----------------------------------------------------------------

def test_sweep_rejects_seed_mismatch():
    with pytest.raises(ValueError, match="seed"):
        sweep_tone(ChainConfig(), NoiseConfig(), [2e6], 0.1, 1, off_seed=2)


def test_sweep_rejects_frequency_above_nyquist():
    with pytest.raises(ValueError):
        sweep_tone(ChainConfig(), NoiseConfig(), [30e6], 0.1, 1)


def test_sweep_ideal_chain_all_points_at_floor():
    rep = sweep_tone(static_chain(), QUIET, [1e5, 1e6, 5e6], 0.01, 0, rbw=5e3, duration=5e-3)
    assert np.all(rep.measured >= 60.0)


def test_sweep_reports_oracle_alongside():
    cfg = static_chain(delta_tau=1e-9)
    rep = sweep_tone(cfg, QUIET, [1e6, 2e6], 0.01, 0, rbw=5e3, duration=5e-3)
    for e in rep.entries:
        assert e.oracle_db == pytest.approx(oracle_db(1.0, 1e-9, 0.0, e.frequency), abs=0.05)
        assert e.measured_db == pytest.approx(e.oracle_db, abs=1.0)


def test_sweep_workers_match_serial():
    cfg = static_chain(delta_tau=1e-9)
    kw = dict(rbw=5e3, duration=2e-3)
    a = sweep_tone(cfg, QUIET, [1e6, 3e6], 0.01, 0, **kw)
    b = sweep_tone(cfg, QUIET, [1e6, 3e6], 0.01, 0, workers=2, **kw)
    assert a.entries == b.entries


# --- drift -----------------------------------------------------------------

def _drift_chain(**loops):
    cfg = static_chain(delta_tau=1e-9)
    return replace(
        cfg,
        amplitude_loop=replace(cfg.amplitude_loop, enabled=loops.get("amplitude", True)),
        quadrature_loop=replace(cfg.quadrature_loop, enabled=loops.get("quadrature", True)),
    )


POWER_DRIFT = (DriftProfile("beat_power_db", (0.0, 1.0, 2.0, 3.0, 4.0), (0.0, 1.0, 0.0, -1.0, 0.0)),)
CHECKS = (0.0, 1.0, 2.0, 3.0, 4.0)


def test_drift_without_profiles_is_constant():
    res = drift_run(ChainConfig(), NoiseConfig(), (), (0.0, 1.0, 2.0), 0, window=10e-3, rbw=1e3)
    assert np.ptp(res.suppression) <= 1.0  # +/- 0.5 dB


def test_drifted_applies_profiles():
    cfg = ChainConfig()
    p = drifted(cfg, POWER_DRIFT, 1.0)
    assert p.a_beat() ** 2 / cfg.a_beat() ** 2 == pytest.approx(10 ** 0.1)
    assert drifted(cfg, (DriftProfile("lo2_phase", (0.0, 2.0), (0.0, 0.2)),), 1.0).lo2_phase == pytest.approx(0.1)


def test_drift_profile_validation():
    with pytest.raises(ValueError):
        DriftProfile("nonexistent", (0.0,), (1.0,))
    with pytest.raises(ValueError):
        DriftProfile("E1", (1.0, 0.0), (1.0, 1.0))


def test_amplitude_loop_rejects_power_drift():
    nominal = oracle_db(1.0, 1e-9, 0.0, 1e6)
    res = drift_run(_drift_chain(), QUIET, POWER_DRIFT, CHECKS, 0, beta=0.01, window=5e-3, rbw=5e3)
    assert np.all(np.abs(res.suppression - nominal) < 1.0)


def test_open_amplitude_loop_follows_oracle():
    res = drift_run(_drift_chain(amplitude=False), QUIET, POWER_DRIFT, CHECKS, 0,
                    beta=0.01, window=5e-3, rbw=5e3)
    expect = [oracle_db(10 ** (d / 20), 1e-9, 0.0, 1e6) for d in (0.0, 1.0, 0.0, -1.0, 0.0)]
    np.testing.assert_allclose(res.suppression, expect, atol=1.0)
    assert min(res.suppression) == pytest.approx(-20 * math.log10(10 ** (1 / 20) - 1), abs=1.0)


def _loops(cfg, amplitude, quadrature):
    return replace(
        cfg,
        amplitude_loop=replace(cfg.amplitude_loop, enabled=amplitude),
        quadrature_loop=replace(cfg.quadrature_loop, enabled=quadrature),
    )


def test_slow_loops_do_not_interact():
    cfg = static_chain(delta_tau=1e-9)
    both = suppression(_loops(cfg, True, True), duration=20e-3).value
    for alone in (_loops(cfg, True, False), _loops(cfg, False, True)):
        assert abs(suppression(alone, duration=20e-3).value - both) < 0.5


def test_invisible_tone_is_flagged():
    rep = sweep_tone(ChainConfig(), NoiseConfig(), [2e6], 1e-5, 0, rbw=2e3, duration=5e-3)
    assert "no_tone" in rep.entries[0].flags
