import numpy as np
import pytest

from nvraman.drive import srt_drive
from nvraman.experiment import (
    Polarized,
    Protocol,
    SequenceSpec,
    SignalModel,
    dynamics_scan,
    run_sequence,
    srt_effective_frequency,
    synthesize_counts,
    unpolarized_run,
)
from nvraman.nv import EnvironmentShift, NVParams, transition_frequencies
from nvraman.propagator import IntegratorConfig

STIRAP_GOLDEN_P1 = 0.9960353120607783


def test_zero_length_readout_is_prepared_state():
    assert Protocol(tau=0.0).run() == pytest.approx((1.0, 0.0, 0.0), abs=1e-12)


def test_readout_sums_to_one():
    p = Protocol(raman_detuning=3.0, gamma_phi=0.05, tau=0.9).run()
    assert sum(p) == pytest.approx(1.0, abs=1e-9)


def test_srt_natural_length_inverts():
    pr = Protocol(raman_detuning=5.0)
    assert pr.raman_length == pytest.approx(1.25)
    assert pr.run()[2] > 0.9


def test_stirap_golden_value():
    pm, p0, pp = Protocol(scheme="stirap").run()
    assert pp == pytest.approx(STIRAP_GOLDEN_P1, abs=1e-6)
    assert pm + p0 + pp == pytest.approx(1.0, abs=1e-9)


def test_large_detuning_keeps_zero_state_empty():
    sc = Protocol(raman_detuning=8.0, tau=6.0).scan(np.linspace(0, 6, 241))
    assert sc.populations[:, 1].max() < 0.1


def test_zero_drive_gives_flat_lines():
    sc = Protocol(omega_minus=0.0, omega_plus=0.0, tau=2.0, raman_detuning=5.0).scan(np.linspace(0, 2, 9))
    np.testing.assert_allclose(sc.populations, np.tile([1.0, 0.0, 0.0], (9, 1)), atol=1e-10)


def test_clip_and_trajectory_scans_agree():
    pr = Protocol(raman_detuning=2.0, gamma_phi=0.1, tau=2.0)
    tau = np.linspace(0.0, 2.0, 6)
    cfg = IntegratorConfig(rtol=1e-10, atol=1e-12)
    a = pr.scan(tau, method="trajectory", config=cfg).populations
    b = pr.scan(tau, method="clip", config=cfg).populations
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_physical_pulses_close_to_ideal():
    ideal = np.array(Protocol(raman_detuning=5.0).run())
    phys = np.array(Protocol(raman_detuning=5.0, prepare="physical", readout_pi="physical").run())
    np.testing.assert_allclose(phys, ideal, atol=0.02)


def test_unpolarized_mixture_equals_average():
    p, env = NVParams(), EnvironmentShift()
    ts = transition_frequencies(p, env, 0.5)
    spec = SequenceSpec(srt_drive(ts, 5.0, 0.0, 0.0, 2.0, 2.0, 1.25), 1.25)
    cfg = IntegratorConfig(rtol=1e-12, atol=1e-14)
    a = unpolarized_run(spec, p, env, method="average", config=cfg)
    b = unpolarized_run(spec, p, env, method="mixture", config=cfg)
    np.testing.assert_allclose(a, b, atol=1e-10)
    # the off-resonant nuclear line transfers less
    assert a[2] < run_sequence(spec, Polarized(0.5), p, env)[2]


def test_unpolarized_collapses_without_hyperfine():
    nv = NVParams(A=0.0)
    pol = Protocol(nv=nv).run()
    unpol = Protocol(nv=nv, nuclear="unpolarized").run()
    np.testing.assert_allclose(pol, unpol, atol=1e-9)


def test_polarized_minus_is_symmetric():
    # driving the m_I = -1/2 line with the matching nuclear state mirrors m_I = +1/2
    a = Protocol(nuclear="polarized_minus").run()
    b = Protocol(nuclear="polarized_plus").run()
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_readout_subset_leaves_nan():
    p, env = NVParams(), EnvironmentShift()
    ts = transition_frequencies(p, env, 0.5)
    spec = SequenceSpec(srt_drive(ts, 5.0, 0.0, 0.0, 2.0, 2.0, 1.0), 1.0, readout=("direct_p0",))
    out = dynamics_scan(spec, [0.5, 1.0], Polarized(), p, env).populations
    assert np.isnan(out[:, 0]).all() and np.isnan(out[:, 2]).all()
    assert np.isfinite(out[:, 1]).all()


def test_sequence_validation():
    p, env = NVParams(), EnvironmentShift()
    ts = transition_frequencies(p, env, 0.5)
    d = srt_drive(ts, 5.0, 0.0, 0.0, 2.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        SequenceSpec(d, -1.0)
    with pytest.raises(ValueError):
        SequenceSpec(d, 1.0, prepare="magic")
    with pytest.raises(ValueError):
        Protocol(scheme="lambda")
    with pytest.raises(ValueError):
        Protocol(tau=1.0).scan([1.0, 0.5])
    with pytest.raises(ValueError):
        srt_effective_frequency(2.0, 2.0, 0.0)


def test_protocol_dict_round_trip():
    pr = Protocol(scheme="stirap", detuning_minus=0.1, env=EnvironmentShift(dT=2.0), nv=NVParams(B_z=300.0))
    assert Protocol.from_dict(pr.to_dict()) == pr


def test_signal_model_inverts_mean():
    sm = SignalModel()
    p0 = np.linspace(0, 1, 11)
    np.testing.assert_allclose(sm.normalize(sm.mean_counts(p0)), p0, atol=1e-12)
    with pytest.raises(ValueError):
        SignalModel(contrast=1.5)


def test_synthesized_counts_are_reproducible_and_unbiased():
    sm = SignalModel(seed=3)
    pops = np.tile([0.2, 0.5, 0.3], (2000, 1))
    c1, c2 = synthesize_counts(pops, sm), synthesize_counts(pops, sm)
    np.testing.assert_array_equal(c1, c2)
    est = sm.normalize(c1)
    np.testing.assert_allclose(est.mean(axis=0), [0.2, 0.5, 0.3], atol=5 * sm.sigma(c1).mean() / np.sqrt(2000))
    # the propagated error matches the scatter
    assert est[:, 1].std() == pytest.approx(sm.sigma(c1)[:, 1].mean(), rel=0.1)


def test_scan_csv(tmp_path):
    sc = Protocol(tau=1.0).scan([0.0, 0.5, 1.0])
    sc.counts = synthesize_counts(sc.populations, SignalModel())
    sc.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "tau_us,P_m1,P_0,P_p1,counts_m1,counts_0,counts_p1"
    assert len(lines) == 4
