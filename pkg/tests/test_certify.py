import math
from dataclasses import replace

import numpy as np
import pytest

from taxis import certify
from taxis.certify import (FAIL, NOT_APPLICABLE, PASS, CertificateReport, FaceField, boundary_trace_check,
                           certify_trajectory, chain_rule_identity_residual, classical_consistency, cosine_field,
                           dissipation_check, mass_identity_check, reports_to_csv, summarize,
                           supersolution_residual, time_reversed, v_equation_residual, worker_count)
from taxis.mesh import Grid, ScalarField
from taxis.model import ModelSpec, Sensitivity
from taxis.solver import Profile, SimState, StepControl, init_data, run, snapshot_schedule

library = certify.test_library


@pytest.fixture(scope="module")
def smooth():
    g = Grid((1.0,), (64,))
    st = init_data(g, Profile("cosine", (0.3, 0.15, 1)), Profile("cosine", (0.4, 0.1, 2)))
    spec = ModelSpec(chi=Sensitivity.constant(1.0))
    return run(st, spec, StepControl(dt=2e-3), snapshot_schedule(0.5, 0.5 / 64))


def test_report_verdicts():
    assert CertificateReport("x", 1.0, 2.0, 0.0).verdict == PASS
    assert CertificateReport("x", 2.0, 1.0, 0.5).verdict == FAIL
    assert CertificateReport("x", 2.0, 1.0, 1.0, "equality").verdict == PASS
    assert CertificateReport("x", 0.0, 1.0, 0.5, "equality").verdict == FAIL
    assert CertificateReport("x", math.nan, 0.0, 1.0).verdict == FAIL
    na = CertificateReport("x", math.nan, math.nan, math.nan, applicable=False)
    assert na.verdict == NOT_APPLICABLE and na.passed


def test_report_csv_and_summary():
    reps = [CertificateReport("a", 1.0, 2.0, 0.1, metadata={"pair": "one/bump", "M": 2.5}),
            CertificateReport("b", 3.0, 2.0, 0.1)]
    text = reports_to_csv(reps)
    lines = text.splitlines()
    assert lines[0] == "clause,lhs,rhs,residual,tolerance,verdict,metadata"
    assert lines[1].split(",")[5] == "pass" and lines[2].split(",")[5] == "fail"
    assert "pair=one/bump" in lines[1]
    assert summarize(reps).splitlines()[-1] == "2 clauses, 1 failed"


def test_library_contents():
    pairs = library(1.0, (1.0, 2.0))
    assert len(pairs) == 27
    assert sum(p.nonneg for p in pairs) == 18
    assert len({p.pair_id for p in pairs}) == 27
    x, y = np.meshgrid(np.linspace(0, 1, 9), np.linspace(0, 2, 9), indexing="ij")
    for p in pairs:
        assert float(p.psi(np.array(0.0))) == pytest.approx(1.0)
        assert float(p.psi(np.array(1.0))) == pytest.approx(0.0, abs=1e-14)
        if p.nonneg:
            assert np.all(np.asarray(p.phi(x, y)) >= 0)


def test_library_derivatives_against_differences():
    h = 1e-6
    x = np.linspace(0.05, 0.95, 7)
    t = np.linspace(0.05, 0.9, 7)
    for p in library(1.0):
        g = p.grad_phi(x)[0]
        np.testing.assert_allclose(g, (p.phi(x + h) - p.phi(x - h)) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(p.dpsi(t), (p.psi(t + h) - p.psi(t - h)) / (2 * h), atol=1e-6)


def test_library_rejects_bad_support():
    with pytest.raises(ValueError):
        library(0.0)


def test_all_clauses_pass_on_smooth_run(smooth):
    reports = certify_trajectory(smooth)
    # 18 supersolution + 27 v-equation + mass + dissipation + boundary
    assert len(reports) == 48
    bad = [r for r in reports if r.verdict != PASS]
    assert not bad, summarize(bad)


def test_supersolution_guards(smooth):
    signed = next(p for p in library(0.5) if not p.nonneg)
    with pytest.raises(ValueError):
        supersolution_residual(smooth, smooth.spec, signed)
    low = smooth.spec.with_(M0=0.0)
    with pytest.raises(ValueError):
        supersolution_residual(smooth, low, library(0.5)[0])


def test_snapshot_sampling_guard(smooth):
    thin = replace(smooth, snapshots=smooth.snapshots[::4])
    with pytest.raises(ValueError):
        v_equation_residual(thin, None, library(0.5)[0])
    with pytest.raises(ValueError):
        v_equation_residual(smooth, None, library(2.0)[0])


def test_v_equation_detects_a_corrupted_field(smooth):
    snaps = [SimState(s.t, s.u, ScalarField(s.v.grid, s.v.values * (1 + 0.5 * i / len(smooth.snapshots))))
             for i, s in enumerate(smooth.snapshots)]
    bad = replace(smooth, snapshots=snaps)
    rep = v_equation_residual(bad, None, library(0.5)[0])
    assert rep.verdict == FAIL
    assert v_equation_residual(smooth, None, library(0.5)[0]).verdict == PASS


def test_mass_identity(smooth):
    assert mass_identity_check(smooth).verdict == PASS
    snaps = [SimState(s.t, ScalarField(s.u.grid, s.u.values * (1 + 1e-6 * i)), s.v)
             for i, s in enumerate(smooth.snapshots)]
    rep = mass_identity_check(replace(smooth, snapshots=snaps))
    assert rep.verdict == FAIL and rep.metadata["max_abs_gap"] > 0


def test_time_reversal_structure(smooth):
    rev = time_reversed(smooth)
    assert rev.times[0] == 0.0 and rev.times[-1] == pytest.approx(smooth.times[-1])
    np.testing.assert_array_equal(rev.snapshots[0].u.values, smooth.snapshots[-1].u.values)
    assert np.all(np.diff(rev.step_times) > 0)


def test_dissipation_fails_when_run_backwards():
    g = Grid((1.0,), (64,))
    st = init_data(g, Profile("cosine", (3.0, 0.2, 1)), Profile("cosine", (0.01, 0.005, 1)))
    tr = run(st, ModelSpec(chi=Sensitivity.constant(1.0)), StepControl(dt=2e-3), snapshot_schedule(0.5, 0.5 / 64))
    assert dissipation_check(tr).verdict == PASS
    assert dissipation_check(time_reversed(tr)).verdict == FAIL


def test_boundary_trace_detects_wall_flux(smooth):
    psi = library(0.5)[0].psi
    assert boundary_trace_check(smooth, smooth.spec, psi).verdict == PASS
    g = smooth.grid
    leaky = np.zeros(g.cells[0] + 1)
    leaky[-1] = 1e-3
    rep = boundary_trace_check(smooth, smooth.spec, psi, fields=[FaceField(g, (leaky,))])
    assert rep.verdict == FAIL
    # largest pairing comes from exp(x), read at the last cell centre
    assert abs(rep.residual) == pytest.approx(1e-3 * math.exp(1 - 0.5 / g.cells[0]), rel=1e-12)


def test_classical_consistency_on_small_data():
    g = Grid((1.0,), (64,))
    st = init_data(g, Profile("gaussian", (0.05, 0.1, 0.5), floor=0.1), Profile("cosine", (0.3, 0.05, 1)))
    spec = ModelSpec(chi=Sensitivity.constant(0.1))
    tr = run(st, spec, StepControl(dt=2e-3), snapshot_schedule(0.5, 0.5 / 64))
    reps = classical_consistency(tr, spec)
    assert [r.clause for r in reps] == ["classical/xi", "classical/saturation", "classical/strong_form"]
    assert all(r.verdict == PASS for r in reps), summarize(reps)


def test_classical_consistency_not_applicable_outside_box():
    g = Grid((1.0,), (32,))
    st = init_data(g, Profile("constant", (1.5,)), Profile("constant", (0.5,)))
    spec = ModelSpec(chi=Sensitivity.constant(1.0))
    tr = run(st, spec, StepControl(dt=1e-2), snapshot_schedule(0.2, 0.2 / 64))
    reps = classical_consistency(tr, spec)
    assert all(r.verdict == NOT_APPLICABLE for r in reps)
    assert "precondition" in reps[0].metadata["note"]


def test_chain_rule_second_order_small():
    spec = ModelSpec(chi=Sensitivity.rational(1.0, 0.5, 0.5), a=3.0, b=3.0, n=1, l=1, k=4)
    tab = chain_rule_identity_residual(cosine_field(0.5, 0.2, 1.0, 1), cosine_field(0.5, 0.2, 2.0, 2), spec,
                                       cells=(32, 64, 128))
    assert tab.min_order > 1.9, tab.to_text()


def test_chain_rule_rejects_fields_outside_box():
    spec = ModelSpec(chi=Sensitivity.constant(1.0))
    with pytest.raises(ValueError):
        chain_rule_identity_residual(cosine_field(0.9, 0.2), cosine_field(0.5, 0.1), spec, cells=(16,))


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("TAXIS_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("TAXIS_THREADS", "junk")
    assert worker_count() >= 1


def test_results_do_not_depend_on_thread_count(smooth, monkeypatch):
    monkeypatch.setenv("TAXIS_THREADS", "1")
    one = reports_to_csv(certify_trajectory(smooth))
    monkeypatch.setenv("TAXIS_THREADS", "4")
    assert reports_to_csv(certify_trajectory(smooth)) == one
