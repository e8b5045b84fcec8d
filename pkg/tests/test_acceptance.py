"""Acceptance criteria 1-11, one verdict line each (see the summary section of the pytest report)."""

import hashlib
import math
import time

import numpy as np
import pytest

from taxis.certify import (PASS, chain_rule_identity_residual, classical_consistency, cosine_field,
                           dissipation_check, mass_identity_check, summarize, supersolution_residual,
                           test_library, time_reversed)
from taxis.cli import execute, parse_config
from taxis.defect import detect_blowup, estimate_defect
from taxis.mesh import Grid, integrate
from taxis.model import (FunctionalParams, ModelSpec, Sensitivity, b_coefficients, c_regularized, discriminant,
                         f_derivs, f_eval, m_star, mstar_grid_max, mstar_prefactor)
from taxis.solver import Profile, StepControl, init_data, run, series_csv, snapshot_schedule

library = test_library


# --------------------------------------------------------------------------- 1


def test_01_mass_conservation(acceptance):
    g = Grid((1.0, 1.0), (128, 128))
    st = init_data(g, Profile("cosine", (1.0, 0.5, 1, 1)), Profile("cosine", (0.5, 0.3, 1, 2)))
    start = time.perf_counter()
    tr = run(st, ModelSpec(chi=Sensitivity.constant(1.0)), StepControl(dt=1e-4), [0.25, 0.5, 0.75, 1.0])
    elapsed = time.perf_counter() - start
    m = tr.series["mass_u"]
    drift = float(np.max(np.abs(m - m[0])) / m[0])
    steps = tr.meta["steps"]
    ok = acceptance.record(1, steps >= 10_000 and drift <= 1e-10 and elapsed < 30.0,
                           f"steps={steps} drift={drift:.2e} (<=1e-10) runtime={elapsed:.1f}s (<30s)")
    assert ok


# --------------------------------------------------------------------------- 2

V_MASS_CONFIGS = [
    ("1d-cos", (1.0,), (64,), Profile("cosine", (0.5, 0.3, 1)), Profile("cosine", (0.4, 0.1, 2)), 1.0, 2e-3),
    ("1d-gauss", (1.0,), (128,), Profile("gaussian", (0.2, 0.1, 0.3), 0.05), Profile("constant", (0.8,)),
     3.0, 1e-3),
    ("2d-cos", (1.0, 1.0), (32, 32), Profile("cosine", (0.6, 0.2, 1, 1)), Profile("cosine", (0.1, 0.05, 2, 1)),
     1.0, 5e-3),
    ("2d-rect", (2.0, 1.0), (40, 20), Profile("gaussian", (0.5, 0.2, 1.0, 0.5), 0.1),
     Profile("constant", (0.05,)), 2.0, 2e-3),
    ("2d-blowup-box", (4.0, 4.0), (32, 32), Profile("gaussian", (10 * math.pi, 1.0, 2, 2), 1e-6),
     Profile("gaussian", (10 * math.pi, 0.6, 2, 2), 1e-6), 1.0, 1e-2),
]


def test_02_v_mass_bound(acceptance):
    details, ok = [], True
    for name, ext, cells, pu, pv, chi, dt in V_MASS_CONFIGS:
        g = Grid(ext, cells)
        spec = ModelSpec(chi=Sensitivity.constant(chi), k=64)
        tr = run(init_data(g, pu, pv), spec, StepControl(dt=dt), snapshot_schedule(1.0, 0.05))
        t, mu, mv = tr.series["t"], tr.series["mass_u"], tr.series["mass_v"]
        bound = (1 - np.exp(-t)) * mu[0] + np.exp(-t) * mv[0] + (1e-8 + 2 * dt * mu[0])
        slack = float(np.min(bound - mv))
        ok &= slack >= 0
        details.append(f"{name}:{slack:.2e}")
    assert acceptance.record(2, ok, "min slack " + " ".join(details))


# --------------------------------------------------------------------------- 3


def richardson_grid_oracle(p, sigma, n: int = 512) -> float:
    coarse, fine = mstar_grid_max(p, sigma, n), mstar_grid_max(p, sigma, 2 * n)
    return mstar_prefactor(p) * (4 * fine - coarse) / 3


def test_03_mstar_published_values(acceptance):
    p = FunctionalParams(a=2, b=2, n=1, l=1)
    rows, ok = [], True
    for level, published in ((0.0, 3.0), (2.0, 4.0)):
        sigma = (lambda u, v, s=level: np.full(np.broadcast(u, v).shape, s))
        got = m_star(p, sigma)
        oracle = richardson_grid_oracle(p, sigma)
        rel = abs(got - oracle) / abs(oracle)
        ok &= rel <= 1e-6 and abs(got - published) <= 1e-6 * published
        rows.append(f"sigma={level:g}: m_star={got:.10g} oracle={oracle:.10g} rel={rel:.1e}")
    assert acceptance.record(3, ok, "; ".join(rows))


# --------------------------------------------------------------------------- 4


def random_spec(rng) -> ModelSpec:
    if rng.random() < 0.5:
        chi = Sensitivity.constant(rng.uniform(0.1, 3.0))
    else:
        chi = Sensitivity.rational(rng.uniform(0.1, 3.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0))
    n, l = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    return ModelSpec(chi=chi, a=rng.uniform(2.05, 6.0), b=rng.uniform(2.05, 6.0), n=n, l=l, M0=0.0,
                     k=int(rng.integers(max(n, l) + 1, 4 * max(n, l) + 2)))


def test_04_discriminant_and_b2(acceptance):
    rng = np.random.default_rng(20261014)
    worst_d = -math.inf
    draws = 10_000
    for i in range(draws):
        spec = random_spec(rng)
        sigma = (lambda u, v, s=spec: c_regularized(s, u, v))
        ms = m_star(spec, sigma)
        # one draw in five sits exactly on the threshold
        M0 = ms if i % 5 == 0 else ms * (1 + rng.exponential(0.5))
        p = FunctionalParams(spec.a, spec.b, spec.n, spec.l, M0)
        # random points plus a node grid that includes the edges, where the maximum usually sits
        nodes_u, nodes_v = np.meshgrid(np.linspace(0, spec.n, 17), np.linspace(0, spec.l, 17), indexing="ij")
        u = np.concatenate([rng.uniform(0, spec.n, 64), nodes_u.ravel()])
        v = np.concatenate([rng.uniform(0, spec.l, 64), nodes_v.ravel()])
        worst_d = max(worst_d, float(np.max(discriminant(p, sigma, u, v))))
    worst_b2 = math.inf
    for _ in range(8):
        spec = random_spec(rng)
        sigma = (lambda u, v, s=spec: c_regularized(s, u, v))
        ms = m_star(spec, sigma)
        U, V = np.meshgrid(np.linspace(0, spec.n, 512), np.linspace(0, spec.l, 512), indexing="ij")
        for M0 in (ms, 2 * ms):
            B = b_coefficients(spec.with_(M0=M0), sigma, U, V, mstar=ms)
            worst_b2 = min(worst_b2, float(B.B2.min()))
    ok = worst_d <= 1e-12 and worst_b2 >= -1e-12
    assert acceptance.record(4, ok, f"max D over {draws} draws = {worst_d:.3e} (<=1e-12); "
                                    f"min B2 on 512^2 = {worst_b2:.3e} (>=-1e-12)")


# --------------------------------------------------------------------------- 5


def numeric_derivs(p, u, v, h):
    Fu = (f_eval(p, u + h, v) - f_eval(p, u - h, v)) / (2 * h)
    Fv = (f_eval(p, u, v + h) - f_eval(p, u, v - h)) / (2 * h)
    Fuu = (f_eval(p, u + h, v) - 2 * f_eval(p, u, v) + f_eval(p, u - h, v)) / h ** 2
    Fvv = (f_eval(p, u, v + h) - 2 * f_eval(p, u, v) + f_eval(p, u, v - h)) / h ** 2
    Fuv = (f_eval(p, u + h, v + h) - f_eval(p, u + h, v - h)
           - f_eval(p, u - h, v + h) + f_eval(p, u - h, v - h)) / (4 * h * h)
    return Fu, Fv, Fuu, Fuv, Fvv


def test_05_derivative_fidelity(acceptance):
    rng = np.random.default_rng(5)
    p = FunctionalParams(a=3.5, b=4.25, n=2, l=1, M0=1.7)
    h0 = 0.02
    # interior: keep the stencil clear of the cut-off kinks and of the origin
    u = rng.uniform(4 * h0, p.n - 4 * h0, 100)
    v = rng.uniform(4 * h0, p.l - 4 * h0, 100)
    exact = f_derivs(p, u, v)
    errs = [np.abs(np.array(numeric_derivs(p, u, v, h)) - np.array(exact)) for h in (h0, h0 / 2)]
    orders = np.log2(errs[0] / errs[1])
    worst = float(orders.min())
    names = ("F_u", "F_v", "F_uu", "F_uv", "F_vv")
    per = " ".join(f"{n}={o:.3f}" for n, o in zip(names, orders.min(axis=1)))
    assert acceptance.record(5, worst >= 1.9, f"min observed order {worst:.3f} (>=1.9) over 100 points; {per}")


# --------------------------------------------------------------------------- 6


def test_06_chain_rule_identity(acceptance):
    spec = ModelSpec(chi=Sensitivity.rational(1.0, 0.5, 0.5), a=3.0, b=3.0, n=1, l=1, k=4)
    start = time.perf_counter()
    tab = chain_rule_identity_residual(cosine_field(0.5, 0.2, 1.0, 1), cosine_field(0.5, 0.2, 2.0, 2), spec)
    elapsed = time.perf_counter() - start
    orders = " ".join(f"{o:.3f}" for o in tab.orders)
    ok = len(tab.orders) == 4 and tab.min_order >= 1.9 and elapsed < 120
    assert acceptance.record(6, ok, f"cells {tab.cells[0]}->{tab.cells[-1]} orders [{orders}] (>=1.9) "
                                    f"runtime={elapsed:.1f}s (<120s)")


# --------------------------------------------------------------------------- 7

SMOOTH_RUNS = {
    "1d-constant": (Grid((1.0,), (128,)), Sensitivity.constant(1.0),
                    Profile("cosine", (0.3, 0.15, 1)), Profile("cosine", (0.4, 0.1, 2)), 1e-3),
    "1d-rational": (Grid((1.0,), (128,)), Sensitivity.rational(2.0, 1.0, 0.5),
                    Profile("gaussian", (0.1, 0.1, 0.5), 0.2), Profile("cosine", (0.5, 0.1, 1)), 1e-3),
    "2d-small-mass": (Grid((1.0, 1.0), (48, 48)), Sensitivity.constant(1.0),
                      Profile("gaussian", (0.1, 0.15, 0.5, 0.5), 0.1), Profile("cosine", (0.3, 0.1, 1, 1)), 2e-3),
}


def test_07_supersolution_certificate(acceptance):
    parts, ok = [], True
    for name, (g, chi, pu, pv, dt) in SMOOTH_RUNS.items():
        spec = ModelSpec(chi=chi)
        tr = run(init_data(g, pu, pv), spec, StepControl(dt=dt), snapshot_schedule(1.0, 1 / 128))
        pairs = [p for p in library(1.0, g.extents) if p.nonneg]
        reps = [supersolution_residual(tr, spec, p) for p in pairs]
        worst = max(r.residual / r.tolerance for r in reps)
        good = len(pairs) >= 12 and all(r.verdict == PASS for r in reps)
        ok &= good
        parts.append(f"{name}: {sum(r.verdict == PASS for r in reps)}/{len(pairs)} pass, "
                     f"worst residual/tol {worst:.2f}")
    g = Grid((1.0,), (64,))
    spec = ModelSpec(chi=Sensitivity.constant(1.0))
    tr = run(init_data(g, Profile("cosine", (3.0, 0.2, 1)), Profile("cosine", (0.01, 0.005, 1))), spec,
             StepControl(dt=1e-3), snapshot_schedule(0.5, 1 / 128))
    fwd, rev = dissipation_check(tr, spec), dissipation_check(time_reversed(tr), spec)
    ok &= fwd.verdict == PASS and rev.verdict != PASS
    parts.append(f"negative control: forward {fwd.verdict}, time-reversed {rev.verdict}")
    assert acceptance.record(7, ok, "; ".join(parts))


# --------------------------------------------------------------------------- 8


def test_08_mass_identity_with_defect(acceptance):
    g = Grid((4.0, 4.0), (256, 256))
    mass = 10 * math.pi
    start = time.perf_counter()
    runs = []
    for k in (8, 16, 32, 64):
        st = init_data(g, Profile("gaussian", (mass, 1.0, 2, 2), 1e-6), Profile("gaussian", (mass, 0.6, 2, 2), 1e-6))
        runs.append(run(st, ModelSpec(chi=Sensitivity.constant(1.0), k=k), StepControl(dt=0.01),
                        snapshot_schedule(1.0, 0.05)))
    est = estimate_defect(runs)
    elapsed = time.perf_counter() - start
    m0 = integrate(runs[-1].snapshots[0].u.values, g)
    gap = np.abs(est.regular_mass + est.mu_total - m0)
    allow = est.uncertainty + est.regular_uncertainty + 1e-10 * m0
    rep = mass_identity_check(runs[-1], est)
    literal = np.abs(runs[-1].series["mass_u"] + est.mu_total - m0)
    blow = detect_blowup(runs[-1])
    ok = bool(np.all(gap <= allow)) and rep.verdict == PASS and elapsed < 900
    assert acceptance.record(8, ok, f"max |regular + mu - m0| = {gap.max():.2e} vs min allowance {allow.min():.2e}; "
                                    f"mu_total(T)={est.mu_total[-1]:.4f}; literal finest-mass gap "
                                    f"{literal.max():.3f}; blow-up suspected={blow.suspected}; "
                                    f"runtime={elapsed:.0f}s (<900s)")


# --------------------------------------------------------------------------- 9


def test_09_classical_consistency(acceptance):
    g = Grid((1.0,), (64,))
    st = init_data(g, Profile("gaussian", (0.05, 0.1, 0.5), floor=0.1), Profile("cosine", (0.3, 0.05, 1)))
    spec = ModelSpec(chi=Sensitivity.constant(0.1))
    tr = run(st, spec, StepControl(dt=2e-3), snapshot_schedule(0.5, 0.5 / 64))
    reps = classical_consistency(tr, spec)
    ok = len(reps) == 3 and all(r.verdict == PASS for r in reps)
    text = "; ".join(f"{r.clause} |res|={abs(r.residual):.2e} tol={r.tolerance:.2e} {r.verdict}" for r in reps)
    assert acceptance.record(9, ok, text), summarize(reps)


# --------------------------------------------------------------------------- 10

CONSTANT_V_CONFIGS = [
    ("1d", (1.0,), (64,), Profile("cosine", (0.5, 0.3, 1)), 0.7, 2e-3),
    ("2d", (1.0, 1.0), (32, 32), Profile("gaussian", (0.3, 0.1, 0.5, 0.5), 0.2), 1.5, 5e-3),
    ("2d-rect", (2.0, 1.0), (40, 20), Profile("cosine", (1.0, 0.6, 2, 1)), 0.2, 1e-3),
]


def test_10_v_lower_bound(acceptance):
    parts, ok = [], True
    for name, ext, cells, pu, c0, dt in CONSTANT_V_CONFIGS:
        g = Grid(ext, cells)
        tr = run(init_data(g, pu, Profile("constant", (c0,))), ModelSpec(chi=Sensitivity.constant(1.0)),
                 StepControl(dt=dt), snapshot_schedule(2.0, 0.05))
        t = tr.series["t"]
        gap = tr.series["min_v"] - np.exp(-t) * c0
        ok &= bool(np.all(gap >= -1e-10))
        parts.append(f"{name}: min(min_v - e^-t c0) over t>0 = {gap[1:].min():.2e}")
    assert acceptance.record(10, ok, "; ".join(parts))


# --------------------------------------------------------------------------- 11

DETERMINISM_CONFIG = """
grid.extents = 1.0, 1.0
grid.cells = 24, 24
model.chi = rational
model.chi_params = 1.0, 0.5, 0.5
initial.u = gaussian
initial.u_params = 0.4, 0.2, 0.3, 0.6
initial.u_floor = 0.05
initial.v = cosine
initial.v_params = 0.5, 0.2, 1, 2
stepping.dt = 5e-3
stepping.t_final = 0.5
stepping.snapshot_every = 0.0078125
pipeline.stages = solve, certify
"""


def test_11_determinism(acceptance, tmp_path):
    digests = []
    for i in range(3):
        cfg = parse_config(DETERMINISM_CONFIG + f"output.directory = {tmp_path / str(i)}\n")
        man = execute(cfg)
        text = (tmp_path / str(i) / "run" / "series.csv").read_bytes()
        assert hashlib.sha256(text).hexdigest() == man.files["run/series.csv"]
        digests.append((man.files["run/series.csv"], man.files["certificates.csv"]))
    g = Grid((1.0,), (64,))
    solo = [series_csv(run(init_data(g, Profile("cosine", (0.5, 0.3, 1)), Profile("cosine", (0.4, 0.1, 2))),
                           ModelSpec(chi=Sensitivity.constant(1.0)), StepControl(dt=1e-3),
                           snapshot_schedule(0.2, 0.01))) for _ in range(2)]
    ok = len(set(digests)) == 1 and solo[0] == solo[1]
    assert acceptance.record(11, ok, f"3 executions, series sha256 {digests[0][0][:16]}... identical={ok}")
