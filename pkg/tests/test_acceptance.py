"""Acceptance criteria 1-9 at their stated tolerances.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting. The dynamic Monte-Carlo study is shared by criteria 5, 6 and 8.
"""
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, kinematic_pairs
from nhkoopman.costs import CostSpec, default_cost, stage_cost, stage_gradient
from nhkoopman.dictionaries import get_dictionary, registry
from nhkoopman.edmd import fit_surrogate, predict, predict_batch
from nhkoopman.experiments import (STUDY_SOLVER, EcdfReport, StudyConfig, data_efficiency_sweep,
                                   monte_carlo_closed_loop, open_loop_study, reference_runs)
from nhkoopman.mpc import OcpSpec, closed_loop
from nhkoopman.postprocess import PostprocessSpec, build_dataset
from nhkoopman.sampler import (KINEMATIC_BASES, SamplingSpec, sample_dynamic, sample_kinematic)
from nhkoopman.vehicles import dynamic_zoh_step, kinematic_zoh_step

D5 = get_dictionary("D5t")
D8 = get_dictionary("D8Eul")
WORKERS = os.cpu_count() or 1
KIN_X0 = np.array([-1.0, -0.5, -np.pi / 6])
PARKING_X0 = np.array([0.0, 0.5, 0.0])
REPORTS = []


def record(num, ok, detail):
    ACCEPTANCE[num] = (bool(ok), detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# shared data


@pytest.fixture(scope="module")
def kin_clean_surrogate():
    rec = sample_kinematic(SamplingSpec.kinematic(seed=0, noise_pos=0.0, noise_heading=0.0))
    data = build_dataset(rec, PostprocessSpec(window=1, dt=0.1))
    return fit_surrogate(D5, data, drift=False)


@pytest.fixture(scope="module")
def dyn_data():
    rec = sample_dynamic(SamplingSpec.dynamic(seed=0, segments_per_basis=100))
    return build_dataset(rec, PostprocessSpec(window=40))


@pytest.fixture(scope="module")
def dyn_full(dyn_data):
    return fit_surrogate(D8, dyn_data, drift=True)


@pytest.fixture(scope="module")
def dyn_study(dyn_full):
    configs = [StudyConfig("me", "proj"), StudyConfig("ce", "proj"), StudyConfig("ds", "proj"),
               StudyConfig("me", "noproj")]
    reps = monte_carlo_closed_loop("dynamic", dyn_full, configs, n=100, seed=0, workers=WORKERS)
    REPORTS.extend(reps)
    return {r.label: r for r in reps}


@pytest.fixture(scope="module")
def open_loop(dyn_full):
    return {kind: open_loop_study(reference_runs(kind, 20, seed=11 + i), {"D8Eul": dyn_full},
                                  horizon=20, window=40, models=("proj", "noproj"))
            for i, kind in enumerate(("infinity", "square"))}


def _kin_run(sur, cost, x0):
    spec = OcpSpec(60, 0.1, default_cost(cost, 3, sur.dictionary), surrogate=sur)
    return closed_loop(spec, x0, 10.0)


# ---------------------------------------------------------------------------
# criteria


def test_criterion_1_closure_exactness():
    sur = fit_surrogate(D5, kinematic_pairs(KINEMATIC_BASES, 200, 0.1), drift=False)
    rng = np.random.default_rng(1)
    X0 = np.column_stack([rng.uniform(-1, 1, (20, 2)), rng.uniform(-np.pi, np.pi, 20)])
    worst = 0.0
    for u in KINEMATIC_BASES[1:]:
        for x0 in X0:
            pred = predict(sur, x0, np.tile(u, (10, 1)))
            x = x0.copy()
            for k in range(10):
                x = kinematic_zoh_step(x, u, 0.1)
                d = pred[k + 1] - x
                d[2] = np.mod(d[2] + np.pi, 2 * np.pi) - np.pi
                worst = max(worst, np.max(np.abs(d)))
    record(1, worst <= 1e-8, f"max 10-step error {worst:.2e} <= 1e-8")


def test_criterion_2_second_order_interpolation():
    rng = np.random.default_rng(5)
    U = rng.uniform([-0.5, -2], [0.5, 2], (5, 2))
    X = np.column_stack([rng.uniform(-1, 1, (100, 2)), rng.uniform(-np.pi, np.pi, 100)])
    errs = {}
    for dt in (0.1, 0.05):
        sur = fit_surrogate(D5, kinematic_pairs(KINEMATIC_BASES, 200, dt), drift=False)
        errs[dt] = []
        for u in U:
            P = predict_batch(sur, X, np.tile(u, (len(X), 1, 1)))[:, 1]
            T = np.array([kinematic_zoh_step(x, u, dt) for x in X])
            errs[dt].append(np.max(np.linalg.norm(P[:, :2] - T[:, :2], axis=1)))
    ratio = np.array(errs[0.1]) / np.array(errs[0.05])
    record(2, np.all((ratio >= 3) & (ratio <= 5)),
           f"error ratios {np.round(ratio, 2).tolist()} in [3, 5]")


def test_criterion_3_kinematic_stabilization(kin_clean_surrogate):
    res = _kin_run(kin_clean_surrogate, "me", KIN_X0)
    x2 = abs(res.states[-1, 1])
    v = res.values
    # after the first second no increase beyond the solver's resolution
    rise = np.max(np.diff(v[10:])) / v[0]
    ok = x2 <= 1e-3 and rise <= 1e-6
    record(3, ok, f"|x2(10 s)| = {x2:.2e} m <= 1e-3, largest value rise after 1 s "
                  f"{rise:.1e} of V0 <= 1e-6")


def test_criterion_4_cost_geometry(kin_clean_surrogate):
    x2 = {c: abs(_kin_run(kin_clean_surrogate, c, PARKING_X0).states[-1, 1])
          for c in ("me", "ce", "ds")}
    ok = x2["me"] <= 1e-3 and x2["ce"] > 0.02 and x2["ds"] > 0.02
    record(4, ok, ", ".join(f"{c} |x2| = {v:.2e} m" for c, v in x2.items())
           + " (me <= 1e-3, ce and ds > 0.02)")


def test_criterion_5_dynamic_ecdf(dyn_study):
    frac = {k: r.fraction_below(2e-3) for k, r in dyn_study.items()}
    ok = frac["me-proj"] >= 0.70 and all(frac[k] < 0.30 for k in ("ce-proj", "ds-proj"))
    record(5, ok, ", ".join(f"{k} {v:.2f}" for k, v in frac.items())
           + " below 2 mm (me-proj >= 0.70, quadratic < 0.30)")


def test_criterion_6_reprojection_necessity(dyn_study, open_loop):
    noproj = dyn_study["me-noproj"].fraction_below(2e-3)
    ratios = {k: rep.worst("D8Eul", "noproj") / rep.worst("D8Eul", "proj")
              for k, rep in open_loop.items()}
    ok = noproj < 0.5 and all(r >= 3 for r in ratios.values())
    record(6, ok, f"me-noproj below 2 mm in {noproj:.2f} of runs (< 0.5), open-loop "
                  + ", ".join(f"{k} ratio {r:.1f}" for k, r in ratios.items()) + " (>= 3)")


def test_criterion_7_open_loop_envelope(open_loop):
    pos = {k: rep.worst("D8Eul", "proj", "position") for k, rep in open_loop.items()}
    ori = {k: np.rad2deg(rep.worst("D8Eul", "proj", "orientation"))
           for k, rep in open_loop.items()}
    ok = max(pos.values()) < 0.05 and max(ori.values()) < 8.0
    record(7, ok, ", ".join(f"{k} {100 * pos[k]:.2f} cm / {ori[k]:.2f} deg" for k in pos)
           + " (< 5 cm, < 8 deg)")


def test_criterion_8_data_efficiency(dyn_data, dyn_study):
    rec = sample_kinematic(SamplingSpec.kinematic(seed=0))
    kin = build_dataset(rec, PostprocessSpec(window=1, dt=0.1))
    kin_rep = data_efficiency_sweep("kinematic", kin, D5, [10], n=50, seed=0,
                                    workers=WORKERS)[10]
    dyn_rep = data_efficiency_sweep("dynamic", dyn_data, D8, [100], n=100, seed=0,
                                    workers=WORKERS)[100]
    REPORTS.extend([kin_rep, dyn_rep])
    kin_ok = float(np.mean(kin_rep.samples <= 1e-3))
    ks = dyn_rep.ks_distance(dyn_study["me-proj"])
    record(8, kin_ok >= 0.9 and ks <= 0.15,
           f"kinematic d=10 {kin_ok:.2f} of 50 within 1e-3 (>= 0.9), dynamic d=100 KS {ks:.3f} "
           "(<= 0.15)")


def _fd(f, z, h=1e-6):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def _rot(phi, x):
    c, s = np.cos(phi), np.sin(phi)
    out = np.array(x, dtype=float)
    out[0], out[1] = c * x[0] - s * x[1], s * x[0] + c * x[1]
    out[2] = x[2] + phi
    return out


def test_criterion_9_property_suites(kin_clean_surrogate):
    t0 = time.time()
    rng = np.random.default_rng(9)
    failures = []

    # dictionary round trip
    for dic in registry():
        X = np.column_stack([rng.uniform(-2, 2, (10_000, 2)), rng.uniform(-np.pi, np.pi, 10_000)])
        if dic.arity == 5:
            X = np.column_stack([X, rng.uniform(-0.5, 0.5, 10_000), rng.uniform(-2, 2, 10_000)])
        if dic.roundtrip_error(X) > 1e-12:
            failures.append(f"round trip {dic.name}")

    # cost gradients against central differences, 1000 points over all cost kinds
    specs = [CostSpec("me", 3), default_cost("me", 5), CostSpec("ce", 3), CostSpec("ce", 5),
             default_cost("ds", 3, dictionary=D5), default_cost("ds", 5, dictionary=D8)]
    worst = 0.0
    for i in range(1000):
        spec = specs[i % len(specs)]
        x = rng.uniform(-1.5, 1.5, spec.n)
        x[2] = rng.uniform(-np.pi, np.pi)
        u = rng.uniform(-1, 1, 2)
        z = spec.dictionary.lift(x) if spec.kind == "ds" else x
        g, gu = stage_gradient(spec, z, u)
        ref = np.concatenate([_fd(lambda zz: stage_cost(spec, zz, u), z),
                              _fd(lambda uu: stage_cost(spec, z, uu), u)])
        worst = max(worst, np.max(np.abs(np.concatenate([g, gu]) - ref))
                    / max(np.max(np.abs(ref)), 1e-3))
    if worst > 1e-6:
        failures.append(f"cost gradient rel. error {worst:.1e}")

    # step-map semigroup and rotational invariance
    zoh = 0.0
    for _ in range(1000):
        z = np.concatenate([rng.uniform(-3, 3, 3), rng.uniform([-0.5, -2], [0.5, 2])])
        u = rng.uniform([-0.5, -2], [0.5, 2])
        dt, phi = rng.uniform(0.001, 0.2), rng.uniform(-np.pi, np.pi)
        for step, s, w in ((kinematic_zoh_step, z[:3], z[3:]), (dynamic_zoh_step, z, u)):
            full = step(s, w, dt)
            half = step(step(s, w, dt / 2), w, dt / 2)
            turned = step(_rot(phi, s), w, dt)
            zoh = max(zoh, np.max(np.abs(full - half)), np.max(np.abs(turned - _rot(phi, full))))
    if zoh > 1e-12:
        failures.append(f"step map error {zoh:.1e}")

    # ECDF shape on every report of this module and one fresh kinematic study
    spec = OcpSpec(10, 0.1, default_cost("me", 3), surrogate=kin_clean_surrogate,
                   solver=STUDY_SOLVER)
    own = monte_carlo_closed_loop("kinematic", kin_clean_surrogate, [StudyConfig()], n=5,
                                  eval_time=1.0, horizon=10, seed=3)
    reps = REPORTS + own + [EcdfReport("ties", [0.0, 1.0, 1.0, np.inf])]
    bad = [r.label for r in reps if not (r.check() and r.cdf(np.inf) == 1.0
                                         and r.cdf(-1.0) == 0.0)]
    if bad:
        failures.append(f"ECDF shape {bad}")

    # bitwise determinism of sampling, fitting and closed loop
    recs = [sample_kinematic(SamplingSpec.kinematic(seed=4)) for _ in range(2)]
    if not np.array_equal(recs[0].poses, recs[1].poses):
        failures.append("sampling")
    surs = [fit_surrogate(D5, build_dataset(r, PostprocessSpec(window=1, dt=0.1)), drift=False)
            for r in recs]
    if not np.array_equal(surs[0].K, surs[1].K):
        failures.append("fit")
    runs = [closed_loop(spec, [0.4, -0.3, 1.0], 1.0) for _ in range(2)]
    if not (np.array_equal(runs[0].states, runs[1].states)
            and np.array_equal(runs[0].values, runs[1].values)):
        failures.append("closed loop")

    elapsed = time.time() - t0
    record(9, not failures, f"{len(reps)} ECDF reports, gradient rel. error {worst:.1e}, "
                            f"step map {zoh:.1e}, {elapsed:.0f} s"
           + (f"; failed: {failures}" if failures else ""))
