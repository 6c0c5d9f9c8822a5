"""End-to-end acceptance checks.  Each test prints one ACCEPTANCE line; the
collected lines are repeated in the terminal summary."""
import json
import math
import time

import numpy as np
import pytest

from conftest import brute_classes
from test_dynamics import random_box_run
from test_lambda_set import mutation
from nlsgrowth import normal_form as nf
from nlsgrowth.cascade import (ExperimentConfig, SetDynamics, approximation_experiment, scaling_exponent,
                               sobolev_growth_report, truncated_rhs)
from nlsgrowth.cli import REPLAY_SAMPLES, main
from nlsgrowth.dynamics import gauge_backward, gauge_forward, rotate_backward, rotate_forward
from nlsgrowth.lambda_set import CONDITIONS, GenerationSet, growth_stats, reference_set, verify
from nlsgrowth.modes import AmplitudeField, mass, square_box
from nlsgrowth.resonance import CLASSES, alt_sq, enumerate_rectangles, scan_square, small_divisor
from nlsgrowth.toy_model import (lift_from_mtilde, rescale_solution, restrict_to_mtilde, rhs_residual, run_toy,
                                 slider_search, toy_mass, toy_rhs)


def elapsed(t0):
    return time.monotonic() - t0


def test_01_resonance_identities(record_acceptance, V_zero, V_decay):
    t0 = time.monotonic()
    worst_rho = worst_asq = 0
    count = 0
    for r in range(11):
        for t in enumerate_rectangles(square_box(r)):
            worst_asq = max(worst_asq, abs(alt_sq(*t)))
            worst_rho = max(worst_rho, abs(small_divisor(*t, V_zero)))
            count += 1
    agree = True
    for V, k0 in ((V_zero, 0), (V_zero, 3), (V_decay, 6)):
        got = scan_square(6, V, 0.3, k0)
        agree &= {c: got[c] for c in CLASSES} == brute_classes(6, V, 0.3, k0)
    secs = elapsed(t0)
    ok = worst_asq == 0 and worst_rho == 0 and agree and secs < 60
    record_acceptance(1, ok, f"{count} rectangles over radii 0-10 with rho = 0; radius-6 classes match oracle: "
                             f"{agree}; {secs:.1f} s")
    assert ok


def test_02_generator_bound(record_acceptance, V_decay):
    t0 = time.monotonic()
    s = scan_square(20, V_decay, 0.3)
    secs = elapsed(t0)
    ok = s["max_abs_F"] <= 4 and s["min_abs_rho_ii"] >= 0.5 and secs < 300
    record_acceptance(2, ok, f"max |F| = {s['max_abs_F']:.4f}, min |rho| case ii = {s['min_abs_rho_ii']:.3f}, "
                             f"{s['IPrime_i'] + s['IPrime_ii']} I' tuples; {secs:.1f} s")
    assert ok


def test_03_cancellation(record_acceptance, V_zero, V_decay):
    t0 = time.monotonic()
    reps = [nf.cancellation_check(square_box(6), V, 0.3, tol=1e-12) for V in (V_zero, V_decay)]
    secs = elapsed(t0)
    ok = all(r["passed"] and r["max_iprime_residual"] <= 1e-12 and r["max_mismatch"] <= 1e-12 for r in reps) and secs < 120
    record_acceptance(3, ok, "residual on I' " + ", ".join(f"{r['max_iprime_residual']:.1e}" for r in reps)
                      + "; mismatch elsewhere " + ", ".join(f"{r['max_mismatch']:.1e}" for r in reps) + f"; {secs:.1f} s")
    assert ok


def test_04_conservation(record_acceptance, V_decay):
    drifts = []
    for seed in range(3):
        sys_, tr = random_box_run(V_decay, seed)
        m = np.array([mass(f) for f in tr.states])
        h = np.array([sys_.hamiltonian(v) for v in tr.values])
        drifts.append((np.max(np.abs(m - m[0])) / m[0], np.max(np.abs(h - h[0])) / abs(h[0])))
    rng = np.random.default_rng(0)
    modes = [(1, 0), (3, -2), (40, 17), (123456789, -98765432)]
    worst = 0.0
    for _ in range(50):
        vals = rng.normal(size=4) + 1j * rng.normal(size=4)
        t = float(rng.uniform(-100, 100))
        g = AmplitudeField(dict(zip(modes, vals)), "Gauged")
        a = AmplitudeField(dict(zip(modes, vals)), "NormalForm")
        for f, img in ((g, gauge_forward(g, t)), (a, rotate_forward(a, V_decay, t))):
            worst = max(worst, max(abs(abs(img[n]) - abs(f[n])) / abs(f[n]) for n in modes))
        worst = max(worst, max(abs(abs(gauge_backward(gauge_forward(g, t), t)[n]) - abs(g[n])) / abs(g[n]) for n in modes))
        b = rotate_forward(a, V_decay, t)
        worst = max(worst, max(abs(abs(rotate_backward(b, V_decay, t)[n]) - abs(a[n])) / abs(a[n]) for n in modes))
    dm, dh = max(d[0] for d in drifts), max(d[1] for d in drifts)
    ok = dm <= 1e-8 and dh <= 1e-8 and worst <= 1e-15
    record_acceptance(4, ok, f"mass drift {dm:.2e}, Hamiltonian drift {dh:.2e} (20 modes, t <= 50); "
                             f"transform modulus error {worst:.1e}")
    assert ok


def test_05_certification(record_acceptance, tmp_path):
    lines = []
    ok = True
    for N in (3, 4, 5):
        conf = tmp_path / f"c{N}.json"
        conf.write_text(json.dumps({"N": N}))
        t0 = time.monotonic()
        code = main(["lambda", "certify", "--config", str(conf), "--out", str(tmp_path / f"o{N}"), "--quiet"])
        secs = elapsed(t0)
        doc = json.loads((tmp_path / f"o{N}" / "certified_set.json").read_text())
        C = GenerationSet.from_json(doc)
        sizes = {len(g) for g in C.generations}
        good = code == 0 and sizes == {2 ** (N - 1)} and C == reference_set(N) and secs < 600
        ok &= good
        lines.append(f"N={N}: {'ok' if good else 'FAIL'} in {secs:.0f} s")
    base = reference_set(3, certified=False)
    caught = []
    for cond in CONDITIONS:
        S, V = mutation(cond, base)
        rep = verify(S, V)
        if cond in rep.failed() and rep.results[cond]["witness"] is not None:
            caught.append(cond)
    ok &= caught == list(CONDITIONS)
    record_acceptance(5, ok, "; ".join(lines) + f"; mutations detected {len(caught)}/{len(CONDITIONS)}")
    assert ok


def test_06_growth_statistic(record_acceptance):
    S = reference_set(5)
    g = growth_stats(S, 2)
    direct = [sum((x * x + y * y) ** 2 for x, y in gen) for gen in S.generations]
    ok = g["ratio"] >= g["bound"] == 1 and g["S"] == direct
    record_acceptance(6, ok, f"S_4 / S_3 = {g['ratio']:.6g} >= {g['bound']}; direct sums match: {g['S'] == direct}")
    assert ok


def test_07_toy_transfer(record_acceptance):
    t0 = time.monotonic()
    res = slider_search(5, 3, 4, 0.05, time_budget=300.0)
    secs = elapsed(t0)
    start_share = abs(res.b0[2]) ** 2 / toy_mass(res.b0)
    tr = run_toy(res.b0, res.T0, REPLAY_SAMPLES, 1e-12, 1e-14)
    m = np.array([toy_mass(b) for b in tr.values])
    drift = float(np.max(np.abs(m - m[0])) / m[0])
    resid = {lam: rhs_residual(rescale_solution(tr, lam)) for lam in (0.5, 2.0, 10.0)}
    ok = (start_share >= 0.95 and res.achieved >= 0.9 and secs <= 300 and drift <= 1e-10
          and max(resid.values()) <= 1e-8)
    record_acceptance(7, ok, f"slot 3 share {start_share:.4f} at t=0, slot 4 share {res.achieved:.4f} at "
                             f"T0={res.T0:.3f} after {secs:.0f} s; mass drift {drift:.1e}; rescaling residuals "
                             + ", ".join(f"{v:.1e}" for v in resid.values()))
    assert ok


def test_08_reduction_identity(record_acceptance, V_decay):
    S = reference_set(5)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        b = (rng.normal(size=5) + 1j * rng.normal(size=5)) * rng.uniform(0.1, 2.0)
        got = restrict_to_mtilde(truncated_rhs(lift_from_mtilde(b, S), V_decay, box=S, t=float(rng.uniform(0, 50))), S)
        want = toy_rhs(b)
        worst = max(worst, float(np.max(np.abs(got - want)) / np.max(np.abs(b)) ** 3))
    ok = worst <= 1e-14
    record_acceptance(8, ok, f"100 states on the certified N=5 set, max error / |b|^3 = {worst:.1e}")
    assert ok


@pytest.fixture(scope="module")
def sweep_n4(V_decay):
    S = reference_set(4)
    cfg = ExperimentConfig(S, V_decay, lam=8.0)
    sysd = SetDynamics(S, V_decay)
    t0 = time.monotonic()
    slider = slider_search(4, cfg.start, cfg.end, cfg.eps, budget=cfg.slider_budget)
    out = {}
    for lam in (8.0, 16.0, 32.0):
        out[lam] = approximation_experiment(ExperimentConfig(S, V_decay, lam=lam), slider, sysd)
    return out, elapsed(t0)


def test_09_approximation_scaling(record_acceptance, sweep_n4):
    runs, secs = sweep_n4
    lams = sorted(runs)
    peaks = [runs[l].peak for l in lams]
    exponent = scaling_exponent(lams, peaks)
    largest = runs[lams[-1]]
    ok = (all(not r.failed for r in runs.values()) and peaks[0] > peaks[1] > peaks[2] and -3.5 <= exponent <= -2.5
          and largest.within_bound and secs < 1800)
    record_acceptance(9, ok, f"peaks {', '.join(f'{p:.3e}' for p in peaks)}; exponent {exponent:.3f}; "
                             f"largest lambda peak {largest.peak:.2e} <= {largest.bound:.2e}; {secs:.0f} s")
    assert ok


def test_10_sobolev_growth(record_acceptance, V_decay):
    S = reference_set(5)
    cfg = ExperimentConfig(S, V_decay, s=2.0, lam=16.0, gamma_stride=16)
    sysd = SetDynamics(S, V_decay)
    series = approximation_experiment(cfg, system=sysd)
    rep = sobolev_growth_report(cfg, series, sysd)
    for c in rep["chain"]:
        print(f"  {'ok  ' if c['holds'] else 'FAIL'} {c['name']}: {c['lhs']:.6g} vs {c['rhs']:.6g}")
    ok = not series.failed and rep["chain_holds"] and rep["ratio"] >= rep["target_ratio"]
    record_acceptance(10, ok, f"||r(T)|| / ||r(0)|| = {rep['ratio']:.4f} >= {rep['target_ratio']:.4f}; "
                              f"{sum(c['holds'] for c in rep['chain'])}/{len(rep['chain'])} chain inequalities hold")
    assert ok


def _strip_clock(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if not line.lstrip().startswith('"wall_clock"'))


def test_11_reproducibility(record_acceptance, tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"N": 4, "lambda": 16, "gamma_stride": 16}))
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["cascade", "run", "--config", str(conf), "--seed", "3", "--out", str(o), "--quiet"]) for o in outs]
    names = sorted(p.name for p in outs[0].iterdir())
    same = names == sorted(p.name for p in outs[1].iterdir())
    for name in names:
        a, b = ((o / name).read_bytes() for o in outs)
        if name == "run.json":
            a, b = _strip_clock(a.decode()), _strip_clock(b.decode())
        same &= a == b
    ok = same and codes[0] == codes[1] == 0
    record_acceptance(11, ok, f"{len(names)} files identical across two runs (wall_clock excluded): {same}")
    assert ok
