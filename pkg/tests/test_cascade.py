import cmath
import csv
import json

import numpy as np
import pytest

from conftest import symbolic_field
from nlsgrowth import normal_form as nf
from nlsgrowth.cascade import (ExperimentConfig, QuinticProbe, SetDynamics, approximation_experiment, compose_back,
                               embed_beta_lambda, family_rhs, remainder_J_rhs, scaling_exponent,
                               sobolev_growth_report, triple_table, truncated_rhs, write_outputs,
                               z_decomposition_probe)
from nlsgrowth.dynamics import Trajectory
from nlsgrowth.lambda_set import reference_set
from nlsgrowth.modes import AmplitudeField, square_box
from nlsgrowth.resonance import classify, kappa0
from nlsgrowth.toy_model import SliderResult, lift_from_mtilde, toy_mass, toy_rhs

SMALL_SET = sorted([(2, 0), (0, 1), (2, 1), (0, 0), (1, 2)])


@pytest.fixture(scope="module")
def S3():
    return reference_set(3)


def restrict(P, modes, k):
    """Terms of P with at least k factors in ``modes``."""
    Q = nf.PolyHamiltonian()
    Q.coeffs = {key: c for key, c in P.coeffs.items() if sum((f[1], f[2]) in modes for f in key) >= k}
    return Q


def quintic_oracle(V, k0, resonant):
    """Field of 1/2 {G' + G~, F} over the small set, built symbolically on a box that
    contains every intermediate mode, keeping monomials with all six modes in the set."""
    lam = set(SMALL_SET)
    box = square_box(6)
    bt = nf.box_tuples(box, V, 0.3, k0)
    H = nf.gauged_quartic(bt) + nf.resonant_quartic(bt)
    F = nf.build_F(box, V, 0.3, k0, bt=bt)
    K = restrict(nf.poisson_bracket(restrict(H, lam, 3), restrict(F, lam, 3)).scale(0.5), lam, 6)
    if resonant:
        total = lambda key: sum((-1 if cj else 1) * V.omega((x, y)) for cj, x, y in key)
        K.coeffs = {k: c for k, c in K.coeffs.items() if abs(total(k)) < 1e-9}
    return K, box


@pytest.mark.parametrize("resonant", [True, False])
@pytest.mark.parametrize("V_name,k0", [("V_decay", 1), ("V_decay", None), ("V_zero", 0)])
def test_quintic_probe_matches_symbolic(V_name, k0, resonant, request):
    V = request.getfixturevalue(V_name)
    k0 = kappa0(V) if k0 is None else k0
    K, _ = quintic_oracle(V, k0, resonant)
    a = np.random.default_rng(1).normal(size=5) + 1j * np.random.default_rng(2).normal(size=5)
    want = symbolic_field(K, SMALL_SET, a)
    got = QuinticProbe(triple_table(SMALL_SET, V, 0.3, k0), resonant=resonant)(a)
    assert np.max(np.abs(want)) > 1
    assert np.max(np.abs(got - want)) <= 1e-13 * np.max(np.abs(want))


def test_quintic_probe_matches_box_commutator(V_decay):
    """With every intermediate mode in the box, the commutator of the cubic fields
    agrees with the probe on set-supported states at set modes."""
    k0 = 1
    sysb = nf.NormalFormSystem.build(square_box(6), V_decay, 0.3, k0)
    a = np.random.default_rng(3).normal(size=5) + 1j * np.random.default_rng(4).normal(size=5)
    where = {n: i for i, n in enumerate(sysb.modes)}
    ab = np.zeros(len(sysb.modes), dtype=complex)
    ab[[where[n] for n in SMALL_SET]] = a
    box_q = sysb.quintic_field(ab)[[where[n] for n in SMALL_SET]]
    got = QuinticProbe(triple_table(SMALL_SET, V_decay, 0.3, k0), resonant=False)(a)
    assert np.max(np.abs(box_q - got)) <= 1e-13 * np.max(np.abs(got))


def test_quintic_jvp(V_decay):
    P = QuinticProbe(triple_table(SMALL_SET, V_decay, 0.3, 1), resonant=False)
    rng = np.random.default_rng(5)
    a, v = (rng.normal(size=5) + 1j * rng.normal(size=5) for _ in range(2))
    h = 1e-6
    fd = (P(a + h * v) - P(a - h * v)) / (2 * h)
    assert np.allclose(P.jvp(a, v), fd, rtol=0, atol=1e-6)
    assert np.all(P(np.zeros(5)) == 0)


def test_quintic_empty_set(V_decay):
    P = QuinticProbe(triple_table([(1, 0)], V_decay, 0.3, 0))
    assert len(P) == 0 and np.all(P(np.ones(1)) == 0)


def brute_truncated(beta, V, eta, k0, t):
    sup = sorted(beta.support())
    out = {}
    for n1 in sup:
        for n2 in sup:
            for n3 in sup:
                n = (n1[0] - n2[0] + n3[0], n1[1] - n2[1] + n3[1])
                term = beta[n1] * np.conj(beta[n2]) * beta[n3]
                if n1 == n2 == n3:
                    w = -1.0
                else:
                    c = classify(n1, n2, n3, n, V, eta, k0)
                    w = {"A1": 1.0, "A0": cmath.exp(1j * c.rho * t)}.get(c.cls, 0.0)
                out[n] = out.get(n, 0j) + 1j * w * term
    return out


@pytest.mark.parametrize("V_name,k0,t", [("V_zero", 0, 0.0), ("V_decay", 1, 0.7), ("V_small", 0, 2.0)])
def test_truncated_rhs_oracle(V_name, k0, t, request):
    V = request.getfixturevalue(V_name)
    rng = np.random.default_rng(6)
    sup = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (-1, 2)]
    beta = AmplitudeField(dict(zip(sup, rng.normal(size=6) + 1j * rng.normal(size=6))), "Rotating")
    got = truncated_rhs(beta, V, 0.3, k0, t)
    want = brute_truncated(beta, V, 0.3, k0, t)
    assert all(abs(got[n] - want.get(n, 0)) <= 1e-13 for n in got.support() | set(want))


def test_truncated_rhs_zero(V_decay, S3):
    assert len(truncated_rhs(AmplitudeField({}, "Rotating"), V_decay, box=S3)) == 0


def test_truncated_rhs_rejects_support_outside_box(V_decay, S3):
    with pytest.raises(ValueError):
        truncated_rhs(AmplitudeField({(1, 1): 1.0}, "Rotating"), V_decay, box=S3)


def test_truncated_lift_equals_toy(V_decay, S3):
    rng = np.random.default_rng(7)
    for _ in range(5):
        b = rng.normal(size=3) + 1j * rng.normal(size=3)
        got = truncated_rhs(lift_from_mtilde(b, S3), V_decay, box=S3, t=1.3)
        want = lift_from_mtilde(toy_rhs(b), S3)
        assert all(abs(got[n] - want[n]) <= 1e-12 * np.max(np.abs(b)) ** 3 for n in S3.modes())


def test_family_rhs_matches_truncated(V_decay, S3):
    rng = np.random.default_rng(8)
    modes = S3.modes()
    beta = AmplitudeField(dict(zip(modes, rng.normal(size=len(modes)) + 1j * rng.normal(size=len(modes)))),
                          "Rotating")
    got, want = family_rhs(beta, S3), truncated_rhs(beta, V_decay, box=S3)
    assert all(abs(got[n] - want[n]) <= 1e-12 for n in modes)
    with pytest.raises(ValueError):
        family_rhs(AmplitudeField({(1, 1): 1.0}, "Rotating"), S3)


def test_J_vanishes(V_zero, V_small):
    rng = np.random.default_rng(9)
    sup = [(0, 0), (1, 0), (0, 1), (1, 1)]
    beta = AmplitudeField(dict(zip(sup, rng.normal(size=4) + 1j * rng.normal(size=4))), "Rotating")
    assert all(v == 0 for v in remainder_J_rhs(beta, V_zero, 5.0, 0.3, 0).entries.values())
    assert all(v == 0 for v in remainder_J_rhs(beta, V_small, 0.0, 0.3, 0).entries.values())


def test_J_bound(V_small):
    rng = np.random.default_rng(10)
    sup = [(0, 0), (1, 0), (0, 1), (1, 1), (2, 1), (1, 2)]
    beta = AmplitudeField(dict(zip(sup, rng.normal(size=6) + 1j * rng.normal(size=6))), "Rotating")
    tt = triple_table(sup, V_small, 0.3, 0)
    rho_max = float(np.max(np.abs(tt.rho[tt.cls == nf.CLS_CODE["A1"]])))
    assert rho_max > 0
    l1 = float(np.sum(np.abs(beta.values(sup))))
    for t in (0.1, 1.0, 10.0):
        J = remainder_J_rhs(beta, V_small, t, 0.3, 0)
        size = sum(abs(v) for v in J.entries.values())
        assert 0 < size <= rho_max * t * l1 ** 3


def test_embed(S3):
    tr = Trajectory(np.array([0.0, 1.0]), np.array([[1, 0, 0], [0.5, 0.5j, 0.1]], dtype=complex))
    emb = embed_beta_lambda(S3, tr, 4.0)
    assert np.array_equal(emb.times, [0.0, 16.0])
    gen = S3.generation_of()
    for i, n in enumerate(emb.modes):
        assert emb.values[1, i] == tr.values[1, gen[n] - 1] / 4
    with pytest.raises(ValueError):
        embed_beta_lambda(S3, tr, 0.0)
    with pytest.raises(ValueError):
        embed_beta_lambda(reference_set(4), tr, 2.0)


def fake_slider(N, T0=1.0):
    b = np.zeros(N, dtype=complex)
    b[N - 2], b[N - 1] = 0.95, 0.3j
    b /= np.sqrt(toy_mass(b))
    return SliderResult(b, T0, 0.0, 1.0, True, N - 1, N)


def test_config_validation(S3, V_decay):
    for bad in ({"lam": 0}, {"s": 1.0}, {"dynamics": "full"}, {"eps": 1.0}, {"samples": 4}, {"gamma_stride": 0},
                {"start": 3, "end": 2}):
        with pytest.raises(ValueError):
            ExperimentConfig(S3, V_decay, **bad)
    cfg = ExperimentConfig(S3, V_decay)
    assert (cfg.start, cfg.end) == (1, 2)


@pytest.mark.parametrize("dynamics", ["truncated", "truncated+J"])
def test_zero_potential_truncated_deviation_vanishes(S3, V_zero, dynamics):
    cfg = ExperimentConfig(S3, V_zero, lam=8.0, dynamics=dynamics, samples=16)
    series = approximation_experiment(cfg, slider=fake_slider(3))
    assert not series.failed
    assert np.all(series.l1_deviation == 0)


def test_quintic_deviation_scaling(S3, V_decay):
    peaks = []
    for lam in (8.0, 16.0):
        cfg = ExperimentConfig(S3, V_decay, lam=lam, samples=16)
        series = approximation_experiment(cfg, slider=fake_slider(3))
        assert not series.failed and series.within_bound
        peaks.append(series.peak)
    assert 0 < peaks[1] < peaks[0]
    assert scaling_exponent([8, 16], peaks) == pytest.approx(-3, abs=0.2)


def test_scaling_exponent_synthetic():
    lams = np.array([4.0, 8.0, 16.0, 32.0])
    assert scaling_exponent(lams, 7.0 * lams ** -3) == pytest.approx(-3.0)


def test_z_probe_zero_deviation(S3, V_decay):
    cfg = ExperimentConfig(S3, V_decay, lam=8.0, samples=16)
    series = approximation_experiment(cfg, slider=fake_slider(3))
    zeros = [np.zeros(12, dtype=complex)] * 2
    rep = z_decomposition_probe(cfg, series, xi_samples=zeros, every=15)
    assert len(rep["rows"]) == 2
    assert all(r["Z1xi"] == 0 and r["Z2"] == 0 and r["Z0"] > 0 for r in rep["rows"])
    assert rep["bootstrap_ok"]


def test_compose_back_phase_equivariant(S3, V_decay):
    sysd = SetDynamics(S3, V_decay)
    rng = np.random.default_rng(11)
    beta = (rng.normal(size=12) + 1j * rng.normal(size=12)) / 40
    r, _ = compose_back(beta, sysd, 0.3)
    rp, _ = compose_back(cmath.exp(0.9j) * beta, sysd, 0.3)
    g = sysd.gamma_field().modes
    assert np.allclose(rp.values(g), cmath.exp(0.9j) * r.values(g), rtol=0, atol=1e-15)


def test_write_outputs(tmp_path, S3, V_decay):
    cfg = ExperimentConfig(S3, V_decay, lam=8.0, samples=16, gamma_stride=4)
    series = approximation_experiment(cfg, slider=fake_slider(3))
    rep = sobolev_growth_report(cfg, series)
    assert rep["initial_Hs"] > 0 and len(rep["series"]) == len(series.times)
    write_outputs(tmp_path, cfg, series, rep, extra={"note": 1}, wall_clock=0.5)
    heads = {}
    for name in ("deviation.csv", "sobolev.csv", "generations.csv"):
        with open(tmp_path / name) as fh:
            rows = list(csv.reader(fh))
        heads[name] = rows[0]
        assert len(rows) == len(series.times) + 1
    assert heads["deviation.csv"] == ["t", "l1_dev", "bound"]
    assert heads["sobolev.csv"] == ["t", "H^s", "mass", "energy"]
    assert heads["generations.csv"] == ["t", "share_1", "share_2", "share_3"]
    doc = json.loads((tmp_path / "run.json").read_text())
    assert doc["note"] == 1 and doc["wall_clock"] == 0.5
    assert doc["config"]["lambda"] == 8.0 and "chain" in doc["sobolev"]
