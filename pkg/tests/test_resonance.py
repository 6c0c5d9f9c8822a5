import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import brute_classes
from nlsgrowth import normal_form
from nlsgrowth.modes import ConvPotential, norm_sq, square_box
from nlsgrowth.resonance import (CLASSES, alt_sq, canonical, classify, enumerate_class, enumerate_rectangles, kappa0,
                                 scan_square, small_divisor, trivial_permutations)

lattice = st.tuples(st.integers(-30, 30), st.integers(-30, 30))


@pytest.fixture(scope="module")
def V_japanese():
    """v_n = 1 / (1 + |n|^2) on a box large enough for the examples."""
    return ConvPotential({n: 1 / (1 + norm_sq(n)) for n in square_box(4)}, s0=2.0, hs0_norm=1.0, decay_constant=1.0)


def test_small_divisor_examples(V_zero, V_japanese):
    assert small_divisor((0, 0), (2, 0), (2, 2), (0, 2), V_zero) == 0
    assert small_divisor((1, 0), (0, 0), (0, 1), (1, 1), V_japanese) == pytest.approx(-1 / 3, abs=1e-15)
    with pytest.raises(ValueError):
        small_divisor((1, 0), (0, 0), (0, 1), (2, 2), V_zero)


@given(lattice, lattice)
def test_small_divisor_pair_cancels(n1, n3):
    V = ConvPotential({n1: 0.7, n3: -0.2})
    assert small_divisor(n1, n1, n3, n3, V) == 0


def test_kappa0_examples(V_zero, V_decay):
    assert kappa0(V_zero) == 0
    tail = ConvPotential({}, s0=2.0, hs0_norm=1.0, decay_constant=1.0)
    assert kappa0(tail) == 10
    spike = ConvPotential({(12, 0): 0.5}, s0=2.0, hs0_norm=1.0, decay_constant=1.0)
    assert kappa0(spike) == 13
    assert kappa0(V_decay) == 6


def test_kappa0_scan_oracle():
    """Direct scan: largest |n| with a bound above 1/100, plus one."""
    V = ConvPotential({(3, 4): 0.02, (1, 0): -0.5}, s0=3.0, hs0_norm=1.0, decay_constant=0.5)
    worst = max(np.sqrt(norm_sq(n)) for n in square_box(40) if n != (0, 0) and V.bound(n) > 0.01)
    assert kappa0(V) == int(np.floor(worst)) + 1


def test_classify_examples(V_zero):
    assert classify((1, 0), (0, 0), (0, 1), (1, 1), V_zero, 0.3, 0).cls == "A1"
    t = classify((1, 0), (0, 1), (0, -1), (1, -2), V_zero, 0.3, 1)
    assert (t.alt_sq, t.cls) == (-4, "IPrime_ii")
    t = classify((0, 0), (1, 0), (1, 1), (0, 1), ConvPotential({(0, 0): 2.0}), 0.3, 1)
    assert t.rho == pytest.approx(2.0) and t.cls == "IPrime_i"
    # low mode, small divisor, off-diagonal
    assert classify((0, 0), (1, 0), (1, 1), (0, 1), V_zero, 0.3, 1).cls == "A0"
    # diagonal tuple n1 = n4
    assert classify((1, 0), (2, 0), (2, 0), (1, 0), V_zero, 0.3, 0).cls == "NonResonant"


def test_classify_rejects_bad_eta(V_zero):
    for eta in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            classify((1, 0), (0, 0), (0, 1), (1, 1), V_zero, eta, 0)


def test_tuple_json():
    t = classify((1, 0), (0, 1), (0, -1), (1, -2), ConvPotential(), 0.3, 1)
    d = json.loads(t.to_json())
    assert d == {"n": [[1, 0], [0, 1], [0, -1], [1, -2]], "rho": -4.0, "alt_sq": -4, "class": "IPrime_ii"}


def rect_oracle(box):
    pts = sorted(box)
    members = set(pts)
    out = set()
    for n1 in pts:
        for n2 in pts:
            for n3 in pts:
                n4 = (n1[0] - n2[0] + n3[0], n1[1] - n2[1] + n3[1])
                if n4 in members and n4 != n1 and n4 != n3 and alt_sq(n1, n2, n3, n4) == 0:
                    out.add(canonical((n1, n2, n3, n4)))
    return sorted(out)


@pytest.mark.parametrize("r", [1, 2])
def test_enumerate_rectangles_oracle(r):
    got = enumerate_rectangles(square_box(r))
    assert got == rect_oracle(square_box(r))
    assert all(t[3] != t[0] and t[3] != t[2] for t in got)


def test_enumerate_rectangles_trivial_box():
    assert enumerate_rectangles([(0, 0)]) == []
    assert enumerate_rectangles([]) == []


def test_trivial_permutations_share_class(V_decay):
    t = ((4, 1), (3, -2), (0, 1), (1, 4))
    cls = {classify(*p, V_decay, 0.3).cls for p in trivial_permutations(t)}
    rho = {round(classify(*p, V_decay, 0.3).rho, 12) for p in trivial_permutations(t)}
    assert len(cls) == 1 and len(rho) == 1


def test_enumerate_class(V_zero):
    box = square_box(2)
    a1 = enumerate_class((1, 1), "A1", box, V_zero, 0.3, 0)
    assert a1 and all(t.n4 == (1, 1) and t.cls == "A1" for t in a1)
    oracle = [(n1, n3) for n1 in box for n3 in box
              if (n1[0] + n3[0] - 1, n1[1] + n3[1] - 1) in set(box)
              and classify(n1, (n1[0] + n3[0] - 1, n1[1] + n3[1] - 1), n3, (1, 1), V_zero, 0.3, 0).cls == "A1"]
    assert len(a1) == len(oracle)
    assert enumerate_class((1, 1), "A1", [], V_zero, 0.3, 0) == []
    with pytest.raises(ValueError):
        enumerate_class((1, 1), "B2", box, V_zero, 0.3, 0)


@pytest.mark.parametrize("radius", [2, 3])
def test_scan_matches_oracle(radius, V_decay):
    got = scan_square(radius, V_decay, 0.3, 6)
    assert {c: got[c] for c in CLASSES} == brute_classes(radius, V_decay, 0.3, 6)


def test_scan_matches_box_tuples(V_decay):
    got = scan_square(3, V_decay, 0.3)
    bt = normal_form.box_tuples(square_box(3), V_decay, 0.3, 6)
    for c in CLASSES:
        assert got[c] == int(np.sum(bt.cls == CLASSES.index(c)))
    ip = np.isin(bt.cls, [CLASSES.index("IPrime_i"), CLASSES.index("IPrime_ii")])
    assert got["max_abs_F"] == pytest.approx(float(np.max(1 / np.abs(bt.rho[ip]))))
