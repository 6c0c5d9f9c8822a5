"""Sparse polynomial Hamiltonians, the normal-form generator and its Lie transform.

Monomials are products of a_n and conj(a_n); a factor is ``(conj, x, y)`` with
``conj`` 0 or 1 and factors sorted, so equal monomials have equal keys.  The
Poisson bracket is {H, F} = 2i sum_n (dH/da_n dF/dabar_n - dH/dabar_n dF/da_n),
under which the Hamiltonian field of H is adot_n = 2i dH/dabar_n = {a_n, H}.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .dynamics import integrate
from .modes import AmplitudeField, ConvPotential, Freq, freq, l1_norm
from .resonance import CLASSES, _check_eta, kappa0 as kappa0_of

F_BOUND = 4.0
CLS_CODE = {c: i for i, c in enumerate(CLASSES)}


class NormalFormError(RuntimeError):
    pass


class PolyHamiltonian:
    """Finite sum of coefficient * monomial, keyed by the sorted factor tuple."""

    def __init__(self, terms=None):
        self.coeffs: dict = {}
        if terms:
            items = terms.items() if isinstance(terms, dict) else ((tuple(f), c) for c, f in terms)
            for key, c in items:
                key = tuple(sorted((int(cj), int(x), int(y)) for cj, x, y in key))
                self.coeffs[key] = self.coeffs.get(key, 0j) + complex(c)

    def __len__(self):
        return len(self.coeffs)

    @property
    def terms(self) -> list:
        return [(c, list(k)) for k, c in sorted(self.coeffs.items())]

    @staticmethod
    def degree(key) -> int:
        return len(key)

    def degrees(self) -> dict:
        out = defaultdict(int)
        for k in self.coeffs:
            out[len(k)] += 1
        return dict(out)

    def __add__(self, other):
        out = PolyHamiltonian()
        out.coeffs = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out.coeffs[k] = out.coeffs.get(k, 0j) + c
        return out

    def scale(self, s: complex):
        out = PolyHamiltonian()
        out.coeffs = {k: s * c for k, c in self.coeffs.items()}
        return out

    def __sub__(self, other):
        return self + other.scale(-1)

    def pruned(self, tol: float = 0.0):
        out = PolyHamiltonian()
        out.coeffs = {k: c for k, c in self.coeffs.items() if abs(c) > tol}
        return out

    def modes(self) -> set:
        return {(x, y) for k in self.coeffs for _, x, y in k}

    def momentum_violations(self) -> list:
        bad = []
        for k in self.coeffs:
            sx = sum(x if cj == 0 else -x for cj, x, _ in k)
            sy = sum(y if cj == 0 else -y for cj, _, y in k)
            if sx or sy:
                bad.append(k)
        return bad

    def conjugate(self):
        out = PolyHamiltonian()
        out.coeffs = {tuple(sorted((1 - cj, x, y) for cj, x, y in k)): c.conjugate() for k, c in self.coeffs.items()}
        return out

    def is_real(self, tol: float = 1e-12) -> bool:
        """Closed under conjugating every factor and the coefficient."""
        conj = self.conjugate().coeffs
        keys = set(conj) | set(self.coeffs)
        return all(abs(self.coeffs.get(k, 0j) - conj.get(k, 0j)) <= tol * max(1.0, abs(conj.get(k, 0j))) for k in keys)

    def evaluate(self, a: AmplitudeField) -> complex:
        total = 0j
        for k, c in self.coeffs.items():
            v = c
            for cj, x, y in k:
                z = a[(x, y)]
                v *= z.conjugate() if cj else z
            total += v
        return total

    def derivatives(self) -> dict:
        """factor -> list of (remaining key, coefficient) for d/d(factor)."""
        out = defaultdict(list)
        for k, c in self.coeffs.items():
            seen = set()
            for idx, f in enumerate(k):
                if f in seen:
                    continue
                seen.add(f)
                m = k.count(f)
                out[f].append((k[:idx] + k[idx + 1:], m * c))
        return out

    def to_jsonl(self) -> str:
        lines = [json.dumps({"re": c.real, "im": c.imag, "factors": [list(f) for f in k]})
                 for k, c in sorted(self.coeffs.items())]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str):
        out = cls()
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                key = tuple(sorted(tuple(f) for f in d["factors"]))
                out.coeffs[key] = out.coeffs.get(key, 0j) + complex(d["re"], d["im"])
        return out


def _merge(k1, k2):
    return tuple(sorted(k1 + k2))


def poisson_bracket(H: PolyHamiltonian, F: PolyHamiltonian) -> PolyHamiltonian:
    dH, dF = H.derivatives(), F.derivatives()
    out = defaultdict(complex)
    for (cj, x, y), hs in dH.items():
        other = (1 - cj, x, y)
        if other not in dF:
            continue
        sign = 2j if cj == 0 else -2j
        fs = dF[other]
        for kh, ch in hs:
            for kf, cf in fs:
                out[_merge(kh, kf)] += sign * ch * cf
    res = PolyHamiltonian()
    res.coeffs = dict(out)
    return res


def quadratic_part(modes, V: ConvPotential) -> PolyHamiltonian:
    """D = 1/2 sum (|n|^2 + v_n) |a_n|^2."""
    P = PolyHamiltonian()
    P.coeffs = {((0, x, y), (1, x, y)): complex(0.5 * V.omega((x, y))) for x, y in modes}
    return P


# ----------------------------------------------------------------------------
# quartic tuples on a box


@dataclass
class BoxTuples:
    modes: list  # sorted Freq list
    i: np.ndarray  # ordered tuple (n1, n2, n3, n4) as box indices
    j: np.ndarray
    k: np.ndarray
    l: np.ndarray
    rho: np.ndarray
    asq: np.ndarray
    cls: np.ndarray  # codes into CLASSES

    @property
    def offdiag(self) -> np.ndarray:
        return (self.i != self.l) & (self.k != self.l)

    def tuple_at(self, t: int) -> tuple:
        m = self.modes
        return (m[self.i[t]], m[self.j[t]], m[self.k[t]], m[self.l[t]])


def box_tuples(box, V: ConvPotential, eta: float, k0: int) -> BoxTuples:
    """Every ordered momentum-conserving tuple with all four modes in the box,
    classified exactly as ``resonance.classify``."""
    _check_eta(eta)
    modes = sorted({freq(*n) for n in box})
    K = len(modes)
    empty = np.zeros(0, dtype=np.int64)
    if K == 0:
        return BoxTuples(modes, empty, empty, empty, empty, np.zeros(0), empty, empty)
    xy = np.array(modes, dtype=np.int64)
    lo = xy.min(0)
    span = xy.max(0) - lo + 1
    grid = -np.ones(span, dtype=np.int64)
    grid[xy[:, 0] - lo[0], xy[:, 1] - lo[1]] = np.arange(K)
    sq = (xy ** 2).sum(1)
    vv = np.array([V.v(n) for n in modes])
    low = sq < k0 * k0
    parts = []
    for j in range(K):
        t = xy[:, None, :] - xy[j] + xy[None, :, :]  # n1 - n2 + n3
        gx, gy = t[..., 0] - lo[0], t[..., 1] - lo[1]
        inside = (gx >= 0) & (gx < span[0]) & (gy >= 0) & (gy < span[1])
        ii, kk = np.nonzero(inside)
        ll = grid[gx[ii, kk], gy[ii, kk]]
        ok = ll >= 0
        parts.append((ii[ok], np.full(ok.sum(), j), kk[ok], ll[ok]))
    i, j, k, l = (np.concatenate(p).astype(np.int64) for p in zip(*parts))
    asq = sq[i] - sq[j] + sq[k] - sq[l]
    rho = asq + ((vv[i] - vv[j]) + (vv[k] - vv[l]))
    anylow = low[i] | low[j] | low[k] | low[l]
    offd = (i != l) & (k != l)
    cls = np.full(len(i), CLS_CODE["NonResonant"], dtype=np.int64)
    big = np.abs(rho) > eta
    cls[anylow & big] = CLS_CODE["IPrime_i"]
    cls[anylow & ~big & offd] = CLS_CODE["A0"]
    cls[~anylow & (asq != 0)] = CLS_CODE["IPrime_ii"]
    cls[~anylow & (asq == 0) & offd] = CLS_CODE["A1"]
    return BoxTuples(modes, i, j, k, l, rho, asq, cls)


def _quartic_from_tuples(bt: BoxTuples, mask: np.ndarray, coef: np.ndarray) -> PolyHamiltonian:
    """sum over ordered tuples t in mask of coef[t] a_n1 abar_n2 a_n3 abar_n4, collected."""
    K = len(bt.modes)
    i, j, k, l = bt.i[mask], bt.j[mask], bt.k[mask], bt.l[mask]
    c = np.asarray(coef)[mask] if np.ndim(coef) else np.full(len(i), coef, dtype=complex)
    a1, a2 = np.minimum(i, k), np.maximum(i, k)
    b1, b2 = np.minimum(j, l), np.maximum(j, l)
    key = ((a1 * K + a2) * K + b1) * K + b2
    uk, inv = np.unique(key, return_inverse=True)
    re = np.bincount(inv, c.real, len(uk))
    im = np.bincount(inv, c.imag, len(uk))
    m = bt.modes
    out = PolyHamiltonian()
    rest, d2 = np.divmod(uk, K)
    rest, d1 = np.divmod(rest, K)
    c2, c1 = np.divmod(rest, K)
    for p, q, r, s, x, y in zip(c2.tolist(), c1.tolist(), d1.tolist(), d2.tolist(), re.tolist(), im.tolist()):
        key_ = ((0,) + m[p], (0,) + m[q], (1,) + m[r], (1,) + m[s])
        out.coeffs[tuple(sorted(key_))] = complex(x, y)
    return out


def self_terms(modes, coef: float = -0.25) -> PolyHamiltonian:
    P = PolyHamiltonian()
    P.coeffs = {((0, x, y), (0, x, y), (1, x, y), (1, x, y)): complex(coef) for x, y in modes}
    return P


def gauged_quartic(bt: BoxTuples) -> PolyHamiltonian:
    """G' = 1/4 sum over tuples with n1, n3 != n4, minus 1/4 sum |a_n|^4."""
    return _quartic_from_tuples(bt, bt.offdiag, 0.25) + self_terms(bt.modes)


def _resolve_k0(V, k0):
    return kappa0_of(V) if k0 is None else int(k0)


def build_F(box, V: ConvPotential, eta: float, kappa0: int | None = None, corrupt: float = 0.0,
            bt: BoxTuples | None = None) -> PolyHamiltonian:
    """F = 1/4 sum over I' tuples of (-i / rho) a_n1 abar_n2 a_n3 abar_n4.

    ``corrupt`` multiplies one coefficient by (1 + corrupt), for fault injection.
    """
    k0 = _resolve_k0(V, kappa0)
    bt = box_tuples(box, V, eta, k0) if bt is None else bt
    ip = (bt.cls == CLS_CODE["IPrime_i"]) | (bt.cls == CLS_CODE["IPrime_ii"])
    if not ip.any():
        return PolyHamiltonian()
    Fc = np.zeros(len(bt.i), dtype=complex)
    Fc[ip] = -1j / bt.rho[ip]
    worst = int(np.argmax(np.abs(Fc)))
    if abs(Fc[worst]) > F_BOUND:
        raise NormalFormError(f"|F| = {abs(Fc[worst]):.6g} > {F_BOUND} at {bt.tuple_at(worst)}")
    if corrupt:
        first = int(np.nonzero(ip)[0][0])
        Fc[first] *= 1 + corrupt
    return _quartic_from_tuples(bt, ip, 0.25 * Fc)


def max_abs_F(box, V: ConvPotential, eta: float, kappa0: int | None = None) -> float:
    bt = box_tuples(box, V, eta, _resolve_k0(V, kappa0))
    ip = (bt.cls == CLS_CODE["IPrime_i"]) | (bt.cls == CLS_CODE["IPrime_ii"])
    return float(np.max(1 / np.abs(bt.rho[ip]))) if ip.any() else 0.0


def resonant_quartic(bt: BoxTuples) -> PolyHamiltonian:
    """G1~ + G2~: the A0 and A1 tuples with weight 1/4, plus -1/4 |a_n|^4."""
    keep = (bt.cls == CLS_CODE["A0"]) | (bt.cls == CLS_CODE["A1"])
    return _quartic_from_tuples(bt, keep, 0.25) + self_terms(bt.modes)


def cancellation_check(box, V: ConvPotential, eta: float, kappa0: int | None = None, tol: float = 1e-12,
                       corrupt: float = 0.0) -> dict:
    """Compare G' + {D, F} with G1~ + G2~ term by term."""
    k0 = _resolve_k0(V, kappa0)
    bt = box_tuples(box, V, eta, k0)
    counts = {c: int(np.sum(bt.cls == CLS_CODE[c])) for c in CLASSES}
    report = {"box_modes": len(bt.modes), "kappa0": k0, "eta": eta, "counts": counts,
              "max_iprime_residual": 0.0, "max_mismatch": 0.0, "offending": None, "passed": True}
    if not bt.modes:
        return report
    F = build_F(box, V, eta, k0, corrupt=corrupt, bt=bt)
    lhs = gauged_quartic(bt) + poisson_bracket(quadratic_part(bt.modes, V), F)
    rhs = resonant_quartic(bt)
    ip = (bt.cls == CLS_CODE["IPrime_i"]) | (bt.cls == CLS_CODE["IPrime_ii"])
    ip_keys = set(_quartic_from_tuples(bt, ip, 1.0).coeffs)
    worst_ip, worst_other = 0.0, 0.0
    offending = None
    for key in set(lhs.coeffs) | set(rhs.coeffs):
        d = abs(lhs.coeffs.get(key, 0j) - rhs.coeffs.get(key, 0j))
        if key in ip_keys:
            d_ip = abs(lhs.coeffs.get(key, 0j))
            if d_ip > worst_ip:
                worst_ip = d_ip
            if d_ip > tol and offending is None:
                offending = {"monomial": [list(f) for f in key], "kind": "IPrime", "coefficient": [lhs.coeffs[key].real, lhs.coeffs[key].imag]}
        else:
            worst_other = max(worst_other, d)
            if d > tol and offending is None:
                offending = {"monomial": [list(f) for f in key], "kind": "resonant", "difference": d}
    report.update(max_iprime_residual=worst_ip, max_mismatch=worst_other, offending=offending,
                  passed=offending is None, iprime_monomials=len(ip_keys), surviving_monomials=len(rhs))
    return report


def format_cancellation_report(rep: dict) -> str:
    lines = [f"box modes: {rep['box_modes']}  kappa0: {rep['kappa0']}  eta: {rep['eta']}"]
    for c, n in rep["counts"].items():
        lines.append(f"  {c:12s} {n}")
    lines.append(f"max |coefficient| on I' monomials: {rep['max_iprime_residual']:.3e}")
    lines.append(f"max mismatch on resonant monomials: {rep['max_mismatch']:.3e}")
    lines.append("PASS" if rep["passed"] else f"FAIL at {rep['offending']}")
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# compiled vector fields


class CubicField:
    """Vector field out[n] = sum coef * a_x * conj(a_y) * a_z over stored terms."""

    def __init__(self, modes, x, y, z, out, coef):
        self.modes = list(modes)
        self.index = {n: i for i, n in enumerate(self.modes)}
        self.x, self.y, self.z, self.out = (np.asarray(v, dtype=np.int64) for v in (x, y, z, out))
        self.coef = np.asarray(coef, dtype=complex)

    @classmethod
    def from_quartic(cls, H: PolyHamiltonian, modes=None):
        """Hamiltonian field adot_n = 2i dH/dabar_n of a quartic H."""
        modes = sorted(H.modes()) if modes is None else list(modes)
        idx = {n: i for i, n in enumerate(modes)}
        x, y, z, out, coef = [], [], [], [], []
        for key, c in H.coeffs.items():
            if len(key) != 4:
                raise ValueError("from_quartic needs a homogeneous quartic")
            plain = [idx[(f[1], f[2])] for f in key if f[0] == 0]
            bars = [idx[(f[1], f[2])] for f in key if f[0] == 1]
            if len(plain) != 2 or len(bars) != 2:
                raise ValueError("monomial is not of type a a abar abar")
            for r, s in ((bars[0], bars[1]), (bars[1], bars[0])):
                x.append(plain[0])
                y.append(s)
                z.append(plain[1])
                out.append(r)
                coef.append(2j * c)
        return cls(modes, x, y, z, out, coef)

    def __call__(self, a: np.ndarray) -> np.ndarray:
        w = self.coef * a[self.x] * np.conj(a[self.y]) * a[self.z]
        return self._scatter(w)

    def _scatter(self, w):
        K = len(self.modes)
        return np.bincount(self.out, w.real, K) + 1j * np.bincount(self.out, w.imag, K)

    def jvp(self, a: np.ndarray, v: np.ndarray) -> np.ndarray:
        ax, ay, az = a[self.x], np.conj(a[self.y]), a[self.z]
        vx, vy, vz = v[self.x], np.conj(v[self.y]), v[self.z]
        return self._scatter(self.coef * (vx * ay * az + ax * vy * az + ax * ay * vz))

    def hvp(self, a: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Second derivative D^2 f(a)[v, w]."""
        A = (a[self.x], np.conj(a[self.y]), a[self.z])
        Vv = (v[self.x], np.conj(v[self.y]), v[self.z])
        W = (w[self.x], np.conj(w[self.y]), w[self.z])
        t = 0
        for p in range(3):
            for q in range(3):
                if p == q:
                    continue
                r = 3 - p - q
                t = t + Vv[p] * W[q] * A[r]
        return self._scatter(self.coef * t)

    def to_array(self, f: AmplitudeField) -> np.ndarray:
        extra = f.support() - set(self.index)
        if extra:
            raise ValueError(f"state leaves the box, e.g. {sorted(extra)[0]}")
        return f.values(self.modes)


def lie_transform(state: AmplitudeField, F: PolyHamiltonian | None, order: int | None = None, time: float = 1.0,
                  max_l1: float = 1.0, rel_tol: float = 1e-12, abs_tol: float = 1e-15,
                  field: CubicField | None = None) -> AmplitudeField:
    """Time-``time`` map of the Hamiltonian flow of F.

    ``order`` None integrates the flow; 1, 2 or 3 use the Taylor series of the flow
    in time up to that order (Id + t X + t^2/2 DX.X + ...).  A precompiled
    ``field`` replaces F.
    """
    if order not in (None, 1, 2, 3):
        raise ValueError("order must be None, 1, 2 or 3")
    if l1_norm(state) > max_l1:
        raise NormalFormError(f"l1 norm {l1_norm(state):.3g} exceeds the transform radius {max_l1}")
    if field is None and F is None:
        raise ValueError("need a generator or a compiled field")
    X = CubicField.from_quartic(F) if field is None else field
    if not len(X.coef) or not len(state):
        return state
    support = state.support() - set(X.index)
    if support:
        # modes outside the generator's support do not move
        X = CubicField(sorted(set(X.modes) | support), *_reindex(X, sorted(set(X.modes) | support)))
    a = X.to_array(state)
    if order is None:
        f = (lambda t, y: X(y)) if time >= 0 else (lambda t, y: -X(y))
        tr = integrate(f, a, (0.0, abs(time)), rel_tol, abs_tol)
        out = tr.values[-1]
    else:
        t = time
        f1 = X(a)
        out = a + t * f1
        if order >= 2:
            f2 = X.jvp(a, f1)
            out = out + t * t / 2 * f2
        if order >= 3:
            f3 = X.hvp(a, f1, f1) + X.jvp(a, f2)
            out = out + t ** 3 / 6 * f3
    return AmplitudeField.from_arrays(X.modes, out, state.frame)


def _reindex(X: CubicField, modes):
    idx = {n: i for i, n in enumerate(modes)}
    m = np.array([idx[n] for n in X.modes], dtype=np.int64)
    return m[X.x], m[X.y], m[X.z], m[X.out], X.coef


def cubic_constant(state: AmplitudeField, F: PolyHamiltonian, **kw) -> float:
    """Measured K in ||Gamma(a) - a||_l1 <= K ||a||_l1^3."""
    n = l1_norm(state)
    if n == 0:
        return 0.0
    return l1_norm(lie_transform(state, F, **kw) - state) / n ** 3


def bracket_field(XA: CubicField, XB: CubicField, a: np.ndarray) -> np.ndarray:
    """Field of {A, B} at a for quartic A, B: DX_A[X_B] - DX_B[X_A]."""
    return XA.jvp(a, XB(a)) - XB.jvp(a, XA(a))


@dataclass
class NormalFormSystem:
    """Box-restricted pieces of the normal form, compiled for repeated evaluation."""

    modes: list
    F: PolyHamiltonian
    XF: CubicField
    XG: CubicField  # gauged quartic G'
    XR: CubicField  # resonant quartic G1~ + G2~

    @classmethod
    def build(cls, box, V: ConvPotential, eta: float, kappa0: int | None = None):
        k0 = _resolve_k0(V, kappa0)
        bt = box_tuples(box, V, eta, k0)
        F = build_F(box, V, eta, k0, bt=bt)
        modes = bt.modes
        XF = CubicField.from_quartic(F, modes) if len(F) else CubicField(modes, [], [], [], [], [])
        return cls(modes, F, XF, CubicField.from_quartic(gauged_quartic(bt), modes),
                   CubicField.from_quartic(resonant_quartic(bt), modes))

    def quintic_field(self, a: np.ndarray) -> np.ndarray:
        """Field of the degree-six term of H o Gamma.

        The time-one Lie series gives {G', F} + 1/2 {{D, F}, F}; the cancellation
        {D, F} = G~ - G' turns this into 1/2 {G' + G~, F}.
        """
        XS = CubicField(self.modes, np.concatenate([self.XG.x, self.XR.x]), np.concatenate([self.XG.y, self.XR.y]),
                        np.concatenate([self.XG.z, self.XR.z]), np.concatenate([self.XG.out, self.XR.out]),
                        np.concatenate([self.XG.coef, self.XR.coef]))
        return 0.5 * bracket_field(XS, self.XF, a)


def remainder_norm_probe(state: AmplitudeField, box, V: ConvPotential, eta: float, kappa0: int | None = None,
                         system: NormalFormSystem | None = None) -> float:
    """l1 norm of the leading (quintic) part of the transformed field at ``state``."""
    if not len(state):
        return 0.0
    nf = NormalFormSystem.build(box, V, eta, kappa0) if system is None else system
    extra = state.support() - set(nf.modes)
    if extra:
        raise ValueError(f"state leaves the box, e.g. {sorted(extra)[0]}")
    a = state.values(nf.modes)
    return float(np.sum(np.abs(nf.quintic_field(a))))
